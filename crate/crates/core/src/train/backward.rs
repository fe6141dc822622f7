use crate::layout::AttnMask;
use crate::model::{ForwardCache, Model, TextInput};
use crate::tensor::{add_matmul_at, matmul, matmul_bt, rms_norm_backward, silu_grad, Scalar};

/// Reverse pass through the decoder. `dlogits` matches `Logits::data()`;
/// gradients are added into `grads`, which has the model's shapes.
pub(crate) fn backward<F: Scalar>(
    model: &Model<F>,
    input: &TextInput<'_, F>,
    mask: &AttnMask,
    positions: &[usize],
    cache: &ForwardCache<F>,
    dlogits: &[F],
    grads: &mut Model<F>,
) {
    let cfg = &model.config;
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let hid = cfg.hidden();
    let len = cache.len;
    let n_img = cache.n_img;
    let rows = len - n_img;

    // output head
    add_matmul_at(
        dlogits,
        rows,
        v,
        &cache.h_final[n_img * d..],
        d,
        grads.output_head.data_mut(),
    );
    let mut dh = vec![F::zero(); len * d];
    matmul(dlogits, rows, v, model.output_head.data(), d, &mut dh[n_img * d..]);
    let mut dx = vec![F::zero(); len * d];
    rms_norm_backward(
        &cache.x_final,
        d,
        model.final_norm.data(),
        &cache.inv_final,
        &dh,
        &mut dx,
        grads.final_norm.data_mut(),
    );

    for (bi, (block, bc)) in model.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let g = &mut grads.blocks[bi];

        // mlp residual branch
        add_matmul_at(&bc.act, len, hid, &dx, d, g.w_out.data_mut());
        let mut dact = vec![F::zero(); len * hid];
        matmul_bt(&dx, len, d, block.w_out.data(), hid, &mut dact);
        for (da, &u) in dact.iter_mut().zip(&bc.u) {
            *da = *da * silu_grad(u);
        }
        add_matmul_at(&bc.h2, len, d, &dact, hid, g.w_in.data_mut());
        let mut dh2 = vec![F::zero(); len * d];
        matmul_bt(&dact, len, hid, block.w_in.data(), d, &mut dh2);
        let mut dx_mid = dx;
        rms_norm_backward(
            &bc.x_mid,
            d,
            block.mlp_norm.data(),
            &bc.inv2,
            &dh2,
            &mut dx_mid,
            g.mlp_norm.data_mut(),
        );

        // attention residual branch
        add_matmul_at(&bc.att, len, d, &dx_mid, d, g.wo.data_mut());
        let mut datt = vec![F::zero(); len * d];
        matmul_bt(&dx_mid, len, d, block.wo.data(), d, &mut datt);
        let (dq, dk, dv) = attention_backward(model, bc, mask, &datt, len);
        add_matmul_at(&bc.h1, len, d, &dq, d, g.wq.data_mut());
        add_matmul_at(&bc.h1, len, d, &dk, d, g.wk.data_mut());
        add_matmul_at(&bc.h1, len, d, &dv, d, g.wv.data_mut());
        let mut dh1 = vec![F::zero(); len * d];
        let mut tmp = vec![F::zero(); len * d];
        for (dproj, w) in [(&dq, &block.wq), (&dk, &block.wk), (&dv, &block.wv)] {
            matmul_bt(dproj, len, d, w.data(), d, &mut tmp);
            for (a, &b) in dh1.iter_mut().zip(&tmp) {
                *a = *a + b;
            }
        }
        let mut dx_in = dx_mid;
        rms_norm_backward(
            &bc.x_in,
            d,
            block.attn_norm.data(),
            &bc.inv1,
            &dh1,
            &mut dx_in,
            g.attn_norm.data_mut(),
        );
        dx = dx_in;
    }

    // embeddings
    for (p, &pos) in positions.iter().enumerate() {
        let src = &dx[p * d..(p + 1) * d];
        for (a, &b) in grads.positional_embedding.row_mut(pos).iter_mut().zip(src) {
            *a = *a + b;
        }
    }
    if n_img > 0 {
        add_matmul_at(
            input.image,
            n_img,
            cfg.d_image,
            &dx[..n_img * d],
            d,
            grads.image_projection.data_mut(),
        );
    }
    for (a, &b) in grads
        .img_token
        .data_mut()
        .iter_mut()
        .zip(&dx[n_img * d..(n_img + 1) * d])
    {
        *a = *a + b;
    }
    for (i, &tok) in input.tokens.iter().enumerate() {
        let p = n_img + 1 + i;
        let src = &dx[p * d..(p + 1) * d];
        for (a, &b) in grads.token_embedding.row_mut(tok as usize).iter_mut().zip(src) {
            *a = *a + b;
        }
    }
}

fn attention_backward<F: Scalar>(
    model: &Model<F>,
    bc: &crate::model::BlockCache<F>,
    mask: &AttnMask,
    datt: &[F],
    len: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let d = model.config.d_model;
    let hd = model.config.head_dim();
    let scale = F::c(1.0 / (hd as f64).sqrt());
    let mut dq = vec![F::zero(); len * d];
    let mut dk = vec![F::zero(); len * d];
    let mut dv = vec![F::zero(); len * d];
    let mut dp = vec![F::zero(); len];
    for h in 0..model.config.n_heads {
        let off = h * hd;
        for qi in 0..len {
            let mrow = mask.row(qi);
            let probs = &bc.probs[(h * len + qi) * len..(h * len + qi + 1) * len];
            let dout = &datt[qi * d + off..qi * d + off + hd];
            let mut dot_pd = F::zero();
            for ki in 0..len {
                if mrow[ki] == f32::NEG_INFINITY {
                    continue;
                }
                let vv = &bc.v[ki * d + off..ki * d + off + hd];
                let g = crate::tensor::dot(dout, vv);
                dp[ki] = g;
                dot_pd = dot_pd + probs[ki] * g;
                let p = probs[ki];
                for (a, &o) in dv[ki * d + off..ki * d + off + hd].iter_mut().zip(dout) {
                    *a = *a + p * o;
                }
            }
            let qv = &bc.q[qi * d + off..qi * d + off + hd];
            for ki in 0..len {
                if mrow[ki] == f32::NEG_INFINITY {
                    continue;
                }
                let ds = probs[ki] * (dp[ki] - dot_pd) * scale;
                let kv = &bc.k[ki * d + off..ki * d + off + hd];
                for (a, &kx) in dq[qi * d + off..qi * d + off + hd].iter_mut().zip(kv) {
                    *a = *a + ds * kx;
                }
                for (a, &qx) in dk[ki * d + off..ki * d + off + hd].iter_mut().zip(qv) {
                    *a = *a + ds * qx;
                }
            }
        }
    }
    (dq, dk, dv)
}
