use crate::layout::AttnMask;
use crate::tensor::{matmul, matmul_bt, rms_norm, silu, Scalar};
use crate::{Error, Result, TokenId};

use super::Model;

/// Inputs for one sequence: `n_img × d_image` image embeddings (row-major)
/// and the token ids that follow `[IMG]` (prompt, then label spans).
#[derive(Debug, Clone, Copy)]
pub struct TextInput<'a, F> {
    pub image: &'a [F],
    pub tokens: &'a [TokenId],
}

/// Next-token scores for every non-image position.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<F> {
    first_pos: usize,
    vocab: usize,
    data: Vec<F>,
}

impl<F: Scalar> Logits<F> {
    #[cfg(test)]
    pub(crate) fn from_parts(first_pos: usize, vocab: usize, data: Vec<F>) -> Self {
        Logits {
            first_pos,
            vocab,
            data,
        }
    }

    /// Position of the first row (the `[IMG]` token).
    pub fn first_pos(&self) -> usize {
        self.first_pos
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.vocab
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Full sequence length, image positions included.
    pub fn seq_len(&self) -> usize {
        self.first_pos + self.n_rows()
    }

    /// Scores at absolute sequence position `pos`.
    pub fn row(&self, pos: usize) -> &[F] {
        let r = pos
            .checked_sub(self.first_pos)
            .expect("image positions carry no logits");
        &self.data[r * self.vocab..(r + 1) * self.vocab]
    }

    pub fn row_f64(&self, pos: usize) -> Vec<f64> {
        self.row(pos).iter().map(|v| v.f64()).collect()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) struct BlockCache<F> {
    pub x_in: Vec<F>,
    pub inv1: Vec<F>,
    pub h1: Vec<F>,
    pub q: Vec<F>,
    pub k: Vec<F>,
    pub v: Vec<F>,
    /// `n_heads × T × T` attention weights (masked entries are zero).
    pub probs: Vec<F>,
    pub att: Vec<F>,
    pub x_mid: Vec<F>,
    pub inv2: Vec<F>,
    pub h2: Vec<F>,
    pub u: Vec<F>,
    pub act: Vec<F>,
}

pub(crate) struct ForwardCache<F> {
    pub len: usize,
    pub n_img: usize,
    pub blocks: Vec<BlockCache<F>>,
    pub x_final: Vec<F>,
    pub inv_final: Vec<F>,
    pub h_final: Vec<F>,
}

impl<F: Scalar> Model<F> {
    fn check_inputs(
        &self,
        input: &TextInput<'_, F>,
        mask: &AttnMask,
        positions: &[usize],
    ) -> Result<(usize, usize)> {
        let cfg = &self.config;
        if input.image.len() % cfg.d_image != 0 {
            return Err(Error::Shape(format!(
                "image buffer of {} floats is not a multiple of d_image={}",
                input.image.len(),
                cfg.d_image
            )));
        }
        let n_img = input.image.len() / cfg.d_image;
        let len = n_img + 1 + input.tokens.len();
        if len > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len,
                max: cfg.max_seq,
            });
        }
        if mask.size() != len {
            return Err(Error::Shape(format!(
                "mask is {0}×{0} for a sequence of {len}",
                mask.size()
            )));
        }
        if positions.len() != len {
            return Err(Error::Shape(format!(
                "{} positions for a sequence of {len}",
                positions.len()
            )));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= cfg.max_seq) {
            return Err(Error::Shape(format!("position {p} ≥ max_seq {}", cfg.max_seq)));
        }
        if let Some(&id) = input.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::InvalidTokenId {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        Ok((n_img, len))
    }

    /// Logits at every non-image position.
    pub fn forward(
        &self,
        input: &TextInput<'_, F>,
        mask: &AttnMask,
        positions: &[usize],
    ) -> Result<Logits<F>> {
        self.run(input, mask, positions, false).map(|(l, _)| l)
    }

    pub(crate) fn forward_cached(
        &self,
        input: &TextInput<'_, F>,
        mask: &AttnMask,
        positions: &[usize],
    ) -> Result<(Logits<F>, ForwardCache<F>)> {
        self.run(input, mask, positions, true)
            .map(|(l, c)| (l, c.expect("cache requested")))
    }

    fn run(
        &self,
        input: &TextInput<'_, F>,
        mask: &AttnMask,
        positions: &[usize],
        keep: bool,
    ) -> Result<(Logits<F>, Option<ForwardCache<F>>)> {
        let (n_img, len) = self.check_inputs(input, mask, positions)?;
        let cfg = &self.config;
        let d = cfg.d_model;
        let hid = cfg.hidden();

        // embeddings
        let mut x = vec![F::zero(); len * d];
        if n_img > 0 {
            matmul(
                input.image,
                n_img,
                cfg.d_image,
                self.image_projection.data(),
                d,
                &mut x[..n_img * d],
            );
        }
        x[n_img * d..(n_img + 1) * d].copy_from_slice(self.img_token.data());
        for (i, &tok) in input.tokens.iter().enumerate() {
            let p = n_img + 1 + i;
            x[p * d..(p + 1) * d].copy_from_slice(self.token_embedding.row(tok as usize));
        }
        for (p, &pos) in positions.iter().enumerate() {
            for (xv, &pv) in x[p * d..(p + 1) * d]
                .iter_mut()
                .zip(self.positional_embedding.row(pos))
            {
                *xv = *xv + pv;
            }
        }

        let mut caches = Vec::new();
        for block in &self.blocks {
            let x_in = if keep { x.clone() } else { Vec::new() };
            let mut h1 = vec![F::zero(); len * d];
            let inv1 = rms_norm(&x, d, block.attn_norm.data(), &mut h1);
            let mut q = vec![F::zero(); len * d];
            let mut k = vec![F::zero(); len * d];
            let mut v = vec![F::zero(); len * d];
            matmul(&h1, len, d, block.wq.data(), d, &mut q);
            matmul(&h1, len, d, block.wk.data(), d, &mut k);
            matmul(&h1, len, d, block.wv.data(), d, &mut v);
            let (att, probs) = self.attention(&q, &k, &v, mask, len, keep);
            let mut o = vec![F::zero(); len * d];
            matmul(&att, len, d, block.wo.data(), d, &mut o);
            for (xv, &ov) in x.iter_mut().zip(&o) {
                *xv = *xv + ov;
            }
            let x_mid = if keep { x.clone() } else { Vec::new() };
            let mut h2 = vec![F::zero(); len * d];
            let inv2 = rms_norm(&x, d, block.mlp_norm.data(), &mut h2);
            let mut u = vec![F::zero(); len * hid];
            matmul(&h2, len, d, block.w_in.data(), hid, &mut u);
            let act: Vec<F> = u.iter().map(|&z| silu(z)).collect();
            let mut m = vec![F::zero(); len * d];
            matmul(&act, len, hid, block.w_out.data(), d, &mut m);
            for (xv, &mv) in x.iter_mut().zip(&m) {
                *xv = *xv + mv;
            }
            if keep {
                caches.push(BlockCache {
                    x_in,
                    inv1,
                    h1,
                    q,
                    k,
                    v,
                    probs,
                    att,
                    x_mid,
                    inv2,
                    h2,
                    u,
                    act,
                });
            }
        }

        let mut hf = vec![F::zero(); len * d];
        let inv_final = rms_norm(&x, d, self.final_norm.data(), &mut hf);
        let rows = len - n_img;
        let mut data = vec![F::zero(); rows * cfg.vocab_size];
        matmul_bt(
            &hf[n_img * d..],
            rows,
            d,
            self.output_head.data(),
            cfg.vocab_size,
            &mut data,
        );
        let logits = Logits {
            first_pos: n_img,
            vocab: cfg.vocab_size,
            data,
        };
        let cache = keep.then(|| ForwardCache {
            len,
            n_img,
            blocks: caches,
            x_final: x,
            inv_final,
            h_final: hf,
        });
        Ok((logits, cache))
    }

    /// Masked multi-head attention. Keys at `-inf` entries are skipped, so
    /// they receive exactly zero weight and contribute nothing to sums.
    fn attention(
        &self,
        q: &[F],
        k: &[F],
        v: &[F],
        mask: &AttnMask,
        len: usize,
        keep: bool,
    ) -> (Vec<F>, Vec<F>) {
        let d = self.config.d_model;
        let hd = self.config.head_dim();
        let scale = F::c(1.0 / (hd as f64).sqrt());
        let mut att = vec![F::zero(); len * d];
        let mut probs = if keep {
            vec![F::zero(); self.config.n_heads * len * len]
        } else {
            Vec::new()
        };
        let mut weights = vec![F::zero(); len];
        for h in 0..self.config.n_heads {
            let off = h * hd;
            for qi in 0..len {
                let mrow = mask.row(qi);
                let qv = &q[qi * d + off..qi * d + off + hd];
                let mut max = F::neg_infinity();
                for ki in 0..len {
                    if mrow[ki] == f32::NEG_INFINITY {
                        continue;
                    }
                    let kv = &k[ki * d + off..ki * d + off + hd];
                    let s = crate::tensor::dot(qv, kv) * scale + F::c(mrow[ki] as f64);
                    weights[ki] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut sum = F::zero();
                for ki in 0..len {
                    if mrow[ki] == f32::NEG_INFINITY {
                        continue;
                    }
                    let e = (weights[ki] - max).exp();
                    weights[ki] = e;
                    sum = sum + e;
                }
                let out = &mut att[qi * d + off..qi * d + off + hd];
                for ki in 0..len {
                    if mrow[ki] == f32::NEG_INFINITY {
                        continue;
                    }
                    let p = weights[ki] / sum;
                    if keep {
                        probs[(h * len + qi) * len + ki] = p;
                    }
                    let vv = &v[ki * d + off..ki * d + off + hd];
                    for (o, &x) in out.iter_mut().zip(vv) {
                        *o = *o + p * x;
                    }
                }
            }
        }
        (att, probs)
    }
}
