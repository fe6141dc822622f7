use crate::layout::{assign_positions, build_nxtp_mask, AttnMask, PosMode, SegmentLayout};
use crate::model::Logits;
use crate::tensor::Scalar;
use crate::{Error, Result, TokenId};

/// A training sequence: prompt then each label followed by `[SEP]`, with
/// the supervised `(row, target)` pairs. Each label's first token is
/// predicted from the last prefix row and every later token (including
/// `[SEP]`) from the previous token of the same span.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervised {
    pub tokens: Vec<TokenId>,
    pub layout: SegmentLayout,
    pub mask: AttnMask,
    pub positions: Vec<usize>,
    pub targets: Vec<(usize, TokenId)>,
}

pub fn build_supervised(
    n_img: usize,
    prompt: &[TokenId],
    labels: &[Vec<TokenId>],
    sep: TokenId,
    pos_mode: PosMode,
) -> Result<Supervised> {
    if labels.iter().any(|l| l.is_empty()) {
        return Err(Error::Layout("empty label in training sample".into()));
    }
    let lens: Vec<usize> = labels.iter().map(|l| l.len() + 1).collect();
    let layout = SegmentLayout::new(n_img, prompt.len(), lens)?;
    let mut tokens = prompt.to_vec();
    let mut targets = Vec::new();
    let last_prefix = layout.prefix_len() - 1;
    for (label, (start, _)) in labels.iter().zip(layout.label_spans()) {
        targets.push((last_prefix, label[0]));
        for (j, &t) in label.iter().chain(std::iter::once(&sep)).enumerate().skip(1) {
            targets.push((start + j - 1, t));
        }
        tokens.extend_from_slice(label);
        tokens.push(sep);
    }
    let mask = build_nxtp_mask(&layout);
    let positions = assign_positions(&layout, pos_mode);
    Ok(Supervised {
        tokens,
        layout,
        mask,
        positions,
        targets,
    })
}

/// Mean negative log-probability of the targets and its gradient with
/// respect to the logits (same layout as `logits.data()`).
pub fn masked_cross_entropy<F: Scalar>(logits: &Logits<F>, targets: &[(usize, TokenId)]) -> Result<(f64, Vec<F>)> {
    if targets.is_empty() {
        return Err(Error::Layout("no supervised steps".into()));
    }
    let v = logits.vocab();
    let mut grad = vec![F::zero(); logits.data().len()];
    let inv_n = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    for &(pos, t) in targets {
        if pos < logits.first_pos() || pos >= logits.seq_len() || t as usize >= v {
            return Err(Error::Layout(format!(
                "target {t} at position {pos} outside logits of {} rows × {v}",
                logits.seq_len()
            )));
        }
        let row = logits.row(pos);
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let exps: Vec<F> = row.iter().map(|&x| (x - max).exp()).collect();
        let sum: F = exps.iter().copied().sum();
        let logp = (row[t as usize] - max - sum.ln()).f64();
        loss -= logp;
        let r = pos - logits.first_pos();
        let g = &mut grad[r * v..(r + 1) * v];
        let scale = F::c(inv_n);
        for (gi, e) in g.iter_mut().zip(&exps) {
            *gi = *gi + *e / sum * scale;
        }
        g[t as usize] = g[t as usize] - scale;
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Model, TextInput};

    #[test]
    fn targets_follow_spans() {
        let s = build_supervised(2, &[7], &[vec![4, 5], vec![6]], 31, PosMode::Shared).unwrap();
        // img img [IMG] 7 | 4 5 , | 6 ,
        assert_eq!(s.tokens, vec![7, 4, 5, 31, 6, 31]);
        assert_eq!(s.targets, vec![(3, 4), (4, 5), (5, 31), (3, 6), (7, 31)]);
        assert_eq!(s.positions, vec![0, 1, 2, 3, 4, 5, 6, 4, 5]);
    }

    fn uniform_logits(v: usize) -> Logits<f64> {
        // a zero-head model yields all-zero logits
        let (m, vocab) = fixtures::random_model(1, 0);
        assert_eq!(vocab.len(), v);
        let mut m: Model<f64> = m.cast();
        m.output_head.fill_zero();
        let s = build_supervised(1, &[], &[vec![1, 2]], vocab.sep_id(), PosMode::Shared).unwrap();
        let img = vec![0.1; m.config.d_image];
        m.forward(&TextInput { image: &img, tokens: &s.tokens }, &s.mask, &s.positions)
            .unwrap()
    }

    #[test]
    fn uniform_is_ln_v() {
        let v = fixtures::tiny_vocab().len();
        let l = uniform_logits(v);
        let (loss, _) = masked_cross_entropy(&l, &[(1, 3), (2, 5)]).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_two_step() {
        let v = fixtures::tiny_vocab().len();
        let l = uniform_logits(v);
        // shift one row so that target 0 has probability exactly 1/2
        let mut data = l.data().to_vec();
        let a = ((v - 1) as f64).ln();
        data[0] = a;
        let l2 = crate::model::Logits::from_parts(l.first_pos(), v, data);
        let (loss, _) = masked_cross_entropy(&l2, &[(1, 0), (2, 0)]).unwrap();
        let p2 = 1.0 / v as f64;
        let want = -(0.5f64.ln() + p2.ln()) / 2.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn mismatch_errors() {
        let v = fixtures::tiny_vocab().len();
        let l = uniform_logits(v);
        assert!(masked_cross_entropy(&l, &[]).is_err());
        assert!(masked_cross_entropy(&l, &[(0, 1)]).is_err());
        assert!(masked_cross_entropy(&l, &[(1, v as u32)]).is_err());
    }
}
