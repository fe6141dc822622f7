use rayon::prelude::*;

use crate::layout::{assign_positions, build_nxtp_mask, PosMode, SegmentLayout};
use crate::model::{Model, TextInput};
use crate::tokenizer::Vocab;
use crate::{Error, Result, TokenId};

use super::{compatibility_score, penalized_distribution, rank, LabelPrediction, SamplerConfig};

/// Image embeddings (`n_img × d_image`) and prompt tokens shared by every
/// decoding step.
#[derive(Debug, Clone, Copy)]
pub struct Prefix<'a> {
    pub image: &'a [f32],
    pub prompt: &'a [TokenId],
}

/// Ranked predictions plus counters for benchmarking.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub predictions: Vec<LabelPrediction>,
    /// Every label string in generation order, before merging repeats.
    pub raw_labels: Vec<String>,
    pub tokens_generated: usize,
    pub forward_passes: usize,
}

struct Stepper<'a> {
    model: &'a Model<f32>,
    prefix: Prefix<'a>,
    n_img: usize,
    passes: usize,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a Model<f32>, prefix: Prefix<'a>) -> Result<Self> {
        let di = model.config.d_image;
        if prefix.image.len() % di != 0 {
            return Err(Error::Shape(format!(
                "image buffer of {} floats is not a multiple of d_image={di}",
                prefix.image.len()
            )));
        }
        Ok(Stepper {
            model,
            prefix,
            n_img: prefix.image.len() / di,
            passes: 0,
        })
    }

    fn packed_len(&self, spans: &[&[TokenId]]) -> usize {
        self.n_img + 1 + self.prefix.prompt.len() + spans.iter().map(|s| s.len()).sum::<usize>()
    }

    /// Next-token logits after the prefix and after each (non-empty) span,
    /// all spans packed into one sequence under the label-decoupling mask.
    fn step(&mut self, spans: &[&[TokenId]]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let lens: Vec<usize> = spans.iter().map(|s| s.len()).collect();
        let layout = SegmentLayout::new(self.n_img, self.prefix.prompt.len(), lens)?;
        layout.check_max_seq(self.model.config.max_seq)?;
        let mut tokens = self.prefix.prompt.to_vec();
        for s in spans {
            tokens.extend_from_slice(s);
        }
        let mask = build_nxtp_mask(&layout);
        let positions = assign_positions(&layout, self.model.config.pos_mode);
        let logits = self.model.forward(
            &TextInput {
                image: self.prefix.image,
                tokens: &tokens,
            },
            &mask,
            &positions,
        )?;
        self.passes += 1;
        let head = logits.row_f64(layout.prefix_len() - 1);
        let rows = layout
            .label_spans()
            .into_iter()
            .map(|(start, n)| logits.row_f64(start + n - 1))
            .collect();
        Ok((head, rows))
    }

    /// Next-token logits after a free-running stream: one causal span after
    /// the prefix. Under shared positions each label in the stream restarts
    /// at the first label position, as in training.
    fn stream(&mut self, tokens: &[TokenId], sep: TokenId) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return self.next(tokens);
        }
        let layout = SegmentLayout::new(self.n_img, self.prefix.prompt.len(), vec![tokens.len()])?;
        layout.check_max_seq(self.model.config.max_seq)?;
        let mut input = self.prefix.prompt.to_vec();
        input.extend_from_slice(tokens);
        let mask = build_nxtp_mask(&layout);
        let n_x = layout.prefix_len();
        let positions: Vec<usize> = match self.model.config.pos_mode {
            PosMode::Sequential => (0..layout.total_len()).collect(),
            PosMode::Shared => {
                let mut pos: Vec<usize> = (0..n_x).collect();
                let mut offset = 0;
                for &t in tokens {
                    pos.push(n_x + offset);
                    offset = if t == sep { 0 } else { offset + 1 };
                }
                pos
            }
        };
        let logits = self.model.forward(
            &TextInput {
                image: self.prefix.image,
                tokens: &input,
            },
            &mask,
            &positions,
        )?;
        self.passes += 1;
        Ok(logits.row_f64(layout.total_len() - 1))
    }

    /// Next-token logits after the prefix followed by `span`.
    fn next(&mut self, span: &[TokenId]) -> Result<Vec<f64>> {
        if span.is_empty() {
            return Ok(self.step(&[])?.0);
        }
        Ok(self.step(&[span])?.1.remove(0))
    }
}

fn argmax_excluding(p: &[f64], skip: &[TokenId]) -> TokenId {
    let mut best: Option<usize> = None;
    for (i, &v) in p.iter().enumerate() {
        if skip.contains(&(i as TokenId)) {
            continue;
        }
        if best.is_none_or(|b| v > p[b]) {
            best = Some(i);
        }
    }
    best.expect("vocabulary has a non-special token") as TokenId
}

/// Compatibility of each label's tokens with the projected image tokens.
fn sim_of(model: &Model<f32>, projected: &[f32], ids: &[TokenId]) -> f64 {
    let d = model.config.d_model;
    let mut emb = Vec::with_capacity(ids.len() * d);
    for &t in ids {
        emb.extend_from_slice(model.token_embedding.row(t as usize));
    }
    compatibility_score(&emb, projected, d).unwrap_or(f64::INFINITY)
}

fn make_prediction(
    model: &Model<f32>,
    vocab: &Vocab,
    projected: &[f32],
    ids: Vec<TokenId>,
    probs: Vec<f64>,
) -> Result<LabelPrediction> {
    let label = vocab.decode(&ids)?.trim().to_string();
    let sim = sim_of(model, projected, &ids);
    Ok(LabelPrediction::new(ids, label, probs, sim))
}

/// Split a generated stream on `[SEP]`. Empty fragments and a trailing
/// fragment without `[SEP]` are dropped. Repeats are not merged.
pub fn split_stream(
    model: &Model<f32>,
    vocab: &Vocab,
    image: &[f32],
    tokens: &[TokenId],
    probs: &[f64],
) -> Result<Vec<LabelPrediction>> {
    let projected = model.project_image(image);
    let sep = vocab.sep_id();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &t) in tokens.iter().enumerate() {
        if t != sep {
            continue;
        }
        if i > start {
            out.push(make_prediction(
                model,
                vocab,
                &projected,
                tokens[start..i].to_vec(),
                probs[start..=i].to_vec(),
            )?);
        }
        start = i + 1;
    }
    Ok(out)
}

fn merge_repeats(preds: Vec<LabelPrediction>) -> Vec<LabelPrediction> {
    let mut out: Vec<LabelPrediction> = Vec::new();
    for p in preds {
        match out.iter_mut().find(|q| q.label == p.label) {
            Some(q) => q.merge_repeat(&p),
            None => out.push(p),
        }
    }
    out
}

fn finish_stream(
    model: &Model<f32>,
    vocab: &Vocab,
    prefix: Prefix<'_>,
    cfg: &SamplerConfig,
    tokens: &[TokenId],
    probs: &[f64],
    passes: usize,
) -> Result<DecodeOutput> {
    let split = split_stream(model, vocab, prefix.image, tokens, probs)?;
    let raw_labels = split.iter().map(|p| p.label.clone()).collect();
    let mut predictions = rank(merge_repeats(split), cfg.effective_rank());
    predictions.truncate(cfg.k);
    Ok(DecodeOutput {
        predictions,
        raw_labels,
        tokens_generated: tokens.len(),
        forward_passes: passes,
    })
}

/// One stream of `max_tokens` steps, each taking the top token of the
/// repetition-penalized distribution.
pub fn greedy_decode(
    model: &Model<f32>,
    vocab: &Vocab,
    prefix: Prefix<'_>,
    cfg: &SamplerConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    let mut st = Stepper::new(model, prefix)?;
    let v = model.config.vocab_size;
    let skip = [vocab.img_id()];
    let mut tokens: Vec<TokenId> = Vec::with_capacity(cfg.max_tokens);
    let mut probs = Vec::with_capacity(cfg.max_tokens);
    let mut seen = vec![false; v];
    for _ in 0..cfg.max_tokens {
        let logits = st.stream(&tokens, vocab.sep_id())?;
        let p = penalized_distribution(&logits, &seen, cfg.penalty_tau);
        let t = argmax_excluding(&p, &skip);
        probs.push(p[t as usize]);
        tokens.push(t);
        seen[t as usize] = true;
    }
    finish_stream(model, vocab, prefix, cfg, &tokens, &probs, st.passes)
}

#[derive(Clone)]
struct Beam {
    tokens: Vec<TokenId>,
    probs: Vec<f64>,
    seen: Vec<bool>,
    logp: f64,
}

/// Beam search over the same stream, scored by summed log-probability.
/// Width 1 reproduces [`greedy_decode`].
pub fn beam_decode(
    model: &Model<f32>,
    vocab: &Vocab,
    prefix: Prefix<'_>,
    cfg: &SamplerConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    let mut st = Stepper::new(model, prefix)?;
    let v = model.config.vocab_size;
    let img = vocab.img_id() as usize;
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        probs: Vec::new(),
        seen: vec![false; v],
        logp: 0.0,
    }];
    for _ in 0..cfg.max_tokens {
        // (score, beam, token, prob)
        let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (bi, b) in beams.iter().enumerate() {
            let logits = st.stream(&b.tokens, vocab.sep_id())?;
            let p = penalized_distribution(&logits, &b.seen, cfg.penalty_tau);
            for (t, &pt) in p.iter().enumerate() {
                if t != img {
                    cands.push((b.logp + pt.ln(), bi, t, pt));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        beams = cands
            .iter()
            .take(cfg.beam_width)
            .map(|&(score, bi, t, pt)| {
                let mut nb = beams[bi].clone();
                nb.tokens.push(t as TokenId);
                nb.probs.push(pt);
                nb.seen[t] = true;
                nb.logp = score;
                nb
            })
            .collect();
    }
    let best = &beams[0];
    finish_stream(model, vocab, prefix, cfg, &best.tokens, &best.probs, st.passes)
}

struct Branch {
    tokens: Vec<TokenId>,
    probs: Vec<f64>,
    done: bool,
}

impl Branch {
    /// Apply one step's logits: argmax continuation, `[SEP]` closes, and the
    /// length cap closes with `[SEP]`'s probability at that step.
    fn advance(&mut self, logits: &[f64], sep: TokenId, img: TokenId, cap: usize) {
        let p = crate::tensor::softmax(logits);
        let t = argmax_excluding(&p, &[img]);
        if t == sep || self.tokens.len() >= cap {
            self.probs.push(p[sep as usize]);
            self.done = true;
        } else {
            self.tokens.push(t);
            self.probs.push(p[t as usize]);
        }
    }
}

/// Top-k first tokens after the prefix, each extended independently by
/// argmax until `[SEP]` or the per-label cap. With `threads == 1` all open
/// branches advance together in one packed forward pass per step;
/// otherwise each branch runs its own passes on the rayon pool. Both paths
/// give bitwise identical results.
pub fn one_shot_sample(
    model: &Model<f32>,
    vocab: &Vocab,
    prefix: Prefix<'_>,
    cfg: &SamplerConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    let (sep, img) = (vocab.sep_id(), vocab.img_id());
    let v = model.config.vocab_size;
    if cfg.k > v - 2 {
        return Err(Error::TooManyLabels { k: cfg.k, max: v - 2 });
    }
    let mut st = Stepper::new(model, prefix)?;
    let first = crate::tensor::softmax(&st.next(&[])?);
    let mut order: Vec<usize> = (0..v)
        .filter(|&t| t != sep as usize && t != img as usize)
        .collect();
    order.sort_by(|&a, &b| {
        first[b]
            .partial_cmp(&first[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut branches: Vec<Branch> = order[..cfg.k]
        .iter()
        .map(|&t| Branch {
            tokens: vec![t as TokenId],
            probs: vec![first[t]],
            done: false,
        })
        .collect();
    let cap = cfg.max_label_tokens;

    let packed_fits = st.packed_len(&[]) + cfg.k * cap <= model.config.max_seq;
    if cfg.threads <= 1 && packed_fits {
        loop {
            let open: Vec<usize> = (0..branches.len()).filter(|&i| !branches[i].done).collect();
            if open.is_empty() {
                break;
            }
            let spans: Vec<&[TokenId]> = open.iter().map(|&i| &branches[i].tokens[..]).collect();
            let (_, rows) = st.step(&spans)?;
            for (&i, row) in open.iter().zip(rows) {
                branches[i].advance(&row, sep, img, cap);
            }
        }
    } else {
        let passes: Result<Vec<usize>> = branches
            .par_iter_mut()
            .map(|b| {
                let mut own = Stepper::new(model, prefix)?;
                while !b.done {
                    let row = own.next(&b.tokens)?;
                    b.advance(&row, sep, img, cap);
                }
                Ok(own.passes)
            })
            .collect();
        st.passes += passes?.into_iter().sum::<usize>();
    }

    let projected = model.project_image(prefix.image);
    let mut preds: Vec<LabelPrediction> = Vec::with_capacity(branches.len());
    let mut raw_labels = Vec::with_capacity(branches.len());
    let mut tokens_generated = 0;
    for b in branches {
        tokens_generated += b.probs.len();
        let p = make_prediction(model, vocab, &projected, b.tokens, b.probs)?;
        raw_labels.push(p.label.clone());
        if !preds.iter().any(|q| q.label == p.label) {
            preds.push(p);
        }
    }
    let mut predictions = rank(preds, cfg.effective_rank());
    predictions.truncate(cfg.k);
    Ok(DecodeOutput {
        predictions,
        raw_labels,
        tokens_generated,
        forward_passes: st.passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sampling::Strategy;

    #[test]
    fn packed_equals_per_branch() {
        let (model, vocab) = fixtures::random_model(3, 9);
        let image = fixtures::random_image(&model.config, 4, 2);
        let prompt = vocab.encode_prompt("the objects").unwrap();
        let prefix = Prefix {
            image: &image,
            prompt: &prompt,
        };
        let mut cfg = SamplerConfig {
            k: 6,
            ..SamplerConfig::default()
        };
        let packed = one_shot_sample(&model, &vocab, prefix, &cfg).unwrap();
        cfg.threads = 4;
        let split = one_shot_sample(&model, &vocab, prefix, &cfg).unwrap();
        assert_eq!(packed.predictions, split.predictions);
        assert!(packed.forward_passes <= cfg.max_label_tokens + 1);
    }

    #[test]
    fn one_shot_invariants() {
        let (model, vocab) = fixtures::random_model(2, 4);
        let image = fixtures::random_image(&model.config, 3, 5);
        let prefix = Prefix {
            image: &image,
            prompt: &[],
        };
        let cfg = SamplerConfig {
            k: 5,
            ..SamplerConfig::default()
        };
        let out = one_shot_sample(&model, &vocab, prefix, &cfg).unwrap();
        assert!(out.predictions.len() <= 5);
        for w in out.predictions.windows(2) {
            assert!(w[0].initial_prob >= w[1].initial_prob);
        }
        for p in &out.predictions {
            assert!(p.token_ids.len() <= cfg.max_label_tokens);
            assert_eq!(p.per_token_probs.len(), p.token_ids.len() + 1);
            assert!(!p.token_ids.contains(&vocab.sep_id()));
            assert!(p.label_prob > 0.0 && p.label_prob <= 1.0);
        }
        let too_many = SamplerConfig {
            k: vocab.len(),
            ..cfg
        };
        assert!(matches!(
            one_shot_sample(&model, &vocab, prefix, &too_many),
            Err(Error::TooManyLabels { .. })
        ));
    }

    #[test]
    fn beam_width_one_is_greedy() {
        let (model, vocab) = fixtures::random_model(2, 7);
        let image = fixtures::random_image(&model.config, 2, 8);
        let prefix = Prefix {
            image: &image,
            prompt: &[],
        };
        let cfg = SamplerConfig {
            strategy: Strategy::Greedy,
            max_tokens: 12,
            beam_width: 1,
            ..SamplerConfig::default()
        };
        let g = greedy_decode(&model, &vocab, prefix, &cfg).unwrap();
        let b = beam_decode(&model, &vocab, prefix, &cfg).unwrap();
        assert_eq!(g, b);
    }

    #[test]
    fn split_drops_empty_and_trailing() {
        let (model, vocab) = fixtures::random_model(1, 1);
        let a = vocab.encode_label("a").unwrap()[0];
        let s = vocab.sep_id();
        let tokens = [s, a, s, s, a, a];
        let probs = [0.5; 6];
        let image = fixtures::random_image(&model.config, 1, 1);
        let out = split_stream(&model, &vocab, &image, &tokens, &probs).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].label, "a");
        assert_eq!(out[0].per_token_probs, vec![0.5, 0.5]);
    }

    #[test]
    fn repeats_merge() {
        let mk = |l: &str, p: f64| LabelPrediction::new(vec![1], l.into(), vec![p, 0.5], 0.0);
        let merged = merge_repeats(vec![mk("cat", 0.4), mk("dog", 0.2), mk("cat", 0.8)]);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].occurrences, 2);
        assert!((merged[0].label_prob - 0.6).abs() < 1e-12);
        assert!((merged[0].ppl - (1.0f64 / (0.8f64 * 0.5).sqrt())).abs() < 1e-12);
    }
}
