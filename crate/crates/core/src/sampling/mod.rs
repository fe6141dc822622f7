//! Label decoding and ranking.
//!
//! Three deterministic decoders share one model interface:
//!
//! - [`greedy_decode`]: one token stream, top-1 of the repetition-penalized
//!   distribution at each step, split on `[SEP]`.
//! - [`beam_decode`]: the same stream search with `beam_width` hypotheses
//!   ranked by summed log-probability.
//! - [`one_shot_sample`]: the top-k first tokens after the prefix become k
//!   independent branches, all extended together in one packed sequence
//!   under the label-decoupling mask.

mod decode;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::model::io::{EmbeddingSet, ImageRecord};
use crate::model::Model;
use crate::records::{PredictedLabel, PredictionRecord};
use crate::tensor::Scalar;
use crate::tokenizer::Vocab;
use crate::{Error, Result, TokenId};

pub use decode::{
    beam_decode, greedy_decode, one_shot_sample, split_stream, DecodeOutput, Prefix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    Greedy,
    Beam,
    #[default]
    OneShot,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam),
            "one-shot" | "one_shot" | "oneshot" => Ok(Strategy::OneShot),
            other => Err(Error::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
            Strategy::OneShot => "one-shot",
        })
    }
}

/// Ranking key for predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankBy {
    /// Keep generation order.
    Generation,
    /// First-token probability, descending.
    Initial,
    /// Label probability, descending.
    Prob,
    /// Perplexity, ascending.
    Ppl,
    /// Compatibility score, ascending.
    Sim,
}

impl FromStr for RankBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "generation" => Ok(RankBy::Generation),
            "initial" => Ok(RankBy::Initial),
            "prob" => Ok(RankBy::Prob),
            "ppl" => Ok(RankBy::Ppl),
            "sim" => Ok(RankBy::Sim),
            other => Err(Error::Config(format!("unknown ranking {other:?}"))),
        }
    }
}

impl fmt::Display for RankBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankBy::Generation => "none",
            RankBy::Initial => "initial",
            RankBy::Prob => "prob",
            RankBy::Ppl => "ppl",
            RankBy::Sim => "sim",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Number of labels requested.
    pub k: usize,
    /// Token budget of greedy/beam streams.
    pub max_tokens: usize,
    /// Per-label token cap of one-shot branches (`[SEP]` excluded).
    pub max_label_tokens: usize,
    pub beam_width: usize,
    /// Repetition penalty τ ≥ 1 for greedy/beam.
    pub penalty_tau: f64,
    /// `None` picks the strategy default: initial-token order for one-shot,
    /// generation order otherwise.
    pub rank_by: Option<RankBy>,
    /// Worker threads for one-shot branches; 1 packs all branches into one
    /// sequence per step.
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: Strategy::OneShot,
            k: 10,
            max_tokens: 64,
            max_label_tokens: 8,
            beam_width: 3,
            penalty_tau: 1.2,
            rank_by: None,
            threads: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if !(self.penalty_tau >= 1.0) {
            return Err(Error::Config(format!(
                "penalty tau {} must be ≥ 1",
                self.penalty_tau
            )));
        }
        if self.max_label_tokens == 0 {
            return Err(Error::Config("max_label_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_rank(&self) -> RankBy {
        self.rank_by.unwrap_or(match self.strategy {
            Strategy::OneShot => RankBy::Initial,
            _ => RankBy::Generation,
        })
    }
}

/// Run the configured decoder.
pub fn decode(model: &Model<f32>, vocab: &Vocab, prefix: Prefix<'_>, cfg: &SamplerConfig) -> Result<DecodeOutput> {
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(model, vocab, prefix, cfg),
        Strategy::Beam => beam_decode(model, vocab, prefix, cfg),
        Strategy::OneShot => one_shot_sample(model, vocab, prefix, cfg),
    }
}

/// Decode every image of an embedding set into a prediction record, in
/// file order. Images run in parallel when `cfg.threads > 1`.
pub fn predict_records(
    model: &Model<f32>,
    vocab: &Vocab,
    embeddings: &EmbeddingSet,
    prompt: &[TokenId],
    cfg: &SamplerConfig,
) -> Result<Vec<PredictionRecord>> {
    if vocab.len() != model.config.vocab_size {
        return Err(Error::ConfigMismatch(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    if !embeddings.is_empty() && embeddings.d_image != model.config.d_image {
        return Err(Error::ConfigMismatch(format!(
            "embeddings have d_image={}, model expects {}",
            embeddings.d_image, model.config.d_image
        )));
    }
    let one = |rec: &ImageRecord| -> Result<PredictionRecord> {
        let prefix = Prefix {
            image: &rec.embeds,
            prompt,
        };
        // branches already run inside one image; keep the image loop serial
        let inner = SamplerConfig { threads: 1, ..cfg.clone() };
        let out = decode(model, vocab, prefix, &inner)?;
        Ok(PredictionRecord {
            image_id: rec.image_id.clone(),
            labels: out
                .predictions
                .into_iter()
                .map(|p| PredictedLabel {
                    text: p.label,
                    prob: p.label_prob,
                    initial_prob: p.initial_prob,
                    ppl: p.ppl,
                    sim: p.sim,
                })
                .collect(),
        })
    };
    if cfg.threads > 1 {
        embeddings.records.par_iter().map(one).collect()
    } else {
        embeddings.records.iter().map(one).collect()
    }
}

/// One generated label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrediction {
    /// Label tokens, trailing `[SEP]` excluded.
    pub token_ids: Vec<TokenId>,
    pub label: String,
    /// One probability per label token plus the `[SEP]` step.
    pub per_token_probs: Vec<f64>,
    /// Product of `per_token_probs`; summed over repeats after merging.
    pub label_prob: f64,
    pub initial_prob: f64,
    /// Perplexity; the minimum over repeats after merging.
    pub ppl: f64,
    pub sim: f64,
    /// How many times the label string was generated.
    pub occurrences: usize,
}

impl LabelPrediction {
    pub(crate) fn new(token_ids: Vec<TokenId>, label: String, per_token_probs: Vec<f64>, sim: f64) -> Self {
        let label_prob = label_probability(&per_token_probs).unwrap_or(0.0);
        let ppl = label_perplexity(&per_token_probs).unwrap_or(f64::INFINITY);
        LabelPrediction {
            initial_prob: per_token_probs.first().copied().unwrap_or(0.0),
            token_ids,
            label,
            per_token_probs,
            label_prob,
            ppl,
            sim,
            occurrences: 1,
        }
    }

    /// Fold a repeat of the same label string into this one.
    pub(crate) fn merge_repeat(&mut self, other: &LabelPrediction) {
        self.label_prob += other.label_prob;
        self.ppl = self.ppl.min(other.ppl);
        self.occurrences += other.occurrences;
    }
}

/// Softmax of the logits after dividing the logits of already generated
/// tokens by τ. `penalized[i]` marks membership in the generated set.
/// Negative logits are divided too, exactly as the formula reads.
pub fn penalized_distribution(logits: &[f64], penalized: &[bool], tau: f64) -> Vec<f64> {
    debug_assert_eq!(logits.len(), penalized.len());
    let scaled: Vec<f64> = logits
        .iter()
        .zip(penalized)
        .map(|(&x, &g)| if g { x / tau } else { x })
        .collect();
    crate::tensor::softmax(&scaled)
}

/// Product of the per-step probabilities.
pub fn label_probability(per_step: &[f64]) -> Result<f64> {
    if per_step.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    Ok(per_step.iter().product())
}

/// `exp(-mean ln p)` over all steps, `[SEP]` included.
pub fn label_perplexity(per_step: &[f64]) -> Result<f64> {
    if per_step.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    let mean = per_step.iter().map(|p| p.ln()).sum::<f64>() / per_step.len() as f64;
    Ok((-mean).exp())
}

/// Mean over label tokens of the mean `sqrt(2 - 2·cos)` distance to every
/// image token. Rows are `width`-wide; lower means more compatible.
pub fn compatibility_score<F: Scalar>(label_token_embeds: &[F], image_token_embeds: &[F], width: usize) -> Result<f64> {
    if label_token_embeds.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    if image_token_embeds.is_empty() {
        return Err(Error::Shape("no image tokens to compare against".into()));
    }
    let norm = |v: &[F]| v.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt();
    let images: Vec<(&[F], f64)> = image_token_embeds
        .chunks(width)
        .map(|r| (r, norm(r)))
        .collect();
    let mut total = 0.0;
    let mut n_tokens = 0usize;
    for w in label_token_embeds.chunks(width) {
        let wn = norm(w);
        let mut d = 0.0;
        for (x, xn) in &images {
            let dot: f64 = w.iter().zip(*x).map(|(a, b)| a.f64() * b.f64()).sum();
            let cos = dot / (wn * xn);
            d += (2.0 - 2.0 * cos).max(0.0).sqrt();
        }
        total += d / images.len() as f64;
        n_tokens += 1;
    }
    Ok(total / n_tokens as f64)
}

/// Stable sort by the ranking key; ties keep generation order.
pub fn rank(mut preds: Vec<LabelPrediction>, by: RankBy) -> Vec<LabelPrediction> {
    use std::cmp::Ordering;
    let desc = |a: f64, b: f64| b.partial_cmp(&a).unwrap_or(Ordering::Equal);
    let asc = |a: f64, b: f64| a.partial_cmp(&b).unwrap_or(Ordering::Equal);
    match by {
        RankBy::Generation => {}
        RankBy::Initial => preds.sort_by(|a, b| desc(a.initial_prob, b.initial_prob)),
        RankBy::Prob => preds.sort_by(|a, b| desc(a.label_prob, b.label_prob)),
        RankBy::Ppl => preds.sort_by(|a, b| asc(a.ppl, b.ppl)),
        RankBy::Sim => preds.sort_by(|a, b| asc(a.sim, b.sim)),
    }
    preds
}
