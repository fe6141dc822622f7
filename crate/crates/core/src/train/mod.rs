//! Training on (image embedding, label set) pairs.
//!
//! Each sample becomes one packed sequence: image tokens, `[IMG]`, a prompt,
//! then every label followed by `[SEP]` under the label-decoupling mask.
//! Only label steps are supervised.

mod backward;
mod gradcheck;
mod loss;
mod optim;
pub mod synthetic;

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::io::EmbeddingSet;
use crate::model::{Model, TextInput};
use crate::records::ReferenceLabelSet;
use crate::tensor::Scalar;
use crate::tokenizer::Vocab;
use crate::{Error, Result, TokenId};

pub use gradcheck::{grad_check, GradCheck};
pub use loss::{build_supervised, masked_cross_entropy, Supervised};
pub use optim::{AdamW, Schedule};
pub use synthetic::{gen_synthetic, SyntheticData, SyntheticSpec, SYNTHETIC_LABELS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Final learning rate as a fraction of the peak.
    pub min_lr_ratio: f64,
    /// Prompt templates; one is drawn per batch.
    pub prompts: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.1,
            warmup_iters: 100,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            min_lr_ratio: 0.1,
            prompts: vec![crate::INFERENCE_PROMPT.to_string()],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate {} must be ≥ 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::Config("min_lr_ratio must lie in [0, 1]".into()));
        }
        if self.prompts.is_empty() {
            return Err(Error::Config("at least one prompt template is required".into()));
        }
        Ok(())
    }
}

/// One tokenized training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<F> {
    pub image: Vec<F>,
    pub labels: Vec<Vec<TokenId>>,
}

impl<F: Scalar> TrainSample<F> {
    pub fn cast<G: Scalar>(&self) -> TrainSample<G> {
        TrainSample {
            image: self.image.iter().map(|v| G::c(v.f64())).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Join embeddings and references by image id and tokenize the labels.
/// References without embeddings and empty label sets are skipped; the
/// count of skipped references is returned alongside.
pub fn tokenize_dataset(
    embeddings: &EmbeddingSet,
    references: &[ReferenceLabelSet],
    vocab: &Vocab,
) -> Result<(Vec<TrainSample<f32>>, usize)> {
    let by_id: HashMap<&str, &[f32]> = embeddings
        .records
        .iter()
        .map(|r| (r.image_id.as_str(), r.embeds.as_slice()))
        .collect();
    let mut out = Vec::with_capacity(references.len());
    let mut skipped = 0;
    for r in references {
        let Some(image) = by_id.get(r.image_id.as_str()) else {
            skipped += 1;
            continue;
        };
        if r.labels.is_empty() {
            skipped += 1;
            continue;
        }
        let labels = r
            .labels
            .iter()
            .map(|l| vocab.encode_label(l))
            .collect::<Result<Vec<_>>>()?;
        out.push(TrainSample {
            image: image.to_vec(),
            labels,
        });
    }
    Ok((out, skipped))
}

/// Loss of one sample; with `grads`, also accumulates its gradient.
pub fn sample_loss<F: Scalar>(
    model: &Model<F>,
    sample: &TrainSample<F>,
    prompt: &[TokenId],
    sep: TokenId,
    grads: Option<&mut Model<F>>,
) -> Result<f64> {
    let n_img = sample.image.len() / model.config.d_image;
    let sup = build_supervised(n_img, prompt, &sample.labels, sep, model.config.pos_mode)?;
    let input = TextInput {
        image: &sample.image,
        tokens: &sup.tokens,
    };
    match grads {
        None => {
            let logits = model.forward(&input, &sup.mask, &sup.positions)?;
            Ok(masked_cross_entropy(&logits, &sup.targets)?.0)
        }
        Some(g) => {
            let (logits, cache) = model.forward_cached(&input, &sup.mask, &sup.positions)?;
            let (loss, dlogits) = masked_cross_entropy(&logits, &sup.targets)?;
            backward::backward(model, &input, &sup.mask, &sup.positions, &cache, &dlogits, g);
            Ok(loss)
        }
    }
}

/// Mean loss over a batch and the matching mean gradient. Samples are
/// split into fixed chunks whose partial sums are added in chunk order, so
/// the result does not depend on thread count.
pub fn batch_loss_grad<F: Scalar>(
    model: &Model<F>,
    batch: &[&TrainSample<F>],
    prompt: &[TokenId],
    sep: TokenId,
) -> Result<(f64, Model<F>)> {
    const CHUNK: usize = 8;
    let parts: Vec<Result<(f64, Model<F>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.zeros_like();
            let mut loss = 0.0;
            for s in chunk {
                loss += sample_loss(model, s, prompt, sep, Some(&mut g))?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<Model<F>> = None;
    for p in parts {
        let (l, g) = p?;
        total += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                    a.add_assign(b);
                }
            }
        }
    }
    let mut grads = grads.unwrap_or_else(|| model.zeros_like());
    let inv = F::c(1.0 / batch.len().max(1) as f64);
    for (_, t) in grads.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = *x * inv);
    }
    Ok((total / batch.len().max(1) as f64, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<LossRow>,
    /// Mean batch loss per epoch.
    pub epoch_means: Vec<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.step, r.lr, r.loss);
        }
        s
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

/// Sample order and per-sample label order for one epoch, a pure function
/// of `(seed, epoch)`.
pub fn epoch_plan(seed: u64, epoch: usize, samples: &[TrainSample<f32>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let label_orders = samples
        .iter()
        .map(|s| {
            let mut o: Vec<usize> = (0..s.labels.len()).collect();
            o.shuffle(&mut rng);
            o
        })
        .collect();
    (order, label_orders)
}

/// Train in place. `on_epoch(epoch, mean_loss)` is called after each epoch.
pub fn train(
    model: &mut Model<f32>,
    samples: &[TrainSample<f32>],
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    if vocab.len() != model.config.vocab_size {
        return Err(Error::ConfigMismatch(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.image.len() % model.config.d_image != 0) {
        return Err(Error::Shape(format!(
            "image of {} floats does not match d_image={}",
            s.image.len(),
            model.config.d_image
        )));
    }
    let prompts = cfg
        .prompts
        .iter()
        .map(|p| vocab.encode_prompt(p))
        .collect::<Result<Vec<_>>>()?;
    let sep = vocab.sep_id();
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let schedule = Schedule {
        peak: cfg.learning_rate,
        floor: cfg.learning_rate * cfg.min_lr_ratio,
        warmup: cfg.warmup_iters,
        total: steps_per_epoch * cfg.epochs,
    };
    let mut opt = AdamW::new(model, cfg.weight_decay);
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let (order, label_orders) = epoch_plan(cfg.seed, epoch, samples);
        let mut prompt_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        prompt_rng.set_stream(epoch as u64 + 1);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            step += 1;
            let shuffled: Vec<TrainSample<f32>> = idx
                .iter()
                .map(|&i| TrainSample {
                    image: samples[i].image.clone(),
                    labels: label_orders[i].iter().map(|&j| samples[i].labels[j].clone()).collect(),
                })
                .collect();
            let batch: Vec<&TrainSample<f32>> = shuffled.iter().collect();
            let prompt = &prompts[prompt_rng.random_range(0..prompts.len())];
            let (loss, grads) = batch_loss_grad(model, &batch, prompt, sep)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "loss", step });
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    step,
                });
            }
            let lr = schedule.lr(step);
            opt.step(model, &grads, lr);
            report.rows.push(LossRow { step, lr, loss });
            epoch_loss += loss;
        }
        let mean = epoch_loss / steps_per_epoch as f64;
        report.epoch_means.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}
