//! Decode timing and repetition statistics.
//!
//! Every configuration decodes each image with batch size 1, after one
//! untimed warm-up pass. The per-image wall-clock of a configuration is the
//! median over repeats. No configuration uses a key/value cache, so
//! sequential decoding pays the full prefix on every step.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::time::Instant;

use crate::layout::{assign_positions, build_nxtp_mask, SegmentLayout};
use crate::model::io::EmbeddingSet;
use crate::model::{Model, TextInput};
use crate::sampling::{decode, Prefix, SamplerConfig, Strategy};
use crate::tokenizer::Vocab;
use crate::{Error, Result, TokenId};

/// `1 − distinct/total` over a label stream taken before deduplication.
pub fn repetition_rate<S: AsRef<str>>(labels: &[S]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<&str> = labels.iter().map(|s| s.as_ref()).collect();
    1.0 - distinct.len() as f64 / labels.len() as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One named (model, sampler) pair to time.
pub struct BenchConfig<'a> {
    pub name: String,
    pub model: &'a Model<f32>,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: String,
    /// Median over repeats of the mean per-image wall-clock.
    pub median_ms: f64,
    /// Tokens sampled per image.
    pub tokens: f64,
    /// Labels returned per image.
    pub labels: f64,
    /// Mean per-image repetition rate of the raw label stream.
    pub repetition_rate: f64,
    /// One-shot branches whose label string repeated an earlier branch.
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub repeats: usize,
    pub images: usize,
}

impl BenchReport {
    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// `time(a) / time(b)`.
    pub fn speedup(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.row(a)?.median_ms / self.row(b)?.median_ms)
    }

    /// `config,median_ms,ratio` with the ratio taken against the first row.
    pub fn to_csv(&self) -> String {
        let base = self.rows.first().map_or(f64::NAN, |r| r.median_ms);
        let mut s = String::from("config,median_ms,ratio\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.4}", r.name, r.median_ms, base / r.median_ms);
        }
        s
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} images, median of {} repeats, batch size 1",
            self.images, self.repeats
        )?;
        writeln!(
            f,
            "{:<20} {:>11} {:>8} {:>7} {:>10} {:>10}",
            "config", "ms/image", "tokens", "labels", "rep_rate", "collisions"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<20} {:>11.3} {:>8.1} {:>7.2} {:>10.3} {:>10}",
                r.name, r.median_ms, r.tokens, r.labels, r.repetition_rate, r.collisions
            )?;
        }
        if let Some(base) = self.rows.first() {
            for r in &self.rows[1..] {
                writeln!(f, "speedup {} / {}: {:.2}x", base.name, r.name, base.median_ms / r.median_ms)?;
            }
        }
        Ok(())
    }
}

pub fn bench_decode(
    configs: &[BenchConfig<'_>],
    vocab: &Vocab,
    embeddings: &EmbeddingSet,
    prompt: &[TokenId],
    repeats: usize,
) -> Result<BenchReport> {
    if repeats < 3 {
        return Err(Error::Config(format!("repeats={repeats}, need at least 3")));
    }
    if embeddings.is_empty() {
        return Err(Error::Config("no images to benchmark".into()));
    }
    for c in configs {
        if c.model.config.vocab_size != vocab.len() {
            return Err(Error::ConfigMismatch(format!(
                "{}: model vocabulary {} differs from {}",
                c.name,
                c.model.config.vocab_size,
                vocab.len()
            )));
        }
    }
    let n = embeddings.len() as f64;
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let run_one = |rec: &crate::model::io::ImageRecord| {
            decode(
                c.model,
                vocab,
                Prefix {
                    image: &rec.embeds,
                    prompt,
                },
                &c.sampler,
            )
        };
        run_one(&embeddings.records[0])?;
        let mut times = Vec::with_capacity(repeats);
        let mut stats = (0usize, 0usize, 0.0f64, 0usize);
        for rep in 0..repeats {
            let t0 = Instant::now();
            let mut outs = Vec::with_capacity(embeddings.len());
            for rec in &embeddings.records {
                outs.push(run_one(rec)?);
            }
            times.push(t0.elapsed().as_secs_f64() * 1e3 / n);
            if rep == 0 {
                for o in &outs {
                    stats.0 += o.tokens_generated;
                    stats.1 += o.predictions.len();
                    stats.2 += repetition_rate(&o.raw_labels);
                    if c.sampler.strategy == Strategy::OneShot {
                        let distinct: HashSet<&String> = o.raw_labels.iter().collect();
                        stats.3 += o.raw_labels.len() - distinct.len();
                    }
                }
            }
        }
        rows.push(BenchRow {
            name: c.name.clone(),
            median_ms: median(&mut times),
            tokens: stats.0 as f64 / n,
            labels: stats.1 as f64 / n,
            repetition_rate: stats.2 / n,
            collisions: stats.3,
        });
    }
    Ok(BenchReport {
        rows,
        repeats,
        images: embeddings.len(),
    })
}

/// Median wall-clock in milliseconds of one forward pass over the prefix
/// followed by `labels` as decoupled spans, after one warm-up pass.
pub fn time_forward(model: &Model<f32>, image: &[f32], prompt: &[TokenId], labels: &[Vec<TokenId>], repeats: usize) -> Result<f64> {
    let n_img = image.len() / model.config.d_image;
    let layout = SegmentLayout::new(n_img, prompt.len(), labels.iter().map(|l| l.len()).collect())?;
    let mut tokens = prompt.to_vec();
    for l in labels {
        tokens.extend_from_slice(l);
    }
    let mask = build_nxtp_mask(&layout);
    let positions = assign_positions(&layout, model.config.pos_mode);
    let input = TextInput {
        image,
        tokens: &tokens,
    };
    model.forward(&input, &mask, &positions)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        std::hint::black_box(model.forward(&input, &mask, &positions)?);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&mut times))
}
