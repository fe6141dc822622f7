//! Semantic recall, precision and F1 between reference and predicted label
//! sets, PR curves and top-k accuracy.
//!
//! Labels are embedded, a cosine matrix `S` (references × predictions) is
//! built, and greedy matching takes row maxima for recall and column maxima
//! for precision. Only the first `min(N, top_k)` prediction columns are
//! kept and the matrix is never padded, so a model emitting fewer labels is
//! averaged over fewer columns.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::records::{PredictionRecord, ReferenceLabelSet};
use crate::{Error, Result};

/// Maps label strings to unit vectors. Embedding is done per batch so that
/// identity embedders can assign one axis per distinct string.
pub trait Embedder: Sync {
    fn name(&self) -> &str;

    fn embed_all(&self, labels: &[&str]) -> Vec<Vec<f64>>;

    fn embed(&self, label: &str) -> Vec<f64> {
        self.embed_all(&[label]).remove(0)
    }
}

/// One-hot by exact string identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactEmbedder;

impl Embedder for ExactEmbedder {
    fn name(&self) -> &str {
        "exact"
    }

    fn embed_all(&self, labels: &[&str]) -> Vec<Vec<f64>> {
        let mut axis: BTreeMap<&str, usize> = BTreeMap::new();
        for &l in labels {
            let n = axis.len();
            axis.entry(l).or_insert(n);
        }
        labels
            .iter()
            .map(|l| {
                let mut v = vec![0.0; axis.len()];
                v[axis[l]] = 1.0;
                v
            })
            .collect()
    }
}

/// Hashed character-trigram counts with `^`/`$` boundary marks,
/// L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct NgramEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for NgramEmbedder {
    fn default() -> Self {
        NgramEmbedder {
            dim: 256,
            seed: 0xcbf2_9ce4_8422_2325,
        }
    }
}

impl NgramEmbedder {
    fn bucket(&self, gram: &[char]) -> usize {
        let mut h = self.seed;
        for c in gram {
            for b in c.to_string().bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        (h % self.dim as u64) as usize
    }

    fn embed_one(&self, label: &str) -> Vec<f64> {
        let padded: Vec<char> = std::iter::once('^')
            .chain(label.chars())
            .chain(std::iter::once('$'))
            .collect();
        let mut v = vec![0.0; self.dim];
        if padded.len() < 3 {
            v[self.bucket(&padded)] += 1.0;
        } else {
            for g in padded.windows(3) {
                v[self.bucket(g)] += 1.0;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }
}

impl Embedder for NgramEmbedder {
    fn name(&self) -> &str {
        "ngram"
    }

    fn embed_all(&self, labels: &[&str]) -> Vec<Vec<f64>> {
        labels.iter().map(|l| self.embed_one(l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbedderKind {
    #[default]
    Exact,
    Ngram,
}

impl EmbedderKind {
    pub fn build(self) -> Box<dyn Embedder> {
        match self {
            EmbedderKind::Exact => Box::new(ExactEmbedder),
            EmbedderKind::Ngram => Box::new(NgramEmbedder::default()),
        }
    }
}

impl FromStr for EmbedderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EmbedderKind::Exact),
            "ngram" => Ok(EmbedderKind::Ngram),
            other => Err(Error::Config(format!("unknown embedder {other:?}"))),
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderKind::Exact => "exact",
            EmbedderKind::Ngram => "ngram",
        })
    }
}

/// Row-major `M × N` cosine matrix. `N` may be 0 for samples without
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged similarity rows");
        SimilarityMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    /// `m` references and no predictions.
    pub fn empty(m: usize) -> Self {
        SimilarityMatrix {
            rows: m,
            cols: 0,
            data: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn similarity_matrix<S: AsRef<str>>(refs: &[S], preds: &[S], embedder: &dyn Embedder) -> Result<SimilarityMatrix> {
    if refs.is_empty() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "similarity needs at least one reference and one prediction, got {}×{}",
            refs.len(),
            preds.len()
        )));
    }
    let all: Vec<&str> = refs.iter().chain(preds).map(|s| s.as_ref()).collect();
    let emb = embedder.embed_all(&all);
    let (r, p) = emb.split_at(refs.len());
    let mut data = Vec::with_capacity(refs.len() * preds.len());
    for a in r {
        for b in p {
            data.push(cosine(a, b));
        }
    }
    Ok(SimilarityMatrix {
        rows: refs.len(),
        cols: preds.len(),
        data,
    })
}

/// Greedy-matching recall and precision over the first `top_k` columns,
/// with cells below `threshold` counted as 0.
pub fn recall_precision_at(s: &SimilarityMatrix, top_k: usize, threshold: f64) -> (f64, f64) {
    let kept = s.cols.min(top_k);
    if kept == 0 || s.rows == 0 {
        return (0.0, 0.0);
    }
    let cell = |i, j| {
        let v = s.get(i, j);
        if v < threshold {
            0.0
        } else {
            v
        }
    };
    let mut r = 0.0;
    for i in 0..s.rows {
        r += (0..kept).map(|j| cell(i, j)).fold(f64::NEG_INFINITY, f64::max);
    }
    let mut p = 0.0;
    for j in 0..kept {
        p += (0..s.rows).map(|i| cell(i, j)).fold(f64::NEG_INFINITY, f64::max);
    }
    (r / s.rows as f64, p / kept as f64)
}

pub fn recall_precision(s: &SimilarityMatrix, top_k: usize) -> (f64, f64) {
    recall_precision_at(s, top_k, f64::NEG_INFINITY)
}

pub fn f1(r: f64, p: f64) -> f64 {
    if r + p == 0.0 {
        0.0
    } else {
        2.0 * r * p / (r + p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "P")]
    pub p: f64,
}

fn mean_curve(samples: &[SimilarityMatrix], f: impl Fn(&SimilarityMatrix) -> (f64, f64) + Sync + Send) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let per: Vec<(f64, f64)> = samples.par_iter().map(f).collect();
    let n = per.len() as f64;
    let (r, p) = per.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    (r / n, p / n)
}

/// Mean R/P at each threshold.
pub fn pr_curve_threshold(samples: &[SimilarityMatrix], thresholds: &[f64], top_k: usize) -> Vec<CurvePoint> {
    thresholds
        .iter()
        .map(|&t| {
            let (r, p) = mean_curve(samples, |s| recall_precision_at(s, top_k, t));
            CurvePoint { x: t, r, p }
        })
        .collect()
}

/// Mean R/P keeping the first `k` ranked predictions, for each `k`.
pub fn pr_curve_topk(samples: &[SimilarityMatrix], ks: &[usize]) -> Vec<CurvePoint> {
    ks.iter()
        .map(|&k| {
            let (r, p) = mean_curve(samples, |s| recall_precision(s, k));
            CurvePoint { x: k as f64, r, p }
        })
        .collect()
}

/// `x,R,P` rows with a header.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("x,R,P\n");
    for c in points {
        s.push_str(&format!("{},{},{}\n", c.x, c.r, c.p));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Indicator {
    Exact,
    Embedder,
}

/// Exact mode: fraction of references found verbatim among the first `k`
/// predictions. Embedder mode: mean over references of the best similarity
/// among the first `k` predictions.
pub fn topk_accuracy<S: AsRef<str>>(
    refs: &[S],
    preds: &[S],
    k: usize,
    indicator: Indicator,
    embedder: &dyn Embedder,
) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Shape("top-k accuracy needs at least one reference".into()));
    }
    let kept = &preds[..preds.len().min(k)];
    match indicator {
        Indicator::Exact => {
            let hits = refs
                .iter()
                .filter(|r| kept.iter().any(|p| p.as_ref() == r.as_ref()))
                .count();
            Ok(hits as f64 / refs.len() as f64)
        }
        Indicator::Embedder => {
            if kept.is_empty() {
                return Ok(0.0);
            }
            Ok(recall_precision(&similarity_matrix(refs, kept, embedder)?, k).0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub image_id: String,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// No predictions for this image.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Curves {
    pub thresholds: Vec<CurvePoint>,
    pub topk: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub embedder: String,
    pub top_k: usize,
    pub samples: usize,
    #[serde(rename = "mean_R")]
    pub mean_r: f64,
    #[serde(rename = "mean_P")]
    pub mean_p: f64,
    #[serde(rename = "mean_F1")]
    pub mean_f1: f64,
    /// Images scored 0 because nothing was predicted.
    pub flagged: usize,
    /// Images left out because their reference set is empty.
    pub skipped: usize,
    pub curves: Curves,
    pub per_sample: Vec<SampleScore>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "samples={} R={:.4} P={:.4} F1={:.4} (embedder={}, top_k={}, flagged={}, skipped={})",
            self.samples,
            self.mean_r,
            self.mean_p,
            self.mean_f1,
            self.embedder,
            self.top_k,
            self.flagged,
            self.skipped
        )
    }
}

/// Similarity matrices for every reference image, in reference order.
/// Images without a prediction record get an empty matrix.
pub fn sample_matrices(
    refs: &[ReferenceLabelSet],
    preds: &[PredictionRecord],
    embedder: &dyn Embedder,
) -> Result<(Vec<(String, SimilarityMatrix)>, usize)> {
    let by_id: HashMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let kept: Vec<&ReferenceLabelSet> = refs.iter().filter(|r| !r.labels.is_empty()).collect();
    let skipped = refs.len() - kept.len();
    let mats: Result<Vec<_>> = kept
        .par_iter()
        .map(|r| {
            let labels: Vec<&str> = by_id
                .get(r.image_id.as_str())
                .map(|p| p.labels.iter().map(|l| l.text.as_str()).collect())
                .unwrap_or_default();
            let refs: Vec<&str> = r.labels.iter().map(String::as_str).collect();
            let s = if labels.is_empty() {
                SimilarityMatrix::empty(refs.len())
            } else {
                similarity_matrix(&refs, &labels, embedder)?
            };
            Ok((r.image_id.clone(), s))
        })
        .collect();
    Ok((mats?, skipped))
}

pub const DEFAULT_THRESHOLDS: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Score predictions against references, joined by image id.
pub fn evaluate(
    refs: &[ReferenceLabelSet],
    preds: &[PredictionRecord],
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<MetricReport> {
    let (mats, skipped) = sample_matrices(refs, preds, embedder)?;
    let per_sample: Vec<SampleScore> = mats
        .iter()
        .map(|(id, s)| {
            let (r, p) = recall_precision(s, top_k);
            SampleScore {
                image_id: id.clone(),
                r,
                p,
                f1: f1(r, p),
                m: s.rows(),
                n: s.cols().min(top_k),
                flagged: s.cols() == 0,
            }
        })
        .collect();
    let n = per_sample.len();
    let mean = |f: fn(&SampleScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_sample.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let matrices: Vec<SimilarityMatrix> = mats.into_iter().map(|(_, s)| s).collect();
    let ks: Vec<usize> = (1..=top_k).collect();
    Ok(MetricReport {
        embedder: embedder.name().to_string(),
        top_k,
        samples: n,
        mean_r: mean(|s| s.r),
        mean_p: mean(|s| s.p),
        mean_f1: mean(|s| s.f1),
        flagged: per_sample.iter().filter(|s| s.flagged).count(),
        skipped,
        curves: Curves {
            thresholds: pr_curve_threshold(&matrices, &DEFAULT_THRESHOLDS, top_k),
            topk: pr_curve_topk(&matrices, &ks),
        },
        per_sample,
    })
}
