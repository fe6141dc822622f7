//! Synthetic image/label data. Every label owns a fixed Gaussian signature
//! in image-embedding space; an image's tokens are the mean signature of
//! its labels plus isotropic noise.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::io::EmbeddingSet;
use crate::records::ReferenceLabelSet;
use crate::{Error, Result};

/// One hundred everyday object nouns.
pub const SYNTHETIC_LABELS: [&str; 100] = [
    "apple", "bag", "ball", "banana", "bed", "bench", "bicycle", "bird", "boat", "book",
    "bottle", "bowl", "box", "bread", "bridge", "broccoli", "bus", "cake", "camera", "candle",
    "car", "carpet", "carrot", "cat", "chair", "clock", "cloud", "coat", "computer", "cow",
    "cup", "curtain", "desk", "dog", "door", "duck", "elephant", "fence", "flag", "flower",
    "fork", "fridge", "giraffe", "glass", "guitar", "hat", "horse", "house", "jacket", "kite",
    "knife", "lamp", "laptop", "leaf", "mirror", "motorcycle", "mountain", "mug", "orange", "oven",
    "pen", "phone", "piano", "pillow", "pizza", "plane", "plant", "plate", "pot", "river",
    "road", "rock", "sandwich", "sheep", "shelf", "shirt", "shoe", "sink", "skateboard", "sky",
    "sofa", "spoon", "street", "suitcase", "table", "tent", "toilet", "towel", "tower", "train",
    "tree", "truck", "umbrella", "vase", "wall", "watch", "window", "zebra", "kitchen", "beach",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub labels: Vec<String>,
    pub k_min: usize,
    pub k_max: usize,
    pub d_image: usize,
    pub n_img: usize,
    pub sigma: f64,
    pub n_train: usize,
    pub n_heldout: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            labels: SYNTHETIC_LABELS.iter().map(|s| s.to_string()).collect(),
            k_min: 1,
            k_max: 5,
            d_image: 64,
            n_img: 4,
            sigma: 0.1,
            n_train: 2000,
            n_heldout: 500,
            seed: 0,
        }
    }
}

/// Embeddings and reference labels for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub embeddings: EmbeddingSet,
    pub references: Vec<ReferenceLabelSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Split,
    pub heldout: Split,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.k_min == 0 || spec.k_min > spec.k_max {
        return Err(Error::Config(format!(
            "label count range {}..={} must satisfy 1 ≤ min ≤ max",
            spec.k_min, spec.k_max
        )));
    }
    if spec.k_max > spec.labels.len() {
        return Err(Error::Config(format!(
            "k_max={} exceeds the {} available labels",
            spec.k_max,
            spec.labels.len()
        )));
    }
    if spec.d_image == 0 || spec.n_img == 0 {
        return Err(Error::Config("d_image and n_img must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let signatures: Vec<Vec<f64>> = spec
        .labels
        .iter()
        .map(|_| (0..spec.d_image).map(|_| normal(&mut rng)).collect())
        .collect();

    let make = |prefix: &str, count: usize, rng: &mut ChaCha8Rng| -> Result<Split> {
        let mut embeddings = EmbeddingSet::new(spec.n_img, spec.d_image);
        let mut references = Vec::with_capacity(count);
        for i in 0..count {
            let k = rng.random_range(spec.k_min..=spec.k_max);
            let mut chosen = sample(rng, spec.labels.len(), k).into_vec();
            chosen.sort_unstable();
            let mut mean = vec![0.0; spec.d_image];
            for &c in &chosen {
                for (m, s) in mean.iter_mut().zip(&signatures[c]) {
                    *m += s / k as f64;
                }
            }
            let mut embeds = Vec::with_capacity(spec.n_img * spec.d_image);
            for _ in 0..spec.n_img {
                for &m in &mean {
                    embeds.push((m + spec.sigma * normal(rng)) as f32);
                }
            }
            let image_id = format!("{prefix}{i:05}");
            embeddings.push(image_id.clone(), embeds)?;
            references.push(ReferenceLabelSet {
                image_id,
                labels: chosen.iter().map(|&c| spec.labels[c].clone()).collect(),
            });
        }
        Ok(Split {
            embeddings,
            references,
        })
    };
    let train = make("train-", spec.n_train, &mut rng)?;
    let heldout = make("heldout-", spec.n_heldout, &mut rng)?;
    Ok(SyntheticData { train, heldout })
}
