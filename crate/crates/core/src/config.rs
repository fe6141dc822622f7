//! Run configuration as flat `section.key=value` lines.
//!
//! ```text
//! # comments and blank lines are ignored
//! model.d_model=64
//! train.epochs=20
//! sampler.strategy=one-shot
//! ```
//!
//! Unknown keys are rejected. Command-line flags override file values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::metric::EmbedderKind;
use crate::model::ModelConfig;
use crate::sampling::SamplerConfig;
use crate::train::{SyntheticSpec, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSettings {
    pub embedder: EmbedderKind,
    pub top_k: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            embedder: EmbedderKind::Exact,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub metric: MetricSettings,
    pub synth: SyntheticSpec,
    /// Merge budget when a vocabulary is built from training labels.
    pub max_merges: usize,
    pub seed: u64,
    pub threads: usize,
    pub lexicon: Option<PathBuf>,
    pub prompts_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            metric: MetricSettings::default(),
            synth: SyntheticSpec::default(),
            max_merges: 400,
            seed: 0,
            threads: 1,
            lexicon: None,
            prompts_file: None,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match section {
            "model" => self.model.set(field, value).map_err(|e| match e {
                Error::ConfigMismatch(m) => Error::Config(m),
                other => other,
            })?,
            "train" => match field {
                "learning_rate" => self.train.learning_rate = num(key, value)?,
                "weight_decay" => self.train.weight_decay = num(key, value)?,
                "warmup_iters" => self.train.warmup_iters = num(key, value)?,
                "epochs" => self.train.epochs = num(key, value)?,
                "batch_size" => self.train.batch_size = num(key, value)?,
                "min_lr_ratio" => self.train.min_lr_ratio = num(key, value)?,
                "max_merges" => self.max_merges = num(key, value)?,
                "prompts_file" => self.prompts_file = Some(PathBuf::from(value)),
                _ => return Err(unknown(key)),
            },
            "sampler" => match field {
                "strategy" => self.sampler.strategy = value.parse()?,
                "k" => self.sampler.k = num(key, value)?,
                "max_tokens" => self.sampler.max_tokens = num(key, value)?,
                "max_label_tokens" => self.sampler.max_label_tokens = num(key, value)?,
                "beam_width" => self.sampler.beam_width = num(key, value)?,
                "penalty_tau" => self.sampler.penalty_tau = num(key, value)?,
                "rank_by" => self.sampler.rank_by = Some(value.parse()?),
                _ => return Err(unknown(key)),
            },
            "metric" => match field {
                "embedder" => self.metric.embedder = value.parse()?,
                "top_k" => self.metric.top_k = num(key, value)?,
                _ => return Err(unknown(key)),
            },
            "synth" => match field {
                "k_min" => self.synth.k_min = num(key, value)?,
                "k_max" => self.synth.k_max = num(key, value)?,
                "d_image" => self.synth.d_image = num(key, value)?,
                "n_img" => self.synth.n_img = num(key, value)?,
                "sigma" => self.synth.sigma = num(key, value)?,
                "n_train" => self.synth.n_train = num(key, value)?,
                "n_heldout" => self.synth.n_heldout = num(key, value)?,
                _ => return Err(unknown(key)),
            },
            "preprocess" => match field {
                "lexicon" => self.lexicon = Some(PathBuf::from(value)),
                _ => return Err(unknown(key)),
            },
            "" => match field {
                "seed" => self.seed = num(key, value)?,
                "threads" => self.threads = num(key, value)?,
                _ => return Err(unknown(key)),
            },
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    /// Every setting in the file syntax; parsing the result gives `self`
    /// back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "threads={}", self.threads);
        for line in self.model.to_text().lines() {
            let _ = writeln!(s, "model.{line}");
        }
        let t = &self.train;
        let _ = writeln!(s, "train.learning_rate={}", t.learning_rate);
        let _ = writeln!(s, "train.weight_decay={}", t.weight_decay);
        let _ = writeln!(s, "train.warmup_iters={}", t.warmup_iters);
        let _ = writeln!(s, "train.epochs={}", t.epochs);
        let _ = writeln!(s, "train.batch_size={}", t.batch_size);
        let _ = writeln!(s, "train.min_lr_ratio={}", t.min_lr_ratio);
        let _ = writeln!(s, "train.max_merges={}", self.max_merges);
        if let Some(p) = &self.prompts_file {
            let _ = writeln!(s, "train.prompts_file={}", p.display());
        }
        let sp = &self.sampler;
        let _ = writeln!(s, "sampler.strategy={}", sp.strategy);
        let _ = writeln!(s, "sampler.k={}", sp.k);
        let _ = writeln!(s, "sampler.max_tokens={}", sp.max_tokens);
        let _ = writeln!(s, "sampler.max_label_tokens={}", sp.max_label_tokens);
        let _ = writeln!(s, "sampler.beam_width={}", sp.beam_width);
        let _ = writeln!(s, "sampler.penalty_tau={}", sp.penalty_tau);
        if let Some(r) = sp.rank_by {
            let _ = writeln!(s, "sampler.rank_by={r}");
        }
        let _ = writeln!(s, "metric.embedder={}", self.metric.embedder);
        let _ = writeln!(s, "metric.top_k={}", self.metric.top_k);
        let y = &self.synth;
        let _ = writeln!(s, "synth.k_min={}", y.k_min);
        let _ = writeln!(s, "synth.k_max={}", y.k_max);
        let _ = writeln!(s, "synth.d_image={}", y.d_image);
        let _ = writeln!(s, "synth.n_img={}", y.n_img);
        let _ = writeln!(s, "synth.sigma={}", y.sigma);
        let _ = writeln!(s, "synth.n_train={}", y.n_train);
        let _ = writeln!(s, "synth.n_heldout={}", y.n_heldout);
        if let Some(p) = &self.lexicon {
            let _ = writeln!(s, "preprocess.lexicon={}", p.display());
        }
        s
    }
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key {key:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{RankBy, Strategy};

    #[test]
    fn parses_dotted_keys() {
        let cfg = RunConfig::parse(
            "# demo\nmodel.d_model=32\n\ntrain.epochs = 3\nsampler.strategy=greedy\nsampler.rank_by=ppl\nseed=9\n",
        )
        .unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.sampler.strategy, Strategy::Greedy);
        assert_eq!(cfg.sampler.rank_by, Some(RankBy::Ppl));
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        for bad in ["model.width=3", "train.lr=0.1", "colour=red", "seed", "train.epochs=many"] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("sampler.rank_by", "sim").unwrap();
        cfg.set("preprocess.lexicon", "/tmp/nouns.txt").unwrap();
        cfg.set("synth.sigma", "0.25").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
