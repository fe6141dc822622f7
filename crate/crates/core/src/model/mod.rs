//! The decoder: image projection, learned `[IMG]` embedding, token and
//! absolute positional embeddings, pre-norm transformer blocks and an output
//! head over the vocabulary.

mod forward;
pub mod io;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::layout::{PosMode, MAX_SEQ};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub use forward::{Logits, TextInput};
pub(crate) use forward::{BlockCache, ForwardCache};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_ratio: usize,
    pub vocab_size: usize,
    pub d_image: usize,
    pub max_seq: usize,
    pub pos_mode: PosMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_blocks: 4,
            mlp_ratio: 4,
            vocab_size: 32,
            d_image: 64,
            max_seq: MAX_SEQ,
            pos_mode: PosMode::Shared,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model={} must be a positive multiple of n_heads={}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1".into());
        }
        if self.max_seq == 0 {
            return bad("max_seq must be at least 1".into());
        }
        if self.mlp_ratio == 0 || self.d_image == 0 {
            return bad("mlp_ratio and d_image must be positive".into());
        }
        if self.vocab_size < 3 {
            return bad(format!("vocab_size={} too small", self.vocab_size));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn hidden(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    /// `key=value` lines, fixed key order.
    pub fn to_text(&self) -> String {
        format!(
            "d_model={}\nn_heads={}\nn_blocks={}\nmlp_ratio={}\nvocab_size={}\nd_image={}\nmax_seq={}\npos_mode={}\n",
            self.d_model,
            self.n_heads,
            self.n_blocks,
            self.mlp_ratio,
            self.vocab_size,
            self.d_image,
            self.max_seq,
            self.pos_mode
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = 0usize;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigMismatch(format!("bad config line {line:?}")))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
            seen += 1;
        }
        if seen != 8 {
            return Err(Error::ConfigMismatch(format!(
                "expected 8 config keys, found {seen}"
            )));
        }
        cfg.validate()
            .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        Ok(cfg)
    }

    /// Set one field by name; used by the file parser and the run config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {value:?}")))
        };
        match key {
            "d_model" => self.d_model = num()?,
            "n_heads" => self.n_heads = num()?,
            "n_blocks" => self.n_blocks = num()?,
            "mlp_ratio" => self.mlp_ratio = num()?,
            "vocab_size" => self.vocab_size = num()?,
            "d_image" => self.d_image = num()?,
            "max_seq" => self.max_seq = num()?,
            "pos_mode" => self.pos_mode = value.parse()?,
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub attn_norm: Tensor<F>,
    pub wq: Tensor<F>,
    pub wk: Tensor<F>,
    pub wv: Tensor<F>,
    pub wo: Tensor<F>,
    pub mlp_norm: Tensor<F>,
    pub w_in: Tensor<F>,
    pub w_out: Tensor<F>,
}

pub const BLOCK_TENSORS: [&str; 8] = [
    "attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_in", "w_out",
];

impl<F: Scalar> Block<F> {
    fn tensors(&self) -> [&Tensor<F>; 8] {
        [
            &self.attn_norm,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.mlp_norm,
            &self.w_in,
            &self.w_out,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<F>; 8] {
        [
            &mut self.attn_norm,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.mlp_norm,
            &mut self.w_in,
            &mut self.w_out,
        ]
    }
}

/// Decoder parameters. Projection matrices are stored `in × out`; the token
/// embedding and output head are `V × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub token_embedding: Tensor<F>,
    pub image_projection: Tensor<F>,
    pub img_token: Tensor<F>,
    pub positional_embedding: Tensor<F>,
    pub blocks: Vec<Block<F>>,
    pub final_norm: Tensor<F>,
    pub output_head: Tensor<F>,
}

impl<F: Scalar> Model<F> {
    /// Gaussian weights scaled by `1/sqrt(d_model)`, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (config.d_model as f64).sqrt();
        let mut normal = |dims: &[usize]| {
            let n: usize = dims.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    F::c(z * scale)
                })
                .collect();
            Tensor::from_vec(dims, data)
        };
        let d = config.d_model;
        let h = config.hidden();
        let token_embedding = normal(&[config.vocab_size, d]);
        let image_projection = normal(&[config.d_image, d]);
        let img_token = normal(&[d]);
        let positional_embedding = normal(&[config.max_seq, d]);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            blocks.push(Block {
                attn_norm: Tensor::filled(&[d], F::one()),
                wq: normal(&[d, d]),
                wk: normal(&[d, d]),
                wv: normal(&[d, d]),
                wo: normal(&[d, d]),
                mlp_norm: Tensor::filled(&[d], F::one()),
                w_in: normal(&[d, h]),
                w_out: normal(&[h, d]),
            });
        }
        let output_head = normal(&[config.vocab_size, d]);
        Ok(Model {
            config: config.clone(),
            token_embedding,
            image_projection,
            img_token,
            positional_embedding,
            blocks,
            final_norm: Tensor::filled(&[d], F::one()),
            output_head,
        })
    }

    /// Same shapes, all zeros (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill_zero();
        }
        z
    }

    /// Canonical tensor order, shared by serialization and the optimizer.
    pub fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = vec![
            ("token_embedding".into(), &self.token_embedding),
            ("image_projection".into(), &self.image_projection),
            ("img_token".into(), &self.img_token),
            ("positional_embedding".into(), &self.positional_embedding),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors()) {
                out.push((format!("blocks.{i}.{name}"), t));
            }
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("output_head".into(), &self.output_head));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = vec![
            ("token_embedding".into(), &mut self.token_embedding),
            ("image_projection".into(), &mut self.image_projection),
            ("img_token".into(), &mut self.img_token),
            ("positional_embedding".into(), &mut self.positional_embedding),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors_mut()) {
                out.push((format!("blocks.{i}.{name}"), t));
            }
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        out.push(("output_head".into(), &mut self.output_head));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            token_embedding: self.token_embedding.cast(),
            image_projection: self.image_projection.cast(),
            img_token: self.img_token.cast(),
            positional_embedding: self.positional_embedding.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    attn_norm: b.attn_norm.cast(),
                    wq: b.wq.cast(),
                    wk: b.wk.cast(),
                    wv: b.wv.cast(),
                    wo: b.wo.cast(),
                    mlp_norm: b.mlp_norm.cast(),
                    w_in: b.w_in.cast(),
                    w_out: b.w_out.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            output_head: self.output_head.cast(),
        }
    }

    /// Keep the first `keep_blocks` blocks together with all embeddings, the
    /// final norm and the output head.
    pub fn truncate(&self, keep_blocks: usize) -> Result<Self> {
        if keep_blocks == 0 || keep_blocks > self.config.n_blocks {
            return Err(Error::BlockRange {
                keep: keep_blocks,
                n_blocks: self.config.n_blocks,
            });
        }
        let mut config = self.config.clone();
        config.n_blocks = keep_blocks;
        Ok(Model {
            config,
            token_embedding: self.token_embedding.clone(),
            image_projection: self.image_projection.clone(),
            img_token: self.img_token.clone(),
            positional_embedding: self.positional_embedding.clone(),
            blocks: self.blocks[..keep_blocks].to_vec(),
            final_norm: self.final_norm.clone(),
            output_head: self.output_head.clone(),
        })
    }

    /// Image token embeddings mapped into the model width.
    pub fn project_image(&self, image: &[F]) -> Vec<F> {
        let d = self.config.d_model;
        let di = self.config.d_image;
        let n = image.len() / di;
        let mut out = vec![F::zero(); n * d];
        crate::tensor::matmul(image, n, di, self.image_projection.data(), d, &mut out);
        out
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d_model={} heads={} blocks={} mlp_ratio={} V={} d_image={} max_seq={} pos={}",
            self.d_model,
            self.n_heads,
            self.n_blocks,
            self.mlp_ratio,
            self.vocab_size,
            self.d_image,
            self.max_seq,
            self.pos_mode
        )
    }
}
