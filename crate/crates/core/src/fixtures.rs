//! Small deterministic models for tests, examples and benchmarks.
//!
//! A *transition model* has one-hot token embeddings, blocks whose output
//! projections are zero and no positional signal, so the logits at every
//! position depend only on the token there: `logits = table[token]`. That
//! makes decoder behavior easy to engineer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layout::PosMode;
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::tokenizer::Vocab;
use crate::TokenId;

/// Base alphabet plus a few merged strings.
pub fn tiny_vocab() -> Vocab {
    Vocab::from_parts("".chars(), ["ca", "cat", "do", "dog", "the ", "ob"])
}

pub fn tiny_config(vocab: &Vocab, n_blocks: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_blocks,
        mlp_ratio: 2,
        vocab_size: vocab.len(),
        d_image: 6,
        max_seq: 160,
        pos_mode: PosMode::Shared,
    }
}

/// Randomly initialized model over [`tiny_vocab`].
pub fn random_model(n_blocks: usize, seed: u64) -> (Model<f32>, Vocab) {
    let vocab = tiny_vocab();
    let model = Model::init(&tiny_config(&vocab, n_blocks), seed).expect("valid tiny config");
    (model, vocab)
}

/// `n_img` uniform(-1, 1) image tokens of width `config.d_image`.
pub fn random_image(config: &ModelConfig, n_img: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_img * config.d_image)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Logit table from sparse next-token probabilities. Row `c` lists
/// `(next, p)`; the leftover mass is spread evenly over the other tokens
/// except `[IMG]`. Unlisted rows are uniform. `offset` is added to every
/// logit, which leaves plain softmax unchanged but matters for the
/// repetition penalty.
pub fn probs_table(vocab: &Vocab, rows: &[(TokenId, &[(TokenId, f64)])], offset: f64) -> Vec<Vec<f64>> {
    let v = vocab.len();
    let img = vocab.img_id() as usize;
    let mut table = vec![vec![0.0; v]; v];
    for (c, row) in table.iter_mut().enumerate() {
        let listed = rows.iter().find(|(t, _)| *t as usize == c).map(|(_, r)| *r).unwrap_or(&[]);
        let mass: f64 = listed.iter().map(|(_, p)| p).sum();
        let rest = v - 1 - listed.len();
        let fill = ((1.0 - mass) / rest as f64).max(1e-12);
        let mut p = vec![fill; v];
        p[img] = 1e-12;
        for &(t, q) in listed {
            p[t as usize] = q;
        }
        for (x, q) in row.iter_mut().zip(&p) {
            *x = q.ln() + offset;
        }
    }
    table
}

/// Transition model whose logits after token `c` are `table[c]`; the
/// `[IMG]` row drives the first step when the prompt is empty.
pub fn transition_model(vocab: &Vocab, table: &[Vec<f64>], n_blocks: usize) -> Model<f32> {
    let v = vocab.len();
    let config = ModelConfig {
        d_model: v,
        n_heads: 1,
        n_blocks,
        mlp_ratio: 1,
        vocab_size: v,
        d_image: 4,
        max_seq: 256,
        pos_mode: PosMode::Shared,
    };
    let mut m = Model::<f32>::init(&config, 0).expect("valid transition config");
    let d = v;
    let mut eye = Tensor::zeros(&[v, d]);
    for i in 0..v {
        eye.row_mut(i)[i] = 1.0;
    }
    m.token_embedding = eye;
    m.img_token = Tensor::zeros(&[d]);
    m.img_token.data_mut()[vocab.img_id() as usize] = 1.0;
    m.image_projection.fill_zero();
    m.positional_embedding.fill_zero();
    for b in &mut m.blocks {
        b.wo.fill_zero();
        b.w_out.fill_zero();
    }
    // rms-normalizing a one-hot row scales it by about sqrt(d)
    let s = (d as f64).sqrt();
    for j in 0..v {
        let head = m.output_head.row_mut(j);
        for (i, h) in head.iter_mut().enumerate() {
            *h = (table[i][j] / s) as f32;
        }
    }
    m
}

fn id(vocab: &Vocab, s: &str) -> TokenId {
    vocab.id_of(s).expect("fixture token in vocabulary")
}

/// Transition model that loops `ab,ab,ab,…` under plain greedy decoding.
/// Close runner-up tokens let a repetition penalty of 1.2 break the loop,
/// and the first step has distinct single-token labels `c`…`g` behind `a`.
pub fn looping_model() -> (Model<f32>, Vocab) {
    let vocab = Vocab::from_parts("".chars(), Vec::<String>::new());
    let t = |s| id(&vocab, s);
    let (a, b, c, d, e, f, g) = (t("a"), t("b"), t("c"), t("d"), t("e"), t("f"), t("g"));
    let sep = vocab.sep_id();
    let img = vocab.img_id();
    let table = probs_table(
        &vocab,
        &[
            (img, &[(a, 0.30), (c, 0.15), (d, 0.14), (e, 0.13), (f, 0.12), (g, 0.11)]),
            (a, &[(b, 0.9)]),
            (b, &[(sep, 0.9)]),
            (sep, &[(a, 0.30), (c, 0.27), (d, 0.25), (e, 0.10)]),
            (c, &[(sep, 0.9)]),
            (d, &[(sep, 0.9)]),
            (e, &[(sep, 0.9)]),
            (f, &[(sep, 0.9)]),
            (g, &[(sep, 0.9)]),
        ],
        10.0,
    );
    (transition_model(&vocab, &table, 2), vocab)
}

/// Two-step toy where greedy commits to `a` (0.5) and then runs out of
/// budget, while the beam finds `b,` with probability 0.45·0.99.
pub fn beam_toy_model() -> (Model<f32>, Vocab) {
    let vocab = Vocab::from_parts("".chars(), Vec::<String>::new());
    let t = |s| id(&vocab, s);
    let (a, b, c) = (t("a"), t("b"), t("c"));
    let sep = vocab.sep_id();
    let table = probs_table(
        &vocab,
        &[
            (vocab.img_id(), &[(a, 0.5), (b, 0.45)]),
            (a, &[(c, 0.6), (sep, 0.3)]),
            (b, &[(sep, 0.99)]),
        ],
        0.0,
    );
    (transition_model(&vocab, &table, 1), vocab)
}
