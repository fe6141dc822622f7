//! Time greedy and one-shot decoding on a full and a truncated random
//! model, batch size 1, median of repeats.
//!
//! `cargo run --release --example bench_decoding`

use nextlabel::bench::{bench_decode, BenchConfig};
use nextlabel::layout::PosMode;
use nextlabel::model::io::EmbeddingSet;
use nextlabel::model::{Model, ModelConfig};
use nextlabel::sampling::{SamplerConfig, Strategy};
use nextlabel::tokenizer::Vocab;

fn main() -> nextlabel::Result<()> {
    let vocab = Vocab::from_parts("".chars(), ["the ", "cat", "dog"]);
    let config = ModelConfig {
        d_model: 32,
        n_heads: 4,
        n_blocks: 8,
        mlp_ratio: 4,
        vocab_size: vocab.len(),
        d_image: 16,
        max_seq: 128,
        pos_mode: PosMode::Shared,
    };
    let full = Model::<f32>::init(&config, 11)?;
    let small = full.truncate(2)?;
    let mut images = EmbeddingSet::new(4, config.d_image);
    for i in 0..4 {
        images.push(format!("img-{i}"), (0..4 * config.d_image).map(|j| ((i * 31 + j) % 7) as f32 / 7.0).collect())?;
    }
    let prompt = vocab.encode_prompt(nextlabel::INFERENCE_PROMPT)?;
    let sampler = |strategy| SamplerConfig { strategy, k: 10, ..SamplerConfig::default() };
    let configs = [
        BenchConfig { name: "full-greedy".into(), model: &full, sampler: sampler(Strategy::Greedy) },
        BenchConfig { name: "trunc2-greedy".into(), model: &small, sampler: sampler(Strategy::Greedy) },
        BenchConfig { name: "trunc2-one-shot".into(), model: &small, sampler: sampler(Strategy::OneShot) },
    ];
    let report = bench_decode(&configs, &vocab, &images, &prompt, 3)?;
    print!("{report}");
    print!("{}", report.to_csv());
    Ok(())
}
