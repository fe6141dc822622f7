//! Generate the synthetic task, train a small decoder on it and compare
//! one-shot against greedy decoding on held-out images.
//!
//! `cargo run --release --example train_synthetic -- [epochs] [n_train]`

use std::time::Instant;

use nextlabel::metric::{evaluate, ExactEmbedder};
use nextlabel::model::{Model, ModelConfig};
use nextlabel::sampling::{predict_records, SamplerConfig, Strategy};
use nextlabel::tokenizer::build_vocab;
use nextlabel::train::{gen_synthetic, tokenize_dataset, train, SyntheticSpec, TrainConfig};

fn main() -> nextlabel::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().copied().unwrap_or(10);
    let n_train = args.get(1).copied().unwrap_or(2000);

    let spec = SyntheticSpec {
        n_train,
        ..SyntheticSpec::default()
    };
    let data = gen_synthetic(&spec)?;

    let prompt = nextlabel::INFERENCE_PROMPT;
    let mut corpus: Vec<String> = data
        .train
        .references
        .iter()
        .map(|r| r.labels.join(","))
        .collect();
    corpus.extend(std::iter::repeat_n(prompt.to_string(), 100));
    let vocab = build_vocab(&corpus, 400)?;
    println!("vocab: {} tokens", vocab.len());

    let config = ModelConfig {
        d_model: 64,
        n_heads: 4,
        n_blocks: 4,
        mlp_ratio: 4,
        vocab_size: vocab.len(),
        d_image: spec.d_image,
        max_seq: 128,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::init(&config, 0)?;
    let (samples, _) = tokenize_dataset(&data.train.embeddings, &data.train.references, &vocab)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let report = train(&mut model, &samples, &vocab, &cfg, |e, loss| {
        println!("epoch {e:>2}  loss {loss:.4}");
    })?;
    println!(
        "trained {} steps in {:.1}s",
        report.rows.len(),
        t0.elapsed().as_secs_f64()
    );

    let prompt_ids = vocab.encode_prompt(prompt)?;
    for strategy in [Strategy::OneShot, Strategy::Greedy] {
        let sampler = SamplerConfig {
            strategy,
            k: 5,
            ..SamplerConfig::default()
        };
        let t0 = Instant::now();
        let preds = predict_records(&model, &vocab, &data.heldout.embeddings, &prompt_ids, &sampler)?;
        let rep = evaluate(&data.heldout.references, &preds, &ExactEmbedder, 5)?;
        println!("{strategy:>8}: {rep}  [{:.1}s]", t0.elapsed().as_secs_f64());
    }
    Ok(())
}
