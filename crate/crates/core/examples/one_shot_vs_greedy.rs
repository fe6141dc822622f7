//! Decode an engineered looping model three ways. Greedy without a
//! penalty repeats the same label; the repetition penalty breaks the loop;
//! one-shot sampling starts every label from a different first token.
//! A second toy shows beam search finding a label greedy misses.
//!
//! `cargo run --example one_shot_vs_greedy`

use nextlabel::bench::repetition_rate;
use nextlabel::fixtures::{beam_toy_model, looping_model};
use nextlabel::sampling::{decode, Prefix, SamplerConfig, Strategy};

fn main() -> nextlabel::Result<()> {
    let (model, vocab) = looping_model();
    let image = vec![0.0; model.config.d_image];
    let prefix = Prefix { image: &image, prompt: &[] };

    let runs = [
        ("greedy tau=1.0", SamplerConfig { strategy: Strategy::Greedy, penalty_tau: 1.0, max_tokens: 24, ..SamplerConfig::default() }),
        ("greedy tau=1.2", SamplerConfig { strategy: Strategy::Greedy, penalty_tau: 1.2, max_tokens: 24, ..SamplerConfig::default() }),
        ("one-shot k=5", SamplerConfig { strategy: Strategy::OneShot, k: 5, ..SamplerConfig::default() }),
    ];
    for (name, cfg) in runs {
        let out = decode(&model, &vocab, prefix, &cfg)?;
        println!(
            "{name:<15} raw={:?} repetition={:.2} passes={}",
            out.raw_labels,
            repetition_rate(&out.raw_labels),
            out.forward_passes
        );
        for p in &out.predictions {
            println!("    {:<4} prob={:.4} initial={:.4} ppl={:.3} seen={}", p.label, p.label_prob, p.initial_prob, p.ppl, p.occurrences);
        }
    }

    let (toy, toy_vocab) = beam_toy_model();
    let image = vec![0.0; toy.config.d_image];
    let prefix = Prefix { image: &image, prompt: &[] };
    for strategy in [Strategy::Greedy, Strategy::Beam] {
        let cfg = SamplerConfig { strategy, max_tokens: 2, beam_width: 2, ..SamplerConfig::default() };
        let out = decode(&toy, &toy_vocab, prefix, &cfg)?;
        println!("{strategy:<7} on the beam toy: {:?}", out.raw_labels);
    }
    Ok(())
}
