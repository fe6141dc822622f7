//! Cut an 8-block decoder down to 2 blocks and time one forward pass of
//! each. The kept tensors are copied byte for byte.
//!
//! `cargo run --release --example truncate_decoder`

use nextlabel::bench::time_forward;
use nextlabel::layout::PosMode;
use nextlabel::model::{Model, ModelConfig};
use nextlabel::tokenizer::Vocab;

fn main() -> nextlabel::Result<()> {
    let vocab = Vocab::from_parts("".chars(), ["the ", "cat", "dog"]);
    let config = ModelConfig {
        d_model: 64,
        n_heads: 4,
        n_blocks: 8,
        mlp_ratio: 4,
        vocab_size: vocab.len(),
        d_image: 32,
        max_seq: 128,
        pos_mode: PosMode::Shared,
    };
    let full = Model::<f32>::init(&config, 3)?;
    let small = full.truncate(2)?;
    let kept_equal = small
        .tensors()
        .iter()
        .all(|(name, t)| full.tensors().iter().any(|(n, u)| n == name && u.data() == t.data()));
    println!("{} -> {} parameters, kept tensors unchanged: {kept_equal}", full.param_count(), small.param_count());

    let image = vec![0.1; 16 * config.d_image];
    let prompt = vocab.encode_prompt(nextlabel::INFERENCE_PROMPT)?;
    let labels: Vec<Vec<u32>> = ["cat", "dog", "the cat"].iter().map(|l| vocab.encode_label(l)).collect::<Result<_, _>>()?;
    let t_full = time_forward(&full, &image, &prompt, &labels, 7)?;
    let t_small = time_forward(&small, &image, &prompt, &labels, 7)?;
    println!("forward: 8 blocks {t_full:.3} ms, 2 blocks {t_small:.3} ms, speedup {:.2}x", t_full / t_small);
    Ok(())
}
