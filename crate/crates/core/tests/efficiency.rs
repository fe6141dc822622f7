use nextlabel::bench::{repetition_rate, time_forward};
use nextlabel::fixtures::{random_image, tiny_vocab};
use nextlabel::layout::PosMode;
use nextlabel::model::{Model, ModelConfig};
use nextlabel::sampling::{decode, Prefix, SamplerConfig, Strategy};

#[test]
fn forward_time_grows_with_depth() {
    let vocab = tiny_vocab();
    let base = ModelConfig {
        d_model: 48,
        n_heads: 4,
        n_blocks: 8,
        mlp_ratio: 4,
        vocab_size: vocab.len(),
        d_image: 16,
        max_seq: 128,
        pos_mode: PosMode::Shared,
    };
    let full = Model::<f32>::init(&base, 1).unwrap();
    let image = random_image(&base, 12, 2);
    let prompt = vocab.encode_prompt("the objects").unwrap();
    let labels: Vec<Vec<u32>> = ["cat", "dog", "ox"].iter().map(|l| vocab.encode_label(l).unwrap()).collect();
    let times: Vec<f64> = [1, 2, 4, 8]
        .iter()
        .map(|&n| time_forward(&full.truncate(n).unwrap(), &image, &prompt, &labels, 5).unwrap())
        .collect();
    for w in times.windows(2) {
        assert!(w[1] >= 0.95 * w[0], "{times:?}");
    }
}

#[test]
fn one_shot_budget_is_bounded() {
    let (model, vocab) = nextlabel::fixtures::random_model(2, 4);
    let image = random_image(&model.config, 3, 1);
    let prefix = Prefix { image: &image, prompt: &[] };
    let one = decode(&model, &vocab, prefix, &SamplerConfig { k: 10, ..SamplerConfig::default() }).unwrap();
    assert!(one.tokens_generated <= 10 * (one_cap() + 1));
    assert!(one.forward_passes <= one_cap() + 1);
    let greedy = decode(&model, &vocab, prefix, &SamplerConfig { strategy: Strategy::Greedy, ..SamplerConfig::default() }).unwrap();
    assert_eq!(greedy.tokens_generated, 64);
    assert_eq!(greedy.forward_passes, 64);
    assert!((0.0..=1.0).contains(&repetition_rate(&greedy.raw_labels)));
}

fn one_cap() -> usize {
    SamplerConfig::default().max_label_tokens
}
