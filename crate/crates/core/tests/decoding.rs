use nextlabel::fixtures::{looping_model, probs_table, transition_model};
use nextlabel::sampling::{decode, Prefix, SamplerConfig, Strategy};
use nextlabel::tokenizer::Vocab;
use nextlabel::TokenId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random transition model whose label paths only move forward through
/// the alphabet and end in `[SEP]`.
fn forward_chain(seed: u64) -> (nextlabel::model::Model<f32>, Vocab) {
    let vocab = Vocab::from_parts("".chars(), Vec::<String>::new());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let letters: Vec<TokenId> = ('a'..='z').map(|c| vocab.id_of(&c.to_string()).unwrap()).collect();
    let sep = vocab.sep_id();
    let mut rows: Vec<(TokenId, Vec<(TokenId, f64)>)> = Vec::new();
    let mut first: Vec<(TokenId, f64)> = Vec::new();
    for (i, &t) in letters.iter().enumerate().take(10) {
        first.push((t, 0.02 + 0.08 * rng.random::<f64>() + i as f64 * 1e-4));
    }
    rows.push((vocab.img_id(), first));
    for (i, &t) in letters.iter().enumerate() {
        let next = if i + 1 < letters.len() && rng.random::<f64>() < 0.6 {
            letters[rng.random_range(i + 1..letters.len())]
        } else {
            sep
        };
        rows.push((t, vec![(next, 0.5 + 0.4 * rng.random::<f64>())]));
    }
    rows.push((sep, vec![(letters[25], 0.6)]));
    let borrowed: Vec<(TokenId, &[(TokenId, f64)])> = rows.iter().map(|(t, r)| (*t, r.as_slice())).collect();
    let table = probs_table(&vocab, &borrowed, 0.0);
    (transition_model(&vocab, &table, 1), vocab)
}

#[test]
fn top1_one_shot_equals_first_greedy_label() {
    let mut compared = 0;
    for seed in 0..60 {
        let (model, vocab) = forward_chain(seed);
        let image = vec![0.0; model.config.d_image];
        let prefix = Prefix { image: &image, prompt: &[] };
        let greedy = decode(
            &model,
            &vocab,
            prefix,
            &SamplerConfig { strategy: Strategy::Greedy, penalty_tau: 1.0, max_tokens: 40, ..SamplerConfig::default() },
        )
        .unwrap();
        let one = decode(&model, &vocab, prefix, &SamplerConfig { strategy: Strategy::OneShot, k: 1, ..SamplerConfig::default() })
            .unwrap();
        let Some(first) = greedy.raw_labels.first() else { continue };
        if first.chars().count() >= 8 {
            continue;
        }
        assert_eq!(one.predictions.len(), 1);
        assert_eq!(&one.predictions[0].label, first, "seed {seed}");
        compared += 1;
    }
    assert!(compared >= 30, "only {compared} comparable instances");
}

#[test]
fn looping_model_top1_matches_greedy() {
    let (model, vocab) = looping_model();
    let image = vec![0.0; model.config.d_image];
    let prefix = Prefix { image: &image, prompt: &[] };
    let greedy = decode(&model, &vocab, prefix, &SamplerConfig { strategy: Strategy::Greedy, penalty_tau: 1.0, ..SamplerConfig::default() }).unwrap();
    let one = decode(&model, &vocab, prefix, &SamplerConfig { k: 1, ..SamplerConfig::default() }).unwrap();
    assert_eq!(one.predictions[0].label, greedy.raw_labels[0]);
    assert_eq!(one.predictions[0].token_ids, greedy.predictions[0].token_ids);
}

#[test]
fn threaded_one_shot_matches_packed() {
    for seed in 0..10 {
        let (model, vocab) = forward_chain(seed);
        let image = vec![0.0; model.config.d_image];
        let prefix = Prefix { image: &image, prompt: &[] };
        let cfg = SamplerConfig { k: 6, ..SamplerConfig::default() };
        let packed = decode(&model, &vocab, prefix, &cfg).unwrap();
        let threaded = decode(&model, &vocab, prefix, &SamplerConfig { threads: 4, ..cfg }).unwrap();
        assert_eq!(packed.predictions, threaded.predictions);
    }
}
