//! Score predicted label lists against references with both embedders,
//! then print threshold and top-k precision/recall curves.
//!
//! `cargo run --example metric_curves`

use nextlabel::metric::{
    curve_csv, evaluate, pr_curve_threshold, pr_curve_topk, recall_precision, sample_matrices, similarity_matrix,
    EmbedderKind, DEFAULT_THRESHOLDS,
};
use nextlabel::records::{PredictedLabel, PredictionRecord, ReferenceLabelSet};

fn predicted(id: &str, labels: &[&str]) -> PredictionRecord {
    PredictionRecord {
        image_id: id.into(),
        labels: labels
            .iter()
            .map(|l| PredictedLabel { text: l.to_string(), prob: 0.0, initial_prob: 0.0, ppl: 1.0, sim: 0.0 })
            .collect(),
    }
}

fn main() -> nextlabel::Result<()> {
    let refs = vec![
        ReferenceLabelSet { image_id: "a".into(), labels: vec!["dog".into(), "sofa".into()] },
        ReferenceLabelSet { image_id: "b".into(), labels: vec!["bus".into(), "street".into(), "tree".into()] },
        ReferenceLabelSet { image_id: "c".into(), labels: vec!["cat".into()] },
    ];
    let preds = vec![
        predicted("a", &["dog", "couch", "pillow"]),
        predicted("b", &["street", "buses", "car", "tree", "sky"]),
        predicted("c", &[]),
    ];

    let s = similarity_matrix(&["sofa", "dog"], &["dog", "sofas"], EmbedderKind::Ngram.build().as_ref())?;
    let (r, p) = recall_precision(&s, 10);
    println!("ngram similarity of sofa/sofas: {:.3}, R={r:.3} P={p:.3}", s.get(0, 1));

    for kind in [EmbedderKind::Exact, EmbedderKind::Ngram] {
        let embedder = kind.build();
        println!("{}", evaluate(&refs, &preds, embedder.as_ref(), 5)?);
        let (mats, _) = sample_matrices(&refs, &preds, embedder.as_ref())?;
        let mats: Vec<_> = mats.into_iter().map(|(_, m)| m).collect();
        print!("threshold curve\n{}", curve_csv(&pr_curve_threshold(&mats, &DEFAULT_THRESHOLDS, 5)));
        print!("top-k curve\n{}", curve_csv(&pr_curve_topk(&mats, &[1, 2, 3, 4, 5])));
    }
    Ok(())
}
