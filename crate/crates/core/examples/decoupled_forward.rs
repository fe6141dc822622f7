//! Run one packed forward pass over several labels, then swap the first
//! label for another word. Logits of the other labels do not move at all.
//!
//! `cargo run --example decoupled_forward`

use nextlabel::fixtures::{random_image, random_model};
use nextlabel::layout::{assign_positions, build_nxtp_mask, PosMode, SegmentLayout};
use nextlabel::model::{Model, TextInput};
use nextlabel::tokenizer::Vocab;

/// Logit rows of every label token, per label.
fn label_rows(model: &Model<f32>, vocab: &Vocab, image: &[f32], labels: &[&str]) -> nextlabel::Result<Vec<Vec<f32>>> {
    let prompt = vocab.encode_prompt("the ")?;
    let ids: Vec<Vec<u32>> = labels.iter().map(|l| vocab.encode_label(l)).collect::<Result<_, _>>()?;
    let n_img = image.len() / model.config.d_image;
    let layout = SegmentLayout::new(n_img, prompt.len(), ids.iter().map(Vec::len).collect())?;
    let mut tokens = prompt.clone();
    for l in &ids {
        tokens.extend(l);
    }
    let logits = model.forward(
        &TextInput { image, tokens: &tokens },
        &build_nxtp_mask(&layout),
        &assign_positions(&layout, PosMode::Shared),
    )?;
    Ok(layout
        .label_spans()
        .into_iter()
        .map(|(start, len)| (start..start + len).flat_map(|p| logits.row(p).to_vec()).collect())
        .collect())
}

fn main() -> nextlabel::Result<()> {
    let (model, vocab) = random_model(2, 7);
    let image = random_image(&model.config, 3, 7);

    let before = label_rows(&model, &vocab, &image, &["cat", "dog", "ox"])?;
    let after = label_rows(&model, &vocab, &image, &["bird", "dog", "ox"])?;
    for (i, (b, a)) in before.iter().zip(&after).enumerate() {
        let identical = b.len() == a.len() && b.iter().zip(a).all(|(x, y)| x.to_bits() == y.to_bits());
        println!("label {i}: {} logit values, bitwise identical after swapping label 0: {identical}", b.len());
    }
    Ok(())
}
