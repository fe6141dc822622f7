//! Clean a few captions and pull out their noun labels.
//!
//! `cargo run --example preprocess_captions`

use nextlabel::preprocess::{build_label_sets, clean_caption, extract_nouns, NounLexicon};

fn main() {
    let lexicon = NounLexicon::shipped();
    println!("lexicon: {} nouns", lexicon.len());

    for caption in [
        "A Person riding 2 horses on the beach!",
        "Stock photo of two dogs sleeping on a sofa",
        "buses and taxis waiting at the station",
    ] {
        let cleaned = clean_caption(caption);
        println!("{caption:?}\n  cleaned: {cleaned:?}\n  labels:  {:?}", extract_nouns(&cleaned, &lexicon));
    }

    let jsonl = concat!(
        r#"{"image_id":"img-1","caption":"a cat on a chair near the window"}"#,
        "\n",
        "not json\n",
        r#"{"image_id":"img-2","caption":"Image of the sky"}"#,
        "\n",
    );
    let (sets, summary) = build_label_sets(jsonl, &lexicon);
    for s in &sets {
        println!("{} -> {:?}", s.image_id, s.labels);
    }
    println!("{summary}");
}
