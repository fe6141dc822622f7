//! Show the label-decoupling attention mask and shared positions for a
//! small layout, next to a plain causal mask.
//!
//! `cargo run --example label_mask -- img=3:prompt=2:labels=2,3`

use nextlabel::layout::{assign_positions, build_causal_mask, build_nxtp_mask, PosMode, SegmentLayout};

fn main() -> nextlabel::Result<()> {
    let spec = std::env::args().nth(1).unwrap_or_else(|| "img=3:prompt=2:labels=2,3".into());
    let layout: SegmentLayout = spec.parse()?;

    let mask = build_nxtp_mask(&layout);
    println!("decoupled mask ({}x{}, {} blocked):", mask.size(), mask.size(), mask.blocked_count());
    print!("{mask}");

    let causal = build_causal_mask(layout.total_len())?;
    println!("causal mask ({} blocked):", causal.blocked_count());
    print!("{causal}");

    println!("segments:  {:?}", (0..layout.total_len()).map(|p| layout.segment_of(p)).collect::<Vec<_>>());
    println!("shared:     {:?}", assign_positions(&layout, PosMode::Shared));
    println!("sequential: {:?}", assign_positions(&layout, PosMode::Sequential));
    Ok(())
}
