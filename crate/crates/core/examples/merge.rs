//! Collapsing layers whose palette colors coincide.
//!
//! cargo run --release --example merge

use softseg::layers::{compose, merge_duplicate_layers, normalize_alpha, AlphaStack, LayerStack};
use softseg::palette::Palette;

fn main() -> softseg::Result<()> {
    let (w, h) = (8, 8);
    let red = [0.9, 0.1, 0.1];
    let palette = Palette::manual(vec![red, [0.1, 0.1, 0.9], red, [0.2, 0.8, 0.2]])?;
    let raw: Vec<f32> = (0..4 * w * h).map(|i| ((i * 37) % 17) as f32 / 17.0).collect();
    let alphas = normalize_alpha(&AlphaStack::new(4, w, h, raw, false)?);
    let colors = (0..4 * w * h).map(|i| palette.colors()[i / (w * h)]).collect();
    let stack = LayerStack::new(palette, alphas, colors)?;

    let merged = merge_duplicate_layers(&stack)?;
    println!("{} layers -> {}", stack.k(), merged.k());
    println!("composite change {:.2e}", compose(&merged).max_abs_diff(&compose(&stack))?);
    Ok(())
}
