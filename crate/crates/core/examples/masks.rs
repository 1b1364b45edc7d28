//! Restricting a layer to a region before color estimation.
//!
//! cargo run --release --example masks

use softseg::layers::{decompose, DecomposeOptions, LayerMask, MaskMode};
use softseg::models::ModelWeights;
use softseg::palette::extract_palette;
use softseg::trainer::synthetic::{scene, SceneParams};

fn main() -> softseg::Result<()> {
    let image = scene(&SceneParams::default(), 2);
    let weights = ModelWeights::new(4, 0)?;
    let palette = extract_palette(&image, 4, 0)?;
    let (w, h) = (image.width(), image.height());
    // Keep layer 0 only in the left half.
    let mask: Vec<f32> = (0..w * h).map(|p| if p % w < w / 2 { 1.0 } else { 0.0 }).collect();
    let opts = DecomposeOptions {
        masks: vec![LayerMask {
            layer: 0,
            mask,
            mode: MaskMode::Multiply,
        }],
        ..Default::default()
    };
    let plain = decompose(&image, &palette, &weights, &DecomposeOptions::default())?;
    let masked = decompose(&image, &palette, &weights, &opts)?;
    let right = |s: &softseg::layers::LayerStack| {
        (0..w * h).filter(|p| p % w >= w / 2).map(|p| s.alphas().get(0, p) as f64).sum::<f64>()
    };
    println!("layer 0 alpha mass in the right half: {:.2} -> {:.2}", right(&plain), right(&masked));
    println!("max |Σα − 1| after masking {:.2e}", masked.alphas().max_sum_deviation());
    Ok(())
}
