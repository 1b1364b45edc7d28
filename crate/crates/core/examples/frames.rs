//! One palette applied to a sequence of frames.
//!
//! cargo run --release --example frames -- [weights.sseg]

use softseg::io::load_weights;
use softseg::layers::{compose, decompose_frames, DecomposeOptions, GuidedFilterParams};
use softseg::metrics::{reconstruction_mse, sparsity_score};
use softseg::models::ModelWeights;
use softseg::palette::extract_palette;
use softseg::raster::Image;

fn main() -> softseg::Result<()> {
    let weights = match std::env::args().nth(1) {
        Some(path) => load_weights(path)?,
        None => ModelWeights::new(3, 0)?,
    };
    // A disc sliding across a two-tone background.
    let frames: Vec<Image> = (0..6)
        .map(|t| {
            let cx = 12.0 + 6.0 * t as f32;
            Image::from_fn(64, 48, |x, y| {
                let d = ((x as f32 - cx).powi(2) + (y as f32 - 24.0).powi(2)).sqrt();
                if d < 9.0 {
                    [0.95, 0.8, 0.1]
                } else if y < 24 {
                    [0.2, 0.4, 0.8]
                } else {
                    [0.3, 0.6, 0.3]
                }
            })
        })
        .collect();
    let palette = extract_palette(&frames[0], weights.k(), 0)?;
    let opts = DecomposeOptions {
        guided_filter: Some(GuidedFilterParams::default()),
        ..Default::default()
    };
    let stacks = decompose_frames(&frames, &palette, &weights, &opts)?;
    for (i, (f, s)) in frames.iter().zip(&stacks).enumerate() {
        println!(
            "frame {i}: mse {:.5}, sparsity {:.3}",
            reconstruction_mse(f, &compose(s))?,
            sparsity_score(s.alphas())
        );
    }
    Ok(())
}
