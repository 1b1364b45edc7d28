//! Decomposes an image into K layers and writes them as PNGs.
//!
//! cargo run --release --example decompose -- [image.png] [weights.sseg] [out_dir]
//!
//! Without a weights file the networks are freshly initialized, which
//! shows the data flow but not a useful segmentation.

use softseg::io::{load_image, load_weights, save_layers, weights_hash, ExportOptions};
use softseg::layers::{compose, decompose, DecomposeOptions};
use softseg::metrics::{reconstruction_mse, sparsity_score};
use softseg::models::ModelWeights;
use softseg::palette::extract_palette;
use softseg::trainer::synthetic::{scene, SceneParams};

fn main() -> softseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let image = match args.next() {
        Some(path) => load_image(path)?,
        None => scene(&SceneParams::default(), 1),
    };
    let weights = match args.next() {
        Some(path) => load_weights(path)?,
        None => ModelWeights::new(4, 0)?,
    };
    let out = args.next().unwrap_or_else(|| "layers_out".into());

    let palette = extract_palette(&image, weights.k(), 0)?;
    let opts = DecomposeOptions::default();
    let stack = decompose(&image, &palette, &weights, &opts)?;
    println!(
        "{} layers, mse {:.5}, sparsity {:.3}",
        stack.k(),
        reconstruction_mse(&image, &compose(&stack))?,
        sparsity_score(stack.alphas())
    );
    let export = ExportOptions {
        options: opts.to_json(),
        weights_hash: Some(weights_hash(&weights)),
        ..Default::default()
    };
    let dir = save_layers(&stack, &out, &export)?;
    println!("wrote {}", dir.display());
    Ok(())
}
