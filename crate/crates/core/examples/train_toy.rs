//! Trains both networks on procedurally generated scenes.
//!
//! cargo run --release --example train_toy -- [steps] [out_dir]

use softseg::metrics::{color_variance, reconstruction_mse, sparsity_score};
use softseg::layers::{decompose, DecomposeOptions, compose};
use softseg::palette::extract_palette;
use softseg::trainer::synthetic::{scenes, SceneParams};
use softseg::trainer::{train_on, Dataset, TrainConfig};

fn main() -> softseg::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(2000, |s| s.parse().expect("steps must be an integer"));
    let out_dir = args.next().map(Into::into);
    let images = scenes(&SceneParams::default(), 100, 0);
    let data = Dataset::from_images(images, 64)?;
    let config = TrainConfig {
        k: 4,
        steps,
        out_dir,
        ..Default::default()
    };
    let every = (steps / 20).max(1);
    let out = train_on(&config, &data, |row| {
        if row.step % every == 0 {
            println!(
                "step {:5}  total {:.4}  r {:.4}  a {:.4}  d {:.4}  {:.0}s",
                row.step, row.loss_total, row.loss_r, row.loss_a, row.loss_d, row.seconds
            );
        }
    })?;
    let (first, last) = out.loss_trend(0.1);
    println!("initial {:.4}  first 10% {first:.4}  last 10% {last:.4}", out.log[0].loss_total);

    let (mut mse, mut sparsity, mut var) = (0.0, 0.0, 0.0);
    for img in data.images() {
        let palette = extract_palette(img, 4, 0)?;
        let stack = decompose(img, &palette, &out.weights, &DecomposeOptions::default())?;
        mse += reconstruction_mse(img, &compose(&stack))?;
        sparsity += sparsity_score(stack.alphas());
        var += color_variance(&stack);
    }
    let n = data.len() as f64;
    println!("train-set mse {:.5}  sparsity {:.3}  color variance {:.5}", mse / n, sparsity / n, var / n);
    Ok(())
}
