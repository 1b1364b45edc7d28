//! Per-pixel energy minimization, the slow reference decomposition.
//!
//! cargo run --release --example unmix

use softseg::layers::compose;
use softseg::metrics::{reconstruction_mse, sparsity_score};
use softseg::palette::extract_palette;
use softseg::trainer::synthetic::{scene, SceneParams};
use softseg::unmixer::{grid_search_alphas, models_from_palette, unmix_image, unmix_pixel, UnmixConfig};

fn main() -> softseg::Result<()> {
    let params = SceneParams {
        width: 32,
        height: 32,
        colors: 3,
        ..Default::default()
    };
    let image = scene(&params, 4);
    let palette = extract_palette(&image, 3, 0)?;
    let models = models_from_palette(&palette);

    let out = unmix_image(&image, &models, &UnmixConfig::default())?;
    println!(
        "image: mse {:.6}, sparsity {:.3}, mean energy {:.4}, {} of {} pixels unconverged",
        reconstruction_mse(&image, &compose(&out.layers))?,
        sparsity_score(out.layers.alphas()),
        out.summary.mean_energy,
        out.summary.not_converged,
        out.summary.pixels
    );

    // With colors pinned to the model means, compare against a simplex grid.
    let pinned = UnmixConfig {
        pin_colors: true,
        ..Default::default()
    };
    let c = image.pixels()[image.num_pixels() / 2];
    let r = unmix_pixel(c, &models, &pinned)?;
    let (grid_alphas, grid) = grid_search_alphas(c, &models, &pinned, 0.01);
    println!("pixel {c:?}");
    println!("  solver {:?} objective {:.5}", r.alphas, r.objective);
    println!("  grid   {grid_alphas:?} objective {grid:.5}");
    Ok(())
}
