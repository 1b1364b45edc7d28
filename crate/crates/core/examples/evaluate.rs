//! Reconstruction and layer-quality metrics for a decomposition.
//!
//! cargo run --release --example evaluate -- [image.png layers_dir]

use softseg::io::{load_image, load_layers};
use softseg::metrics::{evaluate, score, EvalReport};
use softseg::palette::extract_palette;
use softseg::trainer::synthetic::{scenes, SceneParams};
use softseg::unmixer::{models_from_palette, unmix_image, UnmixConfig};

fn main() -> softseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [image, layers] = args.as_slice() {
        let (stack, _) = load_layers(layers)?;
        print!("{}", evaluate(&load_image(image)?, &stack)?.table());
        return Ok(());
    }
    let params = SceneParams {
        width: 24,
        height: 24,
        colors: 3,
        ..Default::default()
    };
    let mut per_image = Vec::new();
    for (i, img) in scenes(&params, 3, 7).into_iter().enumerate() {
        let models = models_from_palette(&extract_palette(&img, 3, 0)?);
        let out = unmix_image(&img, &models, &UnmixConfig::default())?;
        per_image.push(score(format!("scene {i}"), &img, &out.layers)?);
    }
    print!("{}", EvalReport::from_scores(per_image)?.table());
    Ok(())
}
