//! K-means palette of an image.
//!
//! cargo run --release --example palette -- [image.png] [k]

use softseg::io::{format_palette, load_image, to_hex};
use softseg::palette::kmeans_palette;
use softseg::trainer::synthetic::{scene, SceneParams};

fn main() -> softseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let image = match args.next() {
        Some(path) => load_image(path)?,
        None => scene(&SceneParams::default(), 3),
    };
    let k = args.next().map_or(5, |s| s.parse().expect("k must be an integer"));
    let result = kmeans_palette(&image, k, 0)?;
    for c in &result.centers {
        println!("{}", to_hex(*c));
    }
    let palette = softseg::palette::Palette::manual(result.centers)?;
    eprint!("{}", format_palette(&palette));
    Ok(())
}
