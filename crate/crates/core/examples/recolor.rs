//! Swaps one palette color and recomposites, keeping the layer's residues.
//!
//! cargo run --release --example recolor -- [layers_dir] [layer] [#rrggbb] [out.png]

use softseg::io::{load_layers, parse_hex, save_png};
use softseg::layers::{compose, recolor, LayerStack};
use softseg::palette::Palette;
use softseg::layers::AlphaStack;
use softseg::raster::Image;

fn demo_stack() -> softseg::Result<LayerStack> {
    let (w, h) = (64, 48);
    let labels: Vec<usize> = (0..w * h).map(|p| usize::from(p % w >= w / 2)).collect();
    let alphas = AlphaStack::one_hot(2, w, h, &labels)?;
    let palette = Palette::manual(vec![[0.8, 0.2, 0.2], [0.2, 0.3, 0.8]])?;
    let colors = (0..2).flat_map(|i| vec![palette.colors()[i]; w * h]).collect();
    LayerStack::new(palette, alphas, colors)
}

fn main() -> softseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let stack = match args.next() {
        Some(dir) => load_layers(dir)?.0,
        None => demo_stack()?,
    };
    let layer = args.next().map_or(0, |s| s.parse().expect("layer must be an integer"));
    let color = args
        .next()
        .map_or([0.1, 0.7, 0.3], |s| parse_hex(&s).expect("color must be #rrggbb"));
    let out = args.next().unwrap_or_else(|| "recolored.png".into());

    let same = recolor(&stack, layer, stack.palette().colors()[layer])?;
    println!("identity recolor max change {:.2e}", same.max_abs_diff(&compose(&stack))?);
    let edited: Image = recolor(&stack, layer, color)?;
    save_png(&edited, &out)?;
    println!("wrote {out}");
    Ok(())
}
