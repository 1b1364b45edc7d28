//! Edge-aware smoothing of alpha layers with the image as guide.
//!
//! cargo run --release --example guided_filter

use softseg::layers::{box_mean, guided_filter, GuidedFilterParams};
use softseg::raster::Image;

fn main() -> softseg::Result<()> {
    let (w, h) = (48, 48);
    // A hard vertical edge in the guide and a noisy alpha that mostly follows it.
    let guide = Image::from_fn(w, h, |x, _| if x < w / 2 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] });
    let alpha: Vec<f32> = (0..w * h)
        .map(|p| {
            let base = if p % w < w / 2 { 1.0 } else { 0.0 };
            let noise = ((p * 7919) % 101) as f32 / 101.0 - 0.5;
            (base + 0.3 * noise).clamp(0.0, 1.0)
        })
        .collect();
    let row = h / 2 * w;
    let show = |name: &str, v: &[f32]| {
        let cells: Vec<String> = (w / 2 - 4..w / 2 + 4).map(|x| format!("{:.2}", v[row + x])).collect();
        println!("{name:>8}: {}", cells.join(" "));
    };
    show("input", &alpha);
    show("box r=4", &box_mean(&alpha, w, h, 4)?);
    for radius in [2, 4, 8] {
        let out = guided_filter(&alpha, &guide, GuidedFilterParams { radius, eps: 1e-4 })?;
        show(&format!("guided {radius}"), &out);
    }
    Ok(())
}
