//! Procedural scenes: a shaded background with a few soft-edged shapes in
//! a small set of base colors.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::save_png;
use crate::raster::{Image, Rgb};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Distinct base colors per scene.
    pub colors: usize,
    pub max_shapes: usize,
    pub noise_std: f32,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 64,
            height: 64,
            colors: 4,
            max_shapes: 5,
            noise_std: 0.02,
        }
    }
}

enum Shape {
    Disc { cx: f32, cy: f32, rx: f32, ry: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
}

impl Shape {
    /// Signed distance in pixels, negative inside.
    fn distance(&self, x: f32, y: f32) -> f32 {
        match *self {
            Shape::Disc { cx, cy, rx, ry } => {
                let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
                (d - 1.0) * rx.min(ry)
            }
            Shape::Rect { x0, y0, x1, y1 } => {
                let dx = (x0 - x).max(x - x1);
                let dy = (y0 - y).max(y - y1);
                dx.max(dy)
            }
        }
    }
}

fn mix(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// One random scene.
pub fn scene(params: &SceneParams, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width as f32, params.height as f32);
    let base: Vec<Rgb> = (0..params.colors.max(1))
        .map(|_| [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()])
        .collect();
    let bg = base[0];
    let bg_dir: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let bg_shade: f32 = rng.random_range(0.0..0.15);
    let shapes: Vec<(Shape, Rgb, f32)> = (0..rng.random_range(1..=params.max_shapes.max(1)))
        .map(|_| {
            let color = base[rng.random_range(0..base.len())];
            let shape = if rng.random_bool(0.5) {
                Shape::Disc {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    rx: rng.random_range(0.1..0.35) * w,
                    ry: rng.random_range(0.1..0.35) * h,
                }
            } else {
                let (x0, y0) = (rng.random_range(-0.1..0.7) * w, rng.random_range(-0.1..0.7) * h);
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(0.15..0.5) * w,
                    y1: y0 + rng.random_range(0.15..0.5) * h,
                }
            };
            (shape, color, rng.random_range(0.5..2.5))
        })
        .collect();
    let noise = Normal::new(0.0f32, params.noise_std.max(0.0)).expect("finite std");
    let mut pixels = Vec::with_capacity(params.width * params.height);
    for y in 0..params.height {
        for x in 0..params.width {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let t = ((fx / w - 0.5) * bg_dir.cos() + (fy / h - 0.5) * bg_dir.sin()) * bg_shade;
            let mut c = bg.map(|v| v * (1.0 - t) + t * 0.5);
            for (shape, color, softness) in &shapes {
                let d = shape.distance(fx, fy);
                let cover = (0.5 - d / (2.0 * softness)).clamp(0.0, 1.0);
                c = mix(c, *color, cover);
            }
            pixels.push(c.map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)));
        }
    }
    Image::new(params.width, params.height, pixels).expect("nonempty scene")
}

pub fn scenes(params: &SceneParams, count: usize, seed: u64) -> Vec<Image> {
    (0..count).map(|i| scene(params, seed.wrapping_add(i as u64))).collect()
}

/// Writes `count` scenes as `scene_0000.png …` into `dir`.
pub fn write_scenes(dir: impl AsRef<Path>, params: &SceneParams, count: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in scenes(params, count, seed).iter().enumerate() {
        save_png(img, dir.join(format!("scene_{i:04}.png")))?;
    }
    Ok(())
}
