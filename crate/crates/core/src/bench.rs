//! Inference timing over a range of image sizes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{decompose, DecomposeOptions};
use crate::models::ModelWeights;
use crate::palette::extract_palette;
use crate::trainer::synthetic::{scene, SceneParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub pixels: usize,
    /// Fastest of the repeats.
    pub seconds: f64,
    pub megapixels_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRatio {
    pub from: usize,
    pub to: usize,
    pub pixel_ratio: f64,
    pub time_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub k: usize,
    pub rows: Vec<BenchRow>,
    /// Consecutive size pairs.
    pub ratios: Vec<BenchRatio>,
}

impl BenchReport {
    pub fn ratio(&self, from: usize, to: usize) -> Option<f64> {
        let t = |s| self.rows.iter().find(|r| r.size == s).map(|r| r.seconds);
        Some(t(to)? / t(from)?)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:>6} {:>10} {:>10} {:>8}\n", "size", "pixels", "seconds", "MP/s");
        for r in &self.rows {
            out.push_str(&format!(
                "{:>6} {:>10} {:>10.4} {:>8.3}\n",
                r.size, r.pixels, r.seconds, r.megapixels_per_second
            ));
        }
        for r in &self.ratios {
            out.push_str(&format!(
                "{}² → {}²: {:.1}× pixels, {:.2}× time\n",
                r.from, r.to, r.pixel_ratio, r.time_ratio
            ));
        }
        out
    }
}

/// Times alpha and color estimation on square synthetic images. Image
/// generation and palette extraction are outside the timed region.
pub fn bench_decompose(weights: &ModelWeights, sizes: &[usize], repeats: usize) -> Result<BenchReport> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidArgument("sizes must be positive".into()));
    }
    let k = weights.k();
    let mut rows = Vec::new();
    for &size in sizes {
        let params = SceneParams {
            width: size,
            height: size,
            colors: k,
            ..Default::default()
        };
        let img = scene(&params, size as u64);
        let palette = extract_palette(&img, k, 0)?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            let stack = decompose(&img, &palette, weights, &DecomposeOptions::default())?;
            best = best.min(t.elapsed().as_secs_f64());
            drop(stack);
        }
        let pixels = size * size;
        rows.push(BenchRow {
            size,
            pixels,
            seconds: best,
            megapixels_per_second: pixels as f64 / 1e6 / best,
        });
    }
    let ratios = rows
        .windows(2)
        .map(|w| BenchRatio {
            from: w[0].size,
            to: w[1].size,
            pixel_ratio: w[1].pixels as f64 / w[0].pixels as f64,
            time_ratio: w[1].seconds / w[0].seconds,
        })
        .collect();
    Ok(BenchReport { k, rows, ratios })
}
