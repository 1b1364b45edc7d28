//! Reconstruction and layer-quality scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{compose, AlphaStack, LayerStack};
use crate::raster::Image;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Pixels at or below this alpha do not count toward a layer's color variance.
pub const SUPPORT_THRESHOLD: f32 = 0.01;

fn same_shape(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::dim(
            op,
            format!("{}×{} vs {}×{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

/// Mean squared difference over pixels and channels.
pub fn reconstruction_mse(original: &Image, reconstructed: &Image) -> Result<f64> {
    same_shape("reconstruction_mse", original, reconstructed)?;
    let sum: f64 = original
        .pixels()
        .iter()
        .zip(reconstructed.pixels())
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] as f64 - b[c] as f64).powi(2)))
        .sum();
    Ok(sum / (3 * original.num_pixels()) as f64)
}

/// PSNR in dB for peak 1, capped for exact matches.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(original: &Image, reconstructed: &Image) -> Result<f64> {
    Ok(psnr_from_mse(reconstruction_mse(original, reconstructed)?))
}

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = kernel.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|j| kernel[j] * horiz[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM of the channel-mean grayscale images.
pub fn ssim(original: &Image, reconstructed: &Image) -> Result<f64> {
    same_shape("ssim", original, reconstructed)?;
    let (w, h) = (original.width(), original.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {w}×{h}"
        )));
    }
    let x: Vec<f64> = original.gray().into_iter().map(f64::from).collect();
    let y: Vec<f64> = reconstructed.gray().into_iter().map(f64::from).collect();
    let kernel = gaussian_kernel();
    let f = |v: &[f64]| filter_valid(v, w, h, &kernel);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = f(&x);
    let my = f(&y);
    let sxx = f(&prod(&x, &x));
    let syy = f(&prod(&y, &y));
    let sxy = f(&prod(&x, &y));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Mean over pixels of `Σα / Σα² − 1`, evaluated as `(Σα)² / Σα² − 1` so
/// the bounds hold exactly even when alphas carry rounding error.
pub fn sparsity_score(alphas: &AlphaStack) -> f64 {
    let n = alphas.num_pixels();
    let total: f64 = (0..n)
        .map(|p| {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for i in 0..alphas.k() {
                let a = alphas.get(i, p) as f64;
                s += a;
                s2 += a * a;
            }
            if s2 > 0.0 {
                s * s / s2 - 1.0
            } else {
                0.0
            }
        })
        .sum();
    total / n as f64
}

/// Per-layer RGB variance over the layer's support, summed over channels
/// and averaged over layers.
pub fn color_variance(stack: &LayerStack) -> f64 {
    let k = stack.k();
    let total: f64 = (0..k)
        .map(|i| {
            let alphas = stack.alphas().plane(i);
            let colors = stack.layer_colors(i);
            let mut count = 0usize;
            let mut sum = [0.0f64; 3];
            let mut sq = [0.0f64; 3];
            for (a, u) in alphas.iter().zip(colors) {
                if *a > SUPPORT_THRESHOLD {
                    count += 1;
                    for c in 0..3 {
                        sum[c] += u[c] as f64;
                        sq[c] += (u[c] as f64).powi(2);
                    }
                }
            }
            if count == 0 {
                return 0.0;
            }
            let n = count as f64;
            (0..3).map(|c| (sq[c] / n - (sum[c] / n).powi(2)).max(0.0)).sum::<f64>()
        })
        .sum();
    total / k as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub name: String,
    pub reconstruction_mse: f64,
    pub psnr: f64,
    /// Absent when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub sparsity: f64,
    pub color_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reconstruction_mse: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub sparsity: f64,
    pub color_variance: f64,
    pub per_image: Vec<ImageScores>,
}

/// Scores one decomposition against the image it came from.
pub fn score(name: impl Into<String>, original: &Image, stack: &LayerStack) -> Result<ImageScores> {
    let recon = compose(stack);
    let mse = reconstruction_mse(original, &recon)?;
    let ssim = match ssim(original, &recon) {
        Ok(v) => Some(v),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ImageScores {
        name: name.into(),
        reconstruction_mse: mse,
        psnr: psnr_from_mse(mse),
        ssim,
        sparsity: sparsity_score(stack.alphas()),
        color_variance: color_variance(stack),
    })
}

impl EvalReport {
    /// Averages of the per-image scores.
    pub fn from_scores(per_image: Vec<ImageScores>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::InvalidArgument("nothing to evaluate".into()));
        }
        let n = per_image.len() as f64;
        let mean = |f: fn(&ImageScores) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        let ssim = per_image
            .iter()
            .map(|s| s.ssim)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Ok(EvalReport {
            reconstruction_mse: mean(|s| s.reconstruction_mse),
            psnr: mean(|s| s.psnr),
            ssim,
            sparsity: mean(|s| s.sparsity),
            color_variance: mean(|s| s.color_variance),
            per_image,
        })
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>10} {:>8} {:>8} {:>9} {:>10}\n", "image", "mse", "psnr", "ssim", "sparsity", "color_var");
        let fmt_ssim = |s: Option<f64>| s.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut row = |name: &str, mse: f64, psnr: f64, ssim: Option<f64>, sp: f64, cv: f64| {
            out.push_str(&format!(
                "{name:<24} {mse:>10.6} {psnr:>8.2} {:>8} {sp:>9.4} {cv:>10.6}\n",
                fmt_ssim(ssim)
            ));
        };
        for s in &self.per_image {
            row(&s.name, s.reconstruction_mse, s.psnr, s.ssim, s.sparsity, s.color_variance);
        }
        if self.per_image.len() > 1 {
            row("mean", self.reconstruction_mse, self.psnr, self.ssim, self.sparsity, self.color_variance);
        }
        out
    }
}

pub fn evaluate(original: &Image, stack: &LayerStack) -> Result<EvalReport> {
    EvalReport::from_scores(vec![score("image", original, stack)?])
}
