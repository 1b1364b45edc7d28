//! The three training losses, on layer stacks and on batched tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AlphaStack, LayerStack};
use crate::palette::Palette;
use crate::raster::{Image, Rgb};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_a: f32,
    pub lambda_d: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_a: 1.0,
            lambda_d: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub reconstruction: f64,
    pub alpha: f64,
    pub distance: f64,
}

impl LossValues {
    pub fn combine(reconstruction: f64, alpha: f64, distance: f64, w: LossWeights) -> Self {
        LossValues {
            total: reconstruction + w.lambda_a as f64 * alpha + w.lambda_d as f64 * distance,
            reconstruction,
            alpha,
            distance,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.reconstruction.is_finite() && self.alpha.is_finite() && self.distance.is_finite()
    }
}

fn check_stack(alphas: &AlphaStack, image: &Image) -> Result<()> {
    if (alphas.width(), alphas.height()) != (image.width(), image.height()) {
        return Err(Error::dim(
            "loss",
            format!(
                "alphas are {}×{}, image is {}×{}",
                alphas.width(),
                alphas.height(),
                image.width(),
                image.height()
            ),
        ));
    }
    Ok(())
}

fn mean_abs_composite(alphas: &AlphaStack, image: &Image, color: impl Fn(usize, usize) -> Rgb) -> f64 {
    let mut total = 0.0f64;
    for (p, c) in image.pixels().iter().enumerate() {
        let mut acc = [0.0f64; 3];
        for i in 0..alphas.k() {
            let a = alphas.get(i, p) as f64;
            let u = color(i, p);
            for ch in 0..3 {
                acc[ch] += a * u[ch] as f64;
            }
        }
        total += (0..3).map(|ch| (acc[ch] - c[ch] as f64).abs()).sum::<f64>();
    }
    total / (3 * image.num_pixels()) as f64
}

/// Mean absolute error between `Σ α_i u_i` and the image.
pub fn loss_reconstruction(layers: &LayerStack, image: &Image) -> Result<f64> {
    check_stack(layers.alphas(), image)?;
    Ok(mean_abs_composite(layers.alphas(), image, |i, p| layers.color(i, p)))
}

/// Mean absolute error between `Σ α_i p_i` and the image.
pub fn loss_alpha_regularization(alphas: &AlphaStack, palette: &Palette, image: &Image) -> Result<f64> {
    check_stack(alphas, image)?;
    if palette.len() != alphas.k() {
        return Err(Error::PaletteSize {
            expected: alphas.k(),
            got: palette.len(),
        });
    }
    Ok(mean_abs_composite(alphas, image, |i, _| palette.colors()[i]))
}

/// Mean over pixels of `Σ α_i ‖p_i − u_i‖₂`.
pub fn loss_distance(layers: &LayerStack) -> f64 {
    let n = layers.num_pixels();
    let mut total = 0.0f64;
    for p in 0..n {
        for i in 0..layers.k() {
            let r = layers.residue(i, p);
            let norm = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            total += layers.alphas().get(i, p) as f64 * norm;
        }
    }
    total / n as f64
}

/// `L_r + λ_a L_a + λ_d L_d` for one decomposed image.
pub fn loss_total(layers: &LayerStack, image: &Image, weights: LossWeights) -> Result<LossValues> {
    Ok(LossValues::combine(
        loss_reconstruction(layers, image)?,
        loss_alpha_regularization(layers.alphas(), layers.palette(), image)?,
        loss_distance(layers),
        weights,
    ))
}

/// Losses of a batch with gradients for the alphas and layer colors.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub values: LossValues,
    /// `∂L_total/∂α`, shape `N×K×H×W`.
    pub grad_alpha: Tensor,
    /// `∂L_total/∂u`, shape `N×3K×H×W`.
    pub grad_colors: Tensor,
    /// Signs of every absolute-value argument, for locating kinks.
    pub regime: Vec<bool>,
}

/// Batched losses on tensors.
///
/// `alphas` is `N×K×H×W`, `colors` is `N×3K×H×W` with layer `i` in
/// channels `3i..3i+3`, and `images` is `N×3×H×W`.
pub fn batch_loss(
    alphas: &Tensor,
    colors: &Tensor,
    palettes: &[&Palette],
    images: &Tensor,
    weights: LossWeights,
) -> Result<BatchLoss> {
    let (n, k, h, w) = alphas.dims4()?;
    if colors.shape() != [n, 3 * k, h, w] || images.shape() != [n, 3, h, w] || palettes.len() != n {
        return Err(Error::dim(
            "batch_loss",
            format!(
                "alphas {:?}, colors {:?}, images {:?}, {} palettes",
                alphas.shape(),
                colors.shape(),
                images.shape(),
                palettes.len()
            ),
        ));
    }
    if palettes.iter().any(|p| p.len() != k) {
        return Err(Error::dim("batch_loss", "palette size differs from the alpha channel count"));
    }
    let hw = h * w;
    let abs_scale = 1.0 / (n * 3 * hw) as f64;
    let dist_scale = 1.0 / (n * hw) as f64;
    let la = weights.lambda_a as f64;
    let ld = weights.lambda_d as f64;
    let mut grad_alpha = Tensor::zeros(alphas.shape());
    let mut grad_colors = Tensor::zeros(colors.shape());
    let mut regime = Vec::with_capacity(n * hw * 6);
    let (mut lr_sum, mut la_sum, mut ld_sum) = (0.0f64, 0.0f64, 0.0f64);
    let a = alphas.data();
    let u = colors.data();
    let c = images.data();
    let ga = grad_alpha.data_mut();
    let mut gu_buf = vec![0.0f32; colors.len()];
    for b in 0..n {
        let pal = palettes[b].colors();
        let ab = b * k * hw;
        let ub = b * 3 * k * hw;
        let cb = b * 3 * hw;
        for p in 0..hw {
            let mut comp_u = [0.0f64; 3];
            let mut comp_p = [0.0f64; 3];
            for i in 0..k {
                let ai = a[ab + i * hw + p] as f64;
                for ch in 0..3 {
                    comp_u[ch] += ai * u[ub + (3 * i + ch) * hw + p] as f64;
                    comp_p[ch] += ai * pal[i][ch] as f64;
                }
            }
            let mut sign_u = [0.0f64; 3];
            let mut sign_p = [0.0f64; 3];
            for ch in 0..3 {
                let target = c[cb + ch * hw + p] as f64;
                let ru = comp_u[ch] - target;
                let rp = comp_p[ch] - target;
                lr_sum += ru.abs();
                la_sum += rp.abs();
                sign_u[ch] = ru.signum() * (ru != 0.0) as u8 as f64;
                sign_p[ch] = rp.signum() * (rp != 0.0) as u8 as f64;
                regime.push(ru > 0.0);
                regime.push(rp > 0.0);
            }
            for i in 0..k {
                let ai = a[ab + i * hw + p] as f64;
                let mut d = [0.0f64; 3];
                for ch in 0..3 {
                    d[ch] = u[ub + (3 * i + ch) * hw + p] as f64 - pal[i][ch] as f64;
                }
                let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                ld_sum += ai * norm;
                let mut g = ld * dist_scale * norm;
                for ch in 0..3 {
                    let ui = u[ub + (3 * i + ch) * hw + p] as f64;
                    g += abs_scale * (sign_u[ch] * ui + la * sign_p[ch] * pal[i][ch] as f64);
                    let gd = if norm > 0.0 { ld * dist_scale * ai * d[ch] / norm } else { 0.0 };
                    gu_buf[ub + (3 * i + ch) * hw + p] = (abs_scale * sign_u[ch] * ai + gd) as f32;
                }
                ga[ab + i * hw + p] = g as f32;
            }
        }
    }
    grad_colors.data_mut().copy_from_slice(&gu_buf);
    Ok(BatchLoss {
        values: LossValues::combine(lr_sum * abs_scale, la_sum * abs_scale, ld_sum * dist_scale, weights),
        grad_alpha,
        grad_colors,
        regime,
    })
}
