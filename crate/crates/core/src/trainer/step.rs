//! Joint forward and backward pass through both predictors.

use crate::error::{Error, Result};
use crate::layers::NORMALIZE_EPS;
use crate::models::{alpha_input, residue_input, ModelWeights, UNetCache};
use crate::palette::Palette;
use crate::raster::Image;
use crate::tensor::{BnMode, Tensor};

use super::losses::{batch_loss, LossValues, LossWeights};

/// Crops and their palettes.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Vec<Image>,
    pub palettes: Vec<Palette>,
}

impl Batch {
    pub fn new(images: Vec<Image>, palettes: Vec<Palette>) -> Result<Self> {
        if images.is_empty() || images.len() != palettes.len() {
            return Err(Error::dim(
                "batch",
                format!("{} images and {} palettes", images.len(), palettes.len()),
            ));
        }
        Ok(Batch { images, palettes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn refs(&self) -> (Vec<&Image>, Vec<&Palette>) {
        (self.images.iter().collect(), self.palettes.iter().collect())
    }

    fn image_tensor(&self) -> Result<Tensor> {
        let first = &self.images[0];
        let mut data = Vec::with_capacity(self.len() * 3 * first.num_pixels());
        for img in &self.images {
            data.extend(img.to_planar());
        }
        Tensor::from_vec(&[self.len(), 3, first.height(), first.width()], data)
    }
}

/// Everything one training step produces.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub losses: LossValues,
    /// Gradients in [`ModelWeights::parameters`] order.
    pub grads: Vec<Tensor>,
    pub alpha_cache: UNetCache,
    pub residue_cache: UNetCache,
    /// Branch fingerprint (ReLU signs, clip cases, loss signs).
    pub regime: Vec<bool>,
}

/// Forward pass without gradients; returns the losses and the branch
/// fingerprint.
pub fn evaluate_batch(weights: &ModelWeights, batch: &Batch, loss: LossWeights, mode: BnMode) -> Result<(LossValues, Vec<bool>)> {
    let f = forward(weights, batch, loss, mode)?;
    Ok((f.loss.values, f.regime))
}

struct Forward {
    alpha_cache: UNetCache,
    residue_cache: UNetCache,
    raw: Tensor,
    sums: Vec<f32>,
    alphas: Tensor,
    clip_mask: Vec<bool>,
    loss: super::losses::BatchLoss,
    regime: Vec<bool>,
}

fn forward(weights: &ModelWeights, batch: &Batch, loss: LossWeights, mode: BnMode) -> Result<Forward> {
    let k = weights.k();
    let (images, palettes) = batch.refs();
    let x_a = alpha_input(&images, &palettes)?;
    let (raw, alpha_cache) = weights.alpha.net.forward_train(&x_a, mode)?;
    let (n, _, h, w) = raw.dims4()?;
    let hw = h * w;
    let mut sums = vec![0.0f32; n * hw];
    let mut alphas = raw.clone();
    for b in 0..n {
        let s = &mut sums[b * hw..(b + 1) * hw];
        for i in 0..k {
            for (acc, v) in s.iter_mut().zip(raw.plane(b, i)) {
                *acc += v;
            }
        }
        for i in 0..k {
            for (a, sum) in alphas.plane_mut(b, i).iter_mut().zip(s.iter()) {
                *a /= sum + NORMALIZE_EPS;
            }
        }
    }
    let x_r = residue_input(&images, &palettes, &alphas)?;
    let (residues, residue_cache) = weights.residue.net.forward_train(&x_r, mode)?;
    let mut colors = residues;
    let mut clip_mask = vec![false; colors.len()];
    for b in 0..n {
        for i in 0..k {
            for ch in 0..3 {
                let base = palettes[b].colors()[i][ch];
                let start = ((b * 3 * k) + 3 * i + ch) * hw;
                for (j, v) in colors.plane_mut(b, 3 * i + ch).iter_mut().enumerate() {
                    let x = base + *v;
                    clip_mask[start + j] = x > 0.0 && x < 1.0;
                    *v = x.clamp(0.0, 1.0);
                }
            }
        }
    }
    let loss = batch_loss(&alphas, &colors, &palettes, &batch.image_tensor()?, loss)?;
    let mut regime = alpha_cache.relu_pattern();
    regime.extend(residue_cache.relu_pattern());
    regime.extend_from_slice(&clip_mask);
    regime.extend_from_slice(&loss.regime);
    Ok(Forward {
        alpha_cache,
        residue_cache,
        raw,
        sums,
        alphas,
        clip_mask,
        loss,
        regime,
    })
}

/// Losses and gradients of `L_total` with respect to every trainable tensor
/// of both networks. Gradients reach the alpha network directly through the
/// losses and indirectly through the residue network's alpha inputs.
pub fn forward_backward(weights: &ModelWeights, batch: &Batch, loss: LossWeights, mode: BnMode) -> Result<StepResult> {
    let k = weights.k();
    let f = forward(weights, batch, loss, mode)?;
    let (n, _, h, w) = f.alphas.dims4()?;
    let hw = h * w;

    let mut g_res = f.loss.grad_colors.clone();
    for (g, keep) in g_res.data_mut().iter_mut().zip(&f.clip_mask) {
        if !keep {
            *g = 0.0;
        }
    }
    let residue_grads = weights.residue.net.backward(&f.residue_cache, &g_res)?;

    let mut g_alpha = f.loss.grad_alpha.clone();
    for b in 0..n {
        for i in 0..k {
            let src = residue_grads.input.plane(b, 3 + 4 * i + 3);
            for (d, s) in g_alpha.plane_mut(b, i).iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    // α_i = a_i / (S + ε)  ⇒  ∂L/∂a_j = (∂L/∂α_j − Σ_i α_i ∂L/∂α_i) / (S + ε)
    let mut g_raw = Tensor::zeros(f.raw.shape());
    for b in 0..n {
        for p in 0..hw {
            let mut dot = 0.0f32;
            for i in 0..k {
                dot += f.alphas.plane(b, i)[p] * g_alpha.plane(b, i)[p];
            }
            let denom = f.sums[b * hw + p] + NORMALIZE_EPS;
            for i in 0..k {
                g_raw.plane_mut(b, i)[p] = (g_alpha.plane(b, i)[p] - dot) / denom;
            }
        }
    }
    let alpha_grads = weights.alpha.net.backward(&f.alpha_cache, &g_raw)?;
    let mut grads = alpha_grads.params;
    grads.extend(residue_grads.params);
    Ok(StepResult {
        losses: f.loss.values,
        grads,
        alpha_cache: f.alpha_cache,
        residue_cache: f.residue_cache,
        regime: f.regime,
    })
}
