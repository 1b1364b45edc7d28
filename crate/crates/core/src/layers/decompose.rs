use serde::{Deserialize, Serialize};

use super::{apply_mask, guided_filter, normalize_alpha, AlphaStack, GuidedFilterParams, LayerStack, MaskMode};
use crate::error::Result;
use crate::models::{apply_residues, predict_alpha, predict_residues, ModelWeights};
use crate::palette::Palette;
use crate::raster::Image;

/// An alpha edit applied before color estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMask {
    pub layer: usize,
    /// One value per pixel in `[0,1]`.
    pub mask: Vec<f32>,
    pub mode: MaskMode,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecomposeOptions {
    /// Smooths every normalized alpha layer with the image as guide.
    pub guided_filter: Option<GuidedFilterParams>,
    pub masks: Vec<LayerMask>,
}

#[derive(Serialize, Deserialize)]
struct OptionsRecord {
    guided_filter: Option<GuidedFilterParams>,
    masks: Vec<(usize, MaskMode)>,
}

impl DecomposeOptions {
    /// Summary for manifests; mask contents are left out.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(OptionsRecord {
            guided_filter: self.guided_filter,
            masks: self.masks.iter().map(|m| (m.layer, m.mode)).collect(),
        })
        .expect("plain data serializes")
    }
}

/// Normalized alphas after the optional filter and mask edits.
pub fn process_alphas(raw: &AlphaStack, guide: &Image, opts: &DecomposeOptions) -> Result<AlphaStack> {
    let mut alphas = normalize_alpha(raw);
    if let Some(params) = opts.guided_filter {
        let mut data = Vec::with_capacity(alphas.data().len());
        for i in 0..alphas.k() {
            data.extend(guided_filter(alphas.plane(i), guide, params)?);
        }
        let filtered = AlphaStack::new(alphas.k(), alphas.width(), alphas.height(), data, false)?;
        alphas = normalize_alpha(&filtered);
    }
    for m in &opts.masks {
        alphas = apply_mask(&alphas, m.layer, &m.mask, m.mode)?;
    }
    Ok(alphas)
}

/// Full inference: alphas, optional edits, then layer colors estimated
/// from the edited alphas.
pub fn decompose(image: &Image, palette: &Palette, weights: &ModelWeights, opts: &DecomposeOptions) -> Result<LayerStack> {
    let raw = predict_alpha(image, palette, weights)?;
    let alphas = process_alphas(&raw, image, opts)?;
    let residues = predict_residues(image, palette, &alphas, weights)?;
    LayerStack::new(palette.clone(), alphas, apply_residues(palette, &residues))
}

/// Frame-by-frame decomposition with one fixed palette.
pub fn decompose_frames(
    frames: &[Image],
    palette: &Palette,
    weights: &ModelWeights,
    opts: &DecomposeOptions,
) -> Result<Vec<LayerStack>> {
    frames.iter().map(|f| decompose(f, palette, weights, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{compose, ALPHA_SUM_TOL};

    fn scene(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let t = x as f32 / w as f32;
            [t, 1.0 - t, if y < h / 2 { 0.2 } else { 0.8 }]
        })
    }

    fn palette3() -> Palette {
        Palette::manual(vec![[1.0, 0.0, 0.2], [0.0, 1.0, 0.8], [0.5, 0.5, 0.5]]).unwrap()
    }

    #[test]
    fn output_satisfies_layer_constraints() {
        let w = ModelWeights::new(3, 1).unwrap();
        for opts in [
            DecomposeOptions::default(),
            DecomposeOptions {
                guided_filter: Some(GuidedFilterParams::default()),
                masks: vec![],
            },
        ] {
            let s = decompose(&scene(20, 13), &palette3(), &w, &opts).unwrap();
            assert_eq!((s.k(), s.width(), s.height()), (3, 20, 13));
            assert!(s.alphas().max_sum_deviation() <= ALPHA_SUM_TOL);
            assert!(s.alphas().data().iter().all(|a| (0.0..=1.0).contains(a)));
            assert!(s.colors().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            assert!(compose(&s).pixels().iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn masks_reach_the_color_stage() {
        let w = ModelWeights::new(3, 2).unwrap();
        let img = scene(16, 16);
        let opts = DecomposeOptions {
            guided_filter: None,
            masks: vec![LayerMask {
                layer: 1,
                mask: vec![0.0; 256],
                mode: MaskMode::Multiply,
            }],
        };
        let s = decompose(&img, &palette3(), &w, &opts).unwrap();
        assert!(s.alphas().plane(1).iter().all(|&a| a == 0.0));
        let plain = decompose(&img, &palette3(), &w, &DecomposeOptions::default()).unwrap();
        assert_ne!(s.colors(), plain.colors());
    }

    #[test]
    fn frames_match_single_calls() {
        let w = ModelWeights::new(3, 3).unwrap();
        let frames = vec![scene(16, 8), scene(16, 8).quantized()];
        let opts = DecomposeOptions::default();
        let all = decompose_frames(&frames, &palette3(), &w, &opts).unwrap();
        for (f, s) in frames.iter().zip(&all) {
            assert_eq!(&decompose(f, &palette3(), &w, &opts).unwrap(), s);
        }
    }

    #[test]
    fn palette_size_must_match() {
        let w = ModelWeights::new(2, 3).unwrap();
        assert!(matches!(
            decompose(&scene(8, 8), &palette3(), &w, &DecomposeOptions::default()),
            Err(crate::Error::PaletteSize { expected: 2, got: 3 })
        ));
    }
}
