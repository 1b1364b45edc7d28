//! Alpha processing, compositing and layer editing.

mod decompose;
mod guided;
mod stack;

use crate::error::{Error, Result};
use crate::palette::Palette;
use crate::raster::{Image, Rgb};

pub use decompose::{decompose, decompose_frames, process_alphas, DecomposeOptions, LayerMask};
pub use guided::{box_mean, guided_filter, GuidedFilterParams};
pub use stack::{AlphaStack, LayerStack, ALPHA_SUM_TOL};

/// Added to the per-pixel alpha sum before dividing.
pub const NORMALIZE_EPS: f32 = 1e-8;

/// Divides every pixel's alphas by their sum so they add up to one.
///
/// Pixels whose alphas are all zero become uniform `1/K`.
pub fn normalize_alpha(raw: &AlphaStack) -> AlphaStack {
    let k = raw.k();
    let n = raw.num_pixels();
    let mut out = raw.clone();
    let mut buf = vec![0.0f64; k];
    for p in 0..n {
        let sum: f64 = (0..k).map(|i| raw.get(i, p) as f64).sum();
        for (i, b) in buf.iter_mut().enumerate() {
            *b = raw.get(i, p) as f64 / (sum + NORMALIZE_EPS as f64);
        }
        let total: f64 = buf.iter().sum();
        for (i, b) in buf.iter().enumerate() {
            out.plane_mut(i)[p] = if total > 0.0 {
                (b / total) as f32
            } else {
                1.0 / k as f32
            };
        }
    }
    out.set_normalized(true);
    out
}

/// Alpha-add composite: `Σ_i α_i u_i` at every pixel.
pub fn compose(layers: &LayerStack) -> Image {
    let n = layers.num_pixels();
    let alphas = layers.alphas();
    let pixels = (0..n)
        .map(|p| {
            let mut acc = [0.0f64; 3];
            for i in 0..layers.k() {
                let a = alphas.get(i, p) as f64;
                let u = layers.color(i, p);
                for c in 0..3 {
                    acc[c] += a * u[c] as f64;
                }
            }
            acc.map(|v| v as f32)
        })
        .collect();
    Image::new(layers.width(), layers.height(), pixels).expect("layer stack is nonempty")
}

/// Composite from palette colors alone, `Σ_i α_i p_i`.
pub fn compose_palette(alphas: &AlphaStack, palette: &Palette) -> Result<Image> {
    if palette.len() != alphas.k() {
        return Err(Error::PaletteSize {
            expected: alphas.k(),
            got: palette.len(),
        });
    }
    let pixels = (0..alphas.num_pixels())
        .map(|p| {
            let mut acc = [0.0f64; 3];
            for (i, pc) in palette.colors().iter().enumerate() {
                let a = alphas.get(i, p) as f64;
                for c in 0..3 {
                    acc[c] += a * pc[c] as f64;
                }
            }
            acc.map(|v| v as f32)
        })
        .collect();
    Image::new(alphas.width(), alphas.height(), pixels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// `α_j ← α_j · mask`
    Multiply,
    /// `α_j ← mask`
    Set,
}

/// Edits one layer's alpha with a mask, then renormalizes across layers.
///
/// Where every alpha of a pixel ends up zero, the other layers share the
/// pixel uniformly so the edited layer stays at zero.
pub fn apply_mask(stack: &AlphaStack, layer: usize, mask: &[f32], mode: MaskMode) -> Result<AlphaStack> {
    let k = stack.k();
    if layer >= k {
        return Err(Error::LayerIndex { index: layer, k });
    }
    let n = stack.num_pixels();
    if mask.len() != n {
        return Err(Error::dim("apply_mask", format!("mask has {} values for {n} pixels", mask.len())));
    }
    if let Some(v) = mask.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(Error::InvalidArgument(format!("mask value {v} is outside [0,1]")));
    }
    let mut out = stack.clone();
    for (p, &m) in mask.iter().enumerate() {
        let a = &mut out.plane_mut(layer)[p];
        *a = match mode {
            MaskMode::Multiply => *a * m,
            MaskMode::Set => m,
        };
    }
    for p in 0..n {
        let sum: f64 = (0..k).map(|i| out.get(i, p) as f64).sum();
        if sum > 0.0 {
            for i in 0..k {
                let v = out.get(i, p) as f64 / sum;
                out.plane_mut(i)[p] = v as f32;
            }
        } else {
            let others = if k > 1 { k - 1 } else { 1 };
            for i in 0..k {
                out.plane_mut(i)[p] = if i == layer && k > 1 {
                    0.0
                } else {
                    1.0 / others as f32
                };
            }
        }
    }
    out.set_normalized(true);
    Ok(out)
}

/// Merges layers that share an identical palette color.
///
/// The merged alpha is the group sum and the merged color is the
/// alpha-weighted mean of the group's colors (plain mean where the group's
/// alpha is zero), so the composite is unchanged. Layers keep the order of
/// each group's first member.
pub fn merge_duplicate_layers(stack: &LayerStack) -> Result<LayerStack> {
    let palette = stack.palette().colors();
    let mut groups: Vec<(Rgb, Vec<usize>)> = Vec::new();
    for (i, c) in palette.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| g == c) {
            Some((_, members)) => members.push(i),
            None => groups.push((*c, vec![i])),
        }
    }
    if groups.len() == palette.len() {
        return Ok(stack.clone());
    }
    let n = stack.num_pixels();
    let k = groups.len();
    let mut alphas = vec![0.0f32; k * n];
    let mut colors = vec![[0.0f32; 3]; k * n];
    for (g, (_, members)) in groups.iter().enumerate() {
        for p in 0..n {
            let sum: f64 = members.iter().map(|&i| stack.alphas().get(i, p) as f64).sum();
            let mut acc = [0.0f64; 3];
            for &i in members {
                let w = if sum > 0.0 {
                    stack.alphas().get(i, p) as f64 / sum
                } else {
                    1.0 / members.len() as f64
                };
                let u = stack.color(i, p);
                for c in 0..3 {
                    acc[c] += w * u[c] as f64;
                }
            }
            alphas[g * n + p] = (sum as f32).min(1.0);
            colors[g * n + p] = acc.map(|v| (v as f32).clamp(0.0, 1.0));
        }
    }
    let merged_palette = Palette::new(
        groups.iter().map(|(c, _)| *c).collect(),
        stack.palette().source(),
    )?;
    let alpha_stack = AlphaStack::new(
        k,
        stack.width(),
        stack.height(),
        alphas,
        stack.alphas().is_normalized(),
    )?;
    LayerStack::new(merged_palette, alpha_stack, colors)
}

/// Replaces one layer's palette color, keeping its residues:
/// `u' = clip(new_color + (u − p))`.
pub fn recolor_layers(stack: &LayerStack, layer: usize, new_color: Rgb) -> Result<LayerStack> {
    let k = stack.k();
    if layer >= k {
        return Err(Error::LayerIndex { index: layer, k });
    }
    let palette = stack.palette().with_color(layer, new_color)?;
    let n = stack.num_pixels();
    let mut colors = stack.colors().to_vec();
    for p in 0..n {
        let r = stack.residue(layer, p);
        colors[layer * n + p] = [
            (new_color[0] + r[0]).clamp(0.0, 1.0),
            (new_color[1] + r[1]).clamp(0.0, 1.0),
            (new_color[2] + r[2]).clamp(0.0, 1.0),
        ];
    }
    LayerStack::new(palette, stack.alphas().clone(), colors)
}

/// Recolors one layer and returns the new composite.
pub fn recolor(stack: &LayerStack, layer: usize, new_color: Rgb) -> Result<Image> {
    Ok(compose(&recolor_layers(stack, layer, new_color)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(k: usize, w: usize, h: usize, rng: &mut ChaCha8Rng) -> LayerStack {
        let raw: Vec<f32> = (0..k * w * h).map(|_| rng.random::<f32>()).collect();
        let alphas = normalize_alpha(&AlphaStack::new(k, w, h, raw, false).unwrap());
        let palette = Palette::manual((0..k).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap();
        let colors = (0..k * w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        LayerStack::new(palette, alphas, colors).unwrap()
    }

    #[test]
    fn proportional_scaling() {
        let raw = AlphaStack::new(2, 1, 1, vec![0.2, 0.2], false).unwrap();
        let n = normalize_alpha(&raw);
        assert_eq!(n.pixel(0), vec![0.5, 0.5]);
        assert!(n.is_normalized());
    }

    #[test]
    fn zero_pixel_becomes_uniform() {
        let raw = AlphaStack::new(4, 1, 1, vec![0.0; 4], false).unwrap();
        assert_eq!(normalize_alpha(&raw).pixel(0), vec![0.25; 4]);
    }

    #[test]
    fn normalized_stack_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_stack(5, 6, 4, &mut rng);
        let again = normalize_alpha(s.alphas());
        for (a, b) in again.data().iter().zip(s.alphas().data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn compose_with_oracle_colors_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_stack(4, 5, 5, &mut rng);
        let img = Image::from_fn(5, 5, |x, y| [x as f32 / 5.0, y as f32 / 5.0, 0.3]);
        let colors: Vec<Rgb> = (0..4).flat_map(|_| img.pixels().iter().copied()).collect();
        let oracle = LayerStack::new(s.palette().clone(), s.alphas().clone(), colors).unwrap();
        assert!(compose(&oracle).max_abs_diff(&img).unwrap() < 1e-6);
    }

    #[test]
    fn one_hot_composite_is_active_layer() {
        let alphas = AlphaStack::one_hot(2, 2, 1, &[1, 0]).unwrap();
        let palette = Palette::manual(vec![[0.0; 3], [1.0; 3]]).unwrap();
        let colors = vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9], [0.2, 0.2, 0.2]];
        let s = LayerStack::new(palette, alphas, colors).unwrap();
        let c = compose(&s);
        assert_eq!(c.pixels(), &[[0.7, 0.8, 0.9], [0.4, 0.5, 0.6]]);
    }

    #[test]
    fn mask_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_stack(3, 4, 4, &mut rng);
        let same = apply_mask(s.alphas(), 1, &[1.0; 16], MaskMode::Multiply).unwrap();
        for (a, b) in same.data().iter().zip(s.alphas().data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let zeroed = apply_mask(s.alphas(), 1, &[0.0; 16], MaskMode::Multiply).unwrap();
        assert!(zeroed.plane(1).iter().all(|&v| v == 0.0));
        assert!(zeroed.max_sum_deviation() < 1e-6);
        for p in 0..16 {
            let rest = s.alphas().get(0, p) + s.alphas().get(2, p);
            assert!((zeroed.get(0, p) - s.alphas().get(0, p) / rest).abs() < 1e-5);
        }
    }

    #[test]
    fn half_mask_on_equal_pair() {
        let s = AlphaStack::new(2, 1, 1, vec![0.5, 0.5], true).unwrap();
        let m = apply_mask(&s, 0, &[0.5], MaskMode::Multiply).unwrap();
        assert!((m.get(0, 0) - 1.0 / 3.0).abs() < 1e-6);
        assert!((m.get(1, 0) - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn zeroing_a_one_hot_pixel_keeps_the_layer_empty() {
        let s = AlphaStack::one_hot(3, 1, 1, &[0]).unwrap();
        let m = apply_mask(&s, 0, &[0.0], MaskMode::Set).unwrap();
        assert_eq!(m.pixel(0), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn mask_errors() {
        let s = AlphaStack::uniform(2, 2, 2);
        assert!(matches!(apply_mask(&s, 2, &[1.0; 4], MaskMode::Set), Err(Error::LayerIndex { .. })));
        assert!(apply_mask(&s, 0, &[1.0; 3], MaskMode::Set).is_err());
        assert!(apply_mask(&s, 0, &[2.0; 4], MaskMode::Set).is_err());
    }

    #[test]
    fn merge_without_duplicates_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_stack(3, 3, 3, &mut rng);
        assert_eq!(merge_duplicate_layers(&s).unwrap(), s);
    }

    #[test]
    fn merging_two_identical_layers() {
        let palette = Palette::manual(vec![[0.5; 3], [0.5; 3], [0.1; 3]]).unwrap();
        let alphas = AlphaStack::new(3, 1, 1, vec![0.25, 0.25, 0.5], true).unwrap();
        let colors = vec![[0.4, 0.5, 0.6], [0.4, 0.5, 0.6], [0.1, 0.1, 0.1]];
        let s = LayerStack::new(palette, alphas, colors).unwrap();
        let m = merge_duplicate_layers(&s).unwrap();
        assert_eq!(m.k(), 2);
        assert_eq!(m.alphas().pixel(0), vec![0.5, 0.5]);
        let u = m.color(0, 0);
        for (a, b) in u.iter().zip([0.4, 0.5, 0.6]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn recolor_identity_and_zero_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_stack(3, 4, 4, &mut rng);
        let before = compose(&s);
        let old = s.palette().colors()[1];
        assert!(recolor(&s, 1, old).unwrap().max_abs_diff(&before).unwrap() < 1e-6);

        let mut data = s.alphas().data().to_vec();
        let n = 16;
        for p in 0..n {
            let a2 = data[2 * n + p];
            data[2 * n + p] = 0.0;
            data[p] += a2;
        }
        let alphas = AlphaStack::new(3, 4, 4, data, true).unwrap();
        let zeroed = LayerStack::new(s.palette().clone(), alphas, s.colors().to_vec()).unwrap();
        let base = compose(&zeroed);
        let changed = recolor(&zeroed, 2, [0.9, 0.1, 0.4]).unwrap();
        assert!(changed.max_abs_diff(&base).unwrap() < 1e-6);
    }

    #[test]
    fn recolor_one_hot_layer_with_zero_residues() {
        let palette = Palette::manual(vec![[0.2, 0.3, 0.4], [0.9, 0.9, 0.9]]).unwrap();
        let alphas = AlphaStack::one_hot(2, 2, 1, &[0, 1]).unwrap();
        let colors = vec![[0.2, 0.3, 0.4]; 2]
            .into_iter()
            .chain(vec![[0.9, 0.9, 0.9]; 2])
            .collect();
        let s = LayerStack::new(palette, alphas, colors).unwrap();
        let g = [0.0, 1.0, 0.5];
        let out = recolor(&s, 0, g).unwrap();
        assert_eq!(out.pixels()[0], g);
        assert_eq!(out.pixels()[1], [0.9, 0.9, 0.9]);
        assert!(matches!(recolor(&s, 2, g), Err(Error::LayerIndex { .. })));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent_and_scale_invariant(
            raw in prop::collection::vec(0.01f32..1.0, 3 * 8),
            scale in 0.05f32..1.0,
        ) {
            let stack = AlphaStack::new(3, 4, 2, raw.clone(), false).unwrap();
            let once = normalize_alpha(&stack);
            prop_assert!(once.max_sum_deviation() <= 1e-6);
            let twice = normalize_alpha(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
            let scaled = AlphaStack::new(3, 4, 2, raw.iter().map(|v| v * scale).collect(), false).unwrap();
            for (a, b) in normalize_alpha(&scaled).data().iter().zip(once.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
