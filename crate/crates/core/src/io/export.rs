use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{encode_rgba16, encode_rgba8, load_rgba, RgbaPlanes};
use crate::error::{Error, Result};
use crate::layers::{compose, AlphaStack, LayerStack, ALPHA_SUM_TOL};
use crate::palette::{Palette, PaletteSource};
use crate::raster::Rgb;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn layer_file_name(i: usize) -> String {
    format!("layer_{i:02}.png")
}

/// Sidecar written next to the layer PNGs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub palette: Vec<Rgb>,
    pub k: usize,
    /// `[width, height]`.
    pub image_size: [usize; 2],
    #[serde(default)]
    pub options: serde_json::Value,
    #[serde(default)]
    pub weights_hash: Option<String>,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u8,
}

fn default_bit_depth() -> u8 {
    8
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExportOptions {
    /// Store 16 bits per sample instead of 8.
    pub sixteen_bit: bool,
    /// Copied into the manifest as-is.
    pub options: serde_json::Value,
    pub weights_hash: Option<String>,
}

/// Integer levels summing exactly to `scale`, by largest remainder.
fn quantize_alphas(alphas: &[f32], scale: u32) -> Vec<u32> {
    let sum: f64 = alphas.iter().map(|&a| a as f64).sum();
    let exact: Vec<f64> = alphas.iter().map(|&a| a as f64 / sum * scale as f64).collect();
    let mut levels: Vec<u32> = exact.iter().map(|v| v.floor() as u32).collect();
    let short = scale - levels.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..alphas.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &i in order.iter().take(short as usize) {
        levels[i] += 1;
    }
    levels
}

/// Quantized layer samples for one pixel. With unit-sum alphas the alpha
/// levels sum to `scale` exactly, and the color levels of the most opaque
/// layers absorb the remaining composite error, which keeps the reloaded
/// composite within half a level of the original.
fn quantize_pixel(alphas: &[f32], colors: &[Rgb], target: Rgb, normalized: bool, scale: u32) -> Vec<[u32; 4]> {
    let s = scale as f32;
    let level = |v: f32| (v.clamp(0.0, 1.0) * s).round() as u32;
    let a_levels: Vec<u32> = if normalized && alphas.iter().any(|&a| a > 0.0) {
        quantize_alphas(alphas, scale)
    } else {
        alphas.iter().map(|&a| level(a)).collect()
    };
    let mut out: Vec<[u32; 4]> = colors
        .iter()
        .zip(&a_levels)
        .map(|(c, &a)| [level(c[0]), level(c[1]), level(c[2]), a])
        .collect();
    if !normalized {
        return out;
    }
    let mut order: Vec<usize> = (0..out.len()).filter(|&i| a_levels[i] > 0).collect();
    order.sort_by(|&a, &b| a_levels[b].cmp(&a_levels[a]));
    for ch in 0..3 {
        let goal = target[ch] as f64 * (scale as f64) * (scale as f64);
        for &j in &order {
            let others: f64 = out
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, q)| q[3] as f64 * q[ch] as f64)
                .sum();
            let a = a_levels[j] as f64;
            let current = others + a * out[j][ch] as f64;
            if (current - goal).abs() <= a / 2.0 {
                break;
            }
            out[j][ch] = ((goal - others) / a).round().clamp(0.0, scale as f64) as u32;
            if (others + a * out[j][ch] as f64 - goal).abs() <= a / 2.0 {
                break;
            }
        }
    }
    out
}

/// Encoded layer PNGs plus their manifest, as written by [`save_layers`].
pub fn encode_layers(stack: &LayerStack, opts: &ExportOptions) -> Result<(Vec<Vec<u8>>, Manifest)> {
    let (k, n) = (stack.k(), stack.num_pixels());
    let scale = if opts.sixteen_bit { 65535 } else { 255 };
    let composite = compose(stack);
    let normalized = stack.alphas().max_sum_deviation() <= ALPHA_SUM_TOL * 10.0;
    let mut planes: Vec<Vec<u32>> = vec![Vec::with_capacity(4 * n); k];
    let mut alphas = vec![0.0f32; k];
    let mut colors = vec![[0.0f32; 3]; k];
    for p in 0..n {
        for i in 0..k {
            alphas[i] = stack.alphas().get(i, p);
            colors[i] = stack.color(i, p);
        }
        let q = quantize_pixel(&alphas, &colors, composite.pixels()[p], normalized, scale);
        for (plane, px) in planes.iter_mut().zip(q) {
            plane.extend_from_slice(&px);
        }
    }
    let (w, h) = (stack.width(), stack.height());
    let pngs = planes
        .into_iter()
        .map(|plane| {
            if opts.sixteen_bit {
                encode_rgba16(w, h, plane.into_iter().map(|v| v as u16).collect())
            } else {
                encode_rgba8(w, h, plane.into_iter().map(|v| v as u8).collect())
            }
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        palette: stack.palette().colors().to_vec(),
        k,
        image_size: [w, h],
        options: opts.options.clone(),
        weights_hash: opts.weights_hash.clone(),
        bit_depth: if opts.sixteen_bit { 16 } else { 8 },
    };
    Ok((pngs, manifest))
}

/// Writes `layer_00.png …` (RGBA) and `manifest.json` into `dir`.
pub fn save_layers(stack: &LayerStack, dir: impl AsRef<Path>, opts: &ExportOptions) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (pngs, manifest) = encode_layers(stack, opts)?;
    for (i, bytes) in pngs.iter().enumerate() {
        let path = dir.join(layer_file_name(i));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Rebuilds a stack from decoded RGBA layers.
pub fn stack_from_planes(planes: Vec<RgbaPlanes>, palette: Palette) -> Result<LayerStack> {
    let k = planes.len();
    if palette.len() != k {
        return Err(Error::PaletteSize {
            expected: k,
            got: palette.len(),
        });
    }
    let (w, h) = (planes[0].width, planes[0].height);
    let n = w * h;
    let mut alpha = Vec::with_capacity(k * n);
    let mut colors = Vec::with_capacity(k * n);
    for (i, layer) in planes.into_iter().enumerate() {
        if (layer.width, layer.height) != (w, h) {
            return Err(Error::dim(
                "layers",
                format!("layer {i} is {}×{}, layer 0 is {w}×{h}", layer.width, layer.height),
            ));
        }
        for s in layer.samples {
            colors.push([s[0], s[1], s[2]]);
            alpha.push(s[3]);
        }
    }
    let mut alphas = AlphaStack::new(k, w, h, alpha, false)?;
    if alphas.max_sum_deviation() <= ALPHA_SUM_TOL * 10.0 {
        alphas.set_normalized(true);
    }
    LayerStack::new(palette, alphas, colors)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a directory written by [`save_layers`].
pub fn load_layers(dir: impl AsRef<Path>) -> Result<(LayerStack, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let [w, h] = manifest.image_size;
    let mut planes = Vec::with_capacity(manifest.k);
    for i in 0..manifest.k {
        let path = dir.join(layer_file_name(i));
        let layer = load_rgba(&path)?;
        if (layer.width, layer.height) != (w, h) {
            return Err(Error::Image {
                path,
                message: format!("size {}×{} does not match the manifest {w}×{h}", layer.width, layer.height),
            });
        }
        planes.push(layer);
    }
    let palette = Palette::new(manifest.palette.clone(), PaletteSource::Manual)?;
    Ok((stack_from_planes(planes, palette)?, manifest))
}
