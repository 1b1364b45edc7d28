//! Alpha and residue predictors.

mod unet;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::AlphaStack;
use crate::palette::Palette;
use crate::raster::{Image, Rgb};
use crate::tensor::{Activation, Tensor};

pub use unet::{Block, UNet, UNetCache, UNetGrads, BLOCK_NAMES, SIZE_MULTIPLE};

/// Largest tolerated deviation of a pixel's alpha sum from 1 at the residue
/// predictor's input.
pub const RESIDUE_ALPHA_TOL: f32 = 1e-3;

/// Largest f32 below 1.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// Predicts `K` raw alpha maps from an image and `K` palette planes.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaPredictor {
    pub net: UNet,
}

impl AlphaPredictor {
    pub fn new(k: usize, rng: &mut ChaCha8Rng) -> Self {
        AlphaPredictor {
            net: UNet::new(3 + 3 * k, k, Activation::Sigmoid, rng),
        }
    }

    pub fn k(&self) -> usize {
        self.net.out_channels()
    }
}

/// Predicts `3K` color residues from the image, palette planes and
/// normalized alphas.
#[derive(Clone, Debug, PartialEq)]
pub struct ResiduePredictor {
    pub net: UNet,
}

impl ResiduePredictor {
    pub fn new(k: usize, rng: &mut ChaCha8Rng) -> Self {
        ResiduePredictor {
            net: UNet::new(3 + 4 * k, 3 * k, Activation::Tanh, rng),
        }
    }

    pub fn k(&self) -> usize {
        self.net.out_channels() / 3
    }
}

/// Both networks for one palette size.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub alpha: AlphaPredictor,
    pub residue: ResiduePredictor,
}

impl ModelWeights {
    /// Freshly initialized networks.
    pub fn new(k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > crate::palette::MAX_PALETTE_SIZE {
            return Err(Error::InvalidArgument(format!("unsupported palette size {k}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = AlphaPredictor::new(k, &mut rng);
        let residue = ResiduePredictor::new(k, &mut rng);
        Ok(ModelWeights { alpha, residue })
    }

    pub fn k(&self) -> usize {
        self.alpha.k()
    }

    /// Every stored tensor, names prefixed with `alpha.` or `residue.`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .alpha
            .net
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("alpha.{n}"), t))
            .collect();
        out.extend(
            self.residue
                .net
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("residue.{n}"), t)),
        );
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .alpha
            .net
            .named_tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("alpha.{n}"), t))
            .collect();
        out.extend(
            self.residue
                .net
                .named_tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("residue.{n}"), t)),
        );
        out
    }

    /// Trainable tensor names, alpha network first.
    pub fn parameter_names(&self) -> Vec<String> {
        let a = self.alpha.net.parameter_names().into_iter().map(|n| format!("alpha.{n}"));
        let r = self.residue.net.parameter_names().into_iter().map(|n| format!("residue.{n}"));
        a.chain(r).collect()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.alpha.net.parameters();
        p.extend(self.residue.net.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.alpha.net.parameters_mut();
        p.extend(self.residue.net.parameters_mut());
        p
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    fn check_palette(&self, palette: &Palette) -> Result<()> {
        if palette.len() != self.k() {
            return Err(Error::PaletteSize {
                expected: self.k(),
                got: palette.len(),
            });
        }
        Ok(())
    }
}

fn fill_planes(data: &mut [f32], item: usize, channels: usize, hw: usize, mut f: impl FnMut(usize, &mut [f32])) {
    for c in 0..channels {
        let start = (item * channels + c) * hw;
        f(c, &mut data[start..start + hw]);
    }
}

/// Alpha network input for a batch: RGB followed by three constant planes
/// per palette color.
pub fn alpha_input(images: &[&Image], palettes: &[&Palette]) -> Result<Tensor> {
    let (w, h) = batch_dims(images, palettes)?;
    let k = palettes[0].len();
    let channels = 3 + 3 * k;
    let hw = w * h;
    let mut data = vec![0.0f32; images.len() * channels * hw];
    for (b, (img, pal)) in images.iter().zip(palettes).enumerate() {
        fill_planes(&mut data, b, channels, hw, |c, plane| {
            if c < 3 {
                for (d, p) in plane.iter_mut().zip(img.pixels()) {
                    *d = p[c];
                }
            } else {
                plane.fill(pal.colors()[(c - 3) / 3][(c - 3) % 3]);
            }
        });
    }
    Tensor::from_vec(&[images.len(), channels, h, w], data)
}

/// Residue network input: RGB followed by `(p_i, α_i)` blocks of four planes.
pub fn residue_input(images: &[&Image], palettes: &[&Palette], alphas: &Tensor) -> Result<Tensor> {
    let (w, h) = batch_dims(images, palettes)?;
    let k = palettes[0].len();
    if alphas.shape() != [images.len(), k, h, w] {
        return Err(Error::dim(
            "residue_input",
            format!("alphas {:?} for {} images of {w}×{h}, K={k}", alphas.shape(), images.len()),
        ));
    }
    let channels = 3 + 4 * k;
    let hw = w * h;
    let mut data = vec![0.0f32; images.len() * channels * hw];
    for (b, (img, pal)) in images.iter().zip(palettes).enumerate() {
        fill_planes(&mut data, b, channels, hw, |c, plane| {
            if c < 3 {
                for (d, p) in plane.iter_mut().zip(img.pixels()) {
                    *d = p[c];
                }
            } else {
                let (i, j) = ((c - 3) / 4, (c - 3) % 4);
                if j < 3 {
                    plane.fill(pal.colors()[i][j]);
                } else {
                    plane.copy_from_slice(alphas.plane(b, i));
                }
            }
        });
    }
    Tensor::from_vec(&[images.len(), channels, h, w], data)
}

fn batch_dims(images: &[&Image], palettes: &[&Palette]) -> Result<(usize, usize)> {
    let first = images.first().ok_or_else(|| Error::dim("batch", "no images"))?;
    if images.len() != palettes.len() {
        return Err(Error::dim("batch", format!("{} images, {} palettes", images.len(), palettes.len())));
    }
    let dims = (first.width(), first.height());
    let k = palettes[0].len();
    for (img, pal) in images.iter().zip(palettes) {
        if (img.width(), img.height()) != dims || pal.len() != k {
            return Err(Error::dim("batch", "images and palettes must share size and K"));
        }
    }
    Ok(dims)
}

/// Pads to a multiple of 8 by reflection if needed.
fn padded(image: &Image) -> Image {
    if image.width().is_multiple_of(SIZE_MULTIPLE) && image.height().is_multiple_of(SIZE_MULTIPLE) {
        return image.clone();
    }
    warn!(
        "image size {}×{} is not a multiple of {SIZE_MULTIPLE}; reflect-padding and cropping",
        image.width(),
        image.height()
    );
    image.reflect_pad_to_multiple(SIZE_MULTIPLE)
}

fn crop_planes(t: &Tensor, w: usize, h: usize) -> Result<Vec<f32>> {
    let (_, c, ph, pw) = t.dims4()?;
    let mut out = Vec::with_capacity(c * w * h);
    for ch in 0..c {
        let plane = t.plane(0, ch);
        for y in 0..h.min(ph) {
            out.extend_from_slice(&plane[y * pw..y * pw + w]);
        }
    }
    Ok(out)
}

/// Raw (unnormalized) alpha maps in `(0,1)`.
pub fn predict_alpha(image: &Image, palette: &Palette, weights: &ModelWeights) -> Result<AlphaStack> {
    weights.check_palette(palette)?;
    let (w, h) = (image.width(), image.height());
    let input = alpha_input(&[&padded(image)], &[palette])?;
    let out = weights.alpha.net.forward(&input)?;
    let data = crop_planes(&out, w, h)?
        .into_iter()
        .map(|v| v.clamp(f32::MIN_POSITIVE, BELOW_ONE))
        .collect();
    AlphaStack::new(weights.k(), w, h, data, false)
}

/// Residues `r_i`, one per layer and pixel in layer-major order, each
/// channel in `(−1,1)`.
pub fn predict_residues(
    image: &Image,
    palette: &Palette,
    alphas: &AlphaStack,
    weights: &ModelWeights,
) -> Result<Vec<Rgb>> {
    weights.check_palette(palette)?;
    if alphas.k() != palette.len() || (alphas.width(), alphas.height()) != (image.width(), image.height()) {
        return Err(Error::dim("predict_residues", "alpha stack does not match image and palette"));
    }
    alphas.check_normalized(RESIDUE_ALPHA_TOL)?;
    let (w, h) = (image.width(), image.height());
    let k = palette.len();
    let pad = padded(image);
    let (pw, ph) = (pad.width(), pad.height());
    let mut alpha_planes = Vec::with_capacity(k * pw * ph);
    for i in 0..k {
        let plane = alphas.plane(i);
        for y in 0..ph {
            for x in 0..pw {
                alpha_planes.push(plane[reflect(y, h) * w + reflect(x, w)]);
            }
        }
    }
    let alpha_t = Tensor::from_vec(&[1, k, ph, pw], alpha_planes)?;
    let input = residue_input(&[&pad], &[palette], &alpha_t)?;
    let out = weights.residue.net.forward(&input)?;
    let planes = crop_planes(&out, w, h)?;
    let n = w * h;
    let lim = |v: f32| v.clamp(-BELOW_ONE, BELOW_ONE);
    Ok((0..k * n)
        .map(|idx| {
            let (i, p) = (idx / n, idx % n);
            [0, 1, 2].map(|c| lim(planes[(3 * i + c) * n + p]))
        })
        .collect())
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Layer colors `u_i = clip(p_i + r_i, 0, 1)` in the layout of
/// [`predict_residues`].
pub fn apply_residues(palette: &Palette, residues: &[Rgb]) -> Vec<Rgb> {
    let k = palette.len();
    let n = residues.len() / k.max(1);
    residues
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let p = palette.colors()[idx / n];
            [0, 1, 2].map(|c| (p[c] + r[c]).clamp(0.0, 1.0))
        })
        .collect()
}
