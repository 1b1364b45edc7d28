use crate::error::{Error, Result};

/// An RGB triple with channels in `[0, 1]`.
pub type Rgb = [f32; 3];

/// An `H×W` RGB raster stored row-major, one triple per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image must be nonempty, got {width}×{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::dim(
                "image",
                format!("{width}×{height} needs {} pixels, got {}", width * height, pixels.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Image {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Rgb) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Channel-planar copy: all red values, then green, then blue.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.pixels.len();
        let mut out = vec![0.0; 3 * n];
        for (i, p) in self.pixels.iter().enumerate() {
            out[i] = p[0];
            out[n + i] = p[1];
            out[2 * n + i] = p[2];
        }
        out
    }

    pub fn from_planar(width: usize, height: usize, planar: &[f32]) -> Result<Self> {
        let n = width * height;
        if planar.len() != 3 * n {
            return Err(Error::dim("from_planar", format!("{} values for {n} pixels", planar.len())));
        }
        Image::new(
            width,
            height,
            (0..n)
                .map(|i| [planar[i], planar[n + i], planar[2 * n + i]])
                .collect(),
        )
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {width}×{height} at ({x0},{y0}) exceeds {}×{}",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Resamples with a triangle (bilinear) filter.
    pub fn resized(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("cannot resize to {width}×{height}")));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let flat: Vec<f32> = self.pixels.iter().flatten().copied().collect();
        let buf = image::Rgb32FImage::from_raw(self.width as u32, self.height as u32, flat)
            .expect("buffer size matches");
        let out = image::imageops::resize(&buf, width as u32, height as u32, image::imageops::FilterType::Triangle);
        let pixels = out.pixels().map(|p| p.0.map(|v| v.clamp(0.0, 1.0))).collect();
        Image::new(width, height, pixels)
    }

    /// Scales so the shorter side becomes `side`, keeping the aspect ratio.
    pub fn resized_shorter_side(&self, side: usize) -> Result<Image> {
        let (w, h) = (self.width, self.height);
        let (nw, nh) = if w <= h {
            (side, ((h * side) as f64 / w as f64).round().max(side as f64) as usize)
        } else {
            (((w * side) as f64 / h as f64).round().max(side as f64) as usize, side)
        };
        self.resized(nw, nh)
    }

    /// Mirror-pads right and bottom edges up to the next multiple of `m`.
    pub fn reflect_pad_to_multiple(&self, m: usize) -> Image {
        let w = self.width.div_ceil(m) * m;
        let h = self.height.div_ceil(m) * m;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let reflect = |i: usize, n: usize| -> usize {
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
        };
        Image::from_fn(w, h, |x, y| {
            self.get(reflect(x, self.width), reflect(y, self.height))
        })
    }

    /// Per-pixel mean of the three channels.
    pub fn gray(&self) -> Vec<f32> {
        self.pixels
            .iter()
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }

    /// Rounds every channel to the nearest multiple of 1/255.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|v| to_u8(v) as f32 / 255.0))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f32> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::dim(
                "max_abs_diff",
                format!(
                    "{}×{} vs {}×{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f32::max))
    }
}

/// Quantizes a `[0,1]` value to 8 bits, rounding half away from zero.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorter_side_resize_keeps_aspect() {
        let img = Image::from_fn(40, 20, |x, _| [x as f32 / 39.0, 0.5, 0.5]);
        let r = img.resized_shorter_side(10).unwrap();
        assert_eq!((r.width(), r.height()), (20, 10));
        assert_eq!(img.resized_shorter_side(20).unwrap(), img);
        assert!(r.pixels().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn planar_roundtrip() {
        let img = Image::from_fn(3, 2, |x, y| [x as f32 / 3.0, y as f32 / 2.0, 0.5]);
        let back = Image::from_planar(3, 2, &img.to_planar()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn reflect_padding_mirrors_edges() {
        let img = Image::from_fn(5, 3, |x, y| [x as f32, y as f32, 0.0]);
        let padded = img.reflect_pad_to_multiple(4);
        assert_eq!((padded.width(), padded.height()), (8, 4));
        assert_eq!(padded.get(4, 0), img.get(4, 0));
        assert_eq!(padded.get(5, 0), img.get(3, 0));
        assert_eq!(padded.get(7, 0), img.get(1, 0));
        assert_eq!(padded.get(0, 3), img.get(0, 1));
        assert_eq!(padded.crop(0, 0, 5, 3).unwrap(), img);
    }

    #[test]
    fn quantization_rounds_to_nearest_level() {
        assert_eq!(to_u8(0.6 / 255.0), 1);
        assert_eq!(to_u8(0.4 / 255.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(-0.2), 0);
        assert_eq!(to_u8(1.7), 255);
    }

    #[test]
    fn empty_image_is_rejected() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(2, 2, vec![[0.0; 3]; 3]).is_err());
    }
}
