use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb as PxRgb, Rgba as PxRgba};
use log::warn;

use crate::error::{Error, Result};
use crate::raster::{to_u8, Image};

fn convert(decoded: DynamicImage, origin: &str) -> Result<Image> {
    if decoded.color().has_alpha() {
        warn!("{origin}: alpha channel ignored");
    }
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = if decoded.color().bytes_per_pixel() / decoded.color().channel_count() > 1 {
        decoded
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|v| v as f32 / 65535.0))
            .collect()
    } else {
        decoded
            .to_rgb8()
            .pixels()
            .map(|p| p.0.map(|v| v as f32 / 255.0))
            .collect()
    };
    Image::new(w, h, pixels)
}

/// Decodes a PNG or JPEG file into `[0,1]` RGB. Grayscale is replicated to
/// three channels; an alpha channel is dropped with a warning.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let fail = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| fail(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| fail(e.to_string()))?;
    let decoded = reader.decode().map_err(|e| fail(e.to_string()))?;
    convert(decoded, &path.display().to_string())
}

/// Decodes an in-memory PNG or JPEG.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory(bytes).map_err(|e| Error::Image {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    convert(decoded, "<memory>")
}

fn rgb8(image: &Image) -> ImageBuffer<PxRgb<u8>, Vec<u8>> {
    let data = image.pixels().iter().flat_map(|p| p.map(to_u8)).collect();
    ImageBuffer::from_raw(image.width() as u32, image.height() as u32, data).expect("buffer size matches")
}

fn write_err(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes an 8-bit RGB PNG.
pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    rgb8(image)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| write_err(path, e))
}

/// Encodes an 8-bit RGB PNG in memory.
pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    rgb8(image)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| write_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

/// Encodes an RGBA PNG from 8-bit samples.
pub fn encode_rgba8(width: usize, height: usize, samples: Vec<u8>) -> Result<Vec<u8>> {
    let buf: ImageBuffer<PxRgba<u8>, Vec<u8>> = ImageBuffer::from_raw(width as u32, height as u32, samples)
        .ok_or_else(|| Error::dim("encode_rgba8", "sample count does not match size"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| write_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

/// Encodes an RGBA PNG from 16-bit samples.
pub fn encode_rgba16(width: usize, height: usize, samples: Vec<u16>) -> Result<Vec<u8>> {
    let buf: ImageBuffer<PxRgba<u16>, Vec<u16>> = ImageBuffer::from_raw(width as u32, height as u32, samples)
        .ok_or_else(|| Error::dim("encode_rgba16", "sample count does not match size"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| write_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

/// RGBA samples in `[0,1]` plus the bit depth they were stored with.
pub struct RgbaPlanes {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<[f32; 4]>,
    pub bit_depth: u8,
}

fn rgba_planes(decoded: DynamicImage) -> RgbaPlanes {
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let sixteen = decoded.color().bytes_per_pixel() / decoded.color().channel_count() > 1;
    let samples = if sixteen {
        decoded.to_rgba16().pixels().map(|p| p.0.map(|v| v as f32 / 65535.0)).collect()
    } else {
        decoded.to_rgba8().pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect()
    };
    RgbaPlanes {
        width,
        height,
        samples,
        bit_depth: if sixteen { 16 } else { 8 },
    }
}

pub fn load_rgba(path: impl AsRef<Path>) -> Result<RgbaPlanes> {
    let path = path.as_ref();
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .with_guessed_format()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .decode()
        .map_err(|e| write_err(path, e))?;
    Ok(rgba_planes(decoded))
}

pub fn decode_rgba(bytes: &[u8]) -> Result<RgbaPlanes> {
    let decoded = image::load_from_memory(bytes).map_err(|e| write_err(Path::new("<memory>"), e))?;
    Ok(rgba_planes(decoded))
}

/// Width and height from the image header without decoding pixels.
pub fn image_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let (w, h) = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?
        .into_dimensions()
        .map_err(|e| write_err(Path::new("<memory>"), e))?;
    Ok((w as usize, h as usize))
}
