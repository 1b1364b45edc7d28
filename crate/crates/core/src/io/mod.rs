//! Files in and out: images, palettes, weights and exported layers.

mod export;
mod image;
mod palette_file;
mod weights;

pub use self::image::{
    decode_image, decode_rgba, encode_png, encode_rgba16, encode_rgba8, image_dimensions, load_image, load_rgba, save_png,
    RgbaPlanes,
};
pub use export::{
    encode_layers, layer_file_name, load_layers, read_manifest, save_layers, stack_from_planes, ExportOptions, Manifest,
    MANIFEST_NAME,
};
pub use palette_file::{format_palette, parse_hex, parse_palette, read_palette, to_hex, PaletteJson};
pub use weights::{
    decode_checkpoint, decode_weights, encode_checkpoint, encode_weights, load_checkpoint, load_weights,
    load_weights_for, save_checkpoint, save_weights, weights_hash, Checkpoint, FORMAT_VERSION, MAGIC,
};

/// Reads a palette file in either text or JSON form.
pub fn load_palette(path: impl AsRef<std::path::Path>) -> crate::Result<crate::palette::Palette> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    read_palette(&text)
}
