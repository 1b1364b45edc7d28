use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::palette::{Palette, PaletteSource};
use crate::raster::{to_u8, Rgb};

/// Parses one color per line, either `#RRGGBB` or `r,g,b` with reals in
/// `[0,1]`. Blank lines and lines starting with `//` are skipped.
pub fn parse_palette(text: &str) -> Result<Palette> {
    let mut colors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let fail = |message: String| Error::PaletteParse { line: i + 1, message };
        let color = if let Some(hex) = line.strip_prefix('#') {
            parse_hex(hex).ok_or_else(|| fail(format!("`{line}` is not a #RRGGBB color")))?
        } else {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(fail(format!("expected three comma-separated values, got `{line}`")));
            }
            let mut c = [0.0f32; 3];
            for (slot, part) in c.iter_mut().zip(&parts) {
                let v: f32 = part.parse().map_err(|_| fail(format!("`{part}` is not a number")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(fail(format!("{v} is outside [0,1]")));
                }
                *slot = v;
            }
            c
        };
        colors.push(color);
    }
    if colors.is_empty() {
        return Err(Error::PaletteParse {
            line: 0,
            message: "no colors".into(),
        });
    }
    Palette::new(colors, PaletteSource::Manual)
}

pub fn parse_hex(hex: &str) -> Option<Rgb> {
    let hex = hex.strip_prefix('#').unwrap_or(hex);
    if hex.len() != 6 || !hex.is_ascii() {
        return None;
    }
    let mut c = [0.0f32; 3];
    for (i, slot) in c.iter_mut().enumerate() {
        *slot = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).ok()? as f32 / 255.0;
    }
    Some(c)
}

pub fn to_hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", to_u8(c[0]), to_u8(c[1]), to_u8(c[2]))
}

/// One `r,g,b` line per color, written with enough digits to round-trip.
pub fn format_palette(palette: &Palette) -> String {
    palette
        .colors()
        .iter()
        .map(|c| format!("{},{},{}\n", c[0], c[1], c[2]))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaletteJson {
    pub colors: Vec<Rgb>,
}

impl From<&Palette> for PaletteJson {
    fn from(p: &Palette) -> Self {
        PaletteJson {
            colors: p.colors().to_vec(),
        }
    }
}

/// Reads either the JSON form `{"colors": [[r,g,b], …]}` or the text form.
pub fn read_palette(text: &str) -> Result<Palette> {
    if text.trim_start().starts_with('{') {
        let json: PaletteJson = serde_json::from_str(text)?;
        Palette::new(json.colors, PaletteSource::Manual)
    } else {
        parse_palette(text)
    }
}
