use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::step::Batch;
use crate::error::{Error, Result};
use crate::io::load_image;
use crate::palette::extract_palette;
use crate::raster::Image;

/// Training images, each already scaled so its shorter side equals the
/// crop size.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<Image>,
    names: Vec<String>,
    crop_size: usize,
}

impl Dataset {
    pub fn from_images(images: Vec<Image>, crop_size: usize) -> Result<Self> {
        let names = (0..images.len()).map(|i| format!("image_{i:04}")).collect();
        Dataset::build(images, names, crop_size)
    }

    fn build(images: Vec<Image>, names: Vec<String>, crop_size: usize) -> Result<Self> {
        if crop_size == 0 {
            return Err(Error::Dataset("crop size must be positive".into()));
        }
        if images.is_empty() {
            return Err(Error::Dataset("no usable images".into()));
        }
        let images = images
            .iter()
            .map(|img| img.resized_shorter_side(crop_size))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            images,
            names,
            crop_size,
        })
    }

    /// Loads every decodable image directly inside `dir`, in name order.
    /// Files that fail to decode are skipped with a warning.
    pub fn from_dir(dir: impl AsRef<Path>, crop_size: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut images = Vec::new();
        let mut names = Vec::new();
        for path in image_files(dir)? {
            match load_image(&path) {
                Ok(img) => {
                    images.push(img);
                    names.push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
                }
                Err(e) => warn!("skipping {e}"),
            }
        }
        if images.is_empty() {
            return Err(Error::Dataset(format!("{} contains no readable images", dir.display())));
        }
        Dataset::build(images, names, crop_size)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Seeded stream of crops with per-crop palettes.
    pub fn stream(&self, k: usize, seed: u64) -> SampleStream<'_> {
        SampleStream {
            data: self,
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
        }
    }
}

/// Regular files in `dir` sorted by name; subdirectories are not entered.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .min_depth(1)
        .max_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| match e {
            Ok(e) if e.file_type().is_file() => Some(Ok(e.into_path())),
            Ok(_) => None,
            Err(err) => Some(Err(err)),
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    files.retain(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')));
    Ok(files)
}

/// One image crop and the palette extracted from it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub crop: Image,
    pub palette: crate::palette::Palette,
}

pub struct SampleStream<'a> {
    data: &'a Dataset,
    k: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl SampleStream<'_> {
    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn next_sample(&mut self) -> Result<TrainSample> {
        let img = &self.data.images[self.next_index()];
        let c = self.data.crop_size;
        let x0 = self.rng.random_range(0..=img.width() - c);
        let y0 = self.rng.random_range(0..=img.height() - c);
        let crop = img.crop(x0, y0, c, c)?;
        let palette = extract_palette(&crop, self.k, self.rng.random())?;
        Ok(TrainSample { crop, palette })
    }

    pub fn next_batch(&mut self, size: usize) -> Result<Batch> {
        let samples: Vec<TrainSample> = (0..size).map(|_| self.next_sample()).collect::<Result<_>>()?;
        let (images, palettes) = samples.into_iter().map(|s| (s.crop, s.palette)).unzip();
        Batch::new(images, palettes)
    }
}
