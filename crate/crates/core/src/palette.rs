//! Palettes and their automatic extraction with K-means in RGB space.

use std::cmp::Ordering;

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, Rgb};

pub const MAX_PALETTE_SIZE: usize = 16;

/// Clustering runs on at most this many pixels.
pub const MAX_CLUSTER_POINTS: usize = 1 << 18;

pub const MAX_KMEANS_ITERS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaletteSource {
    Auto,
    Manual,
}

/// Ordered palette colors. Layer `i` of every downstream result belongs to
/// `colors()[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    colors: Vec<Rgb>,
    source: PaletteSource,
}

impl Palette {
    pub fn new(colors: Vec<Rgb>, source: PaletteSource) -> Result<Self> {
        if colors.is_empty() || colors.len() > MAX_PALETTE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "palette size must be in 1..={MAX_PALETTE_SIZE}, got {}",
                colors.len()
            )));
        }
        for (i, c) in colors.iter().enumerate() {
            if c.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "palette color {i} {c:?} is outside [0,1]"
                )));
            }
        }
        Ok(Palette { colors, source })
    }

    pub fn manual(colors: Vec<Rgb>) -> Result<Self> {
        Palette::new(colors, PaletteSource::Manual)
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn source(&self) -> PaletteSource {
        self.source
    }

    /// Copy of this palette with color `index` replaced.
    pub fn with_color(&self, index: usize, color: Rgb) -> Result<Self> {
        if index >= self.colors.len() {
            return Err(Error::LayerIndex {
                index,
                k: self.colors.len(),
            });
        }
        let mut colors = self.colors.clone();
        colors[index] = color;
        Palette::new(colors, PaletteSource::Manual)
    }
}

/// Outcome of [`kmeans_palette`].
#[derive(Clone, Debug)]
pub struct KMeansResult {
    /// Centers ordered by descending population.
    pub centers: Vec<Rgb>,
    pub counts: Vec<usize>,
    pub iterations: usize,
    /// Number of centers copied because the image had fewer than `k` colors.
    pub duplicates_filled: usize,
}

fn dist2(a: &Rgb, b: &Rgb) -> f32 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

fn cmp_rgb(a: &Rgb, b: &Rgb) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest_center(point: &Rgb, centers: &[Rgb]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

pub fn assign(points: &[Rgb], centers: &[Rgb]) -> Vec<usize> {
    points.iter().map(|p| nearest_center(p, centers)).collect()
}

/// Sum of squared distances from each point to its nearest center.
pub fn kmeans_objective(points: &[Rgb], centers: &[Rgb]) -> f64 {
    points
        .iter()
        .map(|p| dist2(p, &centers[nearest_center(p, centers)]) as f64)
        .sum()
}

/// One Lloyd step: assign every point to its nearest center, then move each
/// center to the mean of its points. A center left without points is moved
/// onto the point farthest from its own assigned center.
pub fn kmeans_iterate(points: &[Rgb], centers: &[Rgb]) -> Result<Vec<Rgb>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("k-means needs at least one point".into()));
    }
    if centers.is_empty() {
        return Err(Error::InvalidArgument("k-means needs at least one center".into()));
    }
    let labels = assign(points, centers);
    Ok(update_centers(points, centers, &labels))
}

fn update_centers(points: &[Rgb], centers: &[Rgb], labels: &[usize]) -> Vec<Rgb> {
    let k = centers.len();
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        for c in 0..3 {
            sums[l][c] += p[c] as f64;
        }
        counts[l] += 1;
    }
    let mut next: Vec<Rgb> = (0..k)
        .map(|j| {
            if counts[j] == 0 {
                centers[j]
            } else {
                let n = counts[j] as f64;
                [
                    (sums[j][0] / n) as f32,
                    (sums[j][1] / n) as f32,
                    (sums[j][2] / n) as f32,
                ]
            }
        })
        .collect();
    if counts.contains(&0) {
        let mut dist: Vec<f32> = points
            .iter()
            .zip(labels)
            .map(|(p, &l)| dist2(p, &next[l]))
            .collect();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let (far, _) = dist
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
            next[j] = points[far];
            dist[far] = 0.0;
        }
    }
    next
}

fn kmeans_plus_plus(points: &[Rgb], k: usize, rng: &mut ChaCha8Rng) -> Vec<Rgb> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0]) as f64).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c) as f64);
        }
        centers.push(c);
    }
    centers
}

/// Pixels in canonical order (sorted), subsampled when the image is large.
/// Sorting first makes the result independent of pixel order.
fn cluster_points(image: &Image, rng: &mut ChaCha8Rng) -> Vec<Rgb> {
    let mut points = image.pixels().to_vec();
    points.sort_by(cmp_rgb);
    if points.len() > MAX_CLUSTER_POINTS {
        let mut idx = sample(rng, points.len(), MAX_CLUSTER_POINTS).into_vec();
        idx.sort_unstable();
        points = idx.into_iter().map(|i| points[i]).collect();
    }
    points
}

/// K-means clustering of the image's pixels in RGB space.
pub fn kmeans_palette(image: &Image, k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || k > MAX_PALETTE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={MAX_PALETTE_SIZE}, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cluster_points(image, &mut rng);
    let distinct = 1 + points
        .windows(2)
        .filter(|w| cmp_rgb(&w[0], &w[1]) != Ordering::Equal)
        .count();
    let k_eff = k.min(distinct);

    let mut centers = kmeans_plus_plus(&points, k_eff, &mut rng);
    let mut labels = assign(&points, &centers);
    let mut iterations = 0;
    while iterations < MAX_KMEANS_ITERS {
        iterations += 1;
        centers = update_centers(&points, &centers, &labels);
        let next = assign(&points, &centers);
        if next == labels {
            break;
        }
        labels = next;
    }

    let mut counts = vec![0usize; k_eff];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..k_eff).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then_with(|| cmp_rgb(&centers[a], &centers[b]))
    });
    let mut sorted_centers: Vec<Rgb> = order.iter().map(|&j| centers[j]).collect();
    let mut sorted_counts: Vec<usize> = order.iter().map(|&j| counts[j]).collect();

    let duplicates_filled = k - k_eff;
    if duplicates_filled > 0 {
        warn!(
            "image has only {distinct} distinct colors for k = {k}; duplicating {duplicates_filled} palette entries"
        );
        for i in 0..duplicates_filled {
            sorted_centers.push(sorted_centers[i % k_eff]);
            sorted_counts.push(0);
        }
    }
    for c in &mut sorted_centers {
        for v in c.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(KMeansResult {
        centers: sorted_centers,
        counts: sorted_counts,
        iterations,
        duplicates_filled,
    })
}

/// Automatic palette: K-means cluster centers ordered by population.
pub fn extract_palette(image: &Image, k: usize, seed: u64) -> Result<Palette> {
    let result = kmeans_palette(image, k, seed)?;
    Palette::new(result.centers, PaletteSource::Auto)
}
