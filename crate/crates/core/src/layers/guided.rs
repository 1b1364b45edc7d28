//! Color-guided filter over alpha planes.
//!
//! Windows are `(2r+1)²` squares clipped at the image border, so border
//! means average over fewer pixels. Sums come from f64 integral images.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GuidedFilterParams {
    pub radius: usize,
    pub eps: f64,
}

impl Default for GuidedFilterParams {
    fn default() -> Self {
        GuidedFilterParams {
            radius: 4,
            eps: 1e-4,
        }
    }
}

struct Integral {
    w: usize,
    h: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, values: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += values(y * w + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Integral { w, h, sums }
    }

    /// Mean over the clipped window of radius `r` around `(x, y)`.
    fn mean(&self, x: usize, y: usize, r: usize) -> f64 {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.w);
        let y1 = (y + r + 1).min(self.h);
        let s = self.w + 1;
        let total = self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0]
            + self.sums[y0 * s + x0];
        total / ((x1 - x0) * (y1 - y0)) as f64
    }
}

fn box_filter(w: usize, h: usize, r: usize, values: impl Fn(usize) -> f64) -> Vec<f64> {
    let integral = Integral::new(w, h, values);
    (0..w * h)
        .map(|i| integral.mean(i % w, i / w, r))
        .collect()
}

/// Mean over clipped `(2r+1)²` windows.
pub fn box_mean(values: &[f32], width: usize, height: usize, radius: usize) -> Result<Vec<f32>> {
    if values.len() != width * height {
        return Err(Error::dim("box_mean", format!("{} values for {width}×{height}", values.len())));
    }
    Ok(box_filter(width, height, radius, |i| values[i] as f64)
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

/// Solves `m x = b` for a symmetric positive definite 3×3 `m`.
fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let mut x = [0.0; 3];
    for (col, xi) in x.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *xi = det(&mc) / d;
    }
    x
}

/// Smooths one alpha plane with the input image as guide. Output is
/// clamped to `[0,1]`.
pub fn guided_filter(alpha: &[f32], guide: &Image, params: GuidedFilterParams) -> Result<Vec<f32>> {
    let (w, h) = (guide.width(), guide.height());
    let n = w * h;
    if alpha.len() != n {
        return Err(Error::dim(
            "guided_filter",
            format!("alpha has {} values, guide is {w}×{h}", alpha.len()),
        ));
    }
    if params.radius == 0 || params.eps.is_nan() || params.eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "guided filter needs radius ≥ 1 and eps > 0, got {} and {}",
            params.radius, params.eps
        )));
    }
    let r = params.radius;
    let px = guide.pixels();
    let ch = |c: usize| move |i: usize| px[i][c] as f64;
    let mean_i: Vec<Vec<f64>> = (0..3).map(|c| box_filter(w, h, r, ch(c))).collect();
    let mean_p = box_filter(w, h, r, |i| alpha[i] as f64);
    let mean_ip: Vec<Vec<f64>> = (0..3)
        .map(|c| box_filter(w, h, r, |i| px[i][c] as f64 * alpha[i] as f64))
        .collect();
    const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let mean_ii: Vec<Vec<f64>> = PAIRS
        .iter()
        .map(|&(a, b)| box_filter(w, h, r, |i| px[i][a] as f64 * px[i][b] as f64))
        .collect();

    let coeffs: Vec<[f64; 4]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mu = [mean_i[0][i], mean_i[1][i], mean_i[2][i]];
            let mut sigma = [[0.0; 3]; 3];
            for (k, &(a, b)) in PAIRS.iter().enumerate() {
                let v = mean_ii[k][i] - mu[a] * mu[b];
                sigma[a][b] = v;
                sigma[b][a] = v;
            }
            for (d, row) in sigma.iter_mut().enumerate() {
                row[d] += params.eps;
            }
            let cov_ip = [0, 1, 2].map(|c| mean_ip[c][i] - mu[c] * mean_p[i]);
            let a = solve3(sigma, cov_ip);
            let b = mean_p[i] - a[0] * mu[0] - a[1] * mu[1] - a[2] * mu[2];
            [a[0], a[1], a[2], b]
        })
        .collect();
    let mean_coeffs: Vec<Vec<f64>> = (0..4)
        .map(|j| box_filter(w, h, r, |i| coeffs[i][j]))
        .collect();
    Ok((0..n)
        .map(|i| {
            let g = px[i];
            let q = mean_coeffs[0][i] * g[0] as f64
                + mean_coeffs[1][i] * g[1] as f64
                + mean_coeffs[2][i] * g[2] as f64
                + mean_coeffs[3][i];
            (q as f32).clamp(0.0, 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-pixel implementation: window statistics by explicit loops,
    /// linear systems by Gaussian elimination with partial pivoting.
    fn naive(alpha: &[f32], guide: &Image, r: usize, eps: f64) -> Vec<f32> {
        let (w, h) = (guide.width(), guide.height());
        let window = |x: usize, y: usize| {
            let xs = x.saturating_sub(r)..(x + r + 1).min(w);
            let ys = y.saturating_sub(r)..(y + r + 1).min(h);
            ys.flat_map(move |yy| xs.clone().map(move |xx| yy * w + xx))
        };
        let gauss = |mut m: [[f64; 4]; 3]| {
            for col in 0..3 {
                let piv = (col..3)
                    .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                    .unwrap();
                m.swap(col, piv);
                for row in 0..3 {
                    if row != col {
                        let f = m[row][col] / m[col][col];
                        for k in col..4 {
                            m[row][k] -= f * m[col][k];
                        }
                    }
                }
            }
            [0, 1, 2].map(|i| m[i][3] / m[i][i])
        };
        let mut coeffs = vec![[0.0f64; 4]; w * h];
        for y in 0..h {
            for x in 0..w {
                let idx: Vec<usize> = window(x, y).collect();
                let cnt = idx.len() as f64;
                let g = |i: usize, c: usize| guide.pixels()[i][c] as f64;
                let mu: [f64; 3] = [0, 1, 2].map(|c| idx.iter().map(|&i| g(i, c)).sum::<f64>() / cnt);
                let pm = idx.iter().map(|&i| alpha[i] as f64).sum::<f64>() / cnt;
                let mut m = [[0.0; 4]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        m[a][b] = idx.iter().map(|&i| (g(i, a) - mu[a]) * (g(i, b) - mu[b])).sum::<f64>() / cnt;
                    }
                    m[a][a] += eps;
                    m[a][3] = idx.iter().map(|&i| (g(i, a) - mu[a]) * (alpha[i] as f64 - pm)).sum::<f64>() / cnt;
                }
                let a = gauss(m);
                coeffs[y * w + x] = [a[0], a[1], a[2], pm - a[0] * mu[0] - a[1] * mu[1] - a[2] * mu[2]];
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let idx: Vec<usize> = window(x, y).collect();
                let cnt = idx.len() as f64;
                let mc: [f64; 4] = [0, 1, 2, 3].map(|j| idx.iter().map(|&i| coeffs[i][j]).sum::<f64>() / cnt);
                let gp = guide.pixels()[y * w + x];
                let q = mc[0] * gp[0] as f64 + mc[1] * gp[1] as f64 + mc[2] * gp[2] as f64 + mc[3];
                out[y * w + x] = (q as f32).clamp(0.0, 1.0);
            }
        }
        out
    }

    fn random_inputs(size: usize, seed: u64) -> (Vec<f32>, Image) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = (0..size * size).map(|_| rng.random()).collect();
        let pixels = (0..size * size)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        (alpha, Image::new(size, size, pixels).unwrap())
    }

    #[test]
    fn matches_naive_reference() {
        for (seed, r) in [(1, 2), (2, 4), (3, 8)] {
            let (alpha, guide) = random_inputs(24, seed);
            let p = GuidedFilterParams { radius: r, eps: 1e-4 };
            let fast = guided_filter(&alpha, &guide, p).unwrap();
            let slow = naive(&alpha, &guide, r, 1e-4);
            let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(err < 1e-5, "radius {r}: {err}");
        }
    }

    #[test]
    fn constant_alpha_is_a_fixed_point() {
        let (_, guide) = random_inputs(16, 4);
        let out = guided_filter(&[0.3; 256], &guide, GuidedFilterParams::default()).unwrap();
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-5));
    }

    #[test]
    fn constant_guide_reduces_to_box_means() {
        let (alpha, _) = random_inputs(16, 5);
        let guide = Image::filled(16, 16, [0.4, 0.5, 0.6]);
        let r = 3;
        let out = guided_filter(&alpha, &guide, GuidedFilterParams { radius: r, eps: 1e-4 }).unwrap();
        // a = 0 and b = mean(α), so the output is the mean of window means.
        let expected = box_mean(&box_mean(&alpha, 16, 16, r).unwrap(), 16, 16, r).unwrap();
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn box_mean_clips_windows() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(box_mean(&v, 4, 1, 1).unwrap(), vec![1.5, 2.0, 3.0, 3.5]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (alpha, guide) = random_inputs(4, 6);
        assert!(guided_filter(&alpha, &guide, GuidedFilterParams { radius: 0, eps: 1e-4 }).is_err());
        assert!(guided_filter(&alpha, &guide, GuidedFilterParams { radius: 1, eps: 0.0 }).is_err());
        assert!(guided_filter(&alpha[..3], &guide, GuidedFilterParams::default()).is_err());
    }
}
