//! Per-pixel sparse color unmixing by direct minimization.
//!
//! For a pixel color `c` the solver minimizes
//!
//! ```text
//! Σ_i α_i D_i(u_i) + σ (Σα / Σα² − 1) + w ‖Σ_i α_i u_i − c‖²
//! ```
//!
//! where `D_i` is the squared Mahalanobis distance to color model `i`.
//! Alphas are projected onto the probability simplex and layer colors are
//! clamped to `[0,1]` after every step, so the output constraints hold by
//! construction. Optimization is projected gradient descent with
//! backtracking from several starts; the best result is returned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{AlphaStack, LayerStack};
use crate::palette::{Palette, PaletteSource};
use crate::raster::{Image, Rgb};

/// Standard deviation of the isotropic models built from bare palettes.
pub const PALETTE_MODEL_STD: f64 = 0.05;

const MIN_EIGENVALUE: f64 = 1e-6;
const SPARSITY_FLOOR: f64 = 1e-8;
/// Weight a biased start puts on its favored model.
const SOFT_START: f64 = 0.6;

/// A Gaussian color distribution `N(mean, covariance)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorModel {
    mean: Rgb,
    covariance: [[f64; 3]; 3],
    precision: [[f64; 3]; 3],
}

impl ColorModel {
    pub fn new(mean: Rgb, covariance: [[f64; 3]; 3]) -> Result<Self> {
        for a in 0..3 {
            for b in 0..3 {
                let (x, y) = (covariance[a][b], covariance[b][a]);
                if !x.is_finite() || (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "covariance must be finite and symmetric, got {covariance:?}"
                    )));
                }
            }
        }
        let min_eig = symmetric_eigenvalues(&covariance)[0];
        if min_eig < MIN_EIGENVALUE {
            return Err(Error::InvalidArgument(format!(
                "covariance eigenvalue {min_eig:e} is below {MIN_EIGENVALUE:e}"
            )));
        }
        Ok(ColorModel {
            mean,
            covariance,
            precision: invert3(&covariance),
        })
    }

    /// `N(mean, var·I)`.
    pub fn isotropic(mean: Rgb, var: f64) -> Result<Self> {
        let mut cov = [[0.0; 3]; 3];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = var;
        }
        ColorModel::new(mean, cov)
    }

    pub fn mean(&self) -> Rgb {
        self.mean
    }

    pub fn covariance(&self) -> &[[f64; 3]; 3] {
        &self.covariance
    }

    /// Squared Mahalanobis distance of `u` to this model.
    pub fn distance(&self, u: &Rgb) -> f64 {
        let d = [0, 1, 2].map(|c| u[c] as f64 - self.mean[c] as f64);
        quad(&self.precision, &d)
    }
}

/// Isotropic models with standard deviation [`PALETTE_MODEL_STD`] centered
/// on each palette color.
pub fn models_from_palette(palette: &Palette) -> Vec<ColorModel> {
    palette
        .colors()
        .iter()
        .map(|&c| ColorModel::isotropic(c, PALETTE_MODEL_STD * PALETTE_MODEL_STD).expect("positive variance"))
        .collect()
}

fn quad(m: &[[f64; 3]; 3], d: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += d[a] * m[a][b] * d[b];
        }
    }
    s
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    adj.map(|row| row.map(|v| v / det))
}

/// Eigenvalues of a symmetric 3×3 matrix in ascending order.
fn symmetric_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    if p1 == 0.0 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(f64::total_cmp);
        return e;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det_b / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [lo, 3.0 * q - hi - lo, hi]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnmixConfig {
    /// σ, weight of the sparsity term.
    pub sparsity_weight: f64,
    /// Penalty multiplier on the squared reconstruction error.
    pub color_constraint_weight: f64,
    pub max_iters: usize,
    /// Initial step length of the projected gradient search; adapted by
    /// backtracking.
    pub step_size: f64,
    /// A start stops once its objective improves by less than this
    /// (relative) over 20 iterations.
    pub convergence_tol: f64,
    /// Keep every layer color at its model mean and optimize alphas only.
    pub pin_colors: bool,
}

impl Default for UnmixConfig {
    fn default() -> Self {
        UnmixConfig {
            sparsity_weight: 1.0,
            color_constraint_weight: 100.0,
            max_iters: 300,
            step_size: 0.1,
            convergence_tol: 1e-7,
            pin_colors: false,
        }
    }
}

impl UnmixConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.sparsity_weight,
            self.color_constraint_weight,
            self.step_size,
            self.convergence_tol,
        ];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidArgument(format!(
                "unmix config values must be nonnegative with max_iters ≥ 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelUnmixResult {
    pub alphas: Vec<f32>,
    pub layer_colors: Vec<Rgb>,
    /// Unmixing energy without the reconstruction penalty.
    pub energy: f64,
    /// `‖Σ α_i u_i − c‖`.
    pub residual: f64,
    /// Energy plus the weighted squared residual, the minimized quantity.
    pub objective: f64,
    pub converged: bool,
}

/// `Σ_i α_i D_i(u_i) + σ (Σα / Σα² − 1)`.
pub fn energy(alphas: &[f32], layer_colors: &[Rgb], models: &[ColorModel], sigma: f64) -> Result<f64> {
    let k = models.len();
    if alphas.len() != k || layer_colors.len() != k {
        return Err(Error::dim(
            "energy",
            format!("{} alphas and {} colors for {k} models", alphas.len(), layer_colors.len()),
        ));
    }
    let a: Vec<f64> = alphas.iter().map(|&v| v as f64).collect();
    let u: Vec<[f64; 3]> = layer_colors.iter().map(|c| c.map(f64::from)).collect();
    Ok(Problem::new(models, [0.0; 3], sigma, 0.0).energy(&a, &u))
}

struct Problem<'a> {
    models: &'a [ColorModel],
    color: [f64; 3],
    sigma: f64,
    weight: f64,
}

impl<'a> Problem<'a> {
    fn new(models: &'a [ColorModel], color: [f64; 3], sigma: f64, weight: f64) -> Self {
        Problem {
            models,
            color,
            sigma,
            weight,
        }
    }

    fn distance(&self, i: usize, u: &[f64; 3]) -> f64 {
        let m = &self.models[i];
        let d = [0, 1, 2].map(|c| u[c] - m.mean[c] as f64);
        quad(&m.precision, &d)
    }

    fn energy(&self, a: &[f64], u: &[[f64; 3]]) -> f64 {
        let data: f64 = (0..a.len()).map(|i| a[i] * self.distance(i, &u[i])).sum();
        let s1: f64 = a.iter().sum();
        let s2: f64 = a.iter().map(|v| v * v).sum::<f64>().max(SPARSITY_FLOOR);
        data + self.sigma * (s1 / s2 - 1.0)
    }

    fn residual(&self, a: &[f64], u: &[[f64; 3]]) -> [f64; 3] {
        let mut r = self.color.map(|v| -v);
        for (ai, ui) in a.iter().zip(u) {
            for c in 0..3 {
                r[c] += ai * ui[c];
            }
        }
        r
    }

    fn objective(&self, a: &[f64], u: &[[f64; 3]]) -> f64 {
        let r = self.residual(a, u);
        self.energy(a, u) + self.weight * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    }

    /// Objective plus gradients with respect to alphas and colors.
    fn gradient(&self, a: &[f64], u: &[[f64; 3]], ga: &mut [f64], gu: &mut [[f64; 3]]) -> f64 {
        let r = self.residual(a, u);
        let s1: f64 = a.iter().sum();
        let s2raw: f64 = a.iter().map(|v| v * v).sum();
        let s2 = s2raw.max(SPARSITY_FLOOR);
        let mut data = 0.0;
        for i in 0..a.len() {
            let m = &self.models[i];
            let d = [0, 1, 2].map(|c| u[i][c] - m.mean[c] as f64);
            let pd = [0, 1, 2].map(|c| (0..3).map(|k| m.precision[c][k] * d[k]).sum::<f64>());
            let di = d[0] * pd[0] + d[1] * pd[1] + d[2] * pd[2];
            data += a[i] * di;
            let sparsity = if s2raw > SPARSITY_FLOOR {
                (s2 - 2.0 * s1 * a[i]) / (s2 * s2)
            } else {
                1.0 / s2
            };
            ga[i] = di + self.sigma * sparsity + 2.0 * self.weight * (0..3).map(|c| r[c] * u[i][c]).sum::<f64>();
            for c in 0..3 {
                gu[i][c] = 2.0 * a[i] * pd[c] + 2.0 * self.weight * a[i] * r[c];
            }
        }
        data + self.sigma * (s1 / s2 - 1.0) + self.weight * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    }
}

/// Euclidean projection onto `{a ≥ 0, Σa = 1}`.
fn project_simplex(a: &mut [f64]) {
    let mut sorted = a.to_vec();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - 1.0) / (j + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    for v in a.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

struct Candidate {
    objective: f64,
    alphas: Vec<f64>,
    colors: Vec<[f64; 3]>,
    converged: bool,
}

fn descend(problem: &Problem, start: Vec<f64>, cfg: &UnmixConfig) -> Candidate {
    const WINDOW: usize = 20;
    const MIN_STEP: f64 = 1e-14;
    let k = start.len();
    let mut a = start;
    let mut u: Vec<[f64; 3]> = problem.models.iter().map(|m| m.mean.map(f64::from)).collect();
    let mut ga = vec![0.0; k];
    let mut gu = vec![[0.0; 3]; k];
    let mut f = problem.gradient(&a, &u, &mut ga, &mut gu);
    let mut step = cfg.step_size;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for t in 0..cfg.max_iters {
        history.push(f);
        if t >= WINDOW {
            let old = history[t - WINDOW];
            if old - f <= cfg.convergence_tol * old.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
        // Backtrack until the projected step decreases the objective.
        let mut accepted = false;
        while step > MIN_STEP {
            let mut a_next: Vec<f64> = a.iter().zip(&ga).map(|(x, g)| x - step * g).collect();
            project_simplex(&mut a_next);
            let u_next: Vec<[f64; 3]> = if cfg.pin_colors {
                u.clone()
            } else {
                u.iter()
                    .zip(&gu)
                    .map(|(ui, gi)| [0, 1, 2].map(|c| (ui[c] - step * gi[c]).clamp(0.0, 1.0)))
                    .collect()
            };
            let f_next = problem.objective(&a_next, &u_next);
            if f_next < f {
                a = a_next;
                u = u_next;
                f = problem.gradient(&a, &u, &mut ga, &mut gu);
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    Candidate {
        objective: f,
        alphas: a,
        colors: u,
        converged,
    }
}

/// Unmixes one color. Starts from the one-hot nearest model, uniform
/// alphas, and a soft bias toward each model; returns the best iterate.
pub fn unmix_pixel(color: Rgb, models: &[ColorModel], cfg: &UnmixConfig) -> Result<PixelUnmixResult> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidArgument("at least one color model is required".into()));
    }
    if color.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("pixel color {color:?} is outside [0,1]")));
    }
    Ok(unmix_checked(color, models, cfg))
}

fn unmix_checked(color: Rgb, models: &[ColorModel], cfg: &UnmixConfig) -> PixelUnmixResult {
    let k = models.len();
    let problem = Problem::new(models, color.map(f64::from), cfg.sparsity_weight, cfg.color_constraint_weight);
    let nearest = (0..k)
        .min_by(|&a, &b| models[a].distance(&color).total_cmp(&models[b].distance(&color)))
        .unwrap_or(0);
    let biased = |j: usize, w: f64| {
        let rest = if k > 1 { (1.0 - w) / (k - 1) as f64 } else { 0.0 };
        (0..k).map(|i| if i == j { w } else { rest }).collect::<Vec<f64>>()
    };
    let mut starts = vec![biased(nearest, 1.0)];
    if k > 1 {
        starts.push(vec![1.0 / k as f64; k]);
        starts.extend((0..k).map(|j| biased(j, SOFT_START)));
    }
    let mut best: Option<Candidate> = None;
    for s in starts {
        let cand = descend(&problem, s, cfg);
        if best.as_ref().is_none_or(|b| cand.objective < b.objective) {
            best = Some(cand);
        }
    }
    let best = best.expect("at least one start");
    let sum: f64 = best.alphas.iter().sum();
    let alphas: Vec<f32> = best.alphas.iter().map(|a| (a / sum) as f32).collect();
    let layer_colors: Vec<Rgb> = best.colors.iter().map(|u| u.map(|v| v as f32)).collect();
    let a64: Vec<f64> = alphas.iter().map(|&v| v as f64).collect();
    let u64: Vec<[f64; 3]> = layer_colors.iter().map(|u| u.map(f64::from)).collect();
    let r = problem.residual(&a64, &u64);
    PixelUnmixResult {
        energy: problem.energy(&a64, &u64),
        residual: (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt(),
        objective: problem.objective(&a64, &u64),
        converged: best.converged,
        alphas,
        layer_colors,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnmixSummary {
    pub pixels: usize,
    pub not_converged: usize,
    pub mean_energy: f64,
    pub mean_residual: f64,
}

#[derive(Clone, Debug)]
pub struct UnmixOutput {
    pub layers: LayerStack,
    pub energies: Vec<f64>,
    pub summary: UnmixSummary,
}

/// Unmixes every pixel independently.
pub fn unmix_image(image: &Image, models: &[ColorModel], cfg: &UnmixConfig) -> Result<UnmixOutput> {
    cfg.validate()?;
    let means = models.iter().map(|m| m.mean()).collect();
    let palette = Palette::new(means, PaletteSource::Manual)?;
    if image
        .pixels()
        .iter()
        .any(|c| c.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)))
    {
        return Err(Error::InvalidArgument("image values must lie in [0,1]".into()));
    }
    let results: Vec<PixelUnmixResult> = if crate::tensor::parallel_enabled() {
        image
            .pixels()
            .par_iter()
            .map(|&c| unmix_checked(c, models, cfg))
            .collect()
    } else {
        image.pixels().iter().map(|&c| unmix_checked(c, models, cfg)).collect()
    };
    let k = models.len();
    let n = image.num_pixels();
    let mut alphas = vec![0.0f32; k * n];
    let mut colors = vec![[0.0f32; 3]; k * n];
    for (p, r) in results.iter().enumerate() {
        for i in 0..k {
            alphas[i * n + p] = r.alphas[i];
            colors[i * n + p] = r.layer_colors[i];
        }
    }
    let summary = UnmixSummary {
        pixels: n,
        not_converged: results.iter().filter(|r| !r.converged).count(),
        mean_energy: results.iter().map(|r| r.energy).sum::<f64>() / n as f64,
        mean_residual: results.iter().map(|r| r.residual).sum::<f64>() / n as f64,
    };
    let alphas = AlphaStack::new(k, image.width(), image.height(), alphas, true)?;
    Ok(UnmixOutput {
        layers: LayerStack::new(palette, alphas, colors)?,
        energies: results.iter().map(|r| r.energy).collect(),
        summary,
    })
}

/// Minimum of the pinned-color objective over the alpha simplex sampled at
/// `step` resolution. Only practical for small K.
pub fn grid_search_alphas(color: Rgb, models: &[ColorModel], cfg: &UnmixConfig, step: f64) -> (Vec<f64>, f64) {
    let k = models.len();
    let problem = Problem::new(models, color.map(f64::from), cfg.sparsity_weight, cfg.color_constraint_weight);
    let u: Vec<[f64; 3]> = models.iter().map(|m| m.mean.map(f64::from)).collect();
    let n = (1.0 / step).round() as usize;
    let mut best = (vec![0.0; k], f64::INFINITY);
    let mut counts = vec![0usize; k];
    fn visit(i: usize, left: usize, counts: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if i + 1 == counts.len() {
            counts[i] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[i] = c;
            visit(i + 1, left - c, counts, f);
        }
    }
    visit(0, n, &mut counts, &mut |c: &[usize]| {
        let a: Vec<f64> = c.iter().map(|&v| v as f64 / n as f64).collect();
        let f = problem.objective(&a, &u);
        if f < best.1 {
            best = (a, f);
        }
    });
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso(colors: &[Rgb]) -> Vec<ColorModel> {
        colors.iter().map(|&c| ColorModel::isotropic(c, 0.01).unwrap()).collect()
    }

    #[test]
    fn one_hot_at_mean_has_zero_energy() {
        let m = iso(&[[0.1, 0.2, 0.3], [0.9, 0.1, 0.5]]);
        let e = energy(&[0.0, 1.0], &[[0.4, 0.4, 0.4], [0.9, 0.1, 0.5]], &m, 1.0).unwrap();
        assert!(e.abs() < 1e-12);
    }

    #[test]
    fn uniform_alphas_cost_k_minus_one_sigma() {
        let colors: Vec<Rgb> = (0..7).map(|i| [i as f32 / 7.0, 0.5, 0.5]).collect();
        let m = iso(&colors);
        let e = energy(&[1.0 / 7.0; 7], &colors, &m, 0.8).unwrap();
        assert!((e - 0.8 * 6.0).abs() < 1e-5);
    }

    #[test]
    fn mahalanobis_matches_explicit_form() {
        let c = 0.04;
        let model = ColorModel::isotropic([0.2, 0.4, 0.6], c).unwrap();
        let u = [0.5, 0.1, 0.9];
        let d: f64 = [0.3f64, -0.3, 0.3].iter().map(|v| v * v).sum::<f64>() / c;
        assert!((model.distance(&u) - d).abs() < 1e-5);

        let cov = [[0.05, 0.01, 0.0], [0.01, 0.04, 0.005], [0.0, 0.005, 0.03]];
        let model = ColorModel::new([0.0; 3], cov).unwrap();
        let p = invert3(&cov);
        let dv = [0.1f64, -0.2, 0.3];
        // Solve cov·x = d and compare dᵀx.
        let x = [0, 1, 2].map(|r| (0..3).map(|k| p[r][k] * dv[k]).sum::<f64>());
        for r in 0..3 {
            let back: f64 = (0..3).map(|k| cov[r][k] * x[k]).sum();
            assert!((back - dv[r]).abs() < 1e-12);
        }
        let expected: f64 = (0..3).map(|r| dv[r] * x[r]).sum();
        assert!((model.distance(&[0.1, -0.2, 0.3]) - expected).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_covariances() {
        assert!(ColorModel::isotropic([0.0; 3], 1e-7).is_err());
        assert!(ColorModel::new([0.0; 3], [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        // Rank-deficient: eigenvalues 0, 1, 2.
        assert!(ColorModel::new([0.0; 3], [[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let e = symmetric_eigenvalues(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        for (a, b) in e.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn color_at_a_mean_is_one_hot() {
        let m = iso(&[[0.8, 0.1, 0.1], [0.1, 0.1, 0.8], [0.1, 0.8, 0.1]]);
        let cfg = UnmixConfig {
            sparsity_weight: 0.0,
            ..Default::default()
        };
        let r = unmix_pixel([0.1, 0.1, 0.8], &m, &cfg).unwrap();
        assert!(r.alphas[1] >= 0.99, "{r:?}");
        for (a, b) in r.layer_colors[1].iter().zip([0.1, 0.1, 0.8]) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn midpoint_of_two_models_splits_evenly() {
        let m = iso(&[[0.8, 0.2, 0.2], [0.2, 0.2, 0.8]]);
        let cfg = UnmixConfig {
            sparsity_weight: 0.0,
            color_constraint_weight: 1e4,
            ..Default::default()
        };
        let r = unmix_pixel([0.5, 0.2, 0.5], &m, &cfg).unwrap();
        assert!((r.alphas[0] - 0.5).abs() < 5e-2 && (r.alphas[1] - 0.5).abs() < 5e-2, "{r:?}");
        let (grid, _) = grid_search_alphas([0.5, 0.2, 0.5], &m, &cfg, 0.01);
        assert!((grid[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn single_model_is_trivial() {
        let m = iso(&[[0.3, 0.3, 0.3]]);
        let cfg = UnmixConfig {
            color_constraint_weight: 1e4,
            ..Default::default()
        };
        let r = unmix_pixel([0.6, 0.2, 0.4], &m, &cfg).unwrap();
        assert_eq!(r.alphas, vec![1.0]);
        for (a, b) in r.layer_colors[0].iter().zip([0.6, 0.2, 0.4]) {
            assert!((a - b).abs() < 1e-2);
        }
    }

    #[test]
    fn doubling_distances_doubles_energy_without_sparsity() {
        let colors = [[0.1, 0.5, 0.3], [0.7, 0.2, 0.9], [0.4, 0.4, 0.1]];
        let m1: Vec<ColorModel> = colors.iter().map(|&c| ColorModel::isotropic(c, 0.02).unwrap()).collect();
        let m2: Vec<ColorModel> = colors.iter().map(|&c| ColorModel::isotropic(c, 0.01).unwrap()).collect();
        let a = [0.2, 0.5, 0.3];
        let u = [[0.3, 0.3, 0.3], [0.6, 0.1, 0.8], [0.5, 0.5, 0.5]];
        let e1 = energy(&a, &u, &m1, 0.0).unwrap();
        let e2 = energy(&a, &u, &m2, 0.0).unwrap();
        assert!((e2 - 2.0 * e1).abs() < 1e-6 * e1.abs());
    }

    #[test]
    fn result_is_no_worse_than_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let colors: Vec<Rgb> = (0..4).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let models = iso(&colors);
        let cfg = UnmixConfig::default();
        for _ in 0..50 {
            let c: Rgb = [rng.random(), rng.random(), rng.random()];
            let r = unmix_pixel(c, &models, &cfg).unwrap();
            let j = (0..4)
                .min_by(|&a, &b| models[a].distance(&c).total_cmp(&models[b].distance(&c)))
                .unwrap();
            let mut a0 = vec![0.0; 4];
            a0[j] = 1.0;
            let p = Problem::new(&models, c.map(f64::from), cfg.sparsity_weight, cfg.color_constraint_weight);
            let init = p.objective(&a0, &colors.iter().map(|u| u.map(f64::from)).collect::<Vec<_>>());
            assert!(r.objective <= init + 1e-9);
            let s: f32 = r.alphas.iter().sum();
            assert!((s - 1.0).abs() <= 1e-6);
            assert!(r.layer_colors.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn simplex_projection_examples() {
        for (input, expected) in [
            (vec![0.5, 0.5, 0.5], vec![1.0 / 3.0; 3]),
            (vec![2.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]),
            (vec![0.6, 0.6, -1.0], vec![0.5, 0.5, 0.0]),
            (vec![0.2, 0.3, 0.5], vec![0.2, 0.3, 0.5]),
        ] {
            let mut a = input.clone();
            project_simplex(&mut a);
            for (x, y) in a.iter().zip(&expected) {
                assert!((x - y).abs() < 1e-12, "{input:?} -> {a:?}");
            }
        }
    }

    #[test]
    fn pinned_alphas_match_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = UnmixConfig {
            pin_colors: true,
            ..Default::default()
        };
        for k in [2, 3] {
            let colors: Vec<Rgb> = (0..k).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let models = iso(&colors);
            for _ in 0..20 {
                let c: Rgb = [rng.random(), rng.random(), rng.random()];
                let r = unmix_pixel(c, &models, &cfg).unwrap();
                let (_, grid) = grid_search_alphas(c, &models, &cfg, 0.01);
                assert!(r.objective <= grid * 1.02 + 1e-6, "{} vs {grid}", r.objective);
            }
        }
    }

    #[test]
    fn image_of_palette_colors_is_one_hot() {
        let colors = [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9], [0.9, 0.9, 0.1]];
        let models = iso(&colors);
        let img = Image::new(2, 2, colors.to_vec()).unwrap();
        let out = unmix_image(&img, &models, &UnmixConfig::default()).unwrap();
        for p in 0..4 {
            assert!(out.layers.alphas().get(p, p) >= 0.99);
        }
        assert!(out.layers.alphas().max_sum_deviation() <= 1e-6);
    }

    #[test]
    fn constant_image_gives_identical_pixels() {
        let models = iso(&[[0.9, 0.1, 0.1], [0.1, 0.9, 0.1]]);
        let img = Image::filled(3, 2, [0.4, 0.5, 0.2]);
        let out = unmix_image(&img, &models, &UnmixConfig::default()).unwrap();
        let first = out.layers.alphas().pixel(0);
        for p in 1..6 {
            assert_eq!(out.layers.alphas().pixel(p), first);
        }
    }

    #[test]
    fn invalid_inputs() {
        let models = iso(&[[0.5; 3]]);
        assert!(unmix_pixel([1.5, 0.0, 0.0], &models, &UnmixConfig::default()).is_err());
        assert!(unmix_pixel([0.5; 3], &[], &UnmixConfig::default()).is_err());
        let cfg = UnmixConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(unmix_pixel([0.5; 3], &models, &cfg).is_err());
    }
}
