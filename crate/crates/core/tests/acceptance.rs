//! End-to-end acceptance checks, one line per criterion.
//!
//! `cargo test --release --test acceptance -- [name filter...]`

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softseg::bench::bench_decompose;
use softseg::layers::{
    compose, decompose, guided_filter, merge_duplicate_layers, normalize_alpha, AlphaStack, DecomposeOptions,
    GuidedFilterParams, LayerStack,
};
use softseg::metrics::{color_variance, reconstruction_mse, sparsity_score};
use softseg::models::ModelWeights;
use softseg::palette::{extract_palette, Palette, PaletteSource};
use softseg::raster::{Image, Rgb};
use softseg::tensor::gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GradFragment};
use softseg::tensor::{
    activation, activation_backward, batchnorm_backward, batchnorm_forward, conv2d, conv2d_backward, deconv2d,
    deconv2d_backward, Activation, BnMode, LayerKind, LayerParams, Tensor,
};
use softseg::trainer::synthetic::{scenes, SceneParams};
use softseg::trainer::{batch_loss, evaluate_batch, forward_backward, train_on, Batch, Dataset, LossWeights, TrainConfig, TrainOutcome};
use softseg::unmixer::{grid_search_alphas, models_from_palette, unmix_image, unmix_pixel, UnmixConfig};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_color(r: &mut ChaCha8Rng) -> Rgb {
    [r.random(), r.random(), r.random()]
}

fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::new(w, h, (0..w * h).map(|_| random_color(r)).collect()).unwrap()
}

fn random_alphas(r: &mut ChaCha8Rng, k: usize, w: usize, h: usize) -> AlphaStack {
    let data = (0..k * w * h).map(|_| r.random::<f32>().powi(3)).collect();
    normalize_alpha(&AlphaStack::new(k, w, h, data, false).unwrap())
}

// ---------------------------------------------------------------- gradients

struct LayerFragment {
    params: LayerParams,
    input: Tensor,
    projection: Tensor,
    mode: BnMode,
}

impl LayerFragment {
    fn with(&self, t: &[Tensor]) -> LayerParams {
        let mut p = self.params.clone();
        p.weight = t[1].clone();
        p.bias = t[2].clone();
        p
    }
}

impl GradFragment for LayerFragment {
    fn tensors(&self) -> Vec<(String, Tensor)> {
        vec![
            ("input".into(), self.input.clone()),
            ("weight".into(), self.params.weight.clone()),
            ("bias".into(), self.params.bias.clone()),
        ]
    }

    fn objective(&self, t: &[Tensor]) -> f64 {
        let p = self.with(t);
        let out = match p.kind {
            LayerKind::Conv => conv2d(&t[0], &p).unwrap(),
            LayerKind::Deconv => deconv2d(&t[0], &p).unwrap(),
            LayerKind::BatchNorm => batchnorm_forward(&t[0], &p, self.mode).unwrap().0,
        };
        out.dot(&self.projection).unwrap()
    }

    fn gradients(&self, t: &[Tensor]) -> Vec<Tensor> {
        let p = self.with(t);
        match p.kind {
            LayerKind::Conv | LayerKind::Deconv => {
                let g = if p.kind == LayerKind::Conv {
                    conv2d_backward(&t[0], &p, &self.projection)
                } else {
                    deconv2d_backward(&t[0], &p, &self.projection)
                }
                .unwrap();
                vec![g.input, g.weight, g.bias]
            }
            LayerKind::BatchNorm => {
                let (_, cache) = batchnorm_forward(&t[0], &p, self.mode).unwrap();
                let g = batchnorm_backward(&self.projection, &cache, &p).unwrap();
                vec![g.input, g.weight, g.bias]
            }
        }
    }
}

struct ActivationFragment {
    kind: Activation,
    input: Tensor,
    projection: Tensor,
}

impl GradFragment for ActivationFragment {
    fn tensors(&self) -> Vec<(String, Tensor)> {
        vec![("input".into(), self.input.clone())]
    }
    fn objective(&self, t: &[Tensor]) -> f64 {
        self.objective_with_regime(t).0
    }
    fn objective_with_regime(&self, t: &[Tensor]) -> (f64, Option<Vec<bool>>) {
        let y = activation(&t[0], self.kind);
        let signs = t[0].data().iter().map(|&v| v > 0.0).collect();
        (y.dot(&self.projection).unwrap(), Some(signs))
    }
    fn gradients(&self, t: &[Tensor]) -> Vec<Tensor> {
        let y = activation(&t[0], self.kind);
        vec![activation_backward(&t[0], &y, &self.projection, self.kind).unwrap()]
    }
}

#[derive(Clone, Copy)]
enum Component {
    Reconstruction,
    Alpha,
    Distance,
}

struct LossFragment {
    component: Component,
    alphas: Tensor,
    colors: Tensor,
    palettes: Vec<Palette>,
    images: Tensor,
}

impl LossFragment {
    fn run(&self, t: &[Tensor], w: LossWeights) -> softseg::trainer::BatchLoss {
        let p: Vec<&Palette> = self.palettes.iter().collect();
        batch_loss(&t[0], &t[1], &p, &self.images, w).unwrap()
    }
}

impl GradFragment for LossFragment {
    fn tensors(&self) -> Vec<(String, Tensor)> {
        vec![("alphas".into(), self.alphas.clone()), ("colors".into(), self.colors.clone())]
    }
    fn objective(&self, t: &[Tensor]) -> f64 {
        self.objective_with_regime(t).0
    }
    fn objective_with_regime(&self, t: &[Tensor]) -> (f64, Option<Vec<bool>>) {
        let l = self.run(t, LossWeights::default());
        let v = match self.component {
            Component::Reconstruction => l.values.reconstruction,
            Component::Alpha => l.values.alpha,
            Component::Distance => l.values.distance,
        };
        (v, Some(l.regime))
    }
    fn gradients(&self, t: &[Tensor]) -> Vec<Tensor> {
        // Gradients are linear in the weights, so each loss is a difference.
        let base = self.run(t, LossWeights { lambda_a: 0.0, lambda_d: 0.0 });
        let with = match self.component {
            Component::Reconstruction => return vec![base.grad_alpha, base.grad_colors],
            Component::Alpha => LossWeights { lambda_a: 1.0, lambda_d: 0.0 },
            Component::Distance => LossWeights { lambda_a: 0.0, lambda_d: 1.0 },
        };
        let full = self.run(t, with);
        let diff = |a: &Tensor, b: &Tensor| {
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Tensor::from_vec(a.shape(), data).unwrap()
        };
        vec![diff(&full.grad_alpha, &base.grad_alpha), diff(&full.grad_colors, &base.grad_colors)]
    }
}

struct PipelineFragment {
    weights: ModelWeights,
    batch: Batch,
}

impl PipelineFragment {
    fn with(&self, t: &[Tensor]) -> ModelWeights {
        let mut m = self.weights.clone();
        for (p, v) in m.parameters_mut().into_iter().zip(t) {
            *p = v.clone();
        }
        m
    }
}

impl GradFragment for PipelineFragment {
    fn tensors(&self) -> Vec<(String, Tensor)> {
        self.weights
            .parameter_names()
            .into_iter()
            .zip(self.weights.parameters())
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }
    fn objective(&self, t: &[Tensor]) -> f64 {
        self.objective_with_regime(t).0
    }
    fn objective_with_regime(&self, t: &[Tensor]) -> (f64, Option<Vec<bool>>) {
        let (l, r) = evaluate_batch(&self.with(t), &self.batch, LossWeights::default(), BnMode::Train).unwrap();
        (l.total, Some(r))
    }
    fn gradients(&self, t: &[Tensor]) -> Vec<Tensor> {
        forward_backward(&self.with(t), &self.batch, LossWeights::default(), BnMode::Train)
            .unwrap()
            .grads
    }
}

fn pipeline_batch(seed: u64) -> Batch {
    let mut r = rng(seed);
    let (n, size, k) = (4, 8, 2);
    let images: Vec<Image> = (0..n)
        .map(|_| {
            let a = random_color(&mut r);
            let b = random_color(&mut r);
            let noise: Vec<f32> = (0..size * size * 3).map(|_| r.random::<f32>() * 0.05).collect();
            Image::from_fn(size, size, |x, y| {
                let base = if x + y < size { a } else { b };
                let i = (y * size + x) * 3;
                [0, 1, 2].map(|c| (base[c] * 0.9 + noise[i + c]).min(1.0))
            })
        })
        .collect();
    let palettes = images.iter().map(|img| extract_palette(img, k, 0).unwrap()).collect();
    Batch::new(images, palettes).unwrap()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut results: Vec<(String, GradCheckReport)> = Vec::new();
    let strict = GradCheckOptions::default();

    for stride in [1usize, 2] {
        let mut params = LayerParams::conv(3, 4, stride, &mut r);
        params.bias = Tensor::randn(&[4], 0.1, &mut r);
        let frag = LayerFragment {
            params,
            input: Tensor::randn(&[2, 3, 8, 8], 1.0, &mut r),
            projection: Tensor::randn(&[2, 4, 8 / stride, 8 / stride], 1.0, &mut r),
            mode: BnMode::Train,
        };
        results.push((format!("conv stride {stride}"), grad_check(&frag, &strict)));
    }
    let mut params = LayerParams::deconv(4, 3, 2, &mut r);
    params.bias = Tensor::randn(&[3], 0.1, &mut r);
    let frag = LayerFragment {
        params,
        input: Tensor::randn(&[2, 4, 4, 4], 1.0, &mut r),
        projection: Tensor::randn(&[2, 3, 8, 8], 1.0, &mut r),
        mode: BnMode::Train,
    };
    results.push(("deconv".into(), grad_check(&frag, &strict)));
    for mode in [BnMode::Train, BnMode::Eval] {
        let mut params = LayerParams::batchnorm(3);
        params.weight = Tensor::uniform(&[3], 0.5, 1.5, &mut r);
        params.bias = Tensor::randn(&[3], 0.3, &mut r);
        params.running_mean = Tensor::randn(&[3], 0.3, &mut r);
        params.running_var = Tensor::uniform(&[3], 0.5, 2.0, &mut r);
        let frag = LayerFragment {
            params,
            input: Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r),
            projection: Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r),
            mode,
        };
        results.push((format!("batchnorm {mode:?}"), grad_check(&frag, &strict)));
    }
    for kind in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
        let frag = ActivationFragment {
            kind,
            input: Tensor::randn(&[2, 3, 8, 8], 2.0, &mut r),
            projection: Tensor::randn(&[2, 3, 8, 8], 1.0, &mut r),
        };
        results.push((format!("{kind:?}"), grad_check(&frag, &strict)));
    }
    let palettes = vec![
        Palette::new((0..3).map(|_| random_color(&mut r)).collect(), PaletteSource::Manual).unwrap(),
        Palette::new((0..3).map(|_| random_color(&mut r)).collect(), PaletteSource::Manual).unwrap(),
    ];
    let alphas = Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
    let colors = Tensor::uniform(&[2, 9, 8, 8], 0.0, 1.0, &mut r);
    let images = Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
    for (name, component) in [
        ("L_r", Component::Reconstruction),
        ("L_a", Component::Alpha),
        ("L_d", Component::Distance),
    ] {
        let frag = LossFragment {
            component,
            alphas: alphas.clone(),
            colors: colors.clone(),
            palettes: palettes.clone(),
            images: images.clone(),
        };
        results.push((name.into(), grad_check(&frag, &strict)));
    }

    let mut failures: Vec<String> = results
        .iter()
        .filter(|(_, rep)| rep.max_rel_error.is_nan() || rep.max_rel_error >= 1e-3)
        .map(|(n, rep)| format!("{n} {:.2e}", rep.max_rel_error))
        .collect();
    let worst_layer = results.iter().map(|(_, rep)| rep.max_rel_error).fold(0.0, f64::max);

    let frag = PipelineFragment {
        weights: ModelWeights::new(2, 7).unwrap(),
        batch: pipeline_batch(8),
    };
    let e2e = grad_check(
        &frag,
        &GradCheckOptions {
            max_entries: Some(12),
            ..Default::default()
        },
    );
    if e2e.global_rel_error.is_nan() || e2e.global_rel_error >= 5e-3 {
        failures.push(format!("end-to-end {:.2e}", e2e.global_rel_error));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 120.0 {
        failures.push(format!("took {secs:.0}s"));
    }
    verdict(
        failures.is_empty(),
        format!(
            "{} fragments, worst layer/loss rel err {worst_layer:.2e} (< 1e-3), end-to-end 8×8 K=2 rel err {:.2e} (< 5e-3), {secs:.1}s (< 120s){}",
            results.len(),
            e2e.global_rel_error,
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

// -------------------------------------------------------------- constraints

fn constraint_suite() -> Outcome {
    let mut r = rng(2);
    let mut worst_sum = 0.0f32;
    let mut range_violations = 0usize;
    for i in 0..50 {
        let k = r.random_range(2..=7);
        let (w, h) = (r.random_range(5..40), r.random_range(5..40));
        let img = random_image(&mut r, w, h);
        let palette = Palette::manual((0..k).map(|_| random_color(&mut r)).collect()).unwrap();
        let weights = ModelWeights::new(k, i).unwrap();
        let stack = decompose(&img, &palette, &weights, &DecomposeOptions::default()).unwrap();
        worst_sum = worst_sum.max(stack.alphas().max_sum_deviation());
        range_violations += stack.alphas().data().iter().filter(|a| !(0.0..=1.0).contains(*a)).count();
        range_violations += stack.colors().iter().flatten().filter(|c| !(0.0..=1.0).contains(*c)).count();
    }
    let mut worst_idem = 0.0f32;
    let mut worst_scale = 0.0f32;
    for _ in 0..50 {
        let k = r.random_range(2..=7);
        let (w, h) = (r.random_range(1..12), r.random_range(1..12));
        let mut data: Vec<f32> = (0..k * w * h).map(|_| r.random::<f32>()).collect();
        for p in 0..w * h {
            if r.random::<f32>() < 0.1 {
                for i in 0..k {
                    data[i * w * h + p] = 0.0;
                }
            }
        }
        let raw = AlphaStack::new(k, w, h, data.clone(), false).unwrap();
        let once = normalize_alpha(&raw);
        let twice = normalize_alpha(&once);
        let diff = |a: &AlphaStack, b: &AlphaStack| {
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
        };
        worst_idem = worst_idem.max(diff(&once, &twice));
        let s = r.random_range(0.05f32..1.0);
        let scaled = AlphaStack::new(k, w, h, data.iter().map(|v| v * s).collect(), false).unwrap();
        worst_scale = worst_scale.max(diff(&once, &normalize_alpha(&scaled)));
    }
    verdict(
        worst_sum <= 1e-6 && range_violations == 0 && worst_idem <= 1e-6 && worst_scale <= 1e-6,
        format!(
            "50 decompositions: max |Σα−1| {worst_sum:.2e} (≤ 1e-6), {range_violations} out-of-range values; normalize idempotence {worst_idem:.2e}, scale invariance {worst_scale:.2e} (≤ 1e-6)"
        ),
    )
}

fn oracle_residue() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f32;
    for _ in 0..50 {
        let k = r.random_range(1..=8);
        let (w, h) = (r.random_range(1..20), r.random_range(1..20));
        let img = random_image(&mut r, w, h);
        let palette = Palette::manual((0..k).map(|_| random_color(&mut r)).collect()).unwrap();
        let alphas = random_alphas(&mut r, k, w, h);
        let colors: Vec<Rgb> = (0..k).flat_map(|_| img.pixels().to_vec()).collect();
        let stack = LayerStack::new(palette, alphas, colors).unwrap();
        worst = worst.max(compose(&stack).max_abs_diff(&img).unwrap());
    }
    verdict(worst <= 1e-6, format!("50 stacks, max composite error {worst:.2e} (≤ 1e-6)"))
}

// ------------------------------------------------------------------ unmixer

fn unmix_vs_grid() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let pinned = UnmixConfig {
        pin_colors: true,
        ..Default::default()
    };
    let mut worst_ratio = 0.0f64;
    let mut worse = 0usize;
    let mut min_exact = 1.0f32;
    for k in [2usize, 3] {
        let palette = Palette::manual((0..k).map(|_| random_color(&mut r)).collect()).unwrap();
        let models = models_from_palette(&palette);
        for _ in 0..200 {
            let c = random_color(&mut r);
            let got = unmix_pixel(c, &models, &pinned).unwrap();
            let (_, grid) = grid_search_alphas(c, &models, &pinned, 0.01);
            let ratio = got.objective / grid.max(1e-12);
            worst_ratio = worst_ratio.max(ratio);
            if got.objective > grid * 1.02 + 1e-9 {
                worse += 1;
            }
        }
        let img = Image::new(k, 1, palette.colors().to_vec()).unwrap();
        let out = unmix_image(&img, &models, &UnmixConfig::default()).unwrap();
        for j in 0..k {
            min_exact = min_exact.min(out.layers.alphas().get(j, j));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worse == 0 && min_exact >= 0.99 && secs < 300.0,
        format!(
            "K∈{{2,3}} × 200 pixels: {worse} above grid by > 2%, worst ratio {worst_ratio:.4}; exact-palette min α_j {min_exact:.4} (≥ 0.99); {secs:.1}s (< 300s)"
        ),
    )
}

fn sparsity_bounds() -> Outcome {
    let mut r = rng(5);
    let mut worst_one_hot = 0.0f64;
    for k in 1..=8 {
        let labels: Vec<usize> = (0..64).map(|_| r.random_range(0..k)).collect();
        worst_one_hot = worst_one_hot.max(sparsity_score(&AlphaStack::one_hot(k, 8, 8, &labels).unwrap()).abs());
    }
    let uniform7 = sparsity_score(&AlphaStack::uniform(7, 8, 8));
    let mut worst_uniform = 0.0f64;
    for k in 1..=8 {
        worst_uniform = worst_uniform.max((sparsity_score(&AlphaStack::uniform(k, 5, 3)) - (k - 1) as f64).abs());
    }
    verdict(
        worst_one_hot == 0.0 && uniform7 == 6.0 && worst_uniform < 1e-9,
        format!("one-hot max {worst_one_hot:e} (= 0); uniform K=7 {uniform7} (= 6.0); uniform K−1 max error {worst_uniform:.1e}"),
    )
}

// ------------------------------------------------------------------- layers

fn merge_identity() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f32;
    let mut merged_layers = 0usize;
    for _ in 0..100 {
        let distinct = r.random_range(1..=5);
        let base: Vec<Rgb> = (0..distinct).map(|_| random_color(&mut r)).collect();
        let mut colors = base.clone();
        for _ in 0..r.random_range(1..=3) {
            colors.push(base[r.random_range(0..distinct)]);
        }
        for i in (1..colors.len()).rev() {
            colors.swap(i, r.random_range(0..=i));
        }
        let k = colors.len();
        let (w, h) = (r.random_range(1..10), r.random_range(1..10));
        let alphas = random_alphas(&mut r, k, w, h);
        let layer_colors = (0..k * w * h).map(|_| random_color(&mut r)).collect();
        let stack = LayerStack::new(Palette::manual(colors).unwrap(), alphas, layer_colors).unwrap();
        let merged = merge_duplicate_layers(&stack).unwrap();
        merged_layers += stack.k() - merged.k();
        worst = worst.max(compose(&merged).max_abs_diff(&compose(&stack)).unwrap());
    }
    verdict(
        worst <= 1e-6,
        format!("100 stacks, {merged_layers} duplicate layers merged, max composite change {worst:.2e} (≤ 1e-6)"),
    )
}

/// Explicit window loops and Gaussian elimination.
fn naive_guided(alpha: &[f32], guide: &Image, r: usize, eps: f64) -> Vec<f32> {
    let (w, h) = (guide.width(), guide.height());
    let window = |x: usize, y: usize| {
        let xs = x.saturating_sub(r)..(x + r + 1).min(w);
        let ys = y.saturating_sub(r)..(y + r + 1).min(h);
        ys.flat_map(move |yy| xs.clone().map(move |xx| yy * w + xx))
    };
    let solve = |mut m: [[f64; 4]; 3]| {
        for col in 0..3 {
            let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
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
    let g = |i: usize, c: usize| guide.pixels()[i][c] as f64;
    let mut coeffs = vec![[0.0f64; 4]; w * h];
    for y in 0..h {
        for x in 0..w {
            let idx: Vec<usize> = window(x, y).collect();
            let n = idx.len() as f64;
            let mu: [f64; 3] = [0, 1, 2].map(|c| idx.iter().map(|&i| g(i, c)).sum::<f64>() / n);
            let pm = idx.iter().map(|&i| alpha[i] as f64).sum::<f64>() / n;
            let mut m = [[0.0; 4]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] = idx.iter().map(|&i| (g(i, a) - mu[a]) * (g(i, b) - mu[b])).sum::<f64>() / n;
                }
                m[a][a] += eps;
                m[a][3] = idx.iter().map(|&i| (g(i, a) - mu[a]) * (alpha[i] as f64 - pm)).sum::<f64>() / n;
            }
            let a = solve(m);
            coeffs[y * w + x] = [a[0], a[1], a[2], pm - a[0] * mu[0] - a[1] * mu[1] - a[2] * mu[2]];
        }
    }
    (0..w * h)
        .map(|p| {
            let idx: Vec<usize> = window(p % w, p / w).collect();
            let n = idx.len() as f64;
            let mc: [f64; 4] = [0, 1, 2, 3].map(|j| idx.iter().map(|&i| coeffs[i][j]).sum::<f64>() / n);
            let q = mc[0] * g(p, 0) + mc[1] * g(p, 1) + mc[2] * g(p, 2) + mc[3];
            (q as f32).clamp(0.0, 1.0)
        })
        .collect()
}

fn guided_filter_reference() -> Outcome {
    let mut r = rng(7);
    let mut errs = Vec::new();
    for radius in [2usize, 4, 8] {
        let guide = random_image(&mut r, 64, 64);
        let alpha: Vec<f32> = (0..64 * 64).map(|_| r.random()).collect();
        let p = GuidedFilterParams { radius, eps: 1e-4 };
        let fast = guided_filter(&alpha, &guide, p).unwrap();
        let slow = naive_guided(&alpha, &guide, radius, p.eps);
        errs.push(fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max));
    }
    verdict(
        errs.iter().all(|&e| e <= 1e-5),
        format!("64×64, max abs error r=2 {:.2e}, r=4 {:.2e}, r=8 {:.2e} (≤ 1e-5)", errs[0], errs[1], errs[2]),
    )
}

// -------------------------------------------------------------- performance

fn linear_scaling() -> Outcome {
    let weights = ModelWeights::new(7, 0).unwrap();
    let report = bench_decompose(&weights, &[512, 1024], 2).unwrap();
    let ratio = report.ratio(512, 1024).unwrap();

    let img = scenes(
        &SceneParams {
            width: 256,
            height: 256,
            colors: 7,
            ..Default::default()
        },
        1,
        9,
    )
    .remove(0);
    let start = Instant::now();
    let palette = extract_palette(&img, 7, 0).unwrap();
    decompose(&img, &palette, &weights, &DecomposeOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        (3.0..=5.5).contains(&ratio) && secs < 5.0,
        format!(
            "512² {:.2}s → 1024² {:.2}s, ratio {ratio:.2} (in [3.0, 5.5]); 256² palette + decompose {secs:.2}s (< 5s)",
            report.rows[0].seconds, report.rows[1].seconds
        ),
    )
}

// ----------------------------------------------------------------- training

struct ToyRun {
    outcome: TrainOutcome,
    seconds: f64,
    mse: f64,
    sparsity: f64,
    color_variance: f64,
}

fn toy_dataset() -> Dataset {
    Dataset::from_images(scenes(&SceneParams::default(), 100, 0), 64).unwrap()
}

fn toy_config(lambda_d: f32, steps: usize) -> TrainConfig {
    TrainConfig {
        k: 4,
        steps,
        lambda_d,
        checkpoint_interval: 0,
        deterministic: true,
        ..Default::default()
    }
}

fn toy_run(data: &Dataset, config: &TrainConfig) -> ToyRun {
    let start = Instant::now();
    let outcome = train_on(config, data, |row| {
        if row.step % 250 == 0 {
            eprintln!("  λd={} step {:4} loss {:.4} ({:.0}s)", config.lambda_d, row.step, row.loss_total, row.seconds);
        }
    })
    .unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let (mut mse, mut sparsity, mut var) = (0.0, 0.0, 0.0);
    for img in data.images() {
        let palette = extract_palette(img, config.k, 0).unwrap();
        let stack = decompose(img, &palette, &outcome.weights, &DecomposeOptions::default()).unwrap();
        mse += reconstruction_mse(img, &compose(&stack)).unwrap();
        sparsity += sparsity_score(stack.alphas());
        var += color_variance(&stack);
    }
    let n = data.len() as f64;
    ToyRun {
        outcome,
        seconds,
        mse: mse / n,
        sparsity: sparsity / n,
        color_variance: var / n,
    }
}

fn toy_training(data: &Dataset, run: &ToyRun) -> Outcome {
    let log = &run.outcome.log;
    if run.outcome.diverged_at.is_some() || log.len() != 2000 {
        return Err(format!("stopped after {} steps", log.len()));
    }
    let initial = log[0].loss_total;
    let tail = &log[log.len() - 50..];
    let final_loss = tail.iter().map(|r| r.loss_total).sum::<f64>() / tail.len() as f64;
    let repeat = train_on(&toy_config(0.5, 100), data, |_| {}).unwrap();
    let same = |a: &softseg::trainer::LogRow, b: &softseg::trainer::LogRow| {
        (a.step, a.loss_total, a.loss_r, a.loss_a, a.loss_d) == (b.step, b.loss_total, b.loss_r, b.loss_a, b.loss_d)
    };
    let deterministic = repeat.log.len() == 100 && repeat.log.iter().zip(log).all(|(a, b)| same(a, b));
    let ok = final_loss <= 0.2 * initial && run.mse < 0.01 && run.sparsity < 2.5 && deterministic && run.seconds <= 1800.0;
    verdict(
        ok,
        format!(
            "L_total {initial:.4} → {final_loss:.4} (last-50 mean, ratio {:.3} ≤ 0.2); train MSE {:.5} (< 0.01); sparsity {:.3} (< 2.5); repeat of 100 steps {}; {:.0}s (≤ 1800s)",
            final_loss / initial,
            run.mse,
            run.sparsity,
            if deterministic { "identical" } else { "DIFFERS" },
            run.seconds
        ),
    )
}

fn ablation(default: &ToyRun, without: &ToyRun) -> Outcome {
    verdict(
        without.color_variance > default.color_variance,
        format!(
            "color variance λd=0 {:.5} vs λd=0.5 {:.5} (expect greater); MSE {:.5} vs {:.5}",
            without.color_variance, default.color_variance, without.mse, default.mse
        ),
    )
}

// --------------------------------------------------------------------- main

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}")
            }
        }
    };

    let quick: [Check; 8] = [
        ("gradient_suite", gradient_suite),
        ("constraint_suite", constraint_suite),
        ("oracle_residue_identity", oracle_residue),
        ("unmix_vs_grid_search", unmix_vs_grid),
        ("sparsity_bounds", sparsity_bounds),
        ("merge_identity", merge_identity),
        ("guided_filter_reference", guided_filter_reference),
        ("linear_scaling", linear_scaling),
    ];
    for (name, check) in quick {
        if wanted(name) {
            report(name, check());
        }
    }

    let (toy, abl) = (wanted("toy_training"), wanted("ablation_direction"));
    if toy || abl {
        let data = toy_dataset();
        let default = toy_run(&data, &toy_config(0.5, 2000));
        if toy {
            report("toy_training", toy_training(&data, &default));
        }
        if abl {
            let without = toy_run(&data, &toy_config(0.0, 2000));
            report("ablation_direction", ablation(&default, &without));
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
