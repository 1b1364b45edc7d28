use super::conv::{LayerKind, LayerParams};
use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

/// What [`batchnorm_backward`] needs from the forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub mode: BnMode,
    /// Normalized input before the affine transform.
    pub x_hat: Tensor,
    pub mean: Vec<f32>,
    /// Biased batch variance (train) or running variance (eval).
    pub var: Vec<f32>,
    pub inv_std: Vec<f32>,
    /// Elements per channel, `N·H·W`.
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BnGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, params: &LayerParams, op: &'static str) -> Result<(usize, usize, usize)> {
    if params.kind != LayerKind::BatchNorm {
        return Err(Error::InvalidArgument(format!(
            "{op} called with {:?} parameters",
            params.kind
        )));
    }
    let (n, c, h, w) = input.dims4()?;
    for (name, t) in [
        ("weight", &params.weight),
        ("bias", &params.bias),
        ("running_mean", &params.running_mean),
        ("running_var", &params.running_var),
    ] {
        if t.len() != c {
            return Err(Error::dim(
                op,
                format!("{name} has {} entries for {c} channels", t.len()),
            ));
        }
    }
    Ok((n, c, h * w))
}

/// Batch normalization forward pass. Running statistics are left untouched;
/// see [`update_running_stats`].
pub fn batchnorm_forward(
    input: &Tensor,
    params: &LayerParams,
    mode: BnMode,
) -> Result<(Tensor, BnCache)> {
    let (n, c, hw) = check(input, params, "batchnorm")?;
    let count = n * hw;
    let x = input.data();
    let (mean, var) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batchnorm in train mode needs at least 2 values per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            for ch in 0..c {
                let mut s = 0.0f64;
                for b in 0..n {
                    s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>();
                }
                let m = s / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    sq += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = m as f32;
                var[ch] = (sq / count as f64) as f32;
            }
            (mean, var)
        }
        BnMode::Eval => (
            params.running_mean.data().to_vec(),
            params.running_var.data().to_vec(),
        ),
    };
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let gamma = params.weight.data();
    let beta = params.bias.data();
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    {
        let xh = x_hat.data_mut();
        let o = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in range {
                    let v = (x[i] - mean[ch]) * inv_std[ch];
                    xh[i] = v;
                    o[i] = gamma[ch] * v + beta[ch];
                }
            }
        }
    }
    Ok((
        out,
        BnCache {
            mode,
            x_hat,
            mean,
            var,
            inv_std,
            count,
        },
    ))
}

/// Exponential moving update of the running statistics from a train-mode
/// cache. The running variance uses the unbiased batch estimate.
pub fn update_running_stats(params: &mut LayerParams, cache: &BnCache) {
    if cache.mode != BnMode::Train {
        return;
    }
    let correction = cache.count as f32 / (cache.count as f32 - 1.0);
    for (r, m) in params.running_mean.data_mut().iter_mut().zip(&cache.mean) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
    }
    for (r, v) in params.running_var.data_mut().iter_mut().zip(&cache.var) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction;
    }
}

/// Forward pass that also updates running statistics in train mode.
pub fn batchnorm(input: &Tensor, params: &mut LayerParams, mode: BnMode) -> Result<Tensor> {
    let (out, cache) = batchnorm_forward(input, params, mode)?;
    update_running_stats(params, &cache);
    Ok(out)
}

pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    params: &LayerParams,
) -> Result<BnGrads> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::dim(
            "batchnorm_backward",
            format!("{:?} vs {:?}", grad_out.shape(), cache.x_hat.shape()),
        ));
    }
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let gamma = params.weight.data();
    let mut grad_gamma = vec![0.0f32; c];
    let mut grad_beta = vec![0.0f32; c];
    for ch in 0..c {
        let mut sg = 0.0f64;
        let mut sgx = 0.0f64;
        for b in 0..n {
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                sg += g[i] as f64;
                sgx += g[i] as f64 * xh[i] as f64;
            }
        }
        grad_beta[ch] = sg as f32;
        grad_gamma[ch] = sgx as f32;
    }
    let mut grad_in = Tensor::zeros(grad_out.shape());
    let gi = grad_in.data_mut();
    let m = cache.count as f32;
    for ch in 0..c {
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                gi[i] = match cache.mode {
                    BnMode::Eval => scale * g[i],
                    BnMode::Train => {
                        scale * (g[i] - grad_beta[ch] / m - xh[i] * grad_gamma[ch] / m)
                    }
                };
            }
        }
    }
    Ok(BnGrads {
        input: grad_in,
        weight: Tensor::from_vec(&[c], grad_gamma)?,
        bias: Tensor::from_vec(&[c], grad_beta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check, GradCheckOptions, GradFragment};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_outputs_the_shift() {
        let mut p = LayerParams::batchnorm(2);
        p.weight = Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap();
        p.bias = Tensor::from_vec(&[2], vec![0.25, 0.75]).unwrap();
        let mut x = Tensor::zeros(&[2, 2, 3, 3]);
        for b in 0..2 {
            x.plane_mut(b, 0).fill(5.0);
            x.plane_mut(b, 1).fill(-1.5);
        }
        let (y, _) = batchnorm_forward(&x, &p, BnMode::Train).unwrap();
        assert!(y.is_finite());
        for b in 0..2 {
            assert!(y.plane(b, 0).iter().all(|&v| v == 0.25));
            assert!(y.plane(b, 1).iter().all(|&v| v == 0.75));
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = Tensor::randn(&[3, 4, 5, 5], 2.0, &mut rng);
        for v in x.data_mut() {
            *v += 1.5;
        }
        let (_, cache) = batchnorm_forward(&x, &LayerParams::batchnorm(4), BnMode::Train).unwrap();
        let (n, c, h, w) = x.dims4().unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..n)
                .flat_map(|b| cache.x_hat.plane(b, ch).to_vec())
                .map(|v| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / (n * h * w) as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = LayerParams::batchnorm(1);
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        batchnorm(&x, &mut p, BnMode::Train).unwrap();
        // mean 2.5, unbiased variance 5/3
        assert!((p.running_mean.data()[0] - 0.25).abs() < 1e-6);
        assert!((p.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
        assert!(p.running_var.data()[0] > 0.0);
        let before = p.clone();
        batchnorm(&x, &mut p, BnMode::Eval).unwrap();
        assert_eq!(before, p);
    }

    #[test]
    fn train_mode_needs_two_values_per_channel() {
        let mut p = LayerParams::batchnorm(1);
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(batchnorm(&x, &mut p, BnMode::Train).is_err());
        assert!(batchnorm(&x, &mut p, BnMode::Eval).is_ok());
    }

    struct BnFragment {
        params: LayerParams,
        input: Tensor,
        projection: Tensor,
        mode: BnMode,
    }

    impl GradFragment for BnFragment {
        fn tensors(&self) -> Vec<(String, Tensor)> {
            vec![
                ("input".into(), self.input.clone()),
                ("gamma".into(), self.params.weight.clone()),
                ("beta".into(), self.params.bias.clone()),
            ]
        }

        fn objective(&self, t: &[Tensor]) -> f64 {
            let mut p = self.params.clone();
            p.weight = t[1].clone();
            p.bias = t[2].clone();
            let (y, _) = batchnorm_forward(&t[0], &p, self.mode).unwrap();
            y.dot(&self.projection).unwrap()
        }

        fn gradients(&self, t: &[Tensor]) -> Vec<Tensor> {
            let mut p = self.params.clone();
            p.weight = t[1].clone();
            p.bias = t[2].clone();
            let (_, cache) = batchnorm_forward(&t[0], &p, self.mode).unwrap();
            let g = batchnorm_backward(&self.projection, &cache, &p).unwrap();
            vec![g.input, g.weight, g.bias]
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for mode in [BnMode::Train, BnMode::Eval] {
            let mut params = LayerParams::batchnorm(3);
            params.weight = Tensor::uniform(&[3], 0.5, 1.5, &mut rng);
            params.bias = Tensor::randn(&[3], 0.3, &mut rng);
            params.running_mean = Tensor::randn(&[3], 0.3, &mut rng);
            params.running_var = Tensor::uniform(&[3], 0.5, 2.0, &mut rng);
            let frag = BnFragment {
                params,
                input: Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng),
                projection: Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng),
                mode,
            };
            let report = grad_check(&frag, &GradCheckOptions::default());
            assert!(report.passed, "{mode:?}: {report:?}");
        }
    }
}
