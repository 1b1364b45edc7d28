//! Central finite-difference verification of hand-written gradients.
//!
//! The error for one tensor is `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)` over the
//! checked entries, where `a` is the analytic gradient and `n` the numerical
//! one. A fragment passes when the largest per-tensor error is below the
//! tolerance.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Something with differentiable scalar output and an analytic gradient.
pub trait GradFragment {
    /// Named tensors (inputs and parameters) the check perturbs.
    fn tensors(&self) -> Vec<(String, Tensor)>;

    /// Scalar objective evaluated at the given tensors, in `tensors()` order.
    fn objective(&self, tensors: &[Tensor]) -> f64;

    /// Analytic gradient of [`GradFragment::objective`] for each tensor.
    fn gradients(&self, tensors: &[Tensor]) -> Vec<Tensor>;

    /// Objective together with a fingerprint of every non-differentiable
    /// branch taken (ReLU signs, clip and absolute-value cases). Entries
    /// whose perturbation changes the fingerprint straddle a kink, where
    /// central differences are meaningless, and are not checked.
    fn objective_with_regime(&self, tensors: &[Tensor]) -> (f64, Option<Vec<bool>>) {
        (self.objective(tensors), None)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f32,
    pub tolerance: f64,
    pub floor: f64,
    /// Check at most this many randomly chosen entries per tensor.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-3,
            floor: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Sampled entries dropped because they straddle a kink.
    pub skipped: usize,
    pub rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    /// The same norm ratio over all checked entries of all tensors at once.
    pub global_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn grad_check<F: GradFragment + ?Sized>(fragment: &F, opts: &GradCheckOptions) -> GradCheckReport {
    let named = fragment.tensors();
    let mut tensors: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
    let analytic = fragment.gradients(&tensors);
    let (_, base_regime) = fragment.objective_with_regime(&tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut checks = Vec::with_capacity(named.len());
    let (mut all_diff, mut all_a, mut all_n) = (0.0f64, 0.0f64, 0.0f64);
    for (ti, (name, original)) in named.iter().enumerate() {
        let len = original.len();
        let limit = opts.max_entries.unwrap_or(len).min(len);
        let order: Vec<usize> = if limit < len {
            sample(&mut rng, len, len).into_vec()
        } else {
            (0..len).collect()
        };
        let mut diff_sq = 0.0f64;
        let mut a_sq = 0.0f64;
        let mut n_sq = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut checked = 0;
        let mut skipped = 0;
        for &i in &order {
            if checked == limit {
                break;
            }
            let x0 = original.data()[i];
            tensors[ti].data_mut()[i] = x0 + h;
            let (plus, rp) = fragment.objective_with_regime(&tensors);
            tensors[ti].data_mut()[i] = x0 - h;
            let (minus, rm) = fragment.objective_with_regime(&tensors);
            tensors[ti].data_mut()[i] = x0;
            if rp != base_regime || rm != base_regime {
                skipped += 1;
                continue;
            }
            checked += 1;
            // Use the step actually representable in f32.
            let span = ((x0 + h) as f64) - ((x0 - h) as f64);
            let numeric = (plus - minus) / span;
            let a = analytic[ti].data()[i] as f64;
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
        }
        all_diff += diff_sq;
        all_a += a_sq;
        all_n += n_sq;
        let denom = a_sq.sqrt().max(n_sq.sqrt()).max(opts.floor);
        checks.push(TensorCheck {
            name: name.clone(),
            checked,
            skipped,
            rel_error: diff_sq.sqrt() / denom,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    GradCheckReport {
        passed: max_rel_error < opts.tolerance,
        tensors: checks,
        max_rel_error,
        global_rel_error: all_diff.sqrt() / all_a.sqrt().max(all_n.sqrt()).max(opts.floor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// f(x) = a·x for a fixed vector a.
    struct Linear {
        a: Tensor,
        x: Tensor,
    }

    impl GradFragment for Linear {
        fn tensors(&self) -> Vec<(String, Tensor)> {
            vec![("x".into(), self.x.clone())]
        }
        fn objective(&self, t: &[Tensor]) -> f64 {
            self.a.dot(&t[0]).unwrap()
        }
        fn gradients(&self, _t: &[Tensor]) -> Vec<Tensor> {
            vec![self.a.clone()]
        }
    }

    #[test]
    fn linear_map_is_exact_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frag = Linear {
            a: Tensor::randn(&[50], 1.0, &mut rng),
            x: Tensor::randn(&[50], 1.0, &mut rng),
        };
        let report = grad_check(&frag, &GradCheckOptions::default());
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(report.passed);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        struct Wrong;
        impl GradFragment for Wrong {
            fn tensors(&self) -> Vec<(String, Tensor)> {
                vec![("x".into(), Tensor::full(&[3], 0.7))]
            }
            fn objective(&self, t: &[Tensor]) -> f64 {
                t[0].data().iter().map(|&v| (v as f64).powi(2)).sum()
            }
            fn gradients(&self, t: &[Tensor]) -> Vec<Tensor> {
                vec![t[0].clone()] // missing factor of 2
            }
        }
        let report = grad_check(&Wrong, &GradCheckOptions::default());
        assert!(!report.passed);
        assert!((report.max_rel_error - 0.5).abs() < 1e-3);
    }

    #[test]
    fn sampling_limits_checked_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frag = Linear {
            a: Tensor::randn(&[100], 1.0, &mut rng),
            x: Tensor::randn(&[100], 1.0, &mut rng),
        };
        let opts = GradCheckOptions {
            max_entries: Some(7),
            ..Default::default()
        };
        let report = grad_check(&frag, &opts);
        assert_eq!(report.tensors[0].checked, 7);
    }

    #[test]
    fn entries_straddling_a_kink_are_skipped() {
        struct Abs;
        impl GradFragment for Abs {
            fn tensors(&self) -> Vec<(String, Tensor)> {
                vec![("x".into(), Tensor::from_vec(&[2], vec![0.0004, 0.5]).unwrap())]
            }
            fn objective(&self, t: &[Tensor]) -> f64 {
                self.objective_with_regime(t).0
            }
            fn objective_with_regime(&self, t: &[Tensor]) -> (f64, Option<Vec<bool>>) {
                let d = t[0].data();
                let value = d.iter().map(|v| v.abs() as f64).sum();
                (value, Some(d.iter().map(|v| *v > 0.0).collect()))
            }
            fn gradients(&self, t: &[Tensor]) -> Vec<Tensor> {
                vec![t[0].map(f32::signum)]
            }
        }
        let report = grad_check(&Abs, &GradCheckOptions::default());
        assert_eq!((report.tensors[0].checked, report.tensors[0].skipped), (1, 1));
        assert!(report.passed);
    }
}
