use super::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl OptimizerState {
    pub fn new(shapes: &[&[usize]], lr: f32, beta1: f32, beta2: f32, epsilon: f32) -> Self {
        OptimizerState {
            first_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second_moment: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step_count: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// A parameter tensor paired with its gradient.
pub struct Param<'a> {
    pub name: &'a str,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
}

/// One bias-corrected Adam update over all parameters.
///
/// The step is rejected before anything is modified if any gradient entry
/// is non-finite; the error names the offending parameter.
pub fn adam_step(params: &mut [Param<'_>], state: &mut OptimizerState) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} parameters but optimizer tracks {}",
                params.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if p.value.shape() != p.grad.shape() || p.value.shape() != state.first_moment[i].shape() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "parameter `{}`: value {:?}, grad {:?}, state {:?}",
                    p.name,
                    p.value.shape(),
                    p.grad.shape(),
                    state.first_moment[i].shape()
                ),
            ));
        }
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                name: p.name.to_string(),
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f32) -> f32 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt() as f32;
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
