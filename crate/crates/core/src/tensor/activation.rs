use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    pub fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|v| kind.apply(v))
}

pub fn activation_backward(
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    kind: Activation,
) -> Result<Tensor> {
    if input.shape() != output.shape() || input.shape() != grad_out.shape() {
        return Err(Error::dim(
            "activation_backward",
            format!(
                "{:?}, {:?}, {:?}",
                input.shape(),
                output.shape(),
                grad_out.shape()
            ),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * kind.derivative(x, y))
        .collect();
    Tensor::from_vec(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn values_at_zero() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        for x in [0.1f32, 1.0, 42.0] {
            assert_eq!(Activation::Relu.apply(-x), 0.0);
        }
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let h = 1e-3f32;
        let fd = (sigmoid(h) - sigmoid(-h)) / (2.0 * h);
        assert!((Activation::Sigmoid.derivative(0.0, 0.5) - 0.25).abs() < 1e-7);
        assert!((fd - 0.25).abs() < 1e-4);
    }

    #[test]
    fn ranges_hold_for_extreme_inputs() {
        let x = Tensor::from_vec(&[4], vec![-80.0, -8.0, 8.0, 80.0]).unwrap();
        let s = activation(&x, Activation::Sigmoid);
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
        let t = activation(&x, Activation::Tanh);
        assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::randn(&[256], 2.0, &mut rng);
        let h = 1e-3f64;
        for kind in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
            let y = activation(&x, kind);
            let ones = Tensor::full(&[256], 1.0);
            let g = activation_backward(&x, &y, &ones, kind).unwrap();
            for (i, &xi) in x.data().iter().enumerate() {
                if kind == Activation::Relu && (xi as f64).abs() < 2.0 * h {
                    continue;
                }
                // Evaluate the closed form in f64 so the comparison tests the
                // derivative, not f32 rounding of the difference quotient.
                let f = |v: f64| match kind {
                    Activation::Relu => v.max(0.0),
                    Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                    Activation::Tanh => v.tanh(),
                };
                let fd = (f(xi as f64 + h) - f(xi as f64 - h)) / (2.0 * h);
                assert!(
                    (g.data()[i] as f64 - fd).abs() < 1e-4,
                    "{kind:?} at {xi}: {} vs {fd}",
                    g.data()[i]
                );
            }
        }
    }
}
