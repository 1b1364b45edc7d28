//! Dense NCHW tensors and the handful of layers the two predictors need.
//!
//! Every layer has a forward function and a hand-written backward function.
//! There is no autograd tape: callers keep whatever the backward pass needs
//! (inputs, pre-activations, batch statistics) in their own caches.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod gemm;
pub mod gradcheck;

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use activation::{activation, activation_backward, Activation};
pub use adam::{adam_step, clip_global_norm, OptimizerState, Param};
pub use batchnorm::{
    batchnorm, batchnorm_backward, batchnorm_forward, update_running_stats, BnCache, BnGrads,
    BnMode, BN_EPS, BN_MOMENTUM,
};
pub use conv::{
    conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvGrads, LayerKind, LayerParams,
};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables rayon parallelism inside the kernels.
///
/// Kernels split work over independent batch items only, so results are
/// bitwise identical either way.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Runs `f(item_index, item_slice)` over consecutive `item_len` chunks.
pub(crate) fn for_each_item<F>(data: &mut [f32], item_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    if item_len == 0 {
        return;
    }
    if parallel_enabled() && data.len() > item_len {
        data.par_chunks_mut(item_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    } else {
        data.chunks_mut(item_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
}

/// Row-major dense tensor of `f32`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Samples i.i.d. normal entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Samples i.i.d. uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Returns `(N, C, H, W)` for a 4-d tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(
                "dims4",
                format!("expected a 4-d tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// One `H×W` plane of a 4-d tensor.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let (_, ch, h, w) = self.dims4().expect("plane() needs a 4-d tensor");
        let hw = h * w;
        let start = (n * ch + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let (_, ch, h, w) = self.dims4().expect("plane_mut() needs a 4-d tensor");
        let hw = h * w;
        let start = (n * ch + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Concatenates 4-d tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_channels", "no inputs"))?;
        let (n, _, h, w) = first.dims4()?;
        let mut channels = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(
                    "concat_channels",
                    format!("{:?} vs {:?}", first.shape, p.shape),
                ));
            }
            channels += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * channels * hw);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                data.extend_from_slice(&p.data[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        Tensor::from_vec(&[n, channels, h, w], data)
    }

    /// Splits a 4-d tensor along channels into pieces of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let (n, c, h, w) = self.dims4()?;
        if sizes.iter().sum::<usize>() != c {
            return Err(Error::dim(
                "split_channels",
                format!("sizes {sizes:?} do not add up to {c} channels"),
            ));
        }
        let hw = h * w;
        let mut out: Vec<Vec<f32>> = sizes
            .iter()
            .map(|&s| Vec::with_capacity(n * s * hw))
            .collect();
        for b in 0..n {
            let mut offset = b * c * hw;
            for (part, &s) in out.iter_mut().zip(sizes) {
                part.extend_from_slice(&self.data[offset..offset + s * hw]);
                offset += s * hw;
            }
        }
        out.into_iter()
            .zip(sizes)
            .map(|(d, &s)| Tensor::from_vec(&[n, s, h, w], d))
            .collect()
    }
}
