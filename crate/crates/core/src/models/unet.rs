//! The U-Net shared by both predictors.
//!
//! ```text
//! x ─ enc1 ─ enc2 ─ enc3 ─ dec1 ┬ dec2 ┬ dec3 ┬ fuse ─ head
//!      │      └───────────────────┘     │      │
//!      └────────────────────────────────┘      │
//! x[:3] ───────────────────────────────────────┘
//! ```
//!
//! Every block is a 3×3 convolution (stride 2 in the encoder, transposed
//! stride 2 in the decoder, stride 1 for `fuse`) followed by ReLU and
//! batchnorm. The head is a plain convolution with a sigmoid or tanh.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    activation, activation_backward, batchnorm_backward, batchnorm_forward, conv2d, conv2d_backward, deconv2d,
    deconv2d_backward, update_running_stats, Activation, BnCache, BnMode, LayerKind, LayerParams, Tensor,
};

pub const BLOCK_NAMES: [&str; 7] = ["enc1", "enc2", "enc3", "dec1", "dec2", "dec3", "fuse"];

/// Input side lengths must be multiples of this.
pub const SIZE_MULTIPLE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub conv: LayerParams,
    pub bn: LayerParams,
}

impl Block {
    fn conv<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Self {
        Block {
            conv: LayerParams::conv(c_in, c_out, stride, rng),
            bn: LayerParams::batchnorm(c_out),
        }
    }

    fn deconv<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Block {
            conv: LayerParams::deconv(c_in, c_out, 2, rng),
            bn: LayerParams::batchnorm(c_out),
        }
    }

    fn linear(&self, x: &Tensor) -> Result<Tensor> {
        match self.conv.kind {
            LayerKind::Deconv => deconv2d(x, &self.conv),
            _ => conv2d(x, &self.conv),
        }
    }

    fn forward(&self, x: Tensor, mode: BnMode) -> Result<(Tensor, BlockCache)> {
        let z = self.linear(&x)?;
        let a = activation(&z, Activation::Relu);
        let (y, bn) = batchnorm_forward(&a, &self.bn, mode)?;
        Ok((y, BlockCache { input: x, z, a, bn }))
    }

    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = self.linear(x)?;
        z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let (_, c, h, w) = z.dims4()?;
        let hw = h * w;
        let gamma = self.bn.weight.data();
        let beta = self.bn.bias.data();
        let mean = self.bn.running_mean.data();
        let var = self.bn.running_var.data();
        for (i, plane) in z.data_mut().chunks_mut(hw).enumerate() {
            let ch = i % c;
            let scale = gamma[ch] / (var[ch] + crate::tensor::BN_EPS).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            plane.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        Ok(z)
    }

    fn backward(&self, cache: &BlockCache, grad_out: &Tensor) -> Result<(Tensor, [Tensor; 4])> {
        let bn = batchnorm_backward(grad_out, &cache.bn, &self.bn)?;
        let gz = activation_backward(&cache.z, &cache.a, &bn.input, Activation::Relu)?;
        let conv = match self.conv.kind {
            LayerKind::Deconv => deconv2d_backward(&cache.input, &self.conv, &gz)?,
            _ => conv2d_backward(&cache.input, &self.conv, &gz)?,
        };
        Ok((conv.input, [conv.weight, conv.bias, bn.weight, bn.bias]))
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: Tensor,
    z: Tensor,
    a: Tensor,
    bn: BnCache,
}

/// Intermediate values of a training forward pass.
#[derive(Clone, Debug)]
pub struct UNetCache {
    blocks: Vec<BlockCache>,
    head_input: Tensor,
    head_pre: Tensor,
    output: Tensor,
}

impl UNetCache {
    /// Sign pattern of every ReLU input, for locating kinks.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| b.z.data().iter().map(|v| *v > 0.0))
            .collect()
    }
}

/// Parameter gradients in [`UNet::parameters`] order, plus the input gradient.
#[derive(Clone, Debug)]
pub struct UNetGrads {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    in_channels: usize,
    out_channels: usize,
    head_activation: Activation,
    pub(crate) blocks: Vec<Block>,
    pub(crate) head: LayerParams,
}

impl UNet {
    /// Widths follow the input channel count `C`: `2C, 4C, 8C` down,
    /// `4C, 2C, 2C` up, then `C` before the head.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        head_activation: Activation,
        rng: &mut R,
    ) -> Self {
        let c = in_channels;
        let blocks = vec![
            Block::conv(c, 2 * c, 2, rng),
            Block::conv(2 * c, 4 * c, 2, rng),
            Block::conv(4 * c, 8 * c, 2, rng),
            Block::deconv(8 * c, 4 * c, rng),
            Block::deconv(8 * c, 2 * c, rng),
            Block::deconv(4 * c, 2 * c, rng),
            Block::conv(2 * c + 3, c, 1, rng),
        ];
        UNet {
            in_channels,
            out_channels,
            head_activation,
            blocks,
            head: LayerParams::conv(c, out_channels, 1, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn head_activation(&self) -> Activation {
        self.head_activation
    }

    /// Names of the trainable tensors, in [`UNet::parameters`] order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in BLOCK_NAMES {
            for p in ["conv.weight", "conv.bias", "bn.weight", "bn.bias"] {
                names.push(format!("{b}.{p}"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([&b.conv.weight, &b.conv.bias, &b.bn.weight, &b.bn.bias]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.conv.weight, &mut b.conv.bias, &mut b.bn.weight, &mut b.bn.bias]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    /// Every stored tensor by name, including running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, b) in BLOCK_NAMES.iter().zip(&self.blocks) {
            out.push((format!("{name}.conv.weight"), &b.conv.weight));
            out.push((format!("{name}.conv.bias"), &b.conv.bias));
            out.push((format!("{name}.bn.weight"), &b.bn.weight));
            out.push((format!("{name}.bn.bias"), &b.bn.bias));
            out.push((format!("{name}.bn.running_mean"), &b.bn.running_mean));
            out.push((format!("{name}.bn.running_var"), &b.bn.running_var));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, b) in BLOCK_NAMES.iter().zip(&mut self.blocks) {
            out.push((format!("{name}.conv.weight"), &mut b.conv.weight));
            out.push((format!("{name}.conv.bias"), &mut b.conv.bias));
            out.push((format!("{name}.bn.weight"), &mut b.bn.weight));
            out.push((format!("{name}.bn.bias"), &mut b.bn.bias));
            out.push((format!("{name}.bn.running_mean"), &mut b.bn.running_mean));
            out.push((format!("{name}.bn.running_var"), &mut b.bn.running_var));
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::dim(
                "unet",
                format!("expected {} input channels, got {c}", self.in_channels),
            ));
        }
        if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::dim(
                "unet",
                format!("spatial size {h}×{w} is not a positive multiple of {SIZE_MULTIPLE}"),
            ));
        }
        Ok(())
    }

    /// Forward pass keeping everything needed for [`UNet::backward`].
    /// Batchnorm layers use batch statistics in `BnMode::Train`.
    pub fn forward_train(&self, x: &Tensor, mode: BnMode) -> Result<(Tensor, UNetCache)> {
        self.check_input(x)?;
        let rgb = x.split_channels(&[3, self.in_channels - 3])?.swap_remove(0);
        let b = &self.blocks;
        let (e1, c0) = b[0].forward(x.clone(), mode)?;
        let (e2, c1) = b[1].forward(e1.clone(), mode)?;
        let (e3, c2) = b[2].forward(e2.clone(), mode)?;
        let (d1, c3) = b[3].forward(e3, mode)?;
        let (d2, c4) = b[4].forward(Tensor::concat_channels(&[&d1, &e2])?, mode)?;
        let (d3, c5) = b[5].forward(Tensor::concat_channels(&[&d2, &e1])?, mode)?;
        let (f, c6) = b[6].forward(Tensor::concat_channels(&[&d3, &rgb])?, mode)?;
        let head_pre = conv2d(&f, &self.head)?;
        let output = activation(&head_pre, self.head_activation);
        Ok((
            output.clone(),
            UNetCache {
                blocks: vec![c0, c1, c2, c3, c4, c5, c6],
                head_input: f,
                head_pre,
                output,
            },
        ))
    }

    /// Inference with running batchnorm statistics, keeping only the skip
    /// tensors alive.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let b = &self.blocks;
        let e1 = b[0].forward_eval(x)?;
        let e2 = b[1].forward_eval(&e1)?;
        let d1 = b[3].forward_eval(&b[2].forward_eval(&e2)?)?;
        let d2 = b[4].forward_eval(&Tensor::concat_channels(&[&d1, &e2])?)?;
        drop((d1, e2));
        let d3 = b[5].forward_eval(&Tensor::concat_channels(&[&d2, &e1])?)?;
        drop((d2, e1));
        let rgb = x.split_channels(&[3, self.in_channels - 3])?.swap_remove(0);
        let f = b[6].forward_eval(&Tensor::concat_channels(&[&d3, &rgb])?)?;
        drop(d3);
        let mut out = conv2d(&f, &self.head)?;
        let act = self.head_activation;
        out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        Ok(out)
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, cache: &UNetCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            update_running_stats(&mut b.bn, &c.bn);
        }
    }

    pub fn backward(&self, cache: &UNetCache, grad_out: &Tensor) -> Result<UNetGrads> {
        let c = self.in_channels;
        let gh = activation_backward(&cache.head_pre, &cache.output, grad_out, self.head_activation)?;
        let head = conv2d_backward(&cache.head_input, &self.head, &gh)?;
        let mut grads: Vec<[Tensor; 4]> = Vec::with_capacity(7);
        let mut push = |i: usize, g: &Tensor| -> Result<Tensor> {
            let (gx, gp) = self.blocks[i].backward(&cache.blocks[i], g)?;
            grads.push(gp);
            Ok(gx)
        };
        let g_cat3 = push(6, &head.input)?;
        let [g_d3, g_rgb]: [Tensor; 2] = g_cat3.split_channels(&[2 * c, 3])?.try_into().expect("two parts");
        let g_cat2 = push(5, &g_d3)?;
        let [g_d2, g_e1_skip]: [Tensor; 2] = g_cat2.split_channels(&[2 * c, 2 * c])?.try_into().expect("two parts");
        let g_cat1 = push(4, &g_d2)?;
        let [g_d1, g_e2_skip]: [Tensor; 2] = g_cat1.split_channels(&[4 * c, 4 * c])?.try_into().expect("two parts");
        let g_e3 = push(3, &g_d1)?;
        let mut g_e2 = push(2, &g_e3)?;
        g_e2.add_assign(&g_e2_skip)?;
        let mut g_e1 = push(1, &g_e2)?;
        g_e1.add_assign(&g_e1_skip)?;
        let mut g_x = push(0, &g_e1)?;
        let (n, _, h, w) = g_x.dims4()?;
        let hw = h * w;
        for b in 0..n {
            for ch in 0..3 {
                let src = g_rgb.plane(b, ch);
                for (d, s) in g_x.plane_mut(b, ch).iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        debug_assert_eq!(g_x.len(), n * c * hw);
        grads.reverse();
        let mut params: Vec<Tensor> = grads.into_iter().flatten().collect();
        params.push(head.weight);
        params.push(head.bias);
        Ok(UNetGrads { params, input: g_x })
    }
}
