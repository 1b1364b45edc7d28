use rand::Rng;

use super::gemm::{sgemm, Mat};
use super::{for_each_item, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the im2col scratch buffer, in floats.
const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    BatchNorm,
}

/// Parameters of one convolution, transposed convolution or batchnorm layer.
///
/// Weight layouts follow the usual conventions: `[C_out, C_in, k, k]` for
/// convolutions and `[C_in, C_out, k, k]` for transposed convolutions, so a
/// deconvolution with weight `w` is the adjoint of the convolution with the
/// same `w`. Batchnorm stores its scale in `weight` and its shift in `bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weight: Tensor,
    pub bias: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub kernel_size: usize,
}

impl LayerParams {
    /// 3×3 convolution with padding 1 and Kaiming fan-in initialization.
    pub fn conv<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * 9) as f32;
        LayerParams {
            kind: LayerKind::Conv,
            weight: Tensor::randn(
                &[out_channels, in_channels, 3, 3],
                (2.0 / fan_in).sqrt(),
                rng,
            ),
            bias: Tensor::zeros(&[out_channels]),
            running_mean: Tensor::default(),
            running_var: Tensor::default(),
            stride,
            padding: 1,
            kernel_size: 3,
        }
    }

    /// 3×3 transposed convolution with padding 1.
    ///
    /// Each output pixel receives `in_channels · 9 / stride²` contributions
    /// on average, which is the fan-in used for initialization.
    pub fn deconv<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * 9) as f32 / (stride * stride) as f32;
        LayerParams {
            kind: LayerKind::Deconv,
            weight: Tensor::randn(
                &[in_channels, out_channels, 3, 3],
                (2.0 / fan_in).sqrt(),
                rng,
            ),
            bias: Tensor::zeros(&[out_channels]),
            running_mean: Tensor::default(),
            running_var: Tensor::default(),
            stride,
            padding: 1,
            kernel_size: 3,
        }
    }

    pub fn batchnorm(channels: usize) -> Self {
        LayerParams {
            kind: LayerKind::BatchNorm,
            weight: Tensor::full(&[channels], 1.0),
            bias: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            stride: 1,
            padding: 0,
            kernel_size: 1,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.weight.shape()[1],
            LayerKind::Deconv | LayerKind::BatchNorm => self.weight.shape()[0],
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::Deconv => self.weight.shape()[1],
            LayerKind::Conv | LayerKind::BatchNorm => self.weight.shape()[0],
        }
    }
}

/// Gradients of a convolution-type layer.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Geometry of a strided convolution from a "wide" tensor (`c_in × h_in ×
/// w_in`) to a "narrow" one (`c_out × h_out × w_out`). A transposed
/// convolution runs the same geometry backwards.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h_in: usize,
    w_in: usize,
    c_out: usize,
    h_out: usize,
    w_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn kdim(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    fn out_len(&self) -> usize {
        self.c_out * self.h_out * self.w_out
    }

    fn chunk_rows(&self) -> usize {
        (COL_BUDGET / (self.kdim() * self.w_out).max(1)).clamp(1, self.h_out.max(1))
    }

    fn row_chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.chunk_rows();
        let h = self.h_out;
        (0..h).step_by(step).map(move |r0| (r0, (r0 + step).min(h)))
    }

    /// Output columns `[lo, hi)` whose tap `offset` lands inside the input row.
    fn valid_cols(&self, offset: usize) -> (usize, usize) {
        axis_range(offset, self.pad, self.stride, self.w_in, self.w_out)
    }

    fn input_row(&self, out_row: usize, offset: usize) -> Option<usize> {
        let r = (out_row * self.stride + offset) as isize - self.pad as isize;
        (r >= 0 && (r as usize) < self.h_in).then_some(r as usize)
    }
}

fn axis_range(offset: usize, pad: usize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize) {
    // index_in = o * stride + offset - pad must lie in [0, len_in)
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    let limit = len_in + pad;
    let hi = if limit > offset {
        ((limit - offset - 1) / stride + 1).min(len_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad)
        .checked_sub(k)
        .map(|span| span / stride + 1)
}

fn expect_kind(params: &LayerParams, kind: LayerKind, op: &'static str) -> Result<()> {
    if params.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "{op} called with {:?} parameters",
            params.kind
        )));
    }
    if params.stride == 0 || params.kernel_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: stride and kernel size must be positive"
        )));
    }
    let w = params.weight.shape();
    if w.len() != 4 || w[2] != params.kernel_size || w[3] != params.kernel_size {
        return Err(Error::dim(op, format!("weight shape {w:?}")));
    }
    if params.bias.len() != params.out_channels() {
        return Err(Error::dim(
            op,
            format!(
                "bias has {} entries for {} output channels",
                params.bias.len(),
                params.out_channels()
            ),
        ));
    }
    Ok(())
}

fn conv_geometry(input: &Tensor, params: &LayerParams) -> Result<(usize, Geometry)> {
    let (n, c, h, w) = input.dims4()?;
    let w_shape = params.weight.shape();
    if c != w_shape[1] {
        return Err(Error::dim(
            "conv2d",
            format!("input has {c} channels, kernel expects {}", w_shape[1]),
        ));
    }
    let s = params.stride;
    if h % s != 0 || w % s != 0 {
        return Err(Error::dim(
            "conv2d",
            format!("spatial size {h}×{w} not divisible by stride {s}"),
        ));
    }
    let k = params.kernel_size;
    let (h_out, w_out) = match (
        conv_out_len(h, k, s, params.padding),
        conv_out_len(w, k, s, params.padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::dim("conv2d", format!("input {h}×{w} smaller than kernel"))),
    };
    Ok((
        n,
        Geometry {
            c_in: c,
            h_in: h,
            w_in: w,
            c_out: w_shape[0],
            h_out,
            w_out,
            k,
            stride: s,
            pad: params.padding,
        },
    ))
}

fn deconv_geometry(input: &Tensor, params: &LayerParams) -> Result<(usize, Geometry)> {
    let (n, c, h, w) = input.dims4()?;
    let w_shape = params.weight.shape();
    if c != w_shape[0] {
        return Err(Error::dim(
            "deconv2d",
            format!("input has {c} channels, kernel expects {}", w_shape[0]),
        ));
    }
    let (s, k, p) = (params.stride, params.kernel_size, params.padding);
    let (h_big, w_big) = (h * s, w * s);
    if conv_out_len(h_big, k, s, p) != Some(h) || conv_out_len(w_big, k, s, p) != Some(w) {
        return Err(Error::dim(
            "deconv2d",
            format!("kernel {k}, padding {p}, stride {s} cannot upsample {h}×{w} by the stride"),
        ));
    }
    Ok((
        n,
        Geometry {
            c_in: w_shape[1],
            h_in: h_big,
            w_in: w_big,
            c_out: c,
            h_out: h,
            w_out: w,
            k,
            stride: s,
            pad: p,
        },
    ))
}

fn im2col(x: &[f32], g: &Geometry, r0: usize, r1: usize, col: &mut [f32]) {
    let cols = (r1 - r0) * g.w_out;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h_in * g.w_in..(ci + 1) * g.h_in * g.w_in];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid_cols(kx);
                for oy in r0..r1 {
                    let d = &mut dst[(oy - r0) * g.w_out..(oy - r0 + 1) * g.w_out];
                    let Some(iy) = g.input_row(oy, ky) else {
                        d.fill(0.0);
                        continue;
                    };
                    let src = &plane[iy * g.w_in..(iy + 1) * g.w_in];
                    d[..lo].fill(0.0);
                    d[hi..].fill(0.0);
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        d[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate().take(hi).skip(lo) {
                            *v = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &Geometry, r0: usize, r1: usize, x: &mut [f32]) {
    let cols = (r1 - r0) * g.w_out;
    for ci in 0..g.c_in {
        let plane = &mut x[ci * g.h_in * g.w_in..(ci + 1) * g.h_in * g.w_in];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid_cols(kx);
                for oy in r0..r1 {
                    let Some(iy) = g.input_row(oy, ky) else {
                        continue;
                    };
                    let s = &src[(oy - r0) * g.w_out..(oy - r0 + 1) * g.w_out];
                    let dst = &mut plane[iy * g.w_in..(iy + 1) * g.w_in];
                    for (ox, v) in s.iter().enumerate().take(hi).skip(lo) {
                        dst[ox * g.stride + kx - g.pad] += v;
                    }
                }
            }
        }
    }
}

fn add_channel_bias(item: &mut [f32], bias: &[f32], plane: usize) {
    for (c, b) in bias.iter().enumerate() {
        for v in &mut item[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn accumulate_channel_sums(item: &[f32], plane: usize, sums: &mut [f32]) {
    for (c, s) in sums.iter_mut().enumerate() {
        let t: f64 = item[c * plane..(c + 1) * plane]
            .iter()
            .map(|&v| v as f64)
            .sum();
        *s += t as f32;
    }
}

/// Cross-correlation with the layer's stride and zero padding.
pub fn conv2d(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    expect_kind(params, LayerKind::Conv, "conv2d")?;
    let (n, g) = conv_geometry(input, params)?;
    let kdim = g.kdim();
    let weight = Mat::new(params.weight.data(), g.c_out, kdim);
    let mut out = Tensor::zeros(&[n, g.c_out, g.h_out, g.w_out]);
    let x_all = input.data();
    let bias = params.bias.data();
    for_each_item(out.data_mut(), g.out_len(), |b, out_item| {
        let x = &x_all[b * g.in_len()..(b + 1) * g.in_len()];
        let mut col = vec![0.0f32; kdim * g.chunk_rows() * g.w_out];
        for (r0, r1) in g.row_chunks() {
            let p = (r1 - r0) * g.w_out;
            im2col(x, &g, r0, r1, &mut col[..kdim * p]);
            sgemm(
                weight,
                Mat::new(&col[..kdim * p], kdim, p),
                0.0,
                &mut out_item[r0 * g.w_out..],
                g.h_out * g.w_out,
            );
        }
        add_channel_bias(out_item, bias, g.h_out * g.w_out);
    });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input, weight and bias.
pub fn conv2d_backward(input: &Tensor, params: &LayerParams, grad_out: &Tensor) -> Result<ConvGrads> {
    expect_kind(params, LayerKind::Conv, "conv2d_backward")?;
    let (n, g) = conv_geometry(input, params)?;
    if grad_out.shape() != [n, g.c_out, g.h_out, g.w_out] {
        return Err(Error::dim(
            "conv2d_backward",
            format!("grad_out shape {:?}", grad_out.shape()),
        ));
    }
    let kdim = g.kdim();
    let plane_out = g.h_out * g.w_out;
    let weight = Mat::new(params.weight.data(), g.c_out, kdim);
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = vec![0.0f32; g.c_out * kdim];
    let mut grad_b = vec![0.0f32; g.c_out];
    let mut col = vec![0.0f32; kdim * g.chunk_rows() * g.w_out];
    let mut gcol = col.clone();
    for b in 0..n {
        let x = &input.data()[b * g.in_len()..(b + 1) * g.in_len()];
        let gy = &grad_out.data()[b * g.out_len()..(b + 1) * g.out_len()];
        let gx = &mut grad_in.data_mut()[b * g.in_len()..(b + 1) * g.in_len()];
        for (r0, r1) in g.row_chunks() {
            let p = (r1 - r0) * g.w_out;
            let gy_chunk = Mat::strided(&gy[r0 * g.w_out..], g.c_out, p, plane_out);
            im2col(x, &g, r0, r1, &mut col[..kdim * p]);
            sgemm(
                gy_chunk,
                Mat::new(&col[..kdim * p], kdim, p).t(),
                1.0,
                &mut grad_w,
                kdim,
            );
            sgemm(weight.t(), gy_chunk, 0.0, &mut gcol[..kdim * p], p);
            col2im(&gcol[..kdim * p], &g, r0, r1, gx);
        }
        accumulate_channel_sums(gy, plane_out, &mut grad_b);
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: Tensor::from_vec(params.weight.shape(), grad_w)?,
        bias: Tensor::from_vec(&[g.c_out], grad_b)?,
    })
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same kernel,
/// stride and padding, plus a bias. Output is `stride` times larger.
pub fn deconv2d(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    expect_kind(params, LayerKind::Deconv, "deconv2d")?;
    let (n, g) = deconv_geometry(input, params)?;
    let kdim = g.kdim();
    let plane_small = g.h_out * g.w_out;
    let weight = Mat::new(params.weight.data(), g.c_out, kdim);
    let mut out = Tensor::zeros(&[n, g.c_in, g.h_in, g.w_in]);
    let y_all = input.data();
    let bias = params.bias.data();
    for_each_item(out.data_mut(), g.in_len(), |b, x_item| {
        let y = &y_all[b * g.out_len()..(b + 1) * g.out_len()];
        let mut col = vec![0.0f32; kdim * g.chunk_rows() * g.w_out];
        for (r0, r1) in g.row_chunks() {
            let p = (r1 - r0) * g.w_out;
            let y_chunk = Mat::strided(&y[r0 * g.w_out..], g.c_out, p, plane_small);
            sgemm(weight.t(), y_chunk, 0.0, &mut col[..kdim * p], p);
            col2im(&col[..kdim * p], &g, r0, r1, x_item);
        }
        add_channel_bias(x_item, bias, g.h_in * g.w_in);
    });
    Ok(out)
}

/// Gradients of [`deconv2d`] with respect to its input, weight and bias.
pub fn deconv2d_backward(input: &Tensor, params: &LayerParams, grad_out: &Tensor) -> Result<ConvGrads> {
    expect_kind(params, LayerKind::Deconv, "deconv2d_backward")?;
    let (n, g) = deconv_geometry(input, params)?;
    if grad_out.shape() != [n, g.c_in, g.h_in, g.w_in] {
        return Err(Error::dim(
            "deconv2d_backward",
            format!("grad_out shape {:?}", grad_out.shape()),
        ));
    }
    let kdim = g.kdim();
    let plane_small = g.h_out * g.w_out;
    let weight = Mat::new(params.weight.data(), g.c_out, kdim);
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = vec![0.0f32; g.c_out * kdim];
    let mut grad_b = vec![0.0f32; g.c_in];
    let mut col = vec![0.0f32; kdim * g.chunk_rows() * g.w_out];
    for b in 0..n {
        let y = &input.data()[b * g.out_len()..(b + 1) * g.out_len()];
        let gx = &grad_out.data()[b * g.in_len()..(b + 1) * g.in_len()];
        let gy = &mut grad_in.data_mut()[b * g.out_len()..(b + 1) * g.out_len()];
        for (r0, r1) in g.row_chunks() {
            let p = (r1 - r0) * g.w_out;
            im2col(gx, &g, r0, r1, &mut col[..kdim * p]);
            let colm = Mat::new(&col[..kdim * p], kdim, p);
            sgemm(weight, colm, 0.0, &mut gy[r0 * g.w_out..], plane_small);
            let y_chunk = Mat::strided(&y[r0 * g.w_out..], g.c_out, p, plane_small);
            sgemm(y_chunk, colm.t(), 1.0, &mut grad_w, kdim);
        }
        accumulate_channel_sums(gx, g.h_in * g.w_in, &mut grad_b);
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: Tensor::from_vec(params.weight.shape(), grad_w)?,
        bias: Tensor::from_vec(&[g.c_in], grad_b)?,
    })
}
