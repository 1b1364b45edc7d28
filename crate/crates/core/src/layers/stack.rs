use crate::error::{Error, Result};
use crate::palette::Palette;
use crate::raster::Rgb;

/// Tolerance for the per-pixel unit-sum condition on normalized stacks.
pub const ALPHA_SUM_TOL: f32 = 1e-6;

/// `K` opacity planes of size `H×W`, stored plane after plane.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaStack {
    k: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl AlphaStack {
    pub fn new(k: usize, width: usize, height: usize, data: Vec<f32>, normalized: bool) -> Result<Self> {
        if k == 0 || width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "alpha stack must be nonempty, got k={k}, {width}×{height}"
            )));
        }
        if data.len() != k * width * height {
            return Err(Error::dim(
                "alpha stack",
                format!("{k}×{height}×{width} needs {} values, got {}", k * width * height, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha value {} at index {i} is outside [0,1]",
                data[i]
            )));
        }
        Ok(AlphaStack {
            k,
            width,
            height,
            data,
            normalized,
        })
    }

    /// Every pixel fully on layer `labels[p]`.
    pub fn one_hot(k: usize, width: usize, height: usize, labels: &[usize]) -> Result<Self> {
        let n = width * height;
        if labels.len() != n {
            return Err(Error::dim("one_hot", format!("{} labels for {n} pixels", labels.len())));
        }
        let mut data = vec![0.0; k * n];
        for (p, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::LayerIndex { index: l, k });
            }
            data[l * n + p] = 1.0;
        }
        AlphaStack::new(k, width, height, data, true)
    }

    pub fn uniform(k: usize, width: usize, height: usize) -> Self {
        AlphaStack {
            k,
            width,
            height,
            data: vec![1.0 / k as f32; k * width * height],
            normalized: true,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, layer: usize) -> &[f32] {
        let n = self.num_pixels();
        &self.data[layer * n..(layer + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, layer: usize) -> &mut [f32] {
        let n = self.num_pixels();
        &mut self.data[layer * n..(layer + 1) * n]
    }

    pub(crate) fn set_normalized(&mut self, normalized: bool) {
        self.normalized = normalized;
    }

    /// Alpha of `layer` at pixel index `p`.
    pub fn get(&self, layer: usize, p: usize) -> f32 {
        self.data[layer * self.num_pixels() + p]
    }

    /// The K alphas of pixel `p`.
    pub fn pixel(&self, p: usize) -> Vec<f32> {
        (0..self.k).map(|i| self.get(i, p)).collect()
    }

    pub fn pixel_sum(&self, p: usize) -> f32 {
        (0..self.k).map(|i| self.get(i, p)).sum()
    }

    /// Largest deviation of a pixel sum from 1.
    pub fn max_sum_deviation(&self) -> f32 {
        (0..self.num_pixels())
            .map(|p| (self.pixel_sum(p) - 1.0).abs())
            .fold(0.0, f32::max)
    }

    /// Checks that every pixel sums to 1 within `tol`.
    pub fn check_normalized(&self, tol: f32) -> Result<()> {
        for p in 0..self.num_pixels() {
            let s = self.pixel_sum(p);
            if (s - 1.0).abs() > tol {
                return Err(Error::NotNormalized { pixel: p, sum: s });
            }
        }
        Ok(())
    }

    /// The same layers in a new order: output layer `i` is input `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<AlphaStack> {
        check_permutation(order, self.k)?;
        let mut data = Vec::with_capacity(self.data.len());
        for &src in order {
            data.extend_from_slice(self.plane(src));
        }
        Ok(AlphaStack { data, ..self.clone() })
    }
}

fn check_permutation(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if order.len() != k {
        return Err(Error::InvalidArgument(format!("permutation of length {} for {k} layers", order.len())));
    }
    for &i in order {
        if i >= k || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
        }
    }
    Ok(())
}

/// `K` RGBA layers: layer colors `u_i` plus the alpha stack, tied to the
/// palette they were decomposed with.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    palette: Palette,
    alphas: AlphaStack,
    colors: Vec<Rgb>,
}

impl LayerStack {
    pub fn new(palette: Palette, alphas: AlphaStack, colors: Vec<Rgb>) -> Result<Self> {
        if palette.len() != alphas.k() {
            return Err(Error::PaletteSize {
                expected: alphas.k(),
                got: palette.len(),
            });
        }
        if colors.len() != alphas.k() * alphas.num_pixels() {
            return Err(Error::dim(
                "layer stack",
                format!(
                    "{} colors for {} layers of {} pixels",
                    colors.len(),
                    alphas.k(),
                    alphas.num_pixels()
                ),
            ));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| c.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "layer color {:?} at index {i} is outside [0,1]",
                colors[i]
            )));
        }
        Ok(LayerStack {
            palette,
            alphas,
            colors,
        })
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn alphas(&self) -> &AlphaStack {
        &self.alphas
    }

    pub fn k(&self) -> usize {
        self.alphas.k()
    }

    pub fn width(&self) -> usize {
        self.alphas.width()
    }

    pub fn height(&self) -> usize {
        self.alphas.height()
    }

    pub fn num_pixels(&self) -> usize {
        self.alphas.num_pixels()
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    /// Colors `u_i` of one layer, one per pixel.
    pub fn layer_colors(&self, layer: usize) -> &[Rgb] {
        let n = self.num_pixels();
        &self.colors[layer * n..(layer + 1) * n]
    }

    pub fn color(&self, layer: usize, p: usize) -> Rgb {
        self.colors[layer * self.num_pixels() + p]
    }

    /// Residue `u_i − p_i` at pixel `p`.
    pub fn residue(&self, layer: usize, p: usize) -> Rgb {
        let u = self.color(layer, p);
        let c = self.palette.colors()[layer];
        [u[0] - c[0], u[1] - c[1], u[2] - c[2]]
    }

    pub fn into_parts(self) -> (Palette, AlphaStack, Vec<Rgb>) {
        (self.palette, self.alphas, self.colors)
    }

    /// The same layers in a new order: output layer `i` is input `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<LayerStack> {
        let alphas = self.alphas.permuted(order)?;
        let colors = order
            .iter()
            .flat_map(|&i| self.layer_colors(i).iter().copied())
            .collect();
        let palette = Palette::new(
            order.iter().map(|&i| self.palette.colors()[i]).collect(),
            self.palette.source(),
        )?;
        LayerStack::new(palette, alphas, colors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_alpha() {
        assert!(AlphaStack::new(1, 1, 1, vec![1.5], false).is_err());
        assert!(AlphaStack::new(1, 1, 1, vec![f32::NAN], false).is_err());
        assert!(AlphaStack::new(2, 1, 1, vec![0.5], false).is_err());
    }

    #[test]
    fn one_hot_is_normalized() {
        let s = AlphaStack::one_hot(3, 2, 1, &[2, 0]).unwrap();
        assert_eq!(s.pixel(0), vec![0.0, 0.0, 1.0]);
        assert!(s.check_normalized(0.0).is_ok());
        assert!(AlphaStack::one_hot(3, 2, 1, &[3, 0]).is_err());
    }

    #[test]
    fn palette_size_must_match() {
        let alphas = AlphaStack::uniform(2, 1, 1);
        let palette = Palette::manual(vec![[0.0; 3]; 3]).unwrap();
        assert!(matches!(
            LayerStack::new(palette, alphas, vec![[0.0; 3]; 2]),
            Err(Error::PaletteSize { .. })
        ));
    }

    #[test]
    fn permutation_must_be_valid() {
        let s = AlphaStack::uniform(3, 1, 1);
        assert!(s.permuted(&[0, 0, 1]).is_err());
        assert!(s.permuted(&[2, 0, 1]).is_ok());
    }
}
