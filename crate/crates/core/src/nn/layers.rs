use rand::Rng;
use rayon::prelude::*;

use super::scalar::gemm;
use super::{Scalar, Tensor};

/// Trainable array with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    /// Kaiming-uniform fill for ReLU networks: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming_uniform(&mut self, fan_in: usize, rng: &mut impl Rng) {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        for v in &mut self.value {
            *v = T::lit(rng.gen_range(-bound..bound));
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Sliding-window geometry shared by convolution, transposed convolution and pooling.
///
/// `h × w` is the large (input) side, `oh × ow` the window-position side.
#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    batch: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    /// Source coordinate for window position `o` and kernel offset `kk`, if inside the image.
    #[inline]
    fn src(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + kk) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

pub(crate) fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad >= k).then(|| (size + 2 * pad - k) / stride + 1)
}

fn im2col<T: Scalar>(g: &Window, input: &[T]) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); g.rows() * cols];
    if cols == 0 {
        return out;
    }
    out.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        let c = r / (g.k * g.k);
        let ky = (r / g.k) % g.k;
        let kx = r % g.k;
        for b in 0..g.batch {
            let plane = &input[(c * g.batch + b) * g.h * g.w..][..g.h * g.w];
            let dst = &mut row[b * g.oh * g.ow..][..g.oh * g.ow];
            for oy in 0..g.oh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                let line = &plane[iy * g.w..][..g.w];
                for ox in 0..g.ow {
                    if let Some(ix) = g.src(ox, kx, g.w) {
                        dst[oy * g.ow + ox] = line[ix];
                    }
                }
            }
        }
    });
    out
}

fn col2im<T: Scalar>(g: &Window, cols: &[T], out: &mut [T]) {
    let ncols = g.cols();
    let plane = g.batch * g.h * g.w;
    if plane == 0 {
        return;
    }
    out.par_chunks_mut(plane).enumerate().for_each(|(c, dst)| {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let row = &cols[r * ncols..][..ncols];
                for b in 0..g.batch {
                    let img = &mut dst[b * g.h * g.w..][..g.h * g.w];
                    let src = &row[b * g.oh * g.ow..][..g.oh * g.ow];
                    for oy in 0..g.oh {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                img[iy * g.w + ix] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    let per = out.len() / bias.len().max(1);
    for (chunk, &b) in out.chunks_mut(per).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_sums<T: Scalar>(grad: &mut [T], dy: &[T]) {
    let per = dy.len() / grad.len().max(1);
    for (g, chunk) in grad.iter_mut().zip(dy.chunks(per)) {
        *g += chunk.iter().copied().sum::<T>();
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel]),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn window(&self, shape: &[usize]) -> Window {
        let (h, w) = (shape[2], shape[3]);
        Window {
            channels: self.in_channels,
            batch: shape[1],
            h,
            w,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            oh: conv_out(h, self.kernel, self.stride, self.pad).unwrap_or(0),
            ow: conv_out(w, self.kernel, self.stride, self.pad).unwrap_or(0),
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let g = self.window(x.shape());
        let cols = im2col(&g, x.data());
        let n = g.cols();
        let mut out = Tensor::zeros(&[self.out_channels, g.batch, g.oh, g.ow]);
        let rows = g.rows();
        gemm(
            self.out_channels,
            rows,
            n,
            T::one(),
            (&self.weight.value, rows, 1),
            (&cols, n, 1),
            T::zero(),
            out.data_mut(),
            n,
            1,
        );
        add_channel_bias(out.data_mut(), &self.bias.value);
        self.input = Some(x);
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self.input.as_ref().expect("backward called before forward");
        let g = self.window(x.shape());
        let cols = im2col(&g, x.data());
        let (rows, n) = (g.rows(), g.cols());
        gemm(
            self.out_channels,
            n,
            rows,
            T::one(),
            (dy.data(), n, 1),
            (&cols, 1, n),
            T::one(),
            &mut self.weight.grad,
            rows,
            1,
        );
        accumulate_channel_sums(&mut self.bias.grad, dy.data());
        if !need_dx {
            return None;
        }
        let mut dcols = cols;
        gemm(
            rows,
            self.out_channels,
            n,
            T::one(),
            (&self.weight.value, 1, rows),
            (dy.data(), n, 1),
            T::zero(),
            &mut dcols,
            n,
            1,
        );
        let mut dx = Tensor::zeros(x.shape());
        col2im(&g, &dcols, dx.data_mut());
        Some(dx)
    }
}

/// Transposed convolution with weight layout `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Self {
        assert!(output_pad < stride.max(1), "output padding must be below the stride");
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[in_channels, out_channels, kernel, kernel]),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            output_pad,
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, size: usize) -> usize {
        ((size - 1) * self.stride + self.kernel + self.output_pad).saturating_sub(2 * self.pad)
    }

    fn window(&self, shape: &[usize]) -> Window {
        Window {
            channels: self.out_channels,
            batch: shape[1],
            h: self.output_size(shape[2]),
            w: self.output_size(shape[3]),
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            oh: shape[2],
            ow: shape[3],
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let g = self.window(x.shape());
        let (rows, n) = (g.rows(), g.cols());
        let mut cols = vec![T::zero(); rows * n];
        gemm(
            rows,
            self.in_channels,
            n,
            T::one(),
            (&self.weight.value, 1, rows),
            (x.data(), n, 1),
            T::zero(),
            &mut cols,
            n,
            1,
        );
        let mut out = Tensor::zeros(&[self.out_channels, g.batch, g.h, g.w]);
        col2im(&g, &cols, out.data_mut());
        add_channel_bias(out.data_mut(), &self.bias.value);
        self.input = Some(x);
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self.input.as_ref().expect("backward called before forward");
        let g = self.window(x.shape());
        let (rows, n) = (g.rows(), g.cols());
        let cols = im2col(&g, dy.data());
        gemm(
            self.in_channels,
            n,
            rows,
            T::one(),
            (x.data(), n, 1),
            (&cols, 1, n),
            T::one(),
            &mut self.weight.grad,
            rows,
            1,
        );
        accumulate_channel_sums(&mut self.bias.grad, dy.data());
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            self.in_channels,
            rows,
            n,
            T::one(),
            (&self.weight.value, rows, 1),
            (&cols, n, 1),
            T::zero(),
            dx.data_mut(),
            n,
            1,
        );
        Some(dx)
    }
}

/// Max pooling without padding; ties resolve to the first maximum in scan order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            argmax: Vec::new(),
            input_shape: Vec::new(),
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        let (c, b, h, w) = (s[0], s[1], s[2], s[3]);
        let oh = conv_out(h, self.kernel, self.stride, 0).unwrap_or(0);
        let ow = conv_out(w, self.kernel, self.stride, 0).unwrap_or(0);
        let mut out = Tensor::zeros(&[c, b, oh, ow]);
        let mut argmax = vec![0usize; c * b * oh * ow];
        let data = x.data();
        for p in 0..c * b {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let idx = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    argmax[o] = best;
                    out.data_mut()[o] = data[best];
                }
            }
        }
        self.argmax = argmax;
        self.input_shape = s.to_vec();
        out
    }

    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = Tensor::zeros(&self.input_shape);
        for (&src, &g) in self.argmax.iter().zip(dy.data()) {
            dx.data_mut()[src] += g;
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    active: Vec<bool>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        self.active = x.data().iter().map(|&v| v > T::zero()).collect();
        x.data_mut().iter_mut().for_each(|v| {
            if *v <= T::zero() {
                *v = T::zero()
            }
        });
        x
    }

    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>) -> Tensor<T> {
        let data = dy
            .data()
            .iter()
            .zip(&self.active)
            .map(|(&g, &a)| if a { g } else { T::zero() })
            .collect();
        Tensor::from_vec(dy.shape(), data)
    }
}

/// `[C, B, H, W]` → `[B, C]` spatial mean.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>) -> Tensor<T> {
        let s = x.shape().to_vec();
        let (c, b, plane) = (s[0], s[1], s[2] * s[3]);
        let scale = T::one() / T::lit(plane as f64);
        let mut out = Tensor::zeros(&[b, c]);
        for ci in 0..c {
            for bi in 0..b {
                let sum: T = x.data()[(ci * b + bi) * plane..][..plane].iter().copied().sum();
                out.data_mut()[bi * c + ci] = sum * scale;
            }
        }
        self.input_shape = s;
        out
    }

    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>) -> Tensor<T> {
        let s = &self.input_shape;
        let (c, b, plane) = (s[0], s[1], s[2] * s[3]);
        let scale = T::one() / T::lit(plane as f64);
        let mut dx = Tensor::zeros(s);
        for ci in 0..c {
            for bi in 0..b {
                let g = dy.data()[bi * c + ci] * scale;
                dx.data_mut()[(ci * b + bi) * plane..][..plane]
                    .iter_mut()
                    .for_each(|v| *v = g);
            }
        }
        dx
    }
}

/// Batch normalization over `[B, F]` using the statistics of the current
/// batch, with a learned per-feature scale and shift. Keeps no running
/// averages; it is only used inside pretraining heads.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub eps: f64,
    normalized: Option<Tensor<T>>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(name: &str, features: usize) -> Self {
        let mut weight = Param::zeros(format!("{name}.weight"), &[features]);
        weight.value.iter_mut().for_each(|v| *v = T::one());
        Self {
            weight,
            bias: Param::zeros(format!("{name}.bias"), &[features]),
            eps: 1e-5,
            normalized: None,
            inv_std: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let (b, f) = (x.shape()[0], x.shape()[1]);
        assert_eq!(f, self.weight.value.len(), "batch norm width");
        let n = T::lit(b.max(1) as f64);
        let mut xhat = x;
        let mut inv_std = vec![T::zero(); f];
        for j in 0..f {
            let mean = (0..b).map(|i| xhat.data()[i * f + j]).sum::<T>() / n;
            let var = (0..b)
                .map(|i| {
                    let d = xhat.data()[i * f + j] - mean;
                    d * d
                })
                .sum::<T>()
                / n;
            inv_std[j] = T::one() / (var + T::lit(self.eps)).sqrt();
            for i in 0..b {
                let v = &mut xhat.data_mut()[i * f + j];
                *v = (*v - mean) * inv_std[j];
            }
        }
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(f) {
            for ((v, &g), &bv) in row.iter_mut().zip(&self.weight.value).zip(&self.bias.value) {
                *v = *v * g + bv;
            }
        }
        self.normalized = Some(xhat);
        self.inv_std = inv_std;
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let xhat = self.normalized.as_ref().expect("backward before forward");
        let (b, f) = (dy.shape()[0], dy.shape()[1]);
        let n = T::lit(b.max(1) as f64);
        let mut dx = need_dx.then(|| Tensor::zeros(&[b, f]));
        for j in 0..f {
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for i in 0..b {
                let (g, xh) = (dy.data()[i * f + j], xhat.data()[i * f + j]);
                sum_dy += g;
                sum_dy_xhat += g * xh;
            }
            self.weight.grad[j] += sum_dy_xhat;
            self.bias.grad[j] += sum_dy;
            if let Some(dx) = &mut dx {
                let scale = self.weight.value[j] * self.inv_std[j] / n;
                for i in 0..b {
                    let k = i * f + j;
                    dx.data_mut()[k] = scale * (n * dy.data()[k] - sum_dy - xhat.data()[k] * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

/// Per-row standardization of `[B, F]`: `(x − mean) / sqrt(var + eps)`
/// over the features of each sample. No learned parameters.
#[derive(Debug, Clone)]
pub struct RowNorm<T> {
    pub eps: f64,
    normalized: Option<Tensor<T>>,
    inv_std: Vec<T>,
}

impl<T: Scalar> Default for RowNorm<T> {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            normalized: None,
            inv_std: Vec::new(),
        }
    }
}

impl<T: Scalar> RowNorm<T> {
    pub fn forward(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        let f = x.shape()[1];
        let n = T::lit(f.max(1) as f64);
        let eps = T::lit(self.eps);
        self.inv_std.clear();
        for row in x.data_mut().chunks_mut(f.max(1)) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            self.inv_std.push(inv);
        }
        self.normalized = Some(x.clone());
        x
    }

    pub fn backward(&self, dy: &Tensor<T>) -> Tensor<T> {
        let xhat = self.normalized.as_ref().expect("backward before forward");
        let f = dy.shape()[1].max(1);
        let n = T::lit(f as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for (((out, g), xh), &inv) in dx
            .data_mut()
            .chunks_mut(f)
            .zip(dy.data().chunks(f))
            .zip(xhat.data().chunks(f))
            .zip(&self.inv_std)
        {
            let sum_g = g.iter().copied().sum::<T>();
            let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
                *o = inv / n * (n * gi - sum_g - xi * sum_gx);
            }
        }
        dx
    }
}

/// Fully connected layer with PyTorch weight layout `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_features: usize,
    pub out_features: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[out_features, in_features]),
            bias: Param::zeros(format!("{name}.bias"), &[out_features]),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        let b = x.shape()[0];
        assert_eq!(x.shape()[1], self.in_features, "linear input width");
        let (i, o) = (self.in_features, self.out_features);
        let mut out = Tensor::zeros(&[b, o]);
        gemm(
            b,
            i,
            o,
            T::one(),
            (x.data(), i, 1),
            (&self.weight.value, 1, i),
            T::zero(),
            out.data_mut(),
            o,
            1,
        );
        for row in out.data_mut().chunks_mut(o) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, &bv)| *v += bv);
        }
        self.input = Some(x);
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self.input.as_ref().expect("backward called before forward");
        let b = x.shape()[0];
        let (i, o) = (self.in_features, self.out_features);
        gemm(
            o,
            b,
            i,
            T::one(),
            (dy.data(), 1, o),
            (x.data(), i, 1),
            T::one(),
            &mut self.weight.grad,
            i,
            1,
        );
        for row in dy.data().chunks(o) {
            self.bias.grad.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
        }
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(&[b, i]);
        gemm(
            b,
            o,
            i,
            T::one(),
            (dy.data(), o, 1),
            (&self.weight.value, i, 1),
            T::zero(),
            dx.data_mut(),
            i,
            1,
        );
        Some(dx)
    }
}

/// `[B, C·H·W]` → `[C, B, H, W]`.
#[derive(Debug, Clone)]
pub struct Unflatten {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Unflatten {
    pub fn forward<T: Scalar>(&self, x: Tensor<T>) -> Tensor<T> {
        let b = x.shape()[0];
        Tensor::from_nchw(b, self.channels, self.height, self.width, x.data())
    }

    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>) -> Tensor<T> {
        let b = dy.shape()[1];
        Tensor::from_vec(&[b, self.channels * self.height * self.width], dy.to_nchw())
    }
}

/// `[C, B, H, W]` → `[B, C·H·W]`, channel-major within a row.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Vec<usize>,
}

impl Flatten {
    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>) -> Tensor<T> {
        let s = x.shape().to_vec();
        let b = s[1];
        let row = s[0] * s[2] * s[3];
        let out = Tensor::from_vec(&[b, row], x.to_nchw());
        self.input_shape = s;
        out
    }

    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>) -> Tensor<T> {
        let s = &self.input_shape;
        Tensor::from_nchw(s[1], s[0], s[2], s[3], dy.data())
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
    MaxPool(MaxPool2d),
    Relu(Relu),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Linear(Linear<T>),
    BatchNorm(BatchNorm1d<T>),
    RowNorm(RowNorm<T>),
    Unflatten(Unflatten),
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Relu(Relu::default())
    }

    fn forward(&mut self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::ConvTranspose(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::GlobalAvgPool(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x),
            Layer::RowNorm(l) => l.forward(x),
            Layer::Unflatten(l) => l.forward(x),
        }
    }

    fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(dy, need_dx),
            Layer::ConvTranspose(l) => l.backward(dy, need_dx),
            Layer::Linear(l) => l.backward(dy, need_dx),
            Layer::BatchNorm(l) => l.backward(dy, need_dx),
            Layer::MaxPool(l) => need_dx.then(|| l.backward(dy)),
            Layer::Relu(l) => need_dx.then(|| l.backward(dy)),
            Layer::GlobalAvgPool(l) => need_dx.then(|| l.backward(dy)),
            Layer::Flatten(l) => need_dx.then(|| l.backward(dy)),
            Layer::RowNorm(l) => need_dx.then(|| l.backward(dy)),
            Layer::Unflatten(l) => need_dx.then(|| l.backward(dy)),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::ConvTranspose(l) => vec![&l.weight, &l.bias],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvTranspose(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Conv(l) => Some(l.fan_in()),
            Layer::ConvTranspose(l) => Some(l.fan_in()),
            Layer::Linear(l) => Some(l.in_features),
            _ => None,
        }
    }
}

/// Layers applied in order, with a reverse-order backward pass.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: Layer<T>) {
        self.layers.push(layer);
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn forward(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        for layer in &mut self.layers {
            x = layer.forward(x);
        }
        x
    }

    /// Accumulates parameter gradients; returns the input gradient when `need_dx`.
    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let mut grad = dy;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            grad = layer.backward(&grad, need_dx || i > 0)?;
        }
        Some(grad)
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.layers.iter().flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut())
    }

    /// Kaiming-uniform weights and zero biases; each parameter draws from its
    /// own stream derived from `seed` and its name, so adding or removing a
    /// layer never perturbs the others.
    pub fn init(&mut self, seed: u64) {
        for layer in &mut self.layers {
            let Some(fan_in) = layer.fan_in() else { continue };
            for p in layer.params_mut() {
                if p.name.ends_with(".bias") {
                    p.value.iter_mut().for_each(|v| *v = T::zero());
                } else {
                    let mut rng = crate::rng::stream(seed, &[p.name.as_bytes()]);
                    p.kaiming_uniform(fan_in, &mut rng);
                }
            }
        }
    }
}
