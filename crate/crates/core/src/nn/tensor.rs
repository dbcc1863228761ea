use super::Scalar;

/// Dense row-major array with an explicit shape.
///
/// Image activations use the `[channels, batch, height, width]` layout so a
/// convolution output from one GEMM is already in place for the next layer.
/// Flat features use `[batch, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a `[rows, cols]` tensor.
    pub fn row(&self, i: usize) -> &[T] {
        assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts an `[batch, channels, height, width]` buffer into the
    /// internal `[channels, batch, height, width]` layout.
    pub fn from_nchw(batch: usize, channels: usize, height: usize, width: usize, nchw: &[T]) -> Self {
        let plane = height * width;
        assert_eq!(nchw.len(), batch * channels * plane);
        let mut data = vec![T::zero(); nchw.len()];
        for b in 0..batch {
            for c in 0..channels {
                let src = &nchw[(b * channels + c) * plane..][..plane];
                data[(c * batch + b) * plane..][..plane].copy_from_slice(src);
            }
        }
        Self::from_vec(&[channels, batch, height, width], data)
    }

    /// Inverse of [`Tensor::from_nchw`].
    pub fn to_nchw(&self) -> Vec<T> {
        assert_eq!(self.shape.len(), 4);
        let (c_n, b_n, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let plane = h * w;
        let mut out = vec![T::zero(); self.data.len()];
        for c in 0..c_n {
            for b in 0..b_n {
                out[(b * c_n + c) * plane..][..plane].copy_from_slice(&self.data[(c * b_n + b) * plane..][..plane]);
            }
        }
        out
    }
}
