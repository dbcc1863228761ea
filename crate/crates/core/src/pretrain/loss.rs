use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Added to vector norms before dividing, so zero vectors stay finite.
pub const NORM_EPS: f64 = 1e-8;

/// Mean over the batch of `‖q̂ − k̂‖²`, with `x̂ = x / (‖x‖ + ε)` when
/// `normalize` is set and `x̂ = x` otherwise.
///
/// Returns the loss and its gradient with respect to `query`; `key` is a
/// constant (no gradient is produced for it). Normalized per-pair values
/// lie in `[0, 4]`.
pub fn byol_time_loss<T: Scalar>(query: &Tensor<T>, key: &Tensor<T>, normalize: bool) -> Result<(T, Tensor<T>)> {
    if query.shape() != key.shape() || query.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "query {:?} and key {:?} must be equal [batch, dim] shapes",
            query.shape(),
            key.shape()
        )));
    }
    let (b, d) = (query.shape()[0], query.shape()[1]);
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let eps = T::lit(NORM_EPS);
    let inv_b = T::one() / T::lit(b as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(query.shape());
    for i in 0..b {
        let q = query.row(i);
        let k = key.row(i);
        let g = &mut grad.data_mut()[i * d..(i + 1) * d];
        if normalize {
            let qn = norm(q);
            let kn = norm(k);
            let qs = qn + eps;
            let ks = kn + eps;
            let diff: Vec<T> = q.iter().zip(k).map(|(&a, &c)| a / qs - c / ks).collect();
            loss += diff.iter().map(|&v| v * v).sum::<T>();
            // upstream gradient on the normalized query
            let up: Vec<T> = diff.iter().map(|&v| two * v * inv_b).collect();
            let dot: T = q.iter().zip(&up).map(|(&a, &u)| a * u).sum();
            for j in 0..d {
                g[j] = up[j] / qs;
                if qn > T::zero() {
                    g[j] = g[j] - q[j] * dot / (qs * qs * qn);
                }
            }
        } else {
            for j in 0..d {
                let v = q[j] - k[j];
                loss += v * v;
                g[j] = two * v * inv_b;
            }
        }
    }
    Ok((loss * inv_b, grad))
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Mean squared error over all elements, and its gradient w.r.t. `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    let n = T::lit(pred.len().max(1) as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d / n
        })
        .collect();
    Ok((loss / n, Tensor::from_vec(pred.shape(), grad)))
}

/// `KL(N(μ, σ²) ‖ N(0, 1))` for one diagonal Gaussian, summed over dimensions:
/// `−½ Σ (1 + log σ² − μ² − σ²)`.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}
