use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Ground-truth vectors shorter than this contribute nothing to the direction term.
pub const DIRECTION_EPS: f64 = 1e-6;

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// `MSE(pred, gt) + λ · mean_b(1 − cos(pred_b, gt_b))` and its gradient w.r.t. `pred`.
///
/// The MSE averages over every component of the `[batch, 3]` arrays. Rows
/// whose ground truth is shorter than [`DIRECTION_EPS`] add zero to the
/// direction sum; the sum is still divided by the full batch size.
pub fn bc_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, lambda_dir: f64) -> Result<(T, Tensor<T>)> {
    if pred.shape() != gt.shape() || pred.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "prediction {:?} and ground truth {:?} must be equal [batch, 3] shapes",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.data().iter().chain(gt.data()).any(|v| v.is_nan()) {
        return Err(Error::Validation("NaN in behavior-cloning loss inputs".into()));
    }
    let (b, d) = (pred.shape()[0], pred.shape()[1]);
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let n = T::lit((b * d) as f64);
    let two = T::lit(2.0);
    let lambda = T::lit(lambda_dir);
    let inv_b = T::one() / T::lit(b as f64);
    let eps = T::lit(DIRECTION_EPS);
    let mut mse = T::zero();
    let mut dir = T::zero();
    let mut grad = Tensor::zeros(pred.shape());
    for i in 0..b {
        let p = pred.row(i);
        let g = gt.row(i);
        let out = &mut grad.data_mut()[i * d..(i + 1) * d];
        for j in 0..d {
            let e = p[j] - g[j];
            mse += e * e;
            out[j] = two * e / n;
        }
        let gn = norm(g);
        if gn < eps {
            continue;
        }
        let pn = norm(p);
        if pn < eps {
            // direction undefined: constant penalty, no gradient
            dir += T::one();
            continue;
        }
        let dot: T = p.iter().zip(g).map(|(&a, &c)| a * c).sum();
        let cos = dot / (pn * gn);
        dir += T::one() - cos;
        let scale = lambda * inv_b;
        for j in 0..d {
            let dcos = g[j] / (pn * gn) - cos * p[j] / (pn * pn);
            out[j] = out[j] - scale * dcos;
        }
    }
    Ok((mse / n + lambda * dir * inv_b, grad))
}

/// The direction component alone, `mean_b(1 − cos)`, in `f64`.
pub fn direction_term(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    let b = pred.len().max(1) as f64;
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < DIRECTION_EPS {
                0.0
            } else if pn < DIRECTION_EPS {
                1.0
            } else {
                1.0 - p.iter().zip(g).map(|(a, c)| a * c).sum::<f64>() / (pn * gn)
            }
        })
        .sum::<f64>()
        / b
}
