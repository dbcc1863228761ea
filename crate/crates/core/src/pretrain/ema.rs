use crate::error::{Error, Result};
use crate::models::WeightBundle;
use crate::nn::{Param, Scalar};

/// `target ← τ·target + (1 − τ)·online`, elementwise.
pub(crate) fn ema_slice<T: Scalar>(target: &mut [T], online: &[T], tau: T) {
    let rest = T::one() - tau;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * *t + rest * o;
    }
}

/// Momentum update of a target bundle toward an online bundle. Pure: the
/// inputs are untouched and the result keeps the target's metadata.
pub fn ema_update<T: Scalar>(target: &WeightBundle<T>, online: &WeightBundle<T>, tau: f64) -> Result<WeightBundle<T>> {
    check_tau(tau)?;
    if !target.keys().eq(online.keys()) {
        let t: Vec<_> = target.keys().collect();
        let o: Vec<_> = online.keys().collect();
        return Err(Error::Argument(format!(
            "EMA key sets differ: target {t:?} vs online {o:?}"
        )));
    }
    let mut out = target.clone();
    for (name, a) in out.arrays.iter_mut() {
        let b = &online.arrays[name];
        if a.shape != b.shape {
            return Err(Error::Shape(format!(
                "{name}: target shape {:?} vs online shape {:?}",
                a.shape, b.shape
            )));
        }
        ema_slice(&mut a.data, &b.data, T::lit(tau));
    }
    Ok(out)
}

/// In-place momentum update over parameter lists matched by name.
pub(crate) fn ema_params<'a, T: Scalar>(
    target: impl IntoIterator<Item = &'a mut Param<T>>,
    online: impl IntoIterator<Item = &'a Param<T>>,
    tau: f64,
) -> Result<()> {
    let mut online = online.into_iter();
    for t in target {
        let o = online
            .find(|o| o.name == t.name)
            .ok_or_else(|| Error::Argument(format!("online branch has no parameter {:?}", t.name)))?;
        ema_slice(&mut t.value, &o.value, T::lit(tau));
    }
    Ok(())
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Config(format!("momentum τ must lie in [0, 1], got {tau}")))
    }
}
