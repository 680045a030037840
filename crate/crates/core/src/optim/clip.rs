use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;

/// Euclidean norm of the concatenation of all slices, accumulated in f64.
pub fn global_norm<T: Scalar>(grads: &[&mut [T]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| {
            let v = v.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `c / ||g||` when the global norm reaches `c`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [&mut [T]], c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::config(format!("gradient_clip must be > 0, got {c}")));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    if norm >= c {
        let scale = T::lit(c / norm);
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v = *v * scale);
        }
    }
    Ok(norm)
}

/// [`clip_grad_norm`] over every gradient of a parameter store.
pub fn clip_store_grad_norm<T: Scalar>(params: &mut ParamStore<T>, c: f64) -> Result<f64> {
    clip_grad_norm(&mut params.grads_mut(), c)
}
