use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Default global-norm clipping threshold.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdReport {
    /// Global L2 norm of the gradients before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Clipped SGD over the parameters in `ids`.
///
/// If the global gradient norm exceeds `clip_norm` every gradient is scaled by
/// `clip_norm / norm` first. All gradients in the store are zeroed afterwards,
/// including when the update is rejected because a gradient is not finite.
pub fn sgd_step<S: Scalar>(store: &mut ParamStore<S>, ids: &[ParamId], lr: f64, clip_norm: f64) -> Result<SgdReport> {
    let sq: f64 = ids.iter().map(|&id| store.get(id).grad.sq_norm().as_f64()).sum();
    let norm = sq.sqrt();
    if !norm.is_finite() {
        let bad = ids
            .iter()
            .find(|&&id| !store.get(id).grad.all_finite())
            .map(|&id| store.get(id).name.clone())
            .unwrap_or_default();
        store.zero_grads();
        return Err(Error::NonFinite(format!("gradient of `{bad}`")));
    }
    let clipped = norm > clip_norm;
    let scale = if clipped { clip_norm / norm } else { 1.0 };
    let step = S::lit(lr * scale);
    for &id in ids {
        let p = store.get_mut(id);
        let grad = p.grad.data().to_vec();
        for (v, g) in p.value.data_mut().iter_mut().zip(grad) {
            *v -= step * g;
        }
    }
    store.zero_grads();
    Ok(SgdReport {
        grad_norm: norm,
        clipped,
    })
}
