//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Var};
use crate::scalar::Scalar;

/// Relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
    /// Entries whose difference quotient was re-evaluated at reference precision.
    pub refined: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    fn record(&mut self, err: f64, name: &str, i: usize) {
        self.entries += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((name.to_string(), i));
        }
    }
}

/// Entries whose working-precision relative error exceeds this are
/// re-evaluated by the reference loss in [`GradCheck::run_with_reference`].
pub const REFINE_ABOVE: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub h: f64,
    /// Added to the analytic gradient of the first entry of every parameter
    /// before comparison. Non-zero only when exercising the checker itself.
    pub fault: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { h: 1e-5, fault: 0.0 }
    }
}

/// `(L(θ+h) − L(θ−h)) / 2h` for one entry, restoring the value afterwards.
fn central<R, G>(store: &mut ParamStore<R>, id: ParamId, i: usize, h: f64, loss_fn: &G) -> Result<f64>
where
    R: Scalar,
    G: Fn(&ParamStore<R>, &mut Tape<R>) -> Result<Var>,
{
    let eval = |store: &ParamStore<R>| -> Result<R> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        let v = tape.value(loss).scalar();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(v)
    };
    let orig = store.value(id).data()[i];
    store.get_mut(id).value.data_mut()[i] = orig + R::lit(h);
    let plus = eval(store);
    store.get_mut(id).value.data_mut()[i] = orig - R::lit(h);
    let minus = eval(store);
    store.get_mut(id).value.data_mut()[i] = orig;
    Ok(((plus? - minus?) / R::lit(2.0 * h)).as_f64())
}

impl GradCheck {
    /// Compares tape gradients of `loss_fn` against `(L(θ+h) − L(θ−h)) / 2h`
    /// for every entry of the parameters in `ids`. `loss_fn` must be
    /// deterministic. Parameter values are restored afterwards and all
    /// gradients are left zeroed.
    pub fn run<S, F>(&self, store: &mut ParamStore<S>, ids: &[ParamId], loss_fn: F) -> Result<GradCheckReport>
    where
        S: Scalar,
        F: Fn(&ParamStore<S>, &mut Tape<S>) -> Result<Var>,
    {
        let analytic = self.analytic(store, ids, &loss_fn)?;
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            entries: 0,
            refined: 0,
        };
        for (k, &id) in ids.iter().enumerate() {
            for (i, &a) in analytic[k].iter().enumerate() {
                let numeric = central(store, id, i, self.h, &loss_fn)?;
                let err = relative_error(a, numeric);
                report.record(err, &store.get(id).name, i);
            }
        }
        Ok(report)
    }

    /// Like [`GradCheck::run`], except that entries whose error exceeds
    /// [`REFINE_ABOVE`] have their difference quotient recomputed by
    /// `reference`, the same loss in the scalar type `R`, on a converted copy
    /// of the parameters. The refined value replaces the working-precision one.
    pub fn run_with_reference<S, R, F, G>(
        &self,
        store: &mut ParamStore<S>,
        ids: &[ParamId],
        loss_fn: F,
        reference: G,
    ) -> Result<GradCheckReport>
    where
        S: Scalar,
        R: Scalar,
        F: Fn(&ParamStore<S>, &mut Tape<S>) -> Result<Var>,
        G: Fn(&ParamStore<R>, &mut Tape<R>) -> Result<Var>,
    {
        let analytic = self.analytic(store, ids, &loss_fn)?;
        let mut wide = store.cast::<R>();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            entries: 0,
            refined: 0,
        };
        for (k, &id) in ids.iter().enumerate() {
            for (i, &a) in analytic[k].iter().enumerate() {
                let mut err = relative_error(a, central(store, id, i, self.h, &loss_fn)?);
                if err > REFINE_ABOVE {
                    err = relative_error(a, central(&mut wide, id, i, self.h, &reference)?);
                    report.refined += 1;
                }
                report.record(err, &store.get(id).name, i);
            }
        }
        Ok(report)
    }

    fn analytic<S, F>(&self, store: &mut ParamStore<S>, ids: &[ParamId], loss_fn: &F) -> Result<Vec<Vec<f64>>>
    where
        S: Scalar,
        F: Fn(&ParamStore<S>, &mut Tape<S>) -> Result<Var>,
    {
        store.zero_grads();
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        if !tape.value(loss).all_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        tape.backward(loss, store)?;
        let analytic = ids
            .iter()
            .map(|&id| {
                let mut g: Vec<f64> = store.get(id).grad.data().iter().map(|g| g.as_f64()).collect();
                if let Some(first) = g.first_mut() {
                    *first += self.fault;
                }
                g
            })
            .collect();
        store.zero_grads();
        Ok(analytic)
    }
}

/// [`GradCheck::run`] with step `h` and no fault injection.
pub fn grad_check<S, F>(store: &mut ParamStore<S>, ids: &[ParamId], h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&ParamStore<S>, &mut Tape<S>) -> Result<Var>,
{
    GradCheck { h, fault: 0.0 }.run(store, ids, loss_fn)
}
