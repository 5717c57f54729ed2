use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Handles to one GRU layer's weights.
///
/// Row-vector convention: `x` is `batch × input`, `W_*` are `input × hidden`,
/// `U_*` are `hidden × hidden` and biases `1 × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayerParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruLayerParams {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = |name: &str, rows: usize| {
            store.add(
                format!("{prefix}.{name}"),
                Tensor::uniform(&[rows, hidden], -init, init, rng),
            )
        };
        let (w_z, w_r, w_h) = (w("W_z", input)?, w("W_r", input)?, w("W_h", input)?);
        let (u_z, u_r, u_h) = (w("U_z", hidden)?, w("U_r", hidden)?, w("U_h", hidden)?);
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[1, hidden]));
        let (b_z, b_r, b_h) = (b("b_z")?, b("b_r")?, b("b_h")?);
        Ok(GruLayerParams {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            input,
            hidden,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h,
        ]
    }
}

/// One GRU update:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h̃  = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h′ = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_cell<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    x: Var,
    h_prev: Var,
    p: &GruLayerParams,
) -> Result<Var> {
    let (xv, hv) = (tape.value(x), tape.value(h_prev));
    if xv.cols() != p.input || hv.cols() != p.hidden || xv.rows() != hv.rows() {
        return Err(shape_err(
            "gru_cell",
            format!(
                "input {:?} / state {:?} for a {}→{} layer",
                xv.shape(),
                hv.shape(),
                p.input,
                p.hidden
            ),
        ));
    }
    let gate = |tape: &mut Tape<S>, w: ParamId, u: ParamId, b: ParamId, h: Var| -> Result<Var> {
        let w = tape.param(store, w);
        let u = tape.param(store, u);
        let b = tape.param(store, b);
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    };
    let z_in = gate(tape, p.w_z, p.u_z, p.b_z, h_prev)?;
    let z = tape.sigmoid(z_in);
    let r_in = gate(tape, p.w_r, p.u_r, p.b_r, h_prev)?;
    let r = tape.sigmoid(r_in);
    let rh = tape.mul(r, h_prev)?;
    let c_in = gate(tape, p.w_h, p.u_h, p.b_h, rh)?;
    let candidate = tape.tanh(c_in);
    // h + z ⊙ (h̃ − h)
    let delta = tape.sub(candidate, h_prev)?;
    let step = tape.mul(z, delta)?;
    tape.add(h_prev, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(input: usize, hidden: usize, init: f64, seed: u64) -> (ParamStore<f64>, GruLayerParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GruLayerParams::register(&mut store, "gru", input, hidden, init, &mut rng).unwrap();
        (store, p)
    }

    #[test]
    fn zero_params_zero_state_stays_zero() {
        let (store, p) = layer(3, 2, 0.0, 0);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[&[0.4, -1.0, 2.0]]));
        let h = tape.leaf(Tensor::zeros(&[1, 2]));
        let out = gru_cell(&mut tape, &store, x, h, &p).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_update_gate_takes_candidate() {
        let (mut store, p) = layer(2, 2, 0.3, 4);
        store.get_mut(p.b_z).value.fill(60.0);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[&[0.5, -0.5]]));
        let h = tape.leaf(Tensor::from_rows(&[&[0.9, -0.7]]));
        let out = gru_cell(&mut tape, &store, x, h, &p).unwrap();

        // candidate recomputed by hand
        let v = |id| store.value(id).clone();
        let (xv, hv) = ([0.5, -0.5], [0.9, -0.7]);
        let lin =
            |w: &Tensor<f64>, a: &[f64], j: usize| a.iter().enumerate().map(|(i, ai)| ai * w.get(i, j)).sum::<f64>();
        let r: Vec<f64> = (0..2)
            .map(|j| 1.0 / (1.0 + (-(lin(&v(p.w_r), &xv, j) + lin(&v(p.u_r), &hv, j))).exp()))
            .collect();
        let rh = [r[0] * hv[0], r[1] * hv[1]];
        for j in 0..2 {
            let cand = (lin(&v(p.w_h), &xv, j) + lin(&v(p.u_h), &rh, j)).tanh();
            assert!((tape.value(out).data()[j] - cand).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let (store, p) = layer(3, 2, 0.1, 1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2]));
        let h = tape.leaf(Tensor::zeros(&[1, 2]));
        assert!(gru_cell(&mut tape, &store, x, h, &p).is_err());
    }

    #[test]
    fn gradient_check() {
        let (mut store, p) = layer(3, 4, 0.5, 9);
        let x = store
            .add("x", Tensor::from_rows(&[&[0.2, -0.3, 0.8], &[1.0, 0.1, -0.4]]))
            .unwrap();
        let h0 = store
            .add(
                "h0",
                Tensor::from_rows(&[&[0.1, 0.0, -0.2, 0.3], &[-0.5, 0.4, 0.2, 0.0]]),
            )
            .unwrap();
        let ids: Vec<ParamId> = store.ids().collect();
        let report = grad_check(&mut store, &ids, 1e-5, |s, tape| {
            let xv = tape.param(s, x);
            let hv = tape.param(s, h0);
            let h1 = gru_cell(tape, s, xv, hv, &p)?;
            let h2 = gru_cell(tape, s, xv, h1, &p)?;
            let t = tape.tanh(h2);
            Ok(tape.sum_all(t))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
