use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::seq2seq::EncoderOutput;

/// Additive attention `e_i = vᵀ tanh(W1 h_i + W2 s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `hidden × attn`
    pub w1: ParamId,
    /// `hidden × attn`
    pub w2: ParamId,
    /// `attn × 1`
    pub v: ParamId,
}

impl AttentionParams {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        hidden: usize,
        attn: usize,
        init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AttentionParams {
            w1: store.add(
                format!("{prefix}.W1"),
                Tensor::uniform(&[hidden, attn], -init, init, rng),
            )?,
            w2: store.add(
                format!("{prefix}.W2"),
                Tensor::uniform(&[hidden, attn], -init, init, rng),
            )?,
            v: store.add(format!("{prefix}.v"), Tensor::uniform(&[attn, 1], -init, init, rng))?,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.w2, self.v]
    }
}

/// `W1 h_i` for every encoder position; independent of the decoder step.
#[derive(Clone, Debug)]
pub struct AttentionKeys {
    pub keys: Vec<Var>,
}

impl AttentionKeys {
    pub fn new<S: Scalar>(
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        enc: &EncoderOutput,
        ap: &AttentionParams,
    ) -> Result<Self> {
        let w1 = tape.param(store, ap.w1);
        let keys = enc.states.iter().map(|&h| tape.matmul(h, w1)).collect::<Result<_>>()?;
        Ok(AttentionKeys { keys })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// Normalized weights, `batch × m`; masked positions are exactly zero.
    pub alphas: Var,
    /// Raw relevance scores, `batch × m`.
    pub scores: Var,
    /// `Σ α_i h_i`, `batch × hidden`.
    pub context: Var,
}

pub fn attend<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    query: Var,
    enc: &EncoderOutput,
    ap: &AttentionParams,
) -> Result<Attended> {
    let keys = AttentionKeys::new(tape, store, enc, ap)?;
    attend_with_keys(tape, store, query, enc, &keys, ap)
}

pub fn attend_with_keys<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    query: Var,
    enc: &EncoderOutput,
    keys: &AttentionKeys,
    ap: &AttentionParams,
) -> Result<Attended> {
    let m = enc.len();
    if keys.keys.len() != m || m == 0 {
        return Err(shape_err(
            "attend",
            format!("{} keys for {} states", keys.keys.len(), m),
        ));
    }
    for r in 0..enc.batch {
        if !enc.valid[r * m..(r + 1) * m].iter().any(|&v| v) {
            return Err(Error::AllMasked { op: "attend" });
        }
    }
    let w2 = tape.param(store, ap.w2);
    let v = tape.param(store, ap.v);
    let q = tape.matmul(query, w2)?;
    let mut cols = Vec::with_capacity(m);
    for &k in &keys.keys {
        let pre = tape.add(k, q)?;
        let t = tape.tanh(pre);
        cols.push(tape.matmul(t, v)?);
    }
    let scores = tape.concat(&cols, 1)?;
    let alphas = tape.softmax(scores, Some(&enc.valid))?;
    let mut context = None;
    for (i, &h) in enc.states.iter().enumerate() {
        if (0..enc.batch).all(|r| !enc.valid[r * m + i]) {
            continue;
        }
        let a = tape.column(alphas, i)?;
        let term = tape.scale_rows(h, a)?;
        context = Some(match context {
            None => term,
            Some(c) => tape.add(c, term)?,
        });
    }
    let context = context.ok_or(Error::AllMasked { op: "attend" })?;
    Ok(Attended {
        alphas,
        scores,
        context,
    })
}
