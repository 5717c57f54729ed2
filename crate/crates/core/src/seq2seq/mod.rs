//! Stacked GRU encoder, additive attention and the attentional decoder step.

mod attention;
mod gru;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use attention::{attend, attend_with_keys, Attended, AttentionKeys, AttentionParams};
pub use gru::{gru_cell, GruLayerParams};

use crate::error::{shape_err, Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed: 64,
            hidden: 64,
            attention: 64,
            layers: 1,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.hidden == 0 || self.attention == 0 || self.layers == 0 {
            return Err(Error::Config(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Every parameter one task reads during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqParams {
    /// Source embedding `E_x`, `|V_in| × embed`.
    pub src_embed: ParamId,
    pub encoder: Vec<GruLayerParams>,
    pub attention: AttentionParams,
    /// Target embedding `E_y`, `|V_feed| × embed`.
    pub tgt_embed: ParamId,
    /// Layer 1 reads `[E_y(y); c]`.
    pub decoder: Vec<GruLayerParams>,
    /// Output projection `O`, `2·hidden × |V_write|`.
    pub output: ParamId,
}

impl Seq2SeqParams {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.src_embed];
        ids.extend(self.encoder.iter().flat_map(|l| l.ids()));
        ids.extend(self.attention.ids());
        ids.push(self.tgt_embed);
        ids.extend(self.decoder.iter().flat_map(|l| l.ids()));
        ids.push(self.output);
        ids
    }

    pub fn hidden(&self) -> usize {
        self.encoder[0].hidden
    }
}

pub fn register_embedding<S: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<S>,
    name: &str,
    vocab: usize,
    dim: usize,
    rng: &mut R,
) -> Result<ParamId> {
    store.add(name, Tensor::uniform(&[vocab, dim], -INIT_SCALE, INIT_SCALE, rng))
}

pub fn register_stack<S: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<S>,
    prefix: &str,
    input: usize,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<Vec<GruLayerParams>> {
    (0..dims.layers)
        .map(|l| {
            let inp = if l == 0 { input } else { dims.hidden };
            GruLayerParams::register(store, &format!("{prefix}.l{l}"), inp, dims.hidden, INIT_SCALE, rng)
        })
        .collect()
}

pub fn register_output<S: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<S>,
    name: &str,
    hidden: usize,
    vocab: usize,
    rng: &mut R,
) -> Result<ParamId> {
    store.add(
        name,
        Tensor::uniform(&[2 * hidden, vocab], -INIT_SCALE, INIT_SCALE, rng),
    )
}

/// Training-time dropout on non-recurrent connections.
pub struct Regularizer<'a> {
    pub dropout: f64,
    pub rng: &'a mut dyn RngCore,
}

fn drop<S: Scalar>(tape: &mut Tape<S>, x: Var, reg: &mut Option<Regularizer<'_>>) -> Result<Var> {
    match reg {
        Some(r) if r.dropout > 0.0 => tape.dropout(x, r.dropout, &mut *r.rng),
        _ => Ok(x),
    }
}

/// Encoder-side ids for a batch, already reversed and padded, row-major `batch × len`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    /// False on padding.
    pub valid: Vec<bool>,
    /// Positions that may be the target of a copy action.
    pub copyable: Vec<bool>,
    pub batch: usize,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.ids.len().checked_div(self.batch).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Single unpadded sequence.
    pub fn single(ids: Vec<usize>, copyable: Vec<bool>) -> Self {
        let n = ids.len();
        EncoderInput {
            ids,
            valid: vec![true; n],
            copyable,
            batch: 1,
        }
    }
}

/// Top-layer encoder states, one `batch × hidden` node per position.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub states: Vec<Var>,
    pub valid: Vec<bool>,
    pub copyable: Vec<bool>,
    pub batch: usize,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Runs the stacked encoder left to right from a zero state.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &Seq2SeqParams,
    input: &EncoderInput,
    reg: &mut Option<Regularizer<'_>>,
) -> Result<EncoderOutput> {
    let (b, m) = (input.batch, input.len());
    if b == 0 || m == 0 || input.ids.len() != b * m || input.valid.len() != b * m || input.copyable.len() != b * m {
        return Err(shape_err(
            "encode",
            format!(
                "{} ids / {} mask entries for batch {}",
                input.ids.len(),
                input.valid.len(),
                b
            ),
        ));
    }
    let table = tape.param(store, p.src_embed);
    let hidden = p.hidden();
    let mut h: Vec<Var> = p
        .encoder
        .iter()
        .map(|_| tape.leaf(Tensor::zeros(&[b, hidden])))
        .collect();
    let mut states = Vec::with_capacity(m);
    let mut col = vec![0usize; b];
    for t in 0..m {
        for (r, c) in col.iter_mut().enumerate() {
            *c = input.ids[r * m + t];
        }
        let mut x = tape.gather(table, &col)?;
        x = drop(tape, x, reg)?;
        for (l, layer) in p.encoder.iter().enumerate() {
            h[l] = gru_cell(tape, store, x, h[l], layer)?;
            x = if l + 1 < p.encoder.len() {
                drop(tape, h[l], reg)?
            } else {
                h[l]
            };
        }
        states.push(x);
    }
    Ok(EncoderOutput {
        states,
        valid: input.valid.clone(),
        copyable: input.copyable.clone(),
        batch: b,
    })
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// New decoder state, one node per layer.
    pub state: Vec<Var>,
    pub context: Var,
    /// Raw attention scores `e_j·`, reused as copy scores.
    pub scores: Var,
    pub alphas: Var,
}

pub fn initial_state<S: Scalar>(tape: &mut Tape<S>, p: &Seq2SeqParams, batch: usize) -> Vec<Var> {
    p.decoder
        .iter()
        .map(|l| tape.leaf(Tensor::zeros(&[batch, l.hidden])))
        .collect()
}

/// One decoder step. Attention is queried with the previous top-layer state;
/// the resulting context is fed with `E_y(y_prev)` into the first layer.
#[allow(clippy::too_many_arguments)]
pub fn decoder_step<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &Seq2SeqParams,
    y_prev: &[usize],
    s_prev: &[Var],
    enc: &EncoderOutput,
    keys: &AttentionKeys,
    reg: &mut Option<Regularizer<'_>>,
) -> Result<StepOutput> {
    if s_prev.len() != p.decoder.len() || y_prev.len() != enc.batch {
        return Err(shape_err(
            "decoder_step",
            format!(
                "{} state layers for {} decoder layers, {} previous tokens for batch {}",
                s_prev.len(),
                p.decoder.len(),
                y_prev.len(),
                enc.batch
            ),
        ));
    }
    let top = *s_prev.last().expect("at least one layer");
    let att = attend_with_keys(tape, store, top, enc, keys, &p.attention)?;
    let table = tape.param(store, p.tgt_embed);
    let emb = tape.gather(table, y_prev)?;
    let emb = drop(tape, emb, reg)?;
    let mut x = tape.concat(&[emb, att.context], 1)?;
    let mut state = Vec::with_capacity(s_prev.len());
    for (l, layer) in p.decoder.iter().enumerate() {
        let s = gru_cell(tape, store, x, s_prev[l], layer)?;
        state.push(s);
        x = if l + 1 < p.decoder.len() {
            drop(tape, s, reg)?
        } else {
            s
        };
    }
    Ok(StepOutput {
        state,
        context: att.context,
        scores: att.scores,
        alphas: att.alphas,
    })
}

/// Unnormalized write scores `[s; c] · O`.
pub fn write_logits<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    s: Var,
    c: Var,
    output: ParamId,
    reg: &mut Option<Regularizer<'_>>,
) -> Result<Var> {
    let o = tape.param(store, output);
    let rows = store.value(output).rows();
    let width = tape.value(s).cols() + tape.value(c).cols();
    if rows != width {
        return Err(shape_err(
            "write_logits",
            format!("[s; c] has width {width}, output layer expects {rows}"),
        ));
    }
    let sc = tape.concat(&[s, c], 1)?;
    let sc = drop(tape, sc, reg)?;
    tape.matmul(sc, o)
}

#[cfg(test)]
mod tests;
