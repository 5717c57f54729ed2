//! Joint Write/Copy action space: distribution, gold attribution, training
//! loss and greedy decoding.
//!
//! Action layout is fixed: `[Write(0) .. Write(|V|-1), Copy(0) .. Copy(m-1)]`,
//! where copy positions index the encoder's (reversed) input.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Vocabulary, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::numcore::{masked_softmax, NllRow, ParamStore, Tape, Var, PROB_FLOOR};
use crate::scalar::Scalar;
use crate::seq2seq::{
    decoder_step, encode, initial_state, write_logits, AttentionKeys, EncoderInput, Regularizer, Seq2SeqParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// Emit decoder-vocabulary token `id`.
    Write(usize),
    /// Emit the surface token at encoder position `i` (0-based).
    Copy(usize),
}

impl Action {
    pub fn index(self, write_size: usize) -> usize {
        match self {
            Action::Write(id) => id,
            Action::Copy(i) => write_size + i,
        }
    }

    pub fn from_index(index: usize, write_size: usize) -> Self {
        if index < write_size {
            Action::Write(index)
        } else {
            Action::Copy(index - write_size)
        }
    }

    pub fn is_copy(self) -> bool {
        matches!(self, Action::Copy(_))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Write(id) => write!(f, "WRITE[{id}]"),
            Action::Copy(i) => write!(f, "COPY[{i}]"),
        }
    }
}

/// One encoder position's provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceToken {
    pub surface: String,
    /// 0-based position in the original utterance; `None` for an artificial task token.
    pub original_pos: Option<usize>,
    pub copyable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution<S> {
    probs: Vec<S>,
    write_size: usize,
}

impl<S: Scalar> ActionDistribution<S> {
    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn write_size(&self) -> usize {
        self.write_size
    }

    pub fn copy_size(&self) -> usize {
        self.probs.len() - self.write_size
    }

    pub fn prob(&self, a: Action) -> S {
        self.probs[a.index(self.write_size)]
    }

    /// Most probable action; the lowest index wins ties.
    pub fn argmax(&self) -> Action {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        Action::from_index(best, self.write_size)
    }

    /// The `k` most probable actions, ties broken by index.
    pub fn top(&self, k: usize) -> Vec<(Action, S)> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx.into_iter()
            .take(k)
            .map(|i| (Action::from_index(i, self.write_size), self.probs[i]))
            .collect()
    }
}

/// Single softmax over `[write_logits; copy_scores]` with invalid copy
/// positions masked out.
pub fn action_distribution<S: Scalar>(
    write_logits: &[S],
    copy_scores: &[S],
    copy_valid: &[bool],
) -> Result<ActionDistribution<S>> {
    if copy_scores.len() != copy_valid.len() {
        return Err(Error::Shape {
            op: "action_distribution",
            detail: format!("{} copy scores, {} mask entries", copy_scores.len(), copy_valid.len()),
        });
    }
    let logits: Vec<S> = write_logits.iter().chain(copy_scores).copied().collect();
    let mask: Vec<bool> = std::iter::repeat_n(true, write_logits.len())
        .chain(copy_valid.iter().copied())
        .collect();
    let probs = masked_softmax(&logits, Some(&mask)).map_err(|e| match e {
        Error::AllMasked { .. } => Error::AllMasked {
            op: "action_distribution",
        },
        other => other,
    })?;
    Ok(ActionDistribution {
        probs,
        write_size: write_logits.len(),
    })
}

/// Which of several generating actions is supervised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoldAttribution {
    /// Marginalize over every action that yields the gold token.
    #[default]
    Marginal,
    /// Supervise only copy actions when any exist.
    CopyPreferred,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldActions {
    pub actions: Vec<Action>,
    /// False when no action produces the token and `Write(UNK)` stands in.
    pub covered: bool,
}

/// Every action that produces `gold_token`.
pub fn gold_action_set(
    gold_token: &str,
    sources: &[SourceToken],
    write_vocab: &Vocabulary,
    attribution: GoldAttribution,
) -> GoldActions {
    let mut actions = Vec::new();
    if let Some(id) = write_vocab.get(gold_token).filter(|&id| id != PAD && id != BOS) {
        actions.push(Action::Write(id));
    }
    let copies = sources
        .iter()
        .enumerate()
        .filter(|(_, s)| s.copyable && s.surface == gold_token)
        .map(|(i, _)| Action::Copy(i));
    actions.extend(copies);
    if attribution == GoldAttribution::CopyPreferred && actions.iter().any(|a| a.is_copy()) {
        actions.retain(|a| a.is_copy());
    }
    if actions.is_empty() {
        return GoldActions {
            actions: vec![Action::Write(UNK)],
            covered: false,
        };
    }
    GoldActions { actions, covered: true }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss<S> {
    pub nll: S,
    /// The gold probability mass was below [`PROB_FLOOR`] and was floored.
    pub floored: bool,
}

/// `−log Σ_{a ∈ gold} p(a)`.
pub fn step_loss<S: Scalar>(dist: &ActionDistribution<S>, gold: &[Action]) -> Result<StepLoss<S>> {
    if gold.is_empty() {
        return Err(Error::Config("empty gold action set".into()));
    }
    let mut seen = Vec::with_capacity(gold.len());
    let mut mass = S::zero();
    for &a in gold {
        let i = a.index(dist.write_size);
        if i >= dist.probs.len() {
            return Err(Error::Config(format!("gold action {a} outside the action space")));
        }
        if !seen.contains(&i) {
            seen.push(i);
            mass += dist.probs[i];
        }
    }
    let floor = S::lit(PROB_FLOOR);
    let floored = mass < floor;
    Ok(StepLoss {
        nll: -mass.max(floor).ln(),
        floored,
    })
}

/// Validity mask over the action space for a batch: all writes, then the
/// batch's copyable positions. Row-major `batch × (write_size + m)`.
pub fn action_mask(write_size: usize, copyable: &[bool], batch: usize) -> Vec<bool> {
    let m = copyable.len() / batch.max(1);
    let mut mask = Vec::with_capacity(batch * (write_size + m));
    for r in 0..batch {
        mask.extend(std::iter::repeat_n(true, write_size));
        mask.extend_from_slice(&copyable[r * m..(r + 1) * m]);
    }
    mask
}

#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    /// Mean over the batch of per-example summed step losses.
    pub loss: Var,
    pub positions: usize,
}

/// Teacher-forced loss for one batch.
pub fn batch_loss<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &Seq2SeqParams,
    batch: &Batch,
    reg: &mut Option<Regularizer<'_>>,
) -> Result<BatchLoss> {
    let b = batch.size();
    let write_size = store.value(p.output).cols();
    let enc = encode(tape, store, p, &batch.encoder, reg)?;
    let keys = AttentionKeys::new(tape, store, &enc, &p.attention)?;
    let mask = action_mask(write_size, &batch.encoder.copyable, b);
    let mut state = initial_state(tape, p, b);
    let mut total: Option<Var> = None;
    let mut positions = 0;
    for j in 0..batch.target_len() {
        let out = decoder_step(tape, store, p, &batch.decoder_inputs[j], &state, &enc, &keys, reg)?;
        let top = *out.state.last().expect("decoder layer");
        let logits = write_logits(tape, store, top, out.context, p.output, reg)?;
        let actions = tape.concat(&[logits, out.scores], 1)?;
        let rows: Vec<NllRow> = (0..b)
            .map(|r| {
                let valid = batch.target_valid[j][r];
                positions += valid as usize;
                NllRow {
                    gold: if valid {
                        batch.gold[j][r].iter().map(|a| a.index(write_size)).collect()
                    } else {
                        Vec::new()
                    },
                    weight: if valid { 1.0 } else { 0.0 },
                }
            })
            .collect();
        let nll = tape.marginal_nll(actions, &mask, &rows)?;
        total = Some(match total {
            None => nll,
            Some(t) => tape.add(t, nll)?,
        });
        state = out.state;
    }
    let total = total.ok_or_else(|| Error::Config("batch has no target positions".into()))?;
    let loss = tape.affine(total, S::lit(1.0 / b as f64), S::zero());
    Ok(BatchLoss { loss, positions })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub action: Action,
    pub token: String,
    pub prob: f64,
    /// Best three actions with their probabilities.
    pub top: Vec<(Action, String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<String>,
    pub trace: Vec<TraceStep>,
}

impl Decoded {
    /// Emitted tokens that came from copy actions.
    pub fn copied_tokens(&self) -> impl Iterator<Item = &str> {
        self.trace
            .iter()
            .filter(|s| s.action.is_copy())
            .map(|s| s.token.as_str())
    }

    /// One line per step: index, chosen action and token, then the top three alternatives.
    pub fn format_trace(&self) -> String {
        let mut out = String::new();
        for s in &self.trace {
            let alts: Vec<String> = s.top.iter().map(|(a, t, p)| format!("{a}={t}:{p:.4}")).collect();
            out.push_str(&format!(
                "{}\t{}={}\t{:.4}\t{}\n",
                s.step,
                s.action,
                s.token,
                s.prob,
                alts.join(" ")
            ));
        }
        out
    }
}

/// Default decode length limit for a source of `m` tokens.
pub fn default_max_len(m: usize) -> usize {
    2 * m + 10
}

/// Greedy decoding of one source sequence.
///
/// A copied token is fed back through its id in `feed_vocab` (UNK when absent).
pub fn greedy_decode<S: Scalar>(
    store: &ParamStore<S>,
    p: &Seq2SeqParams,
    input: &EncoderInput,
    sources: &[SourceToken],
    write_vocab: &Vocabulary,
    feed_vocab: &Vocabulary,
    max_len: usize,
) -> Result<Decoded> {
    if input.batch != 1 || sources.len() != input.len() {
        return Err(Error::Shape {
            op: "greedy_decode",
            detail: format!(
                "batch {} with {} sources for {} positions",
                input.batch,
                sources.len(),
                input.len()
            ),
        });
    }
    let mut tape = Tape::new();
    let mut none = None;
    let enc = encode(&mut tape, store, p, input, &mut none)?;
    let keys = AttentionKeys::new(&mut tape, store, &enc, &p.attention)?;
    let mut state = initial_state(&mut tape, p, 1);
    let mut y = BOS;
    let mut tokens = Vec::new();
    let mut trace = Vec::new();
    let surface = |a: Action| -> String {
        match a {
            Action::Write(id) => write_vocab.token(id).unwrap_or(crate::data::UNK_TOKEN).to_string(),
            Action::Copy(i) => sources[i].surface.clone(),
        }
    };
    for step in 0..max_len {
        let out = decoder_step(&mut tape, store, p, &[y], &state, &enc, &keys, &mut none)?;
        let top = *out.state.last().expect("decoder layer");
        let logits = write_logits(&mut tape, store, top, out.context, p.output, &mut none)?;
        let dist = action_distribution(
            tape.value(logits).data(),
            tape.value(out.scores).data(),
            &input.copyable,
        )?;
        let action = dist.argmax();
        let token = surface(action);
        trace.push(TraceStep {
            step: step + 1,
            action,
            token: token.clone(),
            prob: dist.prob(action).as_f64(),
            top: dist
                .top(3)
                .into_iter()
                .map(|(a, pr)| (a, surface(a), pr.as_f64()))
                .collect(),
        });
        if action == Action::Write(EOS) {
            break;
        }
        y = feed_vocab.id(&token);
        tokens.push(token);
        state = out.state;
    }
    Ok(Decoded { tokens, trace })
}

#[cfg(test)]
mod tests;
