use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::postprocess::postprocess;
use crate::copydec::{default_max_len, greedy_decode, Decoded};
use crate::data::{encode_source, Example};
use crate::error::{Error, Result};
use crate::multitask::ModelAssembly;
use crate::scalar::Scalar;
use crate::seq2seq::EncoderInput;

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "MULTIPARSE_THREADS";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleError {
    pub id: usize,
    pub utterance: String,
    pub gold: String,
    pub predicted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub total: usize,
    pub exact: usize,
    pub exact_match: f64,
    /// Position-wise matches over gold length (both post-processed).
    pub token_accuracy: f64,
    /// Gold tokens outside the write vocabulary.
    pub oov_total: usize,
    /// Of those, emitted by a copy action.
    pub oov_copied: usize,
    pub oov_copy_rate: f64,
    pub errors: Vec<ExampleError>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task              {}", self.task)?;
        writeln!(f, "examples          {}", self.total)?;
        writeln!(
            f,
            "exact match       {:.4} ({}/{})",
            self.exact_match, self.exact, self.total
        )?;
        writeln!(f, "token accuracy    {:.4}", self.token_accuracy)?;
        writeln!(
            f,
            "oov copy success  {:.4} ({}/{})",
            self.oov_copy_rate, self.oov_copied, self.oov_total
        )?;
        writeln!(f, "errors            {}", self.errors.len())
    }
}

/// Greedy decoding of one tokenized utterance for task index `task`.
pub fn decode_tokens<S: Scalar>(
    model: &ModelAssembly<S>,
    task: usize,
    utterance: &[String],
    max_len: Option<usize>,
) -> Result<Decoded> {
    if utterance.is_empty() {
        return Err(Error::Config("empty utterance".into()));
    }
    let route = model.route(task);
    let (ids, sources) = encode_source(utterance, route.vocabs.input, route.task_spec, model.arch);
    let copyable = sources.iter().map(|s| s.copyable).collect();
    let m = ids.len();
    let input = EncoderInput::single(ids, copyable);
    greedy_decode(
        &model.store,
        route.params,
        &input,
        &sources,
        route.vocabs.write,
        route.vocabs.feed,
        max_len.unwrap_or_else(|| default_max_len(m)),
    )
}

struct Scored {
    exact: bool,
    matched: usize,
    gold_len: usize,
    oov_total: usize,
    oov_copied: usize,
    error: Option<ExampleError>,
}

fn score<S: Scalar>(model: &ModelAssembly<S>, task: usize, ex: &Example, max_len: Option<usize>) -> Result<Scored> {
    let decoded = decode_tokens(model, task, &ex.utterance, max_len)?;
    let pred = postprocess(&decoded.tokens);
    let gold = postprocess(&ex.logical_form);
    let matched = gold.iter().zip(&pred).filter(|(g, p)| g == p).count();
    let exact = pred == gold;

    let write = model.route(task).vocabs.write;
    let mut copied: HashMap<&str, usize> = HashMap::new();
    for t in decoded.copied_tokens() {
        *copied.entry(t).or_default() += 1;
    }
    let (mut oov_total, mut oov_copied) = (0, 0);
    for t in ex.logical_form.iter().filter(|t| !write.contains(t)) {
        oov_total += 1;
        if let Some(c) = copied.get_mut(t.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            oov_copied += 1;
        }
    }
    Ok(Scored {
        exact,
        matched,
        gold_len: gold.len(),
        oov_total,
        oov_copied,
        error: (!exact).then(|| ExampleError {
            id: ex.id,
            utterance: ex.utterance.join(" "),
            gold: gold.join(" "),
            predicted: pred.join(" "),
        }),
    })
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n > 0)
}

/// Decodes every example, post-processes prediction and gold, and compares
/// them. Work may run on several threads; results are merged in input order.
pub fn evaluate<S: Scalar>(
    model: &ModelAssembly<S>,
    task_id: &str,
    examples: &[Example],
    max_len: Option<usize>,
) -> Result<EvalReport> {
    let task = model.task_index(task_id)?;
    let run = || -> Result<Vec<Scored>> { examples.par_iter().map(|ex| score(model, task, ex, max_len)).collect() };
    let scored = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let total = scored.len();
    let exact = scored.iter().filter(|s| s.exact).count();
    let matched: usize = scored.iter().map(|s| s.matched).sum();
    let gold_len: usize = scored.iter().map(|s| s.gold_len).sum();
    let oov_total: usize = scored.iter().map(|s| s.oov_total).sum();
    let oov_copied: usize = scored.iter().map(|s| s.oov_copied).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        task: task_id.to_string(),
        total,
        exact,
        exact_match: ratio(exact, total),
        token_accuracy: ratio(matched, gold_len),
        oov_total,
        oov_copied,
        oov_copy_rate: ratio(oov_copied, oov_total),
        errors: scored.into_iter().filter_map(|s| s.error).collect(),
    })
}
