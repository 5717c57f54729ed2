use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lr_schedule, TrainConfig};
use super::evaluate::evaluate;
use crate::copydec::batch_loss;
use crate::data::{build_vocab, encode_source, prepare_batch, Example, LengthLimit, SkippedExample};
use crate::error::{Error, Result};
use crate::multitask::{assemble, sample_task, ArchKind, ModelAssembly, TaskSpec};
use crate::numcore::{sgd_step, Tape, Tensor};
use crate::scalar::Scalar;
use crate::seq2seq::Regularizer;

/// Consecutive non-finite steps tolerated before training stops.
pub const MAX_CONSECUTIVE_BAD_STEPS: usize = 3;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskData {
    pub task_id: String,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

/// Input and decoder vocabularies from a task's training split.
pub fn task_spec_from(task_id: &str, train: &[Example], cfg: &TrainConfig) -> TaskSpec {
    let input = build_vocab(
        train.iter().map(|e| &e.utterance),
        cfg.vocab_max_size,
        cfg.vocab_min_count,
    );
    let output = build_vocab(
        train.iter().map(|e| &e.logical_form),
        cfg.vocab_max_size,
        cfg.vocab_min_count,
    );
    TaskSpec::new(task_id, input, output)
}

/// Vocabularies from the data, then parameters initialized from `cfg.seed`.
pub fn build_model<S: Scalar>(arch: ArchKind, data: &[TaskData], cfg: &TrainConfig) -> Result<ModelAssembly<S>> {
    cfg.validate()?;
    let specs = data.iter().map(|d| task_spec_from(&d.task_id, &d.train, cfg)).collect();
    assemble(arch, specs, cfg.dims(), cfg.seed)
}

/// One line of the step log: `step TAB task TAB epoch TAB lr TAB loss`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.step, self.task, self.epoch, self.lr, self.loss
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    /// Mean step loss per task; `None` when the task was never sampled.
    pub mean_loss: Vec<(String, Option<f64>)>,
    pub dev_exact: Option<f64>,
}

impl fmt::Display for EpochSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {}\tlr {}", self.epoch, self.lr)?;
        for (t, l) in &self.mean_loss {
            match l {
                Some(l) => write!(f, "\t{t} {l:.6}")?,
                None => write!(f, "\t{t} -")?,
            }
        }
        if let Some(d) = self.dev_exact {
            write!(f, "\tdev {d:.4}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadStep {
    pub step: usize,
    pub task: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Epoch whose parameters the model holds on return.
    pub final_epoch: usize,
    pub bad_steps: Vec<BadStep>,
    pub skipped_examples: Vec<(String, SkippedExample)>,
    /// Target positions whose gold probability was floored.
    pub underflows: usize,
    /// Target positions no action could produce.
    pub uncovered: usize,
    pub steps_per_epoch: usize,
    pub wall_seconds: f64,
}

impl TrainOutcome {
    pub const STEP_HEADER: &'static str = "step\ttask\tepoch\tlr\tloss";

    pub fn step_log(&self) -> String {
        let mut s = format!("{}\n", Self::STEP_HEADER);
        for r in &self.steps {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }

    pub fn epoch_log(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }

    pub fn seconds_per_step(&self) -> f64 {
        let n = self.steps.len() + self.bad_steps.len();
        if n == 0 {
            0.0
        } else {
            self.wall_seconds / n as f64
        }
    }
}

/// Shuffled pass over one task's examples, reshuffled when exhausted.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycler { order, pos: 0 }
    }

    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub fn train<S: Scalar>(model: &mut ModelAssembly<S>, data: &[TaskData], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, cfg, |_| {})
}

/// Uniform task sampling, teacher-forced batches, clipped SGD with the
/// halving schedule. `on_epoch` sees each epoch summary as it completes.
pub fn train_with<S: Scalar>(
    model: &mut ModelAssembly<S>,
    data: &[TaskData],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = model.num_tasks();
    if data.len() != k {
        return Err(Error::Config(format!("{} corpora for {} tasks", data.len(), k)));
    }
    let mut by_task: Vec<Option<&TaskData>> = vec![None; k];
    for d in data {
        let t = model.task_index(&d.task_id)?;
        by_task[t] = Some(d);
    }
    let by_task: Vec<&TaskData> = by_task.into_iter().map(|d| d.expect("every task matched")).collect();

    let limit = LengthLimit::both(cfg.max_len);
    let mut skipped_examples = Vec::new();
    let mut usable: Vec<Vec<&Example>> = Vec::with_capacity(k);
    for (t, d) in by_task.iter().enumerate() {
        let route = model.route(t);
        let mut keep = Vec::with_capacity(d.train.len());
        for ex in &d.train {
            let (ids, _) = encode_source(&ex.utterance, route.vocabs.input, route.task_spec, model.arch);
            if ids.len() > limit.source || ex.logical_form.len() > limit.target {
                skipped_examples.push((
                    d.task_id.clone(),
                    SkippedExample {
                        id: ex.id,
                        reason: format!("longer than max_len {}", cfg.max_len),
                    },
                ));
            } else {
                keep.push(ex);
            }
        }
        if keep.is_empty() {
            return Err(Error::Config(format!(
                "task `{}` has no usable training examples",
                d.task_id
            )));
        }
        usable.push(keep);
    }
    let total_examples: usize = usable.iter().map(Vec::len).sum();
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| total_examples.div_ceil(cfg.batch_size));

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut task_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut drop_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut cyclers: Vec<Cycler> = usable.iter().map(|u| Cycler::new(u.len(), &mut shuffle_rng)).collect();

    let started = Instant::now();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut bad_steps = Vec::new();
    let (mut underflows, mut uncovered) = (0, 0);
    let mut consecutive_bad = 0;
    let mut best: Option<(f64, usize, Vec<Tensor<S>>)> = None;
    let mut step_no = 0;

    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(cfg.lr, cfg.lr_halve_after_epoch, epoch);
        let mut loss_sum = vec![0.0; k];
        let mut loss_n = vec![0usize; k];
        for _ in 0..steps_per_epoch {
            step_no += 1;
            let t = sample_task(&mut task_rng, k);
            let rows: Vec<&Example> = cyclers[t]
                .next_batch(cfg.batch_size, &mut shuffle_rng)
                .into_iter()
                .map(|i| usable[t][i])
                .collect();
            let (route, store) = model.parts_mut(t);
            let batch = prepare_batch(&rows, route.vocabs, route.task_spec, route.arch, limit, cfg.attribution)?;
            uncovered += batch.uncovered;
            let mut tape = Tape::new();
            let mut reg = (cfg.dropout > 0.0).then_some(Regularizer {
                dropout: cfg.dropout,
                rng: &mut drop_rng,
            });
            let bl = batch_loss(&mut tape, store, route.params, &batch, &mut reg)?;
            underflows += tape.underflows();
            let loss = tape.value(bl.loss).scalar().as_f64();
            let task_id = route.task_spec.task_id.clone();
            let outcome = if loss.is_finite() {
                tape.backward(bl.loss, store)
                    .and_then(|_| sgd_step(store, &route.param_ids(), lr, cfg.clip_norm))
            } else {
                store.zero_grads();
                Err(Error::NonFinite(format!("loss {loss}")))
            };
            match outcome {
                Ok(_) => {
                    consecutive_bad = 0;
                    loss_sum[t] += loss;
                    loss_n[t] += 1;
                    steps.push(StepRecord {
                        step: step_no,
                        task: task_id,
                        epoch,
                        lr,
                        loss,
                    });
                }
                Err(Error::NonFinite(reason)) => {
                    consecutive_bad += 1;
                    bad_steps.push(BadStep {
                        step: step_no,
                        task: task_id,
                        reason: reason.clone(),
                    });
                    if consecutive_bad >= MAX_CONSECUTIVE_BAD_STEPS {
                        return Err(Error::TrainingAborted(format!(
                            "{consecutive_bad} consecutive non-finite steps, last at step {step_no}: {reason}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }

        let dev_sets: Vec<&TaskData> = by_task.iter().copied().filter(|d| !d.dev.is_empty()).collect();
        let dev_exact = if cfg.select_on_dev && !dev_sets.is_empty() {
            let mut acc = 0.0;
            for d in &dev_sets {
                acc += evaluate(model, &d.task_id, &d.dev, None)?.exact_match;
            }
            Some(acc / dev_sets.len() as f64)
        } else {
            None
        };
        if let Some(score) = dev_exact {
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                let snapshot = model.store.iter().map(|p| p.value.clone()).collect();
                best = Some((score, epoch, snapshot));
            }
        }
        let summary = EpochSummary {
            epoch,
            lr,
            mean_loss: (0..k)
                .map(|t| {
                    let mean = (loss_n[t] > 0).then(|| loss_sum[t] / loss_n[t] as f64);
                    (model.tasks[t].task_id.clone(), mean)
                })
                .collect(),
            dev_exact,
        };
        on_epoch(&summary);
        epochs.push(summary);
    }

    let mut final_epoch = cfg.epochs;
    if let Some((_, epoch, snapshot)) = best {
        for (p, v) in model.store.iter_mut().zip(snapshot) {
            p.value = v;
        }
        final_epoch = epoch;
    }
    Ok(TrainOutcome {
        steps,
        epochs,
        final_epoch,
        bad_steps,
        skipped_examples,
        underflows,
        uncovered,
        steps_per_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
