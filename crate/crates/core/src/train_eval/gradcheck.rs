use crate::copydec::{batch_loss, GoldAttribution};
use crate::data::{prepare_batch, Batch, Example, LengthLimit};
use crate::error::{Error, Result};
use crate::multitask::{ArchKind, ModelAssembly};
use crate::numcore::{DoubleDouble, GradCheck, GradCheckReport, ParamId, ParamStore, Tape, Var};
use crate::scalar::Scalar;
use crate::seq2seq::{ModelDims, Seq2SeqParams};

use super::config::TrainConfig;
use super::train::{build_model, TaskData};

/// Two small tasks with three-token utterances. Some logical-form tokens
/// occur once and become copy-only under the default vocabulary threshold.
pub fn gradcheck_corpora() -> Vec<TaskData> {
    let a = [("play blue moon", "play song moon"), ("play red sky", "play song sky")];
    let b = [
        ("play blue moon", "intent play moon"),
        ("call ana now", "intent call ana"),
    ];
    let mk = |task: &str, rows: &[(&str, &str)]| TaskData {
        task_id: task.to_string(),
        train: rows
            .iter()
            .enumerate()
            .map(|(i, (u, l))| Example::new(i + 1, task, u, l))
            .collect(),
        dev: Vec::new(),
    };
    vec![mk("a", &a), mk("b", &b)]
}

pub struct GradCheckSetup {
    pub model: ModelAssembly<f64>,
    pub batches: Vec<(usize, Batch)>,
}

/// Freshly initialized model and one batch per task.
pub fn gradcheck_setup(arch: ArchKind, dims: ModelDims, seed: u64) -> Result<GradCheckSetup> {
    let data = gradcheck_corpora();
    let cfg = TrainConfig {
        embed: dims.embed,
        hidden: dims.hidden,
        attention: dims.attention,
        layers: dims.layers,
        seed,
        ..TrainConfig::default()
    };
    let model = build_model::<f64>(arch, &data, &cfg)?;
    let mut batches = Vec::new();
    for d in &data {
        let t = model.task_index(&d.task_id)?;
        let route = model.route(t);
        let rows: Vec<&Example> = d.train.iter().collect();
        let batch = prepare_batch(
            &rows,
            route.vocabs,
            route.task_spec,
            arch,
            LengthLimit::unlimited(),
            GoldAttribution::Marginal,
        )?;
        batches.push((t, batch));
    }
    Ok(GradCheckSetup { model, batches })
}

fn total_loss<S: Scalar>(
    store: &ParamStore<S>,
    tape: &mut Tape<S>,
    batches: &[(usize, Batch)],
    params: &[Seq2SeqParams],
) -> Result<Var> {
    let mut total = None;
    for ((_, batch), p) in batches.iter().zip(params) {
        let l = batch_loss(tape, store, p, batch, &mut None)?.loss;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    total.ok_or_else(|| Error::Config("gradient check needs at least one batch".into()))
}

/// Central-difference check of encoder → attention → joint action softmax →
/// marginal NLL, summed over both tasks, for every parameter. Dropout is off.
/// Gradients come from the `f64` tape; the losses at `θ ± h` are evaluated
/// in double-double precision.
pub fn full_loss_gradcheck(arch: ArchKind, dims: ModelDims, seed: u64, fault: f64) -> Result<GradCheckReport> {
    let GradCheckSetup { mut model, batches } = gradcheck_setup(arch, dims, seed)?;
    let ids: Vec<ParamId> = model.store.ids().collect();
    let params: Vec<Seq2SeqParams> = batches.iter().map(|(t, _)| model.route(*t).params.clone()).collect();
    let checker = GradCheck { h: 1e-5, fault };
    checker.run_with_reference(
        &mut model.store,
        &ids,
        |store, tape: &mut Tape<f64>| total_loss(store, tape, &batches, &params),
        |store, tape: &mut Tape<DoubleDouble>| total_loss(store, tape, &batches, &params),
    )
}
