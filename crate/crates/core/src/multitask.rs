//! Parameter sharing for the independent and the three multi-task
//! architectures, minibatch routing and parameter counting.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TaskVocabs, Vocabulary};
use crate::error::{Error, Result};
use crate::numcore::{load_checkpoint, restore_into, save_checkpoint, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::seq2seq::{
    register_embedding, register_output, register_stack, AttentionParams, GruLayerParams, ModelDims, Seq2SeqParams,
    INIT_SCALE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "independent")]
    Independent,
    /// Shared encoder; per-task attention, decoder and output.
    #[serde(rename = "one2many")]
    OneToMany,
    /// Everything shared; the input carries a task token.
    #[serde(rename = "one2one")]
    OneToOne,
    /// Everything shared except a per-task output layer.
    #[serde(rename = "one2sharemany")]
    OneToShareMany,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [
        ArchKind::Independent,
        ArchKind::OneToMany,
        ArchKind::OneToOne,
        ArchKind::OneToShareMany,
    ];

    pub fn flag(self) -> &'static str {
        match self {
            ArchKind::Independent => "independent",
            ArchKind::OneToMany => "one2many",
            ArchKind::OneToOne => "one2one",
            ArchKind::OneToShareMany => "one2sharemany",
        }
    }

    fn shares(self, kind: BlockKind) -> bool {
        match self {
            ArchKind::Independent => false,
            ArchKind::OneToMany => matches!(kind, BlockKind::InputEmbedding | BlockKind::Encoder),
            ArchKind::OneToOne => true,
            ArchKind::OneToShareMany => kind != BlockKind::OutputLayer,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL.into_iter().find(|a| a.flag() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown architecture `{s}` (expected independent, one2many, one2one or one2sharemany)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    InputEmbedding,
    Encoder,
    Attention,
    OutputEmbedding,
    Decoder,
    OutputLayer,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::InputEmbedding,
        BlockKind::Encoder,
        BlockKind::Attention,
        BlockKind::OutputEmbedding,
        BlockKind::Decoder,
        BlockKind::OutputLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::InputEmbedding => "input_embedding",
            BlockKind::Encoder => "encoder",
            BlockKind::Attention => "attention",
            BlockKind::OutputEmbedding => "output_embedding",
            BlockKind::Decoder => "decoder",
            BlockKind::OutputLayer => "output_layer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    /// Vocabulary over this task's utterances.
    pub input_vocab: Vocabulary,
    pub decoder_vocab: Vocabulary,
    /// Prepended to every input under [`ArchKind::OneToOne`].
    pub artificial_token: String,
}

impl TaskSpec {
    pub fn new(task_id: &str, input_vocab: Vocabulary, decoder_vocab: Vocabulary) -> Self {
        TaskSpec {
            task_id: task_id.to_string(),
            input_vocab,
            decoder_vocab,
            artificial_token: format!("@{task_id}@"),
        }
    }
}

/// A named group of parameters owned by one task or shared by all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    /// Task index, or `None` when shared.
    pub owner: Option<usize>,
    pub name: String,
    pub params: Vec<ParamId>,
}

#[derive(Clone, Debug)]
struct TaskRoute {
    params: Seq2SeqParams,
    blocks: Vec<usize>,
    input_vocab: usize,
    write_vocab: usize,
    feed_vocab: usize,
}

/// Everything a single task's forward/backward pass reads.
#[derive(Clone, Debug)]
pub struct RouteView<'a> {
    pub task: usize,
    pub params: &'a Seq2SeqParams,
    pub blocks: &'a [usize],
    pub vocabs: TaskVocabs<'a>,
    pub task_spec: &'a TaskSpec,
    pub arch: ArchKind,
}

impl RouteView<'_> {
    /// All parameters this task reads, i.e. the ones a step on this task may update.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.params.ids()
    }
}

#[derive(Clone, Debug)]
pub struct ModelAssembly<S> {
    pub arch: ArchKind,
    pub dims: ModelDims,
    pub tasks: Vec<TaskSpec>,
    pub store: ParamStore<S>,
    pub blocks: Vec<Block>,
    routes: Vec<TaskRoute>,
    vocabs: Vec<Vocabulary>,
}

/// Creates the parameter blocks for `arch`. Initialization is deterministic in `seed`.
pub fn assemble<S: Scalar>(
    arch: ArchKind,
    tasks: Vec<TaskSpec>,
    dims: ModelDims,
    seed: u64,
) -> Result<ModelAssembly<S>> {
    dims.validate()?;
    if tasks.is_empty() {
        return Err(Error::Config("at least one task is required".into()));
    }
    let mut seen = HashSet::new();
    for t in &tasks {
        if !seen.insert(t.task_id.as_str()) {
            return Err(Error::DuplicateTask(t.task_id.clone()));
        }
    }
    let k = tasks.len();

    // Vocabularies: per-task copies first, then the shared ones.
    let mut vocabs: Vec<Vocabulary> = Vec::new();
    let mut shared_input = Vocabulary::union(tasks.iter().map(|t| &t.input_vocab));
    if arch == ArchKind::OneToOne {
        for t in &tasks {
            shared_input.insert(&t.artificial_token);
        }
    }
    let shared_output = Vocabulary::union(tasks.iter().map(|t| &t.decoder_vocab));
    let mut own_input = Vec::with_capacity(k);
    let mut own_output = Vec::with_capacity(k);
    for t in &tasks {
        own_input.push(vocabs.len());
        vocabs.push(t.input_vocab.clone());
        own_output.push(vocabs.len());
        vocabs.push(t.decoder_vocab.clone());
    }
    let shared_in_idx = vocabs.len();
    vocabs.push(shared_input);
    let shared_out_idx = vocabs.len();
    vocabs.push(shared_output);

    let pick = |kind: BlockKind, task: usize, own: &[usize], shared: usize| {
        if arch.shares(kind) {
            shared
        } else {
            own[task]
        }
    };
    let input_of = |t: usize| pick(BlockKind::InputEmbedding, t, &own_input, shared_in_idx);
    let feed_of = |t: usize| pick(BlockKind::OutputEmbedding, t, &own_output, shared_out_idx);
    let write_of = |t: usize| pick(BlockKind::OutputLayer, t, &own_output, shared_out_idx);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut blocks: Vec<Block> = Vec::new();
    // slot[kind][task] -> block index
    let mut slot = vec![vec![0usize; k]; BlockKind::ALL.len()];
    let mut built: Vec<Vec<BlockContent>> = vec![Vec::new(); BlockKind::ALL.len()];

    for (ki, &kind) in BlockKind::ALL.iter().enumerate() {
        let owners: Vec<Option<usize>> = if arch.shares(kind) {
            vec![None]
        } else {
            (0..k).map(Some).collect()
        };
        for owner in owners {
            let scope = owner.map_or("shared".to_string(), |t| tasks[t].task_id.clone());
            let name = format!("{scope}.{}", kind.name());
            let vocab_task = owner.unwrap_or(0);
            let before = store.len();
            let content = match kind {
                BlockKind::InputEmbedding => BlockContent::Param(register_embedding(
                    &mut store,
                    &format!("{name}.E_x"),
                    vocabs[input_of(vocab_task)].len(),
                    dims.embed,
                    &mut rng,
                )?),
                BlockKind::Encoder => {
                    BlockContent::Stack(register_stack(&mut store, &name, dims.embed, &dims, &mut rng)?)
                }
                BlockKind::Attention => BlockContent::Attention(AttentionParams::register(
                    &mut store,
                    &name,
                    dims.hidden,
                    dims.attention,
                    INIT_SCALE,
                    &mut rng,
                )?),
                BlockKind::OutputEmbedding => BlockContent::Param(register_embedding(
                    &mut store,
                    &format!("{name}.E_y"),
                    vocabs[feed_of(vocab_task)].len(),
                    dims.embed,
                    &mut rng,
                )?),
                BlockKind::Decoder => BlockContent::Stack(register_stack(
                    &mut store,
                    &name,
                    dims.embed + dims.hidden,
                    &dims,
                    &mut rng,
                )?),
                BlockKind::OutputLayer => BlockContent::Param(register_output(
                    &mut store,
                    &format!("{name}.O"),
                    dims.hidden,
                    vocabs[write_of(vocab_task)].len(),
                    &mut rng,
                )?),
            };
            let idx = blocks.len();
            blocks.push(Block {
                kind,
                owner,
                name,
                params: (before..store.len()).map(ParamId).collect(),
            });
            match owner {
                None => slot[ki].iter_mut().for_each(|s| *s = idx),
                Some(t) => slot[ki][t] = idx,
            }
            built[ki].push(content);
        }
    }

    let content_for = |ki: usize, t: usize| -> &BlockContent {
        let pos = if arch.shares(BlockKind::ALL[ki]) { 0 } else { t };
        &built[ki][pos]
    };
    let routes = (0..k)
        .map(|t| {
            let params = Seq2SeqParams {
                src_embed: content_for(0, t).param(),
                encoder: content_for(1, t).stack(),
                attention: content_for(2, t).attention(),
                tgt_embed: content_for(3, t).param(),
                decoder: content_for(4, t).stack(),
                output: content_for(5, t).param(),
            };
            let mut task_blocks: Vec<usize> = (0..BlockKind::ALL.len()).map(|ki| slot[ki][t]).collect();
            task_blocks.sort_unstable();
            TaskRoute {
                params,
                blocks: task_blocks,
                input_vocab: input_of(t),
                write_vocab: write_of(t),
                feed_vocab: feed_of(t),
            }
        })
        .collect();

    Ok(ModelAssembly {
        arch,
        dims,
        tasks,
        store,
        blocks,
        routes,
        vocabs,
    })
}

#[derive(Clone, Debug)]
enum BlockContent {
    Param(ParamId),
    Stack(Vec<GruLayerParams>),
    Attention(AttentionParams),
}

impl BlockContent {
    fn param(&self) -> ParamId {
        match self {
            BlockContent::Param(id) => *id,
            _ => unreachable!("block layout"),
        }
    }

    fn stack(&self) -> Vec<GruLayerParams> {
        match self {
            BlockContent::Stack(s) => s.clone(),
            _ => unreachable!("block layout"),
        }
    }

    fn attention(&self) -> AttentionParams {
        match self {
            BlockContent::Attention(a) => a.clone(),
            _ => unreachable!("block layout"),
        }
    }
}

impl<S: Scalar> ModelAssembly<S> {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_index(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.task_id == task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    /// The parameter view for one task.
    pub fn route_batch(&self, task_id: &str) -> Result<RouteView<'_>> {
        let t = self.task_index(task_id)?;
        Ok(self.route(t))
    }

    pub fn route(&self, t: usize) -> RouteView<'_> {
        let r = &self.routes[t];
        RouteView {
            task: t,
            params: &r.params,
            blocks: &r.blocks,
            vocabs: TaskVocabs {
                input: &self.vocabs[r.input_vocab],
                write: &self.vocabs[r.write_vocab],
                feed: &self.vocabs[r.feed_vocab],
            },
            task_spec: &self.tasks[t],
            arch: self.arch,
        }
    }

    /// Splits borrows so a caller can read a route while mutating the store.
    pub fn parts_mut(&mut self, t: usize) -> (RouteView<'_>, &mut ParamStore<S>) {
        let r = &self.routes[t];
        let view = RouteView {
            task: t,
            params: &r.params,
            blocks: &r.blocks,
            vocabs: TaskVocabs {
                input: &self.vocabs[r.input_vocab],
                write: &self.vocabs[r.write_vocab],
                feed: &self.vocabs[r.feed_vocab],
            },
            task_spec: &self.tasks[t],
            arch: self.arch,
        };
        (view, &mut self.store)
    }

    pub fn count_params(&self) -> ParamReport {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockCount {
                name: b.name.clone(),
                kind: b.kind,
                owner: b.owner.map(|t| self.tasks[t].task_id.clone()),
                count: b.params.iter().map(|&id| self.store.value(id).len()).sum(),
            })
            .collect::<Vec<_>>();
        let per_task = (0..self.tasks.len())
            .map(|t| self.routes[t].blocks.iter().map(|&b| blocks[b].count).sum())
            .collect();
        ParamReport {
            arch: self.arch,
            tasks: self.tasks.iter().map(|t| t.task_id.clone()).collect(),
            reads: self.routes.iter().map(|r| r.blocks.clone()).collect(),
            total: blocks.iter().map(|b| b.count).sum(),
            blocks,
            per_task,
        }
    }
}

/// Input tokens as fed to the model: under one-to-one the task's artificial
/// token is prepended; other architectures return the input unchanged.
pub fn augment_input(tokens: &[String], task: &TaskSpec, arch: ArchKind) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    if arch == ArchKind::OneToOne {
        out.push(task.artificial_token.clone());
    }
    out.extend(tokens.iter().cloned());
    out
}

/// Uniform draw of a task index in `0..k`.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, k: usize) -> usize {
    assert!(k >= 1, "at least one task");
    if k == 1 {
        0
    } else {
        rng.random_range(0..k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCount {
    pub name: String,
    pub kind: BlockKind,
    pub owner: Option<String>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub arch: ArchKind,
    pub tasks: Vec<String>,
    pub blocks: Vec<BlockCount>,
    /// Block indices each task reads.
    pub reads: Vec<Vec<usize>>,
    /// Parameters each task reads.
    pub per_task: Vec<usize>,
    pub total: usize,
}

impl ParamReport {
    pub fn block(&self, name: &str) -> Option<&BlockCount> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn kind_total(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind == kind).map(|b| b.count).sum()
    }
}

impl fmt::Display for ParamReport {
    /// Blocks × tasks; a cell holds the block's size when the task reads it.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "architecture: {}", self.arch)?;
        let width = self.blocks.iter().map(|b| b.name.len()).max().unwrap_or(5).max(5);
        write!(f, "{:<width$}  {:>10}", "block", "params")?;
        for t in &self.tasks {
            write!(f, "  {:>10}", t)?;
        }
        writeln!(f)?;
        for (bi, b) in self.blocks.iter().enumerate() {
            write!(f, "{:<width$}  {:>10}", b.name, b.count)?;
            for reads in &self.reads {
                if reads.contains(&bi) {
                    write!(f, "  {:>10}", b.count)?;
                } else {
                    write!(f, "  {:>10}", "-")?;
                }
            }
            writeln!(f)?;
        }
        write!(f, "{:<width$}  {:>10}", "total", self.total)?;
        for c in &self.per_task {
            write!(f, "  {:>10}", c)?;
        }
        writeln!(f)
    }
}

/// One row of the architecture comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSummary {
    pub arch: ArchKind,
    pub params: usize,
    /// Mean wall-clock seconds per training step, when measured.
    pub step_seconds: Option<f64>,
}

pub fn format_arch_table(rows: &[ArchSummary]) -> String {
    let mut s = format!("{:<16}{:>14}{:>14}\n", "architecture", "param. size", "step time (s)");
    for r in rows {
        let t = r.step_seconds.map_or("-".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!("{:<16}{:>14}{:>14}\n", r.arch.flag(), r.params, t));
    }
    s
}

pub const MODEL_FILE: &str = "model.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    arch: ArchKind,
    dims: ModelDims,
    tasks: Vec<TaskSpec>,
}

/// Writes `model.json` (architecture, dimensions, vocabularies) and the
/// binary parameter checkpoint into `dir`.
pub fn save_model<S: Scalar>(model: &ModelAssembly<S>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let header = ModelHeader {
        arch: model.arch,
        dims: model.dims,
        tasks: model.tasks.clone(),
    };
    std::fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&header)?)?;
    save_checkpoint(&model.store, &dir.join(CHECKPOINT_FILE))
}

pub fn load_model<S: Scalar>(dir: &Path) -> Result<ModelAssembly<S>> {
    let text = std::fs::read_to_string(dir.join(MODEL_FILE))?;
    let header: ModelHeader = serde_json::from_str(&text)?;
    let mut model = assemble(header.arch, header.tasks, header.dims, 0)?;
    let loaded = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    restore_into(&mut model.store, &loaded)?;
    Ok(model)
}

#[cfg(test)]
mod tests;
