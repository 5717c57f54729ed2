//! Target-task accuracy of the four architectures across target sizes and seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::evaluate::evaluate;
use super::train::{build_model, train, TaskData};
use crate::data::{Example, TaskSplits};
use crate::error::{Error, Result};
use crate::multitask::ArchKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TransferConfig {
    pub target_sizes: Vec<usize>,
    pub aux_size: usize,
    pub seeds: Vec<u64>,
    pub archs: Vec<ArchKind>,
    pub train: TrainConfig,
    /// Give the single-task baseline as many steps per epoch as the joint runs.
    pub match_steps: bool,
}

impl TransferConfig {
    pub fn new(target_sizes: Vec<usize>, aux_size: usize, seeds: Vec<u64>, train: TrainConfig) -> Self {
        TransferConfig {
            target_sizes,
            aux_size,
            seeds,
            archs: ArchKind::ALL.to_vec(),
            train,
            match_steps: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch: ArchKind,
    pub target_size: usize,
    pub seed: u64,
    pub exact_match: f64,
    pub token_accuracy: f64,
    pub final_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> Cell {
    let n = values.len();
    if n == 0 {
        return Cell {
            mean: f64::NAN,
            sd: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Cell { mean, sd, n }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransferReport {
    pub runs: Vec<RunRecord>,
}

impl TransferReport {
    pub const TSV_HEADER: &'static str = "arch\ttarget_size\tseed\texact_match\ttoken_accuracy\tfinal_epoch";

    fn values(&self, arch: ArchKind, size: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.arch == arch && r.target_size == size)
            .map(|r| r.exact_match)
            .collect()
    }

    pub fn cell(&self, arch: ArchKind, size: usize) -> Cell {
        mean_sd(&self.values(arch, size))
    }

    /// Mean over seeds of `arch − independent`, paired by seed.
    pub fn gain(&self, arch: ArchKind, size: usize) -> f64 {
        let base = |seed: u64| {
            self.runs
                .iter()
                .find(|r| r.arch == ArchKind::Independent && r.target_size == size && r.seed == seed)
                .map(|r| r.exact_match)
        };
        let diffs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.arch == arch && r.target_size == size)
            .filter_map(|r| base(r.seed).map(|b| r.exact_match - b))
            .collect();
        mean_sd(&diffs).mean
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.runs.iter().map(|r| r.target_size).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn archs(&self) -> Vec<ArchKind> {
        ArchKind::ALL
            .into_iter()
            .filter(|a| self.runs.iter().any(|r| r.arch == *a))
            .collect()
    }

    /// Per-run records; [`TransferReport::from_tsv`] restores them exactly.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.arch, r.target_size, r.seed, r.exact_match, r.token_accuracy, r.final_epoch
            );
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::TSV_HEADER) {
            return Err(Error::Config("run log does not start with the expected header".into()));
        }
        let bad = |line: &str| Error::Config(format!("malformed run record `{line}`"));
        let runs = lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 6 {
                    return Err(bad(line));
                }
                Ok(RunRecord {
                    arch: f[0].parse()?,
                    target_size: f[1].parse().map_err(|_| bad(line))?,
                    seed: f[2].parse().map_err(|_| bad(line))?,
                    exact_match: f[3].parse().map_err(|_| bad(line))?,
                    token_accuracy: f[4].parse().map_err(|_| bad(line))?,
                    final_epoch: f[5].parse().map_err(|_| bad(line))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TransferReport { runs })
    }

    /// Architectures × target sizes; mean ± sd exact match in percent, with
    /// the seed-paired gain over the single-task baseline.
    pub fn table(&self) -> String {
        let archs = self.archs();
        let mut s = format!("{:<12}", "target");
        for a in &archs {
            let _ = write!(s, "{:>26}", a.flag());
        }
        s.push('\n');
        for size in self.sizes() {
            let _ = write!(s, "{size:<12}");
            for &a in &archs {
                let c = self.cell(a, size);
                let mut text = format!("{:.1} ± {:.1}", 100.0 * c.mean, 100.0 * c.sd);
                if a != ArchKind::Independent && archs.contains(&ArchKind::Independent) {
                    let g = 100.0 * self.gain(a, size);
                    let mark = if g > 0.0 { "+" } else { "" };
                    let _ = write!(text, " ({mark}{g:.1})");
                }
                let _ = write!(s, "{text:>26}");
            }
            s.push('\n');
        }
        s
    }
}

/// Trains every architecture for every target size and seed. The target
/// training split is truncated to each size; the auxiliary split to `aux_size`.
pub fn run_transfer_experiment(
    cfg: &TransferConfig,
    target: &TaskSplits,
    aux: &TaskSplits,
    mut on_run: impl FnMut(&RunRecord),
) -> Result<TransferReport> {
    if aux.train.len() < cfg.aux_size {
        return Err(Error::Config(format!(
            "auxiliary corpus has {} training examples, {} requested",
            aux.train.len(),
            cfg.aux_size
        )));
    }
    if target.test.is_empty() {
        return Err(Error::Config("target task has no test examples".into()));
    }
    let take = |v: &[Example], n: usize| v[..n.min(v.len())].to_vec();
    let mut report = TransferReport::default();
    for &size in &cfg.target_sizes {
        if target.train.len() < size {
            return Err(Error::Config(format!(
                "target corpus has {} training examples, {size} requested",
                target.train.len()
            )));
        }
        let target_data = TaskData {
            task_id: target.task.clone(),
            train: take(&target.train, size),
            dev: target.dev.clone(),
        };
        let aux_data = TaskData {
            task_id: aux.task.clone(),
            train: take(&aux.train, cfg.aux_size),
            dev: Vec::new(),
        };
        let joint_steps = (size + cfg.aux_size).div_ceil(cfg.train.batch_size);
        for &seed in &cfg.seeds {
            for &arch in &cfg.archs {
                let mut tc = cfg.train.clone();
                tc.seed = seed;
                let data = if arch == ArchKind::Independent {
                    if cfg.match_steps && tc.steps_per_epoch.is_none() {
                        tc.steps_per_epoch = Some(joint_steps);
                    }
                    vec![target_data.clone()]
                } else {
                    vec![target_data.clone(), aux_data.clone()]
                };
                let mut model = build_model::<f64>(arch, &data, &tc)?;
                let outcome = train(&mut model, &data, &tc)?;
                let eval = evaluate(&model, &target.task, &target.test, None)?;
                let record = RunRecord {
                    arch,
                    target_size: size,
                    seed,
                    exact_match: eval.exact_match,
                    token_accuracy: eval.token_accuracy,
                    final_epoch: outcome.final_epoch,
                };
                on_run(&record);
                report.runs.push(record);
            }
        }
    }
    Ok(report)
}
