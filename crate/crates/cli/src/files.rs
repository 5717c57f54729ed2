use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use multiparse::data::{load_corpus, Example};
use multiparse::train_eval::{TaskData, TrainConfig};
use multiparse::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{ConfigArgs, CorpusArgs};

/// Failure of a command; the variant fixes the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files: exit code 1.
    Usage(String),
    /// Anything that goes wrong after inputs were accepted: exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

/// Configuration-type errors from the library are the caller's fault.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Grammar(_)
            | Error::UnknownTask(_)
            | Error::DuplicateTask(_)
            | Error::Format { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn runtime(context: &str) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusRecord {
    pub task: String,
    pub split: String,
    pub path: PathBuf,
    pub sha256: String,
    pub examples: usize,
    pub malformed_lines: usize,
}

fn read_corpus(path: &Path, task: &str, split: &str, records: &mut Vec<CorpusRecord>) -> CliResult<Vec<Example>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("corpus file {} not found", path.display())));
    }
    let loaded = load_corpus(path, task)?;
    for issue in &loaded.issues {
        eprintln!("warning: {}:{}: {}", path.display(), issue.line, issue.reason);
    }
    records.push(CorpusRecord {
        task: task.to_string(),
        split: split.to_string(),
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
        examples: loaded.examples.len(),
        malformed_lines: loaded.issues.len(),
    });
    Ok(loaded.examples)
}

fn task_path(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((t, p)) if !t.is_empty() && !p.is_empty() => Ok((t.to_string(), PathBuf::from(p))),
        _ => Err(CliError::Usage(format!("expected TASK=PATH, got `{spec}`"))),
    }
}

/// Tasks with a `<task>.train.tsv` file in `dir`, sorted by name.
pub fn tasks_in(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let mut tasks: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".train.tsv").map(String::from))
        .collect();
    tasks.sort();
    if tasks.is_empty() {
        return Err(CliError::Usage(format!("no *.train.tsv corpora in {}", dir.display())));
    }
    Ok(tasks)
}

pub fn split_path(dir: &Path, task: &str, split: &str) -> PathBuf {
    dir.join(format!("{task}.{split}.tsv"))
}

/// Loads training and development corpora, recording a checksum for each file.
pub fn load_task_data(args: &CorpusArgs) -> CliResult<(Vec<TaskData>, Vec<CorpusRecord>)> {
    let mut records = Vec::new();
    let mut data: Vec<TaskData> = Vec::new();
    if let Some(dir) = &args.data {
        let found = tasks_in(dir)?;
        let wanted = if args.tasks.is_empty() {
            found.clone()
        } else {
            args.tasks.clone()
        };
        for task in wanted {
            if !found.contains(&task) {
                return Err(CliError::Usage(format!(
                    "task `{task}` has no training corpus in {}",
                    dir.display()
                )));
            }
            let train = read_corpus(&split_path(dir, &task, "train"), &task, "train", &mut records)?;
            let dev_path = split_path(dir, &task, "dev");
            let dev = if dev_path.is_file() {
                read_corpus(&dev_path, &task, "dev", &mut records)?
            } else {
                Vec::new()
            };
            data.push(TaskData {
                task_id: task,
                train,
                dev,
            });
        }
    }
    for spec in &args.train {
        let (task, path) = task_path(spec)?;
        if data.iter().any(|d| d.task_id == task) {
            return Err(CliError::Usage(format!("training corpus for `{task}` given twice")));
        }
        let train = read_corpus(&path, &task, "train", &mut records)?;
        data.push(TaskData {
            task_id: task,
            train,
            dev: Vec::new(),
        });
    }
    for spec in &args.dev {
        let (task, path) = task_path(spec)?;
        let dev = read_corpus(&path, &task, "dev", &mut records)?;
        let Some(d) = data.iter_mut().find(|d| d.task_id == task) else {
            return Err(CliError::Usage(format!(
                "dev corpus for `{task}` without a training corpus"
            )));
        };
        d.dev = dev;
    }
    if data.is_empty() {
        return Err(CliError::Usage("no corpora given; use --data or --train".into()));
    }
    Ok((data, records))
}

/// Config file (if any) with flag overrides applied, validated.
pub fn resolve_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Usage(format!("config file {} not found", p.display())));
            }
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    set!(seed => seed, epochs => epochs, lr => lr, lr_halve_after => lr_halve_after_epoch,
         batch => batch_size, embed => embed, hidden => hidden, attention => attention,
         layers => layers, dropout => dropout, max_len => max_len);
    cfg.validate()?;
    Ok(cfg)
}

pub fn default_run_dir(seed: u64) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    PathBuf::from("runs").join(format!("{secs}-seed{seed}"))
}

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir)
            .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if nonempty && !force {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(runtime("creating run directory"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(runtime("writing output"))
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub code_version: &'a str,
    pub arch: Vec<String>,
    pub config: &'a TrainConfig,
    pub seeds: Vec<u64>,
    pub corpora: &'a [CorpusRecord],
    pub outputs: Vec<(String, PathBuf)>,
    pub invocation: Vec<String>,
}

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
