use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use multiparse::data::{default_grammar, generate_synthetic, save_corpus, Example, GrammarSpec, TaskSplits};
use multiparse::multitask::{format_arch_table, load_model, save_model, ArchKind, ArchSummary, ModelAssembly};
use multiparse::seq2seq::ModelDims;
use multiparse::train_eval::{
    build_model, decode_tokens, evaluate, full_loss_gradcheck, postprocess, run_transfer_experiment, train_with,
    TaskData, TrainOutcome, TransferConfig, TransferReport,
};

use crate::files::{
    default_run_dir, load_task_data, prepare_out_dir, resolve_config, runtime, sha256_file, split_path, write_json,
    CliError, CliResult, CorpusRecord, RunManifest, CODE_VERSION,
};
use crate::{DecodeArgs, EvalArgs, GenDataArgs, GradcheckArgs, ParamsArgs, TrainArgs, TransferArgs};

pub const STEPS_LOG: &str = "steps.tsv";
pub const EPOCHS_LOG: &str = "epochs.log";
pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

fn invocation() -> Vec<String> {
    std::env::args().collect()
}

pub fn gen_data(args: GenDataArgs) -> CliResult<ExitCode> {
    let grammar = match &args.grammar {
        Some(p) if !p.is_file() => return Err(CliError::Usage(format!("grammar file {} not found", p.display()))),
        Some(p) => GrammarSpec::load(p)?,
        None => default_grammar(),
    };
    let ratios: [f64; 3] = args
        .split
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--split takes three fractions".into()))?;
    let corpora = generate_synthetic(&grammar, args.n_per_task, args.seed, ratios)?;
    fs::create_dir_all(&args.out).map_err(runtime("creating output directory"))?;
    let mut files = Vec::new();
    for splits in &corpora.tasks {
        for name in ["train", "dev", "test"] {
            let path = split_path(&args.out, &splits.task, name);
            save_corpus(&path, splits.split(name).unwrap_or_default())?;
            files.push((path.clone(), sha256_file(&path)?));
        }
    }
    write_json(&args.out.join("stats.json"), &corpora.stats)?;
    println!(
        "{:<10}{:>8}{:>8}{:>8}{:>12}",
        "task", "train", "dev", "test", "test OOV"
    );
    for s in &corpora.stats {
        println!(
            "{:<10}{:>8}{:>8}{:>8}{:>11.1}%",
            s.task,
            s.train,
            s.dev,
            s.test,
            100.0 * s.test_entity_oov
        );
    }
    for (path, sum) in files {
        println!("{sum}  {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn arch_rows(data: &[TaskData], cfg: &multiparse::train_eval::TrainConfig) -> CliResult<Vec<ArchSummary>> {
    ArchKind::ALL
        .into_iter()
        .map(|arch| {
            let m: ModelAssembly<f64> = build_model(arch, data, cfg)?;
            Ok(ArchSummary {
                arch,
                params: m.count_params().total,
                step_seconds: None,
            })
        })
        .collect()
}

pub fn train(args: TrainArgs) -> CliResult<ExitCode> {
    let cfg = resolve_config(&args.config)?;
    let (data, records) = load_task_data(&args.corpora)?;
    let mut model: ModelAssembly<f64> = build_model(args.arch, &data, &cfg)?;
    if args.params_only {
        print!("{}", model.count_params());
        return Ok(ExitCode::SUCCESS);
    }

    let out = args.out.clone().unwrap_or_else(|| default_run_dir(cfg.seed));
    prepare_out_dir(&out, args.force)?;
    let outputs: Vec<(String, PathBuf)> = [
        ("manifest", MANIFEST),
        ("model", multiparse::multitask::MODEL_FILE),
        ("checkpoint", multiparse::multitask::CHECKPOINT_FILE),
        ("steps_log", STEPS_LOG),
        ("epochs_log", EPOCHS_LOG),
        ("summary", SUMMARY),
    ]
    .into_iter()
    .map(|(k, f)| (k.to_string(), out.join(f)))
    .collect();
    let manifest = RunManifest {
        command: "train",
        code_version: CODE_VERSION,
        arch: vec![args.arch.flag().to_string()],
        config: &cfg,
        seeds: vec![cfg.seed],
        corpora: &records,
        outputs,
        invocation: invocation(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;

    let outcome: TrainOutcome = train_with(&mut model, &data, &cfg, |e| println!("{e}"))?;
    fs::write(out.join(STEPS_LOG), outcome.step_log()).map_err(runtime("writing step log"))?;
    fs::write(out.join(EPOCHS_LOG), outcome.epoch_log()).map_err(runtime("writing epoch log"))?;
    save_model(&model, &out)?;
    write_json(
        &out.join(SUMMARY),
        &serde_json::json!({
            "final_epoch": outcome.final_epoch,
            "steps_per_epoch": outcome.steps_per_epoch,
            "steps": outcome.steps.len(),
            "bad_steps": outcome.bad_steps,
            "skipped_examples": outcome.skipped_examples,
            "underflows": outcome.underflows,
            "uncovered_targets": outcome.uncovered,
            "seconds_per_step": outcome.seconds_per_step(),
            "wall_seconds": outcome.wall_seconds,
        }),
    )?;
    println!(
        "trained {} for {} steps; kept epoch {}; run directory {}",
        args.arch,
        outcome.steps.len(),
        outcome.final_epoch,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn open_model(dir: &std::path::Path) -> CliResult<ModelAssembly<f64>> {
    if !dir.join(multiparse::multitask::MODEL_FILE).is_file() {
        return Err(CliError::Usage(format!(
            "{} does not hold a trained model",
            dir.display()
        )));
    }
    Ok(load_model(dir)?)
}

fn pick_task(model: &ModelAssembly<f64>, task: Option<String>) -> CliResult<String> {
    match task {
        Some(t) => {
            model.task_index(&t)?;
            Ok(t)
        }
        None if model.tasks.len() == 1 => Ok(model.tasks[0].task_id.clone()),
        None => Err(CliError::Usage(format!(
            "model has tasks {}; choose one with --task",
            model
                .tasks
                .iter()
                .map(|t| t.task_id.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

pub fn eval(args: EvalArgs) -> CliResult<ExitCode> {
    let model = open_model(&args.model)?;
    let task = pick_task(&model, args.task)?;
    if !args.corpus.is_file() {
        return Err(CliError::Usage(format!(
            "corpus file {} not found",
            args.corpus.display()
        )));
    }
    let loaded = multiparse::data::load_corpus(&args.corpus, &task)?;
    let report = evaluate(&model, &task, &loaded.examples, args.max_len)?;
    print!("{report}");
    let out = args.out.unwrap_or_else(|| args.model.join(format!("eval-{task}.json")));
    write_json(&out, &report)?;
    Ok(ExitCode::SUCCESS)
}

pub fn decode(args: DecodeArgs) -> CliResult<ExitCode> {
    let words: Vec<String> = args
        .utterance
        .iter()
        .flat_map(|w| w.split_whitespace())
        .map(String::from)
        .collect();
    if words.is_empty() {
        return Err(CliError::Usage("empty utterance".into()));
    }
    let model = open_model(&args.model)?;
    let task = pick_task(&model, args.task)?;
    let t = model.task_index(&task)?;
    let decoded = decode_tokens(&model, t, &words, args.max_len)?;
    if args.trace {
        print!("{}", decoded.format_trace());
    }
    println!("{}", postprocess(&decoded.tokens).join(" "));
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult<ExitCode> {
    let dims = ModelDims {
        embed: args.embed,
        hidden: args.hidden,
        attention: args.attention,
        layers: args.layers,
    };
    dims.validate()?;
    let fault = if args.inject_fault { 1e-3 } else { 0.0 };
    let started = Instant::now();
    let report = full_loss_gradcheck(args.arch, dims, args.seed, fault)?;
    let seconds = started.elapsed().as_secs_f64();
    let verdict = if report.passes(args.tol) { "PASS" } else { "FAIL" };
    let worst = report
        .worst
        .as_ref()
        .map_or("-".to_string(), |(name, i)| format!("{name}[{i}]"));
    println!(
        "{verdict}\tarch={}\tmax_rel_error={:.3e}\tworst={worst}\tentries={}\trefined={}\tseconds={seconds:.1}",
        args.arch, report.max_rel_error, report.entries, report.refined
    );
    Ok(if report.passes(args.tol) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

pub fn params(args: ParamsArgs) -> CliResult<ExitCode> {
    let cfg = resolve_config(&args.config)?;
    let (data, _) = load_task_data(&args.corpora)?;
    print!("{}", format_arch_table(&arch_rows(&data, &cfg)?));
    if let Some(arch) = args.arch {
        let m: ModelAssembly<f64> = build_model(arch, &data, &cfg)?;
        println!();
        print!("{}", m.count_params());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_splits(dir: &std::path::Path, task: &str, records: &mut Vec<CorpusRecord>) -> CliResult<TaskSplits> {
    let mut read = |split: &str| -> CliResult<Vec<Example>> {
        let path = split_path(dir, task, split);
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let loaded = multiparse::data::load_corpus(&path, task)?;
        records.push(CorpusRecord {
            task: task.to_string(),
            split: split.to_string(),
            path: path.clone(),
            sha256: sha256_file(&path)?,
            examples: loaded.examples.len(),
            malformed_lines: loaded.issues.len(),
        });
        Ok(loaded.examples)
    };
    let splits = TaskSplits {
        task: task.to_string(),
        train: read("train")?,
        dev: read("dev")?,
        test: read("test")?,
    };
    if splits.train.is_empty() {
        return Err(CliError::Usage(format!(
            "no training corpus for `{task}` in {}",
            dir.display()
        )));
    }
    Ok(splits)
}

pub fn transfer(args: TransferArgs) -> CliResult<ExitCode> {
    let cfg = resolve_config(&args.config)?;
    let mut records = Vec::new();
    let target = load_splits(&args.data, &args.target, &mut records)?;
    let aux = load_splits(&args.data, &args.aux, &mut records)?;
    let mut tc = TransferConfig::new(args.sizes.clone(), args.aux_size, args.seeds.clone(), cfg.clone());
    if !args.archs.is_empty() {
        tc.archs = args.archs.clone();
    }
    tc.match_steps = !args.unmatched_steps;

    let out = args.out.clone().unwrap_or_else(|| default_run_dir(cfg.seed));
    prepare_out_dir(&out, args.force)?;
    let manifest = RunManifest {
        command: "transfer",
        code_version: CODE_VERSION,
        arch: tc.archs.iter().map(|a| a.flag().to_string()).collect(),
        config: &cfg,
        seeds: tc.seeds.clone(),
        corpora: &records,
        outputs: vec![
            ("runs".into(), out.join("runs.tsv")),
            ("table".into(), out.join("table.txt")),
        ],
        invocation: invocation(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;

    let report = run_transfer_experiment(&tc, &target, &aux, |r| {
        println!(
            "{}\tsize {}\tseed {}\texact {:.4}\ttoken {:.4}\tepoch {}",
            r.arch, r.target_size, r.seed, r.exact_match, r.token_accuracy, r.final_epoch
        );
    })?;
    fs::write(out.join("runs.tsv"), report.to_tsv()).map_err(runtime("writing run records"))?;
    let table = report.table();
    fs::write(out.join("table.txt"), &table).map_err(runtime("writing table"))?;
    print!("\n{table}");
    debug_assert_eq!(TransferReport::from_tsv(&report.to_tsv()).ok().as_ref(), Some(&report));
    Ok(ExitCode::SUCCESS)
}
