use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use fecs_core::harness::{
    attach_external_scores, load_dataset, measure_latency, read_jsonl, run_experiment, validate_config,
    BackendConfig, ExperimentConfig, ExternalScores,
};
use fecs_core::metrics::{aggregate_by_task, render_table, write_summary_csv, TaskSummary};
use fecs_core::{Error, GenerationRecord};

use crate::{BackendArgs, BackendKind, BenchArgs, MetricsArgs, RunArgs, ValidateArgs};

pub enum CliError {
    Usage(String),
    Config(Vec<String>),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_backend() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Config(errors) => {
                write!(f, "invalid configuration:")?;
                for e in errors {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(errors) => CliError::Config(errors),
            other => CliError::Core(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    validate_config(path).map_err(CliError::Config)
}

fn apply_backend(cfg: &mut ExperimentConfig, args: &BackendArgs) -> CliResult {
    let kind = args.backend.or_else(|| {
        if args.spec.is_some() {
            Some(BackendKind::Synthetic)
        } else if args.endpoint.is_some() {
            Some(BackendKind::Remote)
        } else {
            None
        }
    });
    match kind {
        Some(BackendKind::Synthetic) => {
            if args.endpoint.is_some() {
                return Err(CliError::Usage("--endpoint requires --backend remote".into()));
            }
            let random = match &cfg.backend {
                BackendConfig::Synthetic { random, .. } if args.spec.is_none() => random.clone(),
                _ => None,
            };
            cfg.backend = BackendConfig::Synthetic {
                spec: args.spec.clone(),
                random,
            };
        }
        Some(BackendKind::Remote) => {
            if args.spec.is_some() {
                return Err(CliError::Usage("--spec requires --backend synthetic".into()));
            }
            let (endpoint, timeout_secs) = match &cfg.backend {
                BackendConfig::Remote { endpoint, timeout_secs } => (endpoint.clone(), *timeout_secs),
                _ => (None, 60.0),
            };
            cfg.backend = BackendConfig::Remote {
                endpoint: args.endpoint.clone().or(endpoint),
                timeout_secs,
            };
        }
        None => {}
    }
    Ok(())
}

fn restrict_methods(cfg: &mut ExperimentConfig, names: &[String]) -> CliResult {
    let unknown: Vec<String> = names
        .iter()
        .filter(|n| !cfg.methods.iter().any(|m| &m.name == *n))
        .map(|n| format!("unknown method '{n}'"))
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Config(unknown));
    }
    cfg.methods.retain(|m| names.contains(&m.name));
    Ok(())
}

fn write_summary(path: &Path, summary: &[TaskSummary]) -> CliResult {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let is_csv = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv"));
    if is_csv {
        write_summary_csv(summary, file)?;
    } else {
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, summary).map_err(Error::from)?;
        w.flush().map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_jsonl(path: &Path, records: &[GenerationRecord]) -> CliResult {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(Error::from)?;
        w.write_all(b"\n").map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn print_summary(summary: &[TaskSummary]) {
    for s in summary {
        println!("[{}]", s.task);
        print!("{}", render_table(s));
    }
}

pub fn run(args: RunArgs) -> CliResult {
    let mut cfg = load_config(&args.config)?;
    apply_backend(&mut cfg, &args.backend)?;
    if let Some(names) = &args.methods {
        restrict_methods(&mut cfg, names)?;
    }
    if let Some(seed) = args.seed {
        cfg.defaults.seed = Some(seed);
        cfg.methods.iter_mut().for_each(|m| m.seed = None);
    }
    if let Some(p) = args.parallel {
        cfg.parallel = p;
    }
    cfg.validate().map_err(CliError::Config)?;
    let scores: Option<Vec<ExternalScores>> = args.scores.as_deref().map(read_jsonl).transpose()?;
    let dataset = load_dataset(&args.dataset)?;
    let backend = cfg.backend.connect()?;

    let mut report = run_experiment(backend.as_ref(), &cfg, &dataset)?;
    if let Some(scores) = scores {
        attach_external_scores(&mut report.per_instance, &scores);
        report.summary = report.reaggregate()?;
    }
    report.write(&args.out)?;
    if let Some(path) = &args.generations {
        write_jsonl(path, &report.per_instance)?;
    }
    print_summary(&report.summary);
    for f in &report.failures {
        eprintln!(
            "failed: instance {} {}: {}",
            f.instance_id,
            f.method.as_deref().unwrap_or("(all methods)"),
            f.error
        );
    }
    eprintln!(
        "{} records, {} failures, report written to {}",
        report.per_instance.len(),
        report.failures.len(),
        args.out.display()
    );
    Ok(())
}

pub fn bench(args: BenchArgs) -> CliResult {
    if args.n == 0 {
        return Err(CliError::Config(vec!["--n must be at least 1".into()]));
    }
    if args.repetitions == 0 {
        return Err(CliError::Config(vec!["--repetitions must be at least 1".into()]));
    }
    let mut cfg = load_config(&args.config)?;
    apply_backend(&mut cfg, &args.backend)?;
    let mut dataset = load_dataset(&args.dataset)?;
    if args.n > dataset.len() {
        eprintln!("note: dataset has {} instances, fewer than --n {}", dataset.len(), args.n);
    }
    dataset.truncate(args.n);
    let backend = cfg.backend.connect()?;
    let report = measure_latency(backend.as_ref(), &cfg.resolved_methods(), &cfg, &dataset, args.repetitions)?;
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    std::fs::write(&args.out, text).map_err(|e| io_error(&args.out, e))?;
    println!("{:<16} {:>12} {:>10}", "method", "sec/inst", "tokens");
    for r in &report.rows {
        println!("{:<16} {:>12.6} {:>10.1}", r.method, r.mean_seconds, r.mean_tokens);
    }
    if let Some(ratio) = report.fecs_over_contrastive {
        println!("fecs/contrastive: {ratio:.3}");
    }
    Ok(())
}

pub fn metrics(args: MetricsArgs) -> CliResult {
    let mut records: Vec<GenerationRecord> = read_jsonl(&args.input)?;
    if records.is_empty() {
        return Err(Error::EmptyInput("generation records").into());
    }
    if let Some(path) = &args.scores {
        let scores: Vec<ExternalScores> = read_jsonl(path)?;
        attach_external_scores(&mut records, &scores);
    }
    let summary = aggregate_by_task(&records)?;
    write_summary(&args.out, &summary)?;
    print_summary(&summary);
    Ok(())
}

pub fn validate(args: ValidateArgs) -> CliResult {
    let cfg = load_config(&args.config)?;
    let backend = match &cfg.backend {
        BackendConfig::Synthetic { spec: Some(p), .. } => format!("synthetic ({})", p.display()),
        BackendConfig::Synthetic { .. } => "synthetic (random)".to_string(),
        BackendConfig::Remote { endpoint, timeout_secs } => format!(
            "remote ({}, timeout {:?})",
            endpoint.as_deref().unwrap_or("$FECS_ENDPOINT"),
            Duration::from_secs_f64(*timeout_secs)
        ),
    };
    println!("backend: {backend}");
    println!("parallel: {}", cfg.parallel);
    for m in cfg.resolved_methods() {
        println!("{}: {}", m.name, serde_json::to_string(&m.decode).map_err(Error::from)?);
    }
    println!("ok");
    Ok(())
}
