use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendInfo, LanguageModel};
use crate::context::{render_prompt, segment, SegmentedSequence, Task, TaskTemplate};
use crate::decoders::{decode, DecodeConfig, DecodeOutput};
use crate::metrics::{aggregate_by_task, text_diversity, GenerationRecord, TaskSummary};
use crate::{Error, Result};

use super::config::{ExperimentConfig, ResolvedMethod};
use super::dataset::DatasetInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instance_id: String,
    /// `None` when the instance failed before any method ran.
    pub method: Option<String>,
    pub error: String,
}

/// Everything a run produces; serialised as the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub backend: BackendInfo,
    pub per_instance: Vec<GenerationRecord>,
    pub failures: Vec<Failure>,
    pub summary: Vec<TaskSummary>,
}

impl Report {
    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Recomputes the summary from the stored records.
    pub fn reaggregate(&self) -> Result<Vec<TaskSummary>> {
        if self.per_instance.is_empty() {
            return Ok(Vec::new());
        }
        aggregate_by_task(&self.per_instance)
    }
}

/// Renders and segments an instance's prompt. A prompt that leaves no room
/// for a single generated token is an error.
pub fn prepare(instance: &DatasetInstance, template: &TaskTemplate, backend: &dyn LanguageModel) -> Result<SegmentedSequence> {
    let (text, span) = render_prompt(template, &instance.source, &instance.history)?;
    let seq = segment(&text, span, backend)?;
    let max = backend.info().max_context;
    if seq.len() >= max {
        return Err(Error::ContextOverflow { len: seq.len() + 1, max });
    }
    Ok(seq)
}

/// Output text up to the first line break when newline stopping is on.
pub fn output_text(out: &DecodeOutput, cfg: &DecodeConfig, backend: &dyn LanguageModel) -> Result<String> {
    let text = backend.detokenize(&out.tokens)?;
    let text = if cfg.stop_on_newline {
        text.split('\n').next().unwrap_or("")
    } else {
        text.as_str()
    };
    Ok(text.trim().to_string())
}

/// Decodes one prepared instance with one method, timing only the decode.
pub fn generate(
    backend: &dyn LanguageModel,
    instance: &DatasetInstance,
    seq: &SegmentedSequence,
    method: &ResolvedMethod,
    index: usize,
) -> Result<GenerationRecord> {
    let mut cfg = method.for_task(instance.task);
    cfg.seed = cfg.seed.wrapping_add(index as u64);
    let started = Instant::now();
    let out = decode(seq, &cfg, backend)?;
    let decode_seconds = started.elapsed().as_secs_f64();
    let text = output_text(&out, &cfg, backend)?;
    Ok(GenerationRecord {
        instance_id: instance.id.clone(),
        method: method.name.clone(),
        task: instance.task,
        config: cfg,
        diversity: text_diversity(&text),
        output_text: text,
        truncated: out.truncated(),
        output_tokens: out.tokens,
        decode_seconds,
        external_scores: BTreeMap::new(),
    })
}

type Outcome = std::result::Result<GenerationRecord, (Failure, Error)>;

fn run_instance(
    backend: &dyn LanguageModel,
    templates: &BTreeMap<Task, TaskTemplate>,
    methods: &[ResolvedMethod],
    index: usize,
    instance: &DatasetInstance,
) -> Vec<Outcome> {
    let fail = |method: Option<&str>, e: Error| {
        let failure = Failure {
            instance_id: instance.id.clone(),
            method: method.map(str::to_string),
            error: e.to_string(),
        };
        (failure, e)
    };
    let seq = match prepare(instance, &templates[&instance.task], backend) {
        Ok(s) => s,
        Err(e) => return vec![Err(fail(None, e))],
    };
    methods
        .iter()
        .map(|m| generate(backend, instance, &seq, m, index).map_err(|e| fail(Some(&m.name), e)))
        .collect()
}

/// Runs every method on every instance. Failures of individual instances are
/// recorded and skipped; the run itself fails only on bad configuration or
/// when the backend failed on every attempt.
pub fn run_experiment(backend: &dyn LanguageModel, config: &ExperimentConfig, dataset: &[DatasetInstance]) -> Result<Report> {
    config.validate().map_err(Error::Config)?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let mut templates = BTreeMap::new();
    for task in [Task::Summarization, Task::Dialogue] {
        templates.insert(task, config.template(task)?);
    }
    let methods = config.resolved_methods();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallel)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<Vec<Outcome>> = pool.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(i, inst)| run_instance(backend, &templates, &methods, i, inst))
            .collect()
    });

    let mut per_instance = Vec::new();
    let mut failures = Vec::new();
    let mut first_backend_error = None;
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(r) => per_instance.push(r),
            Err((f, e)) => {
                if e.is_backend() && first_backend_error.is_none() {
                    first_backend_error = Some(e);
                }
                failures.push(f);
            }
        }
    }
    if per_instance.is_empty() {
        if let Some(e) = first_backend_error {
            return Err(e);
        }
    }
    let summary = if per_instance.is_empty() {
        Vec::new()
    } else {
        aggregate_by_task(&per_instance)?
    };
    Ok(Report {
        config: config.clone(),
        backend: backend.info().clone(),
        per_instance,
        failures,
        summary,
    })
}
