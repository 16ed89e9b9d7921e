use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::decoders::{decode, Strategy};
use crate::{Error, Result};

use super::config::{ExperimentConfig, ResolvedMethod};
use super::dataset::DatasetInstance;
use super::run::prepare;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub method: String,
    pub strategy: Strategy,
    /// Mean over instances of the per-instance mean decode time.
    pub mean_seconds: f64,
    pub mean_tokens: f64,
    pub instances: usize,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
    /// First FECS method over the first contrastive method with the same k.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fecs_over_contrastive: Option<f64>,
}

impl LatencyReport {
    pub fn row(&self, method: &str) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Times each method sequentially over all instances after one untimed
/// warm-up decode per method. Prompt preparation is excluded from timing.
pub fn measure_latency(
    backend: &dyn LanguageModel,
    methods: &[ResolvedMethod],
    config: &ExperimentConfig,
    dataset: &[DatasetInstance],
    repetitions: usize,
) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::Config(vec!["repetitions must be at least 1".into()]));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if methods.is_empty() {
        return Err(Error::EmptyInput("methods"));
    }
    let mut prepared = Vec::with_capacity(dataset.len());
    for inst in dataset {
        let tpl = config.template(inst.task)?;
        prepared.push((inst.task, prepare(inst, &tpl, backend)?));
    }

    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let (task, seq) = &prepared[0];
        decode(seq, &m.for_task(*task), backend)?;

        let mut total_seconds = 0.0;
        let mut total_tokens = 0usize;
        for (i, (task, seq)) in prepared.iter().enumerate() {
            let mut cfg = m.for_task(*task);
            cfg.seed = cfg.seed.wrapping_add(i as u64);
            let started = Instant::now();
            for _ in 0..repetitions {
                total_tokens += decode(seq, &cfg, backend)?.tokens.len();
            }
            total_seconds += started.elapsed().as_secs_f64() / repetitions as f64;
        }
        let n = prepared.len() as f64;
        rows.push(LatencyRow {
            method: m.name.clone(),
            strategy: m.decode.strategy,
            mean_seconds: total_seconds / n,
            mean_tokens: total_tokens as f64 / (n * repetitions as f64),
            instances: prepared.len(),
            repetitions,
        });
    }

    let fecs_over_contrastive = methods
        .iter()
        .zip(&rows)
        .filter(|(m, _)| m.decode.strategy == Strategy::Fecs)
        .find_map(|(f, fr)| {
            methods
                .iter()
                .zip(&rows)
                .find(|(c, _)| c.decode.strategy == Strategy::Contrastive && c.decode.k == f.decode.k)
                .map(|(_, cr)| fr.mean_seconds / cr.mean_seconds)
        });
    Ok(LatencyReport {
        rows,
        fecs_over_contrastive,
    })
}
