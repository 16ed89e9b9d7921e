//! Repetition and diversity metrics, and per-method aggregation.
//!
//! `Rep-n = (1 - |unique n-grams| / |n-grams|) * 100` over whitespace-split
//! words, and `diversity = Π_{n=2..4} (1 - Rep-n / 100)`, reported ×100.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::context::Task;
use crate::decoders::DecodeConfig;
use crate::{Error, Result};

/// Whitespace word split used for all n-gram statistics.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Percentage of repeated n-grams; 0 when the sequence has no n-grams.
pub fn rep_n<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> f64 {
    if n == 0 || tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let unique: HashSet<&[T]> = tokens.windows(n).collect();
    (1.0 - unique.len() as f64 / total as f64) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub rep2: f64,
    pub rep3: f64,
    pub rep4: f64,
    /// In [0, 1].
    pub diversity: f64,
    /// `100 * diversity`, the scale used in result tables.
    pub reported_diversity: f64,
}

impl DiversityReport {
    pub fn from_reps(rep2: f64, rep3: f64, rep4: f64) -> Self {
        let diversity = (1.0 - rep2 / 100.0) * (1.0 - rep3 / 100.0) * (1.0 - rep4 / 100.0);
        Self {
            rep2,
            rep3,
            rep4,
            diversity,
            reported_diversity: 100.0 * diversity,
        }
    }
}

pub fn diversity<T: Eq + std::hash::Hash>(tokens: &[T]) -> DiversityReport {
    DiversityReport::from_reps(rep_n(tokens, 2), rep_n(tokens, 3), rep_n(tokens, 4))
}

pub fn text_diversity(text: &str) -> DiversityReport {
    diversity(&words(text))
}

/// Fraction of the output's word 4-grams that appear verbatim in the source;
/// 0 when the output has no 4-grams.
pub fn source_overlap(output: &str, source: &str) -> f64 {
    let out = words(output);
    let src = words(source);
    if out.len() < 4 {
        return 0.0;
    }
    let source_grams: HashSet<&[&str]> = src.windows(4).collect();
    let grams: Vec<&[&str]> = out.windows(4).collect();
    grams.iter().filter(|g| source_grams.contains(*g)).count() as f64 / grams.len() as f64
}

/// One decoded output with its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub instance_id: String,
    pub method: String,
    pub task: Task,
    pub config: DecodeConfig,
    pub output_text: String,
    pub output_tokens: Vec<u32>,
    pub diversity: DiversityReport,
    pub decode_seconds: f64,
    pub truncated: bool,
    /// Scores computed outside this crate (faithfulness, overlap, ...).
    #[serde(default)]
    pub external_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub count: usize,
    pub rep2: f64,
    pub rep3: f64,
    pub rep4: f64,
    /// Diversity of the mean Rep-n triple, ×100.
    pub diversity: f64,
    /// Mean of per-instance diversity, ×100.
    pub mean_instance_diversity: f64,
    pub mean_decode_seconds: f64,
    pub truncated: usize,
    /// Per-key mean over the records carrying that key.
    pub external_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    /// One row per method, in order of first appearance.
    pub methods: Vec<MethodSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregates records of a single task into per-method means.
pub fn aggregate(records: &[GenerationRecord]) -> Result<TaskSummary> {
    let first = records
        .first()
        .ok_or(Error::EmptyInput("generation records"))?;
    if let Some(other) = records.iter().find(|r| r.task != first.task) {
        return Err(Error::MixedTasks(first.task.to_string(), other.task.to_string()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    let methods = order
        .into_iter()
        .map(|method| {
            let rows: Vec<&GenerationRecord> = records.iter().filter(|r| r.method == method).collect();
            let rep2 = mean(rows.iter().map(|r| r.diversity.rep2));
            let rep3 = mean(rows.iter().map(|r| r.diversity.rep3));
            let rep4 = mean(rows.iter().map(|r| r.diversity.rep4));
            let mut keys: Vec<&String> = rows.iter().flat_map(|r| r.external_scores.keys()).collect();
            keys.sort();
            keys.dedup();
            let external_scores = keys
                .into_iter()
                .map(|k| (k.clone(), mean(rows.iter().filter_map(|r| r.external_scores.get(k).copied()))))
                .collect();
            MethodSummary {
                method: method.to_string(),
                count: rows.len(),
                rep2,
                rep3,
                rep4,
                diversity: DiversityReport::from_reps(rep2, rep3, rep4).reported_diversity,
                mean_instance_diversity: mean(rows.iter().map(|r| r.diversity.reported_diversity)),
                mean_decode_seconds: mean(rows.iter().map(|r| r.decode_seconds)),
                truncated: rows.iter().filter(|r| r.truncated).count(),
                external_scores,
            }
        })
        .collect();
    Ok(TaskSummary {
        task: first.task,
        methods,
    })
}

/// Splits records by task (in order of first appearance) and aggregates each.
pub fn aggregate_by_task(records: &[GenerationRecord]) -> Result<Vec<TaskSummary>> {
    let mut tasks: Vec<Task> = Vec::new();
    for r in records {
        if !tasks.contains(&r.task) {
            tasks.push(r.task);
        }
    }
    tasks
        .into_iter()
        .map(|t| {
            let subset: Vec<GenerationRecord> = records.iter().filter(|r| r.task == t).cloned().collect();
            aggregate(&subset)
        })
        .collect()
}

/// Writes one CSV row per (task, method). External scores get one column
/// per key, empty where a method has no value.
pub fn write_summary_csv<W: Write>(summaries: &[TaskSummary], out: W) -> Result<()> {
    let keys: BTreeSet<&str> = summaries
        .iter()
        .flat_map(|s| &s.methods)
        .flat_map(|m| m.external_scores.keys().map(String::as_str))
        .collect();
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![
        "task",
        "method",
        "count",
        "rep2",
        "rep3",
        "rep4",
        "diversity",
        "mean_instance_diversity",
        "mean_decode_seconds",
        "truncated",
    ];
    header.extend(keys.iter().copied());
    writer.write_record(&header)?;
    for s in summaries {
        for m in &s.methods {
            let mut row = vec![
                s.task.as_str().to_string(),
                m.method.clone(),
                m.count.to_string(),
                m.rep2.to_string(),
                m.rep3.to_string(),
                m.rep4.to_string(),
                m.diversity.to_string(),
                m.mean_instance_diversity.to_string(),
                m.mean_decode_seconds.to_string(),
                m.truncated.to_string(),
            ];
            row.extend(
                keys.iter()
                    .map(|k| m.external_scores.get(*k).map(f64::to_string).unwrap_or_default()),
            );
            writer.write_record(&row)?;
        }
    }
    writer.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Plain-text table, one row per method.
pub fn render_table(summary: &TaskSummary) -> String {
    let mut out = format!(
        "{:<16} {:>5} {:>7} {:>7} {:>7} {:>9} {:>10}\n",
        "method", "n", "rep-2", "rep-3", "rep-4", "diversity", "sec/inst"
    );
    for m in &summary.methods {
        out.push_str(&format!(
            "{:<16} {:>5} {:>7.2} {:>7.2} {:>7.2} {:>9.2} {:>10.4}\n",
            m.method, m.count, m.rep2, m.rep3, m.rep4, m.diversity, m.mean_decode_seconds
        ));
    }
    out
}
