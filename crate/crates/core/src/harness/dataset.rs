use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::context::{Task, Turn};
use crate::metrics::GenerationRecord;
use crate::{Error, Result};

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInstance {
    pub id: String,
    pub task: Task,
    pub source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// Parses JSON Lines, skipping blank lines and reporting the offending line
/// number on error.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetInstance>> {
    let path = path.as_ref();
    let instances: Vec<DatasetInstance> = read_jsonl(path)?;
    if instances.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let mut seen = HashSet::new();
    for inst in &instances {
        if !seen.insert(inst.id.as_str()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("duplicate instance id '{}'", inst.id),
            });
        }
        if inst.source.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("instance '{}' has an empty source", inst.id),
            });
        }
    }
    Ok(instances)
}

/// A sidecar line carrying externally computed scores for an instance,
/// optionally restricted to one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScores {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub scores: BTreeMap<String, f64>,
}

/// Attaches sidecar scores to matching records. Method-specific entries
/// override instance-wide ones. Returns the number of records touched.
pub fn attach_external_scores(records: &mut [GenerationRecord], scores: &[ExternalScores]) -> usize {
    let mut by_id: HashMap<&str, Vec<&ExternalScores>> = HashMap::new();
    for s in scores {
        by_id.entry(s.id.as_str()).or_default().push(s);
    }
    let mut touched = 0;
    for rec in records.iter_mut() {
        let Some(entries) = by_id.get(rec.instance_id.as_str()) else {
            continue;
        };
        let mut hit = false;
        let general = entries.iter().filter(|e| e.method.is_none());
        let specific = entries.iter().filter(|e| e.method.as_deref() == Some(rec.method.as_str()));
        for e in general.chain(specific) {
            rec.external_scores
                .extend(e.scores.iter().map(|(k, v)| (k.clone(), *v)));
            hit = true;
        }
        touched += usize::from(hit);
    }
    touched
}
