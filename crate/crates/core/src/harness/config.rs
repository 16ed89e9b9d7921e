use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{LanguageModel, RandomSpecParams, RemoteBackend, SyntheticModelSpec};
use crate::context::{Task, TaskTemplate};
use crate::decoders::{DecodeConfig, Strategy};
use crate::{Error, Result};

pub const ENDPOINT_ENV: &str = "FECS_ENDPOINT";

fn one() -> usize {
    1
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBackendConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    #[serde(default = "one")]
    pub context_order: usize,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_context")]
    pub max_context: usize,
}

fn default_sharpness() -> f64 {
    4.0
}

fn default_max_context() -> usize {
    4096
}

impl Default for RandomBackendConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            hidden_dim: 16,
            context_order: 1,
            sharpness: default_sharpness(),
            seed: 0,
            max_context: default_max_context(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// A spec file, or a randomly generated model when `spec` is absent.
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        random: Option<RandomBackendConfig>,
    },
    /// Falls back to `$FECS_ENDPOINT` when `endpoint` is absent.
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Synthetic {
            spec: None,
            random: None,
        }
    }
}

impl BackendConfig {
    pub fn connect(&self) -> Result<Arc<dyn LanguageModel>> {
        match self {
            BackendConfig::Synthetic { spec: Some(path), .. } => {
                Ok(Arc::new(SyntheticModelSpec::from_path(path)?.build()?))
            }
            BackendConfig::Synthetic { spec: None, random } => {
                let r = random.clone().unwrap_or_default();
                let params = RandomSpecParams {
                    vocab_size: r.vocab_size,
                    hidden_dim: r.hidden_dim,
                    context_order: r.context_order,
                    sharpness: r.sharpness,
                    max_context: r.max_context,
                };
                Ok(Arc::new(SyntheticModelSpec::random(&params, r.seed)?.build()?))
            }
            BackendConfig::Remote { endpoint, timeout_secs } => {
                let endpoint = match endpoint {
                    Some(e) => e.clone(),
                    None => std::env::var(ENDPOINT_ENV).map_err(|_| {
                        Error::Config(vec![format!(
                            "remote backend needs an endpoint (config, --endpoint or ${ENDPOINT_ENV})"
                        )])
                    })?,
                };
                let timeout = Duration::from_secs_f64(timeout_secs.max(0.001));
                Ok(Arc::new(RemoteBackend::connect(&endpoint, timeout)?))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summarization: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue: Option<PathBuf>,
}

/// Settings applied to every method unless the method overrides them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_on_eos: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_on_newline: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nucleus_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_on_eos: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_on_newline: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m: Option<usize>,
}

/// The experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub templates: TemplatePaths,
    #[serde(default)]
    pub defaults: MethodDefaults,
    pub methods: Vec<MethodConfig>,
    #[serde(default = "one")]
    pub parallel: usize,
}

/// A method with every decode setting resolved. `max_new_tokens` stays
/// `None` when unset so the task default can apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedMethod {
    pub name: String,
    pub decode: DecodeConfig,
    pub max_new_tokens: Option<usize>,
}

impl ResolvedMethod {
    pub fn for_task(&self, task: Task) -> DecodeConfig {
        DecodeConfig {
            max_new_tokens: self.max_new_tokens.unwrap_or_else(|| task.default_max_new_tokens()),
            ..self.decode
        }
    }
}

/// Strategy defaults at the standard operating points.
fn preset(strategy: Strategy) -> DecodeConfig {
    match strategy {
        Strategy::Greedy => DecodeConfig::greedy(),
        Strategy::Beam => DecodeConfig::beam(4),
        Strategy::Nucleus => DecodeConfig::nucleus(0.95, 0),
        Strategy::Contrastive => DecodeConfig::contrastive(4, 0.6),
        Strategy::Fecs => DecodeConfig::fecs(4, 0.3, 0.3),
    }
}

impl MethodConfig {
    pub fn resolve(&self, defaults: &MethodDefaults) -> ResolvedMethod {
        let mut d = preset(self.strategy);
        let o = self;
        if let Some(k) = self.k {
            d.k = k;
        }
        if let Some(a) = self.alpha {
            d.weights.alpha = a;
        }
        if let Some(b) = self.beta {
            d.weights.beta = b;
        }
        if let Some(p) = self.nucleus_p {
            d.nucleus_p = p;
        }
        if let Some(w) = self.beam_width {
            d.beam_width = w;
        }
        if let Some(v) = o.stop_on_eos.or(defaults.stop_on_eos) {
            d.stop_on_eos = v;
        }
        if let Some(v) = o.stop_on_newline.or(defaults.stop_on_newline) {
            d.stop_on_newline = v;
        }
        if let Some(v) = o.seed.or(defaults.seed) {
            d.seed = v;
        }
        if let Some(v) = o.top_m.or(defaults.top_m) {
            d.top_m = v;
        }
        let max_new_tokens = o.max_new_tokens.or(defaults.max_new_tokens);
        if let Some(m) = max_new_tokens {
            d.max_new_tokens = m;
        }
        ResolvedMethod {
            name: self.name.clone(),
            decode: d,
            max_new_tokens,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it are resolved against the
    /// file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        if let BackendConfig::Synthetic { spec, .. } = &mut cfg.backend {
            fix(spec);
        }
        fix(&mut cfg.templates.summarization);
        fix(&mut cfg.templates.dialogue);
        Ok(cfg)
    }

    pub fn resolved_methods(&self) -> Vec<ResolvedMethod> {
        self.methods.iter().map(|m| m.resolve(&self.defaults)).collect()
    }

    /// Every violated invariant, as human-readable messages.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.methods.is_empty() {
            errors.push("at least one method is required".to_string());
        }
        if self.parallel == 0 {
            errors.push("parallel must be at least 1".to_string());
        }
        let mut names = HashSet::new();
        for m in &self.methods {
            if m.name.trim().is_empty() {
                errors.push("method name must be non-empty".to_string());
            }
            if !names.insert(m.name.as_str()) {
                errors.push(format!("duplicate method name '{}'", m.name));
            }
            if let Err(errs) = m.resolve(&self.defaults).decode.validate() {
                errors.extend(errs.into_iter().map(|e| format!("method '{}': {e}", m.name)));
            }
        }
        if let BackendConfig::Remote { timeout_secs, .. } = &self.backend {
            if !(*timeout_secs > 0.0) {
                errors.push("timeout_secs must be positive".to_string());
            }
        }
        if let BackendConfig::Synthetic {
            spec: Some(_),
            random: Some(_),
        } = &self.backend
        {
            errors.push("synthetic backend takes either spec or random, not both".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn template(&self, task: Task) -> Result<TaskTemplate> {
        let path = match task {
            Task::Summarization => &self.templates.summarization,
            Task::Dialogue => &self.templates.dialogue,
        };
        match path {
            Some(p) => {
                let tpl = TaskTemplate::from_path(p)?;
                if tpl.name != task {
                    return Err(Error::Config(vec![format!(
                        "template {} is for task {}, not {task}",
                        p.display(),
                        tpl.name
                    )]));
                }
                Ok(tpl)
            }
            None => Ok(TaskTemplate::builtin(task)),
        }
    }
}

/// Loads and validates a config file, collecting every problem found.
pub fn validate_config(path: impl AsRef<Path>) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let cfg = ExperimentConfig::from_path(path).map_err(|e| vec![e.to_string()])?;
    cfg.validate()?;
    let mut errors = Vec::new();
    for task in [Task::Summarization, Task::Dialogue] {
        if let Err(e) = cfg.template(task) {
            errors.push(e.to_string());
        }
    }
    if let BackendConfig::Synthetic { spec: Some(p), .. } = &cfg.backend {
        if let Err(e) = SyntheticModelSpec::from_path(p).and_then(|s| s.build()) {
            errors.push(e.to_string());
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}
