//! Language-model backends.
//!
//! Everything the decoders need from a model goes through [`LanguageModel`]:
//! tokenization, full-softmax next-token probabilities truncated to the
//! `top_m` most likely entries, and per-position last-layer hidden states.

mod remote;
mod synthetic;
pub mod wire;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

pub use remote::RemoteBackend;
pub use synthetic::{RandomSpecParams, SyntheticBackend, SyntheticModelSpec};

pub type TokenId = u32;

/// Default truncation for `next_distribution` requests that do not need the
/// whole vocabulary.
pub const DEFAULT_TOP_M: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub eos_id: TokenId,
    pub max_context: usize,
    pub name: String,
}

impl BackendInfo {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.hidden_dim < 1 {
            return Err(Error::InvalidArgument("hidden_dim must be >= 1".into()));
        }
        if self.eos_id as usize >= self.vocab_size {
            return Err(Error::UnknownToken {
                id: self.eos_id,
                vocab_size: self.vocab_size,
            });
        }
        if self.max_context < 1 {
            return Err(Error::InvalidArgument("max_context must be >= 1".into()));
        }
        Ok(())
    }
}

/// A last-layer token representation. Values are always finite; the
/// Euclidean norm is cached since every similarity needs it.
#[derive(Debug, Clone)]
pub struct HiddenVector {
    values: Vec<f64>,
    norm: f64,
}

impl HiddenVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    /// Unit basis vector `e_index` of dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[index] = 1.0;
        Self { values, norm: 1.0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl PartialEq for HiddenVector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl Serialize for HiddenVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HiddenVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        HiddenVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// The most probable next tokens under the full softmax, sorted by
/// descending probability with ties broken by lower token id.
#[derive(Debug, Clone, PartialEq)]
pub struct NextDistribution {
    entries: Vec<(TokenId, f64)>,
    truncation_mass: f64,
}

impl NextDistribution {
    /// Builds a distribution from unordered `(id, probability)` pairs.
    pub fn new(mut entries: Vec<(TokenId, f64)>) -> Result<Self> {
        for &(id, p) in &entries {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "probability {p} for token {id} outside (0, 1]"
                )));
            }
        }
        sort_by_probability(&mut entries);
        if has_duplicate_ids(entries.iter().map(|e| e.0)) {
            return Err(Error::InvalidArgument("duplicate token id in distribution".into()));
        }
        let truncation_mass = entries.iter().map(|e| e.1).sum();
        Ok(Self {
            entries,
            truncation_mass,
        })
    }

    /// Caller guarantees the entries are already canonically sorted, unique
    /// and in (0, 1].
    pub(crate) fn from_sorted(entries: Vec<(TokenId, f64)>) -> Self {
        let truncation_mass = entries.iter().map(|e| e.1).sum();
        Self {
            entries,
            truncation_mass,
        }
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn truncation_mass(&self) -> f64 {
        self.truncation_mass
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probability(&self, id: TokenId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == id).map(|e| e.1)
    }
}

/// Canonical order: probability descending, then token id ascending.
pub(crate) fn sort_by_probability(entries: &mut [(TokenId, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

fn has_duplicate_ids(ids: impl Iterator<Item = TokenId>) -> bool {
    let mut seen = std::collections::HashSet::new();
    ids.into_iter().any(|id| !seen.insert(id))
}

/// Anything that can tokenize text, report next-token probabilities and
/// expose per-token last-layer hidden states.
///
/// Implementations are immutable after construction and may be shared
/// between concurrent decode sessions.
pub trait LanguageModel: Send + Sync {
    /// Stable for the lifetime of the instance.
    fn info(&self) -> &BackendInfo;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, ids: &[TokenId]) -> Result<String>;

    /// Byte offset in `text` where the coverage of each token in `ids`
    /// begins, when the backend can report it directly. `ids` must be the
    /// output of `tokenize(text)`. Backends returning `None` get their
    /// offsets reconstructed from prefix detokenization.
    fn token_starts(&self, _text: &str, _ids: &[TokenId]) -> Result<Option<Vec<usize>>> {
        Ok(None)
    }

    /// The `top_m` most probable next tokens with full-softmax probabilities.
    fn next_distribution(&self, tokens: &[TokenId], top_m: usize) -> Result<NextDistribution>;

    /// One hidden vector per input position.
    fn context_hiddens(&self, tokens: &[TokenId]) -> Result<Vec<HiddenVector>>;

    /// For each candidate `v`, the hidden vector at the final position of
    /// `prefix ⊕ v`, evaluated as one logical batch.
    fn candidate_hiddens(
        &self,
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<HiddenVector>>;
}

pub(crate) fn check_context(info: &BackendInfo, len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::EmptyInput("token sequence"));
    }
    if len > info.max_context {
        return Err(Error::ContextOverflow {
            len,
            max: info.max_context,
        });
    }
    Ok(())
}

pub(crate) fn check_token(info: &BackendInfo, id: TokenId) -> Result<()> {
    if id as usize >= info.vocab_size {
        return Err(Error::UnknownToken {
            id,
            vocab_size: info.vocab_size,
        });
    }
    Ok(())
}

pub(crate) fn check_candidates(info: &BackendInfo, prefix: &[TokenId], candidates: &[TokenId]) -> Result<()> {
    if prefix.is_empty() {
        return Err(Error::EmptyInput("prefix"));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidates"));
    }
    if has_duplicate_ids(candidates.iter().copied()) {
        return Err(Error::InvalidArgument("candidate ids must be unique".into()));
    }
    check_context(info, prefix.len() + 1)?;
    for &id in prefix.iter().chain(candidates) {
        check_token(info, id)?;
    }
    Ok(())
}
