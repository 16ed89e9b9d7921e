//! Deterministic table-driven model used for exact verification.
//!
//! Next-token probabilities come from a transition table keyed by the last
//! `context_order` tokens; hidden states are the embedding of the token at
//! each position, independent of context. Contexts without a table row get
//! the uniform distribution.
//!
//! Text is split on whitespace, with every `\n` kept as its own token. Words
//! listed in `tokens` map to their index, `t<id>` maps to `<id>`, and
//! anything else is hashed into the vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_candidates, check_context, check_token, BackendInfo, HiddenVector, LanguageModel,
    NextDistribution, TokenId,
};
use crate::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-9;
const MAX_RANDOM_ROWS: usize = 1 << 16;

fn default_name() -> String {
    "synthetic".to_string()
}

fn default_max_context() -> usize {
    4096
}

/// On-disk description of a synthetic model.
///
/// `transition_table` keys are comma-separated token ids, oldest first
/// (`"3,1"`); the empty key `""` is the row for `context_order == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModelSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub vocab_size: usize,
    pub hidden_dim: usize,
    /// Defaults to `vocab_size - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_id: Option<TokenId>,
    #[serde(default = "default_max_context")]
    pub max_context: usize,
    pub context_order: usize,
    pub transition_table: BTreeMap<String, Vec<f64>>,
    pub embedding_table: Vec<Vec<f64>>,
    /// Optional surface strings, indexed by token id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
}

/// Knobs for [`SyntheticModelSpec::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpecParams {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub context_order: usize,
    /// Larger values give peakier rows.
    pub sharpness: f64,
    pub max_context: usize,
}

impl Default for RandomSpecParams {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            hidden_dim: 8,
            context_order: 1,
            sharpness: 4.0,
            max_context: 4096,
        }
    }
}

impl SyntheticModelSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedSpec(format!("{}: {e}", path.display())))
    }

    pub fn key(context: &[TokenId]) -> String {
        context
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// A randomly populated spec with a row for every full-length context key.
    pub fn random(params: &RandomSpecParams, seed: u64) -> Result<Self> {
        let RandomSpecParams {
            vocab_size,
            hidden_dim,
            context_order,
            sharpness,
            max_context,
        } = *params;
        let rows = u32::try_from(context_order)
            .ok()
            .and_then(|o| vocab_size.checked_pow(o))
            .filter(|&n| n <= MAX_RANDOM_ROWS)
            .ok_or_else(|| {
                Error::MalformedSpec(format!(
                    "vocab_size^context_order exceeds {MAX_RANDOM_ROWS} rows"
                ))
            })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition_table = BTreeMap::new();
        for row in 0..rows {
            let mut context = Vec::with_capacity(context_order);
            let mut rest = row;
            for _ in 0..context_order {
                context.push((rest % vocab_size) as TokenId);
                rest /= vocab_size;
            }
            let weights: Vec<f64> = (0..vocab_size)
                .map(|_| (sharpness * rng.random::<f64>()).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            transition_table.insert(Self::key(&context), weights.iter().map(|w| w / total).collect());
        }
        let embedding_table = (0..vocab_size)
            .map(|_| (0..hidden_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Ok(Self {
            name: format!("random-{seed}"),
            vocab_size,
            hidden_dim,
            eos_id: None,
            max_context,
            context_order,
            transition_table,
            embedding_table,
            tokens: Vec::new(),
        })
    }

    pub fn build(&self) -> Result<SyntheticBackend> {
        SyntheticBackend::new(self)
    }
}

/// In-process backend built from a [`SyntheticModelSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    info: BackendInfo,
    order: usize,
    table: HashMap<Vec<TokenId>, Vec<f64>>,
    uniform: Vec<f64>,
    embeddings: Vec<HiddenVector>,
    surface: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

impl SyntheticBackend {
    pub fn new(spec: &SyntheticModelSpec) -> Result<Self> {
        let malformed = |msg: String| Error::MalformedSpec(msg);
        let vocab = spec.vocab_size;
        let info = BackendInfo {
            vocab_size: vocab,
            hidden_dim: spec.hidden_dim,
            eos_id: spec.eos_id.unwrap_or(vocab.saturating_sub(1) as TokenId),
            max_context: spec.max_context,
            name: spec.name.clone(),
        };
        info.validate().map_err(|e| malformed(e.to_string()))?;

        let mut table = HashMap::with_capacity(spec.transition_table.len());
        for (key, row) in &spec.transition_table {
            let context = parse_key(key, vocab).map_err(|m| malformed(format!("key {key:?}: {m}")))?;
            if context.len() > spec.context_order {
                return Err(malformed(format!(
                    "key {key:?} longer than context_order {}",
                    spec.context_order
                )));
            }
            if row.len() != vocab {
                return Err(malformed(format!(
                    "row {key:?} has {} entries, expected {vocab}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(malformed(format!("row {key:?} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(malformed(format!("row {key:?} sums to {sum}, not 1")));
            }
            table.insert(context, row.clone());
        }

        if spec.embedding_table.len() != vocab {
            return Err(malformed(format!(
                "{} embeddings for {vocab} tokens",
                spec.embedding_table.len()
            )));
        }
        let embeddings = spec
            .embedding_table
            .iter()
            .enumerate()
            .map(|(id, values)| {
                if values.len() != spec.hidden_dim {
                    return Err(malformed(format!(
                        "embedding {id} has dim {}, expected {}",
                        values.len(),
                        spec.hidden_dim
                    )));
                }
                HiddenVector::new(values.clone()).map_err(|_| malformed(format!("embedding {id} not finite")))
            })
            .collect::<Result<Vec<_>>>()?;

        if !spec.tokens.is_empty() && spec.tokens.len() != vocab {
            return Err(malformed(format!(
                "{} token strings for {vocab} tokens",
                spec.tokens.len()
            )));
        }
        let mut lookup = HashMap::new();
        for (id, word) in spec.tokens.iter().enumerate() {
            if word.is_empty() || (word != "\n" && word.chars().any(char::is_whitespace)) {
                return Err(malformed(format!("token string {id} is empty or contains whitespace")));
            }
            if lookup.insert(word.clone(), id as TokenId).is_some() {
                return Err(malformed(format!("duplicate token string {word:?}")));
            }
        }

        Ok(Self {
            info,
            order: spec.context_order,
            table,
            uniform: vec![1.0 / vocab as f64; vocab],
            embeddings,
            surface: spec.tokens.clone(),
            lookup,
        })
    }

    fn row(&self, tokens: &[TokenId]) -> &[f64] {
        let start = tokens.len().saturating_sub(self.order);
        self.table
            .get(&tokens[start..])
            .map(Vec::as_slice)
            .unwrap_or(&self.uniform)
    }

    fn word_id(&self, word: &str) -> TokenId {
        if let Some(&id) = self.lookup.get(word) {
            return id;
        }
        if let Some(id) = word
            .strip_prefix('t')
            .and_then(|d| d.parse::<TokenId>().ok())
            .filter(|&id| (id as usize) < self.info.vocab_size)
        {
            return id;
        }
        (fnv1a(word.as_bytes()) % self.info.vocab_size as u64) as TokenId
    }

    fn surface(&self, id: TokenId) -> String {
        match self.surface.get(id as usize) {
            Some(s) => s.clone(),
            None => format!("t{id}"),
        }
    }
}

fn parse_key(key: &str, vocab: usize) -> std::result::Result<Vec<TokenId>, String> {
    if key.is_empty() {
        return Ok(Vec::new());
    }
    key.split(',')
        .map(|part| {
            let id: TokenId = part.trim().parse().map_err(|_| format!("bad id {part:?}"))?;
            if id as usize >= vocab {
                return Err(format!("id {id} out of range"));
            }
            Ok(id)
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Byte ranges of whitespace-separated words, with `\n` as its own word.
fn split_words(text: &str) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
            if ch == '\n' {
                words.push((i, i + 1));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push((s, text.len()));
    }
    words
}

impl LanguageModel for SyntheticBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(split_words(text)
            .into_iter()
            .map(|(a, b)| self.word_id(&text[a..b]))
            .collect())
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        let mut prev_newline = true;
        for &id in ids {
            check_token(&self.info, id)?;
            let word = self.surface(id);
            let newline = word == "\n";
            if !prev_newline && !newline {
                out.push(' ');
            }
            out.push_str(&word);
            prev_newline = newline;
        }
        Ok(out)
    }

    /// Each token covers the whitespace preceding it; the first token starts
    /// at 0.
    fn token_starts(&self, text: &str, ids: &[TokenId]) -> Result<Option<Vec<usize>>> {
        let words = split_words(text);
        if words.len() != ids.len() {
            return Err(Error::InvalidArgument("ids do not match text tokenization".into()));
        }
        let mut starts = Vec::with_capacity(words.len());
        let mut prev_end = 0;
        for (_, end) in words {
            starts.push(prev_end);
            prev_end = end;
        }
        Ok(Some(starts))
    }

    fn next_distribution(&self, tokens: &[TokenId], top_m: usize) -> Result<NextDistribution> {
        check_context(&self.info, tokens.len())?;
        if top_m == 0 || top_m > self.info.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "top_m {top_m} outside 1..={}",
                self.info.vocab_size
            )));
        }
        for &t in tokens {
            check_token(&self.info, t)?;
        }
        let row = self.row(tokens);
        let mut entries: Vec<(TokenId, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(id, p)| (id as TokenId, *p))
            .collect();
        let cmp = |a: &(TokenId, f64), b: &(TokenId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if top_m < entries.len() {
            entries.select_nth_unstable_by(top_m - 1, cmp);
            entries.truncate(top_m);
        }
        entries.sort_by(cmp);
        Ok(NextDistribution::from_sorted(entries))
    }

    fn context_hiddens(&self, tokens: &[TokenId]) -> Result<Vec<HiddenVector>> {
        check_context(&self.info, tokens.len())?;
        tokens
            .iter()
            .map(|&t| {
                check_token(&self.info, t)?;
                Ok(self.embeddings[t as usize].clone())
            })
            .collect()
    }

    fn candidate_hiddens(&self, prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<HiddenVector>> {
        check_candidates(&self.info, prefix, candidates)?;
        Ok(candidates
            .iter()
            .map(|&c| self.embeddings[c as usize].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 4 tokens, one-hot embeddings, one global row.
    fn fixture(row: Vec<f64>) -> SyntheticModelSpec {
        SyntheticModelSpec {
            name: "fixture".into(),
            vocab_size: 4,
            hidden_dim: 4,
            eos_id: Some(3),
            max_context: 8,
            context_order: 0,
            transition_table: [(String::new(), row)].into_iter().collect(),
            embedding_table: (0..4)
                .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            tokens: vec!["a".into(), "b".into(), "c".into(), "\n".into()],
        }
    }

    #[test]
    fn info_echoes_spec() {
        let b = fixture(vec![0.4, 0.1, 0.35, 0.15]).build().unwrap();
        let info = b.info().clone();
        assert_eq!(info.vocab_size, 4);
        assert_eq!(info.hidden_dim, 4);
        assert_eq!(info.eos_id, 3);
        assert_eq!(info.name, "fixture");
        assert_eq!(b.info(), &info);
    }

    #[test]
    fn top_m_lookup() {
        let b = fixture(vec![0.4, 0.1, 0.35, 0.15]).build().unwrap();
        let d = b.next_distribution(&[0], 2).unwrap();
        assert_eq!(d.entries(), &[(0, 0.4), (2, 0.35)]);
        assert!((d.truncation_mass() - 0.75).abs() < 1e-12);
        let full = b.next_distribution(&[1, 2], 4).unwrap();
        assert!((full.truncation_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_row() {
        let b = fixture(vec![1.0, 0.0, 0.0, 0.0]).build().unwrap();
        let d = b.next_distribution(&[2], 1).unwrap();
        assert_eq!(d.entries(), &[(0, 1.0)]);
        // zero-probability tokens are not reported
        assert_eq!(b.next_distribution(&[2], 4).unwrap().len(), 1);
    }

    #[test]
    fn order_zero_ignores_context() {
        let b = fixture(vec![0.4, 0.1, 0.35, 0.15]).build().unwrap();
        assert_eq!(
            b.next_distribution(&[0], 4).unwrap(),
            b.next_distribution(&[3, 2, 1], 4).unwrap()
        );
    }

    #[test]
    fn unknown_key_is_uniform() {
        let mut spec = fixture(vec![0.4, 0.1, 0.35, 0.15]);
        spec.context_order = 1;
        spec.transition_table = [("0".to_string(), vec![0.4, 0.1, 0.35, 0.15])].into_iter().collect();
        let b = spec.build().unwrap();
        let d = b.next_distribution(&[1], 4).unwrap();
        assert!(d.entries().iter().all(|e| e.1 == 0.25));
        assert_eq!(d.entries()[0].0, 0);
        assert_eq!(b.next_distribution(&[2, 0], 1).unwrap().entries(), &[(0, 0.4)]);
    }

    #[test]
    fn hiddens_echo_embeddings() {
        let b = fixture(vec![0.4, 0.1, 0.35, 0.15]).build().unwrap();
        let h = b.context_hiddens(&[2, 0]).unwrap();
        assert_eq!(h, vec![HiddenVector::basis(4, 2), HiddenVector::basis(4, 0)]);
        let c = b.candidate_hiddens(&[1], &[0, 2]).unwrap();
        assert_eq!(c, vec![HiddenVector::basis(4, 0), HiddenVector::basis(4, 2)]);
    }

    #[test]
    fn errors() {
        let b = fixture(vec![0.4, 0.1, 0.35, 0.15]).build().unwrap();
        assert!(matches!(b.next_distribution(&[], 1), Err(Error::EmptyInput(_))));
        assert!(matches!(b.next_distribution(&[0; 9], 1), Err(Error::ContextOverflow { .. })));
        assert!(matches!(b.candidate_hiddens(&[0; 8], &[1]), Err(Error::ContextOverflow { .. })));
        assert!(matches!(b.candidate_hiddens(&[0], &[4]), Err(Error::UnknownToken { .. })));
        assert!(b.candidate_hiddens(&[0], &[1, 1]).is_err());
        assert!(b.next_distribution(&[0], 5).is_err());
    }

    #[test]
    fn malformed_specs_rejected() {
        let mut bad_sum = fixture(vec![0.4, 0.1, 0.35, 0.2]);
        assert!(matches!(bad_sum.build(), Err(Error::MalformedSpec(_))));
        bad_sum = fixture(vec![0.4, 0.1, 0.35, 0.15]);
        bad_sum.embedding_table.pop();
        assert!(matches!(bad_sum.build(), Err(Error::MalformedSpec(_))));
        let mut long_key = fixture(vec![0.4, 0.1, 0.35, 0.15]);
        long_key.transition_table = [("0,1".to_string(), vec![0.25; 4])].into_iter().collect();
        assert!(long_key.build().is_err());
    }

    #[test]
    fn whitespace_tokenizer() {
        let b = fixture(vec![0.4, 0.1, 0.35, 0.15]).build().unwrap();
        let text = "a  b\nc";
        let ids = b.tokenize(text).unwrap();
        assert_eq!(ids, vec![0, 1, 3, 2]);
        assert_eq!(b.token_starts(text, &ids).unwrap().unwrap(), vec![0, 1, 4, 5]);
        assert_eq!(b.detokenize(&ids).unwrap(), "a b\nc");
        // vocab-less fallbacks
        assert_eq!(b.tokenize("t2").unwrap(), vec![2]);
        let h = b.tokenize("zebra zebra").unwrap();
        assert_eq!(h[0], h[1]);
    }

    #[test]
    fn random_spec_is_valid_and_seeded() {
        let p = RandomSpecParams {
            vocab_size: 6,
            hidden_dim: 3,
            context_order: 2,
            ..Default::default()
        };
        let a = SyntheticModelSpec::random(&p, 7).unwrap();
        assert_eq!(a, SyntheticModelSpec::random(&p, 7).unwrap());
        assert_eq!(a.transition_table.len(), 36);
        a.build().unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let back: SyntheticModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
