//! Decoding loops.
//!
//! Every strategy consumes a [`SegmentedSequence`] and produces the
//! generated tokens plus a [`DecodeTrace`] recording, per step, the
//! candidates considered, their score breakdowns (for the contrastive
//! family) and the wall-clock time the step took.

mod beam;
mod contrastive;
mod nucleus;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{LanguageModel, TokenId, DEFAULT_TOP_M};
use crate::context::SegmentedSequence;
use crate::scoring::{MixWeights, ScoreBreakdown};
use crate::{Error, Result};

pub use beam::decode_beam;
pub use contrastive::{decode_contrastive, decode_fecs};
pub use nucleus::{decode_nucleus, nucleus_set};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
    Nucleus,
    Contrastive,
    Fecs,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Greedy,
        Strategy::Beam,
        Strategy::Nucleus,
        Strategy::Contrastive,
        Strategy::Fecs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
            Strategy::Nucleus => "nucleus",
            Strategy::Contrastive => "contrastive",
            Strategy::Fecs => "fecs",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub k: usize,
    #[serde(flatten)]
    pub weights: MixWeights,
    pub nucleus_p: f64,
    pub beam_width: usize,
    pub max_new_tokens: usize,
    pub stop_on_eos: bool,
    pub stop_on_newline: bool,
    pub seed: u64,
    /// Truncation requested from the backend by nucleus sampling.
    pub top_m: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            k: 4,
            weights: MixWeights { alpha: 0.0, beta: 0.0 },
            nucleus_p: 0.95,
            beam_width: 4,
            max_new_tokens: 128,
            stop_on_eos: true,
            stop_on_newline: true,
            seed: 0,
            top_m: DEFAULT_TOP_M,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn beam(beam_width: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_width,
            ..Self::default()
        }
    }

    pub fn nucleus(p: f64, seed: u64) -> Self {
        Self {
            strategy: Strategy::Nucleus,
            nucleus_p: p,
            seed,
            ..Self::default()
        }
    }

    pub fn contrastive(k: usize, alpha: f64) -> Self {
        Self {
            strategy: Strategy::Contrastive,
            k,
            weights: MixWeights { alpha, beta: 0.0 },
            ..Self::default()
        }
    }

    pub fn fecs(k: usize, alpha: f64, beta: f64) -> Self {
        Self {
            strategy: Strategy::Fecs,
            k,
            weights: MixWeights { alpha, beta },
            ..Self::default()
        }
    }

    /// Operating points: beam 4, nucleus p = 0.95, contrastive (4, 0.6) and
    /// FECS (4, 0.3, 0.3).
    pub fn standard_set() -> Vec<(String, DecodeConfig)> {
        vec![
            ("greedy".into(), Self::greedy()),
            ("beam".into(), Self::beam(4)),
            ("nucleus".into(), Self::nucleus(0.95, 0)),
            ("contrastive".into(), Self::contrastive(4, 0.6)),
            ("fecs".into(), Self::fecs(4, 0.3, 0.3)),
        ]
    }

    /// Checks every configuration invariant, returning all violations.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if let Err(Error::InvalidWeights { reason, .. }) = self.weights.validate() {
            errors.push(reason.to_string());
        }
        if self.max_new_tokens == 0 {
            errors.push("max_new_tokens must be positive".into());
        }
        if self.top_m == 0 {
            errors.push("top_m must be positive".into());
        }
        match self.strategy {
            Strategy::Fecs | Strategy::Contrastive if self.k == 0 => {
                errors.push("k must be positive".into())
            }
            _ => {}
        }
        match self.strategy {
            Strategy::Fecs if !(self.weights.beta > 0.0) => errors.push(
                "strategy fecs requires beta > 0 (use strategy contrastive for beta = 0)".into(),
            ),
            Strategy::Contrastive if self.weights.beta != 0.0 => {
                errors.push("strategy contrastive requires beta = 0".into())
            }
            Strategy::Nucleus if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) => {
                errors.push(format!("nucleus_p {} outside (0, 1]", self.nucleus_p))
            }
            Strategy::Beam if self.beam_width == 0 => errors.push("beam_width must be positive".into()),
            _ => {}
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn expect_strategy(&self, strategy: Strategy) -> Result<()> {
        if self.strategy != strategy {
            return Err(Error::InvalidArgument(format!(
                "config strategy is {}, not {strategy}",
                self.strategy
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Index of the emitted token among the generated tokens.
    pub position: usize,
    /// Candidate (id, probability) pairs: the top-k set, the nucleus, or the
    /// beam expansions of the chosen hypothesis.
    pub candidates: Vec<(TokenId, f64)>,
    /// Score decomposition; empty for non-contrastive strategies.
    pub scores: Vec<ScoreBreakdown>,
    pub chosen: TokenId,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    Newline,
    MaxTokens,
    ContextOverflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Generated tokens. A terminating EOS is not included; a terminating
    /// newline token is.
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace,
    pub stop: StopReason,
}

impl DecodeOutput {
    pub fn truncated(&self) -> bool {
        self.stop == StopReason::ContextOverflow
    }
}

/// Runs the strategy selected by `cfg.strategy`.
pub fn decode(seq: &SegmentedSequence, cfg: &DecodeConfig, backend: &dyn LanguageModel) -> Result<DecodeOutput> {
    match cfg.strategy {
        Strategy::Greedy => decode_greedy(seq, cfg, backend),
        Strategy::Beam => decode_beam(seq, cfg, backend),
        Strategy::Nucleus => decode_nucleus(seq, cfg, backend),
        Strategy::Contrastive => decode_contrastive(seq, cfg, backend),
        Strategy::Fecs => decode_fecs(seq, cfg, backend),
    }
}

/// What one step of a single-hypothesis strategy decided.
pub(crate) struct StepChoice {
    pub candidates: Vec<(TokenId, f64)>,
    pub scores: Vec<ScoreBreakdown>,
    pub chosen: TokenId,
}

pub(crate) fn ends_line(backend: &dyn LanguageModel, token: TokenId) -> Result<bool> {
    Ok(backend.detokenize(&[token])?.contains('\n'))
}

/// Shared loop for strategies that extend one hypothesis token by token.
/// `step` receives the full context (prompt plus generated tokens) and the
/// number of tokens generated so far.
pub(crate) fn run_single<F>(
    seq: &SegmentedSequence,
    cfg: &DecodeConfig,
    backend: &dyn LanguageModel,
    mut step: F,
) -> Result<DecodeOutput>
where
    F: FnMut(&[TokenId], usize) -> Result<StepChoice>,
{
    let info = backend.info();
    let mut context = seq.tokens().to_vec();
    let mut generated = Vec::new();
    let mut trace = DecodeTrace::default();
    let mut stop = StopReason::MaxTokens;
    for t in 0..cfg.max_new_tokens {
        if context.len() + 1 > info.max_context {
            stop = StopReason::ContextOverflow;
            break;
        }
        let started = Instant::now();
        let choice = match step(&context, t) {
            Ok(c) => c,
            Err(e) if e.is_overflow() => {
                stop = StopReason::ContextOverflow;
                break;
            }
            Err(e) => return Err(e),
        };
        trace.steps.push(TraceStep {
            position: t,
            candidates: choice.candidates,
            scores: choice.scores,
            chosen: choice.chosen,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        });
        if cfg.stop_on_eos && choice.chosen == info.eos_id {
            stop = StopReason::Eos;
            break;
        }
        context.push(choice.chosen);
        generated.push(choice.chosen);
        if cfg.stop_on_newline && ends_line(backend, choice.chosen)? {
            stop = StopReason::Newline;
            break;
        }
    }
    Ok(DecodeOutput {
        tokens: generated,
        trace,
        stop,
    })
}

/// Argmax of the next-token distribution at every step, ties to the lower id.
pub fn decode_greedy(seq: &SegmentedSequence, cfg: &DecodeConfig, backend: &dyn LanguageModel) -> Result<DecodeOutput> {
    cfg.expect_strategy(Strategy::Greedy)?;
    run_single(seq, cfg, backend, |context, _| {
        let dist = backend.next_distribution(context, 1)?;
        let &(chosen, p) = dist
            .entries()
            .first()
            .ok_or_else(|| Error::Backend("empty next-token distribution".into()))?;
        Ok(StepChoice {
            candidates: vec![(chosen, p)],
            scores: Vec::new(),
            chosen,
        })
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::backend::{SyntheticBackend, SyntheticModelSpec};

    /// Order-1 synthetic model over `rows` (one row per previous token),
    /// one-hot embeddings, optional EOS.
    pub fn order1(rows: Vec<Vec<f64>>, eos: u32) -> SyntheticBackend {
        let v = rows.len();
        SyntheticModelSpec {
            name: "order1".into(),
            vocab_size: v,
            hidden_dim: v,
            eos_id: Some(eos),
            max_context: 64,
            context_order: 1,
            transition_table: rows
                .into_iter()
                .enumerate()
                .map(|(i, r)| (i.to_string(), r))
                .collect(),
            embedding_table: (0..v)
                .map(|i| (0..v).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            tokens: Vec::new(),
        }
        .build()
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::order1;
    use super::*;

    fn seq(tokens: Vec<TokenId>) -> SegmentedSequence {
        let n = tokens.len();
        SegmentedSequence::new(tokens, 0, n).unwrap()
    }

    #[test]
    fn greedy_follows_unique_path() {
        // 0 -> 1 -> 2 -> 3(eos)
        let b = order1(
            vec![
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0, 0.0],
            ],
            3,
        );
        let out = decode_greedy(&seq(vec![0]), &DecodeConfig::greedy(), &b).unwrap();
        assert_eq!(out.tokens, vec![1, 2]);
        assert_eq!(out.stop, StopReason::Eos);
        assert_eq!(out.trace.steps.len(), 3);
        assert_eq!(out.trace.steps[2].chosen, 3);
    }

    #[test]
    fn greedy_tie_goes_to_lowest_id() {
        let b = order1(vec![vec![0.25; 4]; 4], 3);
        let cfg = DecodeConfig {
            max_new_tokens: 3,
            ..DecodeConfig::greedy()
        };
        let out = decode_greedy(&seq(vec![2]), &cfg, &b).unwrap();
        assert_eq!(out.tokens, vec![0, 0, 0]);
        assert_eq!(out.stop, StopReason::MaxTokens);
    }

    #[test]
    fn context_overflow_truncates() {
        let b = order1(vec![vec![0.5, 0.5, 0.0, 0.0]; 4], 3);
        let cfg = DecodeConfig {
            max_new_tokens: 100,
            ..DecodeConfig::greedy()
        };
        let out = decode_greedy(&seq(vec![2; 60]), &cfg, &b).unwrap();
        assert_eq!(out.tokens.len(), 4);
        assert!(out.truncated());
    }

    #[test]
    fn validation_messages() {
        let cfg = DecodeConfig::fecs(4, 0.7, 0.5);
        let errs = cfg.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("alpha+beta exceeds 1")));
        let errs = DecodeConfig::fecs(4, 0.3, 0.0).validate().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("contrastive")));
        assert!(DecodeConfig::contrastive(4, 0.6).validate().is_ok());
        let mut bad = DecodeConfig::contrastive(0, 0.6);
        bad.weights.beta = 0.1;
        assert_eq!(bad.validate().unwrap_err().len(), 2);
        for (_, cfg) in DecodeConfig::standard_set() {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn wrong_strategy_rejected() {
        let b = order1(vec![vec![0.25; 4]; 4], 3);
        assert!(decode_greedy(&seq(vec![0]), &DecodeConfig::beam(2), &b).is_err());
    }

    #[test]
    fn config_serializes_flat() {
        let json = serde_json::to_value(DecodeConfig::fecs(4, 0.3, 0.3)).unwrap();
        assert_eq!(json["strategy"], "fecs");
        assert_eq!(json["alpha"], 0.3);
        assert_eq!(json["beta"], 0.3);
    }
}
