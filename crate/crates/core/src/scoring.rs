//! Candidate scoring for contrastive search and FECS.
//!
//! Each top-k candidate `v` is scored as
//!
//! ```text
//! (1 - alpha - beta) * p(v | context)
//!     - alpha * max_{generated x} cos(h_v, h_x)
//!     + beta  * max_{source x}    cos(h_v, h_x)
//! ```
//!
//! With `beta == 0` this is plain contrastive search; with `alpha == beta ==
//! 0` it is greedy selection among the candidates.

use serde::{Deserialize, Serialize};

use crate::backend::{sort_by_probability, HiddenVector, NextDistribution, TokenId};
use crate::{Error, Result};

/// Mixing weights for the degeneration penalty (`alpha`) and the
/// faithfulness reward (`beta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl MixWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { alpha, beta } = *self;
        let reason = if !alpha.is_finite() || !beta.is_finite() {
            Some("weights must be finite")
        } else if alpha < 0.0 {
            Some("alpha must be non-negative")
        } else if beta < 0.0 {
            Some("beta must be non-negative")
        } else if alpha + beta > 1.0 {
            Some("alpha+beta exceeds 1")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidWeights { alpha, beta, reason }),
            None => Ok(()),
        }
    }

    /// Weight on the model confidence term.
    pub fn confidence_weight(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub token_id: TokenId,
    pub probability: f64,
    pub hidden: HiddenVector,
}

/// The top-k candidates of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    items: Vec<Candidate>,
    k: usize,
}

impl CandidateSet {
    /// `items` must be non-empty, unique, non-increasing in probability and
    /// contain at most `k` entries.
    pub fn new(items: Vec<Candidate>, k: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyInput("candidate set"));
        }
        if items.len() > k {
            return Err(Error::InvalidArgument(format!(
                "{} candidates exceed k = {k}",
                items.len()
            )));
        }
        if items.windows(2).any(|w| w[0].probability < w[1].probability) {
            return Err(Error::InvalidArgument("candidate probabilities must be non-increasing".into()));
        }
        let mut ids: Vec<_> = items.iter().map(|c| c.token_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("candidate ids must be unique".into()));
        }
        if items.iter().any(|c| !(c.probability > 0.0 && c.probability <= 1.0)) {
            return Err(Error::InvalidArgument("candidate probability outside (0, 1]".into()));
        }
        Ok(Self { items, k })
    }

    pub fn items(&self) -> &[Candidate] {
        &self.items
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.items.iter().map(|c| c.token_id)
    }
}

/// Per-candidate decomposition of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub token_id: TokenId,
    pub confidence: f64,
    pub penalty: f64,
    pub reward: f64,
    pub total: f64,
}

/// Cosine of the angle between `u` and `v`; 0 when either has zero norm.
pub fn cosine_similarity(u: &HiddenVector, v: &HiddenVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let denom = u.norm() * v.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(u.values(), v.values()) / denom).clamp(-1.0, 1.0))
}

/// Dot product over eight independent accumulators so the additions can
/// overlap.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let lo = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let hi = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    lo + hi + tail
}

fn max_similarity(h: &HiddenVector, others: &[HiddenVector]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for x in others {
        best = best.max(cosine_similarity(h, x)?);
    }
    Ok(best)
}

/// Vectors stored as contiguous unit-norm rows, for repeated max-cosine
/// queries. Zero vectors are kept as zero rows, so their similarity is 0.
#[derive(Debug, Clone, Default)]
pub struct UnitRows {
    dim: Option<usize>,
    data: Vec<f64>,
}

impl UnitRows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_vectors(vectors: &[HiddenVector]) -> Result<Self> {
        let mut rows = Self::new();
        for v in vectors {
            rows.push(v)?;
        }
        Ok(rows)
    }

    pub fn push(&mut self, v: &HiddenVector) -> Result<()> {
        let dim = *self.dim.get_or_insert(v.dim());
        if dim != v.dim() {
            return Err(Error::DimensionMismatch { left: dim, right: v.dim() });
        }
        let scale = if v.norm() == 0.0 { 0.0 } else { v.norm().recip() };
        self.data.extend(v.values().iter().map(|x| x * scale));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dim.map_or(0, |d| self.data.len().checked_div(d).unwrap_or(0))
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Largest cosine between `h` and any row, or `None` when empty.
    pub fn max_cosine(&self, h: &HiddenVector) -> Result<Option<f64>> {
        let Some(dim) = self.dim.filter(|_| !self.data.is_empty()) else {
            return Ok(None);
        };
        if dim != h.dim() {
            return Err(Error::DimensionMismatch { left: h.dim(), right: dim });
        }
        if h.norm() == 0.0 {
            return Ok(Some(0.0));
        }
        let scale = h.norm().recip();
        let unit: Vec<f64> = h.values().iter().map(|x| x * scale).collect();
        let best = self
            .data
            .chunks_exact(dim)
            .map(|row| dot(row, &unit))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Some(best.clamp(-1.0, 1.0)))
    }
}

/// Maximum similarity between a candidate and the tokens generated so far;
/// 0 before anything has been generated.
pub fn degeneration_penalty(h_v: &HiddenVector, generated: &[HiddenVector]) -> Result<f64> {
    if generated.is_empty() {
        return Ok(0.0);
    }
    max_similarity(h_v, generated)
}

/// Maximum similarity between a candidate and the source tokens.
pub fn faithfulness_reward(h_v: &HiddenVector, source: &[HiddenVector]) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::EmptyInput("source span"));
    }
    max_similarity(h_v, source)
}

pub fn fecs_score(confidence: f64, penalty: f64, reward: f64, w: MixWeights) -> Result<f64> {
    w.validate()?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::InvalidArgument(format!("confidence {confidence} outside [0, 1]")));
    }
    if !(-1.0..=1.0).contains(&penalty) || !(-1.0..=1.0).contains(&reward) {
        return Err(Error::InvalidArgument("penalty and reward must lie in [-1, 1]".into()));
    }
    Ok(w.confidence_weight() * confidence - w.alpha * penalty + w.beta * reward)
}

/// The `k` most probable token ids, ties broken by lower id. Returns fewer
/// than `k` only when the distribution covers the whole probability mass.
pub fn select_candidates(dist: &NextDistribution, k: usize) -> Result<Vec<TokenId>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if dist.len() < k && dist.truncation_mass() < 1.0 - 1e-9 {
        return Err(Error::InsufficientCandidates {
            requested: k,
            available: dist.len(),
            mass: dist.truncation_mass(),
        });
    }
    let mut entries = dist.entries().to_vec();
    sort_by_probability(&mut entries);
    Ok(entries.into_iter().take(k).map(|e| e.0).collect())
}

/// Totals closer than this are treated as tied, so that rounding noise in
/// mathematically equal scores cannot override the tie-break.
pub const SCORE_TIE_EPSILON: f64 = 1e-12;

/// Scores every candidate and returns the winner with all breakdowns.
///
/// The reward is only evaluated when `w.beta > 0`; otherwise it is recorded
/// as 0. Totals within [`SCORE_TIE_EPSILON`] go to higher confidence, then
/// lower token id; candidates are scanned in set order.
pub fn rank_candidates(
    cands: &CandidateSet,
    generated: &[HiddenVector],
    source: &[HiddenVector],
    w: MixWeights,
) -> Result<(TokenId, Vec<ScoreBreakdown>)> {
    rank_candidates_in(cands, &UnitRows::from_vectors(generated)?, &UnitRows::from_vectors(source)?, w)
}

/// [`rank_candidates`] over pre-normalized rows, for decoders that extend
/// the generated set one token at a time.
pub fn rank_candidates_in(
    cands: &CandidateSet,
    generated: &UnitRows,
    source: &UnitRows,
    w: MixWeights,
) -> Result<(TokenId, Vec<ScoreBreakdown>)> {
    w.validate()?;
    let use_reward = w.beta > 0.0;
    if use_reward && source.is_empty() {
        return Err(Error::EmptyInput("source span"));
    }
    let breakdowns = cands
        .items()
        .iter()
        .map(|c| {
            let penalty = generated.max_cosine(&c.hidden)?.unwrap_or(0.0);
            let reward = if use_reward {
                source.max_cosine(&c.hidden)?.unwrap_or(0.0)
            } else {
                0.0
            };
            let total = fecs_score(c.probability, penalty, reward, w)?;
            Ok(ScoreBreakdown {
                token_id: c.token_id,
                confidence: c.probability,
                penalty,
                reward,
                total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = &breakdowns[0];
    for b in &breakdowns[1..] {
        let wins = if (b.total - best.total).abs() <= SCORE_TIE_EPSILON {
            b.confidence > best.confidence || (b.confidence == best.confidence && b.token_id < best.token_id)
        } else {
            b.total > best.total
        };
        if wins {
            best = b;
        }
    }
    Ok((best.token_id, breakdowns))
}
