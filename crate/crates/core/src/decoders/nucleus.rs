//! Nucleus (top-p) sampling.
//!
//! Draws use ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(cfg.seed)`; each step takes one uniform `f64` in `[0, 1)`
//! (53 high bits of a `u64`), scales it by the nucleus mass and walks the
//! cumulative distribution in canonical order (probability descending, id
//! ascending). The same seed therefore reproduces the same tokens on any
//! platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::backend::{LanguageModel, NextDistribution, TokenId};
use crate::context::SegmentedSequence;
use crate::{Error, Result};

use super::{run_single, DecodeConfig, DecodeOutput, StepChoice, Strategy};

const MASS_SLACK: f64 = 1e-12;

/// Smallest prefix of `dist` whose mass reaches `p`, or `None` if the
/// truncated distribution does not hold enough mass.
pub fn nucleus_set(dist: &NextDistribution, p: f64) -> Option<Vec<(TokenId, f64)>> {
    let mut mass = 0.0;
    for (i, &(_, prob)) in dist.entries().iter().enumerate() {
        mass += prob;
        if mass >= p - MASS_SLACK {
            return Some(dist.entries()[..=i].to_vec());
        }
    }
    None
}

fn sample(nucleus: &[(TokenId, f64)], u: f64) -> TokenId {
    let mass: f64 = nucleus.iter().map(|e| e.1).sum();
    let target = u * mass;
    let mut cumulative = 0.0;
    for &(id, p) in nucleus {
        cumulative += p;
        if target < cumulative {
            return id;
        }
    }
    nucleus[nucleus.len() - 1].0
}

pub fn decode_nucleus(seq: &SegmentedSequence, cfg: &DecodeConfig, backend: &dyn LanguageModel) -> Result<DecodeOutput> {
    cfg.expect_strategy(Strategy::Nucleus)?;
    let p = cfg.nucleus_p;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("nucleus_p {p} outside (0, 1]")));
    }
    let vocab = backend.info().vocab_size;
    let initial_top_m = cfg.top_m.clamp(1, vocab);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    run_single(seq, cfg, backend, |context, _| {
        let mut top_m = initial_top_m;
        let nucleus = loop {
            let dist = backend.next_distribution(context, top_m)?;
            if let Some(n) = nucleus_set(&dist, p) {
                break n;
            }
            // a full-vocabulary request always covers the whole mass
            if top_m == vocab || dist.len() < top_m {
                if dist.is_empty() {
                    return Err(Error::Backend("empty next-token distribution".into()));
                }
                if dist.truncation_mass() < p - 1e-6 {
                    return Err(Error::InsufficientCandidates {
                        requested: top_m,
                        available: dist.len(),
                        mass: dist.truncation_mass(),
                    });
                }
                break dist.entries().to_vec();
            }
            top_m = (top_m * 2).min(vocab);
        };
        let chosen = sample(&nucleus, rng.random::<f64>());
        Ok(StepChoice {
            candidates: nucleus,
            scores: Vec::new(),
            chosen,
        })
    })
}
