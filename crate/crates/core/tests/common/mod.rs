//! Shared fixtures and an independent reference decoder.
//!
//! The reference decoder reads the synthetic model's tables directly and
//! recomputes everything from scratch at every step: the next-token row,
//! the top-k candidates, every cosine against every generated and source
//! token, and the weighted objective. It shares no code with the engine's
//! decoding or scoring paths.

#![allow(dead_code)]

use fecs_core::SyntheticModelSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Totals this close count as tied; ties go to higher probability, then
/// lower id.
const TIE: f64 = 1e-12;

pub struct Fixture {
    pub seed: u64,
    pub spec: SyntheticModelSpec,
    pub tokens: Vec<u32>,
    pub s: usize,
    pub c: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub max_new: usize,
}

/// Random model and prompt within vocab ≤ 16, dim ≤ 8, prompt and
/// generation lengths ≤ 32. Some fixtures get duplicated or zero
/// embeddings and zeroed probabilities to exercise ties and edge cases.
pub fn random_fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let vocab = rng.random_range(2..=16usize);
    let dim = rng.random_range(1..=8usize);
    let order = if vocab > 8 { rng.random_range(0..=1) } else { rng.random_range(0..=2) };
    let params = fecs_core::backend::RandomSpecParams {
        vocab_size: vocab,
        hidden_dim: dim,
        context_order: order,
        sharpness: rng.random_range(0.5..6.0),
        max_context: 4096,
    };
    let mut spec = SyntheticModelSpec::random(&params, seed).unwrap();

    if rng.random_bool(0.3) {
        let a = rng.random_range(0..vocab);
        let b = rng.random_range(0..vocab);
        spec.embedding_table[a] = spec.embedding_table[b].clone();
    }
    if rng.random_bool(0.1) {
        let a = rng.random_range(0..vocab);
        spec.embedding_table[a] = vec![0.0; dim];
    }
    if rng.random_bool(0.3) {
        for row in spec.transition_table.values_mut() {
            let z = rng.random_range(0..vocab);
            if row.iter().filter(|p| **p > 0.0).count() > 1 {
                row[z] = 0.0;
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= total);
            }
        }
    }

    let len = rng.random_range(1..=32usize);
    let tokens: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
    let c = rng.random_range(1..=len);
    let s = rng.random_range(0..c);
    let k = rng.random_range(1..=vocab.min(8));
    let alpha = rng.random_range(0..=6) as f64 / 10.0;
    let beta = rng.random_range(1..=(10 - (alpha * 10.0).round() as i32)) as f64 / 10.0;
    Fixture {
        seed,
        spec,
        tokens,
        s,
        c,
        k,
        alpha,
        beta,
        max_new: rng.random_range(1..=32usize),
    }
}

/// One reference step: candidate totals in candidate order, and the winner.
pub struct OracleStep {
    pub totals: Vec<(u32, f64)>,
    pub chosen: u32,
}

fn row(spec: &SyntheticModelSpec, context: &[u32]) -> Vec<f64> {
    let tail = &context[context.len().saturating_sub(spec.context_order)..];
    let key: Vec<String> = tail.iter().map(u32::to_string).collect();
    spec.transition_table
        .get(&key.join(","))
        .cloned()
        .unwrap_or_else(|| vec![1.0 / spec.vocab_size as f64; spec.vocab_size])
}

fn cos(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu * nv == 0.0 {
        0.0
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    }
}

fn eos(spec: &SyntheticModelSpec) -> u32 {
    spec.eos_id.unwrap_or(spec.vocab_size as u32 - 1)
}

/// Reference decoder for the weighted objective with `source = tokens[s..c]`.
/// Generation stops at EOS (not emitted) or after `max_new` tokens.
pub fn oracle_decode(
    spec: &SyntheticModelSpec,
    tokens: &[u32],
    source: &[u32],
    k: usize,
    alpha: f64,
    beta: f64,
    max_new: usize,
) -> (Vec<u32>, Vec<OracleStep>) {
    let emb = |t: u32| spec.embedding_table[t as usize].as_slice();
    let mut context = tokens.to_vec();
    let mut out = Vec::new();
    let mut steps = Vec::new();
    for _ in 0..max_new {
        let probs = row(spec, &context);
        let mut ranked: Vec<(u32, f64)> = probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| (i as u32, *p))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(k);

        let mut totals = Vec::new();
        let mut best: Option<(u32, f64, f64)> = None;
        for &(v, p) in &ranked {
            let penalty = out
                .iter()
                .map(|&g| cos(emb(v), emb(g)))
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
                .unwrap_or(0.0);
            let reward = source
                .iter()
                .map(|&x| cos(emb(v), emb(x)))
                .fold(f64::NEG_INFINITY, f64::max);
            let reward = if beta > 0.0 { reward } else { 0.0 };
            let total = (1.0 - alpha - beta) * p - alpha * penalty + beta * reward;
            totals.push((v, total));
            let better = match best {
                None => true,
                Some((bv, bt, bp)) => {
                    if (total - bt).abs() <= TIE {
                        p > bp || (p == bp && v < bv)
                    } else {
                        total > bt
                    }
                }
            };
            if better {
                best = Some((v, total, p));
            }
        }
        let chosen = best.expect("at least one candidate").0;
        steps.push(OracleStep { totals, chosen });
        if chosen == eos(spec) {
            break;
        }
        context.push(chosen);
        out.push(chosen);
    }
    (out, steps)
}

/// Reference greedy decoder: argmax of the row, ties to the lower id.
pub fn oracle_greedy(spec: &SyntheticModelSpec, tokens: &[u32], max_new: usize) -> Vec<u32> {
    let mut context = tokens.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let probs = row(spec, &context);
        let mut best = 0usize;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        if best as u32 == eos(spec) {
            break;
        }
        context.push(best as u32);
        out.push(best as u32);
    }
    out
}
