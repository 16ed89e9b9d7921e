//! Beam search over summed log-probabilities, without length normalization.

use std::time::Instant;

use crate::backend::{LanguageModel, TokenId};
use crate::context::SegmentedSequence;
use crate::{Error, Result};

use super::{ends_line, DecodeConfig, DecodeOutput, DecodeTrace, StopReason, Strategy, TraceStep};

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    log_prob: f64,
    steps: Vec<TraceStep>,
}

struct Expansion {
    parent: usize,
    token: TokenId,
    log_prob: f64,
}

/// Keeps `beam_width` live hypotheses. A hypothesis finishes when it emits
/// EOS (not included in its tokens) or a newline token (included), subject
/// to the config's stop flags; only expansions ranked within the top
/// `beam_width` may finish. Search ends once no live hypothesis can beat the
/// best finished one. The best finished hypothesis is returned, or the best
/// live one if none finished.
pub fn decode_beam(seq: &SegmentedSequence, cfg: &DecodeConfig, backend: &dyn LanguageModel) -> Result<DecodeOutput> {
    cfg.expect_strategy(Strategy::Beam)?;
    let width = cfg.beam_width;
    if width == 0 {
        return Err(Error::InvalidArgument("beam_width must be positive".into()));
    }
    let info = backend.info();
    let top_m = (2 * width).min(info.vocab_size);
    let prompt = seq.tokens();

    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        steps: Vec::new(),
    }];
    let mut finished: Vec<(Hypothesis, StopReason)> = Vec::new();
    let mut overflow = false;

    for t in 0..cfg.max_new_tokens {
        if prompt.len() + t + 1 > info.max_context {
            overflow = true;
            break;
        }
        let started = Instant::now();
        let mut expansions = Vec::new();
        let mut offered = Vec::with_capacity(beams.len());
        for (parent, hyp) in beams.iter().enumerate() {
            let mut context = prompt.to_vec();
            context.extend_from_slice(&hyp.tokens);
            let dist = match backend.next_distribution(&context, top_m) {
                Ok(d) => d,
                Err(e) if e.is_overflow() => {
                    overflow = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            for &(token, p) in dist.entries().iter().take(top_m) {
                expansions.push(Expansion {
                    parent,
                    token,
                    log_prob: hyp.log_prob + p.ln(),
                });
            }
            offered.push(dist.entries().iter().take(width).copied().collect::<Vec<_>>());
        }
        if overflow {
            break;
        }
        expansions.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        let elapsed = started.elapsed().as_secs_f64();

        let mut next = Vec::with_capacity(width);
        for (rank, exp) in expansions.iter().enumerate() {
            if next.len() == width {
                break;
            }
            let parent = &beams[exp.parent];
            let mut candidates = offered[exp.parent].clone();
            if !candidates.iter().any(|c| c.0 == exp.token) {
                candidates.push((exp.token, (exp.log_prob - parent.log_prob).exp()));
            }
            let step = TraceStep {
                position: t,
                candidates,
                scores: Vec::new(),
                chosen: exp.token,
                elapsed_seconds: elapsed,
            };
            let mut child = Hypothesis {
                tokens: parent.tokens.clone(),
                log_prob: exp.log_prob,
                steps: parent.steps.clone(),
            };
            child.steps.push(step);
            if cfg.stop_on_eos && exp.token == info.eos_id {
                if rank < width {
                    finished.push((child, StopReason::Eos));
                }
                continue;
            }
            child.tokens.push(exp.token);
            if cfg.stop_on_newline && ends_line(backend, exp.token)? {
                if rank < width {
                    finished.push((child, StopReason::Newline));
                }
                continue;
            }
            next.push(child);
        }
        beams = next;

        let best_finished = finished
            .iter()
            .map(|(h, _)| h.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_live = beams.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if beams.is_empty() || best_finished >= best_live {
            break;
        }
    }

    // first-added wins among equal scores
    let mut best: Option<(Hypothesis, StopReason)> = None;
    for (hyp, reason) in finished {
        if best.as_ref().is_none_or(|(b, _)| hyp.log_prob > b.log_prob) {
            best = Some((hyp, reason));
        }
    }
    let (hyp, stop) = match best {
        Some(b) => b,
        None => {
            let reason = if overflow {
                StopReason::ContextOverflow
            } else {
                StopReason::MaxTokens
            };
            let hyp = beams
                .into_iter()
                .reduce(|a, b| if b.log_prob > a.log_prob { b } else { a })
                .ok_or_else(|| Error::Backend("beam search produced no hypotheses".into()))?;
            (hyp, reason)
        }
    };
    Ok(DecodeOutput {
        tokens: hyp.tokens,
        trace: DecodeTrace { steps: hyp.steps },
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::order1;
    use super::super::decode_greedy;
    use super::*;

    fn cfg(width: usize) -> DecodeConfig {
        DecodeConfig {
            max_new_tokens: 2,
            stop_on_eos: false,
            ..DecodeConfig::beam(width)
        }
    }

    /// Greedy takes 1 (0.5) then 0 (0.34): 0.17. Taking 2 (0.4) then 1 (0.9)
    /// gives 0.36.
    fn trap() -> crate::SyntheticBackend {
        order1(
            vec![
                vec![0.1, 0.5, 0.4],
                vec![0.34, 0.33, 0.33],
                vec![0.05, 0.9, 0.05],
            ],
            0,
        )
    }

    fn seq() -> SegmentedSequence {
        SegmentedSequence::new(vec![0], 0, 1).unwrap()
    }

    #[test]
    fn beam_escapes_greedy_trap() {
        let b = trap();
        // brute force over all 9 two-token paths
        let rows = [[0.1, 0.5, 0.4], [0.34, 0.33, 0.33], [0.05, 0.9, 0.05]];
        let mut best = (f64::NEG_INFINITY, vec![]);
        for a in 0..3 {
            for c in 0..3 {
                let lp = f64::ln(rows[0][a]) + f64::ln(rows[a][c]);
                if lp > best.0 {
                    best = (lp, vec![a as u32, c as u32]);
                }
            }
        }
        assert_eq!(best.1, vec![2, 1]);
        let out = decode_beam(&seq(), &cfg(2), &b).unwrap();
        assert_eq!(out.tokens, best.1);
        assert_eq!(out.stop, StopReason::MaxTokens);
        let greedy = DecodeConfig {
            max_new_tokens: 2,
            stop_on_eos: false,
            ..DecodeConfig::greedy()
        };
        assert_eq!(decode_greedy(&seq(), &greedy, &b).unwrap().tokens, vec![1, 0]);
        assert_eq!(decode_beam(&seq(), &cfg(1), &b).unwrap().tokens, vec![1, 0]);
    }

    #[test]
    fn width_one_matches_greedy_with_eos() {
        let b = order1(
            vec![
                vec![0.1, 0.5, 0.4, 0.0],
                vec![0.2, 0.1, 0.2, 0.5],
                vec![0.05, 0.9, 0.05, 0.0],
                vec![0.25; 4],
            ],
            3,
        );
        let beam = DecodeConfig {
            max_new_tokens: 10,
            ..DecodeConfig::beam(1)
        };
        let greedy = DecodeConfig {
            max_new_tokens: 10,
            ..DecodeConfig::greedy()
        };
        let a = decode_beam(&seq(), &beam, &b).unwrap();
        let g = decode_greedy(&seq(), &greedy, &b).unwrap();
        assert_eq!(a.tokens, g.tokens);
        assert_eq!(a.stop, StopReason::Eos);
        assert_eq!(a.trace.steps.len(), g.trace.steps.len());
    }

    #[test]
    fn trace_chosen_in_candidates() {
        let out = decode_beam(&seq(), &cfg(2), &trap()).unwrap();
        assert_eq!(out.trace.steps.len(), 2);
        for (i, step) in out.trace.steps.iter().enumerate() {
            assert_eq!(step.position, i);
            assert!(step.candidates.iter().any(|c| c.0 == step.chosen));
        }
    }
}
