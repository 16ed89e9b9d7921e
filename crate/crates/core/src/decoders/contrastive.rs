use crate::backend::{HiddenVector, LanguageModel};
use crate::context::SegmentedSequence;
use crate::scoring::{rank_candidates_in, select_candidates, Candidate, CandidateSet, MixWeights, UnitRows};
use crate::{Error, Result};

use super::{run_single, DecodeConfig, DecodeOutput, StepChoice, Strategy};

/// Fidelity-enriched contrastive search.
///
/// Source hiddens are computed once from the prompt; the hidden of each
/// emitted token is the one returned by `candidate_hiddens` when it was
/// selected, which is exact for causal models.
pub fn decode_fecs(seq: &SegmentedSequence, cfg: &DecodeConfig, backend: &dyn LanguageModel) -> Result<DecodeOutput> {
    cfg.expect_strategy(Strategy::Fecs)?;
    cfg.weights.validate()?;
    if seq.source().is_empty() {
        return Err(Error::EmptyInput("source span"));
    }
    let source_end = seq.source_range().end;
    let hiddens = backend.context_hiddens(&seq.tokens()[..source_end])?;
    let source = hiddens[seq.source_range()].to_vec();
    contrastive_loop(seq, cfg, backend, cfg.weights, &source)
}

/// Contrastive search; `cfg.weights.beta` is ignored.
pub fn decode_contrastive(
    seq: &SegmentedSequence,
    cfg: &DecodeConfig,
    backend: &dyn LanguageModel,
) -> Result<DecodeOutput> {
    cfg.expect_strategy(Strategy::Contrastive)?;
    let weights = MixWeights::new(cfg.weights.alpha, 0.0)?;
    contrastive_loop(seq, cfg, backend, weights, &[])
}

fn contrastive_loop(
    seq: &SegmentedSequence,
    cfg: &DecodeConfig,
    backend: &dyn LanguageModel,
    weights: MixWeights,
    source: &[HiddenVector],
) -> Result<DecodeOutput> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let top_m = cfg.k.min(backend.info().vocab_size);
    let source = UnitRows::from_vectors(source)?;
    let mut generated = UnitRows::new();
    run_single(seq, cfg, backend, |context, _| {
        let dist = backend.next_distribution(context, top_m)?;
        let ids = select_candidates(&dist, cfg.k)?;
        let hiddens = backend.candidate_hiddens(context, &ids)?;
        let items = ids
            .iter()
            .zip(hiddens)
            .map(|(&token_id, hidden)| Candidate {
                token_id,
                probability: dist.probability(token_id).unwrap_or_default(),
                hidden,
            })
            .collect();
        let cands = CandidateSet::new(items, cfg.k)?;
        let (chosen, scores) = rank_candidates_in(&cands, &generated, &source, weights)?;
        let winner = cands
            .items()
            .iter()
            .find(|c| c.token_id == chosen)
            .expect("chosen token is a candidate");
        generated.push(&winner.hidden)?;
        Ok(StepChoice {
            candidates: cands.items().iter().map(|c| (c.token_id, c.probability)).collect(),
            scores,
            chosen,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::order1;
    use super::super::{decode_greedy, StopReason};
    use super::*;
    use crate::backend::SyntheticModelSpec;

    /// Global row [0.4, 0.1, 0.35, 0.15], one-hot embeddings, source = token 2.
    fn worked_example() -> (crate::SyntheticBackend, SegmentedSequence) {
        let spec = SyntheticModelSpec {
            name: "worked".into(),
            vocab_size: 4,
            hidden_dim: 4,
            eos_id: Some(3),
            max_context: 16,
            context_order: 0,
            transition_table: [(String::new(), vec![0.4, 0.1, 0.35, 0.15])].into_iter().collect(),
            embedding_table: (0..4)
                .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            tokens: Vec::new(),
        };
        // prompt [1], source [2]
        let seq = SegmentedSequence::new(vec![1, 2], 1, 2).unwrap();
        (spec.build().unwrap(), seq)
    }

    #[test]
    fn fecs_single_step_picks_source_token() {
        let (b, seq) = worked_example();
        let cfg = DecodeConfig {
            max_new_tokens: 1,
            ..DecodeConfig::fecs(2, 0.3, 0.3)
        };
        let out = decode_fecs(&seq, &cfg, &b).unwrap();
        assert_eq!(out.tokens, vec![2]);
        let step = &out.trace.steps[0];
        assert_eq!(step.candidates, vec![(0, 0.4), (2, 0.35)]);
        assert!((step.scores[0].total - 0.16).abs() < 1e-12);
        assert!((step.scores[1].total - 0.44).abs() < 1e-12);
    }

    #[test]
    fn contrastive_single_step_picks_confident_token() {
        let (b, seq) = worked_example();
        let cfg = DecodeConfig {
            max_new_tokens: 1,
            ..DecodeConfig::contrastive(2, 0.6)
        };
        let out = decode_contrastive(&seq, &cfg, &b).unwrap();
        assert_eq!(out.tokens, vec![0]);
        assert!((out.trace.steps[0].scores[1].total - 0.14).abs() < 1e-12);
    }

    #[test]
    fn penalty_steers_away_from_repeats() {
        // after emitting 0 the penalty on 0 is 1.0
        let (b, seq) = worked_example();
        let cfg = DecodeConfig {
            max_new_tokens: 2,
            stop_on_eos: false,
            ..DecodeConfig::contrastive(2, 0.6)
        };
        let out = decode_contrastive(&seq, &cfg, &b).unwrap();
        assert_eq!(out.tokens, vec![0, 2]);
        assert_eq!(out.stop, StopReason::MaxTokens);
    }

    #[test]
    fn fecs_requires_source() {
        let (b, _) = worked_example();
        let seq = SegmentedSequence::new(vec![1, 2], 2, 2).unwrap();
        assert!(matches!(
            decode_fecs(&seq, &DecodeConfig::fecs(2, 0.3, 0.3), &b),
            Err(Error::EmptyInput(_))
        ));
        let (b, seq) = worked_example();
        assert!(decode_fecs(&seq, &DecodeConfig::fecs(2, 0.7, 0.5), &b).is_err());
    }

    #[test]
    fn standard_operating_point_completes() {
        let spec = SyntheticModelSpec::random(&Default::default(), 11).unwrap();
        let b = spec.build().unwrap();
        let seq = SegmentedSequence::new((0..12).collect(), 3, 9).unwrap();
        let cfg = DecodeConfig {
            max_new_tokens: 20,
            ..DecodeConfig::fecs(4, 0.3, 0.3)
        };
        let out = decode_fecs(&seq, &cfg, &b).unwrap();
        assert!(!out.truncated());
        for step in &out.trace.steps {
            assert_eq!(step.candidates.len(), 4);
            assert!(step.candidates.iter().any(|c| c.0 == step.chosen));
        }
    }

    #[test]
    fn alpha_zero_is_greedy() {
        let b = order1(
            vec![
                vec![0.1, 0.5, 0.4, 0.0],
                vec![0.3, 0.3, 0.2, 0.2],
                vec![0.05, 0.9, 0.05, 0.0],
                vec![0.25; 4],
            ],
            3,
        );
        let seq = SegmentedSequence::new(vec![0, 2], 1, 2).unwrap();
        let cs = DecodeConfig {
            max_new_tokens: 10,
            ..DecodeConfig::contrastive(3, 0.0)
        };
        let greedy = DecodeConfig {
            max_new_tokens: 10,
            ..DecodeConfig::greedy()
        };
        assert_eq!(
            decode_contrastive(&seq, &cs, &b).unwrap().tokens,
            decode_greedy(&seq, &greedy, &b).unwrap().tokens
        );
    }
}
