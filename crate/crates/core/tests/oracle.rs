//! Engine decoders against the reference decoder on generated fixtures.

mod common;

use fecs_core::context::{render_prompt, segment, TaskTemplate};
use fecs_core::decoders::{decode, decode_greedy};
use fecs_core::{DecodeConfig, LanguageModel, MixWeights, SegmentedSequence, Strategy, SyntheticModelSpec, Task};
use proptest::prelude::*;

use common::{oracle_decode, oracle_greedy, random_fixture};

fn config(strategy: Strategy, k: usize, alpha: f64, beta: f64, max_new: usize) -> DecodeConfig {
    DecodeConfig {
        strategy,
        k,
        weights: MixWeights { alpha, beta },
        max_new_tokens: max_new,
        stop_on_eos: true,
        stop_on_newline: false,
        ..DecodeConfig::greedy()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fecs_matches_reference(seed in 1_000u64..1_000_000) {
        let f = random_fixture(seed);
        let b = f.spec.build().unwrap();
        let seq = SegmentedSequence::new(f.tokens.clone(), f.s, f.c).unwrap();
        let out = decode(&seq, &config(Strategy::Fecs, f.k, f.alpha, f.beta, f.max_new), &b).unwrap();
        let (tokens, steps) = oracle_decode(&f.spec, &f.tokens, &f.tokens[f.s..f.c], f.k, f.alpha, f.beta, f.max_new);
        prop_assert_eq!(&out.tokens, &tokens);
        for (engine, reference) in out.trace.steps.iter().zip(&steps) {
            prop_assert_eq!(engine.scores.len(), reference.totals.len());
            for (s, &(id, total)) in engine.scores.iter().zip(&reference.totals) {
                prop_assert_eq!(s.token_id, id);
                prop_assert!((s.total - total).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn contrastive_and_greedy_match_reference(seed in 1_000u64..1_000_000) {
        let f = random_fixture(seed);
        let b = f.spec.build().unwrap();
        let seq = SegmentedSequence::new(f.tokens.clone(), f.s, f.c).unwrap();
        let cs = decode(&seq, &config(Strategy::Contrastive, f.k, f.alpha, 0.0, f.max_new), &b).unwrap();
        let (tokens, _) = oracle_decode(&f.spec, &f.tokens, &[], f.k, f.alpha, 0.0, f.max_new);
        prop_assert_eq!(cs.tokens, tokens);
        let greedy = decode_greedy(&seq, &config(Strategy::Greedy, 1, 0.0, 0.0, f.max_new), &b).unwrap();
        prop_assert_eq!(greedy.tokens, oracle_greedy(&f.spec, &f.tokens, f.max_new));
    }
}

/// The source set is exactly the rendered source content, so the reward is
/// computed against those tokens and nothing else.
#[test]
fn rendered_source_feeds_the_reward() {
    let spec = SyntheticModelSpec::from_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/tiny_spec.json")).unwrap();
    let b = spec.build().unwrap();
    let tpl = TaskTemplate::builtin(Task::Summarization);
    let source = "the cat sat on the mat";
    let (text, span) = render_prompt(&tpl, source, &[]).unwrap();
    let seq = segment(&text, span, &b).unwrap();
    assert_eq!(seq.source(), b.tokenize(source).unwrap().as_slice());

    let out = decode(&seq, &config(Strategy::Fecs, 4, 0.3, 0.3, 16), &b).unwrap();
    let (tokens, _) = oracle_decode(&spec, seq.tokens(), seq.source(), 4, 0.3, 0.3, 16);
    assert_eq!(out.tokens, tokens);
}
