//! Workloads shared by the criterion benches.

use fecs_core::scoring::{Candidate, CandidateSet, UnitRows};
use fecs_core::{HiddenVector, LanguageModel, SegmentedSequence, SyntheticBackend, SyntheticModelSpec};
use fecs_core::backend::RandomSpecParams;

/// A random synthetic model and a prompt whose middle `source_len` tokens
/// form the source span.
pub struct Workload {
    pub backend: SyntheticBackend,
    pub seq: SegmentedSequence,
}

pub fn workload(vocab_size: usize, hidden_dim: usize, source_len: usize, seed: u64) -> Workload {
    let params = RandomSpecParams {
        vocab_size,
        hidden_dim,
        ..Default::default()
    };
    let backend = SyntheticModelSpec::random(&params, seed)
        .and_then(|s| s.build())
        .expect("valid random spec");
    let n = source_len + 16;
    // deterministic walk over the vocabulary, skipping EOS
    let eos = backend.info().eos_id;
    let tokens: Vec<u32> = (0..n as u64)
        .map(|i| ((i * 7919 + seed * 31) % vocab_size as u64) as u32)
        .map(|t| if t == eos { (t + 1) % vocab_size as u32 } else { t })
        .collect();
    let seq = SegmentedSequence::new(tokens, 8, 8 + source_len).expect("valid segmentation");
    Workload { backend, seq }
}

impl Workload {
    /// Top-`k` candidates for the next token after the prompt.
    pub fn candidates(&self, k: usize) -> CandidateSet {
        let tokens = self.seq.tokens();
        let dist = self.backend.next_distribution(tokens, k).expect("distribution");
        let ids: Vec<u32> = dist.entries().iter().map(|e| e.0).collect();
        let hiddens = self.backend.candidate_hiddens(tokens, &ids).expect("hiddens");
        let items = dist
            .entries()
            .iter()
            .zip(hiddens)
            .map(|(&(token_id, probability), hidden)| Candidate {
                token_id,
                probability,
                hidden,
            })
            .collect();
        CandidateSet::new(items, k).expect("candidate set")
    }

    pub fn source_hiddens(&self) -> Vec<HiddenVector> {
        let all = self.backend.context_hiddens(self.seq.tokens()).expect("hiddens");
        all[self.seq.source_range()].to_vec()
    }

    /// Hidden states standing in for `n` already generated tokens.
    pub fn generated_hiddens(&self, n: usize) -> Vec<HiddenVector> {
        let all = self.backend.context_hiddens(self.seq.tokens()).expect("hiddens");
        all.into_iter().cycle().take(n).collect()
    }
}

pub fn unit_rows(vectors: &[HiddenVector]) -> UnitRows {
    UnitRows::from_vectors(vectors).expect("consistent dimensions")
}
