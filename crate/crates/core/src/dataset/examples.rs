use serde::Serialize;

use super::{Corpus, Sequence, Vocabulary};

/// A prefix cut of one sequence: history is `sets[..cut]`, the target is
/// `sets[cut]` restricted to the target vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Example {
    pub seq: usize,
    pub cut: usize,
    /// Sorted positions in the target vector.
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExampleSet {
    pub examples: Vec<Example>,
    pub skipped_empty_target: usize,
    pub skipped_zero_gap: usize,
}

pub fn restrict_to_targets(items: &[usize], vocab: &Vocabulary) -> Vec<usize> {
    let mut t: Vec<usize> = items.iter().filter_map(|&i| vocab.target_index(i)).collect();
    t.sort_unstable();
    t
}

fn example_for(seq: &Sequence, si: usize, cut: usize, vocab: &Vocabulary, out: &mut ExampleSet) {
    let next = &seq.sets[cut];
    if next.timestamp <= seq.sets[cut - 1].timestamp {
        out.skipped_zero_gap += 1;
        return;
    }
    let targets = restrict_to_targets(&next.items, vocab);
    if targets.is_empty() {
        out.skipped_empty_target += 1;
        return;
    }
    out.examples.push(Example {
        seq: si,
        cut,
        targets,
    });
}

/// Every prefix example of the corpus, in (sequence, cut) order.
pub fn enumerate_examples(corpus: &Corpus) -> ExampleSet {
    let mut out = ExampleSet::default();
    for (si, seq) in corpus.sequences.iter().enumerate() {
        for cut in 1..seq.len() {
            example_for(seq, si, cut, &corpus.vocab, &mut out);
        }
    }
    out
}

/// The example at a specific cut, if it is valid.
pub fn example_at(corpus: &Corpus, seq: usize, cut: usize) -> Option<Example> {
    let s = corpus.sequences.get(seq)?;
    if cut == 0 || cut >= s.len() {
        return None;
    }
    let mut out = ExampleSet::default();
    example_for(s, seq, cut, &corpus.vocab, &mut out);
    out.examples.pop()
}
