use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{enumerate_examples, Corpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Number of valid prefix training examples.
    pub num_points: usize,
    pub avg_seq_len: f64,
    pub avg_set_len: f64,
    pub num_event_types: usize,
    pub num_target_types: usize,
}

pub fn dataset_stats(corpus: &Corpus) -> Result<DatasetStats> {
    if corpus.is_empty() {
        return Err(Error::invalid("dataset_stats on an empty corpus"));
    }
    let num_sets = corpus.num_sets();
    let num_items: usize = corpus
        .sequences
        .iter()
        .flat_map(|s| s.sets.iter().map(|x| x.items.len()))
        .sum();
    let seen: HashSet<usize> = corpus
        .sequences
        .iter()
        .flat_map(|s| s.sets.iter().flat_map(|x| x.items.iter().copied()))
        .collect();
    let targets = seen.iter().filter(|&&e| corpus.vocab.target_index(e).is_some()).count();
    Ok(DatasetStats {
        num_points: enumerate_examples(corpus).examples.len(),
        avg_seq_len: num_sets as f64 / corpus.len() as f64,
        avg_set_len: if num_sets == 0 { 0.0 } else { num_items as f64 / num_sets as f64 },
        num_event_types: seen.len(),
        num_target_types: targets,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Sequence-level split.
///
/// `train_frac` of the corpus (floored) forms the training pool and the rest
/// is test. `val_frac` of the pool (rounded, at least one) is then held out
/// for validation. With 10 sequences and 0.8 / 0.1 this gives 7 / 1 / 2.
pub fn split(corpus: &Corpus, train_frac: f64, val_frac: f64, seed: u64) -> Result<Splits> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::config("data.train_frac", "must lie in (0, 1)"));
    }
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::config("data.val_frac", "must lie in (0, 1)"));
    }
    let n = corpus.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 sequences to split, got {n}")));
    }
    let pool = ((train_frac * n as f64).floor() as usize).clamp(2, n - 1);
    let n_val = ((val_frac * pool as f64).round() as usize).clamp(1, pool - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (pool_idx, test_idx) = idx.split_at(pool);
    let (val_idx, train_idx) = pool_idx.split_at(n_val);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Splits {
        train: corpus.subset(&sorted(train_idx)),
        val: corpus.subset(&sorted(val_idx)),
        test: corpus.subset(&sorted(test_idx)),
    })
}
