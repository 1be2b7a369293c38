//! Event-set sequences, vocabularies, ingestion and the synthetic generator.

mod examples;
mod jsonl;
mod stats;
mod synthetic;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use examples::{enumerate_examples, example_at, restrict_to_targets, Example, ExampleSet};
pub use jsonl::{load_jsonl, read_vocab, write_jsonl, write_vocab, LoadReport, Rejection};
pub use stats::{dataset_stats, split, DatasetStats, Splits};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticCorpus, SyntheticSpec};

pub type EventId = usize;

/// Default cap on history length, in event sets.
pub const MAX_SEQ_LEN: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub items: Vec<EventId>,
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl EventSet {
    pub fn new(items: Vec<EventId>, timestamp: f64) -> Self {
        EventSet {
            items,
            timestamp,
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub id: String,
    pub sets: Vec<EventSet>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Event universe plus the subset the model predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    #[serde(rename = "events")]
    names: Vec<String>,
    targets: Vec<EventId>,
    #[serde(default)]
    feature_dim: usize,
    #[serde(skip)]
    target_pos: HashMap<EventId, usize>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>, targets: Vec<EventId>, feature_dim: usize) -> Result<Self> {
        let mut v = Vocabulary {
            names,
            targets,
            feature_dim,
            target_pos: HashMap::new(),
        };
        v.reindex()?;
        Ok(v)
    }

    /// All events are targets, names are the decimal ids.
    pub fn with_size(n: usize, feature_dim: usize) -> Self {
        Vocabulary::new(
            (0..n).map(|i| i.to_string()).collect(),
            (0..n).collect(),
            feature_dim,
        )
        .expect("dense targets are valid")
    }

    pub(crate) fn reindex(&mut self) -> Result<()> {
        self.target_pos.clear();
        for (pos, &t) in self.targets.iter().enumerate() {
            if t >= self.names.len() {
                return Err(Error::invalid(format!(
                    "target {t} outside vocabulary of {} events",
                    self.names.len()
                )));
            }
            if self.target_pos.insert(t, pos).is_some() {
                return Err(Error::invalid(format!("duplicate target {t}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn name(&self, id: EventId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn targets(&self) -> &[EventId] {
        &self.targets
    }

    /// Position of `id` in the target vector, if it is a target.
    pub fn target_index(&self, id: EventId) -> Option<usize> {
        self.target_pos.get(&id).copied()
    }

    pub fn id_of(&self, name: &str) -> Option<EventId> {
        self.names.iter().position(|n| n == name)
    }

    /// Stable fingerprint stored in checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for t in &self.targets {
            h.update((*t as u64).to_le_bytes());
        }
        h.update((self.feature_dim as u64).to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<Sequence>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn new(sequences: Vec<Sequence>, vocab: Vocabulary) -> Self {
        Corpus { sequences, vocab }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_sets(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn load(corpus: &Path, vocab: Option<&Path>) -> Result<(Corpus, LoadReport)> {
        let vocab = vocab.map(read_vocab).transpose()?;
        load_jsonl(corpus, vocab.as_ref())
    }

    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus {
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
            vocab: self.vocab.clone(),
        }
    }
}

/// Corpus time unit. Times fed to the model are zero-based per sequence
/// and measured in units of the corpus median inter-arrival gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub unit: f64,
}

impl Default for TimeScale {
    fn default() -> Self {
        TimeScale { unit: 1.0 }
    }
}

impl TimeScale {
    pub fn fit(corpus: &Corpus) -> Self {
        let mut gaps: Vec<f64> = corpus
            .sequences
            .iter()
            .flat_map(|s| s.sets.windows(2).map(|w| w[1].timestamp - w[0].timestamp))
            .filter(|g| *g > 0.0)
            .collect();
        if gaps.is_empty() {
            return TimeScale::default();
        }
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len();
        let median = if n % 2 == 1 {
            gaps[n / 2]
        } else {
            0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
        };
        TimeScale { unit: median }
    }

    pub fn to_model(&self, raw_delta: f64) -> f64 {
        raw_delta / self.unit
    }

    pub fn to_raw(&self, model_delta: f64) -> f64 {
        model_delta * self.unit
    }

    /// Normalized times of every set in `seq`.
    pub fn normalize(&self, seq: &Sequence) -> Vec<f64> {
        let origin = seq.sets.first().map_or(0.0, |s| s.timestamp);
        seq.sets
            .iter()
            .map(|s| (s.timestamp - origin) / self.unit)
            .collect()
    }
}
