//! Synthetic corpora with planted cluster structure.
//!
//! Events are partitioned into clusters. Each event set is built around one
//! cluster; the cluster of the next set follows a fixed successor map with
//! probability `transition_prob` (uniform otherwise), and the gap before a
//! set depends on that set's cluster, so both content and timing carry
//! recoverable signal.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Corpus, EventId, EventSet, Sequence, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_clusters: usize,
    pub events_per_cluster: usize,
    /// Probability that an item is drawn from the set's own cluster.
    pub within_cluster_prob: f64,
    pub base_gap: f64,
    pub gap_jitter: f64,
    /// Extra gap per cluster rank: the gap before a cluster-`c` set is
    /// `base_gap + c * cluster_gap_step + U(0, gap_jitter)`.
    pub cluster_gap_step: f64,
    pub num_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_set_size: usize,
    pub max_set_size: usize,
    /// Probability that the next set's cluster is the planted successor.
    pub transition_prob: f64,
    /// When non-zero, each set carries a noisy one-hot of the next set's cluster.
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_clusters: 5,
            events_per_cluster: 10,
            within_cluster_prob: 0.9,
            base_gap: 1.0,
            gap_jitter: 0.5,
            cluster_gap_step: 1.0,
            num_sequences: 500,
            min_len: 2,
            max_len: 8,
            min_set_size: 2,
            max_set_size: 4,
            transition_prob: 0.8,
            feature_dim: 0,
            feature_noise: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_clusters", self.num_clusters),
            ("events_per_cluster", self.events_per_cluster),
            ("num_sequences", self.num_sequences),
            ("max_len", self.max_len),
            ("min_set_size", self.min_set_size),
            ("max_set_size", self.max_set_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("synthetic.{k}"), "must be positive"));
            }
        }
        if !(self.within_cluster_prob > 0.0 && self.within_cluster_prob <= 1.0) {
            return Err(Error::config("synthetic.within_cluster_prob", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.transition_prob) {
            return Err(Error::config("synthetic.transition_prob", "must lie in [0, 1]"));
        }
        if !(self.base_gap > 0.0) || !(self.gap_jitter > 0.0) || self.cluster_gap_step < 0.0 {
            return Err(Error::config("synthetic.base_gap", "gaps must be positive"));
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(Error::config("synthetic.min_len", "need 1 <= min_len <= max_len"));
        }
        if self.min_set_size > self.max_set_size {
            return Err(Error::config("synthetic.min_set_size", "exceeds max_set_size"));
        }
        if self.max_set_size > self.num_events() {
            return Err(Error::config("synthetic.max_set_size", "exceeds number of events"));
        }
        if self.feature_dim > 0 && self.feature_dim < self.num_clusters {
            return Err(Error::config("synthetic.feature_dim", "must be 0 or at least num_clusters"));
        }
        Ok(())
    }

    pub fn num_events(&self) -> usize {
        self.num_clusters * self.events_per_cluster
    }

    pub fn cluster_of(&self, event: EventId) -> usize {
        event / self.events_per_cluster
    }

    /// Mean gap before a set of cluster `c`.
    pub fn expected_gap(&self, c: usize) -> f64 {
        self.base_gap + c as f64 * self.cluster_gap_step + 0.5 * self.gap_jitter
    }
}

/// Planted structure, written as `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub event_cluster: Vec<usize>,
    pub successor: Vec<usize>,
    pub gap_offset: Vec<f64>,
    /// Cluster chosen for every set, per sequence.
    pub set_clusters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub truth: GroundTruth,
}

fn draw_items(spec: &SyntheticSpec, cluster: usize, rng: &mut ChaCha8Rng) -> Vec<EventId> {
    let epc = spec.events_per_cluster;
    let size = rng.gen_range(spec.min_set_size..=spec.max_set_size);
    let mut inside: Vec<EventId> = (cluster * epc..(cluster + 1) * epc).collect();
    let mut outside: Vec<EventId> = (0..spec.num_events())
        .filter(|e| spec.cluster_of(*e) != cluster)
        .collect();
    let mut items = Vec::with_capacity(size);
    while items.len() < size {
        let want_inside = spec.num_clusters == 1 || rng.gen::<f64>() < spec.within_cluster_prob;
        let pool = match (want_inside, inside.is_empty(), outside.is_empty()) {
            (true, false, _) | (false, false, true) => &mut inside,
            (_, _, false) => &mut outside,
            (_, true, true) => break,
        };
        let k = rng.gen_range(0..pool.len());
        items.push(pool.swap_remove(k));
    }
    items
}

/// Deterministic under `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.num_clusters;
    let successor: Vec<usize> = (0..c).map(|i| (i + 1) % c).collect();
    let gap_offset: Vec<f64> = (0..c).map(|i| i as f64 * spec.cluster_gap_step).collect();

    let mut sequences = Vec::with_capacity(spec.num_sequences);
    let mut set_clusters = Vec::with_capacity(spec.num_sequences);
    for s in 0..spec.num_sequences {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut clusters = Vec::with_capacity(len);
        let mut cur = rng.gen_range(0..c);
        for j in 0..len {
            if j > 0 {
                cur = if rng.gen::<f64>() < spec.transition_prob {
                    successor[cur]
                } else {
                    rng.gen_range(0..c)
                };
            }
            clusters.push(cur);
        }
        let mut t = 0.0;
        let mut sets = Vec::with_capacity(len);
        for (j, &cl) in clusters.iter().enumerate() {
            if j > 0 {
                t += spec.base_gap + gap_offset[cl] + rng.gen::<f64>() * spec.gap_jitter;
            }
            let mut items = draw_items(spec, cl, &mut rng);
            items.shuffle(&mut rng);
            let features = (spec.feature_dim > 0).then(|| {
                let next = clusters.get(j + 1).copied().unwrap_or_else(|| rng.gen_range(0..c));
                (0..spec.feature_dim)
                    .map(|d| {
                        let noise = spec.feature_noise * rng.sample::<f64, _>(StandardNormal);
                        if d == next {
                            1.0 + noise
                        } else {
                            noise
                        }
                    })
                    .collect()
            });
            sets.push(EventSet {
                items,
                timestamp: t,
                features,
            });
        }
        sequences.push(Sequence {
            id: format!("syn-{s:05}"),
            sets,
        });
        set_clusters.push(clusters);
    }

    let vocab = Vocabulary::new(
        (0..spec.num_events())
            .map(|e| format!("c{}e{}", spec.cluster_of(e), e % spec.events_per_cluster))
            .collect(),
        (0..spec.num_events()).collect(),
        spec.feature_dim,
    )?;
    let truth = GroundTruth {
        event_cluster: (0..spec.num_events()).map(|e| spec.cluster_of(e)).collect(),
        successor,
        gap_offset,
        set_clusters,
    };
    Ok(SyntheticCorpus {
        corpus: Corpus::new(sequences, vocab),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_stays_inside() {
        let spec = SyntheticSpec {
            num_clusters: 1,
            events_per_cluster: 6,
            num_sequences: 50,
            ..Default::default()
        };
        let syn = generate_synthetic(&spec).unwrap();
        for s in &syn.corpus.sequences {
            for set in &s.sets {
                assert!(set.items.iter().all(|&e| spec.cluster_of(e) == 0));
            }
        }
    }

    #[test]
    fn p_one_gives_pure_clusters() {
        let spec = SyntheticSpec {
            within_cluster_prob: 1.0,
            num_sequences: 100,
            ..Default::default()
        };
        let syn = generate_synthetic(&spec).unwrap();
        for (s, cl) in syn.corpus.sequences.iter().zip(&syn.truth.set_clusters) {
            for (set, &c) in s.sets.iter().zip(cl) {
                assert!(set.items.iter().all(|&e| spec.cluster_of(e) == c));
            }
        }
    }

    #[test]
    fn co_occurrence_rate_matches_probability() {
        // Monte-Carlo count over >= 10k sets.
        let spec = SyntheticSpec {
            num_sequences: 2500,
            seed: 11,
            ..Default::default()
        };
        let syn = generate_synthetic(&spec).unwrap();
        let (mut inside, mut total, mut sets) = (0usize, 0usize, 0usize);
        for (s, cl) in syn.corpus.sequences.iter().zip(&syn.truth.set_clusters) {
            for (set, &c) in s.sets.iter().zip(cl) {
                sets += 1;
                total += set.items.len();
                inside += set.items.iter().filter(|&&e| spec.cluster_of(e) == c).count();
            }
        }
        assert!(sets >= 10_000, "{sets}");
        let rate = inside as f64 / total as f64;
        assert!((rate - spec.within_cluster_prob).abs() < 0.02, "{rate}");
    }

    #[test]
    fn deterministic_and_timestamps_monotone() {
        let spec = SyntheticSpec {
            feature_dim: 5,
            num_sequences: 20,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        for s in &a.corpus.sequences {
            assert!(s.sets.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
            assert!(s.sets.iter().all(|x| x.features.as_ref().map(Vec::len) == Some(5)));
        }
    }

    #[test]
    fn rejects_invalid_spec() {
        let spec = SyntheticSpec {
            within_cluster_prob: 0.0,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
