use serde::{Deserialize, Serialize};

use crate::dataset::{enumerate_examples, Corpus, TimeScale};
use crate::error::{Error, Result};
use crate::metrics::{Averaging, EvalReport};

/// Predicts the `m` most frequent target events for every example, with
/// `m` the rounded mean target-set size of the training examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFrequency {
    pub prediction: Vec<usize>,
}

impl MarginalFrequency {
    pub fn fit(train: &Corpus) -> Result<Self> {
        let ex = enumerate_examples(train).examples;
        if ex.is_empty() {
            return Err(Error::invalid("no training examples for the frequency baseline"));
        }
        let mut counts = vec![0usize; train.vocab.num_targets()];
        let mut total = 0;
        for e in &ex {
            total += e.targets.len();
            for &t in &e.targets {
                counts[t] += 1;
            }
        }
        let m = ((total as f64 / ex.len() as f64).round() as usize).max(1);
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        order.truncate(m);
        order.sort_unstable();
        Ok(MarginalFrequency { prediction: order })
    }
}

/// Predicts the mean normalized training gap for every example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalMeanGap {
    pub gap: f64,
}

impl GlobalMeanGap {
    pub fn fit(train: &Corpus, scale: &TimeScale) -> Result<Self> {
        let gaps: Vec<f64> = enumerate_examples(train)
            .examples
            .iter()
            .map(|e| {
                let s = &train.sequences[e.seq].sets;
                scale.to_model(s[e.cut].timestamp - s[e.cut - 1].timestamp)
            })
            .collect();
        if gaps.is_empty() {
            return Err(Error::invalid("no training examples for the gap baseline"));
        }
        Ok(GlobalMeanGap {
            gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
        })
    }
}

/// Scores both baselines on `corpus`.
pub fn evaluate_baselines(sets: &MarginalFrequency, gap: &GlobalMeanGap, corpus: &Corpus, scale: &TimeScale) -> Result<EvalReport> {
    let ex = enumerate_examples(corpus).examples;
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = ex.iter().map(|e| (sets.prediction.clone(), e.targets.clone())).collect();
    let gaps: Vec<(f64, f64)> = ex
        .iter()
        .map(|e| {
            let s = &corpus.sequences[e.seq].sets;
            (gap.gap, scale.to_model(s[e.cut].timestamp - s[e.cut - 1].timestamp))
        })
        .collect();
    EvalReport::compute(&pairs, &gaps, scale.unit, Averaging::Micro)
}
