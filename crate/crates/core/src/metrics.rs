//! Set and timing evaluation measures.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `2|A∩B| / (|A|+|B|)`; two empty sets score 1.
pub fn dice_score(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let a: HashSet<usize> = pred.iter().copied().collect();
    let b: HashSet<usize> = truth.iter().copied().collect();
    let inter = a.intersection(&b).count();
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

pub fn mean_dice(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    Ok(pairs.iter().map(|(p, t)| dice_score(p, t)).sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pool every (example, dimension) decision.
    #[default]
    Micro,
    /// Mean of per-dimension F1 over dimensions that occur in truth or
    /// prediction.
    Macro,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let d = 2 * tp + fp + fn_;
    if d == 0 {
        1.0
    } else {
        2.0 * tp as f64 / d as f64
    }
}

/// F1 over a corpus of (predicted, true) set pairs.
pub fn f_score(pairs: &[(Vec<usize>, Vec<usize>)], averaging: Averaging) -> f64 {
    let mut per_dim: std::collections::BTreeMap<usize, (usize, usize, usize)> = Default::default();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in pairs {
        let a: HashSet<usize> = p.iter().copied().collect();
        let b: HashSet<usize> = t.iter().copied().collect();
        for &d in &a {
            let e = per_dim.entry(d).or_default();
            if b.contains(&d) {
                tp += 1;
                e.0 += 1;
            } else {
                fp += 1;
                e.1 += 1;
            }
        }
        for &d in b.difference(&a) {
            fn_ += 1;
            per_dim.entry(d).or_default().2 += 1;
        }
    }
    match averaging {
        Averaging::Micro => f1(tp, fp, fn_),
        Averaging::Macro if per_dim.is_empty() => 1.0,
        Averaging::Macro => per_dim.values().map(|&(a, b, c)| f1(a, b, c)).sum::<f64>() / per_dim.len() as f64,
    }
}

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid("no values to score"));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            op: "time metric",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok((pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// Held-out metrics. Times are in normalized units; `*_raw` fields are in
/// the corpus' own time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dsc: f64,
    pub f_score: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mae_raw: f64,
    pub rmse_raw: f64,
    pub n_examples: usize,
}

impl EvalReport {
    /// `gaps` are (predicted, true) normalized gaps; `unit` converts them
    /// back to raw time.
    pub fn compute(sets: &[(Vec<usize>, Vec<usize>)], gaps: &[(f64, f64)], unit: f64, averaging: Averaging) -> Result<Self> {
        let (p, t): (Vec<f64>, Vec<f64>) = gaps.iter().copied().unzip();
        let (mae_n, rmse_n) = (mae(&p, &t)?, rmse(&p, &t)?);
        Ok(EvalReport {
            dsc: mean_dice(sets)?,
            f_score: f_score(sets, averaging),
            mae: mae_n,
            rmse: rmse_n,
            mae_raw: mae_n * unit,
            rmse_raw: rmse_n * unit,
            n_examples: sets.len(),
        })
    }
}
