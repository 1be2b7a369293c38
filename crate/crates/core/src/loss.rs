//! Event-set and timing objectives.
//!
//! Scalar functions take one example; the graph versions take `[B, |T|]`
//! batches and return the mean over examples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{huber_value, Graph, NodeId};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BceMode {
    /// `−[y log p + (1−y) log(1−p)]`.
    #[default]
    Nll,
    /// `1 − [y p + (1−y)(1−p)]`: one minus the mean assigned probability.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub dice_epsilon: f64,
    pub huber_delta: f64,
    pub bce_mode: BceMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.85,
            lambda2: 1.0,
            lambda3: 0.2,
            dice_epsilon: 0.1,
            huber_delta: 1.0,
            bce_mode: BceMode::Nll,
        }
    }
}

impl LossConfig {
    /// Zero weights are allowed so fine-tuning can switch terms off.
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("loss.lambda1", self.lambda1), ("loss.lambda2", self.lambda2), ("loss.lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be finite and non-negative"));
            }
        }
        if !(self.dice_epsilon > 0.0) {
            return Err(Error::config("loss.dice_epsilon", "must be positive"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::config("loss.huber_delta", "must be positive"));
        }
        Ok(())
    }
}

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            op,
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

pub fn bce_loss(pred: &[f64], target: &[f64], mode: BceMode) -> Result<f64> {
    check_len("bce_loss", pred, target)?;
    let n = pred.len() as f64;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            match mode {
                BceMode::Nll => -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()),
                BceMode::Literal => 1.0 - (y * p + (1.0 - y) * (1.0 - p)),
            }
        })
        .sum();
    Ok(total / n)
}

/// `1 − (1/|T|) Σ_d (2 p_d y_d + ε) / (Σ_d' (p_d' + y_d') + ε)`.
pub fn dice_loss(pred: &[f64], target: &[f64], epsilon: f64) -> Result<f64> {
    check_len("dice_loss", pred, target)?;
    let denom: f64 = pred.iter().zip(target).map(|(p, y)| p + y).sum::<f64>() + epsilon;
    let terms: f64 = pred.iter().zip(target).map(|(p, y)| (2.0 * p * y + epsilon) / denom).sum();
    Ok(1.0 - terms / pred.len() as f64)
}

pub fn huber_loss(pred: f64, target: f64, delta: f64) -> f64 {
    huber_value((pred - target).abs(), delta)
}

pub fn combined_loss(bce: f64, dice: f64, huber: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda1 * bce + cfg.lambda2 * dice + cfg.lambda3 * huber
}

fn check_nodes(g: &Graph, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    if g.shape(a) != g.shape(b) || g.shape(a).len() != 2 {
        return Err(Error::Shape {
            op,
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    Ok(())
}

pub fn bce_loss_graph(g: &mut Graph, pred: NodeId, target: NodeId, mode: BceMode) -> Result<NodeId> {
    check_nodes(g, "bce_loss", pred, target)?;
    let p = g.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let not_y = g.rsub_const(1.0, target);
    let not_p = g.rsub_const(1.0, p);
    let (a, b) = match mode {
        BceMode::Nll => (g.log(p), g.log(not_p)),
        BceMode::Literal => (p, not_p),
    };
    let a = g.mul(target, a)?;
    let b = g.mul(not_y, b)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(match mode {
        BceMode::Nll => g.neg(m),
        BceMode::Literal => g.rsub_const(1.0, m),
    })
}

pub fn dice_loss_graph(g: &mut Graph, pred: NodeId, target: NodeId, epsilon: f64) -> Result<NodeId> {
    check_nodes(g, "dice_loss", pred, target)?;
    let t = g.shape(pred)[1] as f64;
    // Shared denominator: Σ_d (2 p y + ε) / D = (2 Σ p y + |T| ε) / D.
    let py = g.mul(pred, target)?;
    let num = g.sum_cols(py);
    let num = g.scale(num, 2.0);
    let num = g.add_const(num, t * epsilon);
    let s = g.add(pred, target)?;
    let den = g.sum_cols(s);
    let den = g.add_const(den, epsilon);
    let r = g.div(num, den)?;
    let r = g.scale(r, 1.0 / t);
    let m = g.mean(r);
    Ok(g.rsub_const(1.0, m))
}

pub fn huber_loss_graph(g: &mut Graph, pred: NodeId, target: NodeId, delta: f64) -> Result<NodeId> {
    let h = g.huber(pred, target, delta)?;
    Ok(g.mean(h))
}

/// Component losses of one batch as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub bce: NodeId,
    pub dice: NodeId,
    pub huber: NodeId,
    pub total: NodeId,
}

pub fn combined_loss_graph(
    g: &mut Graph,
    event_pred: NodeId,
    event_target: NodeId,
    time_pred: NodeId,
    time_target: NodeId,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    let bce = bce_loss_graph(g, event_pred, event_target, cfg.bce_mode)?;
    let dice = dice_loss_graph(g, event_pred, event_target, cfg.dice_epsilon)?;
    let huber = huber_loss_graph(g, time_pred, time_target, cfg.huber_delta)?;
    let a = g.scale(bce, cfg.lambda1);
    let b = g.scale(dice, cfg.lambda2);
    let c = g.scale(huber, cfg.lambda3);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossNodes { bce, dice, huber, total })
}
