use rand::Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// `x · w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
pub fn dense_forward(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    let out = g.shape(xw)[1];
    if g.value(b).len() != out {
        return Err(Error::Shape {
            op: "dense_forward",
            lhs: g.shape(xw).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    g.add(xw, b)
}

/// Inverted dropout with a constant mask drawn from `rng`.
pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let shape = g.shape(x).to_vec();
    let n = g.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, m)
}

/// Training-time dropout configuration threaded through a forward pass.
pub struct DropoutCtx<'a, R: Rng + ?Sized> {
    pub p: f64,
    pub rng: &'a mut R,
}

/// Bidirectional scaled dot-product attention over already-projected
/// `q, k, v: [seq, d]`, split into `heads` heads of width `d / heads`,
/// concatenated and passed through the output projection `(wo, bo)`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<R: Rng + ?Sized>(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    wo: NodeId,
    bo: NodeId,
    mut drop: Option<&mut DropoutCtx<'_, R>>,
) -> Result<NodeId> {
    let d = g.shape(q)[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::config(
            "heads",
            format!("model width {d} is not divisible by {heads} heads"),
        ));
    }
    for &other in &[k, v] {
        if g.shape(other) != g.shape(q) {
            return Err(Error::Shape {
                op: "multi_head_attention",
                lhs: g.shape(q).to_vec(),
                rhs: g.shape(other).to_vec(),
            });
        }
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let mut weights = g.softmax_rows(scores);
        if let Some(ctx) = drop.as_deref_mut() {
            weights = dropout(g, weights, ctx.p, ctx.rng)?;
        }
        outs.push(g.matmul(weights, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    dense_forward(g, cat, wo, bo)
}
