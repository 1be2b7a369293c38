//! Pre-norm bidirectional transformer over flattened set sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bayes::{BayesLinear, Bound};
use super::encoding::{spatio_temporal_encoding, Parity};
use super::tokens::{TokenSequence, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::numcore::{dropout, multi_head_attention, DropoutCtx, Graph, NodeId, ParamId, ParamSet, Tensor};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub parity: Parity,
    /// Initial log-std of every Gaussian weight.
    pub logstd_init: f64,
    /// Sets kept from the end of a history.
    pub max_seq_len: usize,
    /// Temporal encoding units per normalized time unit.
    pub time_resolution: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 100,
            heads: 4,
            layers: 2,
            ff_dim: 256,
            dropout: 0.1,
            parity: Parity::Dimension,
            logstd_init: -4.0,
            max_seq_len: crate::dataset::MAX_SEQ_LEN,
            time_resolution: 10.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::config("model.encoder.d_model", "must be positive"));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(
                "model.encoder.heads",
                format!("{} does not divide d_model {}", self.heads, self.d_model),
            ));
        }
        if self.ff_dim == 0 {
            return Err(Error::config("model.encoder.ff_dim", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.encoder.dropout", "must lie in [0, 1)"));
        }
        if !(self.time_resolution > 0.0 && self.time_resolution.is_finite()) {
            return Err(Error::config("model.encoder.time_resolution", "must be positive"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::config("model.encoder.max_seq_len", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    fn new(params: &mut ParamSet, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: params.add(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn forward(&self, g: &mut Graph, bound: &Bound, x: NodeId) -> Result<NodeId> {
        let n = g.norm_rows(x, LN_EPS);
        let n = g.mul(n, bound.node(self.gain))?;
        g.add(n, bound.node(self.bias))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub qkv: BayesLinear,
    pub attn_out: BayesLinear,
    pub ln_ff: LayerNorm,
    pub ff_in: BayesLinear,
    pub ff_out: BayesLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderStack {
    pub config: EncoderConfig,
    pub num_events: usize,
    pub feature_dim: usize,
    /// Event embedding table, `[num_events, d_model]`.
    pub embedding: ParamId,
    /// `[SEP]`, `[CLS]` and query embeddings.
    pub specials: ParamId,
    pub feature_proj: Option<BayesLinear>,
    pub layers: Vec<EncoderLayer>,
    pub ln_final: LayerNorm,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        config: &EncoderConfig,
        num_events: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ls = config.logstd_init;
        let embedding = params.add("embedding", Tensor::randn(&[num_events, d], crate::embed::INIT_STD, rng));
        let specials = params.add("specials", Tensor::randn(&[NUM_SPECIALS, d], crate::embed::INIT_STD, rng));
        let feature_proj = (feature_dim > 0).then(|| BayesLinear::new(params, "features", feature_dim, d, ls, rng));
        let layers = (0..config.layers)
            .map(|l| {
                let n = format!("layer{l}");
                EncoderLayer {
                    ln_attn: LayerNorm::new(params, &format!("{n}.ln_attn"), d),
                    qkv: BayesLinear::new(params, &format!("{n}.qkv"), d, 3 * d, ls, rng),
                    attn_out: BayesLinear::new(params, &format!("{n}.attn_out"), d, d, ls, rng),
                    ln_ff: LayerNorm::new(params, &format!("{n}.ln_ff"), d),
                    ff_in: BayesLinear::new(params, &format!("{n}.ff_in"), d, config.ff_dim, ls, rng),
                    ff_out: BayesLinear::new(params, &format!("{n}.ff_out"), config.ff_dim, d, ls, rng),
                }
            })
            .collect();
        let ln_final = LayerNorm::new(params, "ln_final", d);
        Ok(EncoderStack {
            config: config.clone(),
            num_events,
            feature_dim,
            embedding,
            specials,
            feature_proj,
            layers,
            ln_final,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Event embeddings stacked on the special-token embeddings.
    pub fn token_table(&self, g: &mut Graph, bound: &Bound) -> Result<NodeId> {
        g.concat_rows(&[bound.node(self.embedding), bound.node(self.specials)])
    }

    /// Token embeddings plus spatio-temporal encodings and feature offsets.
    pub fn embed_tokens(&self, g: &mut Graph, bound: &Bound, table: NodeId, seq: &TokenSequence) -> Result<NodeId> {
        let d = self.d_model();
        let rows: Vec<usize> = seq.tokens.iter().map(|t| t.table_row(self.num_events)).collect();
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.num_events + NUM_SPECIALS) {
            return Err(Error::UnknownEvent(bad));
        }
        let x = g.gather_rows(table, &rows)?;
        let mut enc = Vec::with_capacity(seq.len() * d);
        for (&j, &t) in seq.set_index.iter().zip(&seq.set_time) {
            enc.extend(spatio_temporal_encoding(j, t * self.config.time_resolution, d, self.config.parity));
        }
        let enc = g.constant(Tensor::new(vec![seq.len(), d], enc)?);
        let x = g.add(x, enc)?;
        match &self.feature_proj {
            Some(proj) => {
                let f = feature_matrix(seq, self.feature_dim)?;
                let f = g.constant(f);
                inject_features(g, bound, x, f, proj)
            }
            None => Ok(x),
        }
    }

    /// Runs the stack and returns the `[CLS]` output row, `[1, d_model]`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        table: NodeId,
        seq: &TokenSequence,
        mut drop: Option<&mut DropoutCtx<'_, R>>,
    ) -> Result<NodeId> {
        let d = self.d_model();
        let mut x = self.embed_tokens(g, bound, table, seq)?;
        for layer in &self.layers {
            let h = layer.ln_attn.forward(g, bound, x)?;
            let qkv = layer.qkv.forward(g, bound, h)?;
            let q = g.slice_cols(qkv, 0, d)?;
            let k = g.slice_cols(qkv, d, d)?;
            let v = g.slice_cols(qkv, 2 * d, d)?;
            let a = multi_head_attention(
                g,
                q,
                k,
                v,
                self.config.heads,
                bound.node(layer.attn_out.weight),
                bound.node(layer.attn_out.bias),
                drop.as_deref_mut(),
            )?;
            x = g.add(x, a)?;
            let h = layer.ln_ff.forward(g, bound, x)?;
            let h = layer.ff_in.forward(g, bound, h)?;
            let mut h = g.gelu(h);
            if let Some(ctx) = drop.as_deref_mut() {
                h = dropout(g, h, ctx.p, ctx.rng)?;
            }
            let h = layer.ff_out.forward(g, bound, h)?;
            x = g.add(x, h)?;
        }
        let last = g.gather_rows(x, &[seq.len() - 1])?;
        self.ln_final.forward(g, bound, last)
    }
}

fn feature_matrix(seq: &TokenSequence, feature_dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(seq.len() * feature_dim);
    for f in &seq.features {
        if f.len() != feature_dim {
            return Err(Error::Shape {
                op: "inject_features",
                lhs: vec![feature_dim],
                rhs: vec![f.len()],
            });
        }
        data.extend_from_slice(f);
    }
    Tensor::new(vec![seq.len(), feature_dim], data)
}

/// Adds a learned projection of each token's feature row.
pub fn inject_features(g: &mut Graph, bound: &Bound, x: NodeId, features: NodeId, proj: &BayesLinear) -> Result<NodeId> {
    if g.shape(features)[1] != proj.fan_in {
        return Err(Error::Shape {
            op: "inject_features",
            lhs: vec![proj.fan_in],
            rhs: g.shape(features).to_vec(),
        });
    }
    let offset = proj.forward(g, bound, features)?;
    g.add(x, offset)
}
