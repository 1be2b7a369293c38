//! Mixture heads for the next event set and the next gap.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::{BayesLinear, Bound};
use crate::error::{Error, Result};
use crate::numcore::{sigmoid, softplus, Graph, NodeId, ParamSet, Tensor};

pub const DEFAULT_MIXTURES: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// How the temporal output is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// `softplus` of the mixed sample is the gap `t_{k+1} − t_k`.
    #[default]
    Gap,
    /// The mixed sample is `t_{k+1}` itself.
    Absolute,
}

/// Concrete mixture parameters for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub mus: Vec<Vec<f64>>,
    pub sigmas: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
}

impl MixtureParams {
    pub fn num_components(&self) -> usize {
        self.alphas.len()
    }

    pub fn dim(&self) -> usize {
        self.mus.first().map_or(0, Vec::len)
    }

    fn z<R: Rng + ?Sized>(&self, m: usize, rng: Option<&mut R>) -> Vec<f64> {
        match rng {
            Some(r) => self.mus[m]
                .iter()
                .zip(&self.sigmas[m])
                .map(|(mu, s)| mu + s * r.sample::<f64, _>(StandardNormal))
                .collect(),
            None => self.mus[m].clone(),
        }
    }

    /// `Σ_m α_m sigmoid(μ_m + σ_m ε_m)`; `ε = 0` without an rng.
    pub fn sample_event<R: Rng + ?Sized>(&self, mut rng: Option<&mut R>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (m, &a) in self.alphas.iter().enumerate() {
            let z = self.z(m, rng.as_deref_mut());
            for (o, v) in out.iter_mut().zip(z) {
                *o += a * sigmoid(v);
            }
        }
        out
    }

    /// `Σ_m α_m (μ_m + σ_m ε_m)` for a one-dimensional mixture.
    pub fn sample_scalar<R: Rng + ?Sized>(&self, mut rng: Option<&mut R>) -> f64 {
        (0..self.num_components())
            .map(|m| self.alphas[m] * self.z(m, rng.as_deref_mut())[0])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPrediction {
    /// Probability per target position.
    pub probs: Vec<f64>,
    pub threshold: f64,
}

impl EventPrediction {
    /// Target positions with probability at or above the threshold.
    pub fn discretize(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= self.threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePrediction {
    /// Normalized inter-arrival gap.
    pub gap: f64,
    /// Normalized `t_{k+1}`.
    pub absolute: f64,
}

impl TimePrediction {
    pub fn from_output(value: f64, t_k: f64, mode: TimeMode) -> Self {
        match mode {
            TimeMode::Gap => TimePrediction {
                gap: value,
                absolute: t_k + value,
            },
            TimeMode::Absolute => TimePrediction {
                gap: value - t_k,
                absolute: value,
            },
        }
    }
}

/// Graph nodes of a batch of mixtures, `B` rows each.
#[derive(Debug, Clone)]
pub struct MixtureNodes {
    /// `[B, dim]` per component.
    pub mus: Vec<NodeId>,
    pub sigmas: Vec<NodeId>,
    /// `[B, M]`.
    pub alphas: NodeId,
    pub dim: usize,
}

impl MixtureNodes {
    pub fn to_params(&self, g: &Graph, row: usize) -> MixtureParams {
        let pick = |ids: &[NodeId]| ids.iter().map(|&n| g.value(n).row(row).to_vec()).collect();
        MixtureParams {
            mus: pick(&self.mus),
            sigmas: pick(&self.sigmas),
            alphas: g.value(self.alphas).row(row).to_vec(),
        }
    }

    fn alpha_col(&self, g: &mut Graph, m: usize) -> Result<NodeId> {
        g.slice_cols(self.alphas, m, 1)
    }

    fn z(&self, g: &mut Graph, m: usize, eps: Option<&[Tensor]>) -> Result<NodeId> {
        match eps {
            Some(e) => {
                let e = g.constant(e[m].clone());
                let s = g.mul(self.sigmas[m], e)?;
                g.add(self.mus[m], s)
            }
            None => Ok(self.mus[m]),
        }
    }

    fn check_eps(&self, g: &Graph, eps: Option<&[Tensor]>) -> Result<()> {
        if let Some(e) = eps {
            let want = g.shape(self.mus[0]);
            if e.len() != self.mus.len() || e.iter().any(|t| t.shape() != want) {
                return Err(Error::Shape {
                    op: "mixture noise",
                    lhs: want.to_vec(),
                    rhs: e.first().map_or(vec![], |t| t.shape().to_vec()),
                });
            }
        }
        Ok(())
    }

    /// `Σ_m α_m sigmoid(μ_m + σ_m ε_m)`, `[B, dim]`.
    pub fn mix_event(&self, g: &mut Graph, eps: Option<&[Tensor]>) -> Result<NodeId> {
        self.check_eps(g, eps)?;
        let ones = g.constant(Tensor::full(&[1, self.dim], 1.0));
        let mut acc: Option<NodeId> = None;
        for m in 0..self.mus.len() {
            let z = self.z(g, m, eps)?;
            let s = g.sigmoid(z);
            let a = self.alpha_col(g, m)?;
            let a = g.matmul(a, ones)?;
            let term = g.mul(s, a)?;
            acc = Some(match acc {
                Some(x) => g.add(x, term)?,
                None => term,
            });
        }
        Ok(acc.expect("at least one component"))
    }

    /// `Σ_m α_m (μ_m + σ_m ε_m)` mapped through the time mode, `[B, 1]`.
    pub fn mix_time(&self, g: &mut Graph, eps: Option<&[Tensor]>, mode: TimeMode) -> Result<NodeId> {
        self.check_eps(g, eps)?;
        let mut acc: Option<NodeId> = None;
        for m in 0..self.mus.len() {
            let z = self.z(g, m, eps)?;
            let a = self.alpha_col(g, m)?;
            let term = g.mul(z, a)?;
            acc = Some(match acc {
                Some(x) => g.add(x, term)?,
                None => term,
            });
        }
        let mixed = acc.expect("at least one component");
        Ok(match mode {
            TimeMode::Gap => g.softplus(mixed),
            TimeMode::Absolute => mixed,
        })
    }
}

/// One Bayesian affine map emitting `M·2·dim + M` raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureHead {
    pub linear: BayesLinear,
    pub components: usize,
    pub dim: usize,
}

impl MixtureHead {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        d_model: usize,
        dim: usize,
        components: usize,
        logstd_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if components == 0 {
            return Err(Error::config("model.mixtures", "must be at least 1"));
        }
        let out = components * 2 * dim + components;
        Ok(MixtureHead {
            linear: BayesLinear::new(params, name, d_model, out, logstd_init, rng),
            components,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, v: NodeId) -> Result<MixtureNodes> {
        let raw = self.linear.forward(g, bound, v)?;
        let (m, d) = (self.components, self.dim);
        let mut mus = Vec::with_capacity(m);
        let mut sigmas = Vec::with_capacity(m);
        for c in 0..m {
            mus.push(g.slice_cols(raw, c * d, d)?);
            let s = g.slice_cols(raw, m * d + c * d, d)?;
            sigmas.push(g.softplus(s));
        }
        let logits = g.slice_cols(raw, 2 * m * d, m)?;
        let alphas = g.softmax_rows(logits);
        Ok(MixtureNodes { mus, sigmas, alphas, dim: d })
    }

    /// Standard-normal noise per (component, dimension) for `batch` rows.
    pub fn sample_eps<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Tensor> {
        (0..self.components)
            .map(|_| Tensor::randn(&[batch, self.dim], 1.0, rng))
            .collect()
    }
}

/// Point prediction from concrete mixture parameters.
pub fn sample_event_prediction<R: Rng + ?Sized>(params: &MixtureParams, rng: Option<&mut R>, threshold: f64) -> EventPrediction {
    EventPrediction {
        probs: params.sample_event(rng),
        threshold,
    }
}

pub fn sample_time_prediction<R: Rng + ?Sized>(params: &MixtureParams, rng: Option<&mut R>, t_k: f64, mode: TimeMode) -> TimePrediction {
    let z = params.sample_scalar(rng);
    let value = match mode {
        TimeMode::Gap => softplus(z),
        TimeMode::Absolute => z,
    };
    TimePrediction::from_output(value, t_k, mode)
}
