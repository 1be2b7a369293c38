//! Linear layers with factorized Gaussian weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::{dense_forward, Graph, NodeId, ParamId, ParamKind, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BayesLinear {
    pub weight: ParamId,
    pub weight_logstd: ParamId,
    pub bias: ParamId,
    pub bias_logstd: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl BayesLinear {
    /// Means drawn from `N(0, 1/fan_in)`, zero bias, constant log-std.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        logstd_init: f64,
        rng: &mut R,
    ) -> Self {
        let w = Tensor::randn(&[fan_in, fan_out], 1.0 / (fan_in.max(1) as f64).sqrt(), rng);
        let (weight, weight_logstd) = params.add_bayes(&format!("{name}.weight"), w, logstd_init);
        let (bias, bias_logstd) = params.add_bayes(&format!("{name}.bias"), Tensor::zeros(&[fan_out]), logstd_init);
        BayesLinear {
            weight,
            weight_logstd,
            bias,
            bias_logstd,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: NodeId) -> Result<NodeId> {
        dense_forward(g, x, bound.node(self.weight), bound.node(self.bias))
    }
}

/// One draw of standard-normal noise for every Gaussian mean parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNoise {
    eps: Vec<Option<Tensor>>,
}

impl WeightNoise {
    pub fn sample<R: Rng + ?Sized>(params: &ParamSet, rng: &mut R) -> Self {
        let eps = params
            .iter()
            .map(|(_, p)| match p.kind {
                ParamKind::BayesMean { .. } => Some(Tensor::randn(p.value.shape(), 1.0, rng)),
                _ => None,
            })
            .collect();
        WeightNoise { eps }
    }

    pub fn eps(&self, id: ParamId) -> Option<&Tensor> {
        self.eps.get(id.0).and_then(Option::as_ref)
    }
}

/// Draws `w = mean + exp(logstd) ⊙ ε` for every Gaussian parameter.
///
/// Returned in parameter order; plain parameters are passed through.
pub fn sample_weights<R: Rng + ?Sized>(params: &ParamSet, rng: &mut R) -> Vec<Tensor> {
    let noise = WeightNoise::sample(params, rng);
    effective_weights(params, Some(&noise))
}

pub fn effective_weights(params: &ParamSet, noise: Option<&WeightNoise>) -> Vec<Tensor> {
    params
        .iter()
        .map(|(id, p)| match (p.kind, noise.and_then(|n| n.eps(id))) {
            (ParamKind::BayesMean { logstd }, Some(eps)) => {
                let ls = params.get(logstd);
                let data = p
                    .value
                    .data()
                    .iter()
                    .zip(ls.data())
                    .zip(eps.data())
                    .map(|((m, s), e)| m + s.exp() * e)
                    .collect();
                Tensor::new(p.value.shape().to_vec(), data).expect("same shape")
            }
            _ => p.value.clone(),
        })
        .collect()
}

/// Parameters registered on a graph, with Gaussian means replaced by their
/// reparameterized sample when noise is given.
#[derive(Debug, Clone)]
pub struct Bound {
    pub leaves: Vec<NodeId>,
    effective: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.effective[id.0]
    }

    pub fn leaf(&self, id: ParamId) -> NodeId {
        self.leaves[id.0]
    }
}

pub fn bind(params: &ParamSet, g: &mut Graph, noise: Option<&WeightNoise>) -> Result<Bound> {
    let leaves = params.bind_leaves(g);
    let mut effective = leaves.clone();
    for (id, p) in params.iter() {
        if let (ParamKind::BayesMean { logstd }, Some(eps)) = (p.kind, noise.and_then(|n| n.eps(id))) {
            let std = g.exp(leaves[logstd.0]);
            let e = g.constant(eps.clone());
            let shift = g.mul(std, e)?;
            effective[id.0] = g.add(leaves[id.0], shift)?;
        }
    }
    Ok(Bound { leaves, effective })
}

/// `Σ ½(σ² + μ² − 1) − log σ` over every Gaussian parameter, as a graph node.
pub fn kl_to_standard_normal(params: &ParamSet, g: &mut Graph, bound: &Bound) -> Result<Option<NodeId>> {
    let mut total: Option<NodeId> = None;
    for (id, p) in params.iter() {
        let ParamKind::BayesMean { logstd } = p.kind else { continue };
        if !p.trainable && !params.param(logstd).trainable {
            continue;
        }
        let ls = bound.leaf(logstd);
        let var = g.scale(ls, 2.0);
        let var = g.exp(var);
        let mu2 = g.square(bound.leaf(id));
        let s = g.add(var, mu2)?;
        let s = g.add_const(s, -1.0);
        let s = g.scale(s, 0.5);
        let term = g.sub(s, ls)?;
        let term = g.sum(term);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer() -> (ParamSet, BayesLinear) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = BayesLinear::new(&mut ps, "l", 3, 2, -1.0, &mut rng);
        (ps, l)
    }

    #[test]
    fn zero_std_equals_mean() {
        let (mut ps, l) = layer();
        ps.get_mut(l.weight_logstd).data_mut().fill(f64::NEG_INFINITY);
        ps.get_mut(l.bias_logstd).data_mut().fill(f64::NEG_INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = sample_weights(&ps, &mut rng);
        assert_eq!(&w[l.weight.0], ps.get(l.weight));
        assert_eq!(&w[l.bias.0], ps.get(l.bias));
    }

    #[test]
    fn sampling_is_seeded() {
        let (ps, _) = layer();
        let a = sample_weights(&ps, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_weights(&ps, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_matches() {
        // Monte-Carlo oracle: mean within 3·std/√n of the weight mean.
        let (ps, l) = layer();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut acc = [0.0; 6];
        for _ in 0..n {
            let w = sample_weights(&ps, &mut rng);
            for (a, v) in acc.iter_mut().zip(w[l.weight.0].data()) {
                *a += v / n as f64;
            }
        }
        let std = (-1.0f64).exp();
        for (a, m) in acc.iter().zip(ps.get(l.weight).data()) {
            assert!((a - m).abs() < 3.0 * std / (n as f64).sqrt(), "{a} vs {m}");
        }
    }

    #[test]
    fn bound_graph_matches_concrete_sample() {
        let (ps, l) = layer();
        let noise = WeightNoise::sample(&ps, &mut ChaCha8Rng::seed_from_u64(5));
        let concrete = effective_weights(&ps, Some(&noise));
        let mut g = Graph::new();
        let b = bind(&ps, &mut g, Some(&noise)).unwrap();
        assert!(g.value(b.node(l.weight)).max_abs_diff(&concrete[l.weight.0]) < 1e-15);
        let mut g = Graph::new();
        let b = bind(&ps, &mut g, None).unwrap();
        assert_eq!(g.value(b.node(l.weight)), ps.get(l.weight));
    }

    #[test]
    fn kl_zero_at_prior() {
        let mut ps = ParamSet::new();
        ps.add_bayes("w", Tensor::zeros(&[2, 2]), 0.0);
        let mut g = Graph::new();
        let b = bind(&ps, &mut g, None).unwrap();
        let kl = kl_to_standard_normal(&ps, &mut g, &b).unwrap().unwrap();
        assert_eq!(g.value(kl).item(), 0.0);
    }
}
