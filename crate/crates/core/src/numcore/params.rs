use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Plain,
    /// Mean of a factorized Gaussian; its log-std lives in `logstd`.
    BayesMean { logstd: ParamId },
    BayesLogStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
    pub trainable: bool,
}

/// Ordered, named parameter storage. Layers hold [`ParamId`]s into it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, ParamKind::Plain)
    }

    /// Registers a Gaussian weight: `(mean, logstd)`.
    pub fn add_bayes(&mut self, name: &str, mean: Tensor, logstd_init: f64) -> (ParamId, ParamId) {
        let shape = mean.shape().to_vec();
        let logstd = self.push(
            format!("{name}.logstd"),
            Tensor::full(&shape, logstd_init),
            ParamKind::BayesLogStd,
        );
        let mean = self.push(format!("{name}.mean"), mean, ParamKind::BayesMean { logstd });
        (mean, logstd)
    }

    fn push(&mut self, name: String, value: Tensor, kind: ParamKind) -> ParamId {
        self.params.push(Param {
            name,
            value,
            kind,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a graph leaf. Frozen parameters become
    /// constants so no gradient is computed for them.
    pub fn bind_leaves(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), p.trainable))
            .collect()
    }

    /// Pulls gradients for every parameter out of a graph after `backward`.
    pub fn collect_grads(&self, g: &Graph, leaves: &[NodeId]) -> Vec<Option<Vec<f64>>> {
        leaves.iter().map(|&id| g.grad(id).map(<[f64]>::to_vec)).collect()
    }
}
