use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, EventId, Example, TimeScale, Vocabulary};
use crate::embed::EmbeddingTable;
use crate::encoder::{bind, flatten_history, Bound, EncoderConfig, EncoderStack, TokenSequence, WeightNoise};
use crate::error::{Error, Result};
use crate::heads::{MixtureHead, MixtureNodes, TimeMode, DEFAULT_MIXTURES, DEFAULT_THRESHOLD};
use crate::numcore::{DropoutCtx, Graph, NodeId, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mixtures: usize,
    pub time_mode: TimeMode,
    /// Probability at or above which a target event is predicted.
    pub threshold: f64,
    pub time_origin: TimeOrigin,
}

/// Origin of the times fed to the temporal encodings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeOrigin {
    /// The last history set sits at zero; earlier sets are negative and a
    /// query time equals its gap.
    #[default]
    LastSet,
    /// The first set of the sequence sits at zero.
    SequenceStart,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            mixtures: DEFAULT_MIXTURES,
            time_mode: TimeMode::Gap,
            threshold: DEFAULT_THRESHOLD,
            time_origin: TimeOrigin::LastSet,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.mixtures == 0 {
            return Err(Error::config("model.mixtures", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("model.threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// What the model is asked to predict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Next event set and next time from the history.
    #[default]
    Joint,
    /// Event set at a given future time, supplied as a query token.
    EventGivenTime,
    /// Next time at which a given event occurs; its embedding is added to
    /// the sequence summary before the temporal head.
    TimeGivenEvent,
}

/// One model input: a flattened history and what it is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub tokens: TokenSequence,
    /// Normalized time of the last history set.
    pub t_k: f64,
    pub condition: Option<EventId>,
}

/// Supervision for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTarget {
    /// Sorted target positions.
    pub targets: Vec<usize>,
    /// Normalized `t_{k+1} − t_k`.
    pub gap: f64,
    /// Normalized `t_{k+1}`.
    pub t_next: f64,
}

impl ModelTarget {
    pub fn event_vector(&self, num_targets: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_targets];
        for &t in &self.targets {
            v[t] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TesetModel {
    pub config: ModelConfig,
    pub task: Task,
    pub vocab: Vocabulary,
    pub time_scale: TimeScale,
    pub params: ParamSet,
    pub stack: EncoderStack,
    pub event_head: MixtureHead,
    pub time_head: MixtureHead,
}

impl TesetModel {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, vocab: Vocabulary, time_scale: TimeScale, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let stack = EncoderStack::new(&mut params, &config.encoder, vocab.len(), vocab.feature_dim(), rng)?;
        let d = config.encoder.d_model;
        let ls = config.encoder.logstd_init;
        let event_head = MixtureHead::new(&mut params, "event_head", d, vocab.num_targets(), config.mixtures, ls, rng)?;
        let time_head = MixtureHead::new(&mut params, "time_head", d, 1, config.mixtures, ls, rng)?;
        Ok(TesetModel {
            config: config.clone(),
            task: Task::Joint,
            vocab,
            time_scale,
            params,
            stack,
            event_head,
            time_head,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.vocab.num_targets()
    }

    pub fn embeddings(&self) -> EmbeddingTable {
        EmbeddingTable::from_tensor(self.params.get(self.stack.embedding).clone()).expect("2-d table")
    }

    pub fn set_embeddings(&mut self, table: &EmbeddingTable) -> Result<()> {
        let cur = self.params.get(self.stack.embedding);
        if table.weights().shape() != cur.shape() {
            return Err(Error::Shape {
                op: "set_embeddings",
                lhs: cur.shape().to_vec(),
                rhs: table.weights().shape().to_vec(),
            });
        }
        *self.params.get_mut(self.stack.embedding) = table.weights().clone();
        Ok(())
    }

    pub fn freeze_embeddings(&mut self, frozen: bool) {
        self.params.set_trainable(self.stack.embedding, !frozen);
    }

    /// Builds the input for a history `sets[..cut]` of sequence `seq`.
    ///
    /// `query_time` is a normalized absolute time and is only used by the
    /// event-given-time task.
    pub fn input_for(
        &self,
        corpus: &Corpus,
        seq: usize,
        cut: usize,
        query_time: Option<f64>,
        condition: Option<EventId>,
    ) -> Result<ModelInput> {
        let s = corpus
            .sequences
            .get(seq)
            .ok_or_else(|| Error::invalid(format!("sequence index {seq} out of range")))?;
        if cut == 0 || cut > s.len() {
            return Err(Error::invalid(format!("cut {cut} outside 1..={}", s.len())));
        }
        let times = self.time_scale.normalize(s);
        let t_k = times[cut - 1];
        let origin = match self.config.time_origin {
            TimeOrigin::LastSet => t_k,
            TimeOrigin::SequenceStart => 0.0,
        };
        let query = match self.task {
            Task::EventGivenTime => Some(query_time.ok_or_else(|| Error::invalid("event-given-time input needs a query time"))? - origin),
            _ => None,
        };
        let shifted: Vec<f64> = times[..cut].iter().map(|t| t - origin).collect();
        let condition = match self.task {
            Task::TimeGivenEvent => {
                let c = condition.ok_or_else(|| Error::invalid("time-given-event input needs an event"))?;
                if c >= self.vocab.len() {
                    return Err(Error::UnknownEvent(c));
                }
                Some(c)
            }
            _ => None,
        };
        let tokens = flatten_history(
            &s.sets[..cut],
            &shifted,
            self.vocab.feature_dim(),
            self.config.encoder.max_seq_len,
            query,
        )?;
        Ok(ModelInput {
            tokens,
            t_k,
            condition,
        })
    }

    /// Input and target of a training example. For the time-given-event
    /// task the conditioning event is target position `cond_pos`.
    pub fn prepare(&self, corpus: &Corpus, ex: &Example, cond_pos: usize) -> Result<(ModelInput, ModelTarget)> {
        let s = &corpus.sequences[ex.seq];
        let times = self.time_scale.normalize(s);
        let t_next = times[ex.cut];
        let cond = ex.targets.get(cond_pos).map(|&p| self.vocab.targets()[p]);
        let input = self.input_for(corpus, ex.seq, ex.cut, Some(t_next), cond)?;
        let target = ModelTarget {
            targets: ex.targets.clone(),
            gap: t_next - input.t_k,
            t_next,
        };
        Ok((input, target))
    }

    pub fn bind(&self, g: &mut Graph, noise: Option<&WeightNoise>) -> Result<Bound> {
        bind(&self.params, g, noise)
    }

    /// Sequence summaries `[B, d]` for the event and temporal heads.
    pub fn summaries<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        inputs: &[ModelInput],
        mut drop: Option<&mut DropoutCtx<'_, R>>,
    ) -> Result<(NodeId, NodeId)> {
        if inputs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let table = self.stack.token_table(g, bound)?;
        let mut rows = Vec::with_capacity(inputs.len());
        let mut cond_rows = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let v = self.stack.encode(g, bound, table, &inp.tokens, drop.as_deref_mut())?;
            rows.push(v);
            if let Some(c) = inp.condition {
                let e = g.gather_rows(bound.node(self.stack.embedding), &[c])?;
                cond_rows.push(g.add(v, e)?);
            } else {
                cond_rows.push(v);
            }
        }
        let v = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        let vt = if self.task == Task::TimeGivenEvent {
            if cond_rows.len() == 1 {
                cond_rows[0]
            } else {
                g.concat_rows(&cond_rows)?
            }
        } else {
            v
        };
        Ok((v, vt))
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        inputs: &[ModelInput],
        drop: Option<&mut DropoutCtx<'_, R>>,
    ) -> Result<(MixtureNodes, MixtureNodes)> {
        let (v, vt) = self.summaries(g, bound, inputs, drop)?;
        let ev = self.event_head.forward(g, bound, v)?;
        let tm = self.time_head.forward(g, bound, vt)?;
        Ok((ev, tm))
    }

    /// Forces every weight standard deviation to zero.
    pub fn zero_weight_std(&mut self) {
        for (_, p) in self.params.iter_mut() {
            if p.kind == crate::numcore::ParamKind::BayesLogStd {
                p.value.data_mut().fill(f64::NEG_INFINITY);
            }
        }
    }

    pub fn param_tensor(&self, name: &str) -> Option<&Tensor> {
        self.params.find(name).map(|id| self.params.get(id))
    }
}
