use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelInput, ModelTarget, Task, TesetModel};
use super::predict::{evaluate, WeightMode};
use crate::dataset::{enumerate_examples, example_at, Corpus, Example};
use crate::encoder::{kl_to_standard_normal, WeightNoise};
use crate::error::{Error, Result};
use crate::loss::{combined_loss_graph, LossConfig};
use crate::numcore::{adam_step, AdamConfig, AdamState, DropoutCtx, Graph, Tensor};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub finetune_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a better validation score before stopping.
    pub patience: usize,
    /// Optimizer steps per epoch; by default enough batches to cover the
    /// training examples once.
    pub steps_per_epoch: Option<usize>,
    pub ensemble_n: usize,
    pub kl_weight: f64,
    pub freeze_embeddings: bool,
    /// Caps the validation examples scored each epoch.
    pub max_val_examples: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            finetune_learning_rate: 0.0003,
            batch_size: 512,
            max_epochs: 100,
            patience: 10,
            steps_per_epoch: None,
            ensemble_n: 5,
            kl_weight: 1e-5,
            freeze_embeddings: false,
            max_val_examples: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("train.learning_rate", self.learning_rate), ("train.finetune_learning_rate", self.finetune_learning_rate), ("train.kl_weight", self.kl_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be finite and non-negative"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.ensemble_n == 0 {
            return Err(Error::config("train.ensemble_n", "must be at least 1"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::config("train.steps_per_epoch", "must be positive"));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub bce: f64,
    pub dice: f64,
    pub huber: f64,
    pub kl: f64,
    pub val_dsc: f64,
    pub val_f_score: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Combined loss after every optimizer step.
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|e| self.epochs.iter().find(|r| r.epoch == e))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.epochs {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Streams {
    data: StreamRng,
    weights: StreamRng,
    dropout: StreamRng,
    mixture: StreamRng,
}

impl Streams {
    fn new(seed: u64, task: Task) -> Self {
        let tag = match task {
            Task::Joint => "train",
            Task::EventGivenTime => "finetune.event",
            Task::TimeGivenEvent => "finetune.time",
        };
        Streams {
            data: stream(seed, &format!("{tag}.data")),
            weights: stream(seed, &format!("{tag}.weights")),
            dropout: stream(seed, &format!("{tag}.dropout")),
            mixture: stream(seed, &format!("{tag}.mixture")),
        }
    }
}

/// Sequence uniformly, then cut uniformly in `[1, |S|−1]`; invalid cuts
/// are redrawn.
fn sample_example<R: Rng + ?Sized>(corpus: &Corpus, eligible: &[usize], rng: &mut R) -> Option<Example> {
    for _ in 0..1000 {
        let seq = eligible[rng.gen_range(0..eligible.len())];
        let len = corpus.sequences[seq].len();
        let cut = rng.gen_range(1..len);
        if let Some(ex) = example_at(corpus, seq, cut) {
            return Some(ex);
        }
    }
    None
}

/// Higher is better.
fn selection_score(task: Task, dsc: f64, mae: f64) -> f64 {
    match task {
        Task::TimeGivenEvent => -mae,
        _ => dsc,
    }
}

/// Trains `model` for its current task and keeps the best validated
/// parameters. The loss weights decide which objectives are active.
pub fn train_model(
    model: &mut TesetModel,
    train: &Corpus,
    val: Option<&Corpus>,
    config: &TrainConfig,
    loss_cfg: &LossConfig,
    learning_rate: f64,
    log_path: Option<&Path>,
) -> Result<TrainLog> {
    config.validate()?;
    loss_cfg.validate()?;
    if train.vocab.hash() != model.vocab.hash() {
        return Err(Error::invalid("training corpus vocabulary differs from the model's"));
    }
    let all = enumerate_examples(train);
    if all.examples.is_empty() {
        return Err(Error::invalid("training corpus has no valid examples"));
    }
    let eligible: Vec<usize> = all
        .examples
        .iter()
        .map(|e| e.seq)
        .fold(Vec::new(), |mut v, s| {
            if v.last() != Some(&s) {
                v.push(s);
            }
            v
        });
    let val = val.filter(|v| !enumerate_examples(v).examples.is_empty()).unwrap_or(train);
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| all.examples.len().div_ceil(config.batch_size));
    model.freeze_embeddings(config.freeze_embeddings);

    let mut rngs = Streams::new(config.seed, model.task);
    let mut adam = AdamState::new(AdamConfig::with_lr(learning_rate), &model.params);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, crate::numcore::ParamSet)> = None;
    let mut since_best = 0;
    let nt = model.num_targets();
    let drop_p = model.config.encoder.dropout;

    for epoch in 0..config.max_epochs {
        let mut sums = [0.0f64; 5];
        for step in 0..steps {
            let mut inputs: Vec<ModelInput> = Vec::with_capacity(config.batch_size);
            let mut targets: Vec<ModelTarget> = Vec::with_capacity(config.batch_size);
            for _ in 0..config.batch_size {
                let ex = sample_example(train, &eligible, &mut rngs.data)
                    .ok_or_else(|| Error::invalid("could not sample a valid training example"))?;
                let cond = if model.task == Task::TimeGivenEvent {
                    rngs.data.gen_range(0..ex.targets.len())
                } else {
                    0
                };
                let (i, t) = model.prepare(train, &ex, cond)?;
                inputs.push(i);
                targets.push(t);
            }
            let b = inputs.len();
            let noise = WeightNoise::sample(&model.params, &mut rngs.weights);
            let mut g = Graph::new();
            let bound = model.bind(&mut g, Some(&noise))?;
            let mut ctx = DropoutCtx {
                p: drop_p,
                rng: &mut rngs.dropout,
            };
            let drop = (drop_p > 0.0).then_some(&mut ctx);
            let (ev, tm) = model.forward(&mut g, &bound, &inputs, drop)?;
            let e_eps = model.event_head.sample_eps(b, &mut rngs.mixture);
            let t_eps = model.time_head.sample_eps(b, &mut rngs.mixture);
            let e = ev.mix_event(&mut g, Some(&e_eps))?;
            let t = tm.mix_time(&mut g, Some(&t_eps), model.config.time_mode)?;
            let ev_target: Vec<f64> = targets.iter().flat_map(|t| t.event_vector(nt)).collect();
            let ev_target = g.constant(Tensor::new(vec![b, nt], ev_target)?);
            let t_target: Vec<f64> = targets
                .iter()
                .map(|t| match model.config.time_mode {
                    crate::heads::TimeMode::Gap => t.gap,
                    crate::heads::TimeMode::Absolute => t.t_next,
                })
                .collect();
            let t_target = g.constant(Tensor::new(vec![b, 1], t_target)?);
            let l = combined_loss_graph(&mut g, e, ev_target, t, t_target, loss_cfg)?;
            let mut total = l.total;
            let mut kl_value = 0.0;
            if config.kl_weight > 0.0 {
                if let Some(kl) = kl_to_standard_normal(&model.params, &mut g, &bound)? {
                    kl_value = g.value(kl).item();
                    let k = g.scale(kl, config.kl_weight);
                    total = g.add(total, k)?;
                }
            }
            let value = g.value(total).item();
            let parts = [g.value(l.bce).item(), g.value(l.dice).item(), g.value(l.huber).item(), kl_value];
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: format!(
                        "training loss at epoch {epoch} step {step} (bce {}, dice {}, huber {}, kl {})",
                        parts[0], parts[1], parts[2], parts[3]
                    ),
                });
            }
            g.backward(total)?;
            let grads = model.params.collect_grads(&g, &bound.leaves);
            adam_step(&mut model.params, &grads, &mut adam)?;
            log.step_losses.push(value);
            sums[0] += value;
            for (s, p) in sums[1..].iter_mut().zip(parts) {
                *s += p;
            }
        }
        let report = evaluate::<StreamRng>(model, val, WeightMode::Mean, None, config.max_val_examples)?;
        let n = steps as f64;
        let rec = EpochRecord {
            epoch,
            steps,
            loss: sums[0] / n,
            bce: sums[1] / n,
            dice: sums[2] / n,
            huber: sums[3] / n,
            kl: sums[4] / n,
            val_dsc: report.dsc,
            val_f_score: report.f_score,
            val_mae: report.mae,
            val_rmse: report.rmse,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val dsc {:.4} mae {:.4}",
            rec.loss,
            rec.val_dsc,
            rec.val_mae
        );
        let score = selection_score(model.task, rec.val_dsc, rec.val_mae);
        log.epochs.push(rec);
        if let Some(p) = log_path {
            log.write_jsonl(p)?;
        }
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model.params.clone()));
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.freeze_embeddings(false);
    Ok(log)
}

/// Joint next-set and next-time training.
pub fn train_teset(
    model: &mut TesetModel,
    train: &Corpus,
    val: Option<&Corpus>,
    config: &TrainConfig,
    loss_cfg: &LossConfig,
    log_path: Option<&Path>,
) -> Result<TrainLog> {
    model.task = Task::Joint;
    train_model(model, train, val, config, loss_cfg, config.learning_rate, log_path)
}
