//! Contrastive pre-training of event embeddings.
//!
//! Each event set yields one triplet per pass: an anchor and a positive drawn
//! from the set, and a negative drawn from the events outside it. The
//! embedding table is trained to maximize
//! `log σ(a·p) + log(1 − σ(a·n))`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, EventId, EventSet, Vocabulary};
use crate::error::{Error, Result};
use crate::numcore::{adam_step, log_sigmoid, AdamConfig, AdamState, Graph, NodeId, ParamId, ParamSet, Tensor};

pub const DEFAULT_DIM: usize = 100;
pub const INIT_STD: f64 = 0.1;

/// One embedding row per event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    weights: Tensor,
}

impl EmbeddingTable {
    pub fn init<R: Rng + ?Sized>(num_events: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        EmbeddingTable {
            weights: Tensor::randn(&[num_events, dim], std, rng),
        }
    }

    pub fn from_tensor(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Shape {
                op: "embedding table",
                lhs: weights.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(EmbeddingTable { weights })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn encode_event(&self, id: EventId) -> Result<&[f64]> {
        if id >= self.len() {
            return Err(Error::UnknownEvent(id));
        }
        Ok(self.weights.row(id))
    }

    pub fn encode_set(&self, ids: &[EventId]) -> Result<Vec<Vec<f64>>> {
        ids.iter().map(|&i| self.encode_event(i).map(<[f64]>::to_vec)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: EventId,
    pub positive: EventId,
    pub negative: EventId,
}

/// `Ok(None)` for singleton sets, which cannot supply a positive.
pub fn sample_triplet<R: Rng + ?Sized>(set: &EventSet, vocab: &Vocabulary, rng: &mut R) -> Result<Option<Triplet>> {
    let items = &set.items;
    if items.len() < 2 {
        return Ok(None);
    }
    if items.len() >= vocab.len() {
        return Err(Error::invalid("event set covers the whole vocabulary; no negative exists"));
    }
    let a = rng.gen_range(0..items.len());
    let mut p = rng.gen_range(0..items.len() - 1);
    if p >= a {
        p += 1;
    }
    let negative = if 2 * items.len() <= vocab.len() {
        loop {
            let n = rng.gen_range(0..vocab.len());
            if !items.contains(&n) {
                break n;
            }
        }
    } else {
        let inside: HashSet<EventId> = items.iter().copied().collect();
        let rest: Vec<EventId> = (0..vocab.len()).filter(|e| !inside.contains(e)).collect();
        rest[rng.gen_range(0..rest.len())]
    };
    Ok(Some(Triplet {
        anchor: items[a],
        positive: items[p],
        negative,
    }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log σ(va·vp) + log(1 − σ(va·vn))`; always ≤ 0.
pub fn aux_loss(va: &[f64], vp: &[f64], vn: &[f64]) -> f64 {
    log_sigmoid(dot(va, vp)) + log_sigmoid(-dot(va, vn))
}

/// Mean of `−L_aux` over a batch of triplets, on the tape.
pub fn neg_aux_loss_graph(g: &mut Graph, table: NodeId, batch: &[Triplet]) -> Result<NodeId> {
    let ids = |f: fn(&Triplet) -> EventId| batch.iter().map(f).collect::<Vec<_>>();
    let va = g.gather_rows(table, &ids(|t| t.anchor))?;
    let vp = g.gather_rows(table, &ids(|t| t.positive))?;
    let vn = g.gather_rows(table, &ids(|t| t.negative))?;
    let ap = g.mul(va, vp)?;
    let ap = g.sum_cols(ap);
    let an = g.mul(va, vn)?;
    let an = g.sum_cols(an);
    let an = g.neg(an);
    let lp = g.log_sigmoid(ap);
    let ln = g.log_sigmoid(an);
    let l = g.add(lp, ln)?;
    let m = g.mean(l);
    Ok(g.neg(m))
}

fn mean_neg_aux(table: &EmbeddingTable, triplets: &[Triplet]) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let w = &table.weights;
    let total: f64 = triplets
        .iter()
        .map(|t| -aux_loss(w.row(t.anchor), w.row(t.positive), w.row(t.negative)))
        .sum();
    total / triplets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once validation loss has improved by less than
    /// `min_improvement` over this many epochs.
    pub patience: usize,
    pub min_improvement: f64,
    pub init_std: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            dim: DEFAULT_DIM,
            learning_rate: 0.0005,
            batch_size: 128,
            max_epochs: 200,
            patience: 5,
            min_improvement: 1e-4,
            init_std: INIT_STD,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("pretrain.dim", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("pretrain.learning_rate", "must be finite and non-negative"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("pretrain.init_std", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epochs: Vec<PretrainEpoch>,
    pub skipped_singletons: usize,
    /// `−L_aux` after every optimizer step.
    pub step_losses: Vec<f64>,
}

fn multi_item_sets(corpus: &Corpus) -> (Vec<&EventSet>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for s in corpus.sequences.iter().flat_map(|q| q.sets.iter()) {
        if s.items.len() >= 2 {
            out.push(s);
        } else {
            skipped += 1;
        }
    }
    (out, skipped)
}

/// Trains a fresh table on the event sets of `train`.
///
/// Validation triplets are drawn once from `val` (or from `train` when no
/// validation corpus is given) and reused every epoch.
pub fn train_embeddings<R: Rng + ?Sized>(
    train: &Corpus,
    val: Option<&Corpus>,
    config: &PretrainConfig,
    rng: &mut R,
) -> Result<(EmbeddingTable, PretrainLog)> {
    let table = EmbeddingTable::init(train.vocab.len(), config.dim, config.init_std, rng);
    continue_embeddings(table, train, val, config, rng)
}

/// As [`train_embeddings`], starting from an existing table.
pub fn continue_embeddings<R: Rng + ?Sized>(
    table: EmbeddingTable,
    train: &Corpus,
    val: Option<&Corpus>,
    config: &PretrainConfig,
    rng: &mut R,
) -> Result<(EmbeddingTable, PretrainLog)> {
    config.validate()?;
    if table.len() != train.vocab.len() {
        return Err(Error::Shape {
            op: "train_embeddings",
            lhs: vec![table.len(), table.dim()],
            rhs: vec![train.vocab.len()],
        });
    }
    let (sets, skipped) = multi_item_sets(train);
    if sets.is_empty() {
        return Err(Error::invalid("no event set with two or more items; contrastive signal undefined"));
    }
    let val_sets = match val {
        Some(v) => multi_item_sets(v).0,
        None => sets.clone(),
    };
    let mut val_triplets = Vec::with_capacity(val_sets.len());
    for s in &val_sets {
        if let Some(t) = sample_triplet(s, &train.vocab, rng)? {
            val_triplets.push(t);
        }
    }

    let mut params = ParamSet::new();
    let pid: ParamId = params.add("embedding", table.weights);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), &params);
    let mut log = PretrainLog {
        skipped_singletons: skipped,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..sets.len()).collect();
    let mut history: Vec<f64> = Vec::new();
    let mut best: Option<(f64, Tensor)> = None;

    for epoch in 0..config.max_epochs {
        order.shuffle(rng);
        let mut triplets = Vec::with_capacity(order.len());
        for &i in &order {
            if let Some(t) = sample_triplet(sets[i], &train.vocab, rng)? {
                triplets.push(t);
            }
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for batch in triplets.chunks(config.batch_size) {
            let mut g = Graph::new();
            let leaves = params.bind_leaves(&mut g);
            let loss = neg_aux_loss_graph(&mut g, leaves[pid.0], batch)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("contrastive loss at epoch {epoch}"),
                });
            }
            g.backward(loss)?;
            let grads = params.collect_grads(&g, &leaves);
            adam_step(&mut params, &grads, &mut adam)?;
            log.step_losses.push(value);
            epoch_loss += value * batch.len() as f64;
            steps += 1;
        }
        let current = EmbeddingTable {
            weights: params.get(pid).clone(),
        };
        let val_loss = mean_neg_aux(&current, &val_triplets);
        log.epochs.push(PretrainEpoch {
            epoch,
            steps,
            train_loss: epoch_loss / triplets.len().max(1) as f64,
            val_loss,
        });
        log::debug!("pretrain epoch {epoch}: val -L_aux {val_loss:.5}");
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, current.weights));
        }
        history.push(val_loss);
        if history.len() > config.patience {
            let then = history[history.len() - 1 - config.patience];
            let best_recent = history[history.len() - config.patience..]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if then - best_recent < config.min_improvement {
                break;
            }
        }
    }
    let weights = match best {
        Some((_, w)) => w,
        None => params.get(pid).clone(),
    };
    Ok((EmbeddingTable { weights }, log))
}

/// Mean pairwise cosine within clusters minus mean pairwise cosine across.
pub fn cluster_margin(table: &EmbeddingTable, cluster_of: &[usize]) -> f64 {
    let n = table.len().min(cluster_of.len());
    let norms: Vec<f64> = (0..n).map(|i| dot(table.weights.row(i), table.weights.row(i)).sqrt()).collect();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = dot(table.weights.row(i), table.weights.row(j)) / (norms[i] * norms[j]).max(1e-300);
            if cluster_of[i] == cluster_of[j] {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    intra / ni.max(1) as f64 - inter / nx.max(1) as f64
}

/// CSV with header `id,name,v0,...,v{d-1}`.
pub fn export_embeddings(table: &EmbeddingTable, vocab: &Vocabulary, path: &Path) -> Result<()> {
    if table.len() != vocab.len() {
        return Err(Error::Shape {
            op: "export_embeddings",
            lhs: vec![table.len()],
            rhs: vec![vocab.len()],
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["id".to_string(), "name".to_string()];
    header.extend((0..table.dim()).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for id in 0..table.len() {
        let mut rec = vec![id.to_string(), vocab.name(id).to_string()];
        rec.extend(table.weights.row(id).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_embeddings(path: &Path) -> Result<(EmbeddingTable, Vec<String>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let dim = r.headers()?.len().saturating_sub(2);
    let mut names = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + 2,
            reason,
        };
        if rec.len() != dim + 2 {
            return Err(parse_err(format!("expected {} columns, got {}", dim + 2, rec.len())));
        }
        names.push(rec[1].to_string());
        for v in rec.iter().skip(2) {
            data.push(v.parse::<f64>().map_err(|e| parse_err(e.to_string()))?);
        }
    }
    let table = EmbeddingTable::from_tensor(Tensor::new(vec![names.len(), dim], data)?)?;
    Ok((table, names))
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingCheckpoint {
    format: String,
    version: u32,
    vocab_hash: String,
    weights: Tensor,
}

const EMBED_FORMAT: &str = "teset-embeddings";

pub fn save_embeddings(table: &EmbeddingTable, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let ck = EmbeddingCheckpoint {
        format: EMBED_FORMAT.into(),
        version: 1,
        vocab_hash: vocab.hash(),
        weights: table.weights.clone(),
    };
    serde_json::to_writer(BufWriter::new(file), &ck)?;
    Ok(())
}

/// Loads a table and checks it was trained against `vocab`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ck: EmbeddingCheckpoint = serde_json::from_reader(BufReader::new(file))?;
    if ck.format != EMBED_FORMAT || ck.version != 1 {
        return Err(Error::invalid(format!("{}: not a version-1 embedding checkpoint", path.display())));
    }
    if ck.vocab_hash != vocab.hash() {
        return Err(Error::invalid(format!("{}: vocabulary hash mismatch", path.display())));
    }
    EmbeddingTable::from_tensor(ck.weights)
}
