use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, Task, TesetModel};
use crate::dataset::{TimeScale, Vocabulary};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_FORMAT: &str = "teset-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    value: Tensor,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    crate_version: String,
    config: ModelConfig,
    task: Task,
    vocab: Vocabulary,
    vocab_hash: String,
    time_scale: TimeScale,
    params: Vec<NamedTensor>,
}

pub fn save_model(model: &TesetModel, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: model.config.clone(),
        task: model.task,
        vocab: model.vocab.clone(),
        vocab_hash: model.vocab.hash(),
        time_scale: model.time_scale,
        params: model
            .params
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                value: p.value.clone(),
            })
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), &ck)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TesetModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    let bad = |why: String| Error::invalid(format!("{}: {why}", path.display()));
    if ck.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unknown format `{}`", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {}", ck.version)));
    }
    let mut vocab = ck.vocab;
    vocab.reindex()?;
    if vocab.hash() != ck.vocab_hash {
        return Err(bad("vocabulary hash mismatch".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = TesetModel::new(&ck.config, vocab, ck.time_scale, &mut rng)?;
    model.task = ck.task;
    if ck.params.len() != model.params.len() {
        return Err(bad(format!("expected {} parameters, found {}", model.params.len(), ck.params.len())));
    }
    for nt in ck.params {
        let id = model
            .params
            .find(&nt.name)
            .ok_or_else(|| bad(format!("unexpected parameter `{}`", nt.name)))?;
        let slot = model.params.get_mut(id);
        if slot.shape() != nt.value.shape() {
            return Err(bad(format!("parameter `{}` has shape {:?}, expected {:?}", nt.name, nt.value.shape(), slot.shape())));
        }
        *slot = nt.value;
    }
    Ok(model)
}
