//! Run configuration: defaults, a TOML file, then `--set key=value`
//! overrides, in increasing precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticSpec;
use crate::embed::PretrainConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::rng::stream_seed;
use crate::train::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// JSONL corpus; when absent a synthetic corpus is generated.
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            vocab: None,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    pub pretrain: PretrainConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            synthetic: SyntheticSpec::default(),
            pretrain: PretrainConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Reuse the TOML value grammar; anything else is a bare string.
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), format!("cannot read config file: {e}")))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(path.display().to_string(), format!("invalid TOML: {e}")))
}

/// Resolves a configuration table against the defaults and validates it.
pub fn resolve(table: toml::Table) -> Result<RunConfig> {
    let explicit = |section: &str, key: &str| {
        table
            .get(section)
            .and_then(toml::Value::as_table)
            .is_some_and(|t| t.contains_key(key))
    };
    let explicit_dim = explicit("pretrain", "dim");
    let explicit_syn_seed = explicit("synthetic", "seed");
    let explicit_train_seed = explicit("train", "seed");
    let mut unknown = Vec::new();
    let de = toml::Value::Table(table);
    let mut track = serde_path_to_error::Track::new();
    let inner = serde_path_to_error::Deserializer::new(de, &mut track);
    let cfg: RunConfig = serde_ignored::deserialize(inner, |path| unknown.push(path.to_string()))
        .map_err(|e: toml::de::Error| Error::config(track.path().to_string(), e.message().to_string()))?;
    if let Some(k) = unknown.first() {
        return Err(Error::config(k.clone(), "unknown configuration key"));
    }
    let mut cfg = cfg;
    if !explicit_syn_seed {
        cfg.synthetic.seed = derived_seed(cfg.seed, "synthetic");
    }
    if !explicit_train_seed {
        cfg.train.seed = derived_seed(cfg.seed, "train");
    }
    if !explicit_dim {
        cfg.pretrain.dim = cfg.model.encoder.d_model;
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// Kept below 2^63 so the resolved config stays representable in TOML.
fn derived_seed(master: u64, name: &str) -> u64 {
    stream_seed(master, name) >> 1
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    for (key, p) in [("data.corpus", &cfg.data.corpus), ("data.vocab", &cfg.data.vocab)] {
        if let Some(p) = p {
            if !p.exists() {
                return Err(Error::config(key, format!("{} does not exist", p.display())));
            }
        }
    }
    if cfg.data.vocab.is_some() && cfg.data.corpus.is_none() {
        return Err(Error::config("data.vocab", "given without data.corpus"));
    }
    if !(cfg.data.train_frac > 0.0 && cfg.data.train_frac < 1.0) {
        return Err(Error::config("data.train_frac", "must lie in (0, 1)"));
    }
    if !(cfg.data.val_frac > 0.0 && cfg.data.val_frac < 1.0) {
        return Err(Error::config("data.val_frac", "must lie in (0, 1)"));
    }
    if cfg.data.corpus.is_none() {
        cfg.synthetic.validate()?;
    }
    cfg.pretrain.validate()?;
    cfg.model.validate()?;
    cfg.loss.validate()?;
    cfg.train.validate()?;
    if cfg.pretrain.dim != cfg.model.encoder.d_model {
        return Err(Error::config(
            "pretrain.dim",
            format!("{} differs from model.encoder.d_model {}", cfg.pretrain.dim, cfg.model.encoder.d_model),
        ));
    }
    Ok(())
}

/// File (if any) plus overrides, resolved.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    resolve(table)
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
}
