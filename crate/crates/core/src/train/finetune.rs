use std::path::Path;

use super::model::{Task, TesetModel};
use super::trainer::{train_model, TrainConfig, TrainLog};
use crate::dataset::Corpus;
use crate::error::Result;
use crate::loss::LossConfig;

/// Event set at a known future time. Only the event losses are trained.
pub fn finetune_event_given_time(
    base: &TesetModel,
    train: &Corpus,
    val: Option<&Corpus>,
    config: &TrainConfig,
    loss_cfg: &LossConfig,
    log_path: Option<&Path>,
) -> Result<(TesetModel, TrainLog)> {
    let mut model = base.clone();
    model.task = Task::EventGivenTime;
    let loss = LossConfig {
        lambda3: 0.0,
        ..loss_cfg.clone()
    };
    let log = train_model(&mut model, train, val, config, &loss, config.finetune_learning_rate, log_path)?;
    Ok((model, log))
}

/// Time of a known next event. Only the timing loss is trained.
pub fn finetune_time_given_event(
    base: &TesetModel,
    train: &Corpus,
    val: Option<&Corpus>,
    config: &TrainConfig,
    loss_cfg: &LossConfig,
    log_path: Option<&Path>,
) -> Result<(TesetModel, TrainLog)> {
    let mut model = base.clone();
    model.task = Task::TimeGivenEvent;
    let loss = LossConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..loss_cfg.clone()
    };
    let log = train_model(&mut model, train, val, config, &loss, config.finetune_learning_rate, log_path)?;
    Ok((model, log))
}
