mod baseline;
mod checkpoint;
mod finetune;
mod model;
mod predict;
mod trainer;

pub use baseline::{evaluate_baselines, GlobalMeanGap, MarginalFrequency};
pub use checkpoint::{load_model, save_model, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use finetune::{finetune_event_given_time, finetune_time_given_event};
pub use model::{ModelConfig, ModelInput, ModelTarget, Task, TesetModel, TimeOrigin};
pub use predict::{evaluate, intensity_curve, predict_batch, predict_next, IntensityCurve, WeightMode};
pub use trainer::{train_model, train_teset, EpochRecord, TrainConfig, TrainLog};
