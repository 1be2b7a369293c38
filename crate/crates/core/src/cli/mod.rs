//! Command-line driver. `run` returns the process exit code: 0 on success,
//! 2 on configuration or usage errors, 1 on any other failure.

pub mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{dataset_stats, generate_synthetic, split, write_jsonl, write_vocab, Corpus, Splits, TimeScale};
use crate::embed::{export_embeddings, load_embeddings, save_embeddings, train_embeddings};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_seed};
use crate::train::{
    evaluate, evaluate_baselines, finetune_event_given_time, finetune_time_given_event, intensity_curve, load_model,
    predict_next, save_model, train_teset, GlobalMeanGap, MarginalFrequency, Task, TesetModel, WeightMode,
};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "teset", version, about = "Temporal event-set modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. `--set train.batch_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Corpus JSONL (overrides `data.corpus`).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Vocabulary JSON (overrides `data.vocab`).
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Increase log verbosity.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FinetuneTask {
    EventGivenTime,
    TimeGivenEvent,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted clusters.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        events_per_cluster: Option<usize>,
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Print corpus statistics.
    Stats {
        #[command(flatten)]
        common: Common,
    },
    /// Contrastive pre-training of event embeddings.
    PretrainEmbeddings {
        #[command(flatten)]
        common: Common,
    },
    /// Train the joint next-set and next-time model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pre-trained embedding checkpoint.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Fine-tune for a conditional task; without a checkpoint trains from scratch.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        task: FinetuneTask,
    },
    /// Predict what follows a history.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seq_id: String,
        /// Number of history sets; defaults to the whole sequence.
        #[arg(long)]
        cut: Option<usize>,
        /// Query time in corpus units (event-given-time models).
        #[arg(long)]
        time: Option<f64>,
        /// Event name (time-given-event models).
        #[arg(long)]
        event: Option<String>,
    },
    /// Event probabilities over a time grid.
    Intensity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seq_id: String,
        #[arg(long)]
        cut: Option<usize>,
        /// Comma-separated event names; defaults to every target event.
        #[arg(long, value_delimiter = ',')]
        events: Vec<String>,
        /// Grid step in corpus time units.
        #[arg(long)]
        step: Option<f64>,
        /// Grid extent after the last history set, in corpus time units.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Write a checkpoint's event embeddings as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenSynthetic { common, .. }
            | Command::Stats { common }
            | Command::PretrainEmbeddings { common }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Finetune { common, .. }
            | Command::Predict { common, .. }
            | Command::Intensity { common, .. }
            | Command::ExportEmbeddings { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic { .. } => "gen-synthetic",
            Command::Stats { .. } => "stats",
            Command::PretrainEmbeddings { .. } => "pretrain-embeddings",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Finetune { .. } => "finetune",
            Command::Predict { .. } => "predict",
            Command::Intensity { .. } => "intensity",
            Command::ExportEmbeddings { .. } => "export-embeddings",
        }
    }
}

/// Prints to stdout; a closed pipe is not an error for a CLI.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

fn resolve_config(cmd: &Command) -> Result<RunConfig> {
    let c = cmd.common();
    let mut overrides = Vec::new();
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &c.out {
        overrides.push(format!("out={}", toml_string(o)));
    }
    if let Some(p) = &c.corpus {
        overrides.push(format!("data.corpus={}", toml_string(p)));
    }
    if let Some(p) = &c.vocab {
        overrides.push(format!("data.vocab={}", toml_string(p)));
    }
    if let Command::GenSynthetic {
        clusters,
        events_per_cluster,
        sequences,
        ..
    } = cmd
    {
        for (k, v) in [("num_clusters", clusters), ("events_per_cluster", events_per_cluster), ("num_sequences", sequences)] {
            if let Some(v) = v {
                overrides.push(format!("synthetic.{k}={v}"));
            }
        }
    }
    overrides.extend(c.overrides.iter().cloned());
    config::load(c.config.as_deref(), &overrides)
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    seed: u64,
    crate_version: &'a str,
    config_file: Option<String>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig, cmd: &Command) -> Result<PathBuf> {
    let out = cfg.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let text = config::to_toml(cfg)?;
    let p = out.join("resolved_config.toml");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    let info = RunInfo {
        command: cmd.name(),
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        config_file: cmd.common().config.as_ref().map(|p| p.display().to_string()),
    };
    write_json(&info, &out.join("run.json"))?;
    Ok(out)
}

/// The configured corpus, or the synthetic one when no corpus is given.
fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.data.corpus {
        Some(p) => {
            let (corpus, report) = Corpus::load(p, cfg.data.vocab.as_deref())?;
            for r in &report.rejected {
                log::warn!("line {}: rejected sequence `{}`: {}", r.line, r.seq_id, r.reason);
            }
            for w in &report.warnings {
                log::warn!("{w}");
            }
            Ok(corpus)
        }
        None => Ok(generate_synthetic(&cfg.synthetic)?.corpus),
    }
}

fn splits(cfg: &RunConfig, corpus: &Corpus) -> Result<Splits> {
    split(corpus, cfg.data.train_frac, cfg.data.val_frac, stream_seed(cfg.seed, "split"))
}

fn pick(s: &Splits, name: SplitName) -> &Corpus {
    match name {
        SplitName::Train => &s.train,
        SplitName::Val => &s.val,
        SplitName::Test => &s.test,
    }
}

fn check_vocab(model: &TesetModel, corpus: &Corpus) -> Result<()> {
    if model.vocab.hash() != corpus.vocab.hash() {
        return Err(Error::invalid("checkpoint vocabulary does not match the corpus vocabulary"));
    }
    Ok(())
}

fn find_seq(corpus: &Corpus, id: &str) -> Result<usize> {
    corpus
        .sequences
        .iter()
        .position(|s| s.id == id)
        .ok_or_else(|| Error::invalid(format!("no sequence with id `{id}`")))
}

#[derive(Serialize)]
struct EventProb {
    name: String,
    prob: f64,
}

#[derive(Serialize)]
struct PredictionOut {
    seq_id: String,
    cut: usize,
    predicted: Vec<String>,
    probabilities: Vec<EventProb>,
    gap: f64,
    gap_raw: f64,
    time_raw: f64,
}

fn execute(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg, cmd)?;
    match cmd {
        Command::GenSynthetic { .. } => {
            let syn = generate_synthetic(&cfg.synthetic)?;
            write_jsonl(&syn.corpus, &out.join("corpus.jsonl"))?;
            write_vocab(&syn.corpus.vocab, &out.join("vocab.json"))?;
            write_json(&syn.truth, &out.join("truth.json"))?;
            say!("wrote {} sequences to {}", syn.corpus.len(), out.display());
        }
        Command::Stats { .. } => {
            let corpus = load_corpus(cfg)?;
            let stats = dataset_stats(&corpus)?;
            write_json(&stats, &out.join("stats.json"))?;
            say!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::PretrainEmbeddings { .. } => {
            let corpus = load_corpus(cfg)?;
            let s = splits(cfg, &corpus)?;
            let mut rng = stream(cfg.seed, "pretrain");
            let (table, log) = train_embeddings(&s.train, Some(&s.val), &cfg.pretrain, &mut rng)?;
            save_embeddings(&table, &corpus.vocab, &out.join("embeddings.json"))?;
            export_embeddings(&table, &corpus.vocab, &out.join("embeddings.csv"))?;
            write_json(&log.epochs, &out.join("pretrain_log.json"))?;
            say!("pre-trained {} epochs", log.epochs.len());
        }
        Command::Train { embeddings, .. } => {
            let corpus = load_corpus(cfg)?;
            let s = splits(cfg, &corpus)?;
            let mut rng = stream(cfg.seed, "init");
            let mut model = TesetModel::new(&cfg.model, corpus.vocab.clone(), TimeScale::fit(&s.train), &mut rng)?;
            if let Some(p) = embeddings {
                model.set_embeddings(&load_embeddings(p, &corpus.vocab)?)?;
            }
            let log = train_teset(&mut model, &s.train, Some(&s.val), &cfg.train, &cfg.loss, Some(&out.join("metrics.jsonl")))?;
            save_model(&model, &out.join("model.json"))?;
            let report = evaluate::<crate::rng::StreamRng>(&model, &s.val, WeightMode::Mean, None, cfg.train.max_val_examples)?;
            write_json(&report, &out.join("eval_val.json"))?;
            let base = evaluate_baselines(
                &MarginalFrequency::fit(&s.train)?,
                &GlobalMeanGap::fit(&s.train, &model.time_scale)?,
                &s.val,
                &model.time_scale,
            )?;
            write_json(&base, &out.join("baseline_val.json"))?;
            say!(
                "best epoch {:?}: val dsc {:.4} mae {:.4} (baseline dsc {:.4} mae {:.4})",
                log.best_epoch, report.dsc, report.mae, base.dsc, base.mae
            );
        }
        Command::Evaluate { checkpoint, split: which, .. } => {
            let model = load_model(checkpoint)?;
            let corpus = load_corpus(cfg)?;
            check_vocab(&model, &corpus)?;
            let s = splits(cfg, &corpus)?;
            let c = pick(&s, *which);
            let mean = evaluate::<crate::rng::StreamRng>(&model, c, WeightMode::Mean, None, None)?;
            let mut rng = stream(cfg.seed, "evaluate");
            let ens = evaluate(&model, c, WeightMode::Ensemble(cfg.train.ensemble_n), Some(&mut rng), None)?;
            #[derive(Serialize)]
            struct Out<'a> {
                split: SplitName,
                mean_weights: &'a crate::metrics::EvalReport,
                ensemble: &'a crate::metrics::EvalReport,
                ensemble_n: usize,
            }
            let o = Out {
                split: *which,
                mean_weights: &mean,
                ensemble: &ens,
                ensemble_n: cfg.train.ensemble_n,
            };
            write_json(&o, &out.join("eval.json"))?;
            say!("{}", serde_json::to_string_pretty(&o)?);
        }
        Command::Finetune { checkpoint, task, .. } => {
            let corpus = load_corpus(cfg)?;
            let s = splits(cfg, &corpus)?;
            let (base, train_cfg) = match checkpoint {
                Some(p) => {
                    let m = load_model(p)?;
                    check_vocab(&m, &corpus)?;
                    (m, cfg.train.clone())
                }
                None => {
                    let mut rng = stream(cfg.seed, "init");
                    let m = TesetModel::new(&cfg.model, corpus.vocab.clone(), TimeScale::fit(&s.train), &mut rng)?;
                    // From scratch uses the training rate.
                    let mut tc = cfg.train.clone();
                    tc.finetune_learning_rate = tc.learning_rate;
                    (m, tc)
                }
            };
            let log_path = out.join("metrics.jsonl");
            let (model, _) = match task {
                FinetuneTask::EventGivenTime => finetune_event_given_time(&base, &s.train, Some(&s.val), &train_cfg, &cfg.loss, Some(&log_path))?,
                FinetuneTask::TimeGivenEvent => finetune_time_given_event(&base, &s.train, Some(&s.val), &train_cfg, &cfg.loss, Some(&log_path))?,
            };
            save_model(&model, &out.join("model.json"))?;
            let report = evaluate::<crate::rng::StreamRng>(&model, &s.test, WeightMode::Mean, None, None)?;
            write_json(&report, &out.join("eval_test.json"))?;
            say!("test dsc {:.4} mae {:.4}", report.dsc, report.mae);
        }
        Command::Predict {
            checkpoint,
            seq_id,
            cut,
            time,
            event,
            ..
        } => {
            let model = load_model(checkpoint)?;
            let corpus = load_corpus(cfg)?;
            check_vocab(&model, &corpus)?;
            let si = find_seq(&corpus, seq_id)?;
            let seq = &corpus.sequences[si];
            let cut = cut.unwrap_or(seq.len());
            let origin = seq.sets.first().map_or(0.0, |s| s.timestamp);
            let query = match (model.task, time) {
                (Task::EventGivenTime, Some(t)) => Some(model.time_scale.to_model(t - origin)),
                (Task::EventGivenTime, None) => return Err(Error::config("--time", "required by event-given-time checkpoints")),
                _ => None,
            };
            let cond = match (model.task, event) {
                (Task::TimeGivenEvent, Some(name)) => Some(
                    model
                        .vocab
                        .id_of(name)
                        .ok_or_else(|| Error::config("--event", format!("unknown event `{name}`")))?,
                ),
                (Task::TimeGivenEvent, None) => return Err(Error::config("--event", "required by time-given-event checkpoints")),
                _ => None,
            };
            let input = model.input_for(&corpus, si, cut, query, cond)?;
            let mut rng = stream(cfg.seed, "predict");
            let (ev, tp) = predict_next(&model, &input, cfg.train.ensemble_n, &mut rng)?;
            let name = |pos: usize| model.vocab.name(model.vocab.targets()[pos]).to_string();
            let o = PredictionOut {
                seq_id: seq_id.clone(),
                cut,
                predicted: ev.discretize().into_iter().map(name).collect(),
                probabilities: ev.probs.iter().enumerate().map(|(i, &p)| EventProb { name: name(i), prob: p }).collect(),
                gap: tp.gap,
                gap_raw: model.time_scale.to_raw(tp.gap),
                time_raw: origin + model.time_scale.to_raw(tp.absolute),
            };
            write_json(&o, &out.join("prediction.json"))?;
            say!("{}", serde_json::to_string_pretty(&o)?);
        }
        Command::Intensity {
            checkpoint,
            seq_id,
            cut,
            events,
            step,
            horizon,
            ..
        } => {
            let model = load_model(checkpoint)?;
            let corpus = load_corpus(cfg)?;
            check_vocab(&model, &corpus)?;
            let si = find_seq(&corpus, seq_id)?;
            let seq = &corpus.sequences[si];
            let cut = cut.unwrap_or(seq.len());
            let ids = if events.is_empty() {
                model.vocab.targets().to_vec()
            } else {
                events
                    .iter()
                    .map(|n| model.vocab.id_of(n).ok_or_else(|| Error::config("--events", format!("unknown event `{n}`"))))
                    .collect::<Result<Vec<_>>>()?
            };
            let max_gap = corpus
                .sequences
                .iter()
                .flat_map(|s| s.sets.windows(2).map(|w| w[1].timestamp - w[0].timestamp))
                .fold(0.0f64, f64::max);
            let horizon = horizon.unwrap_or(if max_gap > 0.0 { max_gap } else { model.time_scale.unit });
            let step = step.unwrap_or(horizon / 50.0);
            if !(step > 0.0 && horizon > 0.0) {
                return Err(Error::config("--step", "grid step and horizon must be positive"));
            }
            let times = model.time_scale.normalize(seq);
            let t_k = times[cut.clamp(1, seq.len()) - 1];
            let n_points = (horizon / step).floor() as usize;
            let grid: Vec<f64> = (1..=n_points).map(|i| t_k + model.time_scale.to_model(i as f64 * step)).collect();
            let mut rng = stream(cfg.seed, "intensity");
            let curve = intensity_curve(&model, &corpus, si, cut, &ids, &grid, cfg.train.ensemble_n, Some(&mut rng))?;
            let origin = seq.sets.first().map_or(0.0, |s| s.timestamp);
            curve.write_csv(&model, origin, &out.join("intensity.csv"))?;
            say!("wrote {} x {} intensity grid", ids.len(), grid.len());
        }
        Command::ExportEmbeddings { checkpoint, .. } => {
            let model = load_model(checkpoint)?;
            export_embeddings(&model.embeddings(), &model.vocab, &out.join("embeddings.csv"))?;
            say!("wrote {}", out.join("embeddings.csv").display());
        }
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.command.common().verbose);
    let result = resolve_config(&cli.command).and_then(|cfg| execute(&cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
