use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelInput, Task, TesetModel};
use crate::dataset::{enumerate_examples, Corpus, EventId};
use crate::encoder::WeightNoise;
use crate::error::{Error, Result};
use crate::heads::{EventPrediction, TimePrediction};
use crate::metrics::{Averaging, EvalReport};
use crate::numcore::{Graph, NodeId};

type NoRng = rand_chacha::ChaCha8Rng;

const EVAL_BATCH: usize = 256;

/// Raw head outputs for a batch: event probabilities and time values.
fn run_once(model: &TesetModel, inputs: &[ModelInput], noise: Option<&WeightNoise>) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, noise)?;
    let (ev, tm) = model.forward::<NoRng>(&mut g, &bound, inputs, None)?;
    let e: NodeId = ev.mix_event(&mut g, None)?;
    let t: NodeId = tm.mix_time(&mut g, None, model.config.time_mode)?;
    let probs = (0..inputs.len()).map(|r| g.value(e).row(r).to_vec()).collect();
    let times = g.value(t).data().to_vec();
    Ok((probs, times))
}

/// Averages `n` weight samples with the mixture noise at zero. Without an
/// rng (or with `n == 0`) the weight means are used.
pub fn predict_batch<R: Rng + ?Sized>(
    model: &TesetModel,
    inputs: &[ModelInput],
    n: usize,
    mut rng: Option<&mut R>,
) -> Result<Vec<(EventPrediction, TimePrediction)>> {
    let mut probs = vec![vec![0.0; model.num_targets()]; inputs.len()];
    let mut times = vec![0.0; inputs.len()];
    for chunk_start in (0..inputs.len()).step_by(EVAL_BATCH) {
        let chunk = &inputs[chunk_start..(chunk_start + EVAL_BATCH).min(inputs.len())];
        let draws = match rng.as_deref_mut() {
            Some(r) if n > 0 => {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    let noise = WeightNoise::sample(&model.params, r);
                    v.push(run_once(model, chunk, Some(&noise))?);
                }
                v
            }
            _ => vec![run_once(model, chunk, None)?],
        };
        let w = 1.0 / draws.len() as f64;
        for (p, t) in &draws {
            for (i, row) in p.iter().enumerate() {
                for (acc, v) in probs[chunk_start + i].iter_mut().zip(row) {
                    *acc += w * v;
                }
                times[chunk_start + i] += w * t[i];
            }
        }
    }
    Ok(probs
        .into_iter()
        .zip(times)
        .zip(inputs)
        .map(|((p, t), inp)| {
            (
                EventPrediction {
                    probs: p,
                    threshold: model.config.threshold,
                },
                TimePrediction::from_output(t, inp.t_k, model.config.time_mode),
            )
        })
        .collect())
}

/// Ensemble prediction of the set following `sets[..cut]`.
pub fn predict_next<R: Rng + ?Sized>(
    model: &TesetModel,
    input: &ModelInput,
    n: usize,
    rng: &mut R,
) -> Result<(EventPrediction, TimePrediction)> {
    if n == 0 {
        return Err(Error::config("train.ensemble_n", "must be at least 1"));
    }
    Ok(predict_batch(model, std::slice::from_ref(input), n, Some(rng))?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum WeightMode {
    Mean,
    Ensemble(usize),
}

/// Scores every valid example of `corpus`.
///
/// The time-given-event task conditions on the lowest target position of
/// each example.
pub fn evaluate<R: Rng + ?Sized>(
    model: &TesetModel,
    corpus: &Corpus,
    mode: WeightMode,
    rng: Option<&mut R>,
    max_examples: Option<usize>,
) -> Result<EvalReport> {
    let mut examples = enumerate_examples(corpus).examples;
    if let Some(m) = max_examples {
        examples.truncate(m);
    }
    if examples.is_empty() {
        return Err(Error::invalid("no valid examples to evaluate"));
    }
    let mut inputs = Vec::with_capacity(examples.len());
    let mut targets = Vec::with_capacity(examples.len());
    for ex in &examples {
        let (i, t) = model.prepare(corpus, ex, 0)?;
        inputs.push(i);
        targets.push(t);
    }
    let preds = match mode {
        WeightMode::Mean => predict_batch::<R>(model, &inputs, 0, None)?,
        WeightMode::Ensemble(n) => predict_batch(model, &inputs, n, rng)?,
    };
    let sets: Vec<(Vec<usize>, Vec<usize>)> = preds
        .iter()
        .zip(&targets)
        .map(|((e, _), t)| (e.discretize(), t.targets.clone()))
        .collect();
    let gaps: Vec<(f64, f64)> = preds.iter().zip(&targets).map(|((_, tp), t)| (tp.gap, t.gap)).collect();
    EvalReport::compute(&sets, &gaps, model.time_scale.unit, Averaging::Micro)
}

/// Probability of each of `events` at every grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCurve {
    /// Normalized absolute times.
    pub grid: Vec<f64>,
    pub events: Vec<EventId>,
    /// `values[e][i]`: probability of `events[e]` at `grid[i]`.
    pub values: Vec<Vec<f64>>,
}

impl IntensityCurve {
    /// Index of the grid time where the mean probability over `events`
    /// (positions into `self.events`) peaks.
    pub fn peak_of_mean(&self, rows: &[usize]) -> Option<usize> {
        if rows.is_empty() || self.grid.is_empty() {
            return None;
        }
        (0..self.grid.len())
            .map(|i| (i, rows.iter().map(|&r| self.values[r][i]).sum::<f64>()))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }

    /// CSV with a `time` column followed by one column per event name.
    /// Times are written in raw corpus units.
    pub fn write_csv(&self, model: &TesetModel, origin: f64, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["time".to_string()];
        header.extend(self.events.iter().map(|&e| model.vocab.name(e).to_string()));
        w.write_record(&header)?;
        for (i, &t) in self.grid.iter().enumerate() {
            let mut rec = vec![format!("{}", origin + model.time_scale.to_raw(t))];
            rec.extend(self.values.iter().map(|row| format!("{}", row[i])));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        w.into_inner()
            .map_err(|e| Error::invalid(e.to_string()))?
            .flush()
            .map_err(|e| Error::io(path, e))
    }
}

/// Event-given-time predictions of `events` over a normalized time grid for
/// the history `sets[..cut]` of sequence `seq`.
#[allow(clippy::too_many_arguments)]
pub fn intensity_curve<R: Rng + ?Sized>(
    model: &TesetModel,
    corpus: &Corpus,
    seq: usize,
    cut: usize,
    events: &[EventId],
    grid: &[f64],
    n: usize,
    rng: Option<&mut R>,
) -> Result<IntensityCurve> {
    if model.task != Task::EventGivenTime {
        return Err(Error::invalid("intensity curves need an event-given-time model"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty time grid"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("time grid must be finite and strictly increasing"));
    }
    let positions = events
        .iter()
        .map(|&e| {
            model
                .vocab
                .target_index(e)
                .ok_or_else(|| Error::invalid(format!("event {e} is not a target event")))
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs = grid
        .iter()
        .map(|&t| model.input_for(corpus, seq, cut, Some(t), None))
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_batch(model, &inputs, n, rng)?;
    let values = positions
        .iter()
        .map(|&p| preds.iter().map(|(e, _)| e.probs[p]).collect())
        .collect();
    Ok(IntensityCurve {
        grid: grid.to_vec(),
        events: events.to_vec(),
        values,
    })
}
