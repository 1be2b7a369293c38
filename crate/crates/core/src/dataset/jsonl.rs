use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Corpus, EventId, EventSet, Sequence, Vocabulary};

#[derive(Debug, Serialize, Deserialize)]
struct RecordEvent {
    t: f64,
    items: Vec<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    seq_id: String,
    events: Vec<RecordEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub seq_id: String,
    pub reason: String,
}

/// Records that parsed but violated a sequence invariant.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub rejected: Vec<Rejection>,
    pub warnings: Vec<String>,
}

fn validate(rec: &Record, vocab: Option<&Vocabulary>, feature_dim: &mut Option<usize>) -> std::result::Result<(), String> {
    let mut prev = f64::NEG_INFINITY;
    for (i, ev) in rec.events.iter().enumerate() {
        if !ev.t.is_finite() || ev.t < 0.0 {
            return Err(format!("event {i}: timestamp {} is not a non-negative number", ev.t));
        }
        if ev.t < prev {
            return Err(format!("event {i}: timestamp {} decreases (previous {prev})", ev.t));
        }
        prev = ev.t;
        if ev.items.is_empty() {
            return Err(format!("event {i}: empty item set"));
        }
        let mut seen = HashSet::with_capacity(ev.items.len());
        for &it in &ev.items {
            if !seen.insert(it) {
                return Err(format!("event {i}: duplicate item {it}"));
            }
            if let Some(v) = vocab {
                if it >= v.len() {
                    return Err(format!("event {i}: item {it} not in vocabulary"));
                }
            }
        }
        if let Some(f) = &ev.features {
            match feature_dim {
                Some(d) if *d != f.len() => {
                    return Err(format!("event {i}: feature length {} != {d}", f.len()));
                }
                None => *feature_dim = Some(f.len()),
                _ => {}
            }
        }
    }
    Ok(())
}

/// Reads a corpus. Lines that are not valid JSON records abort the load;
/// records that break sequence invariants are skipped and reported.
pub fn load_jsonl(path: &Path, vocab: Option<&Vocabulary>) -> Result<(Corpus, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::default();
    let mut sequences = Vec::new();
    let mut feature_dim = vocab.map(|v| v.feature_dim()).filter(|d| *d > 0);
    let mut max_id: Option<EventId> = None;

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        if let Err(reason) = validate(&rec, vocab, &mut feature_dim) {
            log::warn!("{}:{lineno}: rejected record `{}`: {reason}", path.display(), rec.seq_id);
            report.rejected.push(Rejection {
                line: lineno,
                seq_id: rec.seq_id,
                reason,
            });
            continue;
        }
        for ev in &rec.events {
            for &it in &ev.items {
                max_id = Some(max_id.map_or(it, |m| m.max(it)));
            }
        }
        sequences.push(Sequence {
            id: rec.seq_id,
            sets: rec
                .events
                .into_iter()
                .map(|e| EventSet {
                    items: e.items,
                    timestamp: e.t,
                    features: e.features,
                })
                .collect(),
        });
    }

    if sequences.is_empty() {
        let msg = format!("{}: corpus is empty", path.display());
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    if !report.rejected.is_empty() {
        report
            .warnings
            .push(format!("{} record(s) rejected", report.rejected.len()));
    }

    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocabulary::with_size(max_id.map_or(0, |m| m + 1), feature_dim.unwrap_or(0)),
    };
    Ok((Corpus::new(sequences, vocab), report))
}

pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in &corpus.sequences {
        let rec = Record {
            seq_id: seq.id.clone(),
            events: seq
                .sets
                .iter()
                .map(|s| RecordEvent {
                    t: s.timestamp,
                    items: s.items.clone(),
                    features: s.features.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut v: Vocabulary = serde_json::from_reader(BufReader::new(file))?;
    v.reindex()?;
    Ok(v)
}

pub fn write_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), vocab)?;
    Ok(())
}
