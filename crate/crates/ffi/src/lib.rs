//! C ABI over a trained checkpoint.
//!
//! Every fallible call returns a [`TesetStatus`]. On failure the message is
//! available from [`teset_last_error`] on the same thread until the next
//! failing call. Handles are opaque and must be released with
//! [`teset_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teset::dataset::{Corpus, EventSet, Sequence};
use teset::train::{load_model, predict_batch, Task};
use teset::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TesetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Shape = 6,
    UnknownEvent = 7,
    NonFinite = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// Opaque loaded model.
pub struct TesetModel {
    inner: teset::train::TesetModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> TesetStatus {
    match e {
        Error::Shape { .. } => TesetStatus::Shape,
        Error::Config { .. } => TesetStatus::Config,
        Error::NonFinite { .. } => TesetStatus::NonFinite,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => TesetStatus::Parse,
        Error::UnknownEvent(_) => TesetStatus::UnknownEvent,
        Error::Invalid(_) => TesetStatus::InvalidArgument,
        Error::Io { .. } => TesetStatus::Io,
    }
}

struct Failure(TesetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TesetStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TesetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TesetStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            TesetStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn teset_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn teset_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint written by `teset train` or `teset finetune`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn teset_model_load(path: *const c_char, out: *mut *mut TesetModel) -> TesetStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(TesetStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = load_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(TesetModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`teset_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn teset_model_free(model: *mut TesetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of events in the vocabulary (valid history ids are `0..n`).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn teset_model_num_events(model: *const TesetModel, out: *mut usize) -> TesetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.vocab.len();
        Ok(())
    })
}

/// Length of the probability vector written by [`teset_predict_next`].
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn teset_model_num_targets(model: *const TesetModel, out: *mut usize) -> TesetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.num_targets();
        Ok(())
    })
}

/// Event id of target position `pos`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn teset_model_target_event(model: *const TesetModel, pos: usize, out: *mut usize) -> TesetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let id = *m
            .inner
            .vocab
            .targets()
            .get(pos)
            .ok_or_else(|| Failure(TesetStatus::InvalidArgument, format!("target position {pos} out of range")))?;
        *out.as_mut().ok_or_else(|| null("out"))? = id;
        Ok(())
    })
}

/// Predicts the set following a history.
///
/// The history has `num_sets` sets. Set `j` has `set_sizes[j]` event ids,
/// taken consecutively from `items`, and occurs at `timestamps[j]` in
/// corpus time units. Timestamps must be non-decreasing.
///
/// `query_time` is the absolute time queried by event-given-time
/// checkpoints and is ignored otherwise (pass NaN). `condition` is the event
/// id given to time-given-event checkpoints; pass a negative value
/// otherwise. `samples` weight draws are averaged using `seed`, and zero
/// uses the weight means.
///
/// Writes `num_targets` probabilities to `out_probs` and the predicted gap
/// after the last set, in corpus time units, to `out_gap`.
///
/// # Safety
/// Array arguments must point to the stated number of readable values,
/// `out_probs` to `out_len` writable values, and `out_gap` to one.
#[no_mangle]
pub unsafe extern "C" fn teset_predict_next(
    model: *const TesetModel,
    items: *const usize,
    num_items: usize,
    set_sizes: *const usize,
    timestamps: *const f64,
    num_sets: usize,
    query_time: f64,
    condition: i64,
    samples: usize,
    seed: u64,
    out_probs: *mut f64,
    out_len: usize,
    out_gap: *mut f64,
) -> TesetStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let items = slice(items, num_items, "items")?;
        let sizes = slice(set_sizes, num_sets, "set_sizes")?;
        let times = slice(timestamps, num_sets, "timestamps")?;
        if out_probs.is_null() {
            return Err(null("out_probs"));
        }
        if out_gap.is_null() {
            return Err(null("out_gap"));
        }
        let nt = m.num_targets();
        if out_len < nt {
            return Err(Failure(TesetStatus::InvalidArgument, format!("out_len {out_len} is below the {nt} targets")));
        }
        if num_sets == 0 {
            return Err(Failure(TesetStatus::InvalidArgument, "history has no sets".into()));
        }
        if sizes.iter().sum::<usize>() != items.len() {
            return Err(Failure(TesetStatus::Shape, "set sizes do not add up to num_items".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Failure(TesetStatus::InvalidArgument, "timestamps must be finite and non-decreasing".into()));
        }
        let mut sets = Vec::with_capacity(num_sets);
        let mut at = 0;
        for (&n, &t) in sizes.iter().zip(times) {
            sets.push(EventSet::new(items[at..at + n].to_vec(), t));
            at += n;
        }
        let origin = times[0];
        let corpus = Corpus::new(
            vec![Sequence {
                id: "ffi".into(),
                sets,
            }],
            m.vocab.clone(),
        );
        let query = match m.task {
            Task::EventGivenTime if query_time.is_finite() => Some(m.time_scale.to_model(query_time - origin)),
            Task::EventGivenTime => return Err(Failure(TesetStatus::InvalidArgument, "event-given-time checkpoints need a finite query_time".into())),
            _ => None,
        };
        let cond = match m.task {
            Task::TimeGivenEvent if condition >= 0 => Some(condition as usize),
            Task::TimeGivenEvent => return Err(Failure(TesetStatus::InvalidArgument, "time-given-event checkpoints need a condition event".into())),
            _ => None,
        };
        let input = m.input_for(&corpus, 0, num_sets, query, cond)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ev, tp) = predict_batch(m, std::slice::from_ref(&input), samples, Some(&mut rng))?.remove(0);
        std::slice::from_raw_parts_mut(out_probs, nt).copy_from_slice(&ev.probs);
        *out_gap = m.time_scale.to_raw(tp.gap);
        Ok(())
    })
}

/// Dice similarity of two id sets; two empty sets score 1.
///
/// # Safety
/// Arrays must point to the stated number of readable values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn teset_dice_score(pred: *const usize, num_pred: usize, truth: *const usize, num_truth: usize, out: *mut f64) -> TesetStatus {
    guard(|| {
        let p = slice(pred, num_pred, "pred")?;
        let t = slice(truth, num_truth, "truth")?;
        *out.as_mut().ok_or_else(|| null("out"))? = teset::metrics::dice_score(p, t);
        Ok(())
    })
}
