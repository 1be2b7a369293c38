use std::ffi::{CStr, CString};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teset::dataset::{generate_synthetic, SyntheticSpec, TimeScale};
use teset::encoder::EncoderConfig;
use teset::loss::LossConfig;
use teset::train::{finetune_event_given_time, predict_batch, save_model, train_teset, ModelConfig, TesetModel as Model, TrainConfig};
use teset_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    path: CString,
    model: Model,
    corpus: teset::dataset::Corpus,
}

fn fixture(event_given_time: bool) -> Fixture {
    let corpus = generate_synthetic(&SyntheticSpec {
        num_clusters: 3,
        events_per_cluster: 3,
        num_sequences: 20,
        seed: 2,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .corpus;
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            d_model: 8,
            heads: 2,
            ff_dim: 16,
            ..EncoderConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut model = Model::new(&cfg, corpus.vocab.clone(), TimeScale::fit(&corpus), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 1,
        steps_per_epoch: Some(2),
        ..TrainConfig::default()
    };
    train_teset(&mut model, &corpus, None, &tc, &LossConfig::default(), None).unwrap();
    if event_given_time {
        model = finetune_event_given_time(&model, &corpus, None, &tc, &LossConfig::default(), None).unwrap().0;
    }
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.json");
    save_model(&model, &file).unwrap();
    Fixture {
        path: CString::new(file.to_str().unwrap()).unwrap(),
        _dir: dir,
        model,
        corpus,
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(teset_last_error()) }.to_string_lossy().into_owned()
}

fn load(f: &Fixture) -> *mut TesetModel {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { teset_model_load(f.path.as_ptr(), &mut h) }, TesetStatus::Ok);
    assert!(!h.is_null());
    h
}

/// History of sequence 0 up to `cut`, flattened for the C interface.
fn flat_history(f: &Fixture, cut: usize) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let sets = &f.corpus.sequences[0].sets[..cut];
    (
        sets.iter().flat_map(|s| s.items.iter().copied()).collect(),
        sets.iter().map(|s| s.items.len()).collect(),
        sets.iter().map(|s| s.timestamp).collect(),
    )
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(teset_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn predictions_match_the_library() {
    let f = fixture(false);
    let h = load(&f);
    let mut nt = 0;
    let mut ne = 0;
    unsafe {
        assert_eq!(teset_model_num_targets(h, &mut nt), TesetStatus::Ok);
        assert_eq!(teset_model_num_events(h, &mut ne), TesetStatus::Ok);
    }
    assert_eq!((nt, ne), (9, 9));

    let (items, sizes, times) = flat_history(&f, 2);
    for samples in [0usize, 3] {
        let mut probs = vec![0.0; nt];
        let mut gap = 0.0;
        let st = unsafe {
            teset_predict_next(h, items.as_ptr(), items.len(), sizes.as_ptr(), times.as_ptr(), 2, f64::NAN, -1, samples, 42, probs.as_mut_ptr(), probs.len(), &mut gap)
        };
        assert_eq!(st, TesetStatus::Ok, "{}", last_error());

        let input = f.model.input_for(&f.corpus, 0, 2, None, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (ev, tp) = predict_batch(&f.model, &[input], samples, Some(&mut rng)).unwrap().remove(0);
        let diff = ev.probs.iter().zip(&probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-12, "samples {samples}: {diff}");
        assert!((gap - f.model.time_scale.to_raw(tp.gap)).abs() <= 1e-12);
    }
    unsafe { teset_model_free(h) };
}

#[test]
fn event_given_time_needs_a_query() {
    let f = fixture(true);
    let h = load(&f);
    let (items, sizes, times) = flat_history(&f, 1);
    let mut probs = vec![0.0; 9];
    let mut gap = 0.0;
    let call = |q: f64, probs: &mut Vec<f64>, gap: &mut f64| unsafe {
        teset_predict_next(h, items.as_ptr(), items.len(), sizes.as_ptr(), times.as_ptr(), 1, q, -1, 0, 0, probs.as_mut_ptr(), probs.len(), gap)
    };
    assert_eq!(call(f64::NAN, &mut probs, &mut gap), TesetStatus::InvalidArgument);
    assert!(last_error().contains("query_time"));
    assert_eq!(call(times[0] + 1.0, &mut probs, &mut gap), TesetStatus::Ok);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    unsafe { teset_model_free(h) };
}

#[test]
fn bad_arguments_report_status_and_message() {
    let f = fixture(false);
    let h = load(&f);
    let mut probs = vec![0.0; 9];
    let mut gap = 0.0;
    unsafe {
        let items = [0usize, 1];
        let sizes = [2usize];
        let t = [0.0];
        assert_eq!(
            teset_predict_next(h, items.as_ptr(), 2, sizes.as_ptr(), t.as_ptr(), 1, f64::NAN, -1, 0, 0, probs.as_mut_ptr(), 3, &mut gap),
            TesetStatus::InvalidArgument
        );
        assert!(last_error().contains("out_len"));
        let sizes = [3usize];
        assert_eq!(
            teset_predict_next(h, items.as_ptr(), 2, sizes.as_ptr(), t.as_ptr(), 1, f64::NAN, -1, 0, 0, probs.as_mut_ptr(), 9, &mut gap),
            TesetStatus::Shape
        );
        let bad = [0usize, 99];
        let sizes = [2usize];
        assert_eq!(
            teset_predict_next(h, bad.as_ptr(), 2, sizes.as_ptr(), t.as_ptr(), 1, f64::NAN, -1, 0, 0, probs.as_mut_ptr(), 9, &mut gap),
            TesetStatus::UnknownEvent
        );
        assert_eq!(
            teset_predict_next(ptr::null(), items.as_ptr(), 2, sizes.as_ptr(), t.as_ptr(), 1, f64::NAN, -1, 0, 0, probs.as_mut_ptr(), 9, &mut gap),
            TesetStatus::NullPointer
        );
        let mut out = 0;
        assert_eq!(teset_model_target_event(h, 100, &mut out), TesetStatus::InvalidArgument);
        assert_eq!(teset_model_target_event(h, 0, &mut out), TesetStatus::Ok);
        teset_model_free(h);
        teset_model_free(ptr::null_mut());
    }
}

#[test]
fn load_failures() {
    let mut h = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { teset_model_load(missing.as_ptr(), &mut h) }, TesetStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/model.json"));
    assert_eq!(unsafe { teset_model_load(ptr::null(), &mut h) }, TesetStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{\"format\": 3}").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { teset_model_load(junk.as_ptr(), &mut h) }, TesetStatus::Parse);
}

#[test]
fn dice_over_the_boundary() {
    let mut out = 0.0;
    let (p, t) = ([1usize, 2, 3], [2usize, 3]);
    unsafe {
        assert_eq!(teset_dice_score(p.as_ptr(), 3, t.as_ptr(), 2, &mut out), TesetStatus::Ok);
        assert!((out - 0.8).abs() < 1e-12);
        assert_eq!(teset_dice_score(ptr::null(), 0, ptr::null(), 0, &mut out), TesetStatus::Ok);
        assert_eq!(out, 1.0);
        assert_eq!(teset_dice_score(ptr::null(), 2, t.as_ptr(), 2, &mut out), TesetStatus::NullPointer);
    }
}
