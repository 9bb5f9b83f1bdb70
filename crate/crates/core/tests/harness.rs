use std::fs;
use std::path::Path;

use cadenza_core::dsp::Stem;
use cadenza_core::error::HarnessError;
use cadenza_core::harness::{analysis_report, evaluate_run, leaderboard, produce_submission, EvaluateOptions};
use cadenza_core::metrics::{builtin_metric, EvaluationRecord, RecordStatus};
use cadenza_core::enhancer::System;
use cadenza_core::scene::{build_scene_dataset, Dataset, DatasetConfig, ListenerPolicy, Mode};
use cadenza_core::synth::{synthetic_hrir_sets, synthetic_listeners, synthetic_tracks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_dataset(root: &Path) -> Dataset {
    let fs = 16_000;
    let cfg = DatasetConfig {
        scenes: Some(3),
        listeners: ListenerPolicy { per_scene: Some(2) },
        ..DatasetConfig::new(Mode::Icassp24)
    };
    build_scene_dataset(
        &synthetic_tracks(2, fs, 21.0, 1),
        &synthetic_listeners(3),
        &synthetic_hrir_sets(2, fs, 1),
        &cfg,
        1,
        root,
    )
    .unwrap();
    Dataset::open(root).unwrap()
}

#[test]
fn evaluation_requires_validation_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = small_dataset(&tmp.path().join("data"));
    let sub = tmp.path().join("sub");
    produce_submission(&dataset, &System::Passthrough, "pass", &sub).unwrap();
    let opts = EvaluateOptions::default();
    let full = evaluate_run(&sub, &dataset, &builtin_metric(), &opts).unwrap();
    assert!(full.validation.pass);
    assert_eq!(full.records.len(), 6);
    assert_eq!(full.failures(), 0);

    let (scene, listener) = dataset.pairs()[1].clone();
    fs::remove_file(sub.join(format!("{scene}_{listener}_remix.wav"))).unwrap();
    let err = evaluate_run(&sub, &dataset, &builtin_metric(), &opts).unwrap_err();
    assert!(matches!(err, HarnessError::NotValidated(_)), "{err}");

    let forced = evaluate_run(
        &sub,
        &dataset,
        &builtin_metric(),
        &EvaluateOptions {
            force: true,
            ..opts.clone()
        },
    )
    .unwrap();
    assert!(!forced.validation.pass);
    assert_eq!(forced.validation.missing.len(), 1);
    assert_eq!(forced.records.len(), 6);
    assert_eq!(forced.failures(), 1);
    let failed = forced.records.iter().find(|r| !r.is_ok()).unwrap();
    assert_eq!((failed.scene_id.as_str(), failed.listener_id.as_str()), (scene.as_str(), listener.as_str()));
    assert_eq!(failed.remix_score, None);
    let untouched: Vec<_> = full.records.iter().filter(|r| r.listener_id != listener || r.scene_id != scene).collect();
    let rescored: Vec<_> = forced.records.iter().filter(|r| r.is_ok()).collect();
    assert_eq!(untouched, rescored);
}

#[test]
fn missing_reference_stems_stop_the_run_before_scoring() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = small_dataset(&tmp.path().join("data"));
    let sub = tmp.path().join("sub");
    produce_submission(&dataset, &System::Passthrough, "pass", &sub).unwrap();
    fs::remove_file(dataset.layout.stem(&dataset.scenes[2].scene_id, Stem::Bass)).unwrap();
    let err = evaluate_run(&sub, &dataset, &builtin_metric(), &EvaluateOptions::default()).unwrap_err();
    assert!(matches!(err, HarnessError::MissingReference(_)), "{err}");
}

fn record(system: &str, score: f64, severity: u8, ok: bool) -> EvaluationRecord {
    EvaluationRecord {
        system_id: system.into(),
        scene_id: "S".into(),
        listener_id: "L".into(),
        remix_score: ok.then_some(score),
        vdbo_score: None,
        severity_code: severity,
        gain_spread_db: 0.0,
        status: if ok { RecordStatus::Ok } else { RecordStatus::Failed },
    }
}

/// Welford's streaming mean and sample variance.
fn streaming_mean_std(x: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for v in x {
        n += 1;
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    let std = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, std, n)
}

#[test]
fn leaderboard_matches_streaming_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let systems = ["E21", "T01", "T02", "T03"];
    let records: Vec<EvaluationRecord> = (0..4000)
        .map(|_| {
            let s = systems[rng.gen_range(0..systems.len())];
            record(s, rng.gen_range(0.0..1.0), 0, rng.gen_bool(0.97))
        })
        .collect();
    let board = leaderboard(&records);
    assert_eq!(board.len(), systems.len());
    for w in board.windows(2) {
        assert!(w[0].mean_score >= w[1].mean_score);
    }
    for row in &board {
        let (mean, std, n) = streaming_mean_std(
            records
                .iter()
                .filter(|r| r.system_id == row.system_id && r.is_ok())
                .filter_map(|r| r.remix_score),
        );
        assert_eq!(row.n, n);
        assert!((row.mean_score - mean).abs() <= 1e-12, "{} vs {mean}", row.mean_score);
        assert!((row.std_score - std).abs() <= 1e-12, "{} vs {std}", row.std_score);
    }
}

#[test]
fn uncorrelated_severity_is_rarely_significant() {
    let seeds = 200;
    let quiet = (0..seeds)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<EvaluationRecord> = (0..1000)
                .map(|_| record("A", rng.gen_range(0.0..1.0), rng.gen_range(0..=5), true))
                .collect();
            let report = analysis_report(&records, 0.01);
            let all = report.severity_correlation.iter().find(|c| c.scope == "all").unwrap();
            assert_eq!(all.n, 1000);
            all.rho.abs() < 0.1 && all.p > 0.01
        })
        .count();
    assert!(quiet * 100 >= 95 * seeds as usize, "{quiet}/{seeds}");
}

#[test]
fn shifted_system_is_detected() {
    for n in [30, 60, 200] {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut records = Vec::new();
            for _ in 0..n {
                let b: f64 = rng.gen_range(0.55..0.65);
                records.push(record("B", b, 0, true));
                records.push(record("A", b + 0.1, 0, true));
            }
            let report = analysis_report(&records, 0.01);
            let kw = report.kruskal_wallis.expect("two systems");
            assert!(kw.p < 0.01, "n {n} seed {seed}: p {}", kw.p);
            assert!(report.pairwise.iter().all(|p| p.significant));
            assert_eq!(report.leaderboard[0].system_id, "A");
        }
    }
}
