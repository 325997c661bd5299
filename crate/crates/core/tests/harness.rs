use std::fs;
use std::path::Path;

use did_core::detector::DetectorEnsemble;
use did_core::harness::pipeline::{featurize, DetectorKind};
use did_core::harness::{
    self, cmd_generate, cmd_render, cmd_run, cmd_sweep, replicate_seed, Dataset, Experiment,
    ExperimentConfig, RunOptions, Split,
};
use did_core::manifold::Label;
use did_core::residuals::Raster;

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        out_dir: out.to_path_buf(),
        master_seed: 21,
        ..ExperimentConfig::default()
    };
    cfg.data.train_per_class = 150;
    cfg.data.test_per_class = 100;
    cfg.data.signals = vec![0.3];
    cfg.sweep.replicates = 1;
    cfg.detector.train.iterations = 300;
    cfg
}

#[test]
fn generate_writes_requested_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.data.train_per_class = 4;
    cfg.data.test_per_class = 4;
    let files = cmd_generate(&cfg).unwrap();
    let ds = Dataset::load(&files[0]).unwrap();
    let train: Vec<_> = ds.split(Split::Train).collect();
    assert_eq!(train.len(), 8);
    assert_eq!(train.iter().filter(|r| r.sample.signal == 0.0).count(), 4);
    assert_eq!(train.iter().filter(|r| r.sample.signal == 0.3).count(), 4);
    for r in &ds.rows {
        let want = if r.sample.label == Label::Real {
            0.3
        } else {
            0.0
        };
        assert_eq!(r.sample.signal, want);
    }
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = cmd_generate(&small(a.path())).unwrap();
    let fb = cmd_generate(&small(b.path())).unwrap();
    assert_eq!(fs::read(&fa[0]).unwrap(), fs::read(&fb[0]).unwrap());
}

#[test]
fn zero_samples_fail_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = small(&out);
    cfg.data.test_per_class = 0;
    let err = cmd_run(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.kind(), "config");
    assert!(!out.exists());
}

#[test]
fn serialized_ensemble_reproduces_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let (outcome, _) = cmd_run(&cfg, &RunOptions::default()).unwrap();
    let ens = DetectorEnsemble::load(&dir.path().join("ensemble.txt")).unwrap();
    assert_eq!(ens.delta1.weights(), outcome.ensemble.delta1.weights());
    assert_eq!(ens.delta2.weights(), outcome.ensemble.delta2.weights());
    assert_eq!(ens.threshold(), outcome.ensemble.threshold());
    assert_eq!(ens.fusion, outcome.ensemble.fusion);

    let seed = replicate_seed(cfg.master_seed, 0);
    let exp = Experiment::build(&cfg, seed, cfg.operator.tau).unwrap();
    let ds = Dataset::generate(&cfg, &exp, seed, cfg.data.signals[0]).unwrap();
    let test: Vec<_> = ds.split(Split::Test).cloned().collect();
    let feats = featurize(&exp, seed, &test).unwrap();
    let did = outcome
        .scored
        .iter()
        .find(|s| s.detector == DetectorKind::Did)
        .unwrap();
    for (i, f) in feats.iter().enumerate() {
        let pair = ens.scores(&f.f1, &f.f2).unwrap();
        assert_eq!(pair, outcome.test_pairs[i]);
        assert_eq!(ens.decide(pair), did.decisions[i]);
    }
}

#[test]
fn run_from_saved_dataset_matches_inline_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&dir.path().join("gen"));
    let data = cmd_generate(&cfg).unwrap().remove(0);
    let inline = cmd_run(&cfg, &RunOptions::default()).unwrap().0;
    let opts = RunOptions {
        data: Some(data),
        ..RunOptions::default()
    };
    let loaded = cmd_run(&small(&dir.path().join("loaded")), &opts)
        .unwrap()
        .0;
    assert_eq!(inline.reports, loaded.reports);
}

#[test]
fn single_cell_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let (run, _) = cmd_run(&cfg, &RunOptions::default()).unwrap();
    let sweep = harness::sweep(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(sweep.rows.len(), 3);
    for row in &sweep.rows {
        let r = run.report(row.detector);
        assert_eq!(row.status, "ok");
        assert_eq!(
            (row.acc, row.auroc, row.fpr_at_tpr95),
            (r.accuracy, r.auroc, r.fpr_at_tpr95)
        );
        assert_eq!(row.seed, r.seed);
    }
}

#[test]
fn sweep_has_one_row_per_cell_and_detector() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.data.signals = vec![1.0, 0.2];
    cfg.sweep.taus = vec![0.0, 0.05];
    cfg.sweep.replicates = 2;
    let (result, _) = cmd_sweep(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(result.rows.len(), 2 * 2 * 2 * 3);
    assert_eq!(result.summary.len(), 2 * 2 * 3);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("s,tau,detector,acc,auroc,fpr_at_tpr95,seed,status\n"));
    assert_eq!(csv.lines().count(), 1 + 24);

    let only = RunOptions {
        detector: Some(DetectorKind::Second),
        ..RunOptions::default()
    };
    let filtered = harness::sweep(&cfg, &only).unwrap();
    assert!(filtered
        .rows
        .iter()
        .all(|r| r.detector == DetectorKind::Second));
    assert_eq!(filtered.rows.len(), 8);
}

#[test]
fn failing_cell_is_marked_and_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.data.signals = vec![0.3, 1e300];
    let result = harness::sweep(&cfg, &RunOptions::default()).unwrap();
    for row in &result.rows {
        if row.s == 0.3 {
            assert_eq!(row.status, "ok");
        } else {
            assert!(row.status.starts_with("error:"), "{}", row.status);
            assert!(row.acc.is_nan());
        }
    }
}

#[test]
fn render_writes_four_rasters_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.manifold.ambient_dim = 64;
    cfg.manifold.chart_dim = 16;
    cfg.render.height = Some(8);
    cfg.render.width = Some(8);
    cfg.render.limit = 3;
    let files = cmd_render(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(files.len(), 12);
    for f in &files {
        let bytes = fs::read(f).unwrap();
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(Raster::from_pnm(&bytes).unwrap().data.len(), 64);
    }
}

#[test]
fn fake_second_order_raster_is_blank_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.operator.tau = 0.0;
    cfg.render.limit = 4;
    let files = cmd_render(&cfg, &RunOptions::default()).unwrap();
    let fakes: Vec<_> = files
        .iter()
        .filter(|f| {
            let name = f.file_name().unwrap().to_str().unwrap();
            name.contains("_fake_") && name.ends_with("_d2.pgm")
        })
        .collect();
    assert_eq!(fakes.len(), 2);
    for f in fakes {
        let raster = Raster::from_pnm(&fs::read(f).unwrap()).unwrap();
        assert!(raster.data.iter().all(|&p| p == 0));
    }
}

#[test]
fn render_rejects_non_square_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.manifold.ambient_dim = 12;
    cfg.manifold.chart_dim = 4;
    let err = cmd_render(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn strong_signal_is_separated_by_every_detector() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.operator.tau = 0.0;
    cfg.data.signals = vec![5.0];
    let (run, _) = cmd_run(&cfg, &RunOptions::default()).unwrap();
    for (kind, r) in &run.reports {
        assert!(r.accuracy >= 0.99, "{kind:?} {}", r.accuracy);
    }
}

#[test]
fn weak_signal_second_order_matches_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.operator.tau = 0.0;
    cfg.data.signals = vec![0.1];
    let (run, _) = cmd_run(&cfg, &RunOptions::default()).unwrap();
    let first = run.report(DetectorKind::First).accuracy;
    let second = run.report(DetectorKind::Second).accuracy;
    assert!(second >= first, "second {second} first {first}");
}

#[test]
fn first_order_auroc_falls_with_signal() {
    let cfg = ExperimentConfig::from_toml("master_seed = 31\n[render]\nlimit = 0\n").unwrap();
    let result = harness::sweep(&cfg, &RunOptions::default()).unwrap();
    let tau = ExperimentConfig::default().operator.tau;
    let curve: Vec<f64> = ExperimentConfig::default()
        .data
        .signals
        .iter()
        .map(|&s| {
            result
                .summary_for(s, tau, DetectorKind::First)
                .unwrap()
                .mean_auroc
        })
        .collect();
    for w in curve.windows(2) {
        assert!(w[1] <= w[0], "{curve:?}");
    }
}
