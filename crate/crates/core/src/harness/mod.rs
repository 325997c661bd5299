//! Experiment harness: synthetic data generation, single runs, parameter
//! sweeps, residual rendering and threshold calibration.
//!
//! Every command computes its results in memory first and only then writes
//! files under `out_dir`, so a failing command leaves no partial outputs.
//! Results do not depend on the number of worker threads.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod pipeline;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::ExperimentConfig;
pub use dataset::{DataRow, Dataset, Split};
pub use experiment::{replicate_seed, Experiment};
pub use pipeline::{Calibration, DetectorKind, RenderedSample, RunOutcome};

use crate::error::{Error, Result};

/// Command-line knobs that are not part of the experiment config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` or 0 uses the rayon default.
    pub threads: Option<usize>,
    /// Dataset CSV to use instead of generating one.
    pub data: Option<PathBuf>,
    /// Restricts reports to one detector.
    pub detector: Option<DetectorKind>,
}

/// Runs `f` on a dedicated pool of the requested size.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_data(opts: &RunOptions) -> Result<Option<Dataset>> {
    opts.data.as_deref().map(Dataset::load).transpose()
}

fn selected(opts: &RunOptions, kind: DetectorKind) -> bool {
    opts.detector.is_none_or(|d| d == kind)
}

fn run_seed(cfg: &ExperimentConfig) -> u64 {
    replicate_seed(cfg.master_seed, 0)
}

/// Writes `samples.csv` for the first signal strength.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let seed = run_seed(cfg);
    let exp = Experiment::build(cfg, seed, cfg.operator.tau)?;
    let ds = Dataset::generate(cfg, &exp, seed, cfg.data.signals[0])?;
    let path = cfg.out_dir.join("samples.csv");
    write_file(&path, ds.to_csv().as_bytes())?;
    Ok(vec![path])
}

pub const REPORT_HEADER: &str =
    "detector,acc,auroc,fpr_at_tpr95,tp,fp,tn,fn,s,tau,seed,config_hash";

/// Trains and evaluates on one cell: `report.csv`, `scores.csv`,
/// `ensemble.txt` and the effective `config.toml`.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(RunOutcome, Vec<PathBuf>)> {
    cfg.validate()?;
    let data = load_data(opts)?;
    let outcome = with_threads(opts.threads, || {
        pipeline::run_once(
            cfg,
            run_seed(cfg),
            cfg.data.signals[0],
            cfg.operator.tau,
            data.as_ref(),
        )
    })??;

    let mut report = format!("{REPORT_HEADER}\n");
    for (kind, r) in &outcome.reports {
        if !selected(opts, *kind) {
            continue;
        }
        writeln!(
            report,
            "{},{:?},{:?},{:?},{},{},{},{},{:?},{:?},{},{}",
            kind.as_str(),
            r.accuracy,
            r.auroc,
            r.fpr_at_tpr95,
            r.tp,
            r.fp,
            r.tn,
            r.fn_,
            outcome.signal,
            outcome.tau,
            r.seed,
            r.config_hash
        )
        .unwrap();
    }
    let did = outcome
        .scored
        .iter()
        .find(|s| s.detector == DetectorKind::Did)
        .expect("did is scored");
    let mut scores = String::from("index,label,p1,p2,fused,decision\n");
    for (i, pair) in outcome.test_pairs.iter().enumerate() {
        writeln!(
            scores,
            "{},{},{:?},{:?},{:?},{}",
            outcome.test_index[i],
            outcome.test_labels[i].as_str(),
            pair.p1,
            pair.p2,
            did.scores[i],
            did.decisions[i].as_str()
        )
        .unwrap();
    }

    let out = &cfg.out_dir;
    let files = vec![
        (out.join("report.csv"), report),
        (out.join("scores.csv"), scores),
        (out.join("ensemble.txt"), outcome.ensemble.to_text()),
        (out.join("config.toml"), cfg.canonical_toml()),
    ];
    for (path, text) in &files {
        write_file(path, text.as_bytes())?;
    }
    Ok((outcome, files.into_iter().map(|f| f.0).collect()))
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub s: f64,
    pub tau: f64,
    pub detector: DetectorKind,
    pub acc: f64,
    pub auroc: f64,
    pub fpr_at_tpr95: f64,
    pub seed: u64,
    /// `ok`, or `error:<kind>` when the cell failed.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummaryRow {
    pub s: f64,
    pub tau: f64,
    pub detector: DetectorKind,
    pub mean_acc: f64,
    pub mean_auroc: f64,
    pub mean_fpr_at_tpr95: f64,
    /// Replicates that completed.
    pub ok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
    /// Rendered test samples per cell, keyed by a directory name.
    pub images: Vec<(String, Vec<RenderedSample>)>,
}

impl SweepResult {
    pub fn summary_for(
        &self,
        s: f64,
        tau: f64,
        detector: DetectorKind,
    ) -> Option<&SweepSummaryRow> {
        self.summary
            .iter()
            .find(|r| r.s == s && r.tau == tau && r.detector == detector)
    }
}

pub const SWEEP_HEADER: &str = "s,tau,detector,acc,auroc,fpr_at_tpr95,seed,status";
pub const SWEEP_SUMMARY_HEADER: &str =
    "s,tau,detector,mean_acc,mean_auroc,mean_fpr_at_tpr95,replicates_ok";

/// Runs every `(tau, s, replicate)` cell of the grid. A failing cell yields
/// rows with NaN metrics and an error status instead of aborting the sweep.
pub fn sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for tau in cfg.taus() {
        for &s in &cfg.data.signals {
            for r in 0..cfg.sweep.replicates {
                cells.push((s, tau, replicate_seed(cfg.master_seed, r)));
            }
        }
    }
    let render_shape_ok = cfg.render.limit > 0 && pipeline::raster_shape(cfg).is_ok();

    let per_cell = with_threads(opts.threads, || {
        cells
            .par_iter()
            .map(|&(s, tau, seed)| {
                let outcome = pipeline::run_once(cfg, seed, s, tau, None);
                let images = if render_shape_ok {
                    pipeline::render(cfg, seed, s, tau, None).ok()
                } else {
                    None
                };
                (s, tau, seed, outcome, images)
            })
            .collect::<Vec<_>>()
    })?;

    let mut rows = Vec::new();
    let mut images = Vec::new();
    for (s, tau, seed, outcome, rendered) in per_cell {
        for kind in DetectorKind::ALL.into_iter().filter(|k| selected(opts, *k)) {
            let row = match &outcome {
                Ok(o) => {
                    let r = o.report(kind);
                    SweepRow {
                        s,
                        tau,
                        detector: kind,
                        acc: r.accuracy,
                        auroc: r.auroc,
                        fpr_at_tpr95: r.fpr_at_tpr95,
                        seed,
                        status: "ok".into(),
                    }
                }
                Err(e) => SweepRow {
                    s,
                    tau,
                    detector: kind,
                    acc: f64::NAN,
                    auroc: f64::NAN,
                    fpr_at_tpr95: f64::NAN,
                    seed,
                    status: format!("error:{}", e.kind()),
                },
            };
            rows.push(row);
        }
        if let Some(r) = rendered {
            images.push((format!("s{s:?}_tau{tau:?}_seed{seed}"), r));
        }
    }

    let mut summary: Vec<SweepSummaryRow> = Vec::new();
    for row in &rows {
        let pos = summary
            .iter()
            .position(|g| g.s == row.s && g.tau == row.tau && g.detector == row.detector);
        let g = match pos {
            Some(i) => &mut summary[i],
            None => {
                summary.push(SweepSummaryRow {
                    s: row.s,
                    tau: row.tau,
                    detector: row.detector,
                    mean_acc: 0.0,
                    mean_auroc: 0.0,
                    mean_fpr_at_tpr95: 0.0,
                    ok: 0,
                });
                summary.last_mut().unwrap()
            }
        };
        if row.status == "ok" {
            g.mean_acc += row.acc;
            g.mean_auroc += row.auroc;
            g.mean_fpr_at_tpr95 += row.fpr_at_tpr95;
            g.ok += 1;
        }
    }
    for g in &mut summary {
        let n = if g.ok == 0 { f64::NAN } else { g.ok as f64 };
        g.mean_acc /= n;
        g.mean_auroc /= n;
        g.mean_fpr_at_tpr95 /= n;
    }
    Ok(SweepResult {
        rows,
        summary,
        images,
    })
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{:?},{:?},{},{:?},{:?},{:?},{},{}",
                r.s,
                r.tau,
                r.detector.as_str(),
                r.acc,
                r.auroc,
                r.fpr_at_tpr95,
                r.seed,
                r.status
            )
            .unwrap();
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SWEEP_SUMMARY_HEADER}\n");
        for r in &self.summary {
            writeln!(
                out,
                "{:?},{:?},{},{:?},{:?},{:?},{}",
                r.s,
                r.tau,
                r.detector.as_str(),
                r.mean_acc,
                r.mean_auroc,
                r.mean_fpr_at_tpr95,
                r.ok
            )
            .unwrap();
        }
        out
    }
}

fn write_images(dir: &Path, samples: &[RenderedSample]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for sample in samples {
        for (suffix, raster) in sample.images() {
            let path = dir.join(format!("{}_{suffix}.pgm", sample.stem()));
            write_file(&path, &raster.to_pnm())?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes `sweep.csv`, `sweep_summary.csv`, `config.toml` and, when the
/// ambient dimension can be shown as a raster, `images/<cell>/*.pgm`.
pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(SweepResult, Vec<PathBuf>)> {
    let result = sweep(cfg, opts)?;
    let out = &cfg.out_dir;
    let mut files = Vec::new();
    for (name, text) in [
        ("sweep.csv", result.to_csv()),
        ("sweep_summary.csv", result.summary_csv()),
        ("config.toml", cfg.canonical_toml()),
    ] {
        let path = out.join(name);
        write_file(&path, text.as_bytes())?;
        files.push(path);
    }
    for (cell, samples) in &result.images {
        files.extend(write_images(&out.join("images").join(cell), samples)?);
    }
    Ok((result, files))
}

/// Writes four P5 rasters per rendered test sample under `images/`.
pub fn cmd_render(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = load_data(opts)?;
    let samples = with_threads(opts.threads, || {
        pipeline::render(
            cfg,
            run_seed(cfg),
            cfg.data.signals[0],
            cfg.operator.tau,
            data.as_ref(),
        )
    })??;
    write_images(&cfg.out_dir.join("images"), &samples)
}

pub const CALIBRATION_HEADER: &str =
    "detector,percentile,threshold,calibrated_on,heldout_fpr,heldout_tpr,heldout_real,heldout_fake";

/// Percentile threshold on real calibration scores, written to `calibration.csv`.
pub fn cmd_calibrate(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(Calibration, Vec<PathBuf>)> {
    cfg.validate()?;
    let data = load_data(opts)?;
    let detector = opts.detector.unwrap_or(DetectorKind::Did);
    let cal = with_threads(opts.threads, || {
        pipeline::calibrate(
            cfg,
            run_seed(cfg),
            cfg.data.signals[0],
            cfg.operator.tau,
            detector,
            data.as_ref(),
        )
    })??;
    let text = format!(
        "{CALIBRATION_HEADER}\n{},{:?},{:?},{},{:?},{:?},{},{}\n",
        cal.detector.as_str(),
        cal.percentile,
        cal.threshold,
        cal.calibrated_on.as_str(),
        cal.heldout_fpr,
        cal.heldout_tpr,
        cal.heldout_real,
        cal.heldout_fake
    );
    let path = cfg.out_dir.join("calibration.csv");
    write_file(&path, text.as_bytes())?;
    Ok((cal, vec![path]))
}
