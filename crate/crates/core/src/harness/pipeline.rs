use rayon::prelude::*;

use super::config::{ExperimentConfig, ThresholdMode};
use super::dataset::{DataRow, Dataset, Split};
use super::experiment::{stream, Domain, Experiment};
use crate::detector::{
    analytic_threshold, and_real_threshold, percentile_threshold, DetectorEnsemble,
    LogisticClassifier, ScorePair,
};
use crate::error::{Error, Result};
use crate::manifold::Label;
use crate::metrics::EvalReport;
use crate::reconstruction::{reconstruct_twice, Reconstructor};
use crate::residuals::{Branch, FeatureVector, ImageShape, Raster, ResidualSet};

/// The three detectors every run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    /// First-order residual branch alone.
    First,
    /// Second-order residual branch alone.
    Second,
    /// Fused ensemble.
    Did,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] =
        [DetectorKind::First, DetectorKind::Second, DetectorKind::Did];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::First => "first",
            DetectorKind::Second => "second",
            DetectorKind::Did => "did",
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(DetectorKind::First),
            "second" => Ok(DetectorKind::Second),
            "did" => Ok(DetectorKind::Did),
            other => Err(Error::invalid(format!("unknown detector {other:?}"))),
        }
    }
}

/// Branch features of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFeatures {
    pub f1: FeatureVector,
    pub f2: FeatureVector,
}

fn residuals_of(op: &dyn Reconstructor, seed: u64, row: &DataRow) -> Result<ResidualSet> {
    let mut rng = stream(seed, Domain::Reconstruction, row.index);
    let mut trace = reconstruct_twice(op, &row.sample.point, &mut rng)?;
    trace.seed_id = row.sample.seed_id;
    ResidualSet::from_trace(&trace)
}

/// Reconstructs every row twice and summarizes both branches, in parallel.
/// Output order follows `rows`.
pub fn featurize(exp: &Experiment, seed: u64, rows: &[DataRow]) -> Result<Vec<SampleFeatures>> {
    let op = exp.reconstructor();
    let op: &dyn Reconstructor = op.as_ref();
    rows.par_iter()
        .map(|row| {
            let r = residuals_of(op, seed, row)?;
            Ok(SampleFeatures {
                f1: r.features(Branch::Delta1)?,
                f2: r.features(Branch::Delta2)?,
            })
        })
        .collect()
}

/// Scores and decisions of the test split for one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub detector: DetectorKind,
    pub scores: Vec<f64>,
    pub decisions: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub signal: f64,
    pub tau: f64,
    pub ensemble: DetectorEnsemble,
    /// Test rows in dataset order.
    pub test_index: Vec<u64>,
    pub test_labels: Vec<Label>,
    pub test_pairs: Vec<ScorePair>,
    pub scored: Vec<Scored>,
    pub reports: Vec<(DetectorKind, EvalReport)>,
}

impl RunOutcome {
    pub fn report(&self, kind: DetectorKind) -> &EvalReport {
        &self
            .reports
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("all detectors are evaluated")
            .1
    }
}

struct Prepared {
    rows: Vec<DataRow>,
    features: Vec<SampleFeatures>,
}

impl Prepared {
    fn pick(&self, split: Split) -> (Vec<&DataRow>, Vec<&SampleFeatures>) {
        self.rows
            .iter()
            .zip(&self.features)
            .filter(|(r, _)| r.split == split)
            .unzip()
    }
}

fn prepare(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    seed: u64,
    signal: f64,
    data: Option<&Dataset>,
) -> Result<Prepared> {
    let rows = match data {
        Some(ds) => ds.rows.clone(),
        None => Dataset::generate(cfg, exp, seed, signal)?.rows,
    };
    if let Some(r) = rows.first() {
        crate::error::check_dim(exp.manifold.ambient_dim(), r.sample.point.len())?;
    }
    let features = featurize(exp, seed, &rows)?;
    Ok(Prepared { rows, features })
}

fn train_branches(
    cfg: &ExperimentConfig,
    p: &Prepared,
) -> Result<(LogisticClassifier, LogisticClassifier)> {
    let (rows, feats) = p.pick(Split::Train);
    let labels: Vec<Label> = rows.iter().map(|r| r.sample.label).collect();
    let f1: Vec<FeatureVector> = feats.iter().map(|f| f.f1.clone()).collect();
    let f2: Vec<FeatureVector> = feats.iter().map(|f| f.f2.clone()).collect();
    let hyper = cfg.detector.train;
    let (c1, c2) = rayon::join(
        || LogisticClassifier::train(&f1, &labels, hyper),
        || LogisticClassifier::train(&f2, &labels, hyper),
    );
    Ok((c1?, c2?))
}

/// Real rows used to calibrate percentile thresholds: the validation split
/// when it has any, the training split otherwise.
fn calibration_split(p: &Prepared) -> Split {
    if p.rows.iter().any(|r| r.split == Split::Val) {
        Split::Val
    } else {
        Split::Train
    }
}

fn real_scores(
    p: &Prepared,
    split: Split,
    score: impl Fn(&SampleFeatures) -> Result<f64>,
) -> Result<Vec<f64>> {
    let (rows, feats) = p.pick(split);
    rows.iter()
        .zip(feats)
        .filter(|(r, _)| r.sample.label == Label::Real)
        .map(|(_, f)| score(f))
        .collect()
}

fn ensemble_threshold(
    cfg: &ExperimentConfig,
    p: &Prepared,
    c1: &LogisticClassifier,
    c2: &LogisticClassifier,
) -> Result<f64> {
    let det = &cfg.detector;
    let c = match det.threshold_mode {
        ThresholdMode::Analytic => analytic_threshold(det.threshold_target)?,
        ThresholdMode::AndReal => and_real_threshold(det.threshold_target)?,
        ThresholdMode::Fixed => det.threshold,
        ThresholdMode::Percentile => {
            let fused = real_scores(p, calibration_split(p), |f| {
                let pair = ScorePair::new(c1.predict(&f.f1)?, c2.predict(&f.f2)?)?;
                Ok(det.fusion.fused_score(pair))
            })?;
            percentile_threshold(&fused, det.threshold_percentile)?
        }
    };
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Calibration(format!(
            "threshold {c} is outside (0, 1)"
        )));
    }
    Ok(c)
}

fn decide_single(score: f64, c: f64) -> Label {
    if score >= c {
        Label::Fake
    } else {
        Label::Real
    }
}

/// Full train-and-evaluate pass for one `(seed, signal, tau)` cell. When
/// `data` is given it replaces the generated dataset.
pub fn run_once(
    cfg: &ExperimentConfig,
    seed: u64,
    signal: f64,
    tau: f64,
    data: Option<&Dataset>,
) -> Result<RunOutcome> {
    let exp = Experiment::build(cfg, seed, tau)?;
    let p = prepare(cfg, &exp, seed, signal, data)?;
    let (c1, c2) = train_branches(cfg, &p)?;
    let c = ensemble_threshold(cfg, &p, &c1, &c2)?;
    let ensemble = DetectorEnsemble::new(c1, c2, c, cfg.detector.fusion)?;

    let (rows, feats) = p.pick(Split::Test);
    let test_labels: Vec<Label> = rows.iter().map(|r| r.sample.label).collect();
    let test_pairs = feats
        .iter()
        .map(|f| ensemble.scores(&f.f1, &f.f2))
        .collect::<Result<Vec<_>>>()?;

    let single = cfg.detector.single_threshold;
    let mut scored = Vec::new();
    for kind in DetectorKind::ALL {
        let (scores, decisions): (Vec<f64>, Vec<Label>) = test_pairs
            .iter()
            .map(|pair| match kind {
                DetectorKind::First => (pair.p1, decide_single(pair.p1, single)),
                DetectorKind::Second => (pair.p2, decide_single(pair.p2, single)),
                DetectorKind::Did => (ensemble.fusion.fused_score(*pair), ensemble.decide(*pair)),
            })
            .unzip();
        scored.push(Scored {
            detector: kind,
            scores,
            decisions,
        });
    }
    let hash = cfg.hash();
    let reports = scored
        .iter()
        .map(|s| {
            EvalReport::compute(&s.decisions, &s.scores, &test_labels, hash.clone(), seed)
                .map(|r| (s.detector, r))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RunOutcome {
        seed,
        signal,
        tau,
        ensemble,
        test_index: rows.iter().map(|r| r.index).collect(),
        test_labels,
        test_pairs,
        scored,
        reports,
    })
}

/// Percentile calibration of one detector's score on real samples, checked
/// on the held-out test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub detector: DetectorKind,
    pub percentile: f64,
    pub threshold: f64,
    pub calibrated_on: Split,
    pub heldout_fpr: f64,
    pub heldout_tpr: f64,
    pub heldout_real: usize,
    pub heldout_fake: usize,
}

pub fn calibrate(
    cfg: &ExperimentConfig,
    seed: u64,
    signal: f64,
    tau: f64,
    detector: DetectorKind,
    data: Option<&Dataset>,
) -> Result<Calibration> {
    let exp = Experiment::build(cfg, seed, tau)?;
    let p = prepare(cfg, &exp, seed, signal, data)?;
    let (c1, c2) = train_branches(cfg, &p)?;
    let fusion = cfg.detector.fusion;
    let score = |f: &SampleFeatures| -> Result<f64> {
        Ok(match detector {
            DetectorKind::First => c1.predict(&f.f1)?,
            DetectorKind::Second => c2.predict(&f.f2)?,
            DetectorKind::Did => {
                fusion.fused_score(ScorePair::new(c1.predict(&f.f1)?, c2.predict(&f.f2)?)?)
            }
        })
    };
    let split = calibration_split(&p);
    let percentile = cfg.detector.threshold_percentile;
    let threshold = percentile_threshold(&real_scores(&p, split, score)?, percentile)?;

    let (rows, feats) = p.pick(Split::Test);
    let (mut fp, mut tp, mut n_real, mut n_fake) = (0, 0, 0, 0);
    for (r, f) in rows.iter().zip(feats) {
        let flagged = score(f)? >= threshold;
        match r.sample.label {
            Label::Real => {
                n_real += 1;
                fp += flagged as usize;
            }
            Label::Fake => {
                n_fake += 1;
                tp += flagged as usize;
            }
        }
    }
    if n_real == 0 || n_fake == 0 {
        return Err(Error::UndefinedMetric(
            "test split needs both classes".into(),
        ));
    }
    Ok(Calibration {
        detector,
        percentile,
        threshold,
        calibrated_on: split,
        heldout_fpr: fp as f64 / n_real as f64,
        heldout_tpr: tp as f64 / n_fake as f64,
        heldout_real: n_real,
        heldout_fake: n_fake,
    })
}

/// Rasters of `x`, `|x - x'|`, `|x' - x''|` and the signed second-order residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub index: u64,
    pub label: Label,
    pub x: Raster,
    pub delta: Raster,
    pub delta_of_reconstruction: Raster,
    pub delta2: Raster,
}

impl RenderedSample {
    /// `(file suffix, raster)` pairs in a fixed order.
    pub fn images(&self) -> [(&'static str, &Raster); 4] {
        [
            ("x", &self.x),
            ("d1", &self.delta),
            ("d1r", &self.delta_of_reconstruction),
            ("d2", &self.delta2),
        ]
    }

    pub fn stem(&self) -> String {
        format!("{:06}_{}", self.index, self.label.as_str())
    }
}

/// Raster shape from the config, or the square one when `d` is a perfect square.
pub fn raster_shape(cfg: &ExperimentConfig) -> Result<ImageShape> {
    let d = cfg.manifold.ambient_dim;
    let shape = match (cfg.render.height, cfg.render.width) {
        (Some(h), Some(w)) => ImageShape::grey(h, w),
        (None, None) => {
            let side = d.isqrt();
            if side * side != d {
                return Err(Error::Config(format!(
                    "ambient_dim {d} is not a perfect square; set render.height and render.width"
                )));
            }
            ImageShape::grey(side, side)
        }
        _ => {
            return Err(Error::Config(
                "set both render.height and render.width".into(),
            ))
        }
    };
    if shape.len() != d {
        return Err(Error::Config(format!(
            "render shape {}x{} does not hold {d} values",
            shape.height, shape.width
        )));
    }
    Ok(shape)
}

/// Renders the first `render.limit` test rows (all of them when 0).
pub fn render(
    cfg: &ExperimentConfig,
    seed: u64,
    signal: f64,
    tau: f64,
    data: Option<&Dataset>,
) -> Result<Vec<RenderedSample>> {
    let shape = raster_shape(cfg)?;
    let exp = Experiment::build(cfg, seed, tau)?;
    let generated;
    let ds = match data {
        Some(ds) => ds,
        None => {
            generated = Dataset::generate(cfg, &exp, seed, signal)?;
            &generated
        }
    };
    let limit = if cfg.render.limit == 0 {
        usize::MAX
    } else {
        cfg.render.limit
    };
    let rows: Vec<&DataRow> = ds.split(Split::Test).take(limit).collect();
    let op = exp.reconstructor();
    let op: &dyn Reconstructor = op.as_ref();
    rows.par_iter()
        .map(|row| {
            let r = residuals_of(op, seed, row)?;
            Ok(RenderedSample {
                index: row.index,
                label: row.sample.label,
                x: crate::residuals::quantize_to_image(&row.sample.point, shape)?,
                delta: crate::residuals::quantize_to_image(&r.delta1, shape)?,
                delta_of_reconstruction: crate::residuals::quantize_to_image(
                    &r.delta1_of_reconstruction(),
                    shape,
                )?,
                delta2: crate::residuals::quantize_to_image(&r.delta2, shape)?,
            })
        })
        .collect()
}
