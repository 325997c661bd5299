//! Experiment configuration, read from TOML.
//!
//! ```toml
//! master_seed = 7
//! out_dir = "out"
//!
//! [manifold]
//! ambient_dim = 16
//! chart_dim = 8
//!
//! [operator]
//! kind = "analytic"
//! beta = 1.0
//! tau = 0.05
//!
//! [data]
//! train_per_class = 2000
//! test_per_class = 2000
//! signals = [1.0, 0.5, 0.2, 0.1, 0.05]
//! ```
//!
//! Every field has a default; see the `Default` impls below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{Fusion, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(skip_serializing_if = "path_is_empty")]
    pub out_dir: PathBuf,
    pub manifold: ManifoldConfig,
    pub operator: OperatorConfig,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub detector: DetectorConfig,
    pub render: RenderConfig,
}

fn path_is_empty(p: &Path) -> bool {
    p.as_os_str().is_empty()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            out_dir: PathBuf::from("out"),
            manifold: ManifoldConfig::default(),
            operator: OperatorConfig::default(),
            data: DataConfig::default(),
            sweep: SweepConfig::default(),
            detector: DetectorConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RealDirection {
    Fixed,
    Isotropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldConfig {
    pub ambient_dim: usize,
    pub chart_dim: usize,
    /// Chart offset; empty means the origin.
    pub offset: Vec<f64>,
    /// Fixes the chart across replicates; otherwise it is drawn per run seed.
    pub seed: Option<u64>,
    /// Use the first `chart_dim` coordinate axes instead of a random chart.
    pub axis_aligned: bool,
    pub real_direction: RealDirection,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            ambient_dim: 16,
            chart_dim: 8,
            offset: Vec::new(),
            seed: None,
            axis_aligned: false,
            real_direction: RealDirection::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Analytic,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Constant,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    pub bias: BiasKind,
    /// Norm of the constant bias, or amplitude of the sinusoidal one.
    pub beta: f64,
    /// Spatial frequency of the sinusoidal bias.
    pub frequency: f64,
    pub tau: f64,
    pub lambda: f64,
    /// DDIM step count.
    pub steps: usize,
    /// Standard deviation of each mixture component.
    pub sigma0: f64,
    pub components: usize,
    /// Standard deviation of the mixture centres in tangent coordinates.
    pub center_scale: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            kind: OperatorKind::Analytic,
            bias: BiasKind::Constant,
            beta: 1.0,
            frequency: 0.5,
            tau: 0.05,
            lambda: 0.0,
            steps: 20,
            sigma0: 0.05,
            components: 4,
            center_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Off-manifold distances of real samples. `generate`, `run`, `render`
    /// and `calibrate` use the first entry; `sweep` uses all of them.
    pub signals: Vec<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_per_class: 2000,
            val_per_class: 0,
            test_per_class: 2000,
            signals: vec![1.0, 0.5, 0.2, 0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Fresh-noise scales to sweep; empty means just `operator.tau`.
    pub taus: Vec<f64>,
    /// Independent seeds per grid point.
    pub replicates: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            taus: Vec::new(),
            replicates: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// `1 - sqrt(1 - target)`.
    Analytic,
    /// `sqrt(target)`: both-below-threshold has probability `target` for
    /// independent uniform scores.
    AndReal,
    /// Percentile of fused scores on real calibration samples.
    Percentile,
    /// `threshold` as given.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub fusion: Fusion,
    pub threshold_mode: ThresholdMode,
    pub threshold_target: f64,
    pub threshold_percentile: f64,
    pub threshold: f64,
    /// Threshold used by the single-branch baselines.
    pub single_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            fusion: Fusion::AndReal,
            threshold_mode: ThresholdMode::Analytic,
            threshold_target: 0.5,
            threshold_percentile: 95.0,
            threshold: 0.5,
            single_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Raster height and width; when absent a square shape is inferred.
    pub height: Option<usize>,
    pub width: Option<usize>,
    /// Samples rendered by `render` (0 = all) and per cell by `sweep`.
    pub limit: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: None,
            width: None,
            limit: 2,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// TOML of every field that affects results; the output directory is left out.
    pub fn canonical_toml(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        canon.to_toml()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = &self.manifold;
        if m.chart_dim == 0 || m.chart_dim >= m.ambient_dim {
            return bad(format!(
                "need ambient_dim > chart_dim >= 1, got {} and {}",
                m.ambient_dim, m.chart_dim
            ));
        }
        if !m.offset.is_empty() && m.offset.len() != m.ambient_dim {
            return bad(format!(
                "offset has {} entries, ambient_dim is {}",
                m.offset.len(),
                m.ambient_dim
            ));
        }
        let d = &self.data;
        if d.train_per_class == 0 || d.test_per_class == 0 {
            return bad("train_per_class and test_per_class must be > 0".into());
        }
        if d.signals.is_empty() {
            return bad("signal grid is empty".into());
        }
        if d.signals.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("signals must be finite and >= 0".into());
        }
        let o = &self.operator;
        if !(o.beta >= 0.0) || !(o.lambda >= 0.0) || self.taus().iter().any(|t| !(*t >= 0.0)) {
            return bad("beta, tau and lambda must be >= 0".into());
        }
        if o.kind == OperatorKind::Ddim && (o.components == 0 || !(o.sigma0 > 0.0) || o.steps == 0)
        {
            return bad("ddim needs components > 0, sigma0 > 0 and steps > 0".into());
        }
        if self.sweep.replicates == 0 {
            return bad("sweep.replicates must be > 0".into());
        }
        self.detector.train.validate()?;
        let det = &self.detector;
        match det.threshold_mode {
            ThresholdMode::Analytic | ThresholdMode::AndReal
                if !(det.threshold_target > 0.0 && det.threshold_target < 1.0) =>
            {
                return bad("threshold_target must lie in (0, 1)".into());
            }
            ThresholdMode::Percentile if !(0.0..=100.0).contains(&det.threshold_percentile) => {
                return bad("threshold_percentile must lie in [0, 100]".into());
            }
            ThresholdMode::Fixed if !(det.threshold > 0.0 && det.threshold < 1.0) => {
                return bad("threshold must lie in (0, 1)".into());
            }
            _ => {}
        }
        if !(det.single_threshold > 0.0 && det.single_threshold < 1.0) {
            return bad("single_threshold must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn taus(&self) -> Vec<f64> {
        if self.sweep.taus.is_empty() {
            vec![self.operator.tau]
        } else {
            self.sweep.taus.clone()
        }
    }

    /// First 16 hex digits of SHA-256 over the canonical TOML of every field
    /// that affects results (the output directory is excluded).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.operator.kind = OperatorKind::Ddim;
        cfg.detector.fusion = Fusion::MaxScore;
        cfg.detector.threshold_mode = ThresholdMode::Percentile;
        cfg.manifold.seed = Some(4);
        cfg.render.height = Some(4);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml(
            "master_seed = 9\n[operator]\ntau = 0.2\n[detector]\nlearning_rate = 0.5\nfusion = \"and-fake\"\n",
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.operator.tau, 0.2);
        assert_eq!(cfg.operator.beta, 1.0);
        assert_eq!(cfg.detector.train.learning_rate, 0.5);
        assert_eq!(cfg.detector.fusion, Fusion::AndFake);
        assert!(ExperimentConfig::from_toml("[operator]\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.train_per_class = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.data.signals.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.manifold.chart_dim = 16;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.manifold.offset = vec![0.0; 3];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.detector.threshold_mode = ThresholdMode::Fixed;
        cfg.detector.threshold = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.master_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
