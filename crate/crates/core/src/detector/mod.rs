//! Branch classifiers, AND-gate fusion and threshold calibration.

mod logistic;

pub use logistic::{loss, loss_gradient, sigmoid, LogisticClassifier, TrainConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Label;
use crate::residuals::{Branch, FeatureVector};

/// How the two branch scores are combined into one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// Real only if both scores are below the threshold.
    AndReal,
    /// Fake only if both scores reach the threshold.
    AndFake,
    /// Real iff `max(p1, p2) < c`; same decisions as `AndReal` at equal `c`.
    MaxScore,
}

impl Fusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::AndReal => "and-real",
            Fusion::AndFake => "and-fake",
            Fusion::MaxScore => "max-score",
        }
    }

    /// The scalar statistic whose thresholding reproduces the decision:
    /// `max` for the real-gated rules, `min` for the fake-gated one.
    pub fn fused_score(self, pair: ScorePair) -> f64 {
        match self {
            Fusion::AndReal | Fusion::MaxScore => pair.p1.max(pair.p2),
            Fusion::AndFake => pair.p1.min(pair.p2),
        }
    }
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "and-real" => Ok(Fusion::AndReal),
            "and-fake" => Ok(Fusion::AndFake),
            "max-score" => Ok(Fusion::MaxScore),
            other => Err(Error::invalid(format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Fake-probabilities from the first- and second-order branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair {
    pub p1: f64,
    pub p2: f64,
}

impl ScorePair {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
            return Err(Error::invalid(format!(
                "scores must lie in [0, 1], got ({p1}, {p2})"
            )));
        }
        Ok(Self { p1, p2 })
    }
}

/// Applies a fusion rule at threshold `c`; a single score is real iff `p < c`.
pub fn decide_with(fusion: Fusion, threshold: f64, scores: ScorePair) -> Label {
    let real1 = scores.p1 < threshold;
    let real2 = scores.p2 < threshold;
    let real = match fusion {
        Fusion::AndReal => real1 && real2,
        Fusion::AndFake => real1 || real2,
        Fusion::MaxScore => scores.p1.max(scores.p2) < threshold,
    };
    if real {
        Label::Real
    } else {
        Label::Fake
    }
}

/// Per-classifier threshold `1 - sqrt(1 - target)`. For `target = 0.5` this
/// is `1 - sqrt(0.5) ~ 0.2929`. Under independent uniform scores it makes the
/// fake-gated rule flag a fraction `target` of inputs.
pub fn analytic_threshold(target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!(
            "target must lie in (0, 1), got {target}"
        )));
    }
    Ok(1.0 - (1.0 - target).sqrt())
}

/// Per-classifier threshold `sqrt(accept)` for the real-gated rule: with
/// independent uniform scores `P(p1 < c and p2 < c) = c^2 = accept`.
pub fn and_real_threshold(accept: f64) -> Result<f64> {
    if !(accept > 0.0 && accept < 1.0) {
        return Err(Error::invalid(format!(
            "acceptance rate must lie in (0, 1), got {accept}"
        )));
    }
    Ok(accept.sqrt())
}

/// The `percentile`-th percentile (0..=100) of real-sample scores, by linear
/// interpolation between order statistics (`h = (n - 1) p / 100`). Scores
/// strictly above it are called fake.
pub fn percentile_threshold(real_scores: &[f64], percentile: f64) -> Result<f64> {
    if real_scores.is_empty() {
        return Err(Error::invalid("percentile of an empty score list"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid(format!(
            "percentile {percentile} outside [0, 100]"
        )));
    }
    crate::stats::quantile(real_scores, percentile / 100.0)
}

/// Two branch classifiers, a shared threshold and a fusion rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorEnsemble {
    pub delta1: LogisticClassifier,
    pub delta2: LogisticClassifier,
    threshold: f64,
    pub fusion: Fusion,
}

const FORMAT_TAG: &str = "did-ensemble";
const FORMAT_VERSION: u32 = 1;

impl DetectorEnsemble {
    pub fn new(
        delta1: LogisticClassifier,
        delta2: LogisticClassifier,
        threshold: f64,
        fusion: Fusion,
    ) -> Result<Self> {
        if delta1.feature_len() != Branch::Delta1.feature_len() {
            return Err(Error::DimensionMismatch {
                expected: Branch::Delta1.feature_len(),
                actual: delta1.feature_len(),
            });
        }
        if delta2.feature_len() != Branch::Delta2.feature_len() {
            return Err(Error::DimensionMismatch {
                expected: Branch::Delta2.feature_len(),
                actual: delta2.feature_len(),
            });
        }
        let mut ens = Self {
            delta1,
            delta2,
            threshold: 0.5,
            fusion,
        };
        ens.set_threshold(threshold)?;
        Ok(ens)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must lie in (0, 1), got {c}"
            )));
        }
        self.threshold = c;
        Ok(())
    }

    pub fn scores(&self, f1: &FeatureVector, f2: &FeatureVector) -> Result<ScorePair> {
        ScorePair::new(self.delta1.predict(f1)?, self.delta2.predict(f2)?)
    }

    pub fn decide(&self, scores: ScorePair) -> Label {
        decide_with(self.fusion, self.threshold, scores)
    }

    /// Flat text form: a header with format version, fusion mode and
    /// threshold, then per branch its name, feature layout, weight count and
    /// one weight per line. Floats use the shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{FORMAT_TAG} {FORMAT_VERSION}\nfusion {}\nthreshold {:?}\n",
            self.fusion.as_str(),
            self.threshold
        );
        for (branch, clf) in [
            (Branch::Delta1, &self.delta1),
            (Branch::Delta2, &self.delta2),
        ] {
            out.push_str(&format!(
                "branch {}\nlayout {}\nweights {}\n",
                branch.as_str(),
                branch.layout().join(","),
                clf.feature_len()
            ));
            for w in clf.weights() {
                out.push_str(&format!("{w:?}\n"));
            }
        }
        out
    }

    pub fn from_text(text: &str, source: &Path) -> Result<Self> {
        let mut r = LineReader {
            lines: text.lines().enumerate(),
            source,
        };
        let (n, version) = r.field(FORMAT_TAG)?;
        if version != FORMAT_VERSION.to_string() {
            return Err(r.err(n, format!("unsupported format version {version}")));
        }
        let (n, fusion) = r.field("fusion")?;
        let fusion: Fusion = fusion.parse().map_err(|e: Error| r.err(n, e.to_string()))?;
        let (n, threshold) = r.field("threshold")?;
        let threshold: f64 = threshold
            .parse()
            .map_err(|_| r.err(n, format!("bad threshold {threshold:?}")))?;

        let mut branches = Vec::with_capacity(2);
        for expected in [Branch::Delta1, Branch::Delta2] {
            let (n, name) = r.field("branch")?;
            if name != expected.as_str() {
                return Err(r.err(
                    n,
                    format!("expected branch {}, got {name}", expected.as_str()),
                ));
            }
            let (n, layout) = r.field("layout")?;
            if layout != expected.layout().join(",") {
                return Err(r.err(n, format!("unexpected feature layout {layout:?}")));
            }
            let (n, count) = r.field("weights")?;
            let count: usize = count
                .parse()
                .map_err(|_| r.err(n, format!("bad weight count {count:?}")))?;
            if count != expected.feature_len() {
                return Err(r.err(
                    n,
                    format!("expected {} weights, got {count}", expected.feature_len()),
                ));
            }
            let mut weights = Vec::with_capacity(count);
            for _ in 0..count {
                let (n, l) = r.next("weight")?;
                let w = l
                    .parse::<f64>()
                    .map_err(|_| r.err(n, format!("bad weight {l:?}")))?;
                weights.push(w);
            }
            branches.push(LogisticClassifier::from_weights(weights)?);
        }
        let delta2 = branches.pop().expect("two branches");
        let delta1 = branches.pop().expect("two branches");
        Self::new(delta1, delta2, threshold, fusion)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

struct LineReader<'a, I> {
    lines: I,
    source: &'a Path,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> LineReader<'a, I> {
    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse {
            path: self.source.to_path_buf(),
            line,
            msg,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((i, l)) => Ok((i + 1, l.trim())),
            None => Err(self.err(0, format!("unexpected end of file, expected {what}"))),
        }
    }

    /// A `key value` line.
    fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let (n, l) = self.next(key)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v.trim().to_owned())),
            _ => Err(self.err(n, format!("expected `{key} <value>`, got {l:?}"))),
        }
    }
}
