use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted, std_dev};

/// Which residual a classifier reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Delta1,
    Delta2,
    Delta3,
}

const BASE_LAYOUT: [&str; 8] = ["bias", "mean", "std", "l1_mean", "max", "q50", "q90", "q99"];
const SIGNED_LAYOUT: [&str; 9] = [
    "bias",
    "mean",
    "std",
    "l1_mean",
    "max",
    "q50",
    "q90",
    "q99",
    "signed_mean",
];

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Delta1 => "delta1",
            Branch::Delta2 => "delta2",
            Branch::Delta3 => "delta3",
        }
    }

    /// Names of the feature slots, bias first.
    pub fn layout(self) -> &'static [&'static str] {
        match self {
            Branch::Delta2 => &SIGNED_LAYOUT,
            Branch::Delta1 | Branch::Delta3 => &BASE_LAYOUT,
        }
    }

    pub fn feature_len(self) -> usize {
        self.layout().len()
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta1" => Ok(Branch::Delta1),
            "delta2" => Ok(Branch::Delta2),
            "delta3" => Ok(Branch::Delta3),
            other => Err(Error::invalid(format!("unknown branch {other:?}"))),
        }
    }
}

/// Fixed-length summary of a residual map; slot 0 is the constant bias 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Summarizes a residual map into order statistics of its magnitudes.
///
/// All base statistics (mean, population std, L1-mean, max, and the 0.5 /
/// 0.9 / 0.99 quantiles) are taken over `|v_i|`, so they do not depend on
/// coordinate order. The signed branch appends the mean of the raw values.
pub fn summarize(residual: &[f64], branch: Branch) -> Result<FeatureVector> {
    if residual.is_empty() {
        return Err(Error::invalid("cannot summarize an empty residual"));
    }
    if residual.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("residual contains non-finite values"));
    }
    let mut mags: Vec<f64> = residual.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let l1 = mean(&mags);
    let mut out = vec![
        1.0,
        l1,
        std_dev(&mags),
        l1,
        mags[mags.len() - 1],
        quantile_sorted(&mags, 0.5),
        quantile_sorted(&mags, 0.9),
        quantile_sorted(&mags, 0.99),
    ];
    if branch == Branch::Delta2 {
        out.push(mean(residual));
    }
    Ok(FeatureVector(out))
}
