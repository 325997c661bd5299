//! First-, second- and third-order reconstruction residuals.

mod features;
mod image;

pub use features::{summarize, Branch, FeatureVector};
pub use image::{quantize_to_image, ImageShape, Raster};

use crate::error::{check_dim, Error, Result};
use crate::reconstruction::ReconstructionTrace;

/// `|x - x1|`, elementwise.
pub fn first_order(x: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), x1.len())?;
    Ok(x.iter().zip(x1).map(|(a, b)| (a - b).abs()).collect())
}

/// `|x - x'| - |x' - x''|`, elementwise and signed.
pub fn second_order(trace: &ReconstructionTrace) -> Result<Vec<f64>> {
    second_order_points(&trace.x, &trace.x1, &trace.x2)
}

fn second_order_points(x: &[f64], x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), x1.len())?;
    check_dim(x.len(), x2.len())?;
    Ok(x.iter()
        .zip(x1)
        .zip(x2)
        .map(|((a, b), c)| (a - b).abs() - (b - c).abs())
        .collect())
}

/// `|D2(x) - D2(x')|` where `D2(x') = |x' - x''| - |x'' - x'''|`.
pub fn third_order(trace: &ReconstructionTrace) -> Result<Vec<f64>> {
    let x3 = trace
        .x3
        .as_ref()
        .ok_or_else(|| Error::invalid("third-order residual needs a third reconstruction"))?;
    let d2 = second_order(trace)?;
    let d2_next = second_order_points(&trace.x1, &trace.x2, x3)?;
    Ok(d2
        .iter()
        .zip(&d2_next)
        .map(|(a, b)| (a - b).abs())
        .collect())
}

/// All residual maps of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub delta3: Option<Vec<f64>>,
    pub trace_id: u64,
}

impl ResidualSet {
    pub fn from_trace(trace: &ReconstructionTrace) -> Result<Self> {
        let delta3 = match trace.x3 {
            Some(_) => Some(third_order(trace)?),
            None => None,
        };
        Ok(Self {
            delta1: first_order(&trace.x, &trace.x1)?,
            delta2: second_order(trace)?,
            delta3,
            trace_id: trace.seed_id,
        })
    }

    /// `|x' - x''|`, the first-order residual of the reconstruction.
    pub fn delta1_of_reconstruction(&self) -> Vec<f64> {
        self.delta1
            .iter()
            .zip(&self.delta2)
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn features(&self, branch: Branch) -> Result<FeatureVector> {
        match branch {
            Branch::Delta1 => summarize(&self.delta1, branch),
            Branch::Delta2 => summarize(&self.delta2, branch),
            Branch::Delta3 => match &self.delta3 {
                Some(d3) => summarize(d3, branch),
                None => Err(Error::invalid("trace has no third-order residual")),
            },
        }
    }
}
