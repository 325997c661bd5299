use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::Reconstructor;
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm, orthogonalize_against};
use crate::manifold::ManifoldModel;

/// Deterministic part of the perturbation, `f: M -> span(U)`.
///
/// Both variants are expressed in tangent coordinates and mapped through `U`,
/// so the output always lies in the tangent space.
#[derive(Debug, Clone, PartialEq)]
pub enum BiasField {
    /// The same tangent vector `U c` everywhere.
    Constant { tangent: Vec<f64> },
    /// `g_j(z) = amplitude / sqrt(k) * sin(frequency * z_j + phase_j)` at
    /// tangent coordinates `z`.
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
        phase: Vec<f64>,
    },
}

impl BiasField {
    pub fn zero(chart_dim: usize) -> Self {
        BiasField::Constant {
            tangent: vec![0.0; chart_dim],
        }
    }

    /// A constant field of norm `beta` along the given tangent direction.
    pub fn constant_along(direction: &[f64], beta: f64) -> Result<Self> {
        let n = norm(direction);
        if !(n > 0.0) {
            return Err(Error::invalid("bias direction must be nonzero"));
        }
        Ok(BiasField::Constant {
            tangent: direction.iter().map(|c| beta * c / n).collect(),
        })
    }

    /// Constant field given as an ambient vector, which must lie in `span(U)`.
    pub fn constant_ambient(model: &ManifoldModel, v: &[f64]) -> Result<Self> {
        let leak = norm(&model.normal_component(v)?);
        if leak > 1e-12 {
            return Err(Error::invalid(format!(
                "bias vector leaves the tangent space by {leak:e}"
            )));
        }
        let tangent = model
            .basis()
            .iter()
            .map(|u| crate::linalg::dot(u, v))
            .collect();
        Ok(BiasField::Constant { tangent })
    }

    fn tangent_value(&self, z: &[f64]) -> Vec<f64> {
        match self {
            BiasField::Constant { tangent } => tangent.clone(),
            BiasField::Sinusoidal {
                amplitude,
                frequency,
                phase,
            } => {
                let a = amplitude / (z.len() as f64).sqrt();
                z.iter()
                    .zip(phase)
                    .map(|(zj, ph)| a * (frequency * zj + ph).sin())
                    .collect()
            }
        }
    }

    fn chart_dim(&self) -> usize {
        match self {
            BiasField::Constant { tangent } => tangent.len(),
            BiasField::Sinusoidal { phase, .. } => phase.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationModel {
    pub bias: BiasField,
    /// Standard deviation of fresh tangent noise per call.
    pub fresh_noise_scale: f64,
    /// Standard deviation of fresh noise in the orthogonal complement.
    pub normal_leak: f64,
}

impl PerturbationModel {
    pub fn new(bias: BiasField, fresh_noise_scale: f64, normal_leak: f64) -> Result<Self> {
        if !(fresh_noise_scale >= 0.0) || !(normal_leak >= 0.0) {
            return Err(Error::invalid(format!(
                "noise scales must be >= 0, got tau={fresh_noise_scale}, lambda={normal_leak}"
            )));
        }
        Ok(Self {
            bias,
            fresh_noise_scale,
            normal_leak,
        })
    }

    pub fn deterministic(bias: BiasField) -> Self {
        Self {
            bias,
            fresh_noise_scale: 0.0,
            normal_leak: 0.0,
        }
    }

    /// `f(p)` in ambient coordinates for an on-manifold point `p`.
    pub fn bias_at(&self, model: &ManifoldModel, p: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_dim(model.chart_dim(), self.bias.chart_dim())?;
        let z = model.tangent_coords(p)?;
        model.tangent_vector(&self.bias.tangent_value(&z))
    }
}

/// `Pi(x) + f(Pi(x)) + tau * eta_tan + lambda * eta_norm`.
///
/// Noise is only drawn for nonzero scales, so with `tau = lambda = 0` the
/// output is a deterministic function of `Pi(x)` and `rng` is untouched.
pub fn reconstruct_analytic<R: Rng + ?Sized>(
    model: &ManifoldModel,
    pert: &PerturbationModel,
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let p = model.project(x)?;
    let f = pert.bias_at(model, &p)?;
    let mut out = p;
    axpy(1.0, &f, &mut out);
    if pert.fresh_noise_scale > 0.0 {
        let z: Vec<f64> = (0..model.chart_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let eta = model.tangent_vector(&z)?;
        axpy(pert.fresh_noise_scale, &eta, &mut out);
    }
    if pert.normal_leak > 0.0 {
        let mut eta: Vec<f64> = (0..model.ambient_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        orthogonalize_against(&mut eta, model.basis());
        axpy(pert.normal_leak, &eta, &mut out);
    }
    Ok(out)
}

/// Projection-plus-perturbation operator bound to a manifold.
#[derive(Debug, Clone)]
pub struct AnalyticReconstructor<'a> {
    pub manifold: &'a ManifoldModel,
    pub perturbation: PerturbationModel,
}

impl<'a> AnalyticReconstructor<'a> {
    pub fn new(manifold: &'a ManifoldModel, perturbation: PerturbationModel) -> Result<Self> {
        crate::error::check_dim(manifold.chart_dim(), perturbation.bias.chart_dim())?;
        Ok(Self {
            manifold,
            perturbation,
        })
    }
}

impl Reconstructor for AnalyticReconstructor<'_> {
    fn ambient_dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    fn id(&self) -> &str {
        "analytic"
    }

    fn reconstruct(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        reconstruct_analytic(self.manifold, &self.perturbation, x, rng)
    }
}
