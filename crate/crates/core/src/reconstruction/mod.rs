//! Reconstruction operators `R` and repeated-reconstruction traces.
//!
//! Two interchangeable operators are provided: [`AnalyticReconstructor`]
//! (projection onto the chart plus a structured perturbation) and
//! [`DdimReconstructor`] (deterministic DDIM inversion followed by sampling,
//! driven by the exact score of a Gaussian mixture).

mod analytic;
mod ddim;

pub use analytic::{reconstruct_analytic, AnalyticReconstructor, BiasField, PerturbationModel};
pub use ddim::{
    ddim_step, ddim_update, reconstruct_ddim, DdimReconstructor, DiffusionSchedule, Direction,
    GmmScoreModel, TRAIN_STEPS,
};

use rand::RngCore;

use crate::error::{check_dim, Result};

/// A reconstruction operator: inversion-then-regeneration through a model.
pub trait Reconstructor: Sync {
    fn ambient_dim(&self) -> usize;

    /// Short identifier recorded in traces.
    fn id(&self) -> &str;

    fn reconstruct(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// `x`, `x' = R(x)`, `x'' = R(x')` and optionally `x''' = R(x'')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionTrace {
    pub x: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Option<Vec<f64>>,
    pub operator_id: String,
    pub seed_id: u64,
}

impl ReconstructionTrace {
    /// Assembles a trace from explicit points, checking that dimensions agree.
    pub fn from_points(
        x: Vec<f64>,
        x1: Vec<f64>,
        x2: Vec<f64>,
        x3: Option<Vec<f64>>,
    ) -> Result<Self> {
        check_dim(x.len(), x1.len())?;
        check_dim(x.len(), x2.len())?;
        if let Some(x3) = &x3 {
            check_dim(x.len(), x3.len())?;
        }
        Ok(Self {
            x,
            x1,
            x2,
            x3,
            operator_id: String::from("external"),
            seed_id: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Reconstructs `x` twice in a row. Each call draws fresh noise from `rng`.
pub fn reconstruct_twice<O: Reconstructor + ?Sized>(
    op: &O,
    x: &[f64],
    rng: &mut dyn RngCore,
) -> Result<ReconstructionTrace> {
    reconstruct_chain(op, x, false, rng)
}

/// Reconstructs three times, as needed for the third-order residual.
pub fn reconstruct_thrice<O: Reconstructor + ?Sized>(
    op: &O,
    x: &[f64],
    rng: &mut dyn RngCore,
) -> Result<ReconstructionTrace> {
    reconstruct_chain(op, x, true, rng)
}

fn reconstruct_chain<O: Reconstructor + ?Sized>(
    op: &O,
    x: &[f64],
    third: bool,
    rng: &mut dyn RngCore,
) -> Result<ReconstructionTrace> {
    check_dim(op.ambient_dim(), x.len())?;
    let x1 = op.reconstruct(x, rng)?;
    let x2 = op.reconstruct(&x1, rng)?;
    let x3 = if third {
        Some(op.reconstruct(&x2, rng)?)
    } else {
        None
    };
    Ok(ReconstructionTrace {
        x: x.to_vec(),
        x1,
        x2,
        x3,
        operator_id: op.id().to_owned(),
        seed_id: 0,
    })
}
