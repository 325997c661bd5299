//! A toy diffusion model whose noise predictor is the exact score of a
//! Gaussian mixture, with deterministic (eta = 0) DDIM sampling and inversion.

use rand::RngCore;

use super::Reconstructor;
use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;

/// Length of the underlying linear-beta training schedule that shorter
/// sampling schedules are respaced from.
pub const TRAIN_STEPS: usize = 1000;
const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.02;

/// Cumulative signal-retention weights `alpha_bar_0 = 1 > alpha_bar_1 > ... > alpha_bar_T > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bars: Vec<f64>,
    eta: f64,
}

impl DiffusionSchedule {
    /// Linear betas from 1e-4 to 0.02 over [`TRAIN_STEPS`] steps, respaced to
    /// `steps` evenly spaced timesteps (step `t` uses training index
    /// `round(t * 1000 / steps)`).
    pub fn linear(steps: usize) -> Result<Self> {
        if steps == 0 || steps > TRAIN_STEPS {
            return Err(Error::invalid(format!(
                "step count must be in 1..={TRAIN_STEPS}, got {steps}"
            )));
        }
        let mut train = Vec::with_capacity(TRAIN_STEPS + 1);
        train.push(1.0);
        let mut acc = 1.0;
        for i in 0..TRAIN_STEPS {
            let beta = BETA_START + (BETA_END - BETA_START) * i as f64 / (TRAIN_STEPS - 1) as f64;
            acc *= 1.0 - beta;
            train.push(acc);
        }
        let mut alpha_bars = vec![1.0];
        for t in 1..=steps {
            let idx = ((t * TRAIN_STEPS) as f64 / steps as f64).round() as usize;
            alpha_bars.push(train[idx]);
        }
        Self::from_alpha_bars(alpha_bars)
    }

    /// Builds a schedule from `[alpha_bar_0, ..., alpha_bar_T]`; `alpha_bar_0` must be 1.
    pub fn from_alpha_bars(alpha_bars: Vec<f64>) -> Result<Self> {
        if alpha_bars.len() < 2 || alpha_bars[0] != 1.0 {
            return Err(Error::invalid(
                "schedule needs alpha_bar_0 = 1 followed by at least one step",
            ));
        }
        for w in alpha_bars.windows(2) {
            if !(w[1] < w[0]) || !(w[1] > 0.0) {
                return Err(Error::invalid(format!(
                    "alpha_bar must be strictly decreasing and positive, got {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            alpha_bars,
            eta: 0.0,
        })
    }

    /// Only deterministic sampling is supported.
    pub fn with_eta(self, eta: f64) -> Result<Self> {
        if eta != 0.0 {
            return Err(Error::invalid(format!(
                "only eta = 0 (deterministic DDIM) is supported, got {eta}"
            )));
        }
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.alpha_bars.len() - 1
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Per-step weight `alpha_t = alpha_bar_t / alpha_bar_{t-1}`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bars[t] / self.alpha_bars[t - 1]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::TimestepOutOfRange {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }
}

/// `sum_k w_k N(mu_k, sigma0^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmScoreModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variance: f64,
}

impl GmmScoreModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sigma0: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::invalid(
                "mixture needs at least one component and one weight per mean",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let d = means[0].len();
        for m in &means {
            check_dim(d, m.len())?;
        }
        if !(sigma0 > 0.0) {
            return Err(Error::invalid("mixture standard deviation must be > 0"));
        }
        Ok(Self {
            weights,
            means,
            variance: sigma0 * sigma0,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn sigma0(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Noise prediction `-sqrt(1 - alpha_bar_t) * grad log p_t(x_t)`, where
    /// `p_t = sum_k w_k N(sqrt(alpha_bar_t) mu_k, (alpha_bar_t sigma0^2 + 1 - alpha_bar_t) I)`.
    pub fn exact_eps(&self, sched: &DiffusionSchedule, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        sched.check_t(t)?;
        check_dim(self.dim(), x_t.len())?;
        Ok(self.eps_at_alpha_bar(sched.alpha_bar(t), x_t))
    }

    fn eps_at_alpha_bar(&self, ab: f64, x_t: &[f64]) -> Vec<f64> {
        let var_t = ab * self.variance + 1.0 - ab;
        let scale = ab.sqrt();
        let diffs: Vec<Vec<f64>> = self
            .means
            .iter()
            .map(|m| m.iter().zip(x_t).map(|(mi, xi)| scale * mi - xi).collect())
            .collect();
        // log responsibilities up to a shared constant
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&diffs)
            .map(|(w, dv)| {
                if *w > 0.0 {
                    w.ln() - dot(dv, dv) / (2.0 * var_t)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let coef = -(1.0 - ab).sqrt() / var_t;
        let mut eps = vec![0.0; x_t.len()];
        for (r, dv) in exps.iter().zip(&diffs) {
            let rk = r / z;
            if rk == 0.0 {
                continue;
            }
            for (e, d) in eps.iter_mut().zip(dv) {
                *e += coef * rk * d;
            }
        }
        eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `t -> t - 1` (denoising).
    Reverse,
    /// `t - 1 -> t` (inversion).
    Invert,
}

/// The deterministic DDIM move between two noise levels given a noise estimate:
/// `sqrt(ab_to) * x0_hat + sqrt(1 - ab_to) * eps` with
/// `x0_hat = (x - sqrt(1 - ab_from) * eps) / sqrt(ab_from)`.
pub fn ddim_update(ab_from: f64, ab_to: f64, x: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if !(ab_from > 0.0) || !(ab_to > 0.0) {
        return Err(Error::invalid(format!(
            "alpha_bar must be > 0, got {ab_from} -> {ab_to}"
        )));
    }
    check_dim(x.len(), eps.len())?;
    let s_from = (1.0 - ab_from).sqrt();
    let s_to = (1.0 - ab_to).sqrt();
    let r_from = ab_from.sqrt();
    let r_to = ab_to.sqrt();
    Ok(x.iter()
        .zip(eps)
        .map(|(xi, ei)| {
            let x0 = (xi - s_from * ei) / r_from;
            r_to * x0 + s_to * ei
        })
        .collect())
}

/// One DDIM step. `Reverse` maps `x_t` to `x_{t-1}` using `eps_fn(x_t, t)`;
/// `Invert` maps `x_{t-1}` to `x_t` using `eps_fn(x_{t-1}, t)` (the noise
/// estimate is taken at the current state).
pub fn ddim_step<F>(
    sched: &DiffusionSchedule,
    eps_fn: F,
    x: &[f64],
    t: usize,
    direction: Direction,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], usize) -> Result<Vec<f64>>,
{
    sched.check_t(t)?;
    let eps = eps_fn(x, t)?;
    let (from, to) = match direction {
        Direction::Reverse => (sched.alpha_bar(t), sched.alpha_bar(t - 1)),
        Direction::Invert => (sched.alpha_bar(t - 1), sched.alpha_bar(t)),
    };
    ddim_update(from, to, x, &eps)
}

/// Inverts `x` through `t = 1..T`, then samples back `t = T..1`.
pub fn reconstruct_ddim(
    gmm: &GmmScoreModel,
    sched: &DiffusionSchedule,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_dim(gmm.dim(), x.len())?;
    let eps_fn = |x: &[f64], t: usize| gmm.exact_eps(sched, x, t);
    let mut state = x.to_vec();
    for t in 1..=sched.steps() {
        state = ddim_step(sched, eps_fn, &state, t, Direction::Invert)?;
    }
    for t in (1..=sched.steps()).rev() {
        state = ddim_step(sched, eps_fn, &state, t, Direction::Reverse)?;
    }
    Ok(state)
}

#[cfg(test)]
/// Relative L2 distance `|a - b| / |b|`.
pub(crate) fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let d = crate::linalg::sub(a, b);
    dot(&d, &d).sqrt() / dot(b, b).sqrt()
}

#[derive(Debug, Clone)]
pub struct DdimReconstructor {
    pub gmm: GmmScoreModel,
    pub schedule: DiffusionSchedule,
}

impl Reconstructor for DdimReconstructor {
    fn ambient_dim(&self) -> usize {
        self.gmm.dim()
    }

    fn id(&self) -> &str {
        "ddim"
    }

    fn reconstruct(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        reconstruct_ddim(&self.gmm, &self.schedule, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn standard_normal(d: usize) -> GmmScoreModel {
        GmmScoreModel::new(vec![1.0], vec![vec![0.0; d]], 1.0).unwrap()
    }

    /// Reverse multiplier for the single N(0, I) model, derived by hand:
    /// eps = sqrt(1 - ab_t) x, so x0_hat = sqrt(ab_t) x and
    /// x_{t-1} = [sqrt(ab_{t-1} ab_t) + sqrt((1 - ab_{t-1})(1 - ab_t))] x.
    fn reverse_multiplier(ab_prev: f64, ab_t: f64) -> f64 {
        (ab_prev * ab_t).sqrt() + ((1.0 - ab_prev) * (1.0 - ab_t)).sqrt()
    }

    #[test]
    fn linear_schedule_is_valid() {
        for steps in [1, 10, 20, 50, 200, 1000] {
            let s = DiffusionSchedule::linear(steps).unwrap();
            assert_eq!(s.steps(), steps);
            assert_eq!(s.alpha_bar(0), 1.0);
            for t in 1..=steps {
                let a = s.alpha(t);
                assert!(a > 0.0 && a < 1.0);
            }
        }
        // The final noise level does not depend on the respacing.
        let a = DiffusionSchedule::linear(20).unwrap();
        let b = DiffusionSchedule::linear(1000).unwrap();
        assert_eq!(a.alpha_bar(20), b.alpha_bar(1000));
        assert!(a.alpha_bar(20) < 1e-4);
        assert!(DiffusionSchedule::linear(0).is_err());
        assert!(DiffusionSchedule::linear(1001).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(DiffusionSchedule::from_alpha_bars(vec![1.0, 0.5, 0.5]).is_err());
        assert!(DiffusionSchedule::from_alpha_bars(vec![0.9, 0.5]).is_err());
        assert!(DiffusionSchedule::from_alpha_bars(vec![1.0, 0.5, 0.0]).is_err());
        let s = DiffusionSchedule::from_alpha_bars(vec![1.0, 0.5]).unwrap();
        assert!(s.clone().with_eta(0.0).is_ok());
        assert!(s.with_eta(0.5).is_err());
    }

    #[test]
    fn eps_of_standard_normal_is_scaled_input() {
        let gmm = standard_normal(3);
        let sched = DiffusionSchedule::linear(20).unwrap();
        let x = [0.3, -1.2, 2.0];
        for t in 1..=20 {
            let eps = gmm.exact_eps(&sched, &x, t).unwrap();
            let c = (1.0 - sched.alpha_bar(t)).sqrt();
            for (e, xi) in eps.iter().zip(&x) {
                assert!((e - c * xi).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn eps_at_single_component_mean() {
        // Single component N(mu, I): at x_t = sqrt(ab) mu the score vanishes.
        let mu = vec![1.0, -2.0];
        let gmm = GmmScoreModel::new(vec![1.0], vec![mu.clone()], 1.0).unwrap();
        let sched = DiffusionSchedule::linear(20).unwrap();
        for t in [1, 7, 20] {
            let ab = sched.alpha_bar(t);
            let x: Vec<f64> = mu.iter().map(|m| ab.sqrt() * m).collect();
            let eps = gmm.exact_eps(&sched, &x, t).unwrap();
            assert!(norm(&eps) < 1e-14);
        }
    }

    #[test]
    fn eps_vanishes_between_symmetric_components() {
        let gmm = GmmScoreModel::new(vec![0.5, 0.5], vec![vec![2.0, 1.0], vec![-2.0, -1.0]], 0.3)
            .unwrap();
        let sched = DiffusionSchedule::linear(20).unwrap();
        for t in 1..=20 {
            assert_eq!(
                gmm.exact_eps(&sched, &[0.0, 0.0], t).unwrap(),
                vec![0.0, 0.0]
            );
        }
    }

    #[test]
    fn eps_survives_far_points() {
        // Responsibilities underflow naively here; log-sum-exp keeps them finite.
        let gmm =
            GmmScoreModel::new(vec![0.5, 0.5], vec![vec![1.0; 4], vec![-1.0; 4]], 0.01).unwrap();
        let sched = DiffusionSchedule::linear(20).unwrap();
        let eps = gmm.exact_eps(&sched, &[300.0; 4], 1).unwrap();
        assert!(eps.iter().all(|e| e.is_finite() && *e > 0.0));
    }

    #[test]
    fn eps_rejects_bad_timestep() {
        let gmm = standard_normal(2);
        let sched = DiffusionSchedule::linear(20).unwrap();
        assert!(matches!(
            gmm.exact_eps(&sched, &[0.0, 0.0], 0),
            Err(Error::TimestepOutOfRange { t: 0, max: 20 })
        ));
        assert!(gmm.exact_eps(&sched, &[0.0, 0.0], 21).is_err());
    }

    #[test]
    fn reverse_step_matches_scalar_map() {
        let gmm = standard_normal(3);
        let sched = DiffusionSchedule::linear(20).unwrap();
        let eps_fn = |x: &[f64], t: usize| gmm.exact_eps(&sched, x, t);
        let x = [0.5, -0.25, 1.75];
        for t in 1..=20 {
            let out = ddim_step(&sched, eps_fn, &x, t, Direction::Reverse).unwrap();
            let m = reverse_multiplier(sched.alpha_bar(t - 1), sched.alpha_bar(t));
            for (o, xi) in out.iter().zip(&x) {
                assert!((o - m * xi).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn degenerate_step_is_identity() {
        let ab = 0.37;
        let x = [1.0, -3.0];
        let eps = [0.7f64.sqrt() * 1.0, 0.2];
        let out = ddim_update(ab, ab, &x, &eps).unwrap();
        for (o, xi) in out.iter().zip(&x) {
            assert!((o - xi).abs() < 1e-15);
        }
        assert!((reverse_multiplier(ab, ab) - 1.0).abs() < 1e-15);
        assert!(ddim_update(0.0, 0.5, &x, &eps).is_err());
    }

    #[test]
    fn one_step_round_trip_error_vanishes_as_steps_shrink() {
        // Invert then reverse at one step on N(0, I). The exact composite
        // multiplier is computed independently from the closed forms.
        let gmm = standard_normal(1);
        let mut last = f64::INFINITY;
        for gap in [0.5, 0.2, 0.05, 0.01, 0.001] {
            let ab_prev: f64 = 0.8;
            let ab_t = ab_prev * (1.0 - gap);
            let sched = DiffusionSchedule::from_alpha_bars(vec![1.0, ab_prev, ab_t]).unwrap();
            let eps_fn = |x: &[f64], t: usize| gmm.exact_eps(&sched, x, t);
            let x = [1.0];
            let up = ddim_step(&sched, eps_fn, &x, 2, Direction::Invert).unwrap();
            let back = ddim_step(&sched, eps_fn, &up, 2, Direction::Reverse).unwrap();
            let err = (back[0] - 1.0).abs();

            let c_t = (1.0 - ab_t).sqrt();
            let invert = (ab_t / ab_prev).sqrt() * (1.0 - (1.0 - ab_prev).sqrt() * c_t) + c_t * c_t;
            let oracle = invert * reverse_multiplier(ab_prev, ab_t);
            assert!((back[0] - oracle).abs() < 1e-14);
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn full_reverse_pass_is_product_of_multipliers() {
        let gmm = standard_normal(4);
        let sched = DiffusionSchedule::linear(20).unwrap();
        let eps_fn = |x: &[f64], t: usize| gmm.exact_eps(&sched, x, t);
        let x0 = vec![0.9, -0.4, 1.6, -2.2];
        let mut x = x0.clone();
        let mut product = 1.0;
        for t in (1..=20).rev() {
            x = ddim_step(&sched, eps_fn, &x, t, Direction::Reverse).unwrap();
            product *= reverse_multiplier(sched.alpha_bar(t - 1), sched.alpha_bar(t));
        }
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - product * b).abs() < 1e-10);
        }
    }

    fn tight_mixture(rng: &mut ChaCha8Rng) -> GmmScoreModel {
        let means: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..8)
                    .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        GmmScoreModel::new(vec![0.3, 0.3, 0.4], means, 0.05).unwrap()
    }

    #[test]
    fn mixture_mean_survives_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gmm = tight_mixture(&mut rng);
        let sched = DiffusionSchedule::linear(20).unwrap();
        for mean in gmm.means() {
            let out = reconstruct_ddim(&gmm, &sched, mean).unwrap();
            assert!(relative_error(&out, mean) < 0.05);
        }
    }

    #[test]
    fn reconstruction_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let gmm = tight_mixture(&mut rng);
        let sched = DiffusionSchedule::linear(20).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let a = reconstruct_ddim(&gmm, &sched, &x).unwrap();
        let b = reconstruct_ddim(&gmm, &sched, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    fn mean_round_trip_error(gmm: &GmmScoreModel, steps: usize, draws: &[Vec<f64>]) -> f64 {
        let sched = DiffusionSchedule::linear(steps).unwrap();
        let total: f64 = draws
            .iter()
            .map(|x| relative_error(&reconstruct_ddim(gmm, &sched, x).unwrap(), x))
            .sum();
        total / draws.len() as f64
    }

    #[test]
    fn round_trip_error_shrinks_with_more_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let gmm = tight_mixture(&mut rng);
        let draws: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let mean = &gmm.means()[i % 3];
                mean.iter()
                    .map(|m| m + gmm.sigma0() * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let errs: Vec<f64> = [10, 20, 50, 200]
            .iter()
            .map(|&t| mean_round_trip_error(&gmm, t, &draws))
            .collect();
        assert!(errs[1] < 0.05, "{errs:?}");
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "{errs:?}");
        }
    }

    #[test]
    fn far_points_move_toward_the_chart() {
        use crate::manifold::{ManifoldKind, ManifoldModel, MixtureChart};
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..8)
                    .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let kind = ManifoldKind::GaussianMixtureSupport(MixtureChart {
            weights: vec![1.0 / 3.0; 3],
            centers: centers.clone(),
            spread: 0.05,
        });
        let chart = ManifoldModel::random(vec![0.0; 16], 8, kind, &mut rng).unwrap();
        let means = centers.iter().map(|c| chart.embed(c).unwrap()).collect();
        let gmm = GmmScoreModel::new(vec![1.0 / 3.0; 3], means, 0.05).unwrap();
        let sched = DiffusionSchedule::linear(20).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let on = chart.sample_fake(&mut rng).point;
            let noise: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
            let normal = chart.normal_component(&noise).unwrap();
            let n = norm(&normal);
            let x: Vec<f64> = on
                .iter()
                .zip(&normal)
                .map(|(p, v)| p + 3.0 * v / n)
                .collect();
            let before = chart.distance_to_manifold(&x).unwrap();
            let after = chart
                .distance_to_manifold(&reconstruct_ddim(&gmm, &sched, &x).unwrap())
                .unwrap();
            worst = worst.max(after / before);
        }
        assert!(worst < 1.0, "{worst}");
    }
}
