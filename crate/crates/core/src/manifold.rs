//! The synthetic generative manifold: an affine chart `M = { mu + U z }` in
//! `R^d`, with projection and labelled sampling on and off the chart.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, axpy, dot, norm, orthogonalize_against, sub};

const ORTHONORMAL_TOL: f64 = 1e-12;

/// Ground-truth class of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Fake is the positive class everywhere in this crate.
    pub fn is_positive(self) -> bool {
        self == Label::Fake
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Tangent-coordinate mixture that concentrates fake samples around a few
/// centres on the chart. Used with the diffusion reconstruction operator.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureChart {
    pub weights: Vec<f64>,
    /// Component centres in tangent coordinates (length k each).
    pub centers: Vec<Vec<f64>>,
    /// Isotropic standard deviation of each component.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldKind {
    AffineSubspace,
    GaussianMixtureSupport(MixtureChart),
}

/// How `sample_real` picks the off-manifold direction.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalDirection {
    /// Always the same unit vector of the orthogonal complement.
    Fixed(Vec<f64>),
    /// A fresh uniformly random unit vector of the complement per draw.
    Isotropic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub point: Vec<f64>,
    pub label: Label,
    /// Distance to the manifold at generation time.
    pub signal: f64,
    pub seed_id: u64,
}

impl LabeledSample {
    pub fn with_seed_id(mut self, seed_id: u64) -> Self {
        self.seed_id = seed_id;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldModel {
    ambient_dim: usize,
    /// Orthonormal columns of U, each of length `ambient_dim`.
    basis: Vec<Vec<f64>>,
    offset: Vec<f64>,
    kind: ManifoldKind,
    normal: NormalDirection,
}

impl ManifoldModel {
    /// Builds a model from an offset and the columns of the chart basis.
    ///
    /// The default off-manifold direction is the first vector obtained by
    /// orthogonalizing the standard basis `e_1, e_2, ...` against `U`.
    pub fn new(offset: Vec<f64>, basis: Vec<Vec<f64>>, kind: ManifoldKind) -> Result<Self> {
        let d = offset.len();
        let k = basis.len();
        if k == 0 || k >= d {
            return Err(Error::invalid(format!(
                "chart dimension must satisfy 1 <= k < d, got k={k}, d={d}"
            )));
        }
        for col in &basis {
            check_dim(d, col.len())?;
        }
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                let err = (dot(&basis[i], &basis[j]) - target).abs();
                if !(err < ORTHONORMAL_TOL) {
                    return Err(Error::invalid(format!(
                        "basis is not orthonormal: |<u{i},u{j}> - {target}| = {err:e}"
                    )));
                }
            }
        }
        if let ManifoldKind::GaussianMixtureSupport(mix) = &kind {
            validate_mixture(mix, k)?;
        }
        let normal = first_complement_vector(&basis, d);
        Ok(Self {
            ambient_dim: d,
            basis,
            offset,
            kind,
            normal: NormalDirection::Fixed(normal),
        })
    }

    /// `M` spanned by the first `k` coordinate axes through the origin.
    pub fn axis_aligned(ambient_dim: usize, chart_dim: usize) -> Result<Self> {
        let basis = (0..chart_dim)
            .map(|i| linalg::unit(ambient_dim, i))
            .collect();
        Self::new(vec![0.0; ambient_dim], basis, ManifoldKind::AffineSubspace)
    }

    /// A uniformly random `k`-dimensional chart through `offset`.
    pub fn random<R: Rng + ?Sized>(
        offset: Vec<f64>,
        chart_dim: usize,
        kind: ManifoldKind,
        rng: &mut R,
    ) -> Result<Self> {
        let d = offset.len();
        if chart_dim == 0 || chart_dim >= d {
            return Err(Error::invalid(format!(
                "chart dimension must satisfy 1 <= k < d, got k={chart_dim}, d={d}"
            )));
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(chart_dim);
        while basis.len() < chart_dim {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            orthogonalize_against(&mut v, &basis);
            let n = norm(&v);
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        Self::new(offset, basis, kind)
    }

    /// Replaces the off-manifold direction used by [`sample_real`](Self::sample_real).
    pub fn with_normal_direction(mut self, direction: NormalDirection) -> Result<Self> {
        if let NormalDirection::Fixed(v) = &direction {
            check_dim(self.ambient_dim, v.len())?;
            if (norm(v) - 1.0).abs() > ORTHONORMAL_TOL {
                return Err(Error::invalid("normal direction must be a unit vector"));
            }
            let leak = self
                .basis
                .iter()
                .map(|u| dot(u, v).abs())
                .fold(0.0, f64::max);
            if leak > ORTHONORMAL_TOL {
                return Err(Error::invalid(
                    "normal direction must be orthogonal to the chart basis",
                ));
            }
        }
        self.normal = direction;
        Ok(self)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn chart_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.kind
    }

    pub fn normal_direction(&self) -> &NormalDirection {
        &self.normal
    }

    /// `U^T (x - mu)`.
    pub fn tangent_coords(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.ambient_dim, x.len())?;
        let centered = sub(x, &self.offset);
        Ok(self.basis.iter().map(|u| dot(u, &centered)).collect())
    }

    /// `mu + U z`.
    pub fn embed(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.chart_dim(), z.len())?;
        let mut p = self.offset.clone();
        for (u, &zi) in self.basis.iter().zip(z) {
            axpy(zi, u, &mut p);
        }
        Ok(p)
    }

    /// Tangent vector `U z` (no offset).
    pub fn tangent_vector(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.chart_dim(), z.len())?;
        let mut v = vec![0.0; self.ambient_dim];
        for (u, &zi) in self.basis.iter().zip(z) {
            axpy(zi, u, &mut v);
        }
        Ok(v)
    }

    /// Orthogonal projection `mu + U U^T (x - mu)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.tangent_coords(x)?;
        self.embed(&z)
    }

    pub fn distance_to_manifold(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        Ok(norm(&sub(x, &p)))
    }

    /// Removes the tangent component of a direction vector: `(I - U U^T) v`.
    pub fn normal_component(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.ambient_dim, v.len())?;
        let mut out = v.to_vec();
        orthogonalize_against(&mut out, &self.basis);
        Ok(out)
    }

    /// Draws a generator sample: `mu + U z`, with `z ~ N(0, I_k)` on an affine
    /// chart or `z` from the tangent mixture on a mixture-supported chart.
    pub fn sample_fake<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledSample {
        let z = self.sample_tangent_coords(rng);
        let point = self.embed(&z).expect("tangent draw has chart dimension");
        LabeledSample {
            point,
            label: Label::Fake,
            signal: 0.0,
            seed_id: 0,
        }
    }

    /// Draws an on-manifold point and moves it a distance `s` along the
    /// configured normal direction.
    pub fn sample_real<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Result<LabeledSample> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::invalid(format!(
                "signal strength must be finite and >= 0, got {s}"
            )));
        }
        let z = self.sample_tangent_coords(rng);
        let mut point = self.embed(&z)?;
        let v = match &self.normal {
            NormalDirection::Fixed(v) => v.clone(),
            NormalDirection::Isotropic => self.random_normal_unit(rng),
        };
        axpy(s, &v, &mut point);
        Ok(LabeledSample {
            point,
            label: Label::Real,
            signal: s,
            seed_id: 0,
        })
    }

    fn sample_tangent_coords<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.chart_dim();
        match &self.kind {
            ManifoldKind::AffineSubspace => (0..k).map(|_| rng.sample(StandardNormal)).collect(),
            ManifoldKind::GaussianMixtureSupport(mix) => {
                let u: f64 = rng.random();
                let idx = pick_component(&mix.weights, u);
                mix.centers[idx]
                    .iter()
                    .map(|c| c + mix.spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }

    fn random_normal_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = (0..self.ambient_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            orthogonalize_against(&mut v, &self.basis);
            let n = norm(&v);
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                return v;
            }
        }
    }
}

fn validate_mixture(mix: &MixtureChart, k: usize) -> Result<()> {
    if mix.weights.is_empty() || mix.weights.len() != mix.centers.len() {
        return Err(Error::invalid(
            "mixture needs at least one component and one weight per centre",
        ));
    }
    if mix.weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("mixture weights must be >= 0"));
    }
    let total: f64 = mix.weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    for c in &mix.centers {
        check_dim(k, c.len())?;
    }
    if !(mix.spread >= 0.0) {
        return Err(Error::invalid("mixture spread must be >= 0"));
    }
    Ok(())
}

/// Inverse-CDF pick of a component index for `u` in `[0, 1)`.
pub(crate) fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn first_complement_vector(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    // The complement has dimension d - k >= 1, so some axis survives.
    let mut best: Option<Vec<f64>> = None;
    for i in 0..d {
        let mut v = linalg::unit(d, i);
        orthogonalize_against(&mut v, basis);
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            best = Some(v);
            break;
        }
    }
    best.expect("orthogonal complement is nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn x_axis() -> ManifoldModel {
        ManifoldModel::axis_aligned(2, 1).unwrap()
    }

    #[test]
    fn projects_onto_axis() {
        let m = x_axis();
        assert_eq!(m.project(&[3.0, 4.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(m.distance_to_manifold(&[3.0, 4.0]).unwrap(), 4.0);
    }

    #[test]
    fn projects_onto_shifted_axis() {
        let m = ManifoldModel::new(
            vec![1.0, 1.0],
            vec![vec![1.0, 0.0]],
            ManifoldKind::AffineSubspace,
        )
        .unwrap();
        assert_eq!(m.project(&[2.0, 5.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn on_manifold_point_is_fixed() {
        let m = x_axis();
        assert_eq!(m.project(&[-7.5, 0.0]).unwrap(), vec![-7.5, 0.0]);
        assert_eq!(m.distance_to_manifold(&[-7.5, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let m = x_axis();
        assert!(matches!(
            m.project(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
        assert!(m.distance_to_manifold(&[1.0]).is_err());
    }

    #[test]
    fn rejects_bad_chart_dims_and_non_orthonormal_basis() {
        assert!(ManifoldModel::axis_aligned(3, 0).is_err());
        assert!(ManifoldModel::axis_aligned(3, 3).is_err());
        let skew = ManifoldModel::new(
            vec![0.0; 3],
            vec![vec![1.0, 0.0, 0.0], vec![0.1, 1.0, 0.0]],
            ManifoldKind::AffineSubspace,
        );
        assert!(skew.is_err());
    }

    #[test]
    fn random_basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ManifoldModel::random(vec![0.5; 16], 8, ManifoldKind::AffineSubspace, &mut rng)
            .unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&m.basis()[i], &m.basis()[j]) - target).abs() < 1e-12);
            }
        }
        let NormalDirection::Fixed(v) = m.normal_direction() else {
            panic!("default direction is fixed")
        };
        assert!((norm(v) - 1.0).abs() < 1e-12);
        for u in m.basis() {
            assert!(dot(u, v).abs() < 1e-12);
        }
    }

    #[test]
    fn fake_draws_sit_on_manifold_and_repeat_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = ManifoldModel::random(vec![0.0; 16], 8, ManifoldKind::AffineSubspace, &mut rng)
            .unwrap();
        for _ in 0..100 {
            let s = m.sample_fake(&mut rng);
            assert_eq!(s.label, Label::Fake);
            assert_eq!(s.signal, 0.0);
            assert!(m.distance_to_manifold(&s.point).unwrap() < 1e-12);
        }
        let a = m.sample_fake(&mut ChaCha8Rng::seed_from_u64(99));
        let b = m.sample_fake(&mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a.point, b.point);
    }

    #[test]
    fn fake_mean_matches_offset() {
        // Each coordinate of mu + U z has unit-bounded variance, so 5 sigma/sqrt(n)
        // with sigma computed from the row norms of U.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu: Vec<f64> = (0..16).map(|i| i as f64 * 0.1 - 0.7).collect();
        let m =
            ManifoldModel::random(mu.clone(), 8, ManifoldKind::AffineSubspace, &mut rng).unwrap();
        let n = 10_000;
        let mut mean = vec![0.0; 16];
        for _ in 0..n {
            let s = m.sample_fake(&mut rng);
            axpy(1.0 / n as f64, &s.point, &mut mean);
        }
        for i in 0..16 {
            let var: f64 = m.basis().iter().map(|u| u[i] * u[i]).sum();
            let tol = 5.0 * var.sqrt() / (n as f64).sqrt();
            assert!(
                (mean[i] - mu[i]).abs() < tol,
                "coord {i}: {} vs {}",
                mean[i],
                mu[i]
            );
        }
    }

    #[test]
    fn real_draw_on_axis_model() {
        let m = x_axis();
        let NormalDirection::Fixed(v) = m.normal_direction() else {
            unreachable!()
        };
        assert_eq!(v, &vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = m.sample_real(0.3, &mut rng).unwrap();
        assert_eq!(s.label, Label::Real);
        assert_eq!(s.signal, 0.3);
        assert_eq!(s.point[1], 0.3);
        // Removing the on-manifold part leaves exactly (0, 0.3).
        let p = m.project(&s.point).unwrap();
        assert_eq!(sub(&s.point, &p), vec![0.0, 0.3]);
    }

    #[test]
    fn real_draw_distance_equals_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = ManifoldModel::random(vec![0.2; 16], 8, ManifoldKind::AffineSubspace, &mut rng)
            .unwrap();
        let iso = m
            .clone()
            .with_normal_direction(NormalDirection::Isotropic)
            .unwrap();
        for &s in &[0.0, 0.05, 0.3, 2.0] {
            for model in [&m, &iso] {
                let r = model.sample_real(s, &mut rng).unwrap();
                let dist = model.distance_to_manifold(&r.point).unwrap();
                assert!((dist - s).abs() < 1e-12, "s={s} dist={dist}");
            }
        }
    }

    #[test]
    fn zero_signal_real_matches_fake_draw() {
        let m = ManifoldModel::axis_aligned(4, 2).unwrap();
        let a = m
            .sample_real(0.0, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        let b = m.sample_fake(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a.point, b.point);
        assert_eq!(a.signal, 0.0);
    }

    #[test]
    fn negative_signal_is_rejected() {
        let m = x_axis();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            m.sample_real(-0.1, &mut rng),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn fixed_direction_must_be_normal() {
        let m = ManifoldModel::axis_aligned(3, 1).unwrap();
        assert!(m
            .clone()
            .with_normal_direction(NormalDirection::Fixed(vec![1.0, 0.0, 0.0]))
            .is_err());
        assert!(m
            .with_normal_direction(NormalDirection::Fixed(vec![0.0, 0.0, 1.0]))
            .is_ok());
    }

    #[test]
    fn mixture_support_draws_near_centres() {
        let mix = MixtureChart {
            weights: vec![0.5, 0.5],
            centers: vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            spread: 0.0,
        };
        let m = ManifoldModel::new(
            vec![0.0; 4],
            vec![linalg::unit(4, 0), linalg::unit(4, 1)],
            ManifoldKind::GaussianMixtureSupport(mix),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = m.sample_fake(&mut rng).point;
            assert!(p == vec![2.0, 0.0, 0.0, 0.0] || p == vec![-2.0, 0.0, 0.0, 0.0]);
        }
    }
}
