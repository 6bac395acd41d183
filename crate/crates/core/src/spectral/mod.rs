//! Dirichlet sine eigenbasis on an interval, the semigroup of the linear
//! operator, Sobolev norms, and grid/coefficient transforms.
//!
//! On `(0, L)` the operator `d/dt + Lap^2 + Lap + c` diagonalizes over
//! `phi_k(x) = sqrt(2/L) sin(k pi x / L)` with Laplacian eigenvalues
//! `lambda_k = (k pi / L)^2` and decay rates `mu_k = lambda_k (lambda_k - 1) + c`.
//! Every field is a finite coefficient vector in this basis; the boundary
//! conditions `u = Lap u = 0` hold identically.

mod transform;

pub use transform::SineCosineEngine;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{KsError, Result};

/// Eigenstructure of the linear operator on `(0, L)` truncated to `K` modes.
#[derive(Debug, Clone)]
pub struct SemigroupSpec {
    length: f64,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    shift: f64,
    c0: f64,
}

impl SemigroupSpec {
    /// Builds the basis, choosing the smallest shift `c >= 0` such that
    /// `min_k mu_k >= mu_min`.
    pub fn build(length: f64, modes: usize, mu_min: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(KsError::InvalidParameter(format!("domain length must be > 0, got {length}")));
        }
        if modes == 0 {
            return Err(KsError::InvalidParameter("mode count must be >= 1".into()));
        }
        if !(mu_min > 0.0) || !mu_min.is_finite() {
            return Err(KsError::InvalidParameter(format!("mu_min must be > 0, got {mu_min}")));
        }
        let lambda: Vec<f64> = (1..=modes)
            .map(|k| {
                let w = k as f64 * std::f64::consts::PI / length;
                w * w
            })
            .collect();
        let raw_min = lambda.iter().map(|&l| l * (l - 1.0)).fold(f64::INFINITY, f64::min);
        let shift = (mu_min - raw_min).max(0.0);
        let mu: Vec<f64> = lambda.iter().map(|&l| l * (l - 1.0) + shift).collect();
        let c0 = mu.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { length, lambda, mu, shift, c0 })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn modes(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// The shift constant `c`.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `c0 = min_k mu_k`, the uniform decay rate of the semigroup.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// `max_k lambda_k^2 / mu_k`, the smoothing constant of the second-order
    /// estimate. Finite because `mu_k / lambda_k^2 -> 1`.
    pub fn lambda_sq_over_mu_max(&self) -> f64 {
        self.lambda
            .iter()
            .zip(&self.mu)
            .map(|(&l, &m)| l * l / m)
            .fold(0.0, f64::max)
    }

    fn check_field(&self, u: &SpectralField) -> Result<()> {
        if u.len() != self.modes() {
            return Err(KsError::GridMismatch(format!(
                "field has {} modes, basis has {}",
                u.len(),
                self.modes()
            )));
        }
        Ok(())
    }

    /// Per-mode decay factors `exp(-mu_k t)`.
    pub fn decay_factors(&self, t: f64) -> Vec<f64> {
        self.mu.iter().map(|&m| (-m * t).exp()).collect()
    }

    /// Applies the semigroup: coefficients become `a_k exp(-mu_k t)`.
    pub fn semigroup_apply(&self, u: &SpectralField, t: f64) -> Result<SpectralField> {
        if !(t >= 0.0) {
            return Err(KsError::InvalidParameter(format!("semigroup time must be >= 0, got {t}")));
        }
        self.check_field(u)?;
        let coeffs = u
            .coeffs()
            .iter()
            .zip(&self.mu)
            .map(|(&a, &m)| a * (-m * t).exp())
            .collect();
        Ok(SpectralField::new(coeffs))
    }

    /// Spectral Sobolev norm of order `s` in `{0, 1, 2}`:
    /// `(sum (1 + lambda_k^s) a_k^2)^(1/2)` with the order-0 case plain `l^2`.
    pub fn sobolev_norm(&self, u: &SpectralField, s: u32) -> Result<f64> {
        self.check_field(u)?;
        let sq = match s {
            0 => u.l2_norm_sq(),
            1 => u
                .coeffs()
                .iter()
                .zip(&self.lambda)
                .map(|(&a, &l)| (1.0 + l) * a * a)
                .sum(),
            2 => u
                .coeffs()
                .iter()
                .zip(&self.lambda)
                .map(|(&a, &l)| (1.0 + l * l) * a * a)
                .sum(),
            _ => {
                return Err(KsError::InvalidParameter(format!(
                    "unsupported Sobolev order {s}, expected 0, 1, or 2"
                )))
            }
        };
        Ok(f64::sqrt(sq))
    }

    /// `sum lambda_k^order a_k^2`: squared `L^2` norm of the order-th spatial
    /// derivative (order 1 = gradient, 2 = Laplacian, ...).
    pub fn seminorm_sq(&self, u: &SpectralField, order: u32) -> f64 {
        debug_assert_eq!(u.len(), self.modes());
        u.coeffs()
            .iter()
            .zip(&self.lambda)
            .map(|(&a, &l)| l.powi(order as i32) * a * a)
            .sum()
    }

    /// Squared spectral `H^2` norm: `sum (1 + lambda_k^2) a_k^2`.
    pub fn h2_norm_sq(&self, u: &SpectralField) -> f64 {
        u.l2_norm_sq() + self.seminorm_sq(u, 2)
    }
}

/// A field `u = sum a_k phi_k` as its sine-coefficient vector.
///
/// The basis is orthonormal, so `||u||_{L^2}^2 = sum a_k^2` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(modes: usize) -> Self {
        Self { coeffs: vec![0.0; modes] }
    }

    /// The pure eigenmode `amp * phi_{mode}` (1-based mode index).
    pub fn eigenmode(modes: usize, mode: usize, amp: f64) -> Self {
        assert!(mode >= 1 && mode <= modes);
        let mut coeffs = vec![0.0; modes];
        coeffs[mode - 1] = amp;
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|a| a * factor).collect() }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for a in &mut self.coeffs {
            *a *= factor;
        }
    }

    /// Coefficient-wise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len());
        Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len());
        Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|a| a.is_finite())
    }
}

/// Gaussian random field with coefficient decay `a_k ~ amp * k^(-decay) * N(0,1)`.
pub fn random_decay_field<R: Rng + ?Sized>(
    modes: usize,
    decay: f64,
    amp: f64,
    rng: &mut R,
) -> SpectralField {
    let coeffs = (1..=modes)
        .map(|k| {
            let xi: f64 = rng.sample(StandardNormal);
            amp * (k as f64).powf(-decay) * xi
        })
        .collect();
    SpectralField::new(coeffs)
}

/// Point samples on the uniform interior grid `x_j = j L/(M+1)`, `j = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    spacing: f64,
}

impl GridFunction {
    pub fn new(values: Vec<f64>, spacing: f64) -> Self {
        Self { values, spacing }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Trapezoidal `L^2` quadrature. The implicit boundary samples are zero,
    /// so the rule reduces to `h * sum v_j^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.spacing * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// `(integral |v|^q)^(1/q)` by the same quadrature; used with `q = 2/p`.
    pub fn lq_norm(&self, q: f64) -> f64 {
        assert!(q > 0.0);
        let s: f64 = self.values.iter().map(|v| v.abs().powf(q)).sum();
        (self.spacing * s).powf(1.0 / q)
    }
}

/// Transform engine tying an interior grid of `M` points on `(0, L)` to the
/// sine basis. All methods are pure and `&self`; the engine is `Send + Sync`.
#[derive(Debug, Clone)]
pub struct SineGrid {
    length: f64,
    m: usize,
    spacing: f64,
    engine: SineCosineEngine,
    norm: f64, // sqrt(2/L)
}

impl SineGrid {
    pub fn new(length: f64, m: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(KsError::InvalidParameter(format!("grid length must be > 0, got {length}")));
        }
        if m == 0 {
            return Err(KsError::InvalidParameter("grid size must be >= 1".into()));
        }
        Ok(Self {
            length,
            m,
            spacing: length / (m + 1) as f64,
            engine: SineCosineEngine::new(m),
            norm: (2.0 / length).sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn point(&self, j: usize) -> f64 {
        debug_assert!(j >= 1 && j <= self.m);
        j as f64 * self.spacing
    }

    pub fn points(&self) -> Vec<f64> {
        (1..=self.m).map(|j| self.point(j)).collect()
    }

    /// Evaluates the field at the grid points: `u(x_j) = sum a_k phi_k(x_j)`.
    /// Refuses grids coarser than the field's band limit.
    pub fn synthesize(&self, u: &SpectralField) -> Result<GridFunction> {
        if u.len() > self.m {
            return Err(KsError::Aliasing(format!(
                "cannot evaluate {} modes on {} grid points",
                u.len(),
                self.m
            )));
        }
        let mut values = self.engine.sine_synthesis(u.coeffs());
        for v in &mut values {
            *v *= self.norm;
        }
        Ok(GridFunction::new(values, self.spacing))
    }

    /// Sine coefficients of the grid data: exact inverse of [`synthesize`]
    /// for fields with at most `M` modes, and identical to the trapezoidal
    /// quadrature projection `a_k = h sum_j g_j phi_k(x_j)`.
    ///
    /// [`synthesize`]: SineGrid::synthesize
    pub fn project(&self, g: &GridFunction, modes: usize) -> Result<SpectralField> {
        if modes > self.m {
            return Err(KsError::Aliasing(format!(
                "cannot project onto {modes} modes from {} grid points",
                self.m
            )));
        }
        if g.len() != self.m {
            return Err(KsError::GridMismatch(format!(
                "grid function has {} points, grid has {}",
                g.len(),
                self.m
            )));
        }
        let sums = self.engine.sine_sums(g.values());
        let factor = self.spacing * self.norm;
        Ok(SpectralField::new(sums[..modes].iter().map(|s| s * factor).collect()))
    }

    /// Galerkin coefficients of `d/dx g` through integration by parts:
    /// `(g', phi_k) = -(g, phi_k')`, valid whenever `g` vanishes at the
    /// boundary. Returns the first `modes` coefficients.
    pub fn project_derivative(&self, g: &GridFunction, modes: usize) -> Result<SpectralField> {
        if modes > self.m {
            return Err(KsError::Aliasing(format!(
                "cannot project onto {modes} modes from {} grid points",
                self.m
            )));
        }
        if g.len() != self.m {
            return Err(KsError::GridMismatch(format!(
                "grid function has {} points, grid has {}",
                g.len(),
                self.m
            )));
        }
        let (_, cosines) = self.engine.sums(g.values());
        let factor = -self.spacing * self.norm * std::f64::consts::PI / self.length;
        Ok(SpectralField::new(
            cosines[..modes]
                .iter()
                .enumerate()
                .map(|(i, c)| (i + 1) as f64 * factor * c)
                .collect(),
        ))
    }

    /// Pointwise spatial derivative of order 1 or 2 of the field on the grid.
    pub fn derivative(&self, u: &SpectralField, order: u32) -> Result<GridFunction> {
        if u.len() > self.m {
            return Err(KsError::Aliasing(format!(
                "cannot evaluate {} modes on {} grid points",
                u.len(),
                self.m
            )));
        }
        let wave = std::f64::consts::PI / self.length;
        match order {
            1 => {
                let scaled: Vec<f64> = u
                    .coeffs()
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| a * (i + 1) as f64 * wave)
                    .collect();
                let mut values = self.engine.cosine_synthesis(&scaled);
                for v in &mut values {
                    *v *= self.norm;
                }
                Ok(GridFunction::new(values, self.spacing))
            }
            2 => {
                let scaled: Vec<f64> = u
                    .coeffs()
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let w = (i + 1) as f64 * wave;
                        -a * w * w
                    })
                    .collect();
                let mut values = self.engine.sine_synthesis(&scaled);
                for v in &mut values {
                    *v *= self.norm;
                }
                Ok(GridFunction::new(values, self.spacing))
            }
            _ => Err(KsError::InvalidParameter(format!(
                "unsupported derivative order {order}, expected 1 or 2"
            ))),
        }
    }

    /// `phi_k(x)` for arbitrary `x` (not necessarily a grid point).
    pub fn eigenfunction(&self, k: usize, x: f64) -> f64 {
        self.norm * (k as f64 * std::f64::consts::PI * x / self.length).sin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedSpec, StreamPurpose};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn basis(l: f64, k: usize) -> SemigroupSpec {
        SemigroupSpec::build(l, k, 1.0).unwrap()
    }

    #[test]
    fn build_on_pi_interval() {
        let spec = basis(PI, 4);
        assert_eq!(spec.lambda(), &[1.0, 4.0, 9.0, 16.0]);
        assert_eq!(spec.shift(), 1.0);
        assert_eq!(spec.mu(), &[1.0, 13.0, 73.0, 241.0]);
        assert_eq!(spec.c0(), 1.0);
    }

    #[test]
    fn build_on_two_pi_interval_single_mode() {
        let spec = basis(2.0 * PI, 1);
        assert!((spec.lambda()[0] - 0.25).abs() < 1e-15);
        assert!((spec.shift() - 19.0 / 16.0).abs() < 1e-15);
        assert!((spec.mu()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smoothing_ratio_scan_k256() {
        let spec = basis(PI, 256);
        // lambda_k = k^2 on (0, pi): the ratio k^4/(k^4 - k^2 + 1) peaks at k = 2.
        let max = spec.lambda_sq_over_mu_max();
        assert!((max - 16.0 / 13.0).abs() < 1e-12, "max ratio {max}");
        for (l, m) in spec.lambda().iter().zip(spec.mu()) {
            assert!(l * l <= max * m * (1.0 + 1e-15));
        }
    }

    #[test]
    fn build_rejects_bad_parameters() {
        assert!(SemigroupSpec::build(-1.0, 4, 1.0).is_err());
        assert!(SemigroupSpec::build(PI, 0, 1.0).is_err());
        assert!(SemigroupSpec::build(PI, 4, 0.0).is_err());
        assert!(SemigroupSpec::build(f64::NAN, 4, 1.0).is_err());
    }

    #[test]
    fn semigroup_identity_and_single_mode() {
        let spec = basis(PI, 4);
        let u = SpectralField::new(vec![0.3, -0.7, 0.2, 0.9]);
        let same = spec.semigroup_apply(&u, 0.0).unwrap();
        assert_eq!(same, u);

        let phi1 = SpectralField::eigenmode(4, 1, 1.0);
        let moved = spec.semigroup_apply(&phi1, 1.0).unwrap();
        assert!((moved.coeffs()[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(moved.coeffs()[1..].iter().all(|&a| a == 0.0));

        assert!(spec.semigroup_apply(&phi1, -0.1).is_err());
    }

    #[test]
    fn semigroup_contracts_at_rate_c0() {
        let spec = basis(PI, 32);
        let seeds = SeedSpec::new(1);
        let mut rng = seeds.stream(StreamPurpose::Certify, 0);
        let t = 0.1;
        let bound = (-spec.c0() * t).exp();
        for _ in 0..100 {
            let u = random_decay_field(32, 0.8, 1.0, &mut rng);
            let v = spec.semigroup_apply(&u, t).unwrap();
            assert!(v.l2_norm() <= bound * u.l2_norm() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn sobolev_norms_on_eigenmode() {
        let spec = basis(PI, 4);
        let phi1 = SpectralField::eigenmode(4, 1, 1.0);
        assert!((spec.sobolev_norm(&phi1, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!((spec.sobolev_norm(&phi1, 2).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
        assert!(spec.sobolev_norm(&phi1, 3).is_err());
    }

    #[test]
    fn h1_interpolation_inequality_sampled() {
        let spec = basis(PI, 64);
        let seeds = SeedSpec::new(2);
        let mut rng = seeds.stream(StreamPurpose::Certify, 1);
        for _ in 0..100 {
            let u = random_decay_field(64, 0.6, 1.0, &mut rng);
            let h1 = spec.sobolev_norm(&u, 1).unwrap();
            let l2 = u.l2_norm();
            let h2 = spec.sobolev_norm(&u, 2).unwrap();
            assert!(h1 * h1 <= l2 * h2 + l2 * l2 + 1e-12);
        }
    }

    #[test]
    fn synthesize_single_mode_on_coarse_grid() {
        let grid = SineGrid::new(PI, 3).unwrap();
        let u = SpectralField::eigenmode(3, 1, 1.0);
        let g = grid.synthesize(&u).unwrap();
        let scale = (2.0 / PI).sqrt();
        for (j, &v) in g.values().iter().enumerate() {
            let x = (j + 1) as f64 * PI / 4.0;
            assert!((v - scale * x.sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_field_synthesizes_to_zeros() {
        let grid = SineGrid::new(PI, 8).unwrap();
        let g = grid.synthesize(&SpectralField::zeros(4)).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transform_pair_rejects_aliasing() {
        let grid = SineGrid::new(PI, 4).unwrap();
        assert!(grid.synthesize(&SpectralField::zeros(5)).is_err());
        let g = GridFunction::new(vec![0.0; 4], grid.spacing());
        assert!(grid.project(&g, 5).is_err());
    }

    #[test]
    fn derivative_of_first_mode() {
        // Second derivative of phi_1 on (0, pi) is -phi_1.
        let grid = SineGrid::new(PI, 15).unwrap();
        let u = SpectralField::eigenmode(8, 1, 1.0);
        let d2 = grid.derivative(&u, 2).unwrap();
        let base = grid.synthesize(&u).unwrap();
        for (a, b) in d2.values().iter().zip(base.values()) {
            assert!((a + b).abs() < 1e-13);
        }
        // First derivative vanishes at x = pi/2 (grid midpoint, M odd).
        let d1 = grid.derivative(&u, 1).unwrap();
        assert!(d1.values()[7].abs() < 1e-12);
        assert!(grid.derivative(&u, 3).is_err());
    }

    #[test]
    fn derivative_parseval_oracle() {
        let seeds = SeedSpec::new(3);
        let mut rng = seeds.stream(StreamPurpose::Certify, 2);
        let grid = SineGrid::new(PI, 48).unwrap();
        let spec = basis(PI, 16);
        for _ in 0..20 {
            let u = random_decay_field(16, 0.5, 1.0, &mut rng);
            let d2 = grid.derivative(&u, 2).unwrap();
            let quad = d2.l2_norm_sq();
            let exact = spec.seminorm_sq(&u, 2);
            assert!((quad - exact).abs() <= 1e-10 * exact.max(1.0));
        }
    }

    #[test]
    fn eigenfunction_sup_attained_on_pow2_grid() {
        // With M+1 a power of two every mode attains |phi_k| = sqrt(2/L) at a
        // grid point, so the sup bound holds with equality.
        let l = PI;
        let grid = SineGrid::new(l, 63).unwrap();
        let bound = (2.0 / l).sqrt();
        for k in 1..=32 {
            let u = SpectralField::eigenmode(32, k, 1.0);
            let g = grid.synthesize(&u).unwrap();
            let sup = g.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((sup - bound).abs() < 1e-12, "mode {k}: sup {sup}");
            assert!(sup <= bound * (1.0 + 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip_is_identity(seed in 0u64..1000) {
            let seeds = SeedSpec::new(seed);
            let mut rng = seeds.stream(StreamPurpose::Certify, 3);
            let k = 24;
            let grid = SineGrid::new(2.5, 40).unwrap();
            let u = random_decay_field(k, 0.3, 2.0, &mut rng);
            let back = grid.project(&grid.synthesize(&u).unwrap(), k).unwrap();
            let err: f64 = u.sub(&back).l2_norm();
            prop_assert!(err <= 1e-12 * u.l2_norm().max(1.0));
        }

        #[test]
        fn discrete_parseval(seed in 0u64..1000) {
            let seeds = SeedSpec::new(seed);
            let mut rng = seeds.stream(StreamPurpose::Certify, 4);
            let k = 16;
            let grid = SineGrid::new(PI, 2 * k).unwrap();
            let u = random_decay_field(k, 0.4, 1.5, &mut rng);
            let quad = grid.synthesize(&u).unwrap().l2_norm_sq();
            let exact = u.l2_norm_sq();
            prop_assert!((quad - exact).abs() <= 1e-10 * exact.max(1e-30));
        }

        #[test]
        fn semigroup_composes(seed in 0u64..1000, s in 0.0f64..0.5, t in 0.0f64..0.5) {
            let seeds = SeedSpec::new(seed);
            let mut rng = seeds.stream(StreamPurpose::Certify, 5);
            let spec = SemigroupSpec::build(PI, 24, 1.0).unwrap();
            let u = random_decay_field(24, 0.4, 1.0, &mut rng);
            let two_step = spec
                .semigroup_apply(&spec.semigroup_apply(&u, s).unwrap(), t)
                .unwrap();
            let one_step = spec.semigroup_apply(&u, s + t).unwrap();
            let gap = two_step.sub(&one_step).l2_norm();
            prop_assert!(gap <= 1e-12 * one_step.l2_norm().max(1e-30));
        }
    }
}
