//! Trace-class Q-Wiener process on the sine basis.
//!
//! The driving noise is `W_t = sum_k c_k w^k_t e_k` with `e_k = phi_k` and a
//! power-law spectrum `c_k = kappa k^(-gamma)`. Its covariance operator `R`
//! has kernel `r(x, y) = sum_k c_k^2 e_k(x) e_k(y)`, trace `sum_k c_k^2`, and
//! induces the weighted norm `||u||_R^2 = integral r(x,x) u(x)^2 dx` that
//! controls every stochastic estimate downstream.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::spectral::{GridFunction, SemigroupSpec, SineGrid};

/// Power-law spectrum `c_k = kappa * k^(-gamma)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectrumLaw {
    pub kappa: f64,
    pub gamma: f64,
}

/// Spectral description of the Q-Wiener process, pinned to one solver grid
/// for the `R`-norm quadrature.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    ck: Vec<f64>,
    trace: f64,
    kernel_sup: f64,
    length: f64,
    grid_m: usize,
    grid_spacing: f64,
    r_diag: Vec<f64>,
}

/// One Brownian increment over a step of length `dt`:
/// `dW_k = c_k xi_k sqrt(dt)` with `xi_k` i.i.d. standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub d_w: Vec<f64>,
    pub dt: f64,
}

impl NoiseModel {
    /// Builds the spectrum. `gamma > 1/2` is required so that the law the
    /// truncation samples would remain trace class as `k_noise -> infinity`.
    pub fn build(
        spec: &SemigroupSpec,
        law: SpectrumLaw,
        k_noise: usize,
        grid: &SineGrid,
    ) -> Result<Self> {
        if law.kappa < 0.0 || !law.kappa.is_finite() {
            return Err(KsError::InvalidParameter(format!(
                "noise scale kappa must be >= 0, got {}",
                law.kappa
            )));
        }
        if !(law.gamma > 0.5) {
            return Err(KsError::TraceClass(format!(
                "spectrum decay gamma = {} <= 1/2 makes sum c_k^2 divergent",
                law.gamma
            )));
        }
        if k_noise == 0 {
            return Err(KsError::InvalidParameter("k_noise must be >= 1".into()));
        }
        if k_noise > spec.modes() {
            return Err(KsError::InvalidParameter(format!(
                "k_noise = {} exceeds the {} resolved modes",
                k_noise,
                spec.modes()
            )));
        }
        if (grid.length() - spec.length()).abs() > 1e-12 * spec.length() {
            return Err(KsError::GridMismatch("grid and basis live on different intervals".into()));
        }
        let ck: Vec<f64> = (1..=k_noise).map(|k| law.kappa * (k as f64).powf(-law.gamma)).collect();
        let trace: f64 = ck.iter().map(|c| c * c).sum();
        let length = spec.length();

        let r_diag = Self::kernel_diag(&ck, length, grid.len(), grid.spacing());
        // Dense scan of the diagonal; |r(x,y)| <= sup_x r(x,x) by Cauchy-Schwarz
        // since r is a PSD kernel.
        let dense = 8 * k_noise + 13;
        let kernel_sup = Self::kernel_diag(&ck, length, dense, length / (dense + 1) as f64)
            .into_iter()
            .fold(0.0f64, f64::max);

        Ok(Self {
            ck,
            trace,
            kernel_sup,
            length,
            grid_m: grid.len(),
            grid_spacing: grid.spacing(),
            r_diag,
        })
    }

    fn kernel_diag(ck: &[f64], length: f64, m: usize, spacing: f64) -> Vec<f64> {
        let norm_sq = 2.0 / length;
        (1..=m)
            .map(|j| {
                let x = j as f64 * spacing;
                ck.iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let s = ((i + 1) as f64 * std::f64::consts::PI * x / length).sin();
                        c * c * norm_sq * s * s
                    })
                    .sum()
            })
            .collect()
    }

    pub fn modes(&self) -> usize {
        self.ck.len()
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.ck
    }

    /// `Tr R = sum c_k^2`.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// `sup_x r(x, x)`, which also dominates `|r(x, y)|`.
    pub fn kernel_sup(&self) -> f64 {
        self.kernel_sup
    }

    /// Diagonal `r(x_j, x_j)` on the pinned grid.
    pub fn r_diag(&self) -> &[f64] {
        &self.r_diag
    }

    pub fn is_zero(&self) -> bool {
        self.trace == 0.0
    }

    /// Covariance kernel `r(x, y)` at arbitrary points of the closed interval.
    pub fn kernel_eval(&self, x: f64, y: f64) -> Result<f64> {
        if !(0.0..=self.length).contains(&x) || !(0.0..=self.length).contains(&y) {
            return Err(KsError::InvalidParameter(format!(
                "kernel point ({x}, {y}) outside [0, {}]",
                self.length
            )));
        }
        let norm_sq = 2.0 / self.length;
        Ok(self
            .ck
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let w = (i + 1) as f64 * std::f64::consts::PI / self.length;
                c * c * norm_sq * (w * x).sin() * (w * y).sin()
            })
            .sum())
    }

    /// `||g||_R^2`, the quadrature of `r(x,x) g(x)^2` on the pinned grid.
    pub fn r_norm_sq(&self, g: &GridFunction) -> Result<f64> {
        if g.len() != self.grid_m || (g.spacing() - self.grid_spacing).abs() > 1e-12 {
            return Err(KsError::GridMismatch(format!(
                "R-norm expects the {}-point grid the model was built on",
                self.grid_m
            )));
        }
        Ok(self.grid_spacing
            * self
                .r_diag
                .iter()
                .zip(g.values())
                .map(|(&r, &v)| r * v * v)
                .sum::<f64>())
    }

    /// `(R u, u) = sum_k c_k^2 (u, e_k)^2` from sine coefficients of `u`.
    pub fn quadratic_form(&self, overlaps: &[f64]) -> f64 {
        self.ck
            .iter()
            .zip(overlaps)
            .map(|(&c, &o)| c * c * o * o)
            .sum()
    }

    /// Samples one increment. Consumes exactly `modes()` normal draws.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<NoiseIncrement> {
        if !(dt > 0.0) {
            return Err(KsError::InvalidParameter(format!("increment step must be > 0, got {dt}")));
        }
        let sqrt_dt = dt.sqrt();
        let d_w = self
            .ck
            .iter()
            .map(|&c| {
                let xi: f64 = rng.sample(StandardNormal);
                c * xi * sqrt_dt
            })
            .collect();
        Ok(NoiseIncrement { d_w, dt })
    }
}

/// Monte-Carlo check of the generalized Itô isometry
/// `E (int_0^t int_D u dy dW)^2 = E int_0^t (R u, u) ds`
/// for a deterministic integrand path, so the right side is plain quadrature.
#[derive(Debug, Clone, Serialize)]
pub struct IsometryReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub half_width: f64,
    pub n_samples: usize,
}

pub fn ito_isometry_check<R: Rng + ?Sized>(
    noise: &NoiseModel,
    grid: &SineGrid,
    u_path: &[GridFunction],
    dt: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<IsometryReport> {
    if n_samples < 100 {
        return Err(KsError::TooFewSamples(format!(
            "isometry check needs >= 100 samples, got {n_samples}"
        )));
    }
    if !(dt > 0.0) {
        return Err(KsError::InvalidParameter("dt must be > 0".into()));
    }
    // Overlaps (u_i, e_k) for every step; left-endpoint in time.
    let overlaps: Vec<Vec<f64>> = u_path
        .iter()
        .map(|g| grid.project(g, noise.modes()).map(|f| f.into_coeffs()))
        .collect::<Result<_>>()?;
    let rhs: f64 = overlaps.iter().map(|o| dt * noise.quadratic_form(o)).sum();

    let sqrt_dt = dt.sqrt();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let mut integral = 0.0;
        for o in &overlaps {
            for (c, ov) in noise.spectrum().iter().zip(o) {
                let xi: f64 = rng.sample(StandardNormal);
                integral += c * ov * sqrt_dt * xi;
            }
        }
        let sq = integral * integral;
        sum += sq;
        sum_sq += sq * sq;
    }
    let n = n_samples as f64;
    let lhs = sum / n;
    let var = (sum_sq / n - lhs * lhs).max(0.0);
    let half_width = 1.96 * (var / n).sqrt();
    let (ratio, half_width) = if rhs > 0.0 {
        (lhs / rhs, half_width / rhs)
    } else {
        (if lhs == 0.0 { 1.0 } else { f64::INFINITY }, 0.0)
    };
    Ok(IsometryReport { lhs, rhs, ratio, half_width, n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedSpec, StreamPurpose};
    use crate::spectral::SpectralField;
    use std::f64::consts::PI;

    fn setup(k: usize, m: usize, law: SpectrumLaw, k_noise: usize) -> (SemigroupSpec, SineGrid, NoiseModel) {
        let spec = SemigroupSpec::build(PI, k, 1.0).unwrap();
        let grid = SineGrid::new(PI, m).unwrap();
        let nm = NoiseModel::build(&spec, law, k_noise, &grid).unwrap();
        (spec, grid, nm)
    }

    #[test]
    fn trace_approaches_basel_sum() {
        let spec = SemigroupSpec::build(PI, 100_000, 1.0).unwrap();
        let grid = SineGrid::new(PI, 100_000).unwrap();
        let nm = NoiseModel::build(&spec, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 100_000, &grid).unwrap();
        let basel = PI * PI / 6.0;
        // Tail bound: sum_{k > K} k^-2 < 1/K.
        assert!((nm.trace() - basel).abs() < 1.0 / 100_000.0 + 1e-12);
    }

    #[test]
    fn partial_sum_oracle_at_k1000() {
        let (_, _, nm) = setup(1000, 1000, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 1000);
        let mut oracle = 0.0;
        for k in (1..=1000u32).rev() {
            oracle += 1.0 / (k as f64 * k as f64);
        }
        assert!((nm.trace() - oracle).abs() < 1e-14);
    }

    #[test]
    fn zero_scale_is_deterministic() {
        let (_, _, nm) = setup(16, 32, SpectrumLaw { kappa: 0.0, gamma: 1.0 }, 8);
        assert_eq!(nm.trace(), 0.0);
        let seeds = SeedSpec::new(0);
        let mut rng = seeds.stream(StreamPurpose::Path, 0);
        let inc = nm.sample_increment(1e-3, &mut rng).unwrap();
        assert!(inc.d_w.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn rejects_non_trace_class_law() {
        let spec = SemigroupSpec::build(PI, 16, 1.0).unwrap();
        let grid = SineGrid::new(PI, 32).unwrap();
        let err = NoiseModel::build(&spec, SpectrumLaw { kappa: 1.0, gamma: 0.5 }, 8, &grid);
        assert!(matches!(err, Err(KsError::TraceClass(_))));
    }

    #[test]
    fn single_mode_kernel_is_rank_one() {
        let (_, grid, nm) = setup(8, 16, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 1);
        let (x, y) = (0.7, 1.9);
        let phi = |x: f64| grid.eigenfunction(1, x);
        assert!((nm.kernel_eval(x, y).unwrap() - phi(x) * phi(y)).abs() < 1e-14);
        assert_eq!(nm.kernel_eval(0.0, 0.0).unwrap(), 0.0);
        assert!(nm.kernel_eval(-0.1, 0.5).is_err());
        // Symmetry.
        assert_eq!(nm.kernel_eval(x, y).unwrap(), nm.kernel_eval(y, x).unwrap());
    }

    #[test]
    fn kernel_diag_quadrature_equals_trace() {
        let (_, grid, nm) = setup(32, 64, SpectrumLaw { kappa: 0.8, gamma: 1.2 }, 16);
        let quad: f64 = grid.spacing() * nm.r_diag().iter().sum::<f64>();
        assert!((quad - nm.trace()).abs() <= 1e-8 * nm.trace());
    }

    #[test]
    fn kernel_sup_bounded_by_uniform_estimate() {
        let (_, _, nm) = setup(32, 64, SpectrumLaw { kappa: 1.0, gamma: 0.9 }, 24);
        assert!(nm.kernel_sup() <= (2.0 / PI) * nm.trace() * (1.0 + 1e-12));
        assert!(nm.kernel_sup() > 0.0);
    }

    #[test]
    fn kernel_hilbert_schmidt_norm_matches_quartic_sum() {
        let (_, grid, nm) = setup(16, 32, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 8);
        let m = grid.len();
        let h = grid.spacing();
        let mut quad = 0.0;
        for i in 1..=m {
            for j in 1..=m {
                let r = nm.kernel_eval(grid.point(i), grid.point(j)).unwrap();
                quad += h * h * r * r;
            }
        }
        let quartic: f64 = nm.spectrum().iter().map(|c| c.powi(4)).sum();
        assert!((quad - quartic).abs() <= 1e-8 * quartic);
        assert!(quartic <= nm.trace() * nm.trace() + 1e-15);
    }

    /// Min eigenvalue by cyclic Jacobi, enough for the small Gram matrices here.
    fn jacobi_min_eig(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        for _ in 0..50 {
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-15 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
                    let (s, c) = theta.sin_cos();
                    for i in 0..n {
                        let (aip, aiq) = (a[i][p], a[i][q]);
                        a[i][p] = c * aip - s * aiq;
                        a[i][q] = s * aip + c * aiq;
                    }
                    for i in 0..n {
                        let (api, aqi) = (a[p][i], a[q][i]);
                        a[p][i] = c * api - s * aqi;
                        a[q][i] = s * api + c * aqi;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn gram_matrices_are_positive_semidefinite() {
        let (_, _, nm) = setup(16, 32, SpectrumLaw { kappa: 1.0, gamma: 0.8 }, 12);
        let seeds = SeedSpec::new(5);
        let mut rng = seeds.stream(StreamPurpose::Certify, 0);
        for _ in 0..10 {
            let pts: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..PI)).collect();
            let gram: Vec<Vec<f64>> = pts
                .iter()
                .map(|&x| pts.iter().map(|&y| nm.kernel_eval(x, y).unwrap()).collect())
                .collect();
            assert!(jacobi_min_eig(gram) >= -1e-10);
        }
    }

    #[test]
    fn r_norm_of_first_mode_matches_sin4_integral() {
        let (_, grid, nm) = setup(8, 32, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 1);
        let g = grid.synthesize(&SpectralField::eigenmode(8, 1, 1.0)).unwrap();
        // integral phi_1^4 = (2/L)^2 * 3L/8 = 3/(2L).
        let oracle = 3.0 / (2.0 * PI);
        let got = nm.r_norm_sq(&g).unwrap();
        assert!((got - oracle).abs() <= 1e-10, "{got} vs {oracle}");
        // Zero input, zero norm.
        let zero = grid.synthesize(&SpectralField::zeros(8)).unwrap();
        assert_eq!(nm.r_norm_sq(&zero).unwrap(), 0.0);
        // Wrong grid refused.
        let other = GridFunction::new(vec![0.0; 7], 0.1);
        assert!(nm.r_norm_sq(&other).is_err());
    }

    #[test]
    fn r_norm_dominated_by_kernel_sup() {
        let (_, grid, nm) = setup(24, 48, SpectrumLaw { kappa: 1.3, gamma: 0.7 }, 16);
        let seeds = SeedSpec::new(6);
        let mut rng = seeds.stream(StreamPurpose::Certify, 1);
        for _ in 0..100 {
            let u = crate::spectral::random_decay_field(24, 0.4, 1.0, &mut rng);
            let g = grid.synthesize(&u).unwrap();
            let lhs = nm.r_norm_sq(&g).unwrap();
            let rhs = nm.kernel_sup() * g.l2_norm_sq();
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn increment_variance_and_determinism() {
        let (_, _, nm) = setup(8, 16, SpectrumLaw { kappa: 2.0, gamma: 1.5 }, 4);
        let seeds = SeedSpec::new(7);
        let dt: f64 = 1e-3;
        let n = 100_000;

        let mut rng = seeds.stream(StreamPurpose::Path, 0);
        let scale = nm.spectrum()[0] * dt.sqrt();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let inc = nm.sample_increment(dt, &mut rng).unwrap();
            let z = inc.d_w[0] / scale;
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((0.97..=1.03).contains(&var), "normalized variance {var}");

        let a = nm.sample_increment(dt, &mut seeds.stream(StreamPurpose::Path, 1)).unwrap();
        let b = nm.sample_increment(dt, &mut seeds.stream(StreamPurpose::Path, 1)).unwrap();
        assert_eq!(a, b);
        assert!(nm.sample_increment(0.0, &mut seeds.stream(StreamPurpose::Path, 2)).is_err());
    }

    #[test]
    fn increments_have_no_lag_one_correlation() {
        let (_, _, nm) = setup(8, 16, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 4);
        let seeds = SeedSpec::new(8);
        let mut rng = seeds.stream(StreamPurpose::Path, 0);
        let dt = 1e-2;
        let n = 100_000;
        let draws: Vec<NoiseIncrement> =
            (0..n).map(|_| nm.sample_increment(dt, &mut rng).unwrap()).collect();
        for mode in 0..4 {
            let xs: Vec<f64> = draws.iter().map(|i| i.d_w[mode]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let cov = xs
                .windows(2)
                .map(|w| (w[0] - mean) * (w[1] - mean))
                .sum::<f64>()
                / (n - 1) as f64;
            assert!((cov / var).abs() < 0.02, "mode {mode}: lag-1 rho {}", cov / var);
        }
    }

    #[test]
    fn wiener_covariance_structure() {
        // E{W_t(x) W_s(y)} = (t ^ s) r(x, y) at probe pairs, 10^4 paths.
        let (_, grid, nm) = setup(16, 32, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 8);
        let seeds = SeedSpec::new(9);
        let dt = 0.1;
        let steps = 10usize; // t in (0, 1]
        let n_paths = 10_000;
        let probes = [
            (0.3, 0.7, 0.9, 1.7),
            (0.5, 0.5, 1.1, 1.1),
            (0.2, 1.0, 2.0, 0.8),
            (1.0, 0.4, 1.3, 2.2),
            (0.8, 0.8, 0.6, 2.9),
        ]; // (t, s, x, y)
        let mut acc = [0.0f64; 5];
        for p in 0..n_paths {
            let mut rng = seeds.stream(StreamPurpose::Path, p as u64);
            // Cumulative sums of mode Brownian motions at each grid time.
            let mut w = vec![vec![0.0f64; nm.modes()]; steps + 1];
            for i in 0..steps {
                let inc = nm.sample_increment(dt, &mut rng).unwrap();
                for k in 0..nm.modes() {
                    w[i + 1][k] = w[i][k] + inc.d_w[k];
                }
            }
            let eval = |ti: usize, x: f64| -> f64 {
                (0..nm.modes()).map(|k| w[ti][k] * grid.eigenfunction(k + 1, x)).sum()
            };
            for (i, &(t, s, x, y)) in probes.iter().enumerate() {
                let ti = (t / dt).round() as usize;
                let si = (s / dt).round() as usize;
                acc[i] += eval(ti, x) * eval(si, y);
            }
        }
        for (i, &(t, s, x, y)) in probes.iter().enumerate() {
            let got = acc[i] / n_paths as f64;
            let want = t.min(s) * nm.kernel_eval(x, y).unwrap();
            assert!(
                (got - want).abs() <= 0.05 * want.abs().max(0.05),
                "probe {i}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn isometry_single_mode_unit_integrand() {
        let (_, grid, nm) = setup(8, 16, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 1);
        let steps = 50;
        let dt = 1.0 / steps as f64;
        let phi1 = grid.synthesize(&SpectralField::eigenmode(8, 1, 1.0)).unwrap();
        let path: Vec<GridFunction> = (0..steps).map(|_| phi1.clone()).collect();
        let seeds = SeedSpec::new(10);
        let mut rng = seeds.stream(StreamPurpose::Integral, 0);
        let rep = ito_isometry_check(&nm, &grid, &path, dt, 20_000, &mut rng).unwrap();
        assert!((rep.rhs - 1.0).abs() < 1e-10, "rhs {}", rep.rhs);
        assert!((rep.ratio - 1.0).abs() <= 0.05 + rep.half_width, "ratio {}", rep.ratio);
    }

    #[test]
    fn isometry_zero_integrand_and_sample_floor() {
        let (_, grid, nm) = setup(8, 16, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, 4);
        let zero = grid.synthesize(&SpectralField::zeros(8)).unwrap();
        let path = vec![zero; 10];
        let seeds = SeedSpec::new(11);
        let mut rng = seeds.stream(StreamPurpose::Integral, 0);
        let rep = ito_isometry_check(&nm, &grid, &path, 0.1, 200, &mut rng).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.rhs, 0.0);
        assert!(ito_isometry_check(&nm, &grid, &path, 0.1, 99, &mut rng).is_err());
    }
}
