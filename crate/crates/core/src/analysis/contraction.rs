//! Empirical contraction factors of the Duhamel operator and Lipschitz
//! continuity of the solution map, both under common random numbers.
//!
//! For pairs `(u, v)` driven by the same noise, the operator satisfies
//! `||Gamma u - Gamma v||_{X_T}^2 <= C(N) (T^(3/2 - d(p-1)/4) + T)
//! ||u - v||_{X_T}^2`; the factor is measured per window and fitted against
//! that scaling. In the derivative-dependent noise regime the `Y_T` factor
//! keeps an `eps`-proportional floor as `T -> 0`.

use serde::Serialize;

use crate::analysis::stats::{nonneg_lsq, r_squared};
use crate::error::{KsError, Result};
use crate::exec::{try_map_indexed, ExecMode};
use crate::rng::{SeedSpec, StreamPurpose};
use crate::solver::{
    gamma_apply, run_path_with_noise, sample_noise_path, Problem, SolverConfig,
};
use crate::spectral::{random_decay_field, SpectralField};
use rand::Rng;

/// Which contraction-space norm to measure in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathNorm {
    /// `sup_t ||.||_{L^2}`.
    Xt,
    /// `(sup_t ||.||_{L^2}^2 + int_0^T ||.||_{H^2}^2 dt)^(1/2)`.
    Yt,
}

fn path_norm_sq(problem: &Problem, states: &[SpectralField], dt: f64, norm: PathNorm) -> f64 {
    let sup = states.iter().map(|s| s.l2_norm_sq()).fold(0.0, f64::max);
    match norm {
        PathNorm::Xt => sup,
        PathNorm::Yt => {
            let int: f64 = states[..states.len() - 1]
                .iter()
                .map(|s| dt * problem.basis.h2_norm_sq(s))
                .sum();
            sup + int
        }
    }
}

fn diff_states(a: &[SpectralField], b: &[SpectralField]) -> Vec<SpectralField> {
    a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()
}

/// Measured factor on one window.
#[derive(Debug, Clone, Serialize)]
pub struct WindowFactor {
    pub t_window: f64,
    /// `sup` over pairs of the pathwise ratio.
    pub max_ratio: f64,
    /// Root-mean-square ratio over pairs (ensemble contraction factor).
    pub rms_ratio: f64,
    pub n_pairs: usize,
}

/// Options for the window sweep.
#[derive(Debug, Clone)]
pub struct ContractionOptions {
    pub windows: Vec<f64>,
    pub n_pairs: usize,
    pub norm: PathNorm,
    /// Fraction of pair directions concentrated on the top modes; rough
    /// directions expose the `H^2` part of the `Y_T` norm.
    pub rough_fraction: f64,
}

/// Measures `||Gamma u - Gamma v|| / ||u - v||` over random common-noise
/// pairs per window. Factors at or above 1 are reported, not errors: they
/// delimit the contraction regime.
pub fn measure_contraction(
    problem: &Problem,
    cfg: &SolverConfig,
    opts: &ContractionOptions,
    seeds: SeedSpec,
    mode: ExecMode,
) -> Result<Vec<WindowFactor>> {
    if opts.windows.is_empty() || opts.n_pairs == 0 {
        return Err(KsError::InvalidParameter("empty contraction sweep".into()));
    }
    let radius = problem.trunc.radius();
    let k = problem.basis.modes();
    let mut out = Vec::with_capacity(opts.windows.len());
    for (w_idx, &t_window) in opts.windows.iter().enumerate() {
        if t_window < cfg.dt {
            return Err(KsError::InvalidParameter(format!(
                "window {t_window} is below the step size {}",
                cfg.dt
            )));
        }
        let wcfg = SolverConfig { t_end: t_window, ..cfg.clone() };
        let n = wcfg.n_steps();
        let ratios: Vec<(f64, f64)> = try_map_indexed(mode, opts.n_pairs, |pair| {
            let idx = (w_idx as u64) << 32 | pair as u64;
            let mut rng = seeds.stream(StreamPurpose::Pair, idx);
            let noise_path = sample_noise_path(&problem.noise, wcfg.dt, n, &mut rng)?;

            // Base point: smooth random path, constant in time, inside ~1.2N.
            let mut base = random_decay_field(k, rng.random_range(0.8..1.6), 1.0, &mut rng);
            let target: f64 = rng.random_range(0.05..1.2) * radius;
            let bn = base.l2_norm();
            if bn > 0.0 {
                base.scale_in_place(target / bn);
            }
            // Direction: smooth or rough, with log-uniform separation.
            let rough = rng.random_range(0.0..1.0) < opts.rough_fraction;
            let mut dir = if rough {
                let mut d = SpectralField::zeros(k);
                for i in k / 2..k {
                    d.coeffs_mut()[i] = rng.random_range(-1.0..1.0);
                }
                d
            } else {
                random_decay_field(k, 1.5, 1.0, &mut rng)
            };
            let dn = dir.l2_norm();
            if dn > 0.0 {
                dir.scale_in_place(1.0 / dn);
            }
            let delta: f64 = 10f64.powf(rng.random_range(-3.0..0.0)) * radius;
            let dir = dir.scaled(delta);

            let u_path: Vec<SpectralField> = (0..=n).map(|_| base.clone()).collect();
            let v_state = base.add(&dir);
            let v_path: Vec<SpectralField> = (0..=n).map(|_| v_state.clone()).collect();
            let d_path: Vec<SpectralField> = (0..=n).map(|_| dir.clone()).collect();

            let gu = gamma_apply(problem, &wcfg, &u_path, &base, &noise_path)?;
            let gv = gamma_apply(problem, &wcfg, &v_path, &base, &noise_path)?;

            let num = path_norm_sq(problem, &diff_states(&gu, &gv), wcfg.dt, opts.norm);
            let den = path_norm_sq(problem, &d_path, wcfg.dt, opts.norm);
            Ok::<(f64, f64), KsError>((num, den))
        })?;
        let mut max_ratio = 0.0f64;
        let mut num_sum = 0.0;
        let mut den_sum = 0.0;
        for &(num, den) in &ratios {
            if den > 0.0 {
                max_ratio = max_ratio.max((num / den).sqrt());
            }
            num_sum += num;
            den_sum += den;
        }
        out.push(WindowFactor {
            t_window,
            max_ratio,
            rms_ratio: (num_sum / den_sum).sqrt(),
            n_pairs: opts.n_pairs,
        });
    }
    Ok(out)
}

/// Fit of `factor^2 ~ a + b T^(3/2 - d(p-1)/4) + c T` with nonnegative
/// coefficients. `a` is the `T -> 0` floor.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub floor: f64,
    pub coef_power: f64,
    pub coef_linear: f64,
    pub exponent: f64,
    pub r2: f64,
}

pub fn fit_contraction_scaling(factors: &[WindowFactor], p: f64, use_max: bool) -> Result<ScalingFit> {
    if factors.len() < 3 {
        return Err(KsError::TooFewSamples("scaling fit needs >= 3 windows".into()));
    }
    let exponent = 1.5 - (p - 1.0) / 4.0;
    let y: Vec<f64> = factors
        .iter()
        .map(|f| {
            let r = if use_max { f.max_ratio } else { f.rms_ratio };
            r * r
        })
        .collect();
    let ones = vec![1.0; factors.len()];
    let powers: Vec<f64> = factors.iter().map(|f| f.t_window.powf(exponent)).collect();
    let linear: Vec<f64> = factors.iter().map(|f| f.t_window).collect();
    let coefs = nonneg_lsq(&[ones.clone(), powers.clone(), linear.clone()], &y);
    let fitted: Vec<f64> = (0..factors.len())
        .map(|i| coefs[0] + coefs[1] * powers[i] + coefs[2] * linear[i])
        .collect();
    Ok(ScalingFit {
        floor: coefs[0],
        coef_power: coefs[1],
        coef_linear: coefs[2],
        exponent,
        r2: r_squared(&y, &fitted),
    })
}

/// One point of the solution-map Lipschitz measurement.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzPoint {
    pub delta: f64,
    /// `||u(u0) - u(v0)||_{norm} / sqrt(E ||u0 - v0||^2)` over the pair set.
    pub ratio: f64,
    pub n_pairs: usize,
}

/// Solves pairs of initial conditions `(u0, u0 + delta d)` with common
/// noise and reports the solution-map expansion per separation `delta`.
pub fn solution_map_lipschitz(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    deltas: &[f64],
    n_pairs: usize,
    norm: PathNorm,
    seeds: SeedSpec,
    mode: ExecMode,
) -> Result<Vec<LipschitzPoint>> {
    if deltas.is_empty() || n_pairs == 0 {
        return Err(KsError::InvalidParameter("empty Lipschitz sweep".into()));
    }
    let k = problem.basis.modes();
    let mut out = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(delta > 0.0) {
            return Err(KsError::InvalidParameter("pair distances must be > 0".into()));
        }
        let sq: Vec<f64> = try_map_indexed(mode, n_pairs, |pair| {
            // Directions and noise are keyed by pair only, so shrinking delta
            // compares the same geometry and the same realization.
            let mut dir_rng = seeds.stream(StreamPurpose::InitialData, pair as u64);
            let mut dir = random_decay_field(k, 1.5, 1.0, &mut dir_rng);
            let dn = dir.l2_norm();
            if dn > 0.0 {
                dir.scale_in_place(delta / dn);
            }
            let v0 = u0.add(&dir);
            let mut rng = seeds.stream(StreamPurpose::Pair, pair as u64);
            let noise_path = sample_noise_path(&problem.noise, cfg.dt, cfg.n_steps(), &mut rng)?;
            let a = run_path_with_noise(problem, cfg, &problem.trunc, u0, &noise_path)?;
            let b = run_path_with_noise(problem, cfg, &problem.trunc, &v0, &noise_path)?;
            Ok::<f64, KsError>(path_norm_sq(problem, &diff_states(&a.states, &b.states), cfg.dt, norm))
        })?;
        let mean_sq = sq.iter().sum::<f64>() / n_pairs as f64;
        out.push(LipschitzPoint { delta, ratio: mean_sq.sqrt() / delta, n_pairs });
    }
    Ok(out)
}
