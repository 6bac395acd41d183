//! Refinement studies: pathwise strong self-convergence under dt-halving
//! with common noise, and the mild/strong equivalence oracle.
//!
//! The mild stepper and a direct stiff-ODE integration of the Galerkin
//! system `a_k' = -mu_k a_k + c a_k - (div f_N(u))_k` discretize the same
//! dynamics through different routes; their sup-in-time gap must be O(dt).

use serde::Serialize;

use crate::analysis::stats::{linear_fit, LinFit};
use crate::error::{KsError, Result};
use crate::exec::{try_map_indexed, ExecMode};
use crate::rng::{SeedSpec, StreamPurpose};
use crate::solver::{
    coarsen_increments, run_path_with_noise, sample_noise_path, Problem, SolverConfig,
};
use crate::spectral::SpectralField;

/// Mean pathwise gaps between dt levels and the fitted order.
#[derive(Debug, Clone, Serialize)]
pub struct RefinementStudy {
    /// `(dt, E sup_t ||u_dt - u_fine||)` per coarse level.
    pub gaps: Vec<(f64, f64)>,
    pub order: LinFit,
}

/// Runs each path at the finest dt and at `levels` coarsenings of the same
/// Brownian increments; the gap to the finest run is measured at shared
/// grid times.
pub fn strong_self_convergence(
    problem: &Problem,
    fine_cfg: &SolverConfig,
    u0: &SpectralField,
    n_paths: usize,
    levels: usize,
    seeds: SeedSpec,
    mode: ExecMode,
) -> Result<RefinementStudy> {
    if levels < 2 {
        return Err(KsError::InvalidParameter("need >= 2 coarsening levels".into()));
    }
    let fine_steps = fine_cfg.n_steps();
    if fine_steps % (1 << levels) != 0 {
        return Err(KsError::InvalidParameter(format!(
            "fine step count {fine_steps} must be divisible by 2^{levels}"
        )));
    }
    let per_path: Vec<Vec<f64>> = try_map_indexed(mode, n_paths, |path| {
        let mut rng = seeds.stream(StreamPurpose::Path, path as u64);
        let mut incs = sample_noise_path(&problem.noise, fine_cfg.dt, fine_steps, &mut rng)?;
        let fine = run_path_with_noise(problem, fine_cfg, &problem.trunc, u0, &incs)?;
        let mut cfg = fine_cfg.clone();
        let mut gaps = Vec::with_capacity(levels);
        for level in 1..=levels {
            incs = coarsen_increments(&incs);
            cfg = SolverConfig { dt: 2.0 * cfg.dt, ..cfg };
            let coarse = run_path_with_noise(problem, &cfg, &problem.trunc, u0, &incs)?;
            let stride = 1 << level;
            let gap = coarse
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| s.sub(&fine.states[i * stride]).l2_norm())
                .fold(0.0, f64::max);
            gaps.push(gap);
        }
        Ok::<Vec<f64>, KsError>(gaps)
    })?;

    let mut gaps = Vec::with_capacity(levels);
    for level in 0..levels {
        let mean = per_path.iter().map(|g| g[level]).sum::<f64>() / n_paths as f64;
        gaps.push((fine_cfg.dt * (1 << (level + 1)) as f64, mean));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        gaps.iter().map(|&(dt, g)| (dt.ln(), g.max(1e-300).ln())).unzip();
    let order = linear_fit(&xs, &ys);
    Ok(RefinementStudy { gaps, order })
}

/// Integrates the deterministic Galerkin ODE system with classical RK4 and
/// `substeps` stages per output step. The independent route for the
/// mild/strong comparison; requires a noise-free problem.
pub fn galerkin_ode_path(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    substeps: usize,
) -> Result<Vec<SpectralField>> {
    if !problem.is_deterministic() {
        return Err(KsError::InvalidParameter(
            "the ODE oracle integrates the noise-free system".into(),
        ));
    }
    if substeps == 0 {
        return Err(KsError::InvalidParameter("substeps must be >= 1".into()));
    }
    // RK4 stability for the stiffest mode: |mu_max h| < 2.78.
    let h = cfg.dt / substeps as f64;
    let mu_max = problem.basis.mu().last().copied().unwrap();
    if mu_max * h > 2.5 {
        return Err(KsError::InvalidParameter(format!(
            "RK4 substep {h:.3e} unstable for mu_max = {mu_max:.3e}; \
             raise substeps above {}",
            (cfg.dt * mu_max / 2.5).ceil()
        )));
    }
    let rhs = |u: &SpectralField| -> Result<SpectralField> {
        let drift = problem.drift(&problem.trunc, u)?;
        Ok(SpectralField::new(
            u.coeffs()
                .iter()
                .zip(problem.basis.mu())
                .zip(drift.coeffs())
                .map(|((&a, &mu), &d)| -mu * a + d)
                .collect(),
        ))
    };
    let mut out = Vec::with_capacity(cfg.n_steps() + 1);
    let mut state = u0.clone();
    out.push(state.clone());
    for _ in 0..cfg.n_steps() {
        for _ in 0..substeps {
            let k1 = rhs(&state)?;
            let k2 = rhs(&axpy(&state, &k1, 0.5 * h))?;
            let k3 = rhs(&axpy(&state, &k2, 0.5 * h))?;
            let k4 = rhs(&axpy(&state, &k3, h))?;
            state = SpectralField::new(
                state
                    .coeffs()
                    .iter()
                    .zip(k1.coeffs())
                    .zip(k2.coeffs().iter().zip(k3.coeffs()))
                    .zip(k4.coeffs())
                    .map(|(((&a, &v1), (&v2, &v3)), &v4)| {
                        a + h / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
                    })
                    .collect(),
            );
            if !state.is_finite() {
                return Err(KsError::Diverged { t: f64::NAN });
            }
        }
        out.push(state.clone());
    }
    Ok(out)
}

fn axpy(base: &SpectralField, dir: &SpectralField, scale: f64) -> SpectralField {
    SpectralField::new(
        base.coeffs()
            .iter()
            .zip(dir.coeffs())
            .map(|(&a, &d)| a + scale * d)
            .collect(),
    )
}

/// Sup-in-time `L^2` gap between the mild exponential-Euler path and the
/// RK4 Galerkin route at one dt.
pub fn mild_strong_gap(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    substeps: usize,
) -> Result<f64> {
    let zero_noise =
        vec![crate::noise::NoiseIncrement { d_w: vec![0.0; problem.noise.modes()], dt: cfg.dt };
            cfg.n_steps()];
    let mild = run_path_with_noise(problem, cfg, &problem.trunc, u0, &zero_noise)?;
    let strong = galerkin_ode_path(problem, cfg, u0, substeps)?;
    Ok(mild
        .states
        .iter()
        .zip(&strong)
        .map(|(a, b)| a.sub(b).l2_norm())
        .fold(0.0, f64::max))
}
