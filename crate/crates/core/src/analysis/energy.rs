//! Energy identity checks and the mean-energy Gronwall envelope.
//!
//! Deterministic runs satisfy
//! `d/dt ||u||^2 / 2 + ||Lap u||^2 - ||grad u||^2 = 0`
//! (the flux term drops by discrete conservation). Stochastic ensembles obey
//! the pre-Gronwall balance
//! `E||u_{t+dt}||^2 - E||u_t||^2 = -2 dt E(||Lap u||^2 - ||grad u||^2)
//!  + dt E||sigma(u)||_R^2 + o(dt)`
//! whose Gronwall closure is the envelope
//! `(E||u_0||^2 + C t) exp((C + 2 lambda_1 - 2 lambda_1^2) t)` with `C` the
//! certified noise-growth constant.

use serde::Serialize;

use crate::analysis::stats::mean_and_half_width;
use crate::analysis::EnsembleStats;
use crate::dynamics::div_flux_galerkin;
use crate::error::{KsError, Result};
use crate::solver::{NormTrace, Problem, Trajectory};

/// Residuals of the deterministic energy identity along one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyIdentityReport {
    /// `max_i |residual_i|` of
    /// `||u_{i+1}||^2 - ||u_i||^2 + 2 dt (||Lap u_i||^2 - ||grad u_i||^2)`.
    pub max_residual: f64,
    pub max_residual_over_dt: f64,
    /// `max_i |(div f_N(u_i), u_i)|`, the discrete conservation defect.
    pub flux_orthogonality_max: f64,
    pub dt: f64,
}

pub fn energy_identity_residual(problem: &Problem, traj: &Trajectory) -> Result<EnergyIdentityReport> {
    if !problem.is_deterministic() {
        return Err(KsError::InvalidParameter(
            "the pathwise energy identity applies to noise-free runs; \
             use the mean-energy balance for ensembles"
                .into(),
        ));
    }
    if traj.states.len() < 2 {
        return Err(KsError::InvalidParameter("trajectory too short".into()));
    }
    let dt = traj.times[1] - traj.times[0];
    let mut max_residual = 0.0f64;
    let mut max_orth = 0.0f64;
    for i in 0..traj.states.len() - 1 {
        let u = &traj.states[i];
        let l2_now = u.l2_norm_sq();
        let l2_next = traj.states[i + 1].l2_norm_sq();
        let lap = problem.basis.seminorm_sq(u, 2);
        let grad = problem.basis.seminorm_sq(u, 1);
        let residual = l2_next - l2_now + 2.0 * dt * (lap - grad);
        max_residual = max_residual.max(residual.abs());

        let div_f = div_flux_galerkin(&problem.flux, &problem.trunc, &problem.grid, u)?;
        let inner: f64 = div_f.coeffs().iter().zip(u.coeffs()).map(|(a, b)| a * b).sum();
        max_orth = max_orth.max(inner.abs());
    }
    Ok(EnergyIdentityReport {
        max_residual,
        max_residual_over_dt: max_residual / dt,
        flux_orthogonality_max: max_orth,
        dt,
    })
}

/// Comparison of the stopped moment curve against the Gronwall envelope.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub envelope: Vec<f64>,
    /// `max_i (estimate_i - half_width_i - envelope_i)`: positive means a
    /// violation beyond statistical uncertainty.
    pub max_violation: f64,
    /// `min_i (envelope_i - estimate_i)`: the raw margin.
    pub min_margin: f64,
    pub c_sigma: f64,
    pub rate: f64,
}

pub fn mean_energy_envelope(
    stats: &EnsembleStats,
    e_u0_sq: f64,
    c_sigma: f64,
    lambda1: f64,
) -> EnvelopeReport {
    let rate = c_sigma + 2.0 * lambda1 - 2.0 * lambda1 * lambda1;
    let envelope: Vec<f64> = stats
        .times
        .iter()
        .map(|&t| (e_u0_sq + c_sigma * t) * (rate * t).exp())
        .collect();
    let mut max_violation = f64::NEG_INFINITY;
    let mut min_margin = f64::INFINITY;
    for i in 0..envelope.len() {
        let est = stats.moment_curve[i];
        let hw = stats.moment_half_width[i];
        max_violation = max_violation.max(est - hw - envelope[i]);
        min_margin = min_margin.min(envelope[i] - est);
    }
    EnvelopeReport { envelope, max_violation, min_margin, c_sigma, rate }
}

/// Per-step defect of the discrete Itô mean-energy balance.
#[derive(Debug, Clone, Serialize)]
pub struct ItoBalanceReport {
    pub max_defect: f64,
    pub max_defect_over_dt: f64,
    pub dt: f64,
}

/// Requires traces recorded with `record_sigma_r = true` and no stopping
/// (choose the truncation level far above the dynamics).
pub fn ito_balance_defect(traces: &[NormTrace]) -> Result<ItoBalanceReport> {
    if traces.len() < 100 {
        return Err(KsError::TooFewSamples(format!(
            "Itô balance needs >= 100 paths, got {}",
            traces.len()
        )));
    }
    let n_times = traces[0].times.len();
    let dt = traces[0].times[1] - traces[0].times[0];
    if traces.iter().any(|t| t.sigma_r_sq.is_none()) {
        return Err(KsError::InvalidParameter(
            "Itô balance needs traces recorded with sigma R-norms".into(),
        ));
    }
    let mut max_defect = 0.0f64;
    let mut column = vec![0.0f64; traces.len()];
    let mean_of = |column: &mut [f64], f: &dyn Fn(&NormTrace) -> f64, traces: &[NormTrace]| {
        for (p, tr) in traces.iter().enumerate() {
            column[p] = f(tr);
        }
        mean_and_half_width(column).0
    };
    for i in 0..n_times - 1 {
        let e_now = mean_of(&mut column, &|t| t.l2_sq[i], traces);
        let e_next = mean_of(&mut column, &|t| t.l2_sq[i + 1], traces);
        let lap = mean_of(&mut column, &|t| t.lap_sq[i], traces);
        let grad = mean_of(&mut column, &|t| t.grad_sq[i], traces);
        let sig = mean_of(&mut column, &|t| t.sigma_r_sq.as_ref().unwrap()[i], traces);
        let defect = e_next - e_now + 2.0 * dt * (lap - grad) - dt * sig;
        max_defect = max_defect.max(defect.abs());
    }
    Ok(ItoBalanceReport { max_defect, max_defect_over_dt: max_defect / dt, dt })
}
