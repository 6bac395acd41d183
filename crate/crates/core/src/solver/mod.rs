//! Mild-solution machinery: exponential time stepping, the Duhamel operator,
//! Picard iteration on short windows, stopping times, and globalization by
//! truncation-level escalation.
//!
//! Everything discretizes the integral equation
//!
//! ```text
//! u(t) = S(t) u0 + c int S(t-s) u ds - int S(t-s) div f_N(u) ds
//!        + int S(t-s) sigma(u) dW_s
//! ```
//!
//! on a uniform grid with left-endpoint (Itô) evaluation and the exact
//! per-step semigroup factor. The production stepper optionally upgrades the
//! drift weight `dt e^(-mu dt)` to the exact convolution weight
//! `(1 - e^(-mu dt))/mu`; the Duhamel operator always uses the plain
//! left-endpoint weight, so a Picard fixed point and the production path
//! differ by O(dt), which is itself a tested invariant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{div_flux_galerkin, sigma_on_grid, FluxModel, SigmaModel, TruncationSpec};
use crate::error::{KsError, Result};
use crate::exec::{try_map_indexed, ExecMode};
use crate::noise::{NoiseIncrement, NoiseModel};
use crate::rng::{SeedSpec, StreamPurpose};
use crate::spectral::{SemigroupSpec, SineGrid, SpectralField};

/// Time discretization and fixed-point controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Truncation radius `N` (first level of the escalation schedule).
    pub n_trunc: f64,
    /// Number of escalation levels `N, 2N, 4N, ...` for globalization.
    pub levels: u32,
    pub scheme: Scheme,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Exact Ornstein–Uhlenbeck drift weighting in the production stepper.
    pub exact_ou: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExponentialEuler,
    PicardWindow,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(KsError::InvalidParameter(format!("solver.dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(KsError::InvalidParameter(format!(
                "solver.t_end must be >= dt, got {} < {}",
                self.t_end, self.dt
            )));
        }
        if !(self.n_trunc > 0.0) {
            return Err(KsError::InvalidParameter(format!(
                "solver.n_trunc must be > 0, got {}",
                self.n_trunc
            )));
        }
        if self.levels == 0 {
            return Err(KsError::InvalidParameter("solver.levels must be >= 1".into()));
        }
        if !(self.picard_tol > 0.0) {
            return Err(KsError::InvalidParameter(format!(
                "solver.picard_tol must be > 0, got {}",
                self.picard_tol
            )));
        }
        if self.picard_max_iter == 0 {
            return Err(KsError::InvalidParameter("solver.picard_max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|i| i as f64 * self.dt).collect()
    }

    /// Same schedule with `dt` halved (twice the steps over the same span).
    pub fn halved(&self) -> Self {
        Self { dt: 0.5 * self.dt, ..self.clone() }
    }
}

/// The assembled problem: basis, grids, noise, and coefficient models.
#[derive(Debug)]
pub struct Problem {
    pub basis: SemigroupSpec,
    pub grid: SineGrid,
    pub noise: NoiseModel,
    pub flux: FluxModel,
    pub trunc: TruncationSpec,
    pub sigma: SigmaModel,
}

/// Per-step propagation weights, precomputed once per `(dt, scheme)`.
#[derive(Debug, Clone)]
pub struct StepWeights {
    decay: Vec<f64>,
    drift: Vec<f64>,
    dt: f64,
}

impl StepWeights {
    pub fn new(basis: &SemigroupSpec, dt: f64, exact_ou: bool) -> Self {
        let decay: Vec<f64> = basis.mu().iter().map(|&m| (-m * dt).exp()).collect();
        let drift = basis
            .mu()
            .iter()
            .zip(&decay)
            .map(|(&m, &d)| {
                if exact_ou {
                    -(-m * dt).exp_m1() / m
                } else {
                    dt * d
                }
            })
            .collect();
        Self { decay, drift, dt }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

impl Problem {
    /// Coefficients of `c u - div f_N(u)` at a frozen state.
    pub fn drift(&self, trunc: &TruncationSpec, u: &SpectralField) -> Result<SpectralField> {
        let div_f = div_flux_galerkin(&self.flux, trunc, &self.grid, u)?;
        let c = self.basis.shift();
        Ok(SpectralField::new(
            u.coeffs()
                .iter()
                .zip(div_f.coeffs())
                .map(|(&a, &g)| c * a - g)
                .collect(),
        ))
    }

    /// Coefficients of the projected product `sigma(u(t)) dW`.
    pub fn noise_term(
        &self,
        t: f64,
        u: &SpectralField,
        inc: &NoiseIncrement,
    ) -> Result<SpectralField> {
        if self.sigma.is_zero() || self.noise.is_zero() {
            return Ok(SpectralField::zeros(u.len()));
        }
        let sigma_vals = sigma_on_grid(&self.sigma, &self.grid, t, u)?;
        let dw = self.grid.synthesize(&SpectralField::new(inc.d_w.clone()))?;
        let product = crate::spectral::GridFunction::new(
            sigma_vals
                .values()
                .iter()
                .zip(dw.values())
                .map(|(s, w)| s * w)
                .collect(),
            sigma_vals.spacing(),
        );
        self.grid.project(&product, u.len())
    }

    /// One exponential-Euler step at truncation level `trunc`.
    pub fn step(
        &self,
        weights: &StepWeights,
        trunc: &TruncationSpec,
        state: &SpectralField,
        t: f64,
        inc: &NoiseIncrement,
    ) -> Result<SpectralField> {
        let drift = self.drift(trunc, state)?;
        let noise = self.noise_term(t, state, inc)?;
        Ok(SpectralField::new(
            state
                .coeffs()
                .iter()
                .zip(noise.coeffs())
                .zip(drift.coeffs())
                .zip(weights.decay.iter().zip(&weights.drift))
                .map(|(((&a, &n), &d), (&decay, &dw))| decay * (a + n) + dw * d)
                .collect(),
        ))
    }

    /// Whether any stochastic forcing is active.
    pub fn is_deterministic(&self) -> bool {
        self.sigma.is_zero() || self.noise.is_zero()
    }
}

/// One exponential-Euler step with the configured weights (convenience
/// wrapper used by callers that step manually).
pub fn step_exponential_euler(
    problem: &Problem,
    cfg: &SolverConfig,
    state: &SpectralField,
    t: f64,
    inc: &NoiseIncrement,
) -> Result<SpectralField> {
    let weights = StepWeights::new(&problem.basis, cfg.dt, cfg.exact_ou);
    problem.step(&weights, &problem.trunc, state, t, inc)
}

/// Truncation level active from a given grid index.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TruncationSegment {
    pub radius: f64,
    pub from_index: usize,
}

/// A simulated path on the time grid with its stopping-time record.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    /// First grid index with `||u||_{L^2} > N`, if any.
    pub tau_idx: Option<usize>,
    pub segments: Vec<TruncationSegment>,
}

impl Trajectory {
    pub fn from_states(times: Vec<f64>, states: Vec<SpectralField>, radius: f64) -> Self {
        let tau_idx = states.iter().position(|s| s.l2_norm() > radius);
        Self {
            times,
            states,
            tau_idx,
            segments: vec![TruncationSegment { radius, from_index: 0 }],
        }
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Stopping time, `+inf` when the level was never exceeded.
    pub fn tau_time(&self) -> f64 {
        self.tau_idx.map_or(f64::INFINITY, |i| self.times[i])
    }

    pub fn l2_norms(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.l2_norm()).collect()
    }

    pub fn sup_l2_norm_sq(&self) -> f64 {
        self.states.iter().map(|s| s.l2_norm_sq()).fold(0.0, f64::max)
    }

    /// Discrete `X_T` distance to another path on the same grid:
    /// `sup_i ||u_i - v_i||_{L^2}`.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        sup_distance(&self.states, &other.states)
    }
}

pub fn sup_distance(a: &[SpectralField], b: &[SpectralField]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| x.sub(y).l2_norm())
        .fold(0.0, f64::max)
}

/// Per-time norm diagnostics of one path; the memory-light ensemble record.
#[derive(Debug, Clone)]
pub struct NormTrace {
    pub times: Vec<f64>,
    pub l2_sq: Vec<f64>,
    pub grad_sq: Vec<f64>,
    pub lap_sq: Vec<f64>,
    /// `||sigma(u(t))||_R^2`, recorded on demand.
    pub sigma_r_sq: Option<Vec<f64>>,
    pub tau_idx: Option<usize>,
}

impl NormTrace {
    pub fn h2_sq(&self, i: usize) -> f64 {
        self.l2_sq[i] + self.lap_sq[i]
    }

    pub fn sup_l2_sq(&self) -> f64 {
        self.l2_sq.iter().copied().fold(0.0, f64::max)
    }

    /// Left-endpoint quadrature of `int_0^T ||u||_{H^2}^2 dt`.
    pub fn int_h2_sq(&self, dt: f64) -> f64 {
        (0..self.times.len() - 1).map(|i| dt * self.h2_sq(i)).sum()
    }

    /// `||u_{t_i ^ tau}||^2`: frozen at the stopping index once passed.
    pub fn stopped_l2_sq(&self, i: usize) -> f64 {
        match self.tau_idx {
            Some(tau) if i > tau => self.l2_sq[tau],
            _ => self.l2_sq[i],
        }
    }
}

fn check_initial(problem: &Problem, u0: &SpectralField) -> Result<()> {
    if u0.len() != problem.basis.modes() {
        return Err(KsError::GridMismatch(format!(
            "initial field has {} modes, basis has {}",
            u0.len(),
            problem.basis.modes()
        )));
    }
    Ok(())
}

/// Drives one path, sampling increments from `rng`, and hands every grid
/// state to `observe` (index, time, state). Returns the stopping index.
fn run_core<R, F>(
    problem: &Problem,
    cfg: &SolverConfig,
    trunc: &TruncationSpec,
    u0: &SpectralField,
    rng: &mut R,
    mut observe: F,
) -> Result<Option<usize>>
where
    R: Rng + ?Sized,
    F: FnMut(usize, f64, &SpectralField) -> Result<()>,
{
    check_initial(problem, u0)?;
    let n = cfg.n_steps();
    let weights = StepWeights::new(&problem.basis, cfg.dt, cfg.exact_ou);
    let sample_noise = !problem.is_deterministic();
    let mut state = u0.clone();
    let mut tau = None;
    for i in 0..=n {
        let t = i as f64 * cfg.dt;
        if !state.is_finite() {
            return Err(KsError::Diverged { t });
        }
        if tau.is_none() && state.l2_norm() > trunc.radius() {
            tau = Some(i);
        }
        observe(i, t, &state)?;
        if i < n {
            state = if sample_noise {
                let inc = problem.noise.sample_increment(cfg.dt, rng)?;
                problem.step(&weights, trunc, &state, t, &inc)?
            } else {
                let zero = NoiseIncrement { d_w: vec![0.0; problem.noise.modes()], dt: cfg.dt };
                problem.step(&weights, trunc, &state, t, &zero)?
            };
        }
    }
    Ok(tau)
}

/// Simulates one path at the configured truncation level, recording states.
/// The truncated dynamics continue past the stopping time.
pub fn simulate_path<R: Rng + ?Sized>(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(cfg.n_steps() + 1);
    let tau = run_core(problem, cfg, &problem.trunc, u0, rng, |_, _, s| {
        states.push(s.clone());
        Ok(())
    })?;
    Ok(Trajectory {
        times: cfg.times(),
        states,
        tau_idx: tau,
        segments: vec![TruncationSegment { radius: problem.trunc.radius(), from_index: 0 }],
    })
}

/// Simulates one path keeping only norm diagnostics.
pub fn simulate_norm_trace<R: Rng + ?Sized>(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    rng: &mut R,
    record_sigma_r: bool,
) -> Result<NormTrace> {
    let cap = cfg.n_steps() + 1;
    let mut l2_sq = Vec::with_capacity(cap);
    let mut grad_sq = Vec::with_capacity(cap);
    let mut lap_sq = Vec::with_capacity(cap);
    let mut sigma_r = if record_sigma_r { Some(Vec::with_capacity(cap)) } else { None };
    let tau = run_core(problem, cfg, &problem.trunc, u0, rng, |_, t, s| {
        l2_sq.push(s.l2_norm_sq());
        grad_sq.push(problem.basis.seminorm_sq(s, 1));
        lap_sq.push(problem.basis.seminorm_sq(s, 2));
        if let Some(v) = sigma_r.as_mut() {
            let sg = sigma_on_grid(&problem.sigma, &problem.grid, t, s)?;
            v.push(problem.noise.r_norm_sq(&sg)?);
        }
        Ok(())
    })?;
    Ok(NormTrace {
        times: cfg.times(),
        l2_sq,
        grad_sq,
        lap_sq,
        sigma_r_sq: sigma_r,
        tau_idx: tau,
    })
}

/// Runs a path against a precomputed increment sequence (common random
/// numbers). `noise_path.len()` must equal the step count.
pub fn run_path_with_noise(
    problem: &Problem,
    cfg: &SolverConfig,
    trunc: &TruncationSpec,
    u0: &SpectralField,
    noise_path: &[NoiseIncrement],
) -> Result<Trajectory> {
    check_initial(problem, u0)?;
    let n = cfg.n_steps();
    if noise_path.len() != n {
        return Err(KsError::GridMismatch(format!(
            "noise path has {} increments, schedule has {} steps",
            noise_path.len(),
            n
        )));
    }
    let weights = StepWeights::new(&problem.basis, cfg.dt, cfg.exact_ou);
    let mut states = Vec::with_capacity(n + 1);
    let mut state = u0.clone();
    for (i, inc) in noise_path.iter().enumerate() {
        if !state.is_finite() {
            return Err(KsError::Diverged { t: i as f64 * cfg.dt });
        }
        states.push(state.clone());
        state = problem.step(&weights, trunc, &state, i as f64 * cfg.dt, inc)?;
    }
    if !state.is_finite() {
        return Err(KsError::Diverged { t: cfg.t_end });
    }
    states.push(state);
    Ok(Trajectory::from_states(cfg.times(), states, trunc.radius()))
}

/// Samples a full increment sequence up front.
pub fn sample_noise_path<R: Rng + ?Sized>(
    noise: &NoiseModel,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<NoiseIncrement>> {
    (0..steps).map(|_| noise.sample_increment(dt, rng)).collect()
}

/// Aggregates a fine increment sequence pairwise into one with `2 dt` steps;
/// the coarse path sees the same Brownian motion.
pub fn coarsen_increments(fine: &[NoiseIncrement]) -> Vec<NoiseIncrement> {
    assert!(fine.len() % 2 == 0, "refinement needs an even step count");
    fine.chunks(2)
        .map(|pair| NoiseIncrement {
            d_w: pair[0]
                .d_w
                .iter()
                .zip(&pair[1].d_w)
                .map(|(a, b)| a + b)
                .collect(),
            dt: pair[0].dt + pair[1].dt,
        })
        .collect()
}

/// Applies the Duhamel operator to a candidate path: all four terms with
/// left-endpoint quadrature and per-step semigroup factors.
pub fn gamma_apply(
    problem: &Problem,
    cfg: &SolverConfig,
    u_path: &[SpectralField],
    u0: &SpectralField,
    noise_path: &[NoiseIncrement],
) -> Result<Vec<SpectralField>> {
    check_initial(problem, u0)?;
    let n = cfg.n_steps();
    if u_path.len() != n + 1 || noise_path.len() != n {
        return Err(KsError::GridMismatch(format!(
            "gamma needs {} states and {} increments, got {} and {}",
            n + 1,
            n,
            u_path.len(),
            noise_path.len()
        )));
    }
    let weights = StepWeights::new(&problem.basis, cfg.dt, false);
    let mut out = Vec::with_capacity(n + 1);
    out.push(u0.clone());
    for i in 0..n {
        let t = i as f64 * cfg.dt;
        let drift = problem.drift(&problem.trunc, &u_path[i])?;
        let noise = problem.noise_term(t, &u_path[i], &noise_path[i])?;
        let prev = &out[i];
        out.push(SpectralField::new(
            prev.coeffs()
                .iter()
                .zip(noise.coeffs())
                .zip(drift.coeffs())
                .zip(weights.decay.iter().zip(&weights.drift))
                .map(|(((&a, &nz), &d), (&decay, &dw))| decay * (a + nz) + dw * d)
                .collect(),
        ));
    }
    Ok(out)
}

/// Result of a Picard window solve.
#[derive(Debug, Clone)]
pub struct PicardSolve {
    pub path: Vec<SpectralField>,
    pub iterations: usize,
    /// Successive-iterate distances in the discrete `X_T` norm.
    pub residuals: Vec<f64>,
}

/// Banach iteration `u <- Gamma u` from the zeroth Duhamel iterate
/// `u^0(t) = S(t) u0`, on a window short enough to contract.
pub fn picard_solve(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    noise_path: &[NoiseIncrement],
) -> Result<PicardSolve> {
    if cfg.scheme != Scheme::PicardWindow {
        return Err(KsError::InvalidParameter(
            "picard_solve requires scheme = picard-window".into(),
        ));
    }
    check_initial(problem, u0)?;
    let mut current: Vec<SpectralField> = cfg
        .times()
        .iter()
        .map(|&t| problem.basis.semigroup_apply(u0, t))
        .collect::<Result<_>>()?;
    let mut residuals = Vec::new();
    for iter in 1..=cfg.picard_max_iter {
        let next = gamma_apply(problem, cfg, &current, u0, noise_path)?;
        let res = sup_distance(&next, &current);
        if !res.is_finite() {
            return Err(KsError::Diverged { t: cfg.t_end });
        }
        residuals.push(res);
        current = next;
        if res < cfg.picard_tol {
            return Ok(PicardSolve { path: current, iterations: iter, residuals });
        }
    }
    let last_ratio = if residuals.len() >= 2 {
        residuals[residuals.len() - 1] / residuals[residuals.len() - 2]
    } else {
        f64::INFINITY
    };
    Err(KsError::NonContraction { iterations: cfg.picard_max_iter, last_ratio })
}

/// Two trajectories driven by the identical noise realization.
#[derive(Debug, Clone)]
pub struct PathPair {
    pub first: Trajectory,
    pub second: Trajectory,
    pub master_seed: u64,
    pub stream_index: u64,
}

/// Solves the same noise realization from two initial fields.
pub fn solve_pair_common_noise(
    problem: &Problem,
    cfg: &SolverConfig,
    u0_first: &SpectralField,
    u0_second: &SpectralField,
    seeds: SeedSpec,
    stream_index: u64,
) -> Result<PathPair> {
    let mut rng = seeds.stream(StreamPurpose::Pair, stream_index);
    let noise_path = sample_noise_path(&problem.noise, cfg.dt, cfg.n_steps(), &mut rng)?;
    let first = run_path_with_noise(problem, cfg, &problem.trunc, u0_first, &noise_path)?;
    let second = run_path_with_noise(problem, cfg, &problem.trunc, u0_second, &noise_path)?;
    Ok(PathPair { first, second, master_seed: seeds.master(), stream_index })
}

/// Outcome of one truncation level inside [`extend_global`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LevelOutcome {
    pub radius: f64,
    pub tau_idx: Option<usize>,
    pub tau_time: f64,
}

/// Globalized path assembled from the escalation schedule.
#[derive(Debug)]
pub struct GlobalizedPath {
    pub trajectory: Trajectory,
    pub levels: Vec<LevelOutcome>,
    /// True when even the largest level was exceeded before `T`.
    pub cap_hit: bool,
    /// Same-seed prefix consistency across levels (exact, bitwise).
    pub consistent: bool,
}

/// Runs the schedule `N, 2N, 4N, ...`, reusing the same noise stream at each
/// level. Levels agree bitwise up to the smaller level's stopping index
/// because the mollifier is exactly 1 inside the ball; the assembled global
/// path is the largest level's run.
pub fn extend_global(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    seeds: SeedSpec,
    path_index: u64,
) -> Result<GlobalizedPath> {
    let mut levels = Vec::new();
    let mut previous: Option<Trajectory> = None;
    let mut consistent = true;
    let mut segments = vec![TruncationSegment { radius: cfg.n_trunc, from_index: 0 }];
    for level in 0..cfg.levels {
        let radius = cfg.n_trunc * f64::powi(2.0, level as i32);
        let trunc = TruncationSpec::new(radius)?;
        let mut rng = seeds.stream(StreamPurpose::Path, path_index);
        let mut states = Vec::with_capacity(cfg.n_steps() + 1);
        let tau = run_core(problem, cfg, &trunc, u0, &mut rng, |_, _, s| {
            states.push(s.clone());
            Ok(())
        })?;
        let traj = Trajectory {
            times: cfg.times(),
            states,
            tau_idx: tau,
            segments: vec![TruncationSegment { radius, from_index: 0 }],
        };
        levels.push(LevelOutcome { radius, tau_idx: tau, tau_time: traj.tau_time() });

        if let Some(prev) = &previous {
            if let Some(prev_tau) = prev.tau_idx {
                let identical = (0..=prev_tau)
                    .all(|i| bitwise_equal(&prev.states[i], &traj.states[i]));
                consistent &= identical;
                segments.push(TruncationSegment { radius, from_index: prev_tau });
            }
        }
        let done = tau.is_none();
        previous = Some(traj);
        if done {
            break;
        }
    }
    let mut trajectory = previous.expect("at least one level ran");
    trajectory.segments = segments;
    let cap_hit = trajectory.tau_idx.is_some();
    Ok(GlobalizedPath { trajectory, levels, cap_hit, consistent })
}

fn bitwise_equal(a: &SpectralField, b: &SpectralField) -> bool {
    a.len() == b.len()
        && a.coeffs()
            .iter()
            .zip(b.coeffs())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Runs `n_paths` independent paths and collects their norm traces in path
/// order. Per-path streams make the result independent of thread count.
pub fn ensemble_norm_traces(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    n_paths: usize,
    seeds: SeedSpec,
    mode: ExecMode,
    record_sigma_r: bool,
) -> Result<Vec<NormTrace>> {
    try_map_indexed(mode, n_paths, |i| {
        let mut rng = seeds.stream(StreamPurpose::Path, i as u64);
        simulate_norm_trace(problem, cfg, u0, &mut rng, record_sigma_r)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::SpectrumLaw;
    use crate::spectral::random_decay_field;
    use std::f64::consts::PI;

    fn problem(k: usize, m: usize, kappa: f64, sigma: SigmaModel, n_trunc: f64) -> Problem {
        let basis = SemigroupSpec::build(PI, k, 1.0).unwrap();
        let grid = SineGrid::new(PI, m).unwrap();
        let noise =
            NoiseModel::build(&basis, SpectrumLaw { kappa, gamma: 1.5 }, (k / 2).max(1), &grid)
                .unwrap();
        Problem {
            basis,
            grid,
            noise,
            flux: FluxModel::quadratic(),
            trunc: TruncationSpec::new(n_trunc).unwrap(),
            sigma,
        }
    }

    fn cfg(dt: f64, t_end: f64) -> SolverConfig {
        SolverConfig {
            dt,
            t_end,
            n_trunc: 10.0,
            levels: 4,
            scheme: Scheme::ExponentialEuler,
            picard_tol: 1e-10,
            picard_max_iter: 60,
            exact_ou: true,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(1e-3, 1.0);
        assert!(c.validate().is_ok());
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg(1e-3, 1e-4);
        assert!(c.validate().is_err());
        c.t_end = 1.0;
        c.picard_tol = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn linear_step_is_exact_decay() {
        // f contributes nothing for the zero field; a single linear step of
        // phi_1 must be exactly exp(-mu_1 dt) phi_1 up to the c-compensation.
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 10.0);
        let c = cfg(1e-3, 1.0);
        let phi1 = SpectralField::eigenmode(8, 1, 1.0);
        let inc = NoiseIncrement { d_w: vec![0.0; p.noise.modes()], dt: c.dt };

        // With the plain weights and c = 1 the step gives
        // e^{-mu dt} (1 + c dt) for the first coefficient (flux of a single
        // sine mode has no mode-1 component).
        let mut plain = c.clone();
        plain.exact_ou = false;
        let next = step_exponential_euler(&p, &plain, &phi1, 0.0, &inc).unwrap();
        let mu1 = p.basis.mu()[0];
        let shift = p.basis.shift();
        let expected = (-mu1 * c.dt).exp() * (1.0 + shift * c.dt);
        assert!((next.coeffs()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_field_stays_zero_and_never_stops() {
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 10.0);
        let c = cfg(1e-2, 0.5);
        let mut rng = SeedSpec::new(1).stream(StreamPurpose::Path, 0);
        let traj = simulate_path(&p, &c, &SpectralField::zeros(8), &mut rng).unwrap();
        assert!(traj.tau_idx.is_none());
        assert_eq!(traj.tau_time(), f64::INFINITY);
        assert!(traj.states.iter().all(|s| s.l2_norm() == 0.0));
    }

    #[test]
    fn oversized_initial_data_stops_at_zero() {
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 1.0);
        let mut c = cfg(1e-2, 0.1);
        c.n_trunc = 1.0;
        let u0 = SpectralField::eigenmode(8, 1, 3.0); // norm 3N
        let mut rng = SeedSpec::new(2).stream(StreamPurpose::Path, 0);
        let traj = simulate_path(&p, &c, &u0, &mut rng).unwrap();
        assert_eq!(traj.tau_idx, Some(0));
        assert_eq!(traj.tau_time(), 0.0);
    }

    #[test]
    fn stopping_time_localizes_norms() {
        let p = problem(16, 32, 0.6, SigmaModel::state_only(0.3, 0.5), 0.4);
        let mut c = cfg(5e-4, 0.3);
        c.n_trunc = 0.4;
        let u0 = SpectralField::eigenmode(16, 1, 0.2);
        for path in 0..8u64 {
            let mut rng = SeedSpec::new(3).stream(StreamPurpose::Path, path);
            let traj = simulate_path(&p, &c, &u0, &mut rng).unwrap();
            if let Some(tau) = traj.tau_idx {
                for i in 0..tau {
                    assert!(traj.states[i].l2_norm() <= 0.4 + 1e-15);
                }
                assert!(traj.states[tau].l2_norm() > 0.4);
            } else {
                assert!(traj.states.iter().all(|s| s.l2_norm() <= 0.4 + 1e-15));
            }
        }
    }

    #[test]
    fn gamma_without_feedback_is_pure_semigroup() {
        // f = 0 (table flux with zero values), sigma = 0, c = 0 would make
        // Gamma constant in u; here we keep f but feed the zero path, so the
        // output is S(t) u0 exactly.
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 10.0);
        let c = cfg(1e-3, 0.05);
        let u0 = SpectralField::eigenmode(8, 1, 1.0);
        let zero_path: Vec<SpectralField> =
            (0..=c.n_steps()).map(|_| SpectralField::zeros(8)).collect();
        let incs = vec![NoiseIncrement { d_w: vec![0.0; p.noise.modes()], dt: c.dt }; c.n_steps()];
        let out = gamma_apply(&p, &c, &zero_path, &u0, &incs).unwrap();
        // Drift of the zero state is zero, so out[i] = decay^i u0.
        let decay = (-p.basis.mu()[0] * c.dt).exp();
        for (i, s) in out.iter().enumerate() {
            let expected = u0.coeffs()[0] * decay.powi(i as i32);
            assert!((s.coeffs()[0] - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn picard_converges_in_one_iteration_for_pure_linear_flow() {
        // Zero initial data and zero noise: u^0 = 0 is already the fixed point.
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 10.0);
        let mut c = cfg(1e-3, 0.03);
        c.scheme = Scheme::PicardWindow;
        let incs = vec![NoiseIncrement { d_w: vec![0.0; p.noise.modes()], dt: c.dt }; c.n_steps()];
        let sol = picard_solve(&p, &c, &SpectralField::zeros(8), &incs).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.residuals[0] < 1e-15);
    }

    #[test]
    fn picard_fixed_point_matches_plain_stepper() {
        // The Duhamel recursion with plain weights IS the plain stepper, so
        // the fixed point agrees with it to picard_tol.
        let p = problem(16, 32, 0.2, SigmaModel::state_only(0.0, 0.1), 10.0);
        let mut c = cfg(1e-3, 0.04);
        c.scheme = Scheme::PicardWindow;
        c.exact_ou = false;
        let u0 = SpectralField::eigenmode(16, 1, 1.0);
        let mut rng = SeedSpec::new(4).stream(StreamPurpose::Path, 0);
        let incs = sample_noise_path(&p.noise, c.dt, c.n_steps(), &mut rng).unwrap();
        let sol = picard_solve(&p, &c, &u0, &incs).unwrap();
        let stepped = run_path_with_noise(&p, &c, &p.trunc, &u0, &incs).unwrap();
        let gap = sup_distance(&sol.path, &stepped.states);
        assert!(gap <= 10.0 * c.picard_tol, "gap {gap}");
        // Residual of the returned path under Gamma is below tolerance.
        let gamma_once = gamma_apply(&p, &c, &sol.path, &u0, &incs).unwrap();
        assert!(sup_distance(&gamma_once, &sol.path) <= c.picard_tol);
    }

    #[test]
    fn picard_residuals_decay_geometrically() {
        let p = problem(16, 32, 1.0, SigmaModel::state_only(0.0, 0.1), 10.0);
        let mut c = cfg(1e-3, 0.05);
        c.scheme = Scheme::PicardWindow;
        c.picard_tol = 1e-12;
        let u0 = SpectralField::eigenmode(16, 2, 2.0);
        let mut rng = SeedSpec::new(5).stream(StreamPurpose::Path, 1);
        let incs = sample_noise_path(&p.noise, c.dt, c.n_steps(), &mut rng).unwrap();
        let sol = picard_solve(&p, &c, &u0, &incs).unwrap();
        let rs = &sol.residuals;
        assert!(rs.len() >= 3, "converged too fast to measure: {rs:?}");
        let ratios: Vec<f64> = rs.windows(2).map(|w| w[1] / w[0]).collect();
        for r in &ratios[..ratios.len() - 1] {
            assert!(*r < 1.0, "non-contracting ratio {r}");
        }
        // Roughly constant ratio = geometric decay.
        let mid = ratios[ratios.len() / 2];
        for r in &ratios[1..ratios.len().saturating_sub(1)] {
            assert!(*r <= 4.0 * mid + 1e-12, "ratios not geometric: {ratios:?}");
        }
    }

    #[test]
    fn picard_reports_non_contraction_on_hopeless_windows() {
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 1e6);
        let mut c = cfg(0.05, 2.0);
        c.scheme = Scheme::PicardWindow;
        c.picard_max_iter = 4;
        c.picard_tol = 1e-14;
        // Large data on a long window: the quadratic flux makes Gamma expand.
        let u0 = SpectralField::eigenmode(8, 1, 40.0);
        let incs = vec![NoiseIncrement { d_w: vec![0.0; p.noise.modes()], dt: c.dt }; c.n_steps()];
        match picard_solve(&p, &c, &u0, &incs) {
            Err(KsError::NonContraction { iterations, last_ratio }) => {
                assert_eq!(iterations, 4);
                assert!(last_ratio > 0.5);
            }
            Err(KsError::Diverged { .. }) => {} // also acceptable: it blew up
            other => panic!("expected non-contraction, got {other:?}"),
        }
    }

    #[test]
    fn wrong_scheme_is_refused() {
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 10.0);
        let c = cfg(1e-3, 0.01);
        let incs = vec![NoiseIncrement { d_w: vec![0.0; p.noise.modes()], dt: c.dt }; c.n_steps()];
        assert!(matches!(
            picard_solve(&p, &c, &SpectralField::zeros(8), &incs),
            Err(KsError::InvalidParameter(_))
        ));
    }

    #[test]
    fn stochastic_convolution_variance_matches_ou_oracle() {
        // Additive noise on the zero path: per-mode variance of the discrete
        // convolution approaches c_k'^2 (1 - e^(-2 mu_k t))/(2 mu_k).
        let k = 4;
        let basis = SemigroupSpec::build(PI, k, 1.0).unwrap();
        let grid = SineGrid::new(PI, 16).unwrap();
        let noise = NoiseModel::build(&basis, SpectrumLaw { kappa: 1.0, gamma: 1.0 }, k, &grid).unwrap();
        let p = Problem {
            basis,
            grid,
            noise,
            flux: FluxModel::quadratic(),
            trunc: TruncationSpec::new(1e6).unwrap(),
            sigma: SigmaModel::state_only(1.0, 0.0), // additive sigma = 1
        };
        let mut c = cfg(2e-5, 0.02);
        c.n_trunc = 1e6;
        let n_paths = 10_000;
        let seeds = SeedSpec::new(6);
        let u0 = SpectralField::zeros(k);
        let zero_path: Vec<SpectralField> = (0..=c.n_steps()).map(|_| u0.clone()).collect();

        let mut sum_sq = vec![0.0f64; k];
        for path in 0..n_paths {
            let mut rng = seeds.stream(StreamPurpose::Path, path as u64);
            let incs = sample_noise_path(&p.noise, c.dt, c.n_steps(), &mut rng).unwrap();
            let out = gamma_apply(&p, &c, &zero_path, &u0, &incs).unwrap();
            let last = out.last().unwrap();
            for (m, &a) in last.coeffs().iter().enumerate() {
                sum_sq[m] += a * a;
            }
        }
        // The projected increment of sigma = 1 in mode m mixes the Q-Wiener
        // modes through the kernel of the multiplication-by-one operator,
        // which on a band-limited grid is just the identity: (1 . dW)_m = dW_m.
        let t = c.t_end;
        for m in 0..k {
            let mu = p.basis.mu()[m];
            let ck = p.noise.spectrum()[m];
            let exact = ck * ck * (1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu);
            let got = sum_sq[m] / n_paths as f64;
            assert!(
                (got - exact).abs() <= 0.05 * exact,
                "mode {m}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn globalization_levels_agree_and_tau_grows() {
        let p = problem(16, 32, 1.2, SigmaModel::state_only(0.4, 0.8), 0.3);
        let mut c = cfg(1e-3, 0.4);
        c.n_trunc = 0.3;
        c.levels = 4;
        let u0 = SpectralField::eigenmode(16, 1, 0.25);
        let seeds = SeedSpec::new(7);
        let mut saw_escalation = false;
        for path in 0..10u64 {
            let g = extend_global(&p, &c, &u0, seeds, path).unwrap();
            assert!(g.consistent, "prefix consistency violated on path {path}");
            let taus: Vec<f64> = g.levels.iter().map(|l| l.tau_time).collect();
            for w in taus.windows(2) {
                assert!(w[1] >= w[0], "tau not monotone in N: {taus:?}");
            }
            saw_escalation |= g.levels.len() > 1;
        }
        assert!(saw_escalation, "test parameters never triggered escalation");
    }

    #[test]
    fn path_never_exceeding_level_matches_simulate_path() {
        let p = problem(8, 16, 0.1, SigmaModel::state_only(0.0, 0.2), 10.0);
        let c = cfg(1e-3, 0.2);
        let u0 = SpectralField::eigenmode(8, 1, 0.5);
        let seeds = SeedSpec::new(8);
        let g = extend_global(&p, &c, &u0, seeds, 0).unwrap();
        assert_eq!(g.levels.len(), 1);
        assert!(!g.cap_hit);
        let mut rng = seeds.stream(StreamPurpose::Path, 0);
        let direct = simulate_path(&p, &c, &u0, &mut rng).unwrap();
        for (a, b) in g.trajectory.states.iter().zip(&direct.states) {
            assert!(bitwise_equal(a, b));
        }
    }

    #[test]
    fn ensembles_are_thread_count_invariant() {
        let p = problem(8, 16, 0.8, SigmaModel::state_only(0.0, 0.5), 5.0);
        let c = cfg(1e-3, 0.05);
        let u0 = SpectralField::eigenmode(8, 1, 1.0);
        let seeds = SeedSpec::new(9);
        let seq = ensemble_norm_traces(&p, &c, &u0, 16, seeds, ExecMode::Sequential, false).unwrap();
        let par = ensemble_norm_traces(&p, &c, &u0, 16, seeds, ExecMode::Parallel, false).unwrap();
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.l2_sq.len(), b.l2_sq.len());
            for (x, y) in a.l2_sq.iter().zip(&b.l2_sq) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.tau_idx, b.tau_idx);
        }
    }

    #[test]
    fn coarsened_increments_preserve_the_brownian_path() {
        let p = problem(8, 16, 1.0, SigmaModel::state_only(0.0, 1.0), 10.0);
        let mut rng = SeedSpec::new(10).stream(StreamPurpose::Path, 0);
        let fine = sample_noise_path(&p.noise, 1e-3, 64, &mut rng).unwrap();
        let coarse = coarsen_increments(&fine);
        assert_eq!(coarse.len(), 32);
        assert!((coarse[0].dt - 2e-3).abs() < 1e-18);
        let fine_sum: f64 = fine.iter().map(|i| i.d_w[0]).sum();
        let coarse_sum: f64 = coarse.iter().map(|i| i.d_w[0]).sum();
        assert!((fine_sum - coarse_sum).abs() < 1e-15);
    }

    #[test]
    fn random_initial_data_respects_basis_size() {
        let p = problem(8, 16, 0.0, SigmaModel::zero(), 10.0);
        let c = cfg(1e-3, 0.01);
        let mut rng = SeedSpec::new(11).stream(StreamPurpose::Path, 0);
        let bad = random_decay_field(7, 1.0, 1.0, &mut rng);
        assert!(simulate_path(&p, &c, &bad, &mut rng).is_err());
    }
}
