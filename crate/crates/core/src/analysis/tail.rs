//! Stopping-time tail statistics across a truncation-level sweep.
//!
//! The mean-energy bound plus the Doob/Chebyshev step give
//! `P{tau_N <= T} <= C(T)/N^2`, so a log-log fit of the empirical tail
//! against the level must have slope at most -2 (up to fit slack), unless
//! the counts are vacuously zero. The Chebyshev inequality
//! `N^2 p_hat <= mean ||u_{T ^ tau_N}||^2` holds samplewise because the
//! stopped norm exceeds `N` on every counted path.

use serde::Serialize;

use crate::analysis::stats::{linear_fit, LinFit};
use crate::dynamics::TruncationSpec;
use crate::error::{KsError, Result};
use crate::exec::ExecMode;
use crate::rng::SeedSpec;
use crate::solver::{ensemble_norm_traces, Problem, SolverConfig};
use crate::spectral::SpectralField;

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub levels: Vec<f64>,
    pub counts: Vec<usize>,
    pub p_hat: Vec<f64>,
    /// `E ||u_{T ^ tau_N}||^2` per level.
    pub stopped_mean_sq: Vec<f64>,
    /// Log-log fit over levels with nonzero counts (needs at least two).
    pub slope: Option<LinFit>,
    /// No path reached even the smallest level.
    pub vacuous: bool,
    /// `N^2 p_hat <= stopped_mean_sq` at every level (exact inequality).
    pub chebyshev_ok: bool,
    pub n_paths: usize,
}

/// Runs the same seeded ensemble at each truncation level (common random
/// numbers: a path's draws are identical across levels).
pub fn tail_sweep(
    problem: &Problem,
    cfg: &SolverConfig,
    u0: &SpectralField,
    levels: &[f64],
    n_paths: usize,
    seeds: SeedSpec,
    mode: ExecMode,
) -> Result<TailReport> {
    if levels.len() < 3 {
        return Err(KsError::InvalidParameter("tail sweep needs >= 3 levels".into()));
    }
    if n_paths < 10_000 {
        return Err(KsError::TooFewSamples(format!(
            "tail fit needs >= 10^4 paths per level, got {n_paths}"
        )));
    }
    let mut counts = Vec::with_capacity(levels.len());
    let mut stopped = Vec::with_capacity(levels.len());
    for &level in levels {
        if !(level > 0.0) {
            return Err(KsError::InvalidParameter("levels must be > 0".into()));
        }
        let leveled = Problem {
            basis: problem.basis.clone(),
            grid: problem.grid.clone(),
            noise: problem.noise.clone(),
            flux: problem.flux.clone(),
            trunc: TruncationSpec::new(level)?,
            sigma: problem.sigma,
        };
        let traces = ensemble_norm_traces(&leveled, cfg, u0, n_paths, seeds, mode, false)?;
        let count = traces.iter().filter(|t| t.tau_idx.is_some()).count();
        let last = traces[0].times.len() - 1;
        let mean_sq =
            traces.iter().map(|t| t.stopped_l2_sq(last)).sum::<f64>() / n_paths as f64;
        counts.push(count);
        stopped.push(mean_sq);
    }
    let p_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / n_paths as f64).collect();

    let mut chebyshev_ok = true;
    for ((&level, &p), &m) in levels.iter().zip(&p_hat).zip(&stopped) {
        if level * level * p > m * (1.0 + 1e-12) {
            chebyshev_ok = false;
        }
    }

    let nonzero: Vec<(f64, f64)> = levels
        .iter()
        .zip(&p_hat)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&l, &p)| (l.ln(), p.ln()))
        .collect();
    let slope = if nonzero.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = nonzero.into_iter().unzip();
        Some(linear_fit(&xs, &ys))
    } else {
        None
    };
    Ok(TailReport {
        levels: levels.to_vec(),
        counts: counts.clone(),
        p_hat,
        stopped_mean_sq: stopped,
        slope,
        vacuous: counts.iter().all(|&c| c == 0),
        chebyshev_ok,
        n_paths,
    })
}

impl TailReport {
    /// The acceptance decision: decay at least like N^-1.7, or counts that
    /// vanish at the larger levels (the bound holds vacuously).
    pub fn passes(&self, slope_cap: f64) -> bool {
        if !self.chebyshev_ok {
            return false;
        }
        if self.vacuous {
            return true;
        }
        match &self.slope {
            Some(fit) => fit.slope <= slope_cap,
            // Hits only at the smallest level: the tail fell below 1/n_paths
            // within one doubling, which is faster than any measurable slope.
            None => *self.counts.last().unwrap() == 0,
        }
    }
}
