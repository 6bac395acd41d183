//! Semigroup smoothing-rate fits and the maximal-regularity statistic.
//!
//! The smoothing estimates say `||d^alpha S(t) phi||_{L^2} <= C t^(-r)
//! ||phi||_{L^q}` with `r = (1/q - 1/2)/4 + alpha/4` in one dimension. On a
//! `K`-mode truncation the singularity is only resolved for
//! `t >= ~10 / mu_K`, so slopes are fitted on the guarded window
//! `[10/mu_K, 1000/mu_K]` where the spectrum still looks infinite.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::analysis::stats::linear_fit;
use crate::error::{KsError, Result};
use crate::spectral::SemigroupSpec;

/// Source-norm exponent `q` of the smoothing estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceNorm {
    L1,
    L2,
}

/// Initial-datum family for rate fitting.
#[derive(Debug, Clone, Copy)]
pub enum PhiFamily {
    /// `a_k = k^(-exponent)`: barely in `L^2` for exponents just above 1/2,
    /// outside every smoother class, so the `L^2 -> H^2` rate is sharp.
    RoughPowerLaw { exponent: f64 },
    /// Spectral profile of a point mass at `L/2`: `a_k = sin(k pi / 2)`.
    NearDirac,
    /// A single eigenmode: no singular smoothing, the rate saturates at 0.
    SingleMode { mode: usize },
}

/// A fitted log-log decay rate.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub target: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Fits the decay exponent of `||d^alpha S(t) phi||_{L^2}` over the guarded
/// window. Only the slope matters, so the `L^q` normalization of `phi`
/// cancels. Windows that are not in a clean scaling regime are rejected.
pub fn fit_smoothing_rate(
    spec: &SemigroupSpec,
    alpha: u32,
    q: SourceNorm,
    family: PhiFamily,
    n_points: usize,
) -> Result<RateFit> {
    if alpha > 3 {
        return Err(KsError::InvalidParameter(format!(
            "derivative orders above 3 are untested, got {alpha}"
        )));
    }
    if n_points < 5 {
        return Err(KsError::InvalidParameter("rate fit needs at least 5 points".into()));
    }
    let coeffs: Vec<f64> = match family {
        PhiFamily::RoughPowerLaw { exponent } => {
            (1..=spec.modes()).map(|k| (k as f64).powf(-exponent)).collect()
        }
        PhiFamily::NearDirac => (1..=spec.modes())
            .map(|k| (k as f64 * std::f64::consts::FRAC_PI_2).sin())
            .collect(),
        PhiFamily::SingleMode { mode } => (1..=spec.modes())
            .map(|k| if k == mode { 1.0 } else { 0.0 })
            .collect(),
    };
    let d = 1.0;
    let q_exp = match q {
        SourceNorm::L1 => 1.0,
        SourceNorm::L2 => 2.0,
    };
    let target = -(d / 4.0) * (1.0 / q_exp - 0.5) - alpha as f64 / 4.0;

    let mu_max = spec.mu().last().copied().expect("nonempty basis");
    let t_min = 10.0 / mu_max;
    let t_max = 1000.0 / mu_max;
    let (log_t, log_norm): (Vec<f64>, Vec<f64>) = (0..n_points)
        .map(|i| {
            let t = t_min * (t_max / t_min).powf(i as f64 / (n_points - 1) as f64);
            let norm_sq: f64 = coeffs
                .iter()
                .zip(spec.lambda())
                .zip(spec.mu())
                .map(|((&a, &l), &m)| a * a * l.powi(alpha as i32) * (-2.0 * m * t).exp())
                .sum();
            (t.ln(), 0.5 * norm_sq.ln())
        })
        .unzip();

    let fit = linear_fit(&log_t, &log_norm);
    if fit.r2 < 0.99 {
        return Err(KsError::RejectedWindow(format!(
            "log-log fit R^2 = {:.4} < 0.99 on [{t_min:.3e}, {t_max:.3e}] \
             (slope {:.3}); the window is outside the scaling regime",
            fit.r2, fit.slope
        )));
    }
    Ok(RateFit {
        exponent: fit.slope,
        stderr: fit.slope_stderr,
        window: (t_min, t_max),
        target,
        r2: fit.r2,
        n_points,
    })
}

/// `sup` over random unit fields of `int_0^T ||S(tau) phi||_{H^2}^2 dtau`,
/// evaluated per mode in closed form:
/// `sum_k (1 + lambda_k^2) a_k^2 (1 - e^(-2 mu_k T))/(2 mu_k)`.
pub fn maximal_regularity_sup<R: Rng + ?Sized>(
    spec: &SemigroupSpec,
    t_end: f64,
    n_fields: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(t_end > 0.0) {
        return Err(KsError::InvalidParameter("t_end must be > 0".into()));
    }
    if n_fields == 0 {
        return Err(KsError::InvalidParameter("need at least one field".into()));
    }
    let weights: Vec<f64> = spec
        .lambda()
        .iter()
        .zip(spec.mu())
        .map(|(&l, &m)| (1.0 + l * l) * (1.0 - (-2.0 * m * t_end).exp()) / (2.0 * m))
        .collect();
    let k = spec.modes();
    let mut sup = 0.0f64;
    for _ in 0..n_fields {
        let raw: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let norm_sq: f64 = raw.iter().map(|a| a * a).sum();
        let value: f64 = raw
            .iter()
            .zip(&weights)
            .map(|(&a, &w)| w * a * a)
            .sum::<f64>()
            / norm_sq;
        sup = sup.max(value);
    }
    Ok(sup)
}
