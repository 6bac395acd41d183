//! Monte-Carlo bounds for the stochastic convolution
//! `v(t) = int_0^t S(t-s) [u(s) .] dW_s` with a deterministic multiplier
//! path `u`.
//!
//! Two functionals are estimated against the same deterministic denominator
//! `D = int_0^T ||u_s||_R^2 ds`:
//! the maximal estimate `E sup_t ||v||_{L^2}^2 <= C D` and the smoothing
//! estimate `E int_0^T ||Lap v||_{L^2}^2 dt <= C D`. Both ratios must be
//! finite and stable under grid refinement; no specific constant is claimed
//! because it comes from a cited fixed-point theorem upstream.

use serde::Serialize;

use crate::analysis::stats::mean_and_half_width;
use crate::error::{KsError, Result};
use crate::exec::{try_map_indexed, ExecMode};
use crate::noise::NoiseModel;
use crate::rng::{SeedSpec, StreamPurpose};
use crate::spectral::{GridFunction, SemigroupSpec, SineGrid, SpectralField};

/// Ratio estimates with CLT half-widths.
#[derive(Debug, Clone, Serialize)]
pub struct ConvolutionRatios {
    /// `E sup_t ||v||^2 / D`.
    pub sup_ratio: f64,
    pub sup_half_width: f64,
    /// `E int ||Lap v||^2 dt / D`.
    pub h2_ratio: f64,
    pub h2_half_width: f64,
    pub denominator: f64,
    pub n_samples: usize,
}

/// Simulates the discrete stochastic convolution for `n_samples` noise
/// realizations. `u_path` holds the multiplier at the left endpoint of each
/// step, so `u_path.len()` is the step count.
pub fn stochastic_convolution_ratios(
    basis: &SemigroupSpec,
    grid: &SineGrid,
    noise: &NoiseModel,
    u_path: &[GridFunction],
    dt: f64,
    n_samples: usize,
    seeds: SeedSpec,
    mode: ExecMode,
) -> Result<ConvolutionRatios> {
    if n_samples < 1000 {
        return Err(KsError::TooFewSamples(format!(
            "convolution bounds need >= 1000 samples, got {n_samples}"
        )));
    }
    if u_path.is_empty() || !(dt > 0.0) {
        return Err(KsError::InvalidParameter("empty multiplier path or bad dt".into()));
    }
    let k = basis.modes();
    let decay: Vec<f64> = basis.mu().iter().map(|&m| (-m * dt).exp()).collect();

    // Deterministic denominator (left endpoints).
    let mut denominator = 0.0;
    for u in u_path {
        denominator += dt * noise.r_norm_sq(u)?;
    }

    let per_sample: Vec<(f64, f64)> = try_map_indexed(mode, n_samples, |s| {
        let mut rng = seeds.stream(StreamPurpose::Integral, s as u64);
        let mut v = SpectralField::zeros(k);
        let mut sup_sq = 0.0f64;
        let mut h2_acc = 0.0f64;
        for u in u_path {
            let inc = noise.sample_increment(dt, &mut rng)?;
            let dw = grid.synthesize(&SpectralField::new(inc.d_w))?;
            let product = GridFunction::new(
                u.values().iter().zip(dw.values()).map(|(a, b)| a * b).collect(),
                u.spacing(),
            );
            let forced = grid.project(&product, k)?;
            v = SpectralField::new(
                v.coeffs()
                    .iter()
                    .zip(forced.coeffs())
                    .zip(&decay)
                    .map(|((&a, &f), &d)| d * (a + f))
                    .collect(),
            );
            sup_sq = sup_sq.max(v.l2_norm_sq());
            h2_acc += dt * basis.seminorm_sq(&v, 2);
        }
        Ok::<(f64, f64), KsError>((sup_sq, h2_acc))
    })?;

    let sups: Vec<f64> = per_sample.iter().map(|x| x.0).collect();
    let ints: Vec<f64> = per_sample.iter().map(|x| x.1).collect();
    let (sup_mean, sup_hw) = mean_and_half_width(&sups);
    let (h2_mean, h2_hw) = mean_and_half_width(&ints);
    let d = denominator;
    let (sup_ratio, sup_half_width, h2_ratio, h2_half_width) = if d > 0.0 {
        (sup_mean / d, sup_hw / d, h2_mean / d, h2_hw / d)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    Ok(ConvolutionRatios {
        sup_ratio,
        sup_half_width,
        h2_ratio,
        h2_half_width,
        denominator,
        n_samples,
    })
}
