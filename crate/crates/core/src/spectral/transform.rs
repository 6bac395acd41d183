//! FFT-backed discrete sine/cosine machinery on the uniform interior grid.
//!
//! All four transforms used by the crate reduce to one complex FFT of length
//! `N = 2(M+1)` via odd/even extension:
//!
//! * coefficients -> grid values of a sine series,
//! * coefficients -> grid values of a cosine series (derivatives),
//! * grid values  -> the sums `S_k = sum_j v_j sin(pi j k/(M+1))` and
//!   `C_k = sum_j v_j cos(pi j k/(M+1))` in a single pass.
//!
//! Orthogonality on this grid: `sum_{j=1}^{M} sin(pi jk/(M+1)) sin(pi jl/(M+1))
//! = (M+1)/2 delta_{kl}` for `1 <= k,l <= M`, which makes the pair
//! synthesize/project exactly inverse on band-limited data.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Transform plan for a fixed interior grid size `M`.
#[derive(Clone)]
pub struct SineCosineEngine {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl SineCosineEngine {
    pub fn new(m: usize) -> Self {
        let n = 2 * (m + 1);
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch_len = fft.get_inplace_scratch_len();
        Self { m, fft, scratch_len }
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    fn run(&self, buf: &mut [Complex<f64>]) {
        let mut scratch = vec![Complex::default(); self.scratch_len];
        self.fft.process_with_scratch(buf, &mut scratch);
    }

    /// `out[j-1] = sum_{k=1}^{len(b)} b[k-1] sin(pi j k/(M+1))` for `j = 1..=M`.
    pub fn sine_synthesis(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert!(coeffs.len() <= self.m);
        let n = 2 * (self.m + 1);
        let mut buf = vec![Complex::default(); n];
        for (k, &b) in coeffs.iter().enumerate() {
            buf[k + 1] = Complex::new(b, 0.0);
            buf[n - k - 1] = Complex::new(-b, 0.0);
        }
        self.run(&mut buf);
        (1..=self.m).map(|j| -0.5 * buf[j].im).collect()
    }

    /// `out[j-1] = sum_{k=1}^{len(b)} b[k-1] cos(pi j k/(M+1))` for `j = 1..=M`.
    pub fn cosine_synthesis(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert!(coeffs.len() <= self.m);
        let n = 2 * (self.m + 1);
        let mut buf = vec![Complex::default(); n];
        for (k, &b) in coeffs.iter().enumerate() {
            buf[k + 1] = Complex::new(b, 0.0);
            buf[n - k - 1] = Complex::new(b, 0.0);
        }
        self.run(&mut buf);
        (1..=self.m).map(|j| 0.5 * buf[j].re).collect()
    }

    /// Sine sums `S_k` for `k = 1..=M` of grid values `v_1..v_M`.
    pub fn sine_sums(&self, values: &[f64]) -> Vec<f64> {
        self.sums(values).0
    }

    /// Both `S_k` and `C_k` for `k = 1..=M` from one FFT.
    pub fn sums(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(values.len(), self.m, "grid length mismatch");
        let n = 2 * (self.m + 1);
        let mut buf = vec![Complex::default(); n];
        for (j, &v) in values.iter().enumerate() {
            buf[j + 1] = Complex::new(v, 0.0);
        }
        self.run(&mut buf);
        let sines = (1..=self.m).map(|k| -buf[k].im).collect();
        let cosines = (1..=self.m).map(|k| buf[k].re).collect();
        (sines, cosines)
    }
}

impl std::fmt::Debug for SineCosineEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SineCosineEngine").field("m", &self.m).finish()
    }
}
