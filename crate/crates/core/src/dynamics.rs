//! Nonlinearity, norm truncation, and noise-intensity models.
//!
//! The flux `f` satisfies `f(0) = 0` and the polynomial Lipschitz bound
//! `|f(u) - f(v)| <= C (1 + |u| + |v|)^(p-1) |u - v|`. The truncation
//! `S_N u = eta_N(||u||_{L^2}) u` with a smooth cutoff `eta_N` makes the
//! composed flux `f_N = f . S_N` globally Lipschitz, which is what the
//! fixed-point argument needs. The noise intensity `sigma` is affine in
//! `(u, u_x, u_xx)` with Lipschitz constants `C` in the state and gradient
//! slots and `eps` in the second-derivative slot (`eps = 0` in state-only
//! mode).

use rand::Rng;
use serde::Serialize;

use crate::error::{KsError, Result};
use crate::noise::NoiseModel;
use crate::spectral::{random_decay_field, GridFunction, SemigroupSpec, SineGrid, SpectralField};

/// Pointwise flux nonlinearity.
#[derive(Debug, Clone)]
pub struct FluxModel {
    kind: FluxKind,
    p: f64,
}

#[derive(Debug, Clone)]
enum FluxKind {
    /// `f(u) = u^2 / 2`, the classic quadratic flux.
    Quadratic,
    /// `f(u) = |u|^(p-1) u / p`.
    Power,
    /// Piecewise-linear table, extended by its end slopes.
    Table(Vec<(f64, f64)>),
}

impl FluxModel {
    pub fn quadratic() -> Self {
        Self { kind: FluxKind::Quadratic, p: 2.0 }
    }

    pub fn power(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(KsError::InvalidParameter(format!("flux exponent p must be >= 1, got {p}")));
        }
        Ok(Self { kind: FluxKind::Power, p })
    }

    /// Tabulated flux. Knots must be strictly increasing in `u` and the
    /// interpolant must vanish at zero.
    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(KsError::InvalidParameter("flux table needs at least 2 points".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(KsError::InvalidParameter("flux table knots must be strictly increasing".into()));
        }
        let model = Self { kind: FluxKind::Table(points), p: 1.0 };
        if model.eval(0.0).abs() > 1e-12 {
            return Err(KsError::InvalidParameter("flux table must interpolate f(0) = 0".into()));
        }
        Ok(model)
    }

    /// Growth exponent `p` of the Lipschitz envelope.
    pub fn growth_exponent(&self) -> f64 {
        self.p
    }

    pub fn eval(&self, u: f64) -> f64 {
        match &self.kind {
            FluxKind::Quadratic => 0.5 * u * u,
            FluxKind::Power => u.abs().powf(self.p - 1.0) * u / self.p,
            FluxKind::Table(points) => {
                let n = points.len();
                if u <= points[0].0 {
                    let (x0, y0) = points[0];
                    let (x1, y1) = points[1];
                    return y0 + (u - x0) * (y1 - y0) / (x1 - x0);
                }
                if u >= points[n - 1].0 {
                    let (x0, y0) = points[n - 2];
                    let (x1, y1) = points[n - 1];
                    return y1 + (u - x1) * (y1 - y0) / (x1 - x0);
                }
                let i = points.partition_point(|&(x, _)| x <= u) - 1;
                let (x0, y0) = points[i];
                let (x1, y1) = points[i + 1];
                y0 + (u - x0) * (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Pointwise application on grid samples.
    pub fn flux_eval(&self, g: &GridFunction) -> GridFunction {
        GridFunction::new(g.values().iter().map(|&v| self.eval(v)).collect(), g.spacing())
    }
}

/// Smooth norm cutoff at radius `N`.
///
/// `eta_N(r) = psi(2 - r/N) / (psi(2 - r/N) + psi(r/N - 1))` with
/// `psi(s) = exp(-1/s)` for `s > 0` (else 0): identically 1 on `[0, N]`,
/// identically 0 on `[2N, inf)`, smooth and nonincreasing in between.
#[derive(Debug, Clone, Copy)]
pub struct TruncationSpec {
    radius: f64,
}

fn bump(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

impl TruncationSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(KsError::InvalidParameter(format!(
                "truncation radius must be > 0, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// A copy with doubled radius (for escalation schedules).
    pub fn doubled(&self) -> Self {
        Self { radius: 2.0 * self.radius }
    }

    /// `eta_N(r)` for `r >= 0`.
    pub fn mollifier(&self, r: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(KsError::InvalidParameter(format!("mollifier argument must be >= 0, got {r}")));
        }
        Ok(self.scale(r))
    }

    /// Total version of [`mollifier`] used in hot paths (callers guarantee
    /// `r >= 0` because `r` is a norm).
    ///
    /// [`mollifier`]: TruncationSpec::mollifier
    pub fn scale(&self, r: f64) -> f64 {
        let x = r / self.radius;
        if x <= 1.0 {
            return 1.0;
        }
        if x >= 2.0 {
            return 0.0;
        }
        let up = bump(2.0 - x);
        up / (up + bump(x - 1.0))
    }

    /// `S_N u = eta_N(||u||_{L^2}) u`. Leaves `u` bitwise unchanged inside
    /// the radius, which is what makes truncation-level consistency exact.
    pub fn truncate(&self, u: &SpectralField) -> SpectralField {
        let s = self.scale(u.l2_norm());
        if s == 1.0 {
            u.clone()
        } else {
            u.scaled(s)
        }
    }
}

/// Noise-intensity model, affine in `(u, u_x, u_xx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaModel {
    mode: SigmaMode,
    base: f64,
    state_coef: f64,
    grad_coef: f64,
    lap_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    /// `sigma = sigma(t, x, u)`: derivative slots ignored.
    StateOnly,
    /// `sigma = sigma(t, x, u, u_x, u_xx)`.
    Full,
}

impl SigmaModel {
    pub fn state_only(base: f64, state_coef: f64) -> Self {
        Self { mode: SigmaMode::StateOnly, base, state_coef, grad_coef: 0.0, lap_coef: 0.0 }
    }

    pub fn full(base: f64, state_coef: f64, grad_coef: f64, lap_coef: f64) -> Self {
        Self { mode: SigmaMode::Full, base, state_coef, grad_coef, lap_coef }
    }

    pub fn zero() -> Self {
        Self::state_only(0.0, 0.0)
    }

    pub fn mode(&self) -> SigmaMode {
        self.mode
    }

    pub fn is_zero(&self) -> bool {
        self.base == 0.0 && self.state_coef == 0.0 && self.grad_coef == 0.0 && self.lap_coef == 0.0
    }

    /// Whether evaluation needs `u_x`, `u_xx` on the grid.
    pub fn needs_derivatives(&self) -> bool {
        self.mode == SigmaMode::Full && (self.grad_coef != 0.0 || self.lap_coef != 0.0)
    }

    /// Lipschitz constant in the `(u, u_x)` slots.
    pub fn lip_c(&self) -> f64 {
        self.state_coef.abs().max(self.grad_coef.abs())
    }

    /// Lipschitz constant in the `u_xx` slot.
    pub fn lip_eps(&self) -> f64 {
        self.lap_coef.abs()
    }

    pub fn eval(&self, _t: f64, _x: f64, u: f64, u_x: f64, u_xx: f64) -> f64 {
        match self.mode {
            SigmaMode::StateOnly => self.base + self.state_coef * u,
            SigmaMode::Full => {
                self.base + self.state_coef * u + self.grad_coef * u_x + self.lap_coef * u_xx
            }
        }
    }
}

/// Pointwise `sigma(t, x, u, u_x, u_xx)` on the grid. Derivatives are only
/// synthesized when the model actually reads them.
pub fn sigma_on_grid(
    sigma: &SigmaModel,
    grid: &SineGrid,
    t: f64,
    u: &SpectralField,
) -> Result<GridFunction> {
    let base = grid.synthesize(u)?;
    if !sigma.needs_derivatives() {
        let values = base
            .values()
            .iter()
            .enumerate()
            .map(|(j, &v)| sigma.eval(t, grid.point(j + 1), v, 0.0, 0.0))
            .collect();
        return Ok(GridFunction::new(values, grid.spacing()));
    }
    let d1 = grid.derivative(u, 1)?;
    let d2 = grid.derivative(u, 2)?;
    let values = base
        .values()
        .iter()
        .zip(d1.values())
        .zip(d2.values())
        .enumerate()
        .map(|(j, ((&v, &vx), &vxx))| sigma.eval(t, grid.point(j + 1), v, vx, vxx))
        .collect();
    Ok(GridFunction::new(values, grid.spacing()))
}

/// Galerkin coefficients of `d/dx f_N(u)`: truncate, evaluate `f` on the
/// dealiasing grid, and project the derivative by parts. Exactly orthogonal
/// to `u` for the quadratic flux when the grid satisfies the 3/2 rule.
pub fn div_flux_galerkin(
    flux: &FluxModel,
    trunc: &TruncationSpec,
    grid: &SineGrid,
    u: &SpectralField,
) -> Result<SpectralField> {
    let k = u.len();
    if 2 * grid.len() < 3 * k {
        return Err(KsError::Aliasing(format!(
            "flux dealiasing needs M >= ceil(3K/2) = {}, got M = {}",
            (3 * k).div_ceil(2),
            grid.len()
        )));
    }
    let truncated = trunc.truncate(u);
    let g = grid.synthesize(&truncated)?;
    let f = flux.flux_eval(&g);
    grid.project_derivative(&f, k)
}

/// Empirical constants for the growth and Lipschitz estimates the
/// contraction argument consumes. Every entry is the smallest constant that
/// bounds all sampled ratios; nothing is asserted here, callers compare.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    /// `||f(u)||_{L^{2/p}} <= C (1 + ||u||^p)`.
    pub flux_growth: f64,
    /// `||f(u) - f(v)||_{L^{2/p}} <= C (1 + ||u|| + ||v||)^(p-1) ||u - v||`.
    pub flux_lipschitz: f64,
    /// `||sigma(u)||_R^2 <= C (1 + ||u||^2) + eps ||u||_{H^2}^2`.
    pub sigma_growth_c: f64,
    pub sigma_growth_eps: f64,
    /// `||sigma(u) - sigma(v)||_R^2 <= C ||u - v||^2 + eps ||u - v||_{H^2}^2`.
    pub sigma_lip_c: f64,
    pub sigma_lip_eps: f64,
    pub samples: usize,
}

/// Least-squares fit of `y ~ c1 x1 + c2 x2` with nonnegative coefficients,
/// inflated so that `y_i <= c1 x1_i + c2 x2_i` holds for every sample.
fn covering_pair(xs1: &[f64], xs2: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&x1, &x2), &y) in xs1.iter().zip(xs2).zip(ys) {
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        b1 += x1 * y;
        b2 += x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    let (mut c1, mut c2) = if det.abs() > 1e-30 {
        ((s22 * b1 - s12 * b2) / det, (s11 * b2 - s12 * b1) / det)
    } else {
        (if s11 > 0.0 { b1 / s11 } else { 0.0 }, 0.0)
    };
    if c2 < 0.0 {
        c2 = 0.0;
        c1 = if s11 > 0.0 { (b1 / s11).max(0.0) } else { 0.0 };
    }
    if c1 < 0.0 {
        c1 = 0.0;
        c2 = if s22 > 0.0 { (b2 / s22).max(0.0) } else { 0.0 };
    }
    let mut worst = 1.0f64;
    for ((&x1, &x2), &y) in xs1.iter().zip(xs2).zip(ys) {
        let bound = c1 * x1 + c2 * x2;
        if y > 0.0 && bound > 0.0 {
            worst = worst.max(y / bound);
        }
    }
    (c1 * worst, c2 * worst)
}

pub fn certify_growth_bounds<R: Rng + ?Sized>(
    flux: &FluxModel,
    sigma: &SigmaModel,
    noise: &NoiseModel,
    basis: &SemigroupSpec,
    grid: &SineGrid,
    budget: usize,
    rng: &mut R,
) -> Result<GrowthReport> {
    if budget < 1000 {
        return Err(KsError::TooFewSamples(format!(
            "certification needs >= 1000 field pairs, got {budget}"
        )));
    }
    let k = basis.modes();
    let p = flux.growth_exponent();
    let q = 2.0 / p;

    let mut flux_growth = 0.0f64;
    let mut flux_lip = 0.0f64;
    let (mut g_x1, mut g_x2, mut g_y) = (Vec::new(), Vec::new(), Vec::new());
    let (mut l_x1, mut l_x2, mut l_y) = (Vec::new(), Vec::new(), Vec::new());

    for i in 0..budget {
        let amp = 10f64.powf(rng.random_range(-2.0..1.0));
        let decay = rng.random_range(0.6..2.0);
        let u = random_decay_field(k, decay, amp, rng);
        let v = if i % 4 == 0 {
            // Nearby pair: probes the Lipschitz ratios at small separation.
            let d = random_decay_field(k, decay, amp * 1e-3, rng);
            u.add(&d)
        } else {
            random_decay_field(k, rng.random_range(0.6..2.0), amp, rng)
        };

        let un = u.l2_norm();
        let vn = v.l2_norm();
        let ug = grid.synthesize(&u)?;
        let vg = grid.synthesize(&v)?;
        let fu = flux.flux_eval(&ug);
        let fv = flux.flux_eval(&vg);

        flux_growth = flux_growth.max(fu.lq_norm(q) / (1.0 + un.powf(p)));
        let diff = GridFunction::new(
            fu.values().iter().zip(fv.values()).map(|(a, b)| a - b).collect(),
            fu.spacing(),
        );
        let denom = (1.0 + un + vn).powf(p - 1.0) * u.sub(&v).l2_norm();
        if denom > 1e-14 {
            flux_lip = flux_lip.max(diff.lq_norm(q) / denom);
        }

        let su = sigma_on_grid(sigma, grid, 0.0, &u)?;
        let sv = sigma_on_grid(sigma, grid, 0.0, &v)?;
        g_y.push(noise.r_norm_sq(&su)?);
        g_x1.push(1.0 + un * un);
        g_x2.push(basis.h2_norm_sq(&u));

        let sdiff = GridFunction::new(
            su.values().iter().zip(sv.values()).map(|(a, b)| a - b).collect(),
            su.spacing(),
        );
        let w = u.sub(&v);
        let wl2 = w.l2_norm_sq();
        if wl2 > 1e-28 {
            l_y.push(noise.r_norm_sq(&sdiff)?);
            l_x1.push(wl2);
            l_x2.push(basis.h2_norm_sq(&w));
        }
    }

    let (sigma_growth_c, sigma_growth_eps) = if sigma.mode() == SigmaMode::StateOnly {
        let c = g_y
            .iter()
            .zip(&g_x1)
            .map(|(&y, &x)| y / x)
            .fold(0.0f64, f64::max);
        (c, 0.0)
    } else {
        covering_pair(&g_x1, &g_x2, &g_y)
    };
    let (sigma_lip_c, sigma_lip_eps) = if sigma.mode() == SigmaMode::StateOnly {
        let c = l_y
            .iter()
            .zip(&l_x1)
            .map(|(&y, &x)| y / x)
            .fold(0.0f64, f64::max);
        (c, 0.0)
    } else {
        covering_pair(&l_x1, &l_x2, &l_y)
    };

    Ok(GrowthReport {
        flux_growth,
        flux_lipschitz: flux_lip,
        sigma_growth_c,
        sigma_growth_eps,
        sigma_lip_c,
        sigma_lip_eps,
        samples: budget,
    })
}

/// Pointwise Assumption-(A) ratio maximized over random scalar pairs.
pub fn certify_flux_lipschitz<R: Rng + ?Sized>(
    flux: &FluxModel,
    budget: usize,
    range: f64,
    rng: &mut R,
) -> f64 {
    let p = flux.growth_exponent();
    let mut worst = 0.0f64;
    for _ in 0..budget {
        let u = rng.random_range(-range..range);
        let v = rng.random_range(-range..range);
        if (u - v).abs() < 1e-14 {
            continue;
        }
        let ratio = (flux.eval(u) - flux.eval(v)).abs()
            / ((1.0 + u.abs() + v.abs()).powf(p - 1.0) * (u - v).abs());
        worst = worst.max(ratio);
    }
    worst
}
