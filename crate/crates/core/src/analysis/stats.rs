//! Small statistics helpers: CLT intervals and least-squares fits.

use serde::Serialize;

/// Sample mean with a 95% CLT half-width.
pub fn mean_and_half_width(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Ordinary least squares `y ~ intercept + slope x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need at least two points to fit a line");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let syy: f64 = y.iter().map(|yi| (yi - my) * (yi - my)).sum();

    // Flat data: report a zero slope as a perfect fit rather than a 0/0 R^2.
    if syy < 1e-20 * n {
        return LinFit { slope: 0.0, intercept: my, slope_stderr: 0.0, r2: 1.0 };
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let e = yi - intercept - slope * xi;
            e * e
        })
        .sum();
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let stderr = (ss_res / dof / sxx).sqrt();
    LinFit { slope, intercept, slope_stderr: stderr, r2: 1.0 - ss_res / syy }
}

/// Least squares for `y ~ sum_j c_j basis_j(x)` with coefficients forced
/// nonnegative by exhaustive active-set search (fine for <= 3 columns).
pub fn nonneg_lsq(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = columns.len();
    assert!(k <= 8, "active-set enumeration is exponential in columns");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0..(1u32 << k) {
        let active: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let coefs = solve_subset(columns, y, &active);
        if coefs.iter().any(|&c| c < 0.0) {
            continue;
        }
        let res: f64 = y
            .iter()
            .enumerate()
            .map(|(i, &yi)| {
                let fit: f64 = (0..k).map(|j| coefs[j] * columns[j][i]).sum();
                let e = yi - fit;
                e * e
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| res < *b) {
            best = Some((res, coefs));
        }
    }
    best.expect("empty active set always feasible").1
}

fn solve_subset(columns: &[Vec<f64>], y: &[f64], active: &[usize]) -> Vec<f64> {
    let k = columns.len();
    let m = active.len();
    let mut coefs = vec![0.0; k];
    if m == 0 {
        return coefs;
    }
    // Normal equations over the active columns, solved by Gaussian elimination.
    let mut a = vec![vec![0.0f64; m + 1]; m];
    for (r, &jr) in active.iter().enumerate() {
        for (c, &jc) in active.iter().enumerate() {
            a[r][c] = columns[jr].iter().zip(&columns[jc]).map(|(p, q)| p * q).sum();
        }
        a[r][m] = columns[jr].iter().zip(y).map(|(p, q)| p * q).sum();
    }
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        if a[col][col].abs() < 1e-30 {
            return coefs; // singular: treat as infeasible (zeros)
        }
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..=m {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    for (r, &j) in active.iter().enumerate() {
        coefs[j] = a[r][m] / a[r][r];
    }
    coefs
}

/// R^2 of an arbitrary fitted curve against observations.
pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let syy: f64 = y.iter().map(|yi| (yi - my) * (yi - my)).sum();
    if syy < 1e-20 * n {
        return 1.0;
    }
    let ss_res: f64 = y.iter().zip(fitted).map(|(yi, fi)| (yi - fi) * (yi - fi)).sum();
    1.0 - ss_res / syy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_half_width_shrinks_like_sqrt_n() {
        let xs: Vec<f64> = (0..4000).map(|i| ((i * 2654435761usize) % 1000) as f64 / 1000.0).collect();
        let (_, hw_full) = mean_and_half_width(&xs);
        let (_, hw_half) = mean_and_half_width(&xs[..1000]);
        let shrink = hw_half / hw_full;
        assert!((shrink - 2.0).abs() < 0.35, "expected ~2x, got {shrink}");
    }

    #[test]
    fn exact_line_is_recovered() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|xi| 3.0 - 0.5 * xi).collect();
        let fit = linear_fit(&x, &y);
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!(fit.r2 > 1.0 - 1e-12);
        assert!(fit.slope_stderr < 1e-10);
    }

    #[test]
    fn flat_data_reports_zero_slope_perfect_fit() {
        let x = [1.0, 2.0, 3.0];
        let y = [5.0, 5.0, 5.0];
        let fit = linear_fit(&x, &y);
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r2, 1.0);
    }

    #[test]
    fn nonneg_lsq_clamps_negative_components() {
        // y = 2*x0 with a decoy column that would take a negative weight.
        let x0: Vec<f64> = (1..20).map(|i| i as f64).collect();
        let x1: Vec<f64> = x0.iter().map(|v| v * v).collect();
        let y: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| 2.0 * a - 0.001 * b).collect();
        let coefs = nonneg_lsq(&[x0, x1], &y);
        assert!(coefs[1] >= 0.0);
        assert!(coefs[0] > 0.0);
    }
}
