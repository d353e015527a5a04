//! Summary statistics over trial ensembles.

use crate::error::{Error, Result};
use crate::inference::Region;
use crate::numkit::{gaussian_cdf, Matrix};

/// Largest per-coordinate Kolmogorov-Smirnov gap between the empirical
/// distribution of `samples` and `N(0, Λ_jj)`.
///
/// The supremum is evaluated at the order statistics using both one-sided
/// gaps `i/M - F(x_(i))` and `F(x_(i)) - (i-1)/M`.
pub fn ks_distance<S: AsRef<[f64]>>(samples: &[S], lambda_star: &Matrix) -> Result<f64> {
    let m = samples.len();
    if m < 10 {
        return Err(Error::Domain(format!("KS distance needs at least 10 samples, got {m}")));
    }
    let d = lambda_star.rows();
    if let Some(bad) = samples.iter().position(|s| s.as_ref().len() != d) {
        return Err(Error::Shape(format!("sample {bad} does not have dimension {d}")));
    }
    let mut worst = 0.0f64;
    let mut column = vec![0.0; m];
    for j in 0..d {
        let var = lambda_star[(j, j)];
        if var <= 0.0 {
            return Err(Error::Domain(format!("Λ*[{j}][{j}] = {var} is not positive")));
        }
        let sd = var.sqrt();
        for (c, s) in column.iter_mut().zip(samples) {
            *c = s.as_ref()[j];
        }
        column.sort_by(f64::total_cmp);
        for (i, &x) in column.iter().enumerate() {
            let f = gaussian_cdf(x / sd);
            let above = (i + 1) as f64 / m as f64 - f;
            let below = f - i as f64 / m as f64;
            worst = worst.max(above).max(below);
        }
    }
    Ok(worst)
}

fn order_index(len: usize, p: f64) -> usize {
    // 1-based rank ⌈pM⌉, guarded against 0.95·M landing a hair above an integer.
    let rank = (p * len as f64 - 1e-9).ceil().max(1.0) as usize;
    rank.min(len) - 1
}

/// Upper empirical quantile: the order statistic at rank `⌈pM⌉`.
pub fn empirical_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("quantile of an empty list".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile level {p} is outside [0, 1]")));
    }
    let mut v = values.to_vec();
    let k = order_index(v.len(), p);
    let (_, kth, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*kth)
}

/// Fraction of regions containing `theta_star`.
pub fn coverage_rate(regions: &[Region], theta_star: &[f64]) -> Result<f64> {
    if regions.is_empty() {
        return Err(Error::Domain("coverage of an empty region list".into()));
    }
    if let Some(r) = regions.iter().find(|r| r.dim() != theta_star.len()) {
        return Err(Error::Shape(format!(
            "region of dimension {} against θ* of length {}",
            r.dim(),
            theta_star.len()
        )));
    }
    let hits = regions.iter().filter(|r| r.contains(theta_star)).count();
    Ok(hits as f64 / regions.len() as f64)
}

/// `‖Λ̂ - Λ*‖_F`, or its square.
pub fn frobenius_error(lambda_hat: &Matrix, lambda_star: &Matrix, squared: bool) -> f64 {
    let e = lambda_hat.sub(lambda_star).frobenius_norm();
    if squared {
        e * e
    } else {
        e
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape("x and y lengths differ".into()));
    }
    if xs.len() < 2 {
        return Err(Error::Domain("slope needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Domain("log-log slope needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all x values coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}
