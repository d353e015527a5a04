use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

const BISECTION_ITERS: usize = 200;

/// Standard normal CDF `Φ(x)`.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {p} is outside (0, 1)")))
    }
}

/// Bisection for the root of a nondecreasing `cdf(x) = p` on `[lo, hi]`.
fn bisect(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Standard normal quantile `Φ⁻¹(p)` by bisection on [`gaussian_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(bisect(gaussian_cdf, p, -40.0, 40.0))
}

/// CDF of the χ²(d) distribution, the regularized lower incomplete gamma
/// function `P(d/2, x/2)`.
pub fn chi2_cdf(d: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * d as f64, 0.5 * x)
    }
}

/// Quantile of χ²(d) at level `p`.
pub fn chi2_quantile(d: usize, p: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::Domain("chi-square degrees of freedom must be positive".into()));
    }
    check_probability(p)?;
    let mut hi = d as f64 + 10.0;
    while chi2_cdf(d, hi) < p {
        hi *= 2.0;
    }
    Ok(bisect(|x| chi2_cdf(d, x), p, 0.0, hi))
}
