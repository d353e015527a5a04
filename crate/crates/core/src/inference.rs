//! Confidence regions for `θ*` built from `(θ̄_T, Λ̂_T)`: hyperrectangles
//! (simultaneous or per-coordinate) and χ² ellipsoids. All regions are closed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::empirical_quantile;
use crate::numkit::{chi2_quantile, invert, normal_quantile, sym_eig, GaussianSampler, Matrix, Vector};

/// `Π_j [c_j - h_j, c_j + h_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperrectRegion {
    pub center: Vector,
    pub half_widths: Vector,
    pub t: u64,
    pub delta: f64,
}

/// `{θ : T (θ - c)ᵀ P (θ - c) ≤ radius}` with `P = Λ̂⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidRegion {
    pub center: Vector,
    pub precision: Matrix,
    pub radius: f64,
    pub t: u64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Region {
    Hyperrect(HyperrectRegion),
    Ellipsoid(EllipsoidRegion),
}

impl HyperrectRegion {
    pub fn contains(&self, theta: &[f64]) -> bool {
        assert_eq!(theta.len(), self.center.len(), "dimension mismatch");
        theta
            .iter()
            .zip(self.center.iter())
            .zip(self.half_widths.iter())
            .all(|((x, c), h)| (x - c).abs() <= *h)
    }

    /// Does coordinate `j` of `theta` fall in its interval?
    pub fn contains_coord(&self, j: usize, value: f64) -> bool {
        (value - self.center[j]).abs() <= self.half_widths[j]
    }
}

impl EllipsoidRegion {
    /// `T (θ - c)ᵀ P (θ - c)`.
    pub fn statistic(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.center.len(), "dimension mismatch");
        let diff: Vec<f64> = theta.iter().zip(self.center.iter()).map(|(x, c)| x - c).collect();
        let pd = self.precision.matvec(&diff);
        self.t as f64 * diff.iter().zip(pd.iter()).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.statistic(theta) <= self.radius
    }
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Hyperrect(r) => r.center.len(),
            Region::Ellipsoid(r) => r.center.len(),
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            Region::Hyperrect(r) => r.contains(theta),
            Region::Ellipsoid(r) => r.contains(theta),
        }
    }
}

pub fn contains(region: &Region, theta: &[f64]) -> bool {
    region.contains(theta)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("delta {delta} is outside (0, 1)")))
    }
}

fn check_shapes(theta_bar: &Vector, lambda: &Matrix, t: u64) -> Result<()> {
    if lambda.rows() != theta_bar.len() || lambda.cols() != theta_bar.len() {
        return Err(Error::Shape(format!(
            "covariance is {}x{} for a center of length {}",
            lambda.rows(),
            lambda.cols(),
            theta_bar.len()
        )));
    }
    if t == 0 {
        return Err(Error::Domain("sample count T must be at least 1".into()));
    }
    Ok(())
}

/// Monte Carlo `(1-δ)` quantile of `‖z‖_∞` for `z ~ N(0, Λ)`, taken as the
/// order statistic at index `⌈(1-δ) n_sims⌉`.
pub fn linf_quantile<R: Rng + ?Sized>(
    lambda: &Matrix,
    delta: f64,
    n_sims: usize,
    rng: &mut R,
) -> Result<f64> {
    check_delta(delta)?;
    if n_sims < 100 {
        return Err(Error::Domain(format!("n_sims {n_sims} is below 100")));
    }
    let sampler = GaussianSampler::new(lambda)?;
    let d = sampler.dim();
    let mut z = vec![0.0; d];
    let mut draw = vec![0.0; d];
    let norms: Vec<f64> = (0..n_sims)
        .map(|_| {
            sampler.sample_into(rng, &mut z, &mut draw);
            draw.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        })
        .collect();
    empirical_quantile(&norms, 1.0 - delta)
}

/// Hyperrectangle with common half-width `R/√T` around `θ̄`, given the
/// `ℓ∞` quantile `R`.
pub fn simultaneous_ci_from_quantile(
    theta_bar: &Vector,
    quantile: f64,
    t: u64,
    delta: f64,
) -> Result<HyperrectRegion> {
    if t == 0 {
        return Err(Error::Domain("sample count T must be at least 1".into()));
    }
    let h = quantile / (t as f64).sqrt();
    Ok(HyperrectRegion {
        center: theta_bar.clone(),
        half_widths: Vector::new(vec![h; theta_bar.len()])?,
        t,
        delta,
    })
}

/// Simultaneous confidence intervals from a simulated `ℓ∞` quantile of `N(0, Λ̂)`.
pub fn simultaneous_ci<R: Rng + ?Sized>(
    theta_bar: &Vector,
    lambda_hat: &Matrix,
    t: u64,
    delta: f64,
    n_sims: usize,
    rng: &mut R,
) -> Result<HyperrectRegion> {
    check_shapes(theta_bar, lambda_hat, t)?;
    let q = linf_quantile(lambda_hat, delta, n_sims, rng)?;
    simultaneous_ci_from_quantile(theta_bar, q, t, delta)
}

/// Per-coordinate intervals `θ̄_j ± z_{1-δ/2} √(Λ̂_jj / T)`.
pub fn individual_ci(theta_bar: &Vector, lambda_hat: &Matrix, t: u64, delta: f64) -> Result<HyperrectRegion> {
    check_delta(delta)?;
    check_shapes(theta_bar, lambda_hat, t)?;
    let z = normal_quantile(1.0 - delta / 2.0)?;
    let mut widths = Vec::with_capacity(theta_bar.len());
    for v in lambda_hat.diagonal() {
        if v < -1e-10 {
            return Err(Error::NotPsd { min_eigenvalue: v });
        }
        widths.push(z * (v.max(0.0) / t as f64).sqrt());
    }
    Ok(HyperrectRegion { center: theta_bar.clone(), half_widths: Vector::new(widths)?, t, delta })
}

/// Ellipsoid `T (θ - θ̄)ᵀ Λ̂⁻¹ (θ - θ̄) ≤ χ²_{d}(1-δ)`.
pub fn ellipsoid_region(theta_bar: &Vector, lambda_hat: &Matrix, t: u64, delta: f64) -> Result<EllipsoidRegion> {
    check_delta(delta)?;
    check_shapes(theta_bar, lambda_hat, t)?;
    let precision = invert(lambda_hat)?.symmetrize();
    let min_eig = sym_eig(&precision)?.min();
    if min_eig <= 0.0 {
        return Err(Error::NotPsd { min_eigenvalue: min_eig });
    }
    Ok(EllipsoidRegion {
        center: theta_bar.clone(),
        precision,
        radius: chi2_quantile(theta_bar.len(), 1.0 - delta)?,
        t,
        delta,
    })
}
