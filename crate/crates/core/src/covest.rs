//! Online plug-in estimator of the asymptotic covariance of averaged TD.
//!
//! Expanding `Γ̂ = (1/T) Σ (A_t θ̄ - b_t)(A_t θ̄ - b_t)ᵀ` under row-major
//! vectorization gives
//!
//! ```text
//! vec(Γ̂) = mean(A_t ⊗ A_t) (θ̄ ⊗ θ̄) - mean(A_t ⊗ b_t + b_t ⊗ A_t) θ̄ + mean(b_t ⊗ b_t)
//! ```
//!
//! so the four sample means can be streamed in `O(d⁴)` memory without
//! storing samples, and `θ̄` only enters at finalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::SampleTuple;
use crate::numkit::{invert, reshape, Matrix, Vector};

/// Streaming means of `A_t`, `A_t ⊗ A_t`, `A_t ⊗ b_t + b_t ⊗ A_t` and `b_t ⊗ b_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    n: u64,
    a_bar: Matrix,
    aa_bar: Matrix,
    ab_bar: Matrix,
    bb_bar: Vector,
}

impl MomentAccumulator {
    pub fn new(d: usize) -> Self {
        MomentAccumulator {
            n: 0,
            a_bar: Matrix::zeros(d, d),
            aa_bar: Matrix::zeros(d * d, d * d),
            ab_bar: Matrix::zeros(d * d, d),
            bb_bar: Vector::zeros(d * d),
        }
    }

    pub fn dim(&self) -> usize {
        self.a_bar.rows()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn a_bar(&self) -> &Matrix {
        &self.a_bar
    }

    pub fn aa_bar(&self) -> &Matrix {
        &self.aa_bar
    }

    pub fn ab_bar(&self) -> &Matrix {
        &self.ab_bar
    }

    pub fn bb_bar(&self) -> &Vector {
        &self.bb_bar
    }

    /// Folds one sample into every mean with `x̄ ← x̄ + (x - x̄)/n`.
    pub fn update(&mut self, sample: &SampleTuple) -> Result<()> {
        let d = self.dim();
        if sample.dim() != d {
            return Err(Error::Shape(format!(
                "sample has dimension {}, accumulator has {d}",
                sample.dim()
            )));
        }
        self.n += 1;
        let w = 1.0 / self.n as f64;
        let a = sample.a.as_slice();
        let b = sample.b.as_slice();
        let dd = d * d;

        for (m, x) in self.a_bar.as_mut_slice().iter_mut().zip(a) {
            *m += (x - *m) * w;
        }

        // (A ⊗ A)[(i,k),(j,l)] = A_ij A_kl
        let aa = self.aa_bar.as_mut_slice();
        for i in 0..d {
            for k in 0..d {
                let row = (i * d + k) * dd;
                for j in 0..d {
                    let aij = a[i * d + j];
                    for l in 0..d {
                        let m = &mut aa[row + j * d + l];
                        *m += (aij * a[k * d + l] - *m) * w;
                    }
                }
            }
        }

        // (A ⊗ b)[(i,k),j] = A_ij b_k and (b ⊗ A)[(i,k),j] = b_i A_kj
        let ab = self.ab_bar.as_mut_slice();
        for i in 0..d {
            for k in 0..d {
                let row = (i * d + k) * d;
                for j in 0..d {
                    let m = &mut ab[row + j];
                    *m += (a[i * d + j] * b[k] + b[i] * a[k * d + j] - *m) * w;
                }
            }
        }

        for i in 0..d {
            for k in 0..d {
                let m = &mut self.bb_bar[i * d + k];
                *m += (b[i] * b[k] - *m) * w;
            }
        }
        Ok(())
    }

    /// `Γ̂` at the given `θ̄`, symmetrized.
    pub fn gamma_hat(&self, theta_bar: &[f64]) -> Result<Matrix> {
        let d = self.dim();
        if self.n == 0 {
            return Err(Error::Domain("covariance estimate needs at least one sample".into()));
        }
        if theta_bar.len() != d {
            return Err(Error::Shape(format!(
                "θ̄ has length {}, accumulator has dimension {d}",
                theta_bar.len()
            )));
        }
        let mut tt = Vec::with_capacity(d * d);
        for &x in theta_bar {
            tt.extend(theta_bar.iter().map(|y| x * y));
        }
        let quad = self.aa_bar.matvec(&tt);
        let cross = self.ab_bar.matvec(theta_bar);
        let v: Vec<f64> = quad
            .iter()
            .zip(cross.iter())
            .zip(self.bb_bar.iter())
            .map(|((q, c), b)| q - c + b)
            .collect();
        Ok(reshape(&v, d, d)?.symmetrize())
    }

    /// `Γ̂` and `Λ̂ = Ā⁻¹ Γ̂ Ā⁻ᵀ`.
    pub fn finalize(&self, theta_bar: &[f64]) -> Result<CovarianceEstimate> {
        let gamma_hat = self.gamma_hat(theta_bar)?;
        let a_inv = invert(&self.a_bar)?;
        let lambda_hat = a_inv.matmul(&gamma_hat).matmul(&a_inv.transpose()).symmetrize();
        Ok(CovarianceEstimate {
            gamma_hat,
            lambda_hat,
            a_bar: self.a_bar.clone(),
            n: self.n,
        })
    }
}

/// Functional form of [`MomentAccumulator::update`].
pub fn update(acc: &MomentAccumulator, sample: &SampleTuple) -> Result<MomentAccumulator> {
    let mut next = acc.clone();
    next.update(sample)?;
    Ok(next)
}

pub fn finalize(acc: &MomentAccumulator, theta_bar: &[f64]) -> Result<CovarianceEstimate> {
    acc.finalize(theta_bar)
}

/// Plug-in estimates of `Γ` and `Λ*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub gamma_hat: Matrix,
    pub lambda_hat: Matrix,
    pub a_bar: Matrix,
    pub n: u64,
}

impl CovarianceEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `Γ̂` straight from its definition, averaging `(A_t θ̄ - b_t)(A_t θ̄ - b_t)ᵀ`
/// over stored samples.
pub fn batch_gamma_oracle(samples: &[SampleTuple], theta_bar: &[f64]) -> Result<Matrix> {
    let first = samples.first().ok_or_else(|| Error::Domain("no samples".into()))?;
    let d = first.dim();
    if theta_bar.len() != d {
        return Err(Error::Shape("θ̄ does not match the sample dimension".into()));
    }
    let mut acc = Matrix::zeros(d, d);
    for s in samples {
        let r = s.a.matvec(theta_bar).sub(&s.b);
        acc = acc.add(&r.outer(&r));
    }
    Ok(acc.scale(1.0 / samples.len() as f64))
}
