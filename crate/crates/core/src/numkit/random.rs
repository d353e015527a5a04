use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

use super::linalg::psd_sqrt;
use super::matrix::{Matrix, Vector};

/// Deterministic generator used for every simulation stream.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws from `N(0, Λ)` as `Λ^{1/2} z`. The square root is computed once so
/// repeated draws only cost a matrix-vector product.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    root: Matrix,
}

impl GaussianSampler {
    pub fn new(cov: &Matrix) -> Result<Self> {
        Ok(GaussianSampler { root: psd_sqrt(cov)? })
    }

    pub fn dim(&self) -> usize {
        self.root.rows()
    }

    /// Writes one draw into `out`, using `z` as scratch for the standard normals.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        for zi in z.iter_mut().take(d) {
            *zi = standard_normal(rng);
        }
        for (i, o) in out.iter_mut().enumerate().take(d) {
            *o = self.root.row(i).iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut out = vec![0.0; d];
        self.sample_into(rng, &mut z, &mut out);
        Vector::from_vec_unchecked(out)
    }
}

/// One draw from `N(0, Λ)`.
pub fn gaussian_vector<R: Rng + ?Sized>(cov: &Matrix, rng: &mut R) -> Result<Vector> {
    Ok(GaussianSampler::new(cov)?.sample(rng))
}
