//! Dense small-matrix numerics and scalar distribution functions.
//!
//! Everything here is sized for d ≤ ~10 (and d² ≤ ~100 for the Kronecker
//! systems), so the algorithms are the simple dense ones.

mod dist;
mod linalg;
mod matrix;
mod random;

pub use dist::{chi2_cdf, chi2_quantile, gaussian_cdf, normal_quantile};
pub use linalg::{
    invert, kron, operator_norm, psd_sqrt, reshape, solve, solve_lyapunov, sym_eig, vec, SymEig,
};
pub use matrix::{Matrix, Vector};
pub use random::{gaussian_vector, seeded_rng, standard_normal, GaussianSampler, SimRng};
