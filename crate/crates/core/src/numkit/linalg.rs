use crate::error::{Error, Result};

use super::matrix::{Matrix, Vector};

const PIVOT_TOL: f64 = 1e-12;
const MAX_JACOBI_SWEEPS: usize = 100;

fn require_square(m: &Matrix, op: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{op} needs a square matrix, got {}x{}", m.rows(), m.cols())))
    }
}

fn max_row_norm(m: &Matrix) -> f64 {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Gauss-Jordan elimination with partial pivoting on `[M | rhs]`, returning
/// `M⁻¹ · rhs`. A pivot smaller than `1e-12 × max row norm of M` is singular.
fn gauss_jordan(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let k = rhs.cols();
    let scale = max_row_norm(m);
    if n == 0 {
        return Ok(Matrix::zeros(0, k));
    }
    if scale == 0.0 {
        return Err(Error::Singular);
    }
    let threshold = PIVOT_TOL * scale;
    let mut a = m.as_slice().to_vec();
    let mut b = rhs.as_slice().to_vec();

    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs < threshold {
            return Err(Error::Singular);
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..k {
                b.swap(col * k + j, pivot_row * k + j);
            }
        }
        let inv_pivot = 1.0 / a[col * n + col];
        for j in 0..n {
            a[col * n + j] *= inv_pivot;
        }
        for j in 0..k {
            b[col * k + j] *= inv_pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[r * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a[r * n + j] -= factor * a[col * n + j];
            }
            for j in 0..k {
                b[r * k + j] -= factor * b[col * k + j];
            }
        }
    }
    Ok(Matrix::from_vec_unchecked(n, k, b))
}

/// Inverse of a square matrix.
pub fn invert(m: &Matrix) -> Result<Matrix> {
    require_square(m, "invert")?;
    gauss_jordan(m, &Matrix::identity(m.rows()))
}

/// Solves `M x = rhs`.
pub fn solve(m: &Matrix, rhs: &[f64]) -> Result<Vector> {
    require_square(m, "solve")?;
    if rhs.len() != m.rows() {
        return Err(Error::Shape(format!(
            "right-hand side has length {}, expected {}",
            rhs.len(),
            m.rows()
        )));
    }
    let b = Matrix::from_vec_unchecked(rhs.len(), 1, rhs.to_vec());
    Ok(Vector::from_vec_unchecked(gauss_jordan(m, &b)?.as_slice().to_vec()))
}

/// Eigendecomposition `S = Q diag(values) Qᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub values: Vector,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

impl SymEig {
    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `Q f(Λ) Qᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lambda) in self.values.iter().enumerate() {
            let w = f(lambda);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let qi = self.vectors[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += qi * self.vectors[(j, k)];
                }
            }
        }
        out
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations. The input is
/// symmetrized as `(S + Sᵀ)/2` first.
pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    require_square(s, "sym_eig")?;
    let n = s.rows();
    let mut a = s.symmetrize();
    let mut v = Matrix::identity(n);
    let total = a.frobenius_norm();

    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = Vector::from_vec_unchecked(order.iter().map(|&i| a[(i, i)]).collect());
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEig { values, vectors })
}

/// Spectral norm: the largest singular value, `sqrt(λmax(MᵀM))`.
pub fn operator_norm(m: &Matrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    let gram = m.transpose().matmul(m);
    let eig = sym_eig(&gram).expect("Gram matrix is square");
    eig.max().max(0.0).sqrt()
}

/// Symmetric square root of a PSD matrix. Eigenvalues down to
/// `-1e-6 × ‖S‖` are clamped to zero; anything more negative is rejected.
pub fn psd_sqrt(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(s)?;
    let norm = eig.values.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if eig.min() < -1e-6 * norm {
        return Err(Error::NotPsd { min_eigenvalue: eig.min() });
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()).symmetrize())
}

/// Kronecker product with block layout `[X_ij · Y]`.
pub fn kron(x: &Matrix, y: &Matrix) -> Matrix {
    let (m, n, p, q) = (x.rows(), x.cols(), y.rows(), y.cols());
    let mut out = Matrix::zeros(m * p, n * q);
    for i in 0..m {
        for j in 0..n {
            let xij = x[(i, j)];
            for k in 0..p {
                for l in 0..q {
                    out[(i * p + k, j * q + l)] = xij * y[(k, l)];
                }
            }
        }
    }
    out
}

/// Row-major vectorization: `vec(X)[i·cols + j] = X_ij`. Under this convention
/// `vec(A X Bᵀ) = (A ⊗ B) vec(X)`.
pub fn vec(x: &Matrix) -> Vector {
    Vector::from_vec_unchecked(x.as_slice().to_vec())
}

/// Inverse of [`vec`].
pub fn reshape(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::Shape(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix::from_vec_unchecked(rows, cols, v.to_vec()))
}

/// Solves the Lyapunov equation `A X + X Aᵀ = E` through the dense
/// `d² × d²` system `(A ⊗ I + I ⊗ A) vec(X) = vec(E)`.
pub fn solve_lyapunov(a: &Matrix, e: &Matrix) -> Result<Matrix> {
    require_square(a, "solve_lyapunov")?;
    if e.rows() != a.rows() || e.cols() != a.cols() {
        return Err(Error::Shape(format!(
            "Lyapunov right-hand side is {}x{}, expected {}x{}",
            e.rows(),
            e.cols(),
            a.rows(),
            a.cols()
        )));
    }
    let d = a.rows();
    let eye = Matrix::identity(d);
    let system = kron(a, &eye).add(&kron(&eye, a));
    let x = solve(&system, e.as_slice())?;
    Ok(reshape(&x, d, d)?.symmetrize())
}
