//! Symmetric eigendecomposition.
//!
//! Small matrices go through cyclic Jacobi rotations; large ones through
//! nalgebra's Householder tridiagonalisation with implicit QR, since a
//! Jacobi sweep over an m ≈ 2000 matrix costs as much as the whole QR solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest order solved by Jacobi under [`Solver::Auto`].
pub const JACOBI_MAX_ORDER: usize = 128;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    Auto,
    Jacobi,
    Tridiagonal,
}

/// Eigenvalues in descending order; column `i` of `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigen {
    /// `‖A − Σ λ_i u_i u_iᵀ‖_F / ‖A‖_F`.
    pub fn reconstruction_error(&self, a: &DMatrix<f64>) -> f64 {
        let rebuilt =
            &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose();
        let scale = a.norm();
        let err = (a - rebuilt).norm();
        if scale > 0.0 {
            err / scale
        } else {
            err
        }
    }

    /// Largest entry of `|UᵀU − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.vectors.ncols();
        let g = self.vectors.transpose() * &self.vectors - DMatrix::<f64>::identity(n, n);
        g.amax()
    }
}

fn check_square_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Precondition(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn sorted_descending(values: DVector<f64>, vectors: DMatrix<f64>) -> Eigen {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    Eigen {
        values: DVector::from_iterator(n, order.iter().map(|&i| values[i])),
        vectors: DMatrix::from_fn(vectors.nrows(), n, |r, c| vectors[(r, order[c])]),
    }
}

/// Cyclic Jacobi: sweeps until the off-diagonal Frobenius norm falls below
/// `tol·‖A‖_F`, at most 100 sweeps.
pub fn jacobi_eigen(a: &DMatrix<f64>, tol: f64) -> Result<Eigen> {
    check_square_symmetric(a)?;
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let target = tol * a.norm();

    let off_norm = |a: &DMatrix<f64>| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) > target {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(sorted_descending(a.diagonal(), v))
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn symmetric_eigen(a: &DMatrix<f64>, tol: f64, solver: Solver) -> Result<Eigen> {
    let use_jacobi = match solver {
        Solver::Jacobi => true,
        Solver::Tridiagonal => false,
        Solver::Auto => a.nrows() <= JACOBI_MAX_ORDER,
    };
    if use_jacobi {
        return jacobi_eigen(a, tol);
    }
    check_square_symmetric(a)?;
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or(Error::NoConvergence { sweeps: 0 })?;
    Ok(sorted_descending(eig.eigenvalues, eig.eigenvectors))
}

/// Eigenvalues only, descending. Skips eigenvector accumulation on the tridiagonal path.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>, tol: f64, solver: Solver) -> Result<DVector<f64>> {
    let use_jacobi = match solver {
        Solver::Jacobi => true,
        Solver::Tridiagonal => false,
        Solver::Auto => a.nrows() <= JACOBI_MAX_ORDER,
    };
    if use_jacobi {
        return Ok(jacobi_eigen(a, tol)?.values);
    }
    check_square_symmetric(a)?;
    let mut values: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(DVector::from_vec(values))
}
