//! Small dense symmetric linear algebra.
//!
//! Every matrix that appears in the flow solutions is a Gram-plus-ridge
//! matrix, so exponentials and solves go through a symmetric
//! eigendecomposition rather than general Padé or LU machinery.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry accepted before an input is rejected.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue a matrix must exceed to count as positive definite.
pub const PD_TOL: f64 = 1e-12;

/// Builds a matrix from row-major entries, rejecting wrong lengths and
/// non-finite values.
pub fn matrix_from_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if entries.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} entries for a {rows}x{cols} matrix",
            entries.len()
        )));
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("matrix entries must be finite".into()));
    }
    Ok(Matrix::from_row_slice(rows, cols, entries))
}

pub fn vector_from(entries: &[f64]) -> Result<Vector> {
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("vector entries must be finite".into()));
    }
    Ok(Vector::from_column_slice(entries))
}

/// Checks squareness and symmetry, then returns `(A + Aᵀ)/2`.
pub fn symmetrized(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Shape(format!(
            "matrix is not symmetric (max |a - aᵀ| = {asym:e})"
        )));
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Spectral decomposition `A = Q diag(λ) Qᵀ` of a symmetric matrix with
/// eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vector,
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn new(a: &Matrix) -> Result<Self> {
        let sym = symmetrized(a)?;
        let n = sym.nrows();
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = Matrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Q diag(g(λ)) Qᵀ` for a scalar spectral function `g`.
    pub fn map_spectrum(&self, g: impl Fn(f64) -> f64) -> Matrix {
        let scaled = Vector::from_iterator(self.dim(), self.values.iter().map(|&l| g(l)));
        let mut left = self.vectors.clone();
        for (mut col, s) in left.column_iter_mut().zip(scaled.iter()) {
            col *= *s;
        }
        left * self.vectors.transpose()
    }

    /// Applies `Q diag(g(λ)) Qᵀ` to a vector without forming the matrix.
    pub fn apply_spectrum(&self, g: impl Fn(f64) -> f64, v: &Vector) -> Vector {
        let mut coeffs = self.vectors.tr_mul(v);
        for (c, &l) in coeffs.iter_mut().zip(self.values.iter()) {
            *c *= g(l);
        }
        &self.vectors * coeffs
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_spectrum(|l| l)
    }

    /// `e^{-A t}`.
    pub fn expm_neg(&self, t: f64) -> Matrix {
        self.map_spectrum(|l| (-l * t).exp())
    }

    pub fn is_pd(&self) -> bool {
        self.min_eigenvalue() > PD_TOL
    }

    /// Solves `A x = b`, failing when `A` is not positive definite.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        if b.len() != self.dim() {
            return Err(Error::Shape(format!(
                "right-hand side has length {}, matrix is {}x{}",
                b.len(),
                self.dim(),
                self.dim()
            )));
        }
        if !self.is_pd() {
            return Err(Error::Singular {
                min_eigenvalue: self.min_eigenvalue(),
            });
        }
        Ok(self.apply_spectrum(|l| 1.0 / l, b))
    }
}

/// Eigenvalues (ascending) and orthogonal eigenvectors of a symmetric matrix.
pub fn sym_eig(a: &Matrix) -> Result<(Vector, Matrix)> {
    let e = SymEigen::new(a)?;
    Ok((e.values, e.vectors))
}

/// `e^{-a t}` for symmetric `a` and `t >= 0`.
pub fn sym_expm_neg(a: &Matrix, t: f64) -> Result<Matrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(SymEigen::new(a)?.expm_neg(t))
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &Vector) -> Result<Vector> {
    let sym = symmetrized(a)?;
    if b.len() != sym.nrows() {
        return Err(Error::Shape(format!(
            "right-hand side has length {}, matrix is {}x{}",
            b.len(),
            sym.nrows(),
            sym.ncols()
        )));
    }
    let min_eigenvalue = SymEigen::new(&sym)?.min_eigenvalue();
    if min_eigenvalue <= PD_TOL {
        return Err(Error::Singular { min_eigenvalue });
    }
    let chol = sym
        .cholesky()
        .ok_or(Error::Singular { min_eigenvalue })?;
    Ok(chol.solve(b))
}

pub fn is_pd(a: &Matrix) -> Result<bool> {
    Ok(SymEigen::new(a)?.is_pd())
}
