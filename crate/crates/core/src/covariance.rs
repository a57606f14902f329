//! Covariance operators of the Gaussian base measure in basis coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{gaussian_kernel, BasisSet};
use crate::linalg::{max_asymmetry, sorted_sym_eigen, symmetrize};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const DEFAULT_FLOOR_RATIO: f64 = 1e-10;

/// Symmetric positive-definite `m × m` matrix `Σ_ij = ⟨b_i, Σ b_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceOperator {
    matrix: DMatrix<f64>,
    trace: f64,
    /// Set when construction had to floor non-positive eigenvalues.
    pub floored: bool,
}

impl CovarianceOperator {
    /// Validates symmetry (1e-12 per entry) and positive definiteness.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Mismatch(format!("covariance must be square, got {:?}", matrix.shape())));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let asym = max_asymmetry(&matrix);
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidArgument(format!("covariance not symmetric (deviation {asym:.3e})")));
        }
        let min = sorted_sym_eigen(&matrix, 0.0).values.min();
        if !(min > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "covariance not positive definite (smallest eigenvalue {min:.3e})"
            )));
        }
        let trace = matrix.trace();
        Ok(Self { matrix, trace, floored: false })
    }

    /// Symmetrizes, floors eigenvalues below `floor_ratio · λ_max`, and flags
    /// the result if the floor changed anything.
    pub fn from_matrix_floored(matrix: DMatrix<f64>, floor_ratio: f64) -> Result<Self> {
        let sym = symmetrize(&matrix);
        let eig = sorted_sym_eigen(&sym, 0.0);
        let lmax = eig.values[0];
        if !(lmax > 0.0) {
            return Err(Error::Numerical("covariance has no positive eigenvalue".into()));
        }
        let floor = floor_ratio * lmax;
        if eig.values.iter().all(|&l| l >= floor) {
            let trace = sym.trace();
            return Ok(Self { matrix: sym, trace, floored: false });
        }
        let floored_vals = eig.values.map(|l| l.max(floor));
        let rebuilt = &eig.vectors * DMatrix::from_diagonal(&floored_vals) * eig.vectors.transpose();
        let rebuilt = symmetrize(&rebuilt);
        let trace = rebuilt.trace();
        Ok(Self { matrix: rebuilt, trace, floored: true })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// Eigenvalues in non-increasing order.
    pub fn eigenvalues(&self) -> DVector<f64> {
        sorted_sym_eigen(&self.matrix, 0.0).values
    }

    pub fn identity(m: usize) -> Self {
        Self { matrix: DMatrix::identity(m, m), trace: m as f64, floored: false }
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn is_diagonal(&self) -> bool {
        let m = self.dim();
        (0..m).all(|i| (0..m).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }
}

/// `diag(1^{-α}, 2^{-α}, …, m^{-α})`.
pub fn power_law_sigma(m: usize, exponent: f64) -> Result<CovarianceOperator> {
    if m == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(Error::InvalidArgument(format!("exponent must be positive, got {exponent}")));
    }
    let diag: Vec<f64> = (1..=m).map(|i| (i as f64).powf(-exponent)).collect();
    CovarianceOperator::diagonal(&diag)
}

/// `Σ_ij = ∬ b_i(s) K(s,t) b_j(t)` by double quadrature with the Gaussian
/// kernel, symmetrized and eigenvalue-floored at [`DEFAULT_FLOOR_RATIO`].
pub fn sigma_from_kernel(basis: &BasisSet, bandwidth: f64) -> Result<CovarianceOperator> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let grid = basis.grid();
    let pts = grid.points();
    let w = grid.weights();
    let g = pts.len();
    let m = basis.len();
    // B is G×m with weighted basis values; Σ = Bᵀ K B.
    let b = DMatrix::from_fn(g, m, |k, j| w[k] * basis.function(j)[k]);
    let kern = DMatrix::from_fn(g, g, |s, t| gaussian_kernel(pts[s], pts[t], bandwidth));
    let sigma = b.transpose() * kern * &b;
    CovarianceOperator::from_matrix_floored(sigma, DEFAULT_FLOOR_RATIO)
}

/// Inverse with eigenvalues floored at `floor_ratio · λ_max`.
#[derive(Debug, Clone)]
pub struct FlooredInverse {
    pub matrix: DMatrix<f64>,
    /// How many eigenvalues were raised to the floor.
    pub floored_count: usize,
}

pub fn inverse_with_floor(s: &CovarianceOperator, floor_ratio: f64) -> FlooredInverse {
    if s.is_diagonal() {
        let d = s.matrix.diagonal();
        let lmax = d.max();
        let floor = floor_ratio * lmax;
        let floored_count = d.iter().filter(|&&l| l < floor).count();
        let inv = d.map(|l| 1.0 / l.max(floor));
        return FlooredInverse { matrix: DMatrix::from_diagonal(&inv), floored_count };
    }
    let eig = sorted_sym_eigen(&s.matrix, 0.0);
    let lmax = eig.values[0];
    let floor = floor_ratio * lmax;
    let floored_count = eig.values.iter().filter(|&&l| l < floor).count();
    let inv = eig.values.map(|l| 1.0 / l.max(floor));
    let matrix = symmetrize(&(&eig.vectors * DMatrix::from_diagonal(&inv) * eig.vectors.transpose()));
    FlooredInverse { matrix, floored_count }
}

/// `λ_i(Σ) / λ_i(C)` with both spectra sorted decreasingly. Bounded ratios
/// indicate that the base measure `C` is rougher than `Σ`.
pub fn base_roughness_ratios(sigma: &CovarianceOperator, base: &CovarianceOperator) -> Result<Vec<f64>> {
    if sigma.dim() != base.dim() {
        return Err(Error::Mismatch(format!("{} vs {}", sigma.dim(), base.dim())));
    }
    let a = sigma.eigenvalues();
    let b = base.eigenvalues();
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x / y).collect())
}
