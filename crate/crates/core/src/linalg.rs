//! Dense linear-algebra helpers shared by the numerical modules.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Magnitude below which a coordinate is treated as zero when fixing signs.
pub const SIGN_EPS: f64 = 1e-8;

/// Flips `v` so that its first coordinate with magnitude above [`SIGN_EPS`] is positive.
pub fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > SIGN_EPS) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn first_significant(v: &[f64]) -> usize {
    v.iter().position(|x| x.abs() > SIGN_EPS).unwrap_or(v.len())
}

/// Symmetric eigendecomposition with a canonical ordering.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    /// Eigenvalues, non-increasing.
    pub values: DVector<f64>,
    /// Eigenvectors as columns, aligned with `values`, sign-fixed.
    pub vectors: DMatrix<f64>,
}

/// Eigendecomposes `(m + mᵀ)/2`, sorts eigenvalues in decreasing order and
/// sign-fixes every eigenvector. Eigenvalues equal within `tie_tol` are
/// ordered by the index of their eigenvector's first significant coordinate.
pub fn sorted_sym_eigen(m: &DMatrix<f64>, tie_tol: f64) -> SortedEigen {
    let sym = symmetrize(m);
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| {
            let mut col: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            fix_sign(&mut col);
            (eig.eigenvalues[j], col)
        })
        .collect();
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= tie_tol {
            first_significant(&a.1)
                .cmp(&first_significant(&b.1))
                .then_with(|| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal))
        } else {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal)
        }
    });
    let values = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let vectors = DMatrix::from_fn(n, n, |i, j| pairs[j].1[i]);
    SortedEigen { values, vectors }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `max |VᵀV − I|` over entries.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Orthogonalizes `x` against the orthonormal columns in `basis` (two passes)
/// and normalizes. Returns `None` if the residual is numerically zero.
fn orthogonalize_against(x: &mut DVector<f64>, basis: &[DVector<f64>]) -> Option<()> {
    let start = x.norm();
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(x);
            x.axpy(-c, q, 1.0);
        }
    }
    let r = x.norm();
    if r <= 1e-10 * start.max(1e-300) || r == 0.0 {
        return None;
    }
    *x /= r;
    Some(())
}

/// Modified Gram–Schmidt on the columns of `v`. Columns that collapse are
/// replaced by standard basis vectors; the returned flag reports this.
pub fn orthonormalize_columns(v: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (m, k) = v.shape();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut rebuilt = false;
    for j in 0..k {
        let mut x = v.column(j).into_owned();
        if orthogonalize_against(&mut x, &basis).is_none() {
            rebuilt = true;
            let mut found = false;
            for e in 0..m {
                let mut cand = DVector::zeros(m);
                cand[e] = 1.0;
                if orthogonalize_against(&mut cand, &basis).is_some() {
                    x = cand;
                    found = true;
                    break;
                }
            }
            assert!(found, "cannot extend {} orthonormal vectors in dimension {}", basis.len(), m);
        }
        basis.push(x);
    }
    (DMatrix::from_columns(&basis), rebuilt)
}

/// Orthonormal basis of the complement of every column of `v` except
/// `column`, with the current direction of `column` as its first vector.
/// The result is `m × (m − k + 1)`.
pub fn complement_basis(v: &DMatrix<f64>, column: usize) -> (DMatrix<f64>, bool) {
    let (m, k) = v.shape();
    let mut basis: Vec<DVector<f64>> = (0..k).filter(|&j| j != column).map(|j| v.column(j).into_owned()).collect();
    let others = basis.len();
    let mut rebuilt = false;
    let mut current = v.column(column).into_owned();
    if orthogonalize_against(&mut current, &basis).is_none() {
        rebuilt = true;
    } else {
        basis.push(current);
    }
    for e in 0..m {
        if basis.len() == m {
            break;
        }
        let mut cand = DVector::zeros(m);
        cand[e] = 1.0;
        if orthogonalize_against(&mut cand, &basis).is_some() {
            basis.push(cand);
        }
    }
    debug_assert_eq!(basis.len(), m);
    (DMatrix::from_columns(&basis[others..]), rebuilt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_eigen_orders_and_signs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 2.0]);
        let e = sorted_sym_eigen(&m, 1e-10);
        assert_eq!(e.values.as_slice(), &[5.0, 2.0, 2.0]);
        assert!((e.vectors[(1, 0)] - 1.0).abs() < 1e-12);
        // tie broken by first significant coordinate
        assert!((e.vectors[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((e.vectors[(2, 2)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let raw = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) as f64).sin() + ((i * j) as f64).sqrt());
        let (v, rebuilt) = orthonormalize_columns(&raw);
        assert!(!rebuilt);
        let (n, _) = complement_basis(&v, 1);
        assert_eq!(n.shape(), (6, 4));
        assert!(orthonormality_defect(&n) < 1e-12);
        for j in [0, 2] {
            assert!((n.transpose() * v.column(j)).amax() < 1e-12);
        }
        // first complement vector is the current column
        assert!((n.column(0) - v.column(1)).amax() < 1e-12);
    }

    #[test]
    fn orthonormalize_replaces_dependent_column() {
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let (v, rebuilt) = orthonormalize_columns(&raw);
        assert!(rebuilt);
        assert!(orthonormality_defect(&v) < 1e-12);
    }
}
