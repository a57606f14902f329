//! Discretized Hilbert-space machinery.
//!
//! Curves live on a shared [`Grid`] carrying quadrature weights; the inner
//! product is the weighted sum `Σ_k w_k f(t_k) g(t_k)`. Orthonormal bases map
//! curves to coefficient space ([`CoefMatrix`]) and back.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{fix_sign, sorted_sym_eigen};

/// Slack used by [`clip_to_unit_ball`] so clipped norms are strictly below one.
pub const CLIP_MARGIN: f64 = 1e-9;

/// Entrywise tolerance of the basis Gram-identity check.
pub const GRAM_TOL: f64 = 1e-6;

/// Observation abscissae with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Trapezoid-rule grid on the given strictly increasing points.
    pub fn trapezoid(points: Vec<f64>) -> Result<Self> {
        let g = points.len();
        if g < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {g}")));
        }
        check_increasing(&points)?;
        let mut weights = vec![0.0; g];
        weights[0] = 0.5 * (points[1] - points[0]);
        weights[g - 1] = 0.5 * (points[g - 1] - points[g - 2]);
        for k in 1..g - 1 {
            weights[k] = 0.5 * (points[k + 1] - points[k - 1]);
        }
        Ok(Self { points, weights })
    }

    /// `g` evenly spaced points on `[0, 1]`, endpoints included, trapezoid weights.
    pub fn uniform(g: usize) -> Result<Self> {
        if g < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {g}")));
        }
        let step = 1.0 / (g - 1) as f64;
        let mut points: Vec<f64> = (0..g).map(|k| k as f64 * step).collect();
        points[g - 1] = 1.0;
        Self::trapezoid(points)
    }

    /// Periodic rectangle rule: points `k/g` for `k = 0..g` with weights `1/g`.
    /// Exact for trigonometric polynomials of degree below `g`.
    pub fn periodic(g: usize) -> Result<Self> {
        if g < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {g}")));
        }
        let points = (0..g).map(|k| k as f64 / g as f64).collect();
        Self::with_weights(points, vec![1.0 / g as f64; g])
    }

    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Mismatch(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.len() < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
        }
        check_increasing(&points)?;
        if let Some(k) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(format!("weight {k} is not positive")));
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest gap between consecutive points.
    pub fn min_spacing(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn span(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }
}

fn check_increasing(points: &[f64]) -> Result<()> {
    if let Some(k) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid point {k} is not finite")));
    }
    if let Some(k) = points.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "grid not strictly increasing at index {}",
            k + 1
        )));
    }
    Ok(())
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// A function observed on a grid.
#[derive(Debug, Clone)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "curve has {} values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("curve value {k} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        inner_product(self, self).map(f64::sqrt).unwrap_or(0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sup_distance(&self, other: &Curve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Quadrature inner product `Σ_k w_k f(t_k) g(t_k)`.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    if !same_grid(&f.grid, &g.grid) {
        return Err(Error::GridMismatch);
    }
    Ok(f
        .grid
        .weights()
        .iter()
        .zip(f.values.iter().zip(&g.values))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}

/// A sample of curves on one grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    grid: Arc<Grid>,
    curves: Vec<Curve>,
}

impl Dataset {
    pub fn new(grid: Arc<Grid>, curves: Vec<Curve>) -> Result<Self> {
        if curves.iter().any(|c| !same_grid(&c.grid, &grid)) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, curves })
    }

    /// Builds a dataset from rows of values sampled on `grid`.
    pub fn from_rows(grid: Arc<Grid>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let curves = rows
            .into_iter()
            .map(|r| Curve::new(grid.clone(), r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, curves })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.curves.iter().map(Curve::norm).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().into_iter().fold(0.0, f64::max)
    }

    /// Copy with record `index` replaced.
    pub fn with_record(&self, index: usize, record: Curve) -> Result<Self> {
        if index >= self.curves.len() {
            return Err(Error::InvalidArgument(format!(
                "record {index} out of range for {} records",
                self.curves.len()
            )));
        }
        if !same_grid(&record.grid, &self.grid) {
            return Err(Error::GridMismatch);
        }
        let mut curves = self.curves.clone();
        curves[index] = record;
        Ok(Self { grid: self.grid.clone(), curves })
    }

    /// Subtracts the pointwise sample mean from every curve.
    pub fn centered(&self) -> Self {
        let g = self.grid.len();
        let n = self.curves.len().max(1) as f64;
        let mut mean = vec![0.0; g];
        for c in &self.curves {
            for (m, v) in mean.iter_mut().zip(&c.values) {
                *m += v / n;
            }
        }
        let curves = self
            .curves
            .iter()
            .map(|c| Curve {
                grid: self.grid.clone(),
                values: c.values.iter().zip(&mean).map(|(v, m)| v - m).collect(),
            })
            .collect();
        Self { grid: self.grid.clone(), curves }
    }
}

/// How curves are brought into the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Each record is shrunk independently; records already inside the ball are untouched.
    #[default]
    PerRecord,
    /// All records divided by `(1+η)·max_i ‖X_i‖`.
    ///
    /// The scale depends on every record, so this mode is not a per-record
    /// transformation and only matches simulation protocols that rescale
    /// the whole sample.
    Global,
}

/// Rescales curves so every norm is strictly below one.
pub fn clip_to_unit_ball(d: &Dataset, mode: ClipMode) -> Result<Dataset> {
    if d.is_empty() {
        return Err(Error::InvalidArgument("cannot clip an empty dataset".into()));
    }
    let curves = match mode {
        ClipMode::PerRecord => d
            .curves
            .iter()
            .map(|c| {
                let norm = c.norm();
                let factor = (norm / (1.0 - CLIP_MARGIN)).max(1.0);
                if factor > 1.0 {
                    c.scaled(1.0 / factor)
                } else {
                    c.clone()
                }
            })
            .collect(),
        ClipMode::Global => {
            let max = d.max_norm();
            if max == 0.0 {
                d.curves.clone()
            } else {
                let s = 1.0 / ((1.0 + CLIP_MARGIN) * max);
                d.curves.iter().map(|c| c.scaled(s)).collect()
            }
        }
    };
    Ok(Dataset { grid: d.grid.clone(), curves })
}

/// Orthonormal functions evaluated on a grid.
#[derive(Debug, Clone)]
pub struct BasisSet {
    grid: Arc<Grid>,
    functions: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl BasisSet {
    /// Validates the Gram-identity invariant to [`GRAM_TOL`].
    pub fn new(grid: Arc<Grid>, functions: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::InvalidArgument("basis needs at least one function".into()));
        }
        if labels.len() != functions.len() {
            return Err(Error::Mismatch("one label per basis function required".into()));
        }
        if functions.iter().any(|f| f.len() != grid.len()) {
            return Err(Error::Mismatch("basis function length differs from grid".into()));
        }
        let basis = Self { grid, functions, labels };
        let defect = basis.gram_defect();
        if !(defect <= GRAM_TOL) {
            return Err(Error::Numerical(format!(
                "basis is not orthonormal on this grid (max Gram deviation {defect:.3e})"
            )));
        }
        Ok(basis)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn function(&self, j: usize) -> &[f64] {
        &self.functions[j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn curve(&self, j: usize) -> Curve {
        Curve { grid: self.grid.clone(), values: self.functions[j].clone() }
    }

    /// First `m` functions.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(Error::InvalidArgument(format!("cannot keep {m} of {} functions", self.len())));
        }
        Ok(Self {
            grid: self.grid.clone(),
            functions: self.functions[..m].to_vec(),
            labels: self.labels[..m].to_vec(),
        })
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        let m = self.len();
        DMatrix::from_fn(m, m, |i, j| {
            w.iter()
                .zip(self.functions[i].iter().zip(&self.functions[j]))
                .map(|(w, (a, b))| w * a * b)
                .sum()
        })
    }

    /// `max |G − I|` over Gram entries.
    pub fn gram_defect(&self) -> f64 {
        let g = self.gram();
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let t = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - t).abs());
            }
        }
        worst
    }

    /// Largest absolute off-diagonal Gram entry.
    pub fn max_offdiag_gram(&self) -> f64 {
        let g = self.gram();
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                if i != j {
                    worst = worst.max(g[(i, j)].abs());
                }
            }
        }
        worst
    }
}

/// Fourier system `1, √2 sin(2πjt), √2 cos(2πjt), …` truncated to `m` functions.
pub fn fourier_basis(m: usize, grid: Arc<Grid>) -> Result<BasisSet> {
    if m == 0 {
        return Err(Error::InvalidArgument("basis size must be positive".into()));
    }
    if m > grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{m} basis functions exceed {} grid points",
            grid.len()
        )));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut functions = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for idx in 1..=m {
        let pts = grid.points();
        if idx == 1 {
            functions.push(vec![1.0; pts.len()]);
            labels.push("const".to_string());
        } else {
            let freq = (idx / 2) as f64;
            if idx % 2 == 0 {
                functions.push(pts.iter().map(|t| sqrt2 * (two_pi * freq * t).sin()).collect());
                labels.push(format!("sin{}", idx / 2));
            } else {
                functions.push(pts.iter().map(|t| sqrt2 * (two_pi * freq * t).cos()).collect());
                labels.push(format!("cos{}", idx / 2));
            }
        }
    }
    BasisSet::new(grid, functions, labels)
}

/// Spectral decomposition of the Gaussian kernel integral operator on a grid.
#[derive(Debug, Clone)]
pub struct KernelEigenbasis {
    /// The leading `m_selected` eigenfunctions.
    pub basis: BasisSet,
    /// All eigenvalues in non-increasing order, floored at zero.
    pub eigenvalues: Vec<f64>,
    /// Smallest `m` whose cumulative eigenvalue fraction exceeds the threshold.
    pub m_selected: usize,
    /// True if any raw eigenvalue was negative and floored.
    pub floored: bool,
    pub bandwidth: f64,
    all_functions: Vec<Vec<f64>>,
}

impl KernelEigenbasis {
    /// Leading `m` eigenfunctions as a basis, ignoring the variance threshold.
    pub fn basis_of_size(&self, m: usize) -> Result<BasisSet> {
        if m == 0 || m > self.all_functions.len() {
            return Err(Error::InvalidArgument(format!("cannot take {m} eigenfunctions")));
        }
        BasisSet::new(
            self.basis.grid.clone(),
            self.all_functions[..m].to_vec(),
            (1..=m).map(|j| format!("eig{j}")).collect(),
        )
    }
}

pub fn gaussian_kernel(s: f64, t: f64, bandwidth: f64) -> f64 {
    let d = (s - t) / bandwidth;
    (-d * d).exp()
}

/// Smallest `m` with `Σ_{j≤m} λ_j / Σ λ_j > threshold`.
pub fn components_for_variance(eigenvalues: &[f64], threshold: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return eigenvalues.len();
    }
    let mut acc = 0.0;
    for (j, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc / total > threshold {
            return j + 1;
        }
    }
    eigenvalues.len()
}

fn kernel_spectrum(grid: &Grid, bandwidth: f64) -> (Vec<f64>, DMatrix<f64>, bool) {
    let pts = grid.points();
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let g = pts.len();
    let k = DMatrix::from_fn(g, g, |i, j| sw[i] * gaussian_kernel(pts[i], pts[j], bandwidth) * sw[j]);
    let eig = sorted_sym_eigen(&k, 0.0);
    let floored = eig.values.iter().any(|&l| l < 0.0);
    let values = eig.values.iter().map(|&l| l.max(0.0)).collect();
    (values, eig.vectors, floored)
}

/// Eigendecomposes `K(s,t) = exp(−(s−t)²/h²)` under the quadrature inner
/// product. Eigenfunctions are sign-fixed so their first value of magnitude
/// above 1e-8 is positive.
pub fn gaussian_kernel_eigenbasis(
    grid: Arc<Grid>,
    bandwidth: f64,
    var_threshold: f64,
) -> Result<KernelEigenbasis> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if !(var_threshold > 0.0 && var_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance threshold must lie in (0,1), got {var_threshold}"
        )));
    }
    let (eigenvalues, vectors, floored) = kernel_spectrum(&grid, bandwidth);
    let g = grid.len();
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let all_functions: Vec<Vec<f64>> = (0..g)
        .map(|j| {
            let mut f: Vec<f64> = (0..g).map(|i| vectors[(i, j)] / sw[i]).collect();
            fix_sign(&mut f);
            f
        })
        .collect();
    let m_selected = components_for_variance(&eigenvalues, var_threshold);
    let basis = BasisSet::new(
        grid.clone(),
        all_functions[..m_selected].to_vec(),
        (1..=m_selected).map(|j| format!("eig{j}")).collect(),
    )?;
    Ok(KernelEigenbasis { basis, eigenvalues, m_selected, floored, bandwidth, all_functions })
}

const BANDWIDTH_BISECTION_STEPS: usize = 60;

/// Finds a Gaussian-kernel bandwidth whose spectrum needs exactly
/// `target_m` eigenvalues to exceed `var_threshold` of the total.
///
/// Bisects over `[min grid spacing, grid span]` for the two bandwidths where
/// the selected count drops to `target_m` and to `target_m − 1`, and returns
/// the midpoint of that band.
pub fn bandwidth_for_components(grid: &Grid, target_m: usize, var_threshold: f64) -> Result<f64> {
    if target_m == 0 {
        return Err(Error::InvalidArgument("target component count must be positive".into()));
    }
    let count = |h: f64| components_for_variance(&kernel_spectrum(grid, h).0, var_threshold);
    let (lo0, hi0) = (grid.min_spacing(), grid.span());
    if count(hi0) > target_m {
        return Err(Error::Numerical(format!(
            "even bandwidth {hi0} needs more than {target_m} components"
        )));
    }
    if count(lo0) <= target_m {
        return Err(Error::Numerical(format!(
            "bandwidth {lo0} already needs at most {target_m} components"
        )));
    }
    // smallest h with count(h) <= target
    let boundary = |limit: usize, mut lo: f64, mut hi: f64| {
        for _ in 0..BANDWIDTH_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if count(mid) <= limit {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let enter = boundary(target_m, lo0, hi0);
    let leave = if target_m > 1 && count(hi0) < target_m {
        boundary(target_m - 1, enter, hi0)
    } else {
        hi0
    };
    let h = 0.5 * (enter + leave);
    if count(h) != target_m {
        return Err(Error::Numerical(format!(
            "no bandwidth yields exactly {target_m} components at threshold {var_threshold}"
        )));
    }
    Ok(h)
}

/// Basis coefficients `X_ij = ⟨X_i, b_j⟩`, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefMatrix {
    pub entries: DMatrix<f64>,
}

impl CoefMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("coefficient matrix has non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    /// Number of records.
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Basis size.
    pub fn m(&self) -> usize {
        self.entries.ncols()
    }

    /// `XᵀX`, the `m × m` scatter matrix.
    pub fn scatter(&self) -> DMatrix<f64> {
        self.entries.transpose() * &self.entries
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.norm()).collect()
    }
}

/// Projects every curve onto `basis`, returning coefficients and the
/// per-curve residual norms `‖X_i − Σ_j X_ij b_j‖`.
pub fn project(d: &Dataset, basis: &BasisSet) -> Result<(CoefMatrix, Vec<f64>)> {
    if !same_grid(&d.grid, &basis.grid) {
        return Err(Error::GridMismatch);
    }
    let n = d.len();
    let m = basis.len();
    let w = d.grid.weights();
    let mut entries = DMatrix::zeros(n, m);
    let mut residuals = Vec::with_capacity(n);
    for (i, c) in d.curves.iter().enumerate() {
        let mut resid = c.values.clone();
        for j in 0..m {
            let b = &basis.functions[j];
            let x: f64 = w.iter().zip(c.values.iter().zip(b)).map(|(w, (a, b))| w * a * b).sum();
            entries[(i, j)] = x;
            resid.iter_mut().zip(b).for_each(|(r, b)| *r -= x * b);
        }
        let r2: f64 = w.iter().zip(&resid).map(|(w, r)| w * r * r).sum();
        residuals.push(r2.max(0.0).sqrt());
    }
    Ok((CoefMatrix::new(entries)?, residuals))
}

/// Pointwise `Σ_j c_j b_j(t_k)`.
pub fn reconstruct(coefs: &[f64], basis: &BasisSet) -> Result<Curve> {
    if coefs.len() != basis.len() {
        return Err(Error::Mismatch(format!(
            "{} coefficients for a basis of {}",
            coefs.len(),
            basis.len()
        )));
    }
    let mut values = vec![0.0; basis.grid.len()];
    for (c, b) in coefs.iter().zip(&basis.functions) {
        values.iter_mut().zip(b).for_each(|(v, b)| *v += c * b);
    }
    Curve::new(basis.grid.clone(), values)
}
