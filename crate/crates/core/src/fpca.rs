//! Private functional PCA and its utility metrics.

use nalgebra::{DMatrix, DVector};

use crate::bingham::{build_bingham_parameter, run_chain, ChainOutput, ChainSchedule, StiefelPoint};
use crate::covariance::CovarianceOperator;
use crate::error::{Error, Result};
use crate::hilbert::{project, reconstruct, BasisSet, CoefMatrix, Curve, Dataset};
use crate::linalg::{max_asymmetry, orthonormalize_columns, sorted_sym_eigen};
use crate::mechanism::{check_unit_ball, Objective, BALL_TOL};

pub const PROJECTION_TOL: f64 = 1e-8;
pub const TRACE_TOL: f64 = 1e-6;
/// Eigenvalue gap below which the top-`k` subspace is reported non-unique.
pub const TIE_TOL: f64 = 1e-10;
/// Sensitivity of `Σ‖PX_i‖²` on records in the unit ball.
pub const FPCA_SENSITIVITY: f64 = 1.0;

/// Orthogonal projection of rank `k` in coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    p: DMatrix<f64>,
    rank: usize,
}

impl ProjectionOperator {
    pub fn new(p: DMatrix<f64>, rank: usize) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::Mismatch(format!("projection must be square, got {:?}", p.shape())));
        }
        if max_asymmetry(&p) > PROJECTION_TOL {
            return Err(Error::InvalidArgument("projection is not symmetric".into()));
        }
        if (&p * &p - &p).amax() > PROJECTION_TOL {
            return Err(Error::InvalidArgument("projection is not idempotent".into()));
        }
        if (p.trace() - rank as f64).abs() > TRACE_TOL {
            return Err(Error::InvalidArgument(format!("trace {} differs from rank {rank}", p.trace())));
        }
        Ok(Self { p, rank })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
}

/// `P = VVᵀ`.
pub fn projection_from_span(v: &StiefelPoint) -> ProjectionOperator {
    let m = v.matrix();
    ProjectionOperator { p: m * m.transpose(), rank: v.k() }
}

/// Projection onto the span of arbitrary columns; the flag is set when the
/// columns had to be re-orthonormalized first.
pub fn projection_from_columns(v: &DMatrix<f64>) -> (ProjectionOperator, bool) {
    let defect = crate::linalg::orthonormality_defect(v);
    if defect <= crate::bingham::STIEFEL_TOL {
        return (ProjectionOperator { p: v * v.transpose(), rank: v.ncols() }, false);
    }
    let (q, _) = orthonormalize_columns(v);
    (ProjectionOperator { p: &q * q.transpose(), rank: q.ncols() }, true)
}

/// `ξ_X(P) = Σ_i ‖P x_i‖²` over coefficient records, with `Δ_ξ = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FpcaObjective;

impl Objective for FpcaObjective {
    type Candidate = ProjectionOperator;

    fn name(&self) -> &str {
        "fpca"
    }

    fn utility(&self, records: &DMatrix<f64>, p: &ProjectionOperator) -> Result<f64> {
        if records.ncols() != p.dim() {
            return Err(Error::Mismatch(format!("records in dimension {}, projection {}", records.ncols(), p.dim())));
        }
        check_unit_ball(records)?;
        Ok((records * &p.p).norm_squared())
    }

    fn sensitivity(&self) -> f64 {
        FPCA_SENSITIVITY
    }

    fn in_support(&self, _: &ProjectionOperator) -> bool {
        true
    }
}

/// `tr(P XᵀX P) = Σ_i ‖P x_i‖²`. Rejects records outside the unit ball.
pub fn fpca_objective(coefs: &CoefMatrix, p: &ProjectionOperator) -> Result<f64> {
    FpcaObjective.utility(&coefs.entries, p)
}

/// Top-`k` eigenprojection of `XᵀX`.
#[derive(Debug, Clone)]
pub struct NonPrivateFpca {
    pub projection: ProjectionOperator,
    /// `m × k`, sign-fixed eigenvectors.
    pub components: DMatrix<f64>,
    /// All eigenvalues of `XᵀX`, non-increasing.
    pub eigenvalues: DVector<f64>,
    /// The `k`-th and `(k+1)`-th eigenvalues tie within [`TIE_TOL`].
    pub non_unique: bool,
}

impl NonPrivateFpca {
    /// Fraction of total variation captured by the first `j` components.
    pub fn cumulative_variation(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().map(|l| l.max(0.0)).sum();
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|l| {
                acc += l.max(0.0);
                if total > 0.0 {
                    acc / total
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn nonprivate_fpca(coefs: &CoefMatrix, k: usize) -> Result<NonPrivateFpca> {
    let (n, m) = (coefs.n(), coefs.m());
    if k == 0 || k > n.min(m) {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= min(n, m) = {}, got {k}", n.min(m))));
    }
    let eig = sorted_sym_eigen(&coefs.scatter(), TIE_TOL);
    let components = eig.vectors.columns(0, k).into_owned();
    let non_unique = k < m && (eig.values[k - 1] - eig.values[k]).abs() <= TIE_TOL;
    let projection = ProjectionOperator { p: &components * components.transpose(), rank: k };
    Ok(NonPrivateFpca { projection, components, eigenvalues: eig.values, non_unique })
}

fn check_ranks(a: &ProjectionOperator, b: &ProjectionOperator) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Mismatch(format!("projections of size {} and {}", a.dim(), b.dim())));
    }
    if a.rank != b.rank {
        return Err(Error::Mismatch(format!("projection ranks {} and {}", a.rank, b.rank)));
    }
    Ok(())
}

/// `‖X P X ᵀ‖²_F` with records as rows, i.e. `Σ_{i,j} ⟨Px_i, Px_j⟩²`.
fn gram_energy(scatter: &DMatrix<f64>, p: &ProjectionOperator) -> f64 {
    (&p.p * scatter * &p.p).norm_squared()
}

/// `‖X_cᵀ P̃ X_c‖²_F / ‖X_cᵀ P̂ X_c‖²_F` with `X_c` the `m × n` column-records
/// layout. Lies in `[0, 1]` when `P̂` is the non-private optimum.
pub fn variance_ratio(coefs: &CoefMatrix, p_tilde: &ProjectionOperator, p_hat: &ProjectionOperator) -> Result<f64> {
    check_ranks(p_tilde, p_hat)?;
    if coefs.m() != p_hat.dim() {
        return Err(Error::Mismatch(format!("coefficients have {} columns, projections are {}", coefs.m(), p_hat.dim())));
    }
    let scatter = coefs.scatter();
    let den = gram_energy(&scatter, p_hat);
    if !(den > 0.0) {
        return Err(Error::Data("variance ratio undefined: the optimal projection captures nothing".into()));
    }
    Ok(gram_energy(&scatter, p_tilde) / den)
}

/// `Σ‖P̃x_i‖² / Σ‖P̂x_i‖²`, the share of explained variation.
pub fn variance_explained_ratio(
    coefs: &CoefMatrix,
    p_tilde: &ProjectionOperator,
    p_hat: &ProjectionOperator,
) -> Result<f64> {
    check_ranks(p_tilde, p_hat)?;
    let num = (&coefs.entries * &p_tilde.p).norm_squared();
    let den = (&coefs.entries * &p_hat.p).norm_squared();
    if !(den > 0.0) {
        return Err(Error::Data("variance ratio undefined for all-zero data".into()));
    }
    Ok(num / den)
}

/// `½‖P̃ − P̂‖²_F`, equal to `k − tr(P̃P̂)`.
pub fn subspace_norm(p_tilde: &ProjectionOperator, p_hat: &ProjectionOperator) -> Result<f64> {
    check_ranks(p_tilde, p_hat)?;
    Ok(0.5 * (&p_tilde.p - &p_hat.p).norm_squared())
}

/// Utility of one private release. Computed from the raw data, so the
/// report itself is not private.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct UtilityReport {
    pub n: usize,
    pub epsilon: f64,
    pub k: usize,
    pub m: usize,
    pub replicate: usize,
    pub variance_ratio: f64,
    pub subspace_norm: f64,
    pub seed: u64,
}

impl UtilityReport {
    pub const CSV_HEADER: &'static str = "n,epsilon,k,m,replicate,variance_ratio,subspace_norm,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n, self.epsilon, self.k, self.m, self.replicate, self.variance_ratio, self.subspace_norm, self.seed
        )
    }
}

/// Settings of one private FPCA release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivateFpcaConfig {
    pub k: usize,
    pub epsilon: f64,
    pub schedule: ChainSchedule,
    pub seed: u64,
    pub stream_id: u64,
    pub replicate: usize,
}

#[derive(Debug, Clone)]
pub struct PrivateFpca {
    /// The private release in coefficient space.
    pub v: StiefelPoint,
    pub projection: ProjectionOperator,
    /// Reconstructed component curves, one per column of `v`.
    pub components: Vec<Curve>,
    pub report: UtilityReport,
    pub nonprivate: NonPrivateFpca,
    pub coefs: CoefMatrix,
    pub chain: ChainOutput,
}

/// Projects the data, runs the Bingham chain with
/// `A = (ε/2)(XᵀX − Σ⁻¹)` and scores the final state against the
/// non-private optimum.
pub fn private_fpca(
    d: &Dataset,
    basis: &BasisSet,
    sigma: &CovarianceOperator,
    cfg: &PrivateFpcaConfig,
) -> Result<PrivateFpca> {
    let n = d.len();
    if cfg.k == 0 || cfg.k >= n {
        return Err(Error::InvalidArgument(format!("need 1 <= k < n = {n}, got {}", cfg.k)));
    }
    if cfg.k > basis.len() {
        return Err(Error::InvalidArgument(format!("k = {} exceeds basis size {}", cfg.k, basis.len())));
    }
    for (i, norm) in d.norms().into_iter().enumerate() {
        if !(norm <= 1.0 + BALL_TOL) {
            return Err(Error::Unclipped { index: i, norm });
        }
    }
    let (coefs, _) = project(d, basis)?;
    let param = build_bingham_parameter(&coefs, sigma, cfg.epsilon, cfg.k)?;
    let chain = run_chain(&param, cfg.schedule, cfg.seed, cfg.stream_id)?;
    let v = chain.final_point.clone();
    let projection = projection_from_span(&v);
    let nonprivate = nonprivate_fpca(&coefs, cfg.k)?;
    let report = UtilityReport {
        n,
        epsilon: cfg.epsilon,
        k: cfg.k,
        m: basis.len(),
        replicate: cfg.replicate,
        variance_ratio: variance_ratio(&coefs, &projection, &nonprivate.projection)?,
        subspace_norm: subspace_norm(&projection, &nonprivate.projection)?,
        seed: cfg.seed,
    };
    let components = (0..cfg.k)
        .map(|j| reconstruct(v.matrix().column(j).as_slice(), basis))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrivateFpca { v, projection, components, report, nonprivate, coefs, chain })
}
