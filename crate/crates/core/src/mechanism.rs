//! The exponential mechanism over a generic objective.
//!
//! A mechanism run releases a draw from the density
//! `f_X(b) ∝ exp{(ε / 2Δ) ξ_X(b)}` relative to a base measure. This module
//! holds the objective contract, the unnormalized log-density, a
//! privacy-ratio verifier and an exact sampler for objectives that are
//! quadratic in the candidate.
//!
//! The ratio verifier works with unnormalized densities and therefore checks
//! `|log f̃_X(b) − log f̃_X'(b)| ≤ ε/2`. The normalizing constants account for
//! the other half of the budget, so passing this check is the exact
//! pointwise condition behind ε-DP, not a relaxation of it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{inverse_with_floor, CovarianceOperator, DEFAULT_FLOOR_RATIO};
use crate::error::{Error, Result};

/// Slack when checking records against the unit ball.
pub const BALL_TOL: f64 = 1e-12;

/// Where candidates may lie.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Everywhere,
    /// Closed unit ball `‖b‖ ≤ 1`.
    UnitBall,
}

/// Utility function `ξ_X(b)` with a uniform sensitivity bound.
///
/// Records are the rows of a matrix (points of `ℝᵈ` or basis coefficients).
pub trait Objective {
    type Candidate;

    fn name(&self) -> &str;

    /// `ξ_X(b)`. Fails on records that violate the objective's data
    /// constraints, since the sensitivity bound would not hold.
    fn utility(&self, records: &DMatrix<f64>, b: &Self::Candidate) -> Result<f64>;

    /// Claimed `Δ_ξ`, uniform over adjacent datasets and candidates.
    fn sensitivity(&self) -> f64;

    fn in_support(&self, b: &Self::Candidate) -> bool;
}

/// Privacy budget, sensitivity and seed of one mechanism run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismConfig {
    pub epsilon: f64,
    pub delta_sensitivity: f64,
    pub seed: u64,
}

impl MechanismConfig {
    pub fn new(epsilon: f64, delta_sensitivity: f64, seed: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta_sensitivity > 0.0 && delta_sensitivity.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sensitivity must be positive, got {delta_sensitivity}"
            )));
        }
        Ok(Self { epsilon, delta_sensitivity, seed })
    }

    /// Config using the objective's own sensitivity.
    pub fn for_objective<O: Objective + ?Sized>(obj: &O, epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(epsilon, obj.sensitivity(), seed)
    }

    /// `ε / 2Δ`.
    pub fn scale(&self) -> f64 {
        self.epsilon / (2.0 * self.delta_sensitivity)
    }
}

/// `(ε / 2Δ) ξ_X(b)`; the base-measure density is not included.
pub fn log_unnormalized_density<O: Objective + ?Sized>(
    obj: &O,
    cfg: &MechanismConfig,
    records: &DMatrix<f64>,
    b: &O::Candidate,
) -> Result<f64> {
    if cfg.delta_sensitivity < obj.sensitivity() {
        return Err(Error::InvalidArgument(format!(
            "configured sensitivity {} is below the objective's bound {}",
            cfg.delta_sensitivity,
            obj.sensitivity()
        )));
    }
    if !obj.in_support(b) {
        return Err(Error::OutsideSupport(format!("candidate outside the support of {}", obj.name())));
    }
    Ok(cfg.scale() * obj.utility(records, b)?)
}

/// Largest `|log f̃_X(b) − log f̃_X'(b)|` over `probes`, where `X'` is `X` with
/// record `index` replaced. For a valid sensitivity bound the result never
/// exceeds `ε/2`.
pub fn verify_dp_ratio<O: Objective + ?Sized>(
    obj: &O,
    cfg: &MechanismConfig,
    records: &DMatrix<f64>,
    index: usize,
    replacement: &DVector<f64>,
    probes: &[O::Candidate],
) -> Result<f64> {
    if index >= records.nrows() {
        return Err(Error::InvalidArgument(format!(
            "record {index} out of range for {} records",
            records.nrows()
        )));
    }
    if replacement.len() != records.ncols() {
        return Err(Error::Mismatch(format!(
            "replacement has {} coordinates, records have {}",
            replacement.len(),
            records.ncols()
        )));
    }
    let mut adjacent = records.clone();
    adjacent.set_row(index, &replacement.transpose());
    let mut worst = 0.0f64;
    for b in probes {
        let a = log_unnormalized_density(obj, cfg, records, b)?;
        let c = log_unnormalized_density(obj, cfg, &adjacent, b)?;
        worst = worst.max((a - c).abs());
    }
    Ok(worst)
}

pub(crate) fn check_unit_ball(records: &DMatrix<f64>) -> Result<()> {
    for (i, r) in records.row_iter().enumerate() {
        let norm = r.norm();
        if !(norm <= 1.0 + BALL_TOL) {
            return Err(Error::Unclipped { index: i, norm });
        }
    }
    Ok(())
}

/// Objectives of the form `ξ_X(b) = const + gᵀb − ½ bᵀHb` with `H` positive definite.
pub trait QuadraticObjective: Objective<Candidate = DVector<f64>> {
    /// `(H, g)` for the given records.
    fn quadratic_form(&self, records: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)>;

    fn support(&self) -> Support;

    /// Unconstrained maximizer `H⁻¹g`.
    fn maximizer(&self, records: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (h, g) = self.quadratic_form(records)?;
        h.cholesky()
            .map(|c| c.solve(&g))
            .ok_or_else(|| Error::Numerical("objective Hessian is not positive definite".into()))
    }
}

/// `ξ_X(b) = −Σ_i ‖X_i − b‖² − nλ⟨b, C⁻¹b⟩` on records in the unit ball.
///
/// Replacing one record changes `‖X_i − b‖²` by at most 4 for `‖b‖ ≤ 1`,
/// which is the sensitivity reported.
#[derive(Debug, Clone)]
pub struct PenalizedMean {
    lambda: f64,
    c_inv: DMatrix<f64>,
    support: Support,
}

pub const PENALIZED_MEAN_SENSITIVITY: f64 = 4.0;

pub fn penalized_mean_objective(lambda: f64, c: &CovarianceOperator) -> Result<PenalizedMean> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(PenalizedMean {
        lambda,
        c_inv: inverse_with_floor(c, DEFAULT_FLOOR_RATIO).matrix,
        support: Support::UnitBall,
    })
}

impl PenalizedMean {
    /// Drops the unit-ball restriction on candidates (records must still be clipped).
    pub fn unrestricted(mut self) -> Self {
        self.support = Support::Everywhere;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.c_inv.nrows()
    }
}

impl Objective for PenalizedMean {
    type Candidate = DVector<f64>;

    fn name(&self) -> &str {
        "penalized-mean"
    }

    fn utility(&self, records: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
        if records.ncols() != b.len() || b.len() != self.dim() {
            return Err(Error::Mismatch(format!(
                "records in dimension {}, candidate {}, penalty {}",
                records.ncols(),
                b.len(),
                self.dim()
            )));
        }
        check_unit_ball(records)?;
        let n = records.nrows() as f64;
        let fit: f64 = records.row_iter().map(|r| (r.transpose() - b).norm_squared()).sum();
        let penalty = n * self.lambda * b.dot(&(&self.c_inv * b));
        Ok(-fit - penalty)
    }

    fn sensitivity(&self) -> f64 {
        PENALIZED_MEAN_SENSITIVITY
    }

    fn in_support(&self, b: &DVector<f64>) -> bool {
        match self.support {
            Support::Everywhere => true,
            Support::UnitBall => b.norm() <= 1.0 + BALL_TOL,
        }
    }
}

impl QuadraticObjective for PenalizedMean {
    fn quadratic_form(&self, records: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if records.ncols() != self.dim() {
            return Err(Error::Mismatch(format!("records in dimension {}, penalty {}", records.ncols(), self.dim())));
        }
        check_unit_ball(records)?;
        let n = records.nrows() as f64;
        let d = self.dim();
        let h = (DMatrix::identity(d, d) + &self.c_inv * self.lambda) * (2.0 * n);
        let g = records.row_sum().transpose() * 2.0;
        Ok((h, g))
    }

    fn support(&self) -> Support {
        self.support
    }
}

/// Reference measure the mechanism density is taken against.
#[derive(Debug, Clone)]
pub enum BaseMeasure {
    /// Lebesgue measure (finite-dimensional only).
    Flat,
    /// Centered Gaussian with the given covariance.
    Gaussian(CovarianceOperator),
}

/// Exact Gaussian law of the mechanism for a quadratic objective, before any
/// truncation to the support.
#[derive(Debug, Clone)]
pub struct CompletedSquare {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

/// Completes the square in `exp{(ε/2Δ)(gᵀb − ½bᵀHb)} · base(b)`:
/// precision `Q = (ε/2Δ)H + C⁻¹`, mean `Q⁻¹ (ε/2Δ) g`.
pub fn complete_square<O: QuadraticObjective + ?Sized>(
    obj: &O,
    cfg: &MechanismConfig,
    base: &BaseMeasure,
    records: &DMatrix<f64>,
) -> Result<CompletedSquare> {
    if cfg.delta_sensitivity < obj.sensitivity() {
        return Err(Error::InvalidArgument(format!(
            "configured sensitivity {} is below the objective's bound {}",
            cfg.delta_sensitivity,
            obj.sensitivity()
        )));
    }
    let (h, g) = obj.quadratic_form(records)?;
    let s = cfg.scale();
    let mut precision = h * s;
    if let BaseMeasure::Gaussian(c) = base {
        if c.dim() != precision.nrows() {
            return Err(Error::Mismatch(format!("base dimension {} vs {}", c.dim(), precision.nrows())));
        }
        precision += inverse_with_floor(c, DEFAULT_FLOOR_RATIO).matrix;
    }
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("mechanism precision is not positive definite".into()))?;
    let mean = chol.solve(&(g * s));
    let covariance = chol.inverse();
    Ok(CompletedSquare { mean, precision, covariance })
}

/// Draws and acceptance bookkeeping of [`sample_quadratic_mechanism`].
#[derive(Debug, Clone)]
pub struct QuadraticDraws {
    pub draws: Vec<DVector<f64>>,
    pub proposals: u64,
    pub accepted: u64,
    pub law: CompletedSquare,
}

impl QuadraticDraws {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

const STALL_PROPOSALS: u64 = 1_000_000;
const STALL_RATE: f64 = 1e-4;

/// Exact draws from the exponential mechanism of a quadratic objective.
///
/// The untruncated law is Gaussian (see [`complete_square`]); when the
/// objective's support is the unit ball, proposals outside it are rejected.
/// Aborts if acceptance falls below 1e-4 once 10⁶ proposals have been made.
pub fn sample_quadratic_mechanism<O, R>(
    obj: &O,
    cfg: &MechanismConfig,
    base: &BaseMeasure,
    records: &DMatrix<f64>,
    count: usize,
    rng: &mut R,
) -> Result<QuadraticDraws>
where
    O: QuadraticObjective + ?Sized,
    R: Rng + ?Sized,
{
    let law = complete_square(obj, cfg, base, records)?;
    let d = law.mean.len();
    // b = μ + L⁻ᵀ z with Q = L Lᵀ has covariance Q⁻¹.
    let chol = law
        .precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("mechanism precision is not positive definite".into()))?;
    let lt = chol.l().transpose();
    let truncate = obj.support() == Support::UnitBall;
    let mut draws = Vec::with_capacity(count);
    let mut proposals = 0u64;
    let mut accepted = 0u64;
    while draws.len() < count {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let b = &law.mean + step;
        proposals += 1;
        if !truncate || b.norm() <= 1.0 {
            accepted += 1;
            draws.push(b);
        } else if proposals >= STALL_PROPOSALS && (accepted as f64) < STALL_RATE * proposals as f64 {
            return Err(Error::SamplerStalled {
                proposals,
                accepted,
                detail: format!("unit-ball truncation of a Gaussian with mean norm {:.3e}", law.mean.norm()),
            });
        }
    }
    Ok(QuadraticDraws { draws, proposals, accepted, law })
}
