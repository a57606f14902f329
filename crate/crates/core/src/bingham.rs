//! Matrix Bingham sampling on the Stiefel manifold.
//!
//! Targets the density `∝ exp(tr(VᵀAV))` over `m × k` matrices with
//! orthonormal columns. The Gibbs sweep updates one column at a time: the
//! column is confined to the unit sphere of the complement of the other
//! columns, where its conditional law is a vector Bingham distribution. That
//! inner draw is exact, by rejection from an angular central Gaussian
//! envelope (Kent, Ganeiber & Mardia, 2013).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::covariance::{inverse_with_floor, CovarianceOperator, DEFAULT_FLOOR_RATIO};
use crate::error::{Error, Result};
use crate::hilbert::CoefMatrix;
use crate::linalg::{complement_basis, max_asymmetry, orthonormality_defect, orthonormalize_columns, sorted_sym_eigen, symmetrize};
use crate::rng::{stream, StreamRng};

pub const DEFAULT_BURN_IN: usize = 20_000;
pub const STIEFEL_TOL: f64 = 1e-8;
/// Drift in `VᵀV` that triggers re-orthonormalization after a sweep.
pub const DRIFT_TOL: f64 = 1e-10;
const MAX_REJECTIONS: u64 = 1_000_000;

/// Curvature matrix `A` of the density `exp(tr(VᵀAV))` and the column count `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinghamParameter {
    a: DMatrix<f64>,
    k: usize,
}

impl BinghamParameter {
    pub fn new(a: DMatrix<f64>, k: usize) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Mismatch(format!("A must be square, got {:?}", a.shape())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("A has non-finite entries".into()));
        }
        let asym = max_asymmetry(&a);
        if asym > 1e-12 {
            return Err(Error::InvalidArgument(format!("A not symmetric (deviation {asym:.3e})")));
        }
        if k == 0 || k > a.nrows() {
            return Err(Error::InvalidArgument(format!("need 1 <= k <= {}, got {k}", a.nrows())));
        }
        Ok(Self { a, k })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Same curvature, shifted by `c·I`.
    pub fn shifted(&self, c: f64) -> Self {
        let m = self.m();
        Self { a: &self.a + DMatrix::identity(m, m) * c, k: self.k }
    }

    /// `tr(VᵀAV)`.
    pub fn energy(&self, v: &DMatrix<f64>) -> f64 {
        (v.transpose() * &self.a * v).trace()
    }

    /// Sum of the `k` largest eigenvalues of `A`, the supremum of `tr(VᵀAV)`.
    pub fn max_energy(&self) -> f64 {
        sorted_sym_eigen(&self.a, 0.0).values.iter().take(self.k).sum()
    }
}

/// `A = (ε/2)(XᵀX − Σ⁻¹)`, symmetrized, with `Σ⁻¹` eigenvalue-floored.
pub fn build_bingham_parameter(
    coefs: &CoefMatrix,
    sigma: &CovarianceOperator,
    epsilon: f64,
    k: usize,
) -> Result<BinghamParameter> {
    if coefs.m() != sigma.dim() {
        return Err(Error::Mismatch(format!(
            "coefficients have {} columns but covariance is {}×{}",
            coefs.m(),
            sigma.dim(),
            sigma.dim()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let inv = inverse_with_floor(sigma, DEFAULT_FLOOR_RATIO);
    let a = (coefs.scatter() - inv.matrix) * (0.5 * epsilon);
    BinghamParameter::new(symmetrize(&a), k)
}

/// An `m × k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    v: DMatrix<f64>,
}

impl StiefelPoint {
    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        let defect = orthonormality_defect(&v);
        if !(defect <= STIEFEL_TOL) {
            return Err(Error::InvalidArgument(format!("columns not orthonormal (defect {defect:.3e})")));
        }
        Ok(Self { v })
    }

    /// Orthonormalizes arbitrary columns; the flag reports whether any column
    /// had to be replaced.
    pub fn orthonormalized(raw: &DMatrix<f64>) -> (Self, bool) {
        let (v, rebuilt) = orthonormalize_columns(raw);
        (Self { v }, rebuilt)
    }

    /// Uniform draw: orthonormalized standard Gaussian columns.
    pub fn random<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Self {
        let raw = DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::orthonormalized(&raw).0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.v
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn k(&self) -> usize {
        self.v.ncols()
    }
}

/// Exact sampler for the vector Bingham density `∝ exp(zᵀBz)` on the unit
/// sphere of `ℝ^p`.
#[derive(Debug, Clone)]
pub struct VectorBingham {
    vectors: DMatrix<f64>,
    /// Spectrum of `B` (non-increasing), kept for diagnostics.
    spectrum: Vec<f64>,
    /// `λ_i = β_max − β_i ≥ 0`: the density is `exp(−yᵀΛy)` in eigen-coordinates.
    lambdas: Vec<f64>,
    /// Standard deviations of the envelope Gaussian, `(1 + 2λ_i/b)^{-1/2}`.
    scales: Vec<f64>,
    b: f64,
    log_bound: f64,
}

/// Root of `Σ_i 1/(b + 2λ_i) = 1`, which lies in `[1, p]` when `min λ = 0`.
fn envelope_parameter(lambdas: &[f64]) -> f64 {
    let p = lambdas.len() as f64;
    let h = |b: f64| lambdas.iter().map(|l| 1.0 / (b + 2.0 * l)).sum::<f64>() - 1.0;
    if h(p) >= 0.0 {
        return p;
    }
    let (mut lo, mut hi) = (1.0f64.min(p), p);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl VectorBingham {
    pub fn new(b_matrix: &DMatrix<f64>) -> Result<Self> {
        if !b_matrix.is_square() || b_matrix.nrows() == 0 {
            return Err(Error::Mismatch(format!("B must be square, got {:?}", b_matrix.shape())));
        }
        if b_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Bingham matrix has non-finite entries".into()));
        }
        let eig = sorted_sym_eigen(b_matrix, 0.0);
        let top = eig.values[0];
        let lambdas: Vec<f64> = eig.values.iter().map(|&v| (top - v).max(0.0)).collect();
        let p = lambdas.len() as f64;
        let b = envelope_parameter(&lambdas);
        let scales = lambdas.iter().map(|l| (1.0 + 2.0 * l / b).sqrt().recip()).collect();
        let log_bound = -0.5 * (p - b) + 0.5 * p * (p / b).ln();
        Ok(Self {
            vectors: eig.vectors,
            spectrum: eig.values.iter().copied().collect(),
            lambdas,
            scales,
            b,
            log_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Theoretical acceptance bound `1/M` of the envelope.
    pub fn envelope_efficiency_bound(&self) -> f64 {
        (-self.log_bound).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let p = self.dim();
        if p == 1 {
            let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            return Ok(DVector::from_element(1, s * self.vectors[(0, 0)].signum()));
        }
        let half_p = 0.5 * p as f64;
        let mut y = DVector::zeros(p);
        for _ in 0..MAX_REJECTIONS {
            for i in 0..p {
                y[i] = self.scales[i] * rng.sample::<f64, _>(StandardNormal);
            }
            let norm = y.norm();
            if norm == 0.0 {
                continue;
            }
            y /= norm;
            let s: f64 = self.lambdas.iter().zip(y.iter()).map(|(l, v)| l * v * v).sum();
            let log_ratio = -s + half_p * (2.0 * s / self.b).ln_1p() - self.log_bound;
            let u: f64 = rng.gen();
            if u.ln() < log_ratio {
                return Ok(&self.vectors * y);
            }
        }
        Err(Error::SamplerStalled {
            proposals: MAX_REJECTIONS,
            accepted: 0,
            detail: format!("vector Bingham with spectrum {:?}", self.spectrum),
        })
    }
}

/// One draw from the vector Bingham density `∝ exp(zᵀBz)`.
pub fn sample_vector_bingham<R: Rng + ?Sized>(b: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    VectorBingham::new(b)?.sample(rng)
}

/// Mutable state of one Gibbs chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub current: StiefelPoint,
    pub step_count: usize,
    pub stream_id: u64,
    /// `tr(VᵀAV)` after every step.
    pub trace: Vec<f64>,
    /// Number of complement rebuilds or re-orthonormalizations that replaced a column.
    pub rebuilds: usize,
}

impl ChainState {
    pub fn new(current: StiefelPoint, stream_id: u64) -> Self {
        Self { current, step_count: 0, stream_id, trace: Vec::new(), rebuilds: 0 }
    }
}

/// Column-wise Gibbs sampler for a fixed parameter. For `k = 1` the
/// conditional kernel never changes and is prepared once.
#[derive(Debug, Clone)]
pub struct GibbsSampler<'a> {
    param: &'a BinghamParameter,
    full_kernel: Option<VectorBingham>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(param: &'a BinghamParameter) -> Result<Self> {
        let full_kernel = if param.k() == 1 { Some(VectorBingham::new(param.a())?) } else { None };
        Ok(Self { param, full_kernel })
    }

    pub fn param(&self) -> &BinghamParameter {
        self.param
    }

    /// One sweep over all columns in random order.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let m = self.param.m();
        let k = self.param.k();
        if state.current.m() != m || state.current.k() != k {
            return Err(Error::Mismatch(format!(
                "state is {}×{}, parameter expects {m}×{k}",
                state.current.m(),
                state.current.k()
            )));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(rng);
        let v = &mut state.current.v;
        for &j in &order {
            let column = match &self.full_kernel {
                Some(kernel) => kernel.sample(rng)?,
                None => {
                    let (n, rebuilt) = complement_basis(v, j);
                    if rebuilt {
                        state.rebuilds += 1;
                    }
                    let b = symmetrize(&(n.transpose() * self.param.a() * &n));
                    let z = VectorBingham::new(&b)?.sample(rng)?;
                    n * z
                }
            };
            v.set_column(j, &column);
        }
        if orthonormality_defect(v) > DRIFT_TOL {
            let (fixed, rebuilt) = orthonormalize_columns(v);
            *v = fixed;
            if rebuilt {
                state.rebuilds += 1;
            }
        }
        state.step_count += 1;
        state.trace.push(self.param.energy(v));
        Ok(())
    }
}

/// A single Gibbs sweep; prepares the conditional kernels on every call.
pub fn gibbs_step<R: Rng + ?Sized>(state: &mut ChainState, param: &BinghamParameter, rng: &mut R) -> Result<()> {
    GibbsSampler::new(param)?.step(state, rng)
}

/// Burn-in and recording schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSchedule {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
}

impl Default for ChainSchedule {
    fn default() -> Self {
        Self { burn_in: DEFAULT_BURN_IN, keep: 1, thin: 1 }
    }
}

impl ChainSchedule {
    pub fn total_steps(&self) -> usize {
        self.burn_in + self.keep * self.thin
    }
}

/// Result of [`run_chain`].
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// The final state: the single draw that constitutes a private release.
    pub final_point: StiefelPoint,
    /// States recorded after burn-in. Diagnostic only; releasing more than
    /// the final state spends additional privacy budget.
    pub samples: Vec<StiefelPoint>,
    pub trace: Vec<f64>,
    pub rebuilds: usize,
    pub schedule: ChainSchedule,
}

/// Runs a chain from a uniform Stiefel initialization on the stream
/// `(seed, stream_id)`.
pub fn run_chain(param: &BinghamParameter, schedule: ChainSchedule, seed: u64, stream_id: u64) -> Result<ChainOutput> {
    let mut rng = stream(seed, &[stream_id]);
    run_chain_with_rng(param, schedule, stream_id, &mut rng)
}

pub fn run_chain_with_rng(
    param: &BinghamParameter,
    schedule: ChainSchedule,
    stream_id: u64,
    rng: &mut StreamRng,
) -> Result<ChainOutput> {
    if schedule.keep == 0 || schedule.thin == 0 {
        return Err(Error::InvalidArgument("keep and thin must be at least 1".into()));
    }
    let sampler = GibbsSampler::new(param)?;
    let start = StiefelPoint::random(param.m(), param.k(), rng);
    let mut state = ChainState::new(start, stream_id);
    state.trace.reserve(schedule.total_steps());
    for _ in 0..schedule.burn_in {
        sampler.step(&mut state, rng)?;
    }
    let mut samples = Vec::with_capacity(schedule.keep);
    for _ in 0..schedule.keep {
        for _ in 0..schedule.thin {
            sampler.step(&mut state, rng)?;
        }
        samples.push(state.current.clone());
    }
    Ok(ChainOutput {
        final_point: state.current,
        samples,
        trace: state.trace,
        rebuilds: state.rebuilds,
        schedule,
    })
}

#[derive(Serialize)]
struct TraceRecord {
    step: usize,
    energy: f64,
}

/// Writes one JSON object `{"step": i, "energy": tr(VᵀAV)}` per line.
pub fn write_trace_jsonl<W: Write>(trace: &[f64], mut out: W) -> Result<()> {
    for (i, &e) in trace.iter().enumerate() {
        serde_json::to_writer(&mut out, &TraceRecord { step: i + 1, energy: e })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `E[VVᵀ]` under the exact density, by quadrature.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub second_moment: DMatrix<f64>,
    /// Max entrywise change between the reported grid and a coarser one.
    pub quadrature_error: f64,
    pub nodes: usize,
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn circle_moment(a: &DMatrix<f64>, nodes: usize, shift: f64) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(2, 2);
    let mut z = 0.0;
    for i in 0..nodes {
        let th = 2.0 * std::f64::consts::PI * i as f64 / nodes as f64;
        let v = DVector::from_vec(vec![th.cos(), th.sin()]);
        let wgt = ((v.transpose() * a * &v)[(0, 0)] - shift).exp();
        acc += &v * v.transpose() * wgt;
        z += wgt;
    }
    acc / z
}

fn sphere_moment(a: &DMatrix<f64>, n_polar: usize, n_azimuth: usize, shift: f64) -> DMatrix<f64> {
    let (us, ws) = gauss_legendre(n_polar);
    let mut acc = DMatrix::zeros(3, 3);
    let mut z = 0.0;
    for (u, wu) in us.iter().zip(&ws) {
        let r = (1.0 - u * u).max(0.0).sqrt();
        for j in 0..n_azimuth {
            let ph = 2.0 * std::f64::consts::PI * j as f64 / n_azimuth as f64;
            let v = DVector::from_vec(vec![r * ph.cos(), r * ph.sin(), *u]);
            let wgt = wu * ((v.transpose() * a * &v)[(0, 0)] - shift).exp();
            acc += &v * v.transpose() * wgt;
            z += wgt;
        }
    }
    acc / z
}

/// Deterministic-quadrature `E[VVᵀ]` for `k = 1` and `m ∈ {2, 3}`: a periodic
/// θ-grid on the circle, or a Gauss–Legendre × periodic product grid on the
/// sphere. The error estimate compares against half the resolution.
pub fn bingham_moment_oracle(param: &BinghamParameter) -> Result<MomentReport> {
    if param.k() != 1 {
        return Err(Error::InvalidArgument(format!("oracle needs k = 1, got {}", param.k())));
    }
    let shift = sorted_sym_eigen(param.a(), 0.0).values[0];
    match param.m() {
        2 => {
            let fine = circle_moment(param.a(), 4096, shift);
            let coarse = circle_moment(param.a(), 2048, shift);
            Ok(MomentReport { quadrature_error: (&fine - coarse).amax(), second_moment: fine, nodes: 4096 })
        }
        3 => {
            let fine = sphere_moment(param.a(), 400, 400, shift);
            let coarse = sphere_moment(param.a(), 200, 200, shift);
            Ok(MomentReport { quadrature_error: (&fine - coarse).amax(), second_moment: fine, nodes: 400 * 400 })
        }
        m => Err(Error::InvalidArgument(format!("oracle supports m ∈ {{2, 3}}, got {m}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn build_parameter_examples() {
        let sigma = CovarianceOperator::identity(3);
        let zero = CoefMatrix::new(DMatrix::zeros(4, 3)).unwrap();
        let p = build_bingham_parameter(&zero, &sigma, 0.8, 1).unwrap();
        assert!((p.a() + DMatrix::identity(3, 3) * 0.4).amax() < 1e-15);

        let one = CoefMatrix::new(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])).unwrap();
        let p = build_bingham_parameter(&one, &sigma, 2.0, 1).unwrap();
        let mut want = -DMatrix::identity(3, 3);
        want[(0, 0)] = 0.0;
        assert!((p.a() - want).amax() < 1e-15);

        let bad = CoefMatrix::new(DMatrix::zeros(2, 4)).unwrap();
        assert!(matches!(build_bingham_parameter(&bad, &sigma, 1.0, 1), Err(Error::Mismatch(_))));
    }

    #[test]
    fn build_parameter_matches_elementwise_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = DMatrix::from_fn(7, 4, |_, _| rng.gen_range(-0.4..0.4));
        let s = crate::covariance::power_law_sigma(4, 3.0).unwrap();
        let p = build_bingham_parameter(&CoefMatrix::new(x.clone()).unwrap(), &s, 1.7, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut xtx = 0.0;
                for r in 0..7 {
                    xtx += x[(r, i)] * x[(r, j)];
                }
                let inv = if i == j { ((i + 1) as f64).powi(3) } else { 0.0 };
                assert!((p.a()[(i, j)] - 0.85 * (xtx - inv)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(BinghamParameter::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), 1).is_err());
        assert!(BinghamParameter::new(DMatrix::zeros(2, 2), 3).is_err());
        assert!(BinghamParameter::new(DMatrix::zeros(2, 2), 0).is_err());
    }

    #[test]
    fn envelope_parameter_solves_equation() {
        let l = [0.0, 3.0, 50.0, 1e4];
        let b = envelope_parameter(&l);
        let s: f64 = l.iter().map(|x| 1.0 / (b + 2.0 * x)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(envelope_parameter(&[0.0, 0.0, 0.0]), 3.0);
    }

    #[test]
    fn isotropic_bingham_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for c in [0.0, 7.0, -3.0] {
            let k = VectorBingham::new(&(DMatrix::identity(4, 4) * c)).unwrap();
            assert!((k.envelope_efficiency_bound() - 1.0).abs() < 1e-12);
            let n = 20_000;
            let mut second = 0.0;
            for _ in 0..n {
                let z = k.sample(&mut rng).unwrap();
                assert!((z.norm() - 1.0).abs() < 1e-12);
                second += z[0] * z[0];
            }
            let mean = second / n as f64;
            // Var(z₁²) on S³ is 3/(p(p+2)) − 1/p² with p = 4.
            let se = ((3.0 / 24.0 - 1.0 / 16.0) / n as f64).sqrt();
            assert!((mean - 0.25).abs() < 3.0 * se, "c={c}: {mean}");
        }
    }

    #[test]
    fn full_rank_chain_flips_signs() {
        let p = BinghamParameter::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0, 0.5])), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut state = ChainState::new(StiefelPoint::random(3, 3, &mut rng), 0);
        let sampler = GibbsSampler::new(&p).unwrap();
        let mut flips = 0;
        let steps = 4000;
        for _ in 0..steps {
            let before = state.current.matrix()[(0, 0)];
            sampler.step(&mut state, &mut rng).unwrap();
            assert!(orthonormality_defect(state.current.matrix()) <= STIEFEL_TOL);
            if before.signum() != state.current.matrix()[(0, 0)].signum() {
                flips += 1;
            }
            // energy is the full trace whatever V is
            assert!((state.trace.last().unwrap() - 1.5).abs() < 1e-10);
        }
        let rate = flips as f64 / steps as f64;
        assert!((rate - 0.5).abs() < 3.0 * (0.25 / steps as f64).sqrt());
    }

    #[test]
    fn oracle_uniform_cases() {
        let p2 = BinghamParameter::new(DMatrix::zeros(2, 2), 1).unwrap();
        let r = bingham_moment_oracle(&p2).unwrap();
        assert!((r.second_moment - DMatrix::identity(2, 2) * 0.5).amax() < 1e-12);
        let p3 = BinghamParameter::new(DMatrix::zeros(3, 3), 1).unwrap();
        let r = bingham_moment_oracle(&p3).unwrap();
        assert!((r.second_moment - DMatrix::identity(3, 3) / 3.0).amax() < 1e-12);
    }

    #[test]
    fn oracle_refinement_agrees() {
        let p = BinghamParameter::new(DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 0.0])), 1).unwrap();
        let r = bingham_moment_oracle(&p).unwrap();
        assert!(r.quadrature_error < 1e-8);
        let p4 = BinghamParameter::new(DMatrix::zeros(4, 4), 1).unwrap();
        assert!(bingham_moment_oracle(&p4).is_err());
        let pk = BinghamParameter::new(DMatrix::zeros(3, 3), 2).unwrap();
        assert!(bingham_moment_oracle(&pk).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.4).abs() < 1e-14);
        let m12: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((m12 - 2.0 / 13.0).abs() < 1e-13);
    }

    #[test]
    fn trace_export_lines() {
        let mut buf = Vec::new();
        write_trace_jsonl(&[1.5, -2.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "{\"step\":1,\"energy\":1.5}\n{\"step\":2,\"energy\":-2.0}\n");
    }

    #[test]
    fn chain_reproducible_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let p = BinghamParameter::new(symmetrize(&raw) * 3.0, 3).unwrap();
        let sched = ChainSchedule { burn_in: 50, keep: 10, thin: 2 };
        let a = run_chain(&p, sched, 99, 4).unwrap();
        let b = run_chain(&p, sched, 99, 4).unwrap();
        assert_eq!(a.final_point, b.final_point);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 70);
        assert_eq!(a.samples.len(), 10);
        let bound = p.max_energy();
        assert!(a.trace.iter().all(|&e| e <= bound + 1e-9));
        assert!(a.samples.iter().all(|s| orthonormality_defect(s.matrix()) <= STIEFEL_TOL));
        let c = run_chain(&p, sched, 99, 5).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn default_burn_in() {
        assert_eq!(ChainSchedule::default().burn_in, 20_000);
    }
}
