//! Empirical checks of the mechanism's asymptotic normality.
//!
//! Every scenario uses the penalized-mean objective, whose mechanism law is
//! an exactly sampled (possibly truncated) Gaussian, so any disagreement with
//! the limit is attributable to finite `n` and not to sampler error.
//!
//! For `Z = √n(b̃ − b̂)` the limit is `N(0, (2Δ/ε)Σ)` with
//! `Σ⁻¹ = −n⁻¹ξ″ = 2(I + λC⁻¹)`. With a Gaussian base `N(0, C)` the exact
//! covariance at sample size `n` is `((ε/2Δ)Σ⁻¹ + C⁻¹/n)⁻¹`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariance::{inverse_with_floor, CovarianceOperator, DEFAULT_FLOOR_RATIO};
use crate::error::{Error, Result};
use crate::hilbert::CLIP_MARGIN;
use crate::mechanism::{
    penalized_mean_objective, sample_quadratic_mechanism, BaseMeasure, MechanismConfig, PenalizedMean,
    QuadraticObjective,
};
use crate::rng::stream;

/// Runs whose overall truncation acceptance falls below this are flagged.
pub const RELIABLE_ACCEPTANCE: f64 = 0.01;
pub const MIN_REPLICATES: usize = 100;
pub const TEST_LEVEL: f64 = 0.01;

/// Independent Gaussian records, clipped one at a time into the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataLaw {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltScenario {
    pub dim: usize,
    pub data: DataLaw,
    pub lambda: f64,
    /// Diagonal of `C`, used both in the penalty and as the base covariance.
    pub base_diag: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    /// Gaussian base `N(0, C)`; otherwise Lebesgue.
    #[serde(default = "yes")]
    pub gaussian_base: bool,
    /// Restrict candidates to the unit ball.
    #[serde(default = "yes")]
    pub truncate: bool,
}

fn yes() -> bool {
    true
}

impl CltScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.data.mean.len() != self.dim || self.data.sd.len() != self.dim || self.base_diag.len() != self.dim {
            return Err(Error::Mismatch(format!(
                "dimension {} but data mean {}, data sd {}, base {}",
                self.dim,
                self.data.mean.len(),
                self.data.sd.len(),
                self.base_diag.len()
            )));
        }
        if self.data.sd.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || self.data.mean.iter().any(|m| !m.is_finite()) {
            return bad("data law must have finite mean and nonnegative sd".into());
        }
        if self.base_diag.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("base covariance diagonal must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) || !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("need epsilon, delta > 0, got {}, {}", self.epsilon, self.delta));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes[0] == 0 {
            return bad("sample sizes must be nonempty and positive".into());
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("sample sizes must be strictly increasing: {:?}", self.sample_sizes));
        }
        if self.replicates < MIN_REPLICATES {
            return bad(format!("need at least {MIN_REPLICATES} replicates, got {}", self.replicates));
        }
        Ok(())
    }

    pub fn base_covariance(&self) -> Result<CovarianceOperator> {
        CovarianceOperator::diagonal(&self.base_diag)
    }

    fn objective(&self) -> Result<PenalizedMean> {
        let obj = penalized_mean_objective(self.lambda, &self.base_covariance()?)?;
        Ok(if self.truncate { obj } else { obj.unrestricted() })
    }

    /// `ε / 2Δ`.
    pub fn scale(&self) -> f64 {
        self.epsilon / (2.0 * self.delta)
    }

    /// `Σ` from the objective's Hessian: `Σ⁻¹ = −n⁻¹ξ″`.
    pub fn sigma(&self) -> Result<DMatrix<f64>> {
        let probe = DMatrix::zeros(1, self.dim);
        let (h, _) = self.objective()?.quadratic_form(&probe)?;
        h.cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Numerical("objective Hessian is not positive definite".into()))
    }

    /// `(2Δ/ε)Σ`.
    pub fn target(&self) -> Result<DMatrix<f64>> {
        Ok(self.sigma()? / self.scale())
    }
}

/// `((ε/2Δ)Σ⁻¹ + C⁻¹/n)⁻¹`, with `scale = ε/2Δ`.
pub fn finite_n_covariance(sigma: &DMatrix<f64>, c: &CovarianceOperator, scale: f64, n: f64) -> Result<DMatrix<f64>> {
    if sigma.nrows() != c.dim() {
        return Err(Error::Mismatch(format!("Sigma dimension {} vs C {}", sigma.nrows(), c.dim())));
    }
    let sigma_inv = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Sigma is not positive definite".into()))?
        .inverse();
    let c_inv = inverse_with_floor(c, DEFAULT_FLOOR_RATIO).matrix;
    (sigma_inv * scale + c_inv / n)
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::Numerical("finite-n precision is not positive definite".into()))
}

/// `max_ij |S_ij − T_ij| / √(T_ii T_jj)`.
pub fn max_relative_deviation(s: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            let scale = (t[(i, i)] * t[(j, j)]).sqrt();
            if scale > 0.0 {
                worst = worst.max((s[(i, j)] - t[(i, j)]).abs() / scale);
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateTest {
    pub coordinate: usize,
    pub ks_distance: f64,
    pub critical: f64,
    /// Zero target variance: no test was run.
    pub skipped: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionTest {
    pub coordinates: Vec<CoordinateTest>,
    /// `max_ij |S_ij − T_ij| / √((T_ii T_jj + T_ij²)/N)`, a z-score under the null.
    pub covariance_z: f64,
    pub covariance_critical: f64,
    pub pass: bool,
}

/// Upper tail of the Kolmogorov distribution, `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `x` with `P(K > x) = alpha`.
pub fn kolmogorov_quantile(alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.2, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One-sample KS distance of `xs` against `N(0, var)`.
pub fn ks_distance(xs: &[f64], var: f64) -> f64 {
    let law = Normal::new(0.0, var.sqrt()).expect("positive variance");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = law.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Tests `samples` against `N(0, target)` at level 0.01.
///
/// Half the level goes to the marginal KS tests and half to the entrywise
/// second-moment z-scores, each Bonferroni-corrected over its family.
pub fn distribution_test(samples: &[DVector<f64>], target: &DMatrix<f64>) -> Result<DistributionTest> {
    let n = samples.len();
    if n < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!("need at least {MIN_REPLICATES} samples, got {n}")));
    }
    let d = target.nrows();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Mismatch(format!("samples do not all have dimension {d}")));
    }
    let active: Vec<usize> = (0..d).filter(|&i| target[(i, i)] > 0.0).collect();
    let ks_alpha = 0.5 * TEST_LEVEL / active.len().max(1) as f64;
    let sqrt_n = (n as f64).sqrt();
    let critical = kolmogorov_quantile(ks_alpha) / (sqrt_n + 0.12 + 0.11 / sqrt_n);
    let coordinates: Vec<CoordinateTest> = (0..d)
        .map(|i| {
            if target[(i, i)] <= 0.0 {
                return CoordinateTest { coordinate: i, ks_distance: f64::NAN, critical, skipped: true, pass: true };
            }
            let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            let ks = ks_distance(&xs, target[(i, i)]);
            CoordinateTest { coordinate: i, ks_distance: ks, critical, skipped: false, pass: ks <= critical }
        })
        .collect();
    let s = second_moment(samples);
    let mut z = 0.0f64;
    let mut entries = 0usize;
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[a..] {
            let sd = ((target[(i, i)] * target[(j, j)] + target[(i, j)].powi(2)) / n as f64).sqrt();
            z = z.max((s[(i, j)] - target[(i, j)]).abs() / sd);
            entries += 1;
        }
    }
    let cov_alpha = 0.5 * TEST_LEVEL / entries.max(1) as f64;
    let covariance_critical = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - cov_alpha / 2.0);
    let pass = coordinates.iter().all(|c| c.pass) && z <= covariance_critical;
    Ok(DistributionTest { coordinates, covariance_z: z, covariance_critical, pass })
}

/// `N⁻¹ Σ z zᵀ`.
pub fn second_moment(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let d = samples.first().map_or(0, |s| s.len());
    let mut s = DMatrix::zeros(d, d);
    for z in samples {
        s.ger(1.0, z, z, 1.0);
    }
    s / samples.len().max(1) as f64
}

/// Results at one sample size.
#[derive(Debug, Clone, Serialize)]
pub struct CltLevel {
    pub n: usize,
    pub replicates: usize,
    pub empirical_mean: DVector<f64>,
    /// Second moment of `√n(b̃ − b̂)` across replicates.
    pub empirical_cov: DMatrix<f64>,
    pub max_rel_deviation: f64,
    pub test: DistributionTest,
    pub acceptance_rate: f64,
    pub unreliable: bool,
    /// Exact covariance at this `n` (Gaussian base only).
    pub finite_n_cov: Option<DMatrix<f64>>,
    /// Its maximum relative deviation from the limit.
    pub finite_n_distance: Option<f64>,
    /// Mean over replicates of `‖n^{-1/2} F_n C⁻¹ b̂‖`.
    pub mean_shift: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub scenario: CltScenario,
    pub seed: u64,
    pub sigma: DMatrix<f64>,
    pub target: DMatrix<f64>,
    pub levels: Vec<CltLevel>,
}

impl CltReport {
    pub const CSV_HEADER: &'static str = "n,coordinate,empirical_var,target_var,ks_distance";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for level in &self.levels {
            for c in &level.test.coordinates {
                let i = c.coordinate;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    level.n,
                    i,
                    level.empirical_cov[(i, i)],
                    self.target[(i, i)],
                    c.ks_distance
                );
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario: dim={} lambda={} epsilon={} delta={} replicates={} seed={}",
            s.dim, s.lambda, s.epsilon, s.delta, s.replicates, self.seed
        );
        let diag = |m: &DMatrix<f64>| m.diagonal().iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "target_diag: {}", diag(&self.target));
        for l in &self.levels {
            let _ = writeln!(out);
            let _ = writeln!(out, "[n = {}]", l.n);
            let _ = writeln!(out, "empirical_diag: {}", diag(&l.empirical_cov));
            let _ = writeln!(out, "max_rel_deviation: {:.6e}", l.max_rel_deviation);
            let ks = l.test.coordinates.iter().map(|c| format!("{:.4e}", c.ks_distance)).collect::<Vec<_>>();
            let _ = writeln!(out, "ks_distance: {} (critical {:.4e})", ks.join(" "), l.test.coordinates[0].critical);
            let _ = writeln!(
                out,
                "covariance_z: {:.4} (critical {:.4})",
                l.test.covariance_z, l.test.covariance_critical
            );
            let _ = writeln!(out, "distribution_test: {}", if l.test.pass { "pass" } else { "fail" });
            let _ = writeln!(out, "acceptance_rate: {:.6}", l.acceptance_rate);
            if l.unreliable {
                let _ = writeln!(out, "unreliable: truncation rejections dominate");
            }
            if let (Some(f), Some(dist)) = (&l.finite_n_cov, l.finite_n_distance) {
                let _ = writeln!(out, "finite_n_diag: {}", diag(f));
                let _ = writeln!(out, "finite_n_distance: {dist:.6e}");
            }
            if let Some(shift) = l.mean_shift {
                let _ = writeln!(out, "mean_shift: {shift:.6e}");
            }
        }
        out
    }
}

fn draw_records<R: Rng + ?Sized>(law: &DataLaw, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = law.mean.len();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = law.mean[j] + law.sd[j] * z;
        }
        let norm = x.row(i).norm();
        let factor = (norm / (1.0 - CLIP_MARGIN)).max(1.0);
        if factor > 1.0 {
            x.row_mut(i).scale_mut(1.0 / factor);
        }
    }
    x
}

struct Replicate {
    z: DVector<f64>,
    b_hat: DVector<f64>,
    proposals: u64,
    accepted: u64,
}

fn run_levels(s: &CltScenario, seed: u64, hilbert: bool) -> Result<CltReport> {
    s.validate()?;
    if hilbert && !s.gaussian_base {
        return Err(Error::InvalidArgument("the Hilbert experiment needs a Gaussian base measure".into()));
    }
    let obj = s.objective()?;
    let c = s.base_covariance()?;
    let base = if s.gaussian_base { BaseMeasure::Gaussian(c.clone()) } else { BaseMeasure::Flat };
    let cfg = MechanismConfig::new(s.epsilon, s.delta, seed)?;
    let sigma = s.sigma()?;
    let target = &sigma / s.scale();
    let c_inv = inverse_with_floor(&c, DEFAULT_FLOOR_RATIO).matrix;

    let mut levels = Vec::with_capacity(s.sample_sizes.len());
    for (li, &n) in s.sample_sizes.iter().enumerate() {
        let reps: Vec<Replicate> = (0..s.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(seed, &[li as u64, r as u64]);
                let x = draw_records(&s.data, n, &mut rng);
                let b_hat = obj.maximizer(&x)?;
                let draws = sample_quadratic_mechanism(&obj, &cfg, &base, &x, 1, &mut rng)?;
                let z = (&draws.draws[0] - &b_hat) * (n as f64).sqrt();
                Ok(Replicate { z, b_hat, proposals: draws.proposals, accepted: draws.accepted })
            })
            .collect::<Result<_>>()?;
        let zs: Vec<DVector<f64>> = reps.iter().map(|r| r.z.clone()).collect();
        let empirical_cov = second_moment(&zs);
        let empirical_mean = zs.iter().fold(DVector::zeros(s.dim), |acc, z| acc + z) / zs.len() as f64;
        let proposals: u64 = reps.iter().map(|r| r.proposals).sum();
        let accepted: u64 = reps.iter().map(|r| r.accepted).sum();
        let acceptance_rate = accepted as f64 / proposals as f64;
        let test = distribution_test(&zs, &target)?;
        let (finite_n_cov, finite_n_distance, mean_shift) = if hilbert {
            let f = finite_n_covariance(&sigma, &c, s.scale(), n as f64)?;
            let dist = max_relative_deviation(&f, &target);
            let op = &f * &c_inv / (n as f64).sqrt();
            let shift = reps.iter().map(|r| (&op * &r.b_hat).norm()).sum::<f64>() / reps.len() as f64;
            (Some(f), Some(dist), Some(shift))
        } else {
            (None, None, None)
        };
        levels.push(CltLevel {
            n,
            replicates: s.replicates,
            empirical_mean,
            max_rel_deviation: max_relative_deviation(&empirical_cov, &target),
            empirical_cov,
            test,
            acceptance_rate,
            unreliable: acceptance_rate < RELIABLE_ACCEPTANCE,
            finite_n_cov,
            finite_n_distance,
            mean_shift,
        });
    }
    Ok(CltReport { scenario: s.clone(), seed, sigma, target, levels })
}

/// For each sample size, records `√n(b̃ − b̂)` over independent datasets and
/// compares its second moment and marginals to `N(0, (2Δ/ε)Σ)`.
pub fn run_clt_experiment(s: &CltScenario, seed: u64) -> Result<CltReport> {
    run_levels(s, seed, false)
}

/// [`run_clt_experiment`] in basis coordinates with a Gaussian base measure,
/// additionally reporting the exact finite-`n` covariance and the size of
/// the mean shift induced by the base measure.
pub fn hilbert_clt_experiment(s: &CltScenario, seed: u64) -> Result<CltReport> {
    run_levels(s, seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> CltScenario {
        CltScenario {
            dim: 1,
            data: DataLaw { mean: vec![0.2], sd: vec![0.3] },
            lambda: 0.1,
            base_diag: vec![0.1],
            epsilon: 1.0,
            delta: 4.0,
            sample_sizes: vec![100, 10_000],
            replicates: 1000,
            gaussian_base: true,
            truncate: true,
        }
    }

    #[test]
    fn sigma_from_hessian() {
        let s = scenario();
        // Σ = ½(1 + λ/C)⁻¹ = ½ · ½
        assert!((s.sigma().unwrap()[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((s.target().unwrap()[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        let mut s = scenario();
        s.sample_sizes = vec![100, 100];
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.replicates = 99;
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.base_diag = vec![0.1, 0.1];
        assert!(matches!(s.validate(), Err(Error::Mismatch(_))));
    }

    #[test]
    fn kolmogorov_quantiles() {
        // tabulated asymptotic critical values
        assert!((kolmogorov_quantile(0.05) - 1.3581).abs() < 1e-3);
        assert!((kolmogorov_quantile(0.01) - 1.6276).abs() < 1e-3);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let law = Normal::new(0.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..1000).map(|i| law.inverse_cdf((i as f64 + 0.5) / 1000.0)).collect();
        assert!((ks_distance(&xs, 4.0) - 0.0005).abs() < 1e-9);
    }

    #[test]
    fn degenerate_coordinate_skipped() {
        let mut rng = stream(1, &[]);
        let samples: Vec<DVector<f64>> =
            (0..500).map(|_| DVector::from_vec(vec![rng.sample(StandardNormal), 0.0])).collect();
        let t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let r = distribution_test(&samples, &t).unwrap();
        assert!(r.coordinates[1].skipped);
        assert!(!r.coordinates[0].skipped);
    }

    #[test]
    fn report_serializations() {
        let mut s = scenario();
        s.sample_sizes = vec![50];
        s.replicates = 100;
        let r = hilbert_clt_experiment(&s, 3).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("n,coordinate,empirical_var,target_var,ks_distance\n50,0,"));
        assert_eq!(csv.lines().count(), 2);
        let text = r.to_text();
        assert!(text.contains("[n = 50]"));
        assert!(text.contains("finite_n_distance"));
    }
}
