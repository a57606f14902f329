use std::sync::Arc;

use dpfpca::bingham::{build_bingham_parameter, run_chain, ChainSchedule, StiefelPoint};
use dpfpca::covariance::{power_law_sigma, CovarianceOperator};
use dpfpca::fpca::{
    fpca_objective, nonprivate_fpca, private_fpca, projection_from_span, subspace_norm, PrivateFpcaConfig,
    ProjectionOperator,
};
use dpfpca::hilbert::{clip_to_unit_ball, fourier_basis, ClipMode, CoefMatrix, Dataset, Grid};
use dpfpca::rng::stream;
use dpfpca::Error;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Curves with scores of SD 1, 0.3, 0.1, ... on the first Fourier functions.
fn separated_dataset(n: usize, seed: u64) -> Dataset {
    let grid = Arc::new(Grid::uniform(100).unwrap());
    let basis = fourier_basis(10, grid.clone()).unwrap();
    let mut rng = stream(seed, &[]);
    let sds = [1.0, 0.3, 0.1, 0.05];
    let rows = (0..n)
        .map(|_| {
            let scores: Vec<f64> = sds.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
            (0..100)
                .map(|t| scores.iter().enumerate().map(|(j, s)| s * basis.function(j)[t]).sum())
                .collect()
        })
        .collect();
    clip_to_unit_ball(&Dataset::from_rows(grid, rows).unwrap(), ClipMode::Global).unwrap()
}

fn cfg(k: usize, epsilon: f64, seed: u64) -> PrivateFpcaConfig {
    PrivateFpcaConfig {
        k,
        epsilon,
        schedule: ChainSchedule { burn_in: 50, keep: 1, thin: 1 },
        seed,
        stream_id: 1,
        replicate: 0,
    }
}

#[test]
fn huge_epsilon_recovers_optimum() {
    let d = separated_dataset(200, 1);
    let basis = fourier_basis(10, d.grid().clone()).unwrap();
    let sigma = CovarianceOperator::identity(10);
    for k in [1, 2] {
        let out = private_fpca(&d, &basis, &sigma, &cfg(k, 1e6, 3)).unwrap();
        assert!(out.report.variance_ratio > 0.99, "k={k}: {}", out.report.variance_ratio);
        assert!(out.report.subspace_norm < 0.01);
        assert!(ProjectionOperator::new(out.projection.matrix().clone(), k).is_ok());
        assert_eq!(out.components.len(), k);
        assert_eq!(out.components[0].values().len(), 100);
    }
}

#[test]
fn tiny_epsilon_matches_zero_data_draws() {
    // At ε = 0.01 the data term is negligible next to −(ε/2)Σ⁻¹, so releases
    // should be indistinguishable from chains with X = 0.
    let d = separated_dataset(30, 2);
    let m = 6;
    let basis = fourier_basis(m, d.grid().clone()).unwrap();
    let sigma = power_law_sigma(m, 1.0).unwrap();
    let eps = 0.01;
    let reps = 2000;
    let a: Vec<f64> = (0..reps)
        .map(|r| private_fpca(&d, &basis, &sigma, &cfg(1, eps, r as u64)).unwrap().report.subspace_norm)
        .collect();
    let p_hat = nonprivate_fpca(&dpfpca::hilbert::project(&d, &basis).unwrap().0, 1).unwrap().projection;
    let zero = CoefMatrix::new(DMatrix::zeros(1, m)).unwrap();
    let param = build_bingham_parameter(&zero, &sigma, eps, 1).unwrap();
    let b: Vec<f64> = (0..reps)
        .map(|r| {
            let out = run_chain(&param, ChainSchedule { burn_in: 50, keep: 1, thin: 1 }, 10_000 + r as u64, 1).unwrap();
            subspace_norm(&projection_from_span(&out.final_point), &p_hat).unwrap()
        })
        .collect();
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n)
    };
    let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
    assert!((ma - mb).abs() < 3.0 * (va + vb).sqrt(), "{ma} vs {mb}");

    // Two-sample Kolmogorov–Smirnov at level 0.01: c(α) √(2/N).
    let (mut sa, mut sb) = (a.clone(), b.clone());
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let mut dmax = 0.0f64;
    for x in sa.iter().chain(sb.iter()) {
        let fa = sa.partition_point(|v| v <= x) as f64 / reps as f64;
        let fb = sb.partition_point(|v| v <= x) as f64 / reps as f64;
        dmax = dmax.max((fa - fb).abs());
    }
    assert!(dmax < 1.628 * (2.0 / reps as f64).sqrt(), "KS distance {dmax}");
}

#[test]
fn objective_depends_on_span_only() {
    let mut rng = stream(5, &[]);
    let x = DMatrix::from_fn(12, 6, |_, _| rng.gen_range(-0.4..0.4));
    let coefs = CoefMatrix::new(x.clone()).unwrap();
    for _ in 0..50 {
        let v = StiefelPoint::random(6, 3, &mut rng);
        let q = StiefelPoint::random(3, 3, &mut rng);
        let vq = StiefelPoint::new(v.matrix() * q.matrix()).unwrap();
        let a = fpca_objective(&coefs, &projection_from_span(&v)).unwrap();
        let b = fpca_objective(&coefs, &projection_from_span(&vq)).unwrap();
        assert!((a - b).abs() < 1e-12);

        let mut perm: Vec<usize> = (0..12).collect();
        for i in (1..12).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = CoefMatrix::new(DMatrix::from_fn(12, 6, |i, j| x[(perm[i], j)])).unwrap();
        let c = fpca_objective(&shuffled, &projection_from_span(&v)).unwrap();
        assert!((a - c).abs() < 1e-12);
    }
}

#[test]
fn nonprivate_projection_beats_random_projections() {
    let mut rng = stream(6, &[]);
    let x = DMatrix::from_fn(40, 8, |_, j| rng.gen_range(-0.3..0.3) / (1.0 + j as f64));
    let coefs = CoefMatrix::new(x).unwrap();
    for k in 1..4 {
        let best = fpca_objective(&coefs, &nonprivate_fpca(&coefs, k).unwrap().projection).unwrap();
        for _ in 0..100 {
            let p = projection_from_span(&StiefelPoint::random(8, k, &mut rng));
            assert!(fpca_objective(&coefs, &p).unwrap() <= best + 1e-12);
        }
    }
}

#[test]
fn invalid_inputs_rejected() {
    let d = separated_dataset(5, 3);
    let basis = fourier_basis(10, d.grid().clone()).unwrap();
    let sigma = CovarianceOperator::identity(10);
    assert!(matches!(private_fpca(&d, &basis, &sigma, &cfg(5, 1.0, 0)), Err(Error::InvalidArgument(_))));
    assert!(matches!(private_fpca(&d, &basis, &sigma, &cfg(0, 1.0, 0)), Err(Error::InvalidArgument(_))));

    let big = Dataset::from_rows(d.grid().clone(), vec![vec![3.0; 100], vec![0.1; 100], vec![0.0; 100]]).unwrap();
    assert!(matches!(private_fpca(&big, &basis, &sigma, &cfg(1, 1.0, 0)), Err(Error::Unclipped { index: 0, .. })));

    let wrong = CovarianceOperator::identity(4);
    assert!(private_fpca(&d, &basis, &wrong, &cfg(1, 1.0, 0)).is_err());
}
