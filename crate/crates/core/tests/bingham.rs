use dpfpca::bingham::{
    bingham_moment_oracle, build_bingham_parameter, run_chain, sample_vector_bingham, BinghamParameter, ChainSchedule,
    ChainState, GibbsSampler, StiefelPoint,
};
use dpfpca::covariance::CovarianceOperator;
use dpfpca::hilbert::CoefMatrix;
use dpfpca::rng::stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Modified Bessel function `I_ν(x)` by its power series.
fn bessel_i(nu: i32, x: f64) -> f64 {
    let mut term = (0.5 * x).powi(nu) / (1..=nu).map(f64::from).product::<f64>();
    let mut sum = term;
    for j in 1..200 {
        let j = j as f64;
        term *= (0.25 * x * x) / (j * (j + nu as f64));
        sum += term;
    }
    sum
}

/// `E[cos²θ]` under `e^{a cos²θ}` on the circle: `½(1 + I₁(a/2)/I₀(a/2))`.
fn circle_cos2(a: f64) -> f64 {
    0.5 * (1.0 + bessel_i(1, 0.5 * a) / bessel_i(0, 0.5 * a))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Standard error from `b` non-overlapping batch means, for correlated chains.
fn batch_se(xs: &[f64], b: usize) -> (f64, f64) {
    let size = xs.len() / b;
    let means: Vec<f64> = (0..b).map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let (m, se) = mean_se(&means);
    (m, se)
}

fn diag2(a: f64) -> BinghamParameter {
    BinghamParameter::new(DMatrix::from_diagonal(&DVector::from_vec(vec![a, 0.0])), 1).unwrap()
}

#[test]
fn circle_oracle_matches_bessel_closed_form() {
    for a in [0.0, 1.0, 5.0, 20.0, -3.0] {
        let r = bingham_moment_oracle(&diag2(a)).unwrap();
        assert!((r.second_moment[(0, 0)] - circle_cos2(a)).abs() < 1e-10, "a={a}");
        assert!(r.second_moment[(0, 1)].abs() < 1e-12);
    }
}

#[test]
fn sphere_oracle_matches_rejection_from_uniform() {
    let a = DMatrix::from_row_slice(3, 3, &[1.5, 0.4, -0.2, 0.4, -0.5, 0.3, -0.2, 0.3, 0.2]);
    let oracle = bingham_moment_oracle(&BinghamParameter::new(a.clone(), 1).unwrap()).unwrap();
    let top = a.symmetric_eigenvalues().max();
    let mut rng = stream(21, &[]);
    let mut acc = Vec::new();
    while acc.len() < 100_000 {
        let z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)).normalize();
        let log_w = (z.transpose() * &a * &z)[0] - top;
        if rng.gen::<f64>().ln() < log_w {
            acc.push(z);
        }
    }
    for i in 0..3 {
        for j in i..3 {
            let xs: Vec<f64> = acc.iter().map(|z| z[i] * z[j]).collect();
            let (m, se) = mean_se(&xs);
            assert!((m - oracle.second_moment[(i, j)]).abs() < 3.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn vector_bingham_two_dimensional_moment() {
    let mut rng = stream(2, &[]);
    for b in [1.0, 5.0, 20.0] {
        let bm = DMatrix::from_diagonal(&DVector::from_vec(vec![b, 0.0]));
        let xs: Vec<f64> = (0..40_000).map(|_| sample_vector_bingham(&bm, &mut rng).unwrap()[0].powi(2)).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - circle_cos2(b)).abs() < 3.0 * se, "b={b}: {m} vs {}", circle_cos2(b));
    }
}

#[test]
fn vector_bingham_isotropic_and_antipodal() {
    let mut rng = stream(3, &[]);
    let p = 4;
    let iso = DMatrix::identity(p, p) * 7.0;
    let draws: Vec<DVector<f64>> = (0..40_000).map(|_| sample_vector_bingham(&iso, &mut rng).unwrap()).collect();
    for i in 0..p {
        let (m, se) = mean_se(&draws.iter().map(|z| z[i] * z[i]).collect::<Vec<_>>());
        assert!((m - 1.0 / p as f64).abs() < 3.0 * se);
    }

    let raw = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-2.0..2.0));
    let b = (&raw + raw.transpose()) * 0.5;
    let draws: Vec<DVector<f64>> = (0..40_000).map(|_| sample_vector_bingham(&b, &mut rng).unwrap()).collect();
    for i in 0..p {
        let (m, se) = mean_se(&draws.iter().map(|z| z[i]).collect::<Vec<_>>());
        assert!(m.abs() < 3.0 * se, "E[z_{i}] = {m}");
        assert!(draws.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }
}

fn chain_moments(param: &BinghamParameter, keep: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let out = run_chain(param, ChainSchedule { burn_in: 100, keep, thin: 1 }, seed, 0).unwrap();
    out.samples.iter().map(|s| s.matrix() * s.matrix().transpose()).collect()
}

#[test]
fn circle_chain_matches_oracle_for_five_matrices() {
    let mats = [
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[20.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[2.0, 1.5, 1.5, -1.0]),
        DMatrix::from_row_slice(2, 2, &[-4.0, 0.5, 0.5, 3.0]),
    ];
    for (idx, a) in mats.iter().enumerate() {
        let param = BinghamParameter::new(a.clone(), 1).unwrap();
        let oracle = bingham_moment_oracle(&param).unwrap().second_moment;
        let vv = chain_moments(&param, 20_000, idx as u64);
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let (m, se) = mean_se(&vv.iter().map(|p| p[(i, j)]).collect::<Vec<_>>());
            assert!((m - oracle[(i, j)]).abs() < 3.0 * se, "matrix {idx} ({i},{j}): {m} vs {}", oracle[(i, j)]);
        }
    }
}

#[test]
fn two_column_chain_matches_complement_oracle() {
    // For m=3, k=2 the span is fixed by its normal u, and tr(VᵀAV) = tr A − uᵀAu,
    // so u follows the vector Bingham law with parameter −A.
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 0.5, -0.3, 0.0, -0.3, -1.0]);
    let param = BinghamParameter::new(a.clone(), 2).unwrap();
    let oracle = bingham_moment_oracle(&BinghamParameter::new(-a, 1).unwrap()).unwrap().second_moment;
    let expected = DMatrix::<f64>::identity(3, 3) - oracle;
    let vv = chain_moments(&param, 40_000, 9);
    for i in 0..3 {
        for j in i..3 {
            let (m, se) = batch_se(&vv.iter().map(|p| p[(i, j)]).collect::<Vec<_>>(), 40);
            assert!((m - expected[(i, j)]).abs() < 3.0 * se, "({i},{j}): {m} vs {}", expected[(i, j)]);
        }
    }
}

#[test]
fn identity_shift_leaves_law_unchanged() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.0, 0.2, 0.0, 0.2, -0.5]);
    let param = BinghamParameter::new(a, 2).unwrap();
    let shifted = param.shifted(100.0);
    let x = chain_moments(&param, 20_000, 1);
    let y = chain_moments(&shifted, 20_000, 2);
    for i in 0..3 {
        for j in i..3 {
            let (mx, sx) = batch_se(&x.iter().map(|p| p[(i, j)]).collect::<Vec<_>>(), 40);
            let (my, sy) = batch_se(&y.iter().map(|p| p[(i, j)]).collect::<Vec<_>>(), 40);
            assert!((mx - my).abs() < 3.0 * (sx * sx + sy * sy).sqrt(), "({i},{j}): {mx} vs {my}");
        }
    }
}

#[test]
fn zero_energy_step_is_uniform_on_complement() {
    // On S² the first coordinate of a uniform point is uniform on [−1, 1]: E|v₁| = ½.
    let param = BinghamParameter::new(DMatrix::zeros(3, 3), 1).unwrap();
    let sampler = GibbsSampler::new(&param).unwrap();
    let mut rng = stream(4, &[]);
    let mut state = ChainState::new(StiefelPoint::new(DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0])).unwrap(), 0);
    let mut xs = Vec::new();
    for _ in 0..50_000 {
        sampler.step(&mut state, &mut rng).unwrap();
        xs.push(state.current.matrix()[(0, 0)].abs());
    }
    let (m, se) = mean_se(&xs);
    assert!((m - 0.5).abs() < 3.0 * se);
}

#[test]
fn stiefel_invariant_after_every_step() {
    let mut rng = stream(6, &[]);
    let raw = DMatrix::from_fn(7, 7, |_, _| rng.gen_range(-3.0..3.0));
    let param = BinghamParameter::new((&raw + raw.transpose()) * 0.5, 4).unwrap();
    let sampler = GibbsSampler::new(&param).unwrap();
    let mut state = ChainState::new(StiefelPoint::random(7, 4, &mut rng), 0);
    for _ in 0..2000 {
        sampler.step(&mut state, &mut rng).unwrap();
        let v = state.current.matrix();
        let defect = (v.transpose() * v - DMatrix::<f64>::identity(4, 4)).amax();
        assert!(defect <= 1e-8, "{defect}");
    }
    assert_eq!(state.trace.len(), 2000);
}

#[test]
fn trace_bounded_by_top_eigenvalues_and_tightens_with_epsilon() {
    let coefs = CoefMatrix::new(DMatrix::from_row_slice(4, 3, &[
        0.8, 0.1, 0.0, 0.7, -0.2, 0.1, 0.9, 0.0, -0.1, 0.6, 0.2, 0.2,
    ]))
    .unwrap();
    let sigma = CovarianceOperator::identity(3);
    let mut gaps = Vec::new();
    for eps in [1.0, 10.0, 100.0, 1000.0] {
        let param = build_bingham_parameter(&coefs, &sigma, eps, 1).unwrap();
        let bound = param.max_energy();
        let out = run_chain(&param, ChainSchedule { burn_in: 0, keep: 500, thin: 1 }, 3, 0).unwrap();
        assert!(out.trace.iter().all(|&e| e <= bound + 1e-9 * bound.abs().max(1.0)));
        let mean = out.trace.iter().sum::<f64>() / out.trace.len() as f64;
        gaps.push((bound - mean) / bound.abs());
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[3] < 1e-2);
}

#[test]
fn chains_are_bit_reproducible() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.0, 0.2, 0.0, 0.2, -0.5]);
    let param = BinghamParameter::new(a, 2).unwrap();
    let s = ChainSchedule { burn_in: 50, keep: 5, thin: 2 };
    let x = run_chain(&param, s, 7, 3).unwrap();
    let y = run_chain(&param, s, 7, 3).unwrap();
    let z = run_chain(&param, s, 7, 4).unwrap();
    assert_eq!(x.final_point, y.final_point);
    assert_eq!(x.trace, y.trace);
    assert_ne!(x.final_point, z.final_point);
}

#[test]
fn unburned_zero_energy_chain_gives_valid_point() {
    let param = BinghamParameter::new(DMatrix::zeros(5, 5), 2).unwrap();
    let out = run_chain(&param, ChainSchedule { burn_in: 0, keep: 1, thin: 1 }, 0, 0).unwrap();
    let v = out.final_point.matrix();
    assert!((v.transpose() * v - DMatrix::<f64>::identity(2, 2)).amax() <= 1e-8);
}
