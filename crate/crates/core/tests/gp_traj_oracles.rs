mod common;

use common::*;
use ctgp::gp_traj::*;
use ctgp::priors::MotionPrior;
use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;

fn wnoj_prior(times: &[f64]) -> LiftedPrior {
    LiftedPrior::build(&MotionPrior::wnoj(1.0), times, dvector![0.0, 0.0, 1.0], DMatrix::identity(3, 3) * 0.1).unwrap()
}

fn mixed_measurements(times: &[f64]) -> MeasurementStream {
    let mut items = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        items.push(Measurement::scalar(t, &[1.0, 0.0, 0.0], 0.3 * k as f64, 0.01));
        if k % 2 == 1 {
            items.push(Measurement::scalar(t, &[0.0, 0.0, 1.0], 1.0 - 0.2 * k as f64, 0.05));
        }
    }
    MeasurementStream::new(items)
}

#[test]
fn lifted_prior_matches_dense_construction() {
    let times = [0.0, 0.4, 1.1, 1.5];
    let motion = MotionPrior::singer(3.0, 2.0);
    let (x0, p0) = (dvector![0.1, -0.2, 0.5], DMatrix::identity(3, 3) * 0.3);
    let prior = LiftedPrior::build(&motion, &times, x0.clone(), p0.clone()).unwrap();
    let (mean, cov) = dense_prior(&motion, &times, &x0, &p0);
    let d = 3;
    for k in 0..times.len() {
        assert!(rel_err_vec(&prior.means()[k], &mean.rows(k * d, d).into_owned()) < 1e-12);
        assert!(rel_err(&prior.marginal_covs()[k], &cov.view((k * d, k * d), (d, d)).into_owned()) < 1e-12);
    }
    let info = prior.information().unwrap().to_dense();
    assert!(rel_err(&info, &cov.try_inverse().unwrap()) < 1e-10);
}

#[test]
fn wnoa_information_blocks() {
    let times = [0.0, 1.0, 2.5];
    let motion = MotionPrior::wnoa(1.0);
    let (x0, p0) = (dvector![0.0, 1.0], DMatrix::identity(2, 2));
    let prior = LiftedPrior::build(&motion, &times, x0.clone(), p0.clone()).unwrap();
    let info = prior.information().unwrap();
    let (_, cov) = dense_prior(&motion, &times, &x0, &p0);
    assert!(rel_err(&info.to_dense(), &cov.try_inverse().unwrap()) < 1e-10);
    for k in 0..2 {
        let iv = motion.interval(times[k + 1] - times[k]).unwrap();
        let qinv = iv.q.clone().try_inverse().unwrap();
        // super-diagonal block (k, k+1) = −Φᵀ Q⁻¹
        assert!(rel_err(&info.super_block(k), &(-(iv.phi.transpose() * &qinv))) < 1e-12);
    }
}

#[test]
fn batch_matches_dense_least_squares() {
    let times = [0.0, 0.7, 1.3, 2.0];
    let prior = wnoj_prior(&times);
    let meas = mixed_measurements(&times);
    let post = solve_posterior(&prior, &meas).unwrap();
    let (m0, p0) = dense_prior(&MotionPrior::wnoj(1.0), &times, prior.x0_mean(), prior.p0());
    let (mean, cov) = dense_condition(&m0, &p0, &times, 3, &meas);
    assert!(rel_err_vec(&post.mean.to_dense(), &mean) < 1e-9);
    assert!(rel_err(&post.full_covariance().unwrap(), &cov) < 1e-9);
    for k in 0..times.len() {
        assert!(rel_err(post.marginal_cov(k), &cov.view((k * 3, k * 3), (3, 3)).into_owned()) < 1e-9);
    }
}

#[test]
fn absolute_normal_equations_give_the_same_posterior() {
    let times = [0.0, 0.7, 1.3, 2.0];
    let prior = wnoj_prior(&times);
    let meas = mixed_measurements(&times);
    let (l, r) = normal_equations(&prior, &meas).unwrap();
    let x = l.factorize().unwrap().solve(&r).unwrap();
    let post = solve_posterior(&prior, &meas).unwrap();
    assert!(rel_err_vec(&x.to_dense(), &post.mean.to_dense()) < 1e-12);
}

#[test]
fn exact_measurement_dominates() {
    let prior =
        LiftedPrior::build(&MotionPrior::wnoj(1.0), &[0.0, 1.0], DVector::zeros(3), DMatrix::identity(3, 3) * 1e4)
            .unwrap();
    let meas = MeasurementStream::new(vec![Measurement::scalar(0.0, &[1.0, 0.0, 0.0], 2.5, 1e-12)]);
    let post = solve_posterior(&prior, &meas).unwrap();
    assert!((post.mean.blocks[0][0] - 2.5).abs() < 1e-6);
}

#[test]
fn kernel_row_has_two_block_columns() {
    // dense P̌(τ) P̌⁻¹ for τ in the middle of the first interval
    let motion = MotionPrior::wnoa(1.0);
    let (x0, p0) = (dvector![0.0, 1.0], DMatrix::identity(2, 2));
    let knots = [0.0, 1.0, 2.0];
    let with_tau = [0.0, 0.5, 1.0, 2.0];
    let (_, cov) = dense_prior(&motion, &with_tau, &x0, &p0);
    let knot_idx = [0usize, 2, 3];
    let p_knots = select_blocks(&cov, &knot_idx, 2);
    let p_tau = DMatrix::from_fn(2, 6, |i, j| cov[(2 + i, knot_idx[j / 2] * 2 + j % 2)]);
    let row = p_tau * p_knots.try_inverse().unwrap();
    let w = LiftedPrior::build(&motion, &knots, x0, p0).unwrap().interp_weights(0.5).unwrap();
    assert_eq!(w.k, 0);
    assert!(rel_err(&row.columns(0, 2).into_owned(), &w.lambda) < 1e-10);
    assert!(rel_err(&row.columns(2, 2).into_owned(), &w.psi) < 1e-10);
    assert!(row.columns(4, 2).amax() < 1e-10 * row.amax());
}

#[test]
fn knot_endpoint_weights() {
    let prior = wnoj_prior(&[0.0, 1.0, 2.0]);
    let eye = DMatrix::<f64>::identity(3, 3);
    let w = prior.interp_weights_in(0, 0.0).unwrap();
    assert_eq!((w.lambda, w.psi), (eye.clone(), DMatrix::zeros(3, 3)));
    let w = prior.interp_weights_in(0, 1.0).unwrap();
    assert_eq!((w.lambda, w.psi), (DMatrix::zeros(3, 3), eye));
}

#[test]
fn interpolation_equals_knot_insertion() {
    let knots = [0.0, 1.0, 2.0];
    let tau = 0.37;
    let meas = mixed_measurements(&knots);
    let prior = wnoj_prior(&knots);
    let post = solve_posterior(&prior, &meas).unwrap();
    let (mean, cov) = interpolate(&post, &prior, tau).unwrap();

    let enlarged = wnoj_prior(&[0.0, tau, 1.0, 2.0]);
    let big = solve_posterior(&enlarged, &meas).unwrap();
    assert!(rel_err_vec(&mean, &big.mean.blocks[1]) < 1e-9);
    assert!(rel_err(&cov, big.marginal_cov(1)) < 1e-9);
}

#[test]
fn interpolation_at_knot_and_without_measurements() {
    let knots = [0.0, 1.0, 2.0];
    let prior = wnoj_prior(&knots);
    let post = solve_posterior(&prior, &mixed_measurements(&knots)).unwrap();
    let (m, c) = interpolate(&post, &prior, 1.0).unwrap();
    assert!(rel_err_vec(&m, &post.mean.blocks[1]) < 1e-14);
    assert!(rel_err(&c, post.marginal_cov(1)) < 1e-12);

    let empty = solve_posterior(&prior, &MeasurementStream::default()).unwrap();
    let (m, c) = interpolate(&empty, &prior, 1.4).unwrap();
    let (mx, cx) = dense_prior(&MotionPrior::wnoj(1.0), &[0.0, 1.0, 1.4], prior.x0_mean(), prior.p0());
    assert!(rel_err_vec(&m, &mx.rows(6, 3).into_owned()) < 1e-12);
    assert!(rel_err(&c, &cx.view((6, 6), (3, 3)).into_owned()) < 1e-10);
}

#[test]
fn interpolation_cost_is_independent_of_k() {
    let reads = |k: usize| {
        let times: Vec<f64> = (0..=k).map(|i| i as f64 * 0.1).collect();
        let prior = wnoj_prior(&times);
        let post = solve_posterior(&prior, &mixed_measurements(&times)).unwrap();
        interpolate_with_stats(&post, &prior, 0.55).unwrap().2.block_reads
    };
    assert_eq!(reads(10), reads(1000));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_matches_dense_on_random_problems(
        seed in any::<u64>(),
        steps in proptest::collection::vec(0.2f64..1.0, 1..8),
    ) {
        let mut r = rng(seed);
        let motion = random_motion(&mut r);
        let mut times = vec![0.0];
        for s in &steps {
            times.push(times.last().unwrap() + s);
        }
        let x0 = dvector![0.3, -0.1, 0.2];
        let p0 = DMatrix::identity(3, 3) * 0.5;
        let items = times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let row = if k % 2 == 0 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
                Measurement::scalar(t, &row, rand::Rng::random_range(&mut r, -1.0..1.0), 0.05)
            })
            .collect();
        let meas = MeasurementStream::new(items);
        let prior = LiftedPrior::build(&motion, &times, x0.clone(), p0.clone()).unwrap();
        let post = solve_posterior(&prior, &meas).unwrap();
        let (m0, c0) = dense_prior(&motion, &times, &x0, &p0);
        let (mean, cov) = dense_condition(&m0, &c0, &times, 3, &meas);
        prop_assert!(rel_err_vec(&post.mean.to_dense(), &mean) < 1e-9);
        for k in 0..times.len() {
            let block = cov.view((k * 3, k * 3), (3, 3)).into_owned();
            prop_assert!(rel_err(post.marginal_cov(k), &block) < 1e-9);
        }
    }
}
