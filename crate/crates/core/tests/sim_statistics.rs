mod common;

use common::*;
use ctgp::priors::MotionPrior;
use ctgp::sim::*;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::SliceRandom;

fn short_config(prior: MotionPrior, dt: f64) -> SimConfig {
    let (base, _) = experiment_presets();
    SimConfig { prior, duration: dt, pos_rate: 1.0 / dt, acc_rate: 1.0 / dt, ..base }
}

fn state3(x: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

#[test]
fn seeded_generation_is_reproducible() {
    let (mut cfg, _) = experiment_presets();
    cfg.n_eval = 8;
    let a = generate(&cfg, DataSet::Eval).unwrap();
    let b = generate(&cfg, DataSet::Eval).unwrap();
    assert_eq!(a, b);
    cfg.seed += 1;
    assert_ne!(a, generate(&cfg, DataSet::Eval).unwrap());
}

#[test]
fn train_and_eval_streams_differ() {
    let (mut cfg, _) = experiment_presets();
    cfg.n_train = 2;
    cfg.n_eval = 2;
    assert_ne!(generate(&cfg, DataSet::Train).unwrap(), generate(&cfg, DataSet::Eval).unwrap());
}

#[test]
fn noise_free_prior_follows_transition() {
    let (mut cfg, _) = experiment_presets();
    cfg.prior = MotionPrior::wnoj(0.0);
    cfg.p0_diag = [0.0; 3];
    let t = sample_trajectory(&cfg, &mut trajectory_rng(5, DataSet::Eval, 0)).unwrap();
    for (&time, x) in t.times.iter().zip(&t.states) {
        let expect = cfg.prior.transition(time).unwrap() * cfg.x0();
        assert!((x - expect).amax() < 1e-12);
    }
}

#[test]
fn initial_acceleration_mean() {
    let (mut cfg, _) = experiment_presets();
    cfg.n_eval = 1000;
    let draws: Vec<f64> = generate(&cfg, DataSet::Eval).unwrap().iter().map(|t| t.states[0][2]).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let se = (cfg.p0_diag[2] / draws.len() as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
}

#[test]
fn first_step_covariance() {
    let mut cfg = short_config(MotionPrior::singer(2.0, 1.0), 0.5);
    cfg.p0_diag = [0.3, 0.2, 0.1];
    cfg.n_eval = 50_000;
    let iv = cfg.prior.interval(0.5).unwrap();
    let expect = &iv.phi * cfg.p0() * iv.phi.transpose() + &iv.q;
    let xs: Vec<Vector3<f64>> = generate(&cfg, DataSet::Eval).unwrap().iter().map(|t| state3(&t.states[1])).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<Vector3<f64>>() / n;
    let cov = xs.iter().map(|x| (x - mean) * (x - mean).transpose()).sum::<Matrix3<f64>>() / (n - 1.0);
    let diff = DMatrix::from_column_slice(3, 3, cov.as_slice()) - &expect;
    assert!(diff.norm() < 0.05 * expect.norm(), "{}", diff.norm() / expect.norm());
}

#[test]
fn vanishing_noise_measures_the_truth() {
    let (mut cfg, _) = experiment_presets();
    cfg.sigma_pos = 1e-15;
    cfg.sigma_acc = 1e-15;
    let t = sample_trajectory(&cfg, &mut trajectory_rng(2, DataSet::Eval, 0)).unwrap();
    let truth = t.states_at(&t.endpoint_times()).unwrap();
    for (m, x) in t.pos_meas.items.iter().zip(&truth) {
        assert!((m.y[0] - x[0]).abs() < 1e-12);
    }
    for (m, x) in t.acc_meas.items.iter().zip(&t.states) {
        assert!((m.y[0] - x[2]).abs() < 1e-12);
    }
}

#[test]
fn acceleration_noise_level() {
    let (mut cfg, _) = experiment_presets();
    cfg.n_eval = 1000;
    let res: Vec<f64> = generate(&cfg, DataSet::Eval)
        .unwrap()
        .iter()
        .flat_map(|t| t.acc_meas.items.iter().zip(&t.states).map(|(m, x)| m.y[0] - x[2]).collect::<Vec<_>>())
        .collect();
    assert!(res.len() >= 100_000);
    let n = res.len() as f64;
    let mean = res.iter().sum::<f64>() / n;
    let std = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.0098..=0.0102).contains(&std), "{std}");
}

#[test]
fn measurement_layout() {
    let (cfg, _) = experiment_presets();
    let t = sample_trajectory(&cfg, &mut trajectory_rng(1, DataSet::Train, 0)).unwrap();
    assert_eq!((t.pos_meas.len(), t.acc_meas.len()), (11, 101));
    for m in &t.pos_meas.items {
        assert!(t.times.contains(&m.time));
        assert_eq!(m.c.as_slice(), &POS_ROW);
    }
    for m in &t.acc_meas.items {
        assert_eq!(m.c.as_slice(), &ACC_ROW);
    }
    assert_eq!(t.pos_meas.items[0].time, 0.0);
    assert_eq!(t.pos_meas.items[10].time, 1.0);
}

#[test]
fn paper_presets() {
    let (w, s) = experiment_presets();
    assert_eq!(w.prior, MotionPrior::wnoj(1.0));
    assert_eq!(w.x0_mean, [0.0, 0.0, 1.0]);
    assert_eq!(w.p0_diag, [0.001; 3]);
    assert_eq!(s.prior, MotionPrior::singer(10.0, 1.0));
    assert_eq!(s.x0_mean, [0.0, 1.0, 0.0]);
    for c in [&w, &s] {
        assert_eq!((c.sigma_pos, c.sigma_acc), (0.01, 0.01));
        assert_eq!((c.n_train, c.n_eval), (100, 1000));
    }
}

/// Two-sample energy statistic over the pooled distance matrix, given the
/// labels of the first sample.
fn energy(dist: &[f64], n_total: usize, in_x: &[bool]) -> f64 {
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for i in 0..n_total {
        let row = &dist[i * n_total..];
        for j in i + 1..n_total {
            match (in_x[i], in_x[j]) {
                (true, true) => xx += row[j],
                (false, false) => yy += row[j],
                _ => xy += row[j],
            }
        }
    }
    let n = in_x.iter().filter(|&&b| b).count() as f64;
    let m = n_total as f64 - n;
    2.0 * xy / (n * m) - 2.0 * xx / (n * n) - 2.0 * yy / (m * m)
}

#[test]
fn sequential_sampling_matches_lifted_gaussian() {
    const DRAWS: usize = 2000;
    const PERMUTATIONS: usize = 199;
    let (mut cfg, _) = experiment_presets();
    cfg.prior = MotionPrior::singer(3.0, 2.0);
    cfg.duration = 0.5;
    cfg.n_eval = DRAWS;
    let times = cfg.grid();
    let (mean, cov) = dense_prior(&cfg.prior, &times, &cfg.x0(), &cfg.p0());
    let last = times.len() - 1;
    let m = mean.rows(3 * last, 3).into_owned();
    let c = cov.view((3 * last, 3 * last), (3, 3)).into_owned();
    let whiten = c.clone().cholesky().unwrap().l().try_inverse().unwrap();

    let mut r = rng(77);
    let mut pooled: Vec<DVector<f64>> =
        generate(&cfg, DataSet::Eval).unwrap().iter().map(|t| &whiten * (t.states.last().unwrap() - &m)).collect();
    pooled.extend((0..DRAWS).map(|_| &whiten * sample_gaussian(&c, &mut r)));

    let n_total = pooled.len();
    let mut dist = vec![0.0; n_total * n_total];
    for i in 0..n_total {
        for j in i + 1..n_total {
            dist[i * n_total + j] = (&pooled[i] - &pooled[j]).norm();
        }
    }
    let mut labels: Vec<bool> = (0..n_total).map(|i| i < DRAWS).collect();
    let observed = energy(&dist, n_total, &labels);
    let mut exceed = 0;
    for _ in 0..PERMUTATIONS {
        labels.shuffle(&mut r);
        if energy(&dist, n_total, &labels) >= observed {
            exceed += 1;
        }
    }
    let p_value = (exceed + 1) as f64 / (PERMUTATIONS + 1) as f64;
    assert!(p_value > 0.01, "p = {p_value}");
}
