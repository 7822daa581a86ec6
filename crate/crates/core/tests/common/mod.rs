//! Dense reference implementations and random instance generators shared by
//! the integration tests.

#![allow(dead_code)]

use ctgp::blocktri::{BlockTriDiagSPD, BlockVector};
use ctgp::gp_traj::{Measurement, MeasurementStream};
use ctgp::priors::MotionPrior;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest absolute entry difference over the largest absolute entry of `b`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.amax().max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.amax().max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

/// Random SPD block-tridiagonal matrix, made diagonally dominant.
pub fn random_blocktri(rng: &mut impl Rng, n: usize, d: usize) -> BlockTriDiagSPD {
    let lower: Vec<DMatrix<f64>> =
        (0..n.saturating_sub(1)).map(|_| DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))).collect();
    let diag = (0..n)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            &a * a.transpose() + DMatrix::identity(d, d) * (2.0 * d as f64 + 1.0)
        })
        .collect();
    BlockTriDiagSPD::new(diag, lower).unwrap()
}

pub fn random_block_vector(rng: &mut impl Rng, n: usize, d: usize) -> BlockVector {
    BlockVector::new((0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect())
}

/// Dense lifted prior `(x̌, P̌)` over `times` by forward propagation.
pub fn dense_prior(
    motion: &MotionPrior,
    times: &[f64],
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = x0.len();
    let n = times.len();
    // x = A w, w = (x0 + n0, w1, ..., wK), Cov(w) = blkdiag(P0, Q1, ...)
    let mut a = DMatrix::zeros(n * d, n * d);
    let mut cov_w = DMatrix::zeros(n * d, n * d);
    cov_w.view_mut((0, 0), (d, d)).copy_from(p0);
    let mut phis = Vec::new();
    for k in 1..n {
        let iv = motion.interval(times[k] - times[k - 1]).unwrap();
        cov_w.view_mut((k * d, k * d), (d, d)).copy_from(&iv.q);
        phis.push(iv.phi);
    }
    for col in 0..n {
        let mut m = DMatrix::<f64>::identity(d, d);
        a.view_mut((col * d, col * d), (d, d)).copy_from(&m);
        for row in col + 1..n {
            m = &phis[row - 1] * m;
            a.view_mut((row * d, col * d), (d, d)).copy_from(&m);
        }
    }
    let mut w_mean = DVector::zeros(n * d);
    w_mean.rows_mut(0, d).copy_from(x0);
    (&a * w_mean, &a * cov_w * a.transpose())
}

/// Dense Gaussian conditioning of a prior `(mean, cov)` on measurements at
/// `times`, in covariance form.
pub fn dense_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    times: &[f64],
    d: usize,
    meas: &MeasurementStream,
) -> (DVector<f64>, DMatrix<f64>) {
    let m: usize = meas.items.iter().map(|z| z.y.len()).sum();
    if m == 0 {
        return (mean.clone(), cov.clone());
    }
    let n = mean.len();
    let mut c = DMatrix::zeros(m, n);
    let mut r = DMatrix::zeros(m, m);
    let mut y = DVector::zeros(m);
    let mut row = 0;
    for z in &meas.items {
        let k = times.iter().position(|&t| (t - z.time).abs() < 1e-9).expect("measurement on grid");
        let h = z.y.len();
        c.view_mut((row, k * d), (h, d)).copy_from(&z.c);
        r.view_mut((row, row), (h, h)).copy_from(&z.r);
        y.rows_mut(row, h).copy_from(&z.y);
        row += h;
    }
    let s = &c * cov * c.transpose() + r;
    let gain = cov * c.transpose() * s.clone().try_inverse().unwrap();
    let post_mean = mean + &gain * (y - &c * mean);
    let post_cov = cov - &gain * &c * cov;
    (post_mean, (&post_cov + post_cov.transpose()) * 0.5)
}

/// Rows/columns of the `d`-blocks listed in `idx`.
pub fn select_blocks(m: &DMatrix<f64>, idx: &[usize], d: usize) -> DMatrix<f64> {
    let n = idx.len() * d;
    DMatrix::from_fn(n, n, |i, j| m[(idx[i / d] * d + i % d, idx[j / d] * d + j % d)])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize], d: usize) -> DVector<f64> {
    DVector::from_fn(idx.len() * d, |i, _| v[idx[i / d] * d + i % d])
}

pub fn random_motion(rng: &mut impl Rng) -> MotionPrior {
    if rng.random_bool(0.5) {
        MotionPrior::wnoj(rng.random_range(0.1..10.0))
    } else {
        MotionPrior::singer(rng.random_range(0.2..20.0), rng.random_range(0.1..10.0))
    }
}

/// A random multi-window problem on a non-uniform grid.
pub struct Instance {
    pub motion: MotionPrior,
    pub grid: Vec<f64>,
    pub endpoint_idx: Vec<usize>,
    pub x0: DVector<f64>,
    pub p0: DMatrix<f64>,
    /// Acceleration observations at a random subset of substep times.
    pub acc: MeasurementStream,
    /// Position observations at every endpoint.
    pub pos: MeasurementStream,
}

impl Instance {
    pub fn endpoints(&self) -> Vec<f64> {
        self.endpoint_idx.iter().map(|&i| self.grid[i]).collect()
    }

    pub fn all_measurements(&self) -> MeasurementStream {
        let mut items: Vec<Measurement> = self.acc.items.iter().chain(&self.pos.items).cloned().collect();
        items.sort_by(|a, b| a.time.total_cmp(&b.time));
        MeasurementStream::new(items)
    }
}

pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let motion = random_motion(rng);
    let windows = rng.random_range(2..=12);
    let mut grid = vec![0.0];
    let mut endpoint_idx = vec![0];
    for _ in 0..windows {
        let substeps = rng.random_range(2..=10);
        for _ in 0..substeps {
            let t = grid.last().unwrap() + rng.random_range(0.2..1.0);
            grid.push(t);
        }
        endpoint_idx.push(grid.len() - 1);
    }
    let x0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
    let p0 = DMatrix::from_diagonal(&DVector::from_fn(3, |_, _| rng.random_range(0.01..1.0)));
    // measurements of a trajectory drawn from the same prior
    let mut x = &x0 + ctgp::sim::sample_gaussian(&p0, rng);
    let mut truth = vec![x.clone()];
    for w in grid.windows(2) {
        let iv = motion.interval(w[1] - w[0]).unwrap();
        x = &iv.phi * x + ctgp::sim::sample_gaussian(&iv.q, rng);
        truth.push(x.clone());
    }
    let noisy = |row: usize, truth: &DVector<f64>, rng: &mut R| {
        let r: f64 = rng.random_range(1e-3..1e-1);
        let n: f64 = rng.sample(rand_distr::StandardNormal);
        let mut c = [0.0; 3];
        c[row] = 1.0;
        (c, truth[row] + r.sqrt() * n, r)
    };
    let mut acc = Vec::new();
    for (t, xt) in grid.iter().zip(&truth) {
        if rng.random_bool(0.8) {
            let (c, y, r) = noisy(2, xt, rng);
            acc.push(Measurement::scalar(*t, &c, y, r));
        }
    }
    let mut pos = Vec::new();
    for &i in &endpoint_idx {
        let (c, y, r) = noisy(0, &truth[i], rng);
        pos.push(Measurement::scalar(grid[i], &c, y, r));
    }
    Instance { motion, grid, endpoint_idx, x0, p0, acc: MeasurementStream::new(acc), pos: MeasurementStream::new(pos) }
}
