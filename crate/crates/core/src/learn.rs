//! Hyperparameter learning from training trajectories.
//!
//! - Input covariance of the preintegration baseline: one-dimensional maximum
//!   likelihood over the windowed motion errors.
//! - Singer `(α, σ²)` from noiseless states: gradient descent on `ln α` with
//!   `σ²` set to its closed-form optimum at every iterate.
//! - Singer `(α, σ²)` from noisy states with known covariance: gradient descent
//!   on `(ln α, ln σ²)` of the whole-trajectory likelihood of the differenced
//!   observations, whose covariance is block-tridiagonal.
//!
//! Objectives are averaged over all intervals in the training set so that
//! tolerances do not depend on its size.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocktri::{BlockTriDiagSPD, BlockVector};
use crate::error::{Error, Result};
use crate::preint::classic_preintegrate;
use crate::priors::{q_alpha_jacobian, singer_phi, singer_q_unit, SingerParams};
use crate::sim::SimTrajectory;

/// States (or noisy state observations) on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSeries {
    pub times: Vec<f64>,
    pub states: Vec<Vector3<f64>>,
}

impl StateSeries {
    pub fn from_trajectory(t: &SimTrajectory) -> Self {
        Self { times: t.times.clone(), states: t.states.iter().map(|x| Vector3::new(x[0], x[1], x[2])).collect() }
    }

    fn intervals(&self) -> usize {
        self.times.len().saturating_sub(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub initial_step: f64,
}

impl Default for GdOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6, armijo_c: 1e-4, initial_step: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<P> {
    pub params: P,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iters = 0;
    while hi - lo > tol {
        iters += 1;
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (0.5 * (lo + hi), iters)
}

/// Windowed input-model residuals, reduced to the two scalars per window the
/// likelihood needs: `eᵀS⁻¹e` and `ln|S|`, with `Σ = q S`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTrainingData {
    pub mahalanobis: Vec<f64>,
    pub log_det: Vec<f64>,
}

impl InputTrainingData {
    pub fn from_trajectories(trajs: &[SimTrajectory]) -> Result<Self> {
        let per_traj: Vec<Vec<(f64, f64)>> = trajs
            .par_iter()
            .map(|t| {
                let ends = t.endpoint_times();
                let truth = t.states_at(&ends)?;
                ends.windows(2)
                    .zip(truth.windows(2))
                    .map(|(w, x)| {
                        let f = classic_preintegrate(&t.acc_meas, (w[0], w[1]), 1.0)?;
                        let e = f.error(&x[0].rows(0, 2).into_owned(), &x[1].rows(0, 2).into_owned());
                        let ch = f.sigma.clone().cholesky().ok_or(Error::SingularCovariance)?;
                        let m = e.dot(&ch.solve(&e));
                        Ok((m, ch.ln_determinant()))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let (mahalanobis, log_det) = per_traj.into_iter().flatten().unzip();
        Ok(Self { mahalanobis, log_det })
    }

    pub fn len(&self) -> usize {
        self.mahalanobis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mahalanobis.is_empty()
    }

    /// Mean negative log-likelihood per window (constants dropped).
    pub fn objective(&self, q: f64) -> f64 {
        let n = self.len() as f64;
        let dim = 2.0;
        let sum: f64 = self.mahalanobis.iter().zip(&self.log_det).map(|(m, l)| dim * q.ln() + l + m / q).sum();
        0.5 * sum / n
    }
}

/// Maximum-likelihood input variance over `[1e-8, 1e2]`.
pub fn train_input_covariance(trajs: &[SimTrajectory]) -> Result<TrainReport<f64>> {
    let data = InputTrainingData::from_trajectories(trajs)?;
    train_input_covariance_from(&data)
}

pub fn train_input_covariance_from(data: &InputTrainingData) -> Result<TrainReport<f64>> {
    if data.is_empty() || data.mahalanobis.iter().all(|&m| m == 0.0) {
        return Err(Error::DegenerateData("no motion residuals to fit".into()));
    }
    let (ln_q, iters) = golden_section(|s| data.objective(s.exp()), 1e-8f64.ln(), 1e2f64.ln(), 1e-10);
    let q = ln_q.exp();
    let objective = data.objective(q);
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(TrainReport {
        params: q,
        objective,
        iterations: iters,
        grad_norm: 0.0,
        converged: true,
        trace: vec![TraceEntry { iter: iters, objective, grad_norm: 0.0, params: vec![q] }],
    })
}

/// Singer kernels for one interval length.
#[derive(Clone, Debug)]
struct Kernel {
    phi: Matrix3<f64>,
    dphi: Matrix3<f64>,
    u: Matrix3<f64>,
    uinv: Matrix3<f64>,
    du: Matrix3<f64>,
    log_det_u: f64,
}

impl Kernel {
    fn new(dt: f64, alpha: f64) -> Result<Self> {
        let u = singer_q_unit(dt, alpha)?;
        let ch = u.cholesky().ok_or(Error::NotPositiveDefinite { block: 0 })?;
        let jac = q_alpha_jacobian(dt, alpha)?;
        Ok(Self {
            phi: singer_phi(dt, alpha)?,
            dphi: jac.dphi,
            u,
            uinv: ch.inverse(),
            du: jac.dq,
            log_det_u: 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        })
    }
}

fn kernel_table(data: &[StateSeries], alpha: f64) -> Result<HashMap<u64, Kernel>> {
    let mut table = HashMap::new();
    for s in data {
        for w in s.times.windows(2) {
            let dt = w[1] - w[0];
            if let std::collections::hash_map::Entry::Vacant(e) = table.entry(dt.to_bits()) {
                e.insert(Kernel::new(dt, alpha)?);
            }
        }
    }
    Ok(table)
}

/// Sums over all intervals of `eᵀU⁻¹e`, `2eᵀU⁻¹∂e − eᵀU⁻¹∂U U⁻¹e`,
/// `tr(U⁻¹∂U)` and `ln|U|`.
#[derive(Clone, Copy, Debug, Default)]
struct NoiselessSums {
    m: f64,
    g: f64,
    tr: f64,
    log_det: f64,
    n: f64,
}

impl std::ops::Add for NoiselessSums {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            m: self.m + o.m,
            g: self.g + o.g,
            tr: self.tr + o.tr,
            log_det: self.log_det + o.log_det,
            n: self.n + o.n,
        }
    }
}

fn noiseless_sums(data: &[StateSeries], alpha: f64) -> Result<NoiselessSums> {
    let table = kernel_table(data, alpha)?;
    let per: Vec<NoiselessSums> = data
        .par_iter()
        .map(|s| {
            let mut acc = NoiselessSums::default();
            for (w, x) in s.times.windows(2).zip(s.states.windows(2)) {
                let k = &table[&(w[1] - w[0]).to_bits()];
                let e = x[1] - k.phi * x[0];
                let de = -(k.dphi * x[0]);
                let ue = k.uinv * e;
                acc.m += e.dot(&ue);
                acc.g += 2.0 * ue.dot(&de) - ue.dot(&(k.du * ue));
                acc.tr += (k.uinv * k.du).trace();
                acc.log_det += k.log_det_u;
                acc.n += 1.0;
            }
            acc
        })
        .collect();
    // fixed-order reduction keeps results independent of the thread count
    Ok(per.into_iter().fold(NoiselessSums::default(), |a, b| a + b))
}

fn check_series(data: &[StateSeries]) -> Result<()> {
    if data.iter().map(StateSeries::intervals).sum::<usize>() == 0 {
        return Err(Error::DegenerateData("no intervals in training data".into()));
    }
    for s in data {
        if s.times.len() != s.states.len() {
            return Err(Error::DimensionMismatch { expected: s.times.len(), got: s.states.len() });
        }
        if s.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("training times must increase".into()));
        }
    }
    Ok(())
}

/// Mean motion-error negative log-likelihood per interval and its gradient
/// `[∂J/∂α, ∂J/∂σ²]`, for noiseless states.
pub fn singer_objective(data: &[StateSeries], params: SingerParams) -> Result<(f64, [f64; 2])> {
    params.validate()?;
    check_series(data)?;
    let s = noiseless_sums(data, params.alpha)?;
    let s2 = params.sigma2;
    let j = 0.5 * (s.m / s2 + 3.0 * s.n * s2.ln() + s.log_det) / s.n;
    let d_alpha = 0.5 * (s.g / s2 + s.tr) / s.n;
    let d_sigma2 = 0.5 * (-s.m / (s2 * s2) + 3.0 * s.n / s2) / s.n;
    if !(j.is_finite() && d_alpha.is_finite() && d_sigma2.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    Ok((j, [d_alpha, d_sigma2]))
}

/// Closed-form optimal `σ²` for a fixed `α`.
pub fn optimal_sigma2(data: &[StateSeries], alpha: f64) -> Result<f64> {
    check_series(data)?;
    let s = noiseless_sums(data, alpha)?;
    if s.m <= 0.0 {
        return Err(Error::DegenerateData("all motion errors vanish".into()));
    }
    Ok(s.m / (3.0 * s.n))
}

struct Descent {
    x: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceEntry>,
}

/// Backtracking gradient descent on a smooth objective of unconstrained
/// coordinates. `eval` returns the objective and its gradient.
fn descend(mut x: Vec<f64>, opts: &GdOptions, eval: impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>) -> Result<Descent> {
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut f, mut g) = eval(&x)?;
    let mut step = opts.initial_step;
    let mut trace = vec![TraceEntry { iter: 0, objective: f, grad_norm: norm(&g), params: x.clone() }];
    let mut iter = 0;
    let mut converged = norm(&g) < opts.grad_tol;
    while !converged && iter < opts.max_iter {
        iter += 1;
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = None;
        while step > 1e-20 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            match eval(&trial) {
                Ok((ft, gt)) if ft <= f - opts.armijo_c * step * gg => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                // overshooting into a non-finite region counts as a failed trial
                Ok(_) | Err(Error::NonFiniteObjective | Error::NotPositiveDefinite { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // no descent possible at machine precision: stationary
            converged = true;
            break;
        };
        x = xn;
        f = fnew;
        g = gnew;
        step *= 2.0;
        trace.push(TraceEntry { iter, objective: f, grad_norm: norm(&g), params: x.clone() });
        converged = norm(&g) < opts.grad_tol;
    }
    let converged = converged || norm(&g) < opts.grad_tol;
    Ok(Descent { x, objective: f, iterations: iter, converged, trace })
}

/// Learn `(α, σ²)` from noiseless full-rate states.
pub fn train_singer_noiseless(
    data: &[StateSeries],
    init: SingerParams,
    opts: &GdOptions,
) -> Result<TrainReport<SingerParams>> {
    init.validate()?;
    check_series(data)?;
    if init.alpha <= 0.0 {
        return Err(Error::InvalidParameter("initial alpha must be > 0 for log-space descent".into()));
    }
    // profile out σ²: at its optimum ∂J/∂σ² = 0, so the total derivative in
    // ln α is α ∂J/∂α
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let alpha = x[0].exp();
        let s2 = optimal_sigma2(data, alpha)?;
        let (j, g) = singer_objective(data, SingerParams { alpha, sigma2: s2 })?;
        Ok((j, vec![alpha * g[0]]))
    };
    let Descent { x, objective: f, iterations: iters, converged, mut trace } =
        descend(vec![init.alpha.ln()], opts, eval)?;
    let alpha = x[0].exp();
    let sigma2 = optimal_sigma2(data, alpha)?;
    for t in &mut trace {
        let a = t.params[0].exp();
        t.params = vec![a, optimal_sigma2(data, a)?];
    }
    Ok(TrainReport {
        params: SingerParams { alpha, sigma2 },
        objective: f,
        iterations: iters,
        grad_norm: trace.last().map_or(0.0, |t| t.grad_norm),
        converged,
        trace,
    })
}

/// Differenced observations `e_k = y_k − Φ y_{k−1}` and their covariance for
/// one noisy series.
struct NoisySystem {
    e: BlockVector,
    de: BlockVector,
    sigma: BlockTriDiagSPD,
    d_alpha: BlockTriDiagSPD,
    d_sigma2: BlockTriDiagSPD,
}

fn dm(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

fn dv(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn noisy_system(s: &StateSeries, r: &Matrix3<f64>, params: SingerParams, table: &HashMap<u64, Kernel>) -> NoisySystem {
    let kk = s.intervals();
    let mut e = Vec::with_capacity(kk);
    let mut de = Vec::with_capacity(kk);
    let mut diag = Vec::with_capacity(kk);
    let mut lower = Vec::with_capacity(kk.saturating_sub(1));
    let mut da_diag = Vec::with_capacity(kk);
    let mut da_lower = Vec::with_capacity(kk.saturating_sub(1));
    let mut ds_diag = Vec::with_capacity(kk);
    let kernels: Vec<&Kernel> = s.times.windows(2).map(|w| &table[&(w[1] - w[0]).to_bits()]).collect();
    for (k, ker) in kernels.iter().enumerate() {
        let (y0, y1) = (&s.states[k], &s.states[k + 1]);
        e.push(dv(&(y1 - ker.phi * y0)));
        de.push(dv(&-(ker.dphi * y0)));
        let d = r + ker.phi * r * ker.phi.transpose() + ker.u * params.sigma2;
        diag.push(dm(&d));
        let dd = ker.dphi * r * ker.phi.transpose() + ker.phi * r * ker.dphi.transpose() + ker.du * params.sigma2;
        da_diag.push(dm(&dd));
        ds_diag.push(dm(&ker.u));
        if let Some(next) = kernels.get(k + 1) {
            // block (k+1, k) = −Φ_{k+1} R
            lower.push(dm(&-(next.phi * r)));
            da_lower.push(dm(&-(next.dphi * r)));
        }
    }
    let zeros = vec![DMatrix::zeros(3, 3); kk.saturating_sub(1)];
    NoisySystem {
        e: BlockVector::new(e),
        de: BlockVector::new(de),
        sigma: BlockTriDiagSPD::new(diag, lower).expect("consistent block sizes"),
        d_alpha: BlockTriDiagSPD::new(da_diag, da_lower).expect("consistent block sizes"),
        d_sigma2: BlockTriDiagSPD::new(ds_diag, zeros).expect("consistent block sizes"),
    }
}

/// `tr(A B)` where only the tridiagonal band of the symmetric `A` is known and
/// `B` is symmetric block-tridiagonal.
pub fn banded_trace(a: &BlockTriDiagSPD, b: &BlockTriDiagSPD) -> f64 {
    let diag: f64 = a.diag().iter().zip(b.diag()).map(|(x, y)| x.component_mul(y).sum()).sum();
    let off: f64 = a.lower().iter().zip(b.lower()).map(|(x, y)| x.component_mul(y).sum()).sum();
    diag + 2.0 * off
}

/// Mean per-interval negative log-likelihood of noisy ground truth
/// (the `ln 2π` constant dropped) and its gradient `[∂J/∂α, ∂J/∂σ²]`.
pub fn noisy_gt_objective(data: &[StateSeries], r: &Matrix3<f64>, params: SingerParams) -> Result<(f64, [f64; 2])> {
    params.validate()?;
    check_series(data)?;
    let table = kernel_table(data, params.alpha)?;
    let per: Vec<(f64, f64, f64, f64)> = data
        .par_iter()
        .filter(|s| s.intervals() > 0)
        .map(|s| {
            let sys = noisy_system(s, r, params, &table);
            let f = sys.sigma.factorize()?;
            let z = f.solve(&sys.e)?;
            let band = f.partial_inverse();
            let quad = |m: &BlockTriDiagSPD| -> Result<f64> { Ok(m.mul_vec(&z)?.to_dense().dot(&z.to_dense())) };
            let zd = z.to_dense();
            let j = 0.5 * zd.dot(&sys.e.to_dense()) + 0.5 * f.log_det();
            let ga = -0.5 * quad(&sys.d_alpha)? + zd.dot(&sys.de.to_dense()) + 0.5 * banded_trace(&band, &sys.d_alpha);
            let gs = -0.5 * quad(&sys.d_sigma2)? + 0.5 * banded_trace(&band, &sys.d_sigma2);
            Ok((j, ga, gs, s.intervals() as f64))
        })
        .collect::<Result<_>>()?;
    let (j, ga, gs, n) =
        per.into_iter().fold((0.0, 0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    let out = (j / n, [ga / n, gs / n]);
    if !(out.0.is_finite() && out.1.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFiniteObjective);
    }
    Ok(out)
}

/// Learn `(α, σ²)` from noisy state observations with fixed covariance `r`.
pub fn train_singer_noisy_gt(
    data: &[StateSeries],
    r: &Matrix3<f64>,
    init: SingerParams,
    opts: &GdOptions,
) -> Result<TrainReport<SingerParams>> {
    init.validate()?;
    if init.alpha <= 0.0 {
        return Err(Error::InvalidParameter("initial alpha must be > 0 for log-space descent".into()));
    }
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = SingerParams { alpha: x[0].exp(), sigma2: x[1].exp() };
        let (j, g) = noisy_gt_objective(data, r, p)?;
        Ok((j, vec![p.alpha * g[0], p.sigma2 * g[1]]))
    };
    let Descent { x, objective: f, iterations: iters, converged, mut trace } =
        descend(vec![init.alpha.ln(), init.sigma2.ln()], opts, eval)?;
    for t in &mut trace {
        t.params = t.params.iter().map(|v| v.exp()).collect();
    }
    Ok(TrainReport {
        params: SingerParams { alpha: x[0].exp(), sigma2: x[1].exp() },
        objective: f,
        iterations: iters,
        grad_norm: trace.last().map_or(0.0, |t| t.grad_norm),
        converged,
        trace,
    })
}
