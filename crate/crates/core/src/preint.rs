//! Preintegration between low-rate endpoint states.
//!
//! Three routes to the same endpoint posterior:
//! - classic input preintegration: accelerations drive a constant-velocity
//!   model and are summarized into a relative factor `(Δx, Σ)`;
//! - GP preintegration: the window posterior under a motion prior is queried
//!   at its endpoints, giving a joint Gaussian factor on the pair;
//! - Schur marginalization of the full-rate information system.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::blocktri::{BlockTriDiagSPD, BlockVector};
use crate::error::{Error, Result};
use crate::gp_traj::{same_time, spd_inverse, LiftedPrior, MeasurementStream, Posterior};
use crate::priors::{wnoa_phi_q, IntervalModel, MotionPrior, PriorKind};

/// Relative motion factor from classic input preintegration.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPreintFactor {
    pub t_start: f64,
    pub t_end: f64,
    pub delta_x: DVector<f64>,
    pub phi_window: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl InputPreintFactor {
    /// `Σ / q`: the geometric part of the covariance, independent of the
    /// input variance.
    pub fn unit_sigma(&self, q_input: f64) -> DMatrix<f64> {
        &self.sigma / q_input
    }

    /// Error `x_k − Φ x_{k−1} − Δx`.
    pub fn error(&self, x_prev: &DVector<f64>, x_next: &DVector<f64>) -> DVector<f64> {
        x_next - &self.phi_window * x_prev - &self.delta_x
    }
}

/// Input samples `(τ_n, u_n)` for `n = 1..J` with `t_start < τ_n <= t_end`.
fn input_samples(accel: &MeasurementStream, t_start: f64, t_end: f64) -> Vec<(f64, f64)> {
    accel.window(t_start, t_end, false).items.iter().map(|m| (m.time, m.y[0])).collect()
}

/// Preintegrate the accelerations in `(t_start, t_end]` into one factor.
///
/// Each sample `u_n` drives the substep `(τ_{n−1}, τ_n]`, with `τ_0 = t_start`.
/// The last sample must sit on `t_end`.
pub fn classic_preintegrate(accel: &MeasurementStream, window: (f64, f64), q_input: f64) -> Result<InputPreintFactor> {
    let (t_start, t_end) = window;
    if !(q_input > 0.0 && q_input.is_finite()) {
        return Err(Error::InvalidParameter(format!("input variance {q_input} must be > 0")));
    }
    if t_end.is_nan() || t_start.is_nan() || t_end <= t_start {
        return Err(Error::EmptyWindow(t_start, t_end));
    }
    let samples = input_samples(accel, t_start, t_end);
    match samples.last() {
        Some(&(t, _)) if same_time(t, t_end) => {}
        _ => return Err(Error::EmptyWindow(t_start, t_end)),
    }
    let mut delta = Vector2::zeros();
    let mut geom = Matrix2::zeros();
    let mut prev = t_start;
    for &(tau, u) in &samples {
        let dt = tau - prev;
        let (phi, _) = wnoa_phi_q(dt, 1.0)?;
        let b = Vector2::new(0.5 * dt * dt, dt);
        delta = phi * delta + b * u;
        geom = phi * geom * phi.transpose() + b * b.transpose();
        prev = tau;
    }
    let (phi_window, _) = wnoa_phi_q(t_end - t_start, 1.0)?;
    let sigma = geom * q_input;
    Ok(InputPreintFactor {
        t_start,
        t_end,
        delta_x: DVector::from_column_slice(delta.as_slice()),
        phi_window: DMatrix::from_column_slice(2, 2, phi_window.as_slice()),
        sigma: DMatrix::from_column_slice(2, 2, sigma.as_slice()),
    })
}

fn endpoint_times<T>(items: &[T], start: impl Fn(&T) -> f64, end: impl Fn(&T) -> f64) -> Result<Vec<f64>> {
    let first = items.first().ok_or_else(|| Error::GraphMismatch("no factors".into()))?;
    let mut times = vec![start(first)];
    for (i, f) in items.iter().enumerate() {
        let prev = *times.last().unwrap();
        if !same_time(start(f), prev) {
            return Err(Error::GraphMismatch(format!(
                "factor {i} starts at {} but the previous one ends at {prev}",
                start(f)
            )));
        }
        if end(f).is_nan() || end(f) <= start(f) {
            return Err(Error::GraphMismatch(format!("factor {i} has non-increasing span")));
        }
        times.push(end(f));
    }
    Ok(times)
}

/// Prior over endpoint states implied by chained input factors.
pub fn input_lifted_prior(factors: &[InputPreintFactor], x0: DVector<f64>, p0: DMatrix<f64>) -> Result<LiftedPrior> {
    let times = endpoint_times(factors, |f| f.t_start, |f| f.t_end)?;
    let intervals = factors
        .iter()
        .map(|f| IntervalModel { dt: f.t_end - f.t_start, phi: f.phi_window.clone(), q: f.sigma.clone() })
        .collect();
    let shifts = factors.iter().map(|f| f.delta_x.clone()).collect();
    LiftedPrior::from_intervals(PriorKind::Wnoa, &times, intervals, x0, p0, Some(shifts))
}

/// Solve the endpoint graph of input factors plus position measurements.
pub fn input_endpoint_graph(
    pos_meas: &MeasurementStream,
    factors: &[InputPreintFactor],
    p0: DMatrix<f64>,
    x0: DVector<f64>,
) -> Result<Posterior> {
    let prior = input_lifted_prior(factors, x0, p0)?;
    crate::gp_traj::solve_posterior(&prior, pos_meas)
}

/// Start-of-window prior folded into a [`JointGaussianFactor`].
#[derive(Clone, Debug, PartialEq)]
pub struct StartPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Joint Gaussian on the endpoint pair of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGaussianFactor {
    pub t_start: f64,
    pub t_end: f64,
    pub x_tilde: (DVector<f64>, DVector<f64>),
    /// `2D × 2D` joint covariance of `(x_k, x_{k+1})`.
    pub p_tilde: DMatrix<f64>,
    /// Prior on `x_k` that the window solve started from. The endpoint graph
    /// divides it back out so consecutive windows do not count it twice.
    pub start_prior: StartPrior,
}

impl JointGaussianFactor {
    pub fn state_dim(&self) -> usize {
        self.x_tilde.0.len()
    }

    /// Information matrix and vector of the binary factor this window
    /// contributes, with the start prior removed.
    pub fn binary_information(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let d = self.state_dim();
        let mut info = spd_inverse(&self.p_tilde).ok_or(Error::SingularCovariance)?;
        let mut mean = DVector::zeros(2 * d);
        mean.rows_mut(0, d).copy_from(&self.x_tilde.0);
        mean.rows_mut(d, d).copy_from(&self.x_tilde.1);
        let mut eta = &info * mean;
        let prior_info = spd_inverse(&self.start_prior.cov).ok_or(Error::SingularCovariance)?;
        let prior_eta = &prior_info * &self.start_prior.mean;
        let mut head = info.view_mut((0, 0), (d, d));
        head -= &prior_info;
        let mut eta_head = eta.rows_mut(0, d);
        eta_head -= &prior_eta;
        Ok((info, eta))
    }
}

/// Window prior over `grid` starting from `N(mean, cov)` at `grid[0]`.
pub fn window_prior(motion: &MotionPrior, grid: &[f64], mean: DVector<f64>, cov: DMatrix<f64>) -> Result<LiftedPrior> {
    LiftedPrior::build(motion, grid, mean, cov)
}

/// Summarize a window of measurements into a joint factor on its endpoints.
///
/// `prior` spans the window (its first and last knots are the endpoints) and
/// every measurement must sit on one of its knots.
pub fn gp_preintegrate(prior: &LiftedPrior, meas: &MeasurementStream) -> Result<JointGaussianFactor> {
    let times = prior.times();
    let n = times.len();
    if n < 2 {
        return Err(Error::EmptyWindow(times[0], times[0]));
    }
    let d = prior.state_dim();
    let post = crate::gp_traj::solve_posterior(prior, meas)?;
    let marg = post.marginals();
    // cross block (0, J) of H⁻¹ from one block-column solve
    let mut rhs = vec![DMatrix::zeros(d, d); n];
    rhs[n - 1] = DMatrix::identity(d, d);
    let col = post.factor.solve_blocks(&rhs)?;
    let cross = &col[0];

    let mut p = DMatrix::zeros(2 * d, 2 * d);
    p.view_mut((0, 0), (d, d)).copy_from(&marg.diag()[0]);
    p.view_mut((d, d), (d, d)).copy_from(&marg.diag()[n - 1]);
    p.view_mut((0, d), (d, d)).copy_from(cross);
    p.view_mut((d, 0), (d, d)).copy_from(&cross.transpose());
    let p = (&p + p.transpose()) * 0.5;
    Ok(JointGaussianFactor {
        t_start: times[0],
        t_end: times[n - 1],
        x_tilde: (post.mean.blocks[0].clone(), post.mean.blocks[n - 1].clone()),
        p_tilde: p,
        start_prior: StartPrior { mean: prior.x0_mean().clone(), cov: prior.p0().clone() },
    })
}

/// Reduced information system over the kept knots.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub kept_indices: Vec<usize>,
    pub l_small: BlockTriDiagSPD,
    pub r_small: BlockVector,
}

impl ReducedSystem {
    pub fn solve(&self) -> Result<Posterior> {
        Posterior::from_information(self.l_small.clone(), &self.r_small, None)
    }
}

/// Marginalize every knot not in `keep` out of `L x = r`.
///
/// Each run of eliminated knots is a block-tridiagonal system of its own,
/// coupled only to the kept knots on either side, so the Schur complement
/// costs one banded solve per run and stays block-tridiagonal.
pub fn schur_marginalize(l: &BlockTriDiagSPD, r: &BlockVector, keep: &[usize]) -> Result<ReducedSystem> {
    let n = l.n_blocks();
    let d = l.block_dim();
    if r.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: r.len() });
    }
    if keep.is_empty() {
        return Err(Error::InvalidParameter("keep set is empty".into()));
    }
    if keep.windows(2).any(|w| w[1] <= w[0]) || *keep.last().unwrap() >= n {
        return Err(Error::InvalidParameter("keep indices must be sorted, unique and in range".into()));
    }
    let m = keep.len();
    let mut diag: Vec<DMatrix<f64>> = keep.iter().map(|&i| l.diag()[i].clone()).collect();
    let mut lower = vec![DMatrix::zeros(d, d); m - 1];
    let mut rs: Vec<DVector<f64>> = keep.iter().map(|&i| r.blocks[i].clone()).collect();

    // runs of eliminated knots: (first, last, kept neighbour before, kept neighbour after)
    let mut runs = Vec::new();
    let mut bounds: Vec<Option<usize>> = vec![None];
    bounds.extend((0..m).map(Some));
    bounds.push(None);
    for w in bounds.windows(2) {
        let lo = w[0].map_or(0, |j| keep[j] + 1);
        let hi = w[1].map_or(n, |j| keep[j]);
        if hi > lo {
            runs.push((lo, hi - 1, w[0], w[1]));
        } else if let (Some(a), Some(_)) = (w[0], w[1]) {
            // adjacent kept knots couple directly
            lower[a] = l.lower()[keep[a]].clone();
        }
    }

    for (lo, hi, left, right) in runs {
        let len = hi - lo + 1;
        let seg = BlockTriDiagSPD::new(l.diag()[lo..=hi].to_vec(), l.lower()[lo..hi].to_vec())?;
        let f = seg.factorize().map_err(|e| match e {
            Error::NotPositiveDefinite { block } => Error::NotPositiveDefinite { block: lo + block },
            other => other,
        })?;
        // RHS columns: [coupling to left | coupling to right | r_E]
        let width = d * (left.is_some() as usize + right.is_some() as usize) + 1;
        let mut b = vec![DMatrix::zeros(d, width); len];
        let mut col = 0;
        if left.is_some() {
            // L_{E,left}: only the first run block touches it
            b[0].view_mut((0, 0), (d, d)).copy_from(&l.lower()[lo - 1]);
            col += d;
        }
        let right_col = col;
        if right.is_some() {
            b[len - 1].view_mut((0, col), (d, d)).copy_from(&l.lower()[hi].transpose());
            col += d;
        }
        for (k, bk) in b.iter_mut().enumerate() {
            bk.column_mut(col).copy_from(&r.blocks[lo + k]);
        }
        let x = f.solve_blocks(&b)?;
        // L_{left,E} = (L_{E,left})ᵀ touches only the first run block, L_{right,E} only the last
        if let Some(a) = left {
            let coup = l.lower()[lo - 1].transpose();
            let xa = &x[0];
            diag[a] -= &coup * xa.columns(0, d);
            rs[a] -= &coup * xa.column(col);
            if right.is_some() {
                // block (right, left) −= L_{right,E} L_EE⁻¹ L_{E,left}
                lower[a] -= &l.lower()[hi] * x[len - 1].columns(0, d);
            }
        }
        if let Some(bi) = right {
            let coup_r = &l.lower()[hi];
            let xb = &x[len - 1];
            diag[bi] -= coup_r * xb.columns(right_col, d);
            rs[bi] -= coup_r * xb.column(col);
        }
    }
    for dk in &mut diag {
        *dk = (&*dk + dk.transpose()) * 0.5;
    }
    Ok(ReducedSystem {
        kept_indices: keep.to_vec(),
        l_small: BlockTriDiagSPD::new(diag, lower)?,
        r_small: BlockVector::new(rs),
    })
}

/// Solve the endpoint graph built from consecutive window factors, the head
/// prior `N(x0, p0)` on the first endpoint and position measurements at
/// endpoints.
pub fn measurement_endpoint_graph(
    windows: &[JointGaussianFactor],
    pos_meas: &MeasurementStream,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> Result<Posterior> {
    let times = endpoint_times(windows, |w| w.t_start, |w| w.t_end)?;
    let d = x0.len();
    if let Some(w) = windows.iter().find(|w| w.state_dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: w.state_dim() });
    }
    let n = times.len();
    let mut info = BlockTriDiagSPD::zeros(n, d);
    let mut rhs = BlockVector::zeros(n, d);
    let head = spd_inverse(p0).ok_or(Error::NotPositiveDefinite { block: 0 })?;
    rhs.blocks[0] += &head * x0;
    info.diag_mut()[0] += head;
    for (k, w) in windows.iter().enumerate() {
        let (h, eta) = w.binary_information()?;
        info.diag_mut()[k] += h.view((0, 0), (d, d));
        info.diag_mut()[k + 1] += h.view((d, d), (d, d));
        info.lower_mut()[k] += h.view((d, 0), (d, d));
        rhs.blocks[k] += eta.rows(0, d);
        rhs.blocks[k + 1] += eta.rows(d, d);
    }
    add_unary(&mut info, &mut rhs, &times, pos_meas)?;
    Posterior::from_information(info, &rhs, None)
}

fn add_unary(info: &mut BlockTriDiagSPD, rhs: &mut BlockVector, times: &[f64], meas: &MeasurementStream) -> Result<()> {
    let d = info.block_dim();
    for m in &meas.items {
        let k = times.iter().position(|&t| same_time(t, m.time)).ok_or(Error::MeasurementOffGrid(m.time))?;
        if m.c.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: m.c.ncols() });
        }
        let rinv = spd_inverse(&m.r).ok_or(Error::SingularCovariance)?;
        let ct_rinv = m.c.tr_mul(&rinv);
        info.diag_mut()[k] += &ct_rinv * &m.c;
        rhs.blocks[k] += ct_rinv * &m.y;
    }
    Ok(())
}

/// Knot grid of one window: its endpoints plus every measurement time inside.
pub fn window_grid(t_start: f64, t_end: f64, meas: &MeasurementStream) -> Vec<f64> {
    let mut grid = vec![t_start];
    for m in &meas.items {
        let last = *grid.last().unwrap();
        if m.time > last && !same_time(m.time, last) && m.time < t_end && !same_time(m.time, t_end) {
            grid.push(m.time);
        }
    }
    grid.push(t_end);
    grid
}

/// GP-preintegrate every window between consecutive `endpoints`.
///
/// Measurements in `(t_k, t_{k+1}]` belong to window `k` (the first window
/// also takes those at `t_0`). The window prior starts at the global prior
/// mean at `t_k` with the window's own process noise as covariance; the
/// endpoint graph divides this start prior back out, so any proper choice
/// gives the same posterior and this one keeps the window well conditioned.
pub fn preintegrate_windows(
    motion: &MotionPrior,
    endpoints: &[f64],
    meas: &MeasurementStream,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
) -> Result<Vec<JointGaussianFactor>> {
    use rayon::prelude::*;
    let global = LiftedPrior::build(motion, endpoints, x0.clone(), p0.clone())?;
    (0..endpoints.len() - 1)
        .into_par_iter()
        .map(|k| {
            let (lo, hi) = (endpoints[k], endpoints[k + 1]);
            let local = meas.window(lo, hi, k == 0);
            let grid = window_grid(lo, hi, &local);
            let start_cov = motion.interval(hi - lo)?.q;
            let prior = window_prior(motion, &grid, global.means()[k].clone(), start_cov)?;
            gp_preintegrate(&prior, &local)
        })
        .collect()
}
