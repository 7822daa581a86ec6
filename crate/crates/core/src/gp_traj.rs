//! Lifted GP prior over a knot grid, batch posterior with unary factors, and
//! posterior interpolation between knots.
//!
//! The prior is stored by its Markov parts (per-interval `Φ`, `Q_k`, the head
//! `N(x̌₀, P̌₀)`) plus the propagated knot means. Its inverse kernel is
//! assembled straight into block-tridiagonal form, so solving the posterior is
//! linear in the number of knots. Interpolation only touches the two knots
//! bracketing the query.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::blocktri::{BlockCholesky, BlockTriDiagSPD, BlockVector};
use crate::error::{Error, Result};
use crate::priors::{IntervalModel, MotionPrior, PriorKind};

/// Relative tolerance used to match a timestamp to a knot time.
pub const TIME_TOL: f64 = 1e-9;

pub fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Linear unary observation `y = C x(t) + n`, `n ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub time: f64,
    pub c: DMatrix<f64>,
    pub y: DVector<f64>,
    pub r: DMatrix<f64>,
}

impl Measurement {
    /// Scalar observation of `row · x(t)` with variance `var`.
    pub fn scalar(time: f64, row: &[f64], y: f64, var: f64) -> Self {
        Self {
            time,
            c: DMatrix::from_row_slice(1, row.len(), row),
            y: DVector::from_element(1, y),
            r: DMatrix::from_element(1, 1, var),
        }
    }

    /// Information contribution `(CᵀR⁻¹C, CᵀR⁻¹)`.
    fn information(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let rinv = spd_inverse(&self.r).ok_or(Error::SingularCovariance)?;
        let ct_rinv = self.c.tr_mul(&rinv);
        Ok((&ct_rinv * &self.c, ct_rinv))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementStream {
    pub items: Vec<Measurement>,
}

impl MeasurementStream {
    pub fn new(items: Vec<Measurement>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items with `lo < t <= hi` (or `lo <= t <= hi` when `include_lo`).
    pub fn window(&self, lo: f64, hi: f64, include_lo: bool) -> MeasurementStream {
        MeasurementStream {
            items: self
                .items
                .iter()
                .filter(|m| {
                    let above = if include_lo {
                        m.time > lo || same_time(m.time, lo)
                    } else {
                        m.time > lo && !same_time(m.time, lo)
                    };
                    above && (m.time < hi || same_time(m.time, hi))
                })
                .cloned()
                .collect(),
        }
    }
}

/// Inverse of an SPD matrix, equilibrated to unit diagonal first so that
/// badly scaled states (position next to acceleration) keep their accuracy.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut s = DVector::zeros(n);
    for i in 0..n {
        let d = m[(i, i)];
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        s[i] = d.sqrt().recip();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * s[i] * s[j]);
    let inv = Cholesky::new(scaled)?.inverse();
    Some(DMatrix::from_fn(n, n, |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)]) * s[i] * s[j]))
}

/// Gaussian prior over the knot states of a Markov trajectory.
#[derive(Clone, Debug)]
pub struct LiftedPrior {
    kind: PriorKind,
    motion: Option<MotionPrior>,
    times: Vec<f64>,
    intervals: Vec<IntervalModel>,
    x0_mean: DVector<f64>,
    p0: DMatrix<f64>,
    shifts: Option<Vec<DVector<f64>>>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidGrid("no knot times".into()));
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidGrid(format!("non-finite knot time {t}")));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!("knot times must be strictly increasing ({} then {})", w[0], w[1])));
    }
    Ok(())
}

impl LiftedPrior {
    /// Prior from a continuous-time motion model with zero exogenous input.
    pub fn build(motion: &MotionPrior, times: &[f64], x0_mean: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        motion.validate()?;
        check_grid(times)?;
        let intervals = times.windows(2).map(|w| motion.interval(w[1] - w[0])).collect::<Result<Vec<_>>>()?;
        Self::assemble(motion.kind(), Some(motion.clone()), times, intervals, x0_mean, p0, None)
    }

    /// Prior from explicit per-interval models, with optional mean shifts
    /// `x̌_k = Φ_k x̌_{k-1} + shift_k` (one per interval).
    pub fn from_intervals(
        kind: PriorKind,
        times: &[f64],
        intervals: Vec<IntervalModel>,
        x0_mean: DVector<f64>,
        p0: DMatrix<f64>,
        shifts: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        check_grid(times)?;
        Self::assemble(kind, None, times, intervals, x0_mean, p0, shifts)
    }

    fn assemble(
        kind: PriorKind,
        motion: Option<MotionPrior>,
        times: &[f64],
        intervals: Vec<IntervalModel>,
        x0_mean: DVector<f64>,
        p0: DMatrix<f64>,
        shifts: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        let d = x0_mean.len();
        if p0.nrows() != d || p0.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p0.nrows() });
        }
        if intervals.len() + 1 != times.len() {
            return Err(Error::DimensionMismatch { expected: times.len() - 1, got: intervals.len() });
        }
        if let Some(iv) = intervals.iter().find(|iv| iv.phi.nrows() != d || iv.q.nrows() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: iv.phi.nrows() });
        }
        if let Some(s) = &shifts {
            if s.len() != intervals.len() {
                return Err(Error::DimensionMismatch { expected: intervals.len(), got: s.len() });
            }
        }
        let mut means = Vec::with_capacity(times.len());
        let mut covs = Vec::with_capacity(times.len());
        means.push(x0_mean.clone());
        covs.push(p0.clone());
        for (k, iv) in intervals.iter().enumerate() {
            let mut m = &iv.phi * &means[k];
            if let Some(s) = &shifts {
                m += &s[k];
            }
            let c = &iv.phi * &covs[k] * iv.phi.transpose() + &iv.q;
            means.push(m);
            covs.push((&c + c.transpose()) * 0.5);
        }
        Ok(Self { kind, motion, times: times.to_vec(), intervals, x0_mean, p0, shifts, means, covs })
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn motion(&self) -> Option<&MotionPrior> {
        self.motion.as_ref()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn intervals(&self) -> &[IntervalModel] {
        &self.intervals
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    /// Prior knot means `x̌(t_k)`.
    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    /// Prior marginal covariances `P̌(t_k, t_k)`.
    pub fn marginal_covs(&self) -> &[DMatrix<f64>] {
        &self.covs
    }

    pub fn n_knots(&self) -> usize {
        self.times.len()
    }

    pub fn state_dim(&self) -> usize {
        self.x0_mean.len()
    }

    /// Index of the knot at time `t`.
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&x| x < t);
        [i.checked_sub(1), Some(i)].into_iter().flatten().find(|&j| j < self.times.len() && same_time(self.times[j], t))
    }

    /// `P̌⁻¹ = A⁻ᵀ Q⁻¹ A⁻¹` in block-tridiagonal form.
    pub fn information(&self) -> Result<BlockTriDiagSPD> {
        let n = self.n_knots();
        let d = self.state_dim();
        let mut info = BlockTriDiagSPD::zeros(n, d);
        info.diag_mut()[0] = spd_inverse(&self.p0).ok_or(Error::NotPositiveDefinite { block: 0 })?;
        for (k, iv) in self.intervals.iter().enumerate() {
            let qinv = spd_inverse(&iv.q).ok_or(Error::NotPositiveDefinite { block: k + 1 })?;
            let qinv_phi = &qinv * &iv.phi;
            info.diag_mut()[k] += iv.phi.tr_mul(&qinv_phi);
            info.diag_mut()[k + 1] += &qinv;
            info.lower_mut()[k] = -qinv_phi;
        }
        Ok(info)
    }

    fn motion_or_err(&self) -> Result<&MotionPrior> {
        self.motion
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("prior was not built from a continuous-time motion model".into()))
    }

    /// `Λ(τ)`, `Ψ(τ)` for the interval starting at knot `k`.
    pub fn interp_weights_in(&self, k: usize, tau: f64) -> Result<InterpWeights> {
        let d = self.state_dim();
        let n = self.n_knots();
        if k >= n {
            return Err(Error::OutOfSpan(tau));
        }
        let eye = DMatrix::identity(d, d);
        let zero = DMatrix::zeros(d, d);
        if same_time(tau, self.times[k]) {
            return Ok(InterpWeights { k, lambda: eye.clone(), psi: zero.clone(), q_tau: zero, phi_tau: eye });
        }
        if k + 1 >= n || tau < self.times[k] || tau > self.times[k + 1] {
            return Err(Error::OutOfSpan(tau));
        }
        let iv = &self.intervals[k];
        if same_time(tau, self.times[k + 1]) {
            return Ok(InterpWeights { k, lambda: zero, psi: eye, q_tau: iv.q.clone(), phi_tau: iv.phi.clone() });
        }
        let motion = self.motion_or_err()?;
        let head = motion.interval(tau - self.times[k])?;
        let phi_end_tau = motion.transition(self.times[k + 1] - tau)?;
        let qinv = spd_inverse(&iv.q).ok_or(Error::NotPositiveDefinite { block: k + 1 })?;
        let psi = &head.q * phi_end_tau.transpose() * qinv;
        let lambda = &head.phi - &psi * &iv.phi;
        Ok(InterpWeights { k, lambda, psi, q_tau: head.q, phi_tau: head.phi })
    }

    /// Interpolation weights for `τ`, using the interval `[t_k, t_{k+1})` that
    /// contains it (the last interval for `τ = t_K`).
    pub fn interp_weights(&self, tau: f64) -> Result<InterpWeights> {
        let first = self.times[0];
        let last = *self.times.last().unwrap();
        let inside = (tau >= first || same_time(tau, first)) && (tau <= last || same_time(tau, last));
        if !inside {
            return Err(Error::OutOfSpan(tau));
        }
        let n = self.n_knots();
        if n == 1 {
            return self.interp_weights_in(0, tau);
        }
        let mut k = self.times.partition_point(|&t| t <= tau).saturating_sub(1);
        if let Some(j) = self.knot_index(tau) {
            k = j.min(n - 2);
        }
        self.interp_weights_in(k.min(n - 2), tau)
    }
}

/// Nonzero block columns of `P̌(τ) P̌⁻¹` for a query inside interval `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpWeights {
    pub k: usize,
    pub lambda: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    /// Prior process noise accumulated from `t_k` to `τ`.
    pub q_tau: DMatrix<f64>,
    /// `Φ(τ, t_k)`.
    pub phi_tau: DMatrix<f64>,
}

pub fn build_prior(
    motion: &MotionPrior,
    times: &[f64],
    x0_mean: DVector<f64>,
    p0: DMatrix<f64>,
) -> Result<LiftedPrior> {
    LiftedPrior::build(motion, times, x0_mean, p0)
}

pub fn prior_information(prior: &LiftedPrior) -> Result<BlockTriDiagSPD> {
    prior.information()
}

/// Batch posterior over the knots.
#[derive(Debug)]
pub struct Posterior {
    pub mean: BlockVector,
    pub info: BlockTriDiagSPD,
    pub factor: BlockCholesky,
    marginals: OnceLock<BlockTriDiagSPD>,
}

impl Posterior {
    pub fn from_information(info: BlockTriDiagSPD, rhs: &BlockVector, offset: Option<&BlockVector>) -> Result<Self> {
        let factor = info.factorize()?;
        let mut mean = factor.solve(rhs)?;
        if let Some(off) = offset {
            for (m, o) in mean.blocks.iter_mut().zip(&off.blocks) {
                *m += o;
            }
        }
        Ok(Self { mean, info, factor, marginals: OnceLock::new() })
    }

    pub fn n_knots(&self) -> usize {
        self.mean.len()
    }

    /// Tridiagonal band of the posterior covariance (computed once).
    pub fn marginals(&self) -> &BlockTriDiagSPD {
        self.marginals.get_or_init(|| self.factor.partial_inverse())
    }

    pub fn marginal_cov(&self, k: usize) -> &DMatrix<f64> {
        &self.marginals().diag()[k]
    }

    /// Dense posterior covariance over all knots.
    pub fn full_covariance(&self) -> Result<DMatrix<f64>> {
        let dense = self.info.to_dense();
        spd_inverse(&dense).ok_or(Error::SingularCovariance)
    }
}

/// Hessian `P̌⁻¹ + CᵀR⁻¹C` and right-hand side `CᵀR⁻¹(y − C x̌)` of the
/// correction `x̂ − x̌`.
fn correction_system(prior: &LiftedPrior, meas: &MeasurementStream) -> Result<(BlockTriDiagSPD, BlockVector)> {
    let d = prior.state_dim();
    let n = prior.n_knots();
    let mut info = prior.information()?;
    let mut rhs = BlockVector::zeros(n, d);
    for m in &meas.items {
        let k = prior.knot_index(m.time).ok_or(Error::MeasurementOffGrid(m.time))?;
        if m.c.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: m.c.ncols() });
        }
        let (h, ct_rinv) = m.information()?;
        info.diag_mut()[k] += h;
        let innovation = &m.y - &m.c * &prior.means()[k];
        rhs.blocks[k] += ct_rinv * innovation;
    }
    Ok((info, rhs))
}

/// Normal equations `L x̂ = r` with `L = P̌⁻¹ + CᵀR⁻¹C` and
/// `r = P̌⁻¹ x̌ + CᵀR⁻¹ y`.
pub fn normal_equations(prior: &LiftedPrior, meas: &MeasurementStream) -> Result<(BlockTriDiagSPD, BlockVector)> {
    let (info, mut rhs) = correction_system(prior, meas)?;
    // P̌⁻¹x̌ = A⁻ᵀQ⁻¹v with v = (x̌₀, shift₁, ...), which avoids forming L x̌
    rhs.blocks[0] += spd_inverse(&prior.p0).ok_or(Error::NotPositiveDefinite { block: 0 })? * &prior.x0_mean;
    if let Some(shifts) = &prior.shifts {
        for (k, (iv, s)) in prior.intervals.iter().zip(shifts).enumerate() {
            let qinv_s = spd_inverse(&iv.q).ok_or(Error::NotPositiveDefinite { block: k + 1 })? * s;
            rhs.blocks[k] -= iv.phi.tr_mul(&qinv_s);
            rhs.blocks[k + 1] += qinv_s;
        }
    }
    // the correction system holds CᵀR⁻¹(y − Cx̌); add back CᵀR⁻¹Cx̌
    for m in &meas.items {
        let k = prior.knot_index(m.time).ok_or(Error::MeasurementOffGrid(m.time))?;
        let (h, _) = m.information()?;
        rhs.blocks[k] += h * &prior.means[k];
    }
    Ok((info, rhs))
}

/// Solve `(P̌⁻¹ + CᵀR⁻¹C) x̂ = P̌⁻¹ x̌ + CᵀR⁻¹ y` with all measurements at knots.
pub fn solve_posterior(prior: &LiftedPrior, meas: &MeasurementStream) -> Result<Posterior> {
    // solve for the correction about the prior mean, which keeps x̂ = x̌ exact
    // when there is nothing to correct
    let (info, rhs) = correction_system(prior, meas)?;
    let offset = BlockVector::new(prior.means().to_vec());
    Posterior::from_information(info, &rhs, Some(&offset))
}

/// Count of knot-level blocks read during one interpolation query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InterpStats {
    pub block_reads: usize,
}

/// Posterior mean and covariance at `τ`.
pub fn interpolate(post: &Posterior, prior: &LiftedPrior, tau: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    interpolate_with_stats(post, prior, tau).map(|(m, c, _)| (m, c))
}

pub fn interpolate_with_stats(
    post: &Posterior,
    prior: &LiftedPrior,
    tau: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, InterpStats)> {
    if post.n_knots() != prior.n_knots() {
        return Err(Error::DimensionMismatch { expected: prior.n_knots(), got: post.n_knots() });
    }
    let w = prior.interp_weights(tau)?;
    let mut stats = InterpStats::default();
    let k = w.k;
    let marg = post.marginals();

    let xk = &prior.means()[k];
    let pk = &prior.marginal_covs()[k];
    let dk = &post.mean.blocks[k] - xk;
    let post_kk = &marg.diag()[k];
    stats.block_reads += 4;

    let prior_tau = &w.phi_tau * xk;
    let prior_cov_tau = &w.phi_tau * pk * w.phi_tau.transpose() + &w.q_tau;

    if k + 1 >= prior.n_knots() {
        let cov = prior_cov_tau + &w.lambda * (post_kk - pk) * w.lambda.transpose();
        return Ok((prior_tau + &w.lambda * dk, symmetrize(cov), stats));
    }

    let xk1 = &prior.means()[k + 1];
    let pk1 = &prior.marginal_covs()[k + 1];
    let dk1 = &post.mean.blocks[k + 1] - xk1;
    let post_k1 = &marg.diag()[k + 1];
    let post_k1k = &marg.lower()[k];
    stats.block_reads += 5;

    let phi = &prior.intervals()[k].phi;
    let prior_k1k = phi * pk;
    let mean = prior_tau + &w.lambda * dk + &w.psi * dk1;

    // [Λ Ψ] (P̂ − P̌)_bracket [Λ Ψ]ᵀ
    let d_kk = post_kk - pk;
    let d_k1k = post_k1k - &prior_k1k;
    let d_k1k1 = post_k1 - pk1;
    let cross = &w.psi * &d_k1k * w.lambda.transpose();
    let cov = prior_cov_tau
        + &w.lambda * d_kk * w.lambda.transpose()
        + &cross
        + cross.transpose()
        + &w.psi * d_k1k1 * w.psi.transpose();
    Ok((mean, symmetrize(cov), stats))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
