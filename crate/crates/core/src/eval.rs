//! Error statistics, NEES, chi-squared bounds, bias intervals and box-plot
//! summaries.
//!
//! Percentiles use linear interpolation between order statistics (type 7).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::{erf::erf_inv, gamma::gamma_lr};

use crate::error::{Error, Result};
use crate::estimators::EstimateResult;

/// Components compared across methods: position and velocity.
const MARGINAL_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub mean_err_pos: f64,
    pub mean_err_vel: f64,
    pub rmse_pos: f64,
    pub rmse_vel: f64,
    pub nees_marginal: f64,
    pub nees_full: f64,
    pub dof_marginal: usize,
    pub dof_full: usize,
}

impl TrajectoryMetrics {
    pub const NAMES: [&'static str; 6] =
        ["mean_err_pos", "mean_err_vel", "rmse_pos", "rmse_vel", "nees_marginal", "nees_full"];

    pub fn values(&self) -> [f64; 6] {
        [self.mean_err_pos, self.mean_err_vel, self.rmse_pos, self.rmse_vel, self.nees_marginal, self.nees_full]
    }
}

fn errors(result: &EstimateResult, truth: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    if truth.len() != result.n_knots() {
        return Err(Error::DimensionMismatch { expected: result.n_knots(), got: truth.len() });
    }
    let d = result.state_dim();
    truth
        .iter()
        .zip(&result.means)
        .map(|(x, m)| {
            if x.len() < d {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
            Ok(m - x.rows(0, d))
        })
        .collect()
}

/// Per-knot NEES over `(p, v)` marginals, averaged over all knots and
/// normalized by the degrees of freedom.
pub fn nees_marginal(result: &EstimateResult, truth: &[DVector<f64>]) -> Result<(f64, usize)> {
    let errs = errors(result, truth)?;
    let mut sum = 0.0;
    for (e, p) in errs.iter().zip(&result.marginal_covs) {
        let e2 = e.rows(0, MARGINAL_DIM).into_owned();
        let p2 = p.view((0, 0), (MARGINAL_DIM, MARGINAL_DIM)).into_owned();
        let ch = p2.cholesky().ok_or(Error::SingularCovariance)?;
        sum += e2.dot(&ch.solve(&e2));
    }
    let dof = errs.len() * MARGINAL_DIM;
    Ok((sum / dof as f64, dof))
}

/// NEES of the stacked error under the full posterior covariance, per dof.
pub fn nees_full(result: &EstimateResult, truth: &[DVector<f64>]) -> Result<(f64, usize)> {
    let errs = errors(result, truth)?;
    let e = crate::blocktri::BlockVector::new(errs);
    // eᵀ P⁻¹ e with P⁻¹ the posterior information
    let he = result.info.mul_vec(&e)?;
    let q = he.to_dense().dot(&e.to_dense());
    if !q.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let dof = result.n_knots() * result.state_dim();
    Ok((q / dof as f64, dof))
}

/// `eᵀ P⁻¹ e / dof` for an explicit dense covariance.
pub fn nees_dense(e: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let ch = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    Ok(e.dot(&ch.solve(e)) / e.len() as f64)
}

pub fn trajectory_metrics(result: &EstimateResult, truth: &[DVector<f64>]) -> Result<TrajectoryMetrics> {
    let errs = errors(result, truth)?;
    let n = errs.len() as f64;
    let mean = |i: usize| errs.iter().map(|e| e[i]).sum::<f64>() / n;
    let rms = |i: usize| (errs.iter().map(|e| e[i] * e[i]).sum::<f64>() / n).sqrt();
    let (nm, dm) = nees_marginal(result, truth)?;
    let (nf, df) = nees_full(result, truth)?;
    Ok(TrajectoryMetrics {
        mean_err_pos: mean(0),
        mean_err_vel: mean(1),
        rmse_pos: rms(0),
        rmse_vel: rms(1),
        nees_marginal: nm,
        nees_full: nf,
        dof_marginal: dm,
        dof_full: df,
    })
}

/// CDF of the chi-squared distribution.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(dof as f64 / 2.0, x / 2.0)
    }
}

/// Quantile of `χ²(dof)` at probability `p`, by bisection on the CDF.
pub fn chi2_bound(p: f64, dof: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || dof == 0 {
        return Err(Error::InvalidParameter(format!("chi2_bound needs 0 < p < 1 and dof >= 1 (p={p}, dof={dof})")));
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided band for a per-dof NEES value at confidence `level`.
pub fn nees_band(dof: usize, level: f64) -> Result<(f64, f64)> {
    let tail = 0.5 * (1.0 - level);
    let d = dof as f64;
    Ok((chi2_bound(tail, dof)? / d, chi2_bound(1.0 - tail, dof)? / d))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTest {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub pass: bool,
}

/// Normal-approximation confidence interval for the mean of per-trajectory
/// mean errors; passes when it covers zero.
pub fn bias_test(values: &[f64], level: f64) -> Result<BiasTest> {
    if values.len() < 2 {
        return Err(Error::DegenerateData("bias test needs at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = normal_quantile(0.5 + 0.5 * level) * (var / n).sqrt();
    let (ci_lo, ci_hi) = (mean - half, mean + half);
    Ok(BiasTest { mean, ci_lo, ci_hi, pass: ci_lo <= 0.0 && 0.0 <= ci_hi })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
    pub mean: f64,
}

/// Type-7 quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::DegenerateData("box statistics of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateData("NaN in sample".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&s, p);
    let (whisker_lo, whisker_hi) = (q(0.025), q(0.975));
    Ok(BoxStats {
        median: q(0.5),
        q1: q(0.25),
        q3: q(0.75),
        whisker_lo,
        whisker_hi,
        outliers: s.iter().copied().filter(|&v| v < whisker_lo || v > whisker_hi).collect(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Aggregate statistics of one method over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub n: usize,
    pub bias_pos: BiasTest,
    pub bias_vel: BiasTest,
    pub nees_marginal_mean: f64,
    pub nees_marginal_band: (f64, f64),
    pub nees_full_mean: f64,
    pub nees_full_band: (f64, f64),
    pub rmse_pos_mean: f64,
    pub rmse_vel_mean: f64,
    /// Box statistics per metric, in [`TrajectoryMetrics::NAMES`] order.
    pub boxes: Vec<BoxStats>,
}

pub fn summarize(metrics: &[TrajectoryMetrics], level: f64) -> Result<MethodSummary> {
    let first = metrics.first().ok_or_else(|| Error::DegenerateData("no trajectories to summarize".into()))?;
    if metrics.iter().any(|m| m.dof_full != first.dof_full || m.dof_marginal != first.dof_marginal) {
        return Err(Error::DegenerateData("trajectories have different numbers of knots".into()));
    }
    let column = |i: usize| metrics.iter().map(|m| m.values()[i]).collect::<Vec<_>>();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let boxes = (0..TrajectoryMetrics::NAMES.len()).map(|i| box_stats(&column(i))).collect::<Result<Vec<_>>>()?;
    Ok(MethodSummary {
        n: metrics.len(),
        bias_pos: bias_test(&column(0), level)?,
        bias_vel: bias_test(&column(1), level)?,
        nees_marginal_mean: mean(&column(4)),
        nees_marginal_band: nees_band(first.dof_marginal, level)?,
        nees_full_mean: mean(&column(5)),
        nees_full_band: nees_band(first.dof_full, level)?,
        rmse_pos_mean: mean(&column(2)),
        rmse_vel_mean: mean(&column(3)),
        boxes,
    })
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value `c(α)/√n`, `c(α) = √(−½ ln(α/2))`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}
