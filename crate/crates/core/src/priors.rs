//! Transition matrices and process-noise covariances for the Singer prior
//! family and its white-noise-on-jerk / white-noise-on-acceleration limits.
//!
//! Every Singer entry has the form `Δt^p · B(x) / x^p` with `x = αΔt` and `B`
//! a combination of polynomials and `e^{-x}`, `e^{-2x}`. The closed forms
//! cancel catastrophically as `x → 0`, so below a threshold on `x` the same
//! ratio is evaluated from its Taylor expansion about `x = 0`, whose
//! coefficients are derived once from the exponential terms.
//!
//! The unit covariance `Q(Δt, α)` integrates the SDE with unit spectral
//! density; the Singer process noise is `σ² Q(Δt, α)`, so `α → 0` recovers
//! WNOJ with `Qc = σ²`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `α·Δt` below which `Q` and `Φ` use the series expansion.
pub const Q_SERIES_THRESHOLD: f64 = 1.0;
/// `α·Δt` below which `∂Q/∂α` and `∂Φ/∂α` use the series expansion.
pub const JACOBIAN_SERIES_THRESHOLD: f64 = 4.0;

const SERIES_TERMS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingerParams {
    /// Inverse length scale, 1/s.
    pub alpha: f64,
    /// Variance scaling the unit process noise.
    pub sigma2: f64,
}

impl SingerParams {
    pub fn new(alpha: f64, sigma2: f64) -> Result<Self> {
        let p = Self { alpha, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma2 must be finite and > 0, got {}", self.sigma2)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Wnoa,
    Wnoj,
    Singer,
}

impl PriorKind {
    /// Number of derivatives in the per-axis state.
    pub fn order(self) -> usize {
        match self {
            PriorKind::Wnoa => 2,
            PriorKind::Wnoj | PriorKind::Singer => 3,
        }
    }
}

/// Which evaluation route to use for the Singer kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Auto,
    Closed,
    Series,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalModel {
    pub dt: f64,
    pub phi: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// Per-axis motion prior with the stacked state layout
/// `[p_0..p_{n-1}, ṗ_0..ṗ_{n-1}, (p̈_0..p̈_{n-1})]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MotionPrior {
    Wnoa { qc: Vec<f64> },
    Wnoj { qc: Vec<f64> },
    Singer { params: Vec<SingerParams> },
}

impl MotionPrior {
    pub fn wnoa(qc: f64) -> Self {
        MotionPrior::Wnoa { qc: vec![qc] }
    }

    pub fn wnoj(qc: f64) -> Self {
        MotionPrior::Wnoj { qc: vec![qc] }
    }

    pub fn singer(alpha: f64, sigma2: f64) -> Self {
        MotionPrior::Singer { params: vec![SingerParams { alpha, sigma2 }] }
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            MotionPrior::Wnoa { .. } => PriorKind::Wnoa,
            MotionPrior::Wnoj { .. } => PriorKind::Wnoj,
            MotionPrior::Singer { .. } => PriorKind::Singer,
        }
    }

    pub fn axes(&self) -> usize {
        match self {
            MotionPrior::Wnoa { qc } | MotionPrior::Wnoj { qc } => qc.len(),
            MotionPrior::Singer { params } => params.len(),
        }
    }

    pub fn order(&self) -> usize {
        self.kind().order()
    }

    pub fn state_dim(&self) -> usize {
        self.order() * self.axes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes() == 0 {
            return Err(Error::InvalidParameter("prior needs at least one axis".into()));
        }
        match self {
            MotionPrior::Wnoa { qc } | MotionPrior::Wnoj { qc } => {
                if let Some(q) = qc.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
                    return Err(Error::InvalidParameter(format!("qc must be >= 0, got {q}")));
                }
            }
            MotionPrior::Singer { params } => params.iter().try_for_each(|p| p.validate())?,
        }
        Ok(())
    }

    /// `Φ` and `Q_k` for an interval of length `dt`.
    pub fn interval(&self, dt: f64) -> Result<IntervalModel> {
        let n = self.axes();
        let order = self.order();
        let dim = order * n;
        let mut phi = DMatrix::zeros(dim, dim);
        let mut q = DMatrix::zeros(dim, dim);
        for axis in 0..n {
            let (p, c): (DMatrix<f64>, DMatrix<f64>) = match self {
                MotionPrior::Wnoa { qc } => {
                    let (p, c) = wnoa_phi_q(dt, qc[axis])?;
                    (to_dyn(&p), to_dyn(&c))
                }
                MotionPrior::Wnoj { qc } => {
                    let (p, c) = wnoj_phi_q(dt, qc[axis])?;
                    (to_dyn(&p), to_dyn(&c))
                }
                MotionPrior::Singer { params } => {
                    let sp = params[axis];
                    (to_dyn(&singer_phi(dt, sp.alpha)?), to_dyn(&singer_q(dt, sp.alpha, sp.sigma2)?))
                }
            };
            scatter_axis(&mut phi, &p, axis, n);
            scatter_axis(&mut q, &c, axis, n);
        }
        Ok(IntervalModel { dt, phi, q })
    }

    /// `Φ(dt)`; `dt = 0` gives the identity.
    pub fn transition(&self, dt: f64) -> Result<DMatrix<f64>> {
        if dt == 0.0 {
            return Ok(DMatrix::identity(self.state_dim(), self.state_dim()));
        }
        Ok(self.interval(dt)?.phi)
    }
}

/// Place a per-axis `order × order` block into the stacked multi-axis layout.
pub fn scatter_axis(dst: &mut DMatrix<f64>, block: &DMatrix<f64>, axis: usize, axes: usize) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            dst[(i * axes + axis, j * axes + axis)] = block[(i, j)];
        }
    }
}

fn to_dyn<const R: usize>(m: &nalgebra::SMatrix<f64, R, R>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, R, m.as_slice())
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInterval(dt))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")))
    }
}

pub fn wnoa_phi_q(dt: f64, qc: f64) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    check_dt(dt)?;
    let phi = Matrix2::new(1.0, dt, 0.0, 1.0);
    let dt2 = dt * dt;
    let q = Matrix2::new(dt2 * dt / 3.0, dt2 / 2.0, dt2 / 2.0, dt) * qc;
    Ok((phi, q))
}

pub fn wnoj_phi_q(dt: f64, qc: f64) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    check_dt(dt)?;
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let phi = Matrix3::new(1.0, dt, dt2 / 2.0, 0.0, 1.0, dt, 0.0, 0.0, 1.0);
    #[rustfmt::skip]
    let q = Matrix3::new(
        dt3 * dt2 / 20.0, dt3 * dt / 8.0, dt3 / 6.0,
        dt3 * dt / 8.0,   dt3 / 3.0,      dt2 / 2.0,
        dt3 / 6.0,        dt2 / 2.0,      dt,
    ) * qc;
    Ok((phi, q))
}

// ---------------------------------------------------------------------------
// exponential-polynomial ratios

/// `coef · x^pow · e^{-rate·x}`
#[derive(Clone, Copy)]
struct ExpTerm {
    coef: f64,
    pow: i32,
    rate: f64,
}

const fn t(coef: f64, pow: i32, rate: f64) -> ExpTerm {
    ExpTerm { coef, pow, rate }
}

/// `B(x) / x^denom` where all Taylor coefficients of `B` below `denom` vanish.
struct ExpRatio {
    /// Position in `RATIOS`.
    id: usize,
    terms: &'static [ExpTerm],
    denom: i32,
}

const Q11: ExpRatio = ExpRatio {
    id: 0,
    terms: &[t(1.0, 0, 0.0), t(-1.0, 0, 2.0), t(2.0, 1, 0.0), t(2.0 / 3.0, 3, 0.0), t(-2.0, 2, 0.0), t(-4.0, 1, 1.0)],
    denom: 5,
};
const Q12: ExpRatio = ExpRatio {
    id: 1,
    terms: &[t(1.0, 0, 2.0), t(1.0, 0, 0.0), t(-2.0, 0, 1.0), t(2.0, 1, 1.0), t(-2.0, 1, 0.0), t(1.0, 2, 0.0)],
    denom: 4,
};
const Q13: ExpRatio = ExpRatio { id: 2, terms: &[t(1.0, 0, 0.0), t(-1.0, 0, 2.0), t(-2.0, 1, 1.0)], denom: 3 };
const Q22: ExpRatio =
    ExpRatio { id: 3, terms: &[t(4.0, 0, 1.0), t(-3.0, 0, 0.0), t(-1.0, 0, 2.0), t(2.0, 1, 0.0)], denom: 3 };
const Q23: ExpRatio = ExpRatio { id: 4, terms: &[t(1.0, 0, 2.0), t(1.0, 0, 0.0), t(-2.0, 0, 1.0)], denom: 2 };
const Q33: ExpRatio = ExpRatio { id: 5, terms: &[t(1.0, 0, 0.0), t(-1.0, 0, 2.0)], denom: 1 };
const PHI13: ExpRatio = ExpRatio { id: 6, terms: &[t(1.0, 1, 0.0), t(-1.0, 0, 0.0), t(1.0, 0, 1.0)], denom: 2 };
const PHI23: ExpRatio = ExpRatio { id: 7, terms: &[t(1.0, 0, 0.0), t(-1.0, 0, 1.0)], denom: 1 };

const RATIOS: [&ExpRatio; 8] = [&Q11, &Q12, &Q13, &Q22, &Q23, &Q33, &PHI13, &PHI23];

/// Taylor coefficients of `B(x)/x^denom`, one table per ratio in `RATIOS`.
fn series_tables() -> &'static [[f64; SERIES_TERMS]; 8] {
    static TABLES: OnceLock<[[f64; SERIES_TERMS]; 8]> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut out = [[0.0; SERIES_TERMS]; 8];
        for (r, ratio) in RATIOS.iter().enumerate() {
            for (m, slot) in out[r].iter_mut().enumerate() {
                let n = m as i32 + ratio.denom;
                *slot = ratio
                    .terms
                    .iter()
                    .map(|term| {
                        let k = n - term.pow;
                        if k < 0 {
                            0.0
                        } else if term.rate == 0.0 {
                            if k == 0 {
                                term.coef
                            } else {
                                0.0
                            }
                        } else {
                            // (-rate)^k / k!
                            let mut c = term.coef;
                            for i in 1..=k {
                                c *= -term.rate / i as f64;
                            }
                            c
                        }
                    })
                    .sum();
            }
        }
        out
    })
}

impl ExpRatio {
    fn closed(&self, x: f64) -> f64 {
        let b: f64 = self.terms.iter().map(|t| t.coef * x.powi(t.pow) * (-t.rate * x).exp()).sum();
        b / x.powi(self.denom)
    }

    fn series(&self, x: f64) -> f64 {
        let c = &series_tables()[self.id];
        c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
    }

    fn series_derivative(&self, x: f64) -> f64 {
        let c = &series_tables()[self.id];
        c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (m, &ci)| acc * x + m as f64 * ci)
    }

    fn eval(&self, x: f64, use_series: bool) -> f64 {
        if use_series {
            self.series(x)
        } else {
            self.closed(x)
        }
    }
}

fn use_series(branch: Branch, x: f64, threshold: f64) -> bool {
    match branch {
        Branch::Auto => x < threshold,
        Branch::Closed => false,
        Branch::Series => true,
    }
}

/// Singer transition `Φ(Δt)`.
pub fn singer_phi(dt: f64, alpha: f64) -> Result<Matrix3<f64>> {
    singer_phi_with(dt, alpha, Branch::Auto)
}

pub fn singer_phi_with(dt: f64, alpha: f64, branch: Branch) -> Result<Matrix3<f64>> {
    check_dt(dt)?;
    check_alpha(alpha)?;
    if alpha == 0.0 && branch != Branch::Series {
        return Ok(wnoj_phi_q(dt, 1.0)?.0);
    }
    let x = alpha * dt;
    let s = use_series(branch, x, Q_SERIES_THRESHOLD);
    let e = (-x).exp();
    Ok(Matrix3::new(1.0, dt, dt * dt * PHI13.eval(x, s), 0.0, 1.0, dt * PHI23.eval(x, s), 0.0, 0.0, e))
}

/// Unit-variance Singer covariance `Q(Δt, α)`.
pub fn singer_q_unit(dt: f64, alpha: f64) -> Result<Matrix3<f64>> {
    singer_q_unit_with(dt, alpha, Branch::Auto)
}

pub fn singer_q_unit_with(dt: f64, alpha: f64, branch: Branch) -> Result<Matrix3<f64>> {
    check_dt(dt)?;
    check_alpha(alpha)?;
    if alpha == 0.0 && branch != Branch::Series {
        return Ok(wnoj_phi_q(dt, 1.0)?.1);
    }
    let x = alpha * dt;
    let s = use_series(branch, x, Q_SERIES_THRESHOLD);
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let q11 = 0.5 * dt3 * dt2 * Q11.eval(x, s);
    let q12 = 0.5 * dt3 * dt * Q12.eval(x, s);
    let q13 = 0.5 * dt3 * Q13.eval(x, s);
    let q22 = 0.5 * dt3 * Q22.eval(x, s);
    let q23 = 0.5 * dt2 * Q23.eval(x, s);
    let q33 = 0.5 * dt * Q33.eval(x, s);
    Ok(Matrix3::new(q11, q12, q13, q12, q22, q23, q13, q23, q33))
}

/// Singer process noise `Q_k = σ² Q(Δt, α)`.
pub fn singer_q(dt: f64, alpha: f64, sigma2: f64) -> Result<Matrix3<f64>> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma2 must be > 0, got {sigma2}")));
    }
    Ok(singer_q_unit(dt, alpha)? * sigma2)
}

/// Partial derivatives of the unit covariance and of the transition with
/// respect to `α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingerJacobian {
    /// `∂Q(Δt, α)/∂α`, symmetric.
    pub dq: Matrix3<f64>,
    /// `∂Φ/∂α`; only the third column is nonzero.
    pub dphi: Matrix3<f64>,
}

pub fn q_alpha_jacobian(dt: f64, alpha: f64) -> Result<SingerJacobian> {
    q_alpha_jacobian_with(dt, alpha, Branch::Auto)
}

pub fn q_alpha_jacobian_with(dt: f64, alpha: f64, branch: Branch) -> Result<SingerJacobian> {
    check_dt(dt)?;
    check_alpha(alpha)?;
    let x = alpha * dt;
    let series = use_series(branch, x, JACOBIAN_SERIES_THRESHOLD) || alpha == 0.0;
    let d = dt;
    let d2 = d * d;
    let d3 = d2 * d;
    if series {
        // ∂/∂α [½ Δt^p f(αΔt)] = ½ Δt^{p+1} f'(x)
        let dq11 = 0.5 * d3 * d3 * Q11.series_derivative(x);
        let dq12 = 0.5 * d3 * d2 * Q12.series_derivative(x);
        let dq13 = 0.5 * d2 * d2 * Q13.series_derivative(x);
        let dq22 = 0.5 * d2 * d2 * Q22.series_derivative(x);
        let dq23 = 0.5 * d3 * Q23.series_derivative(x);
        let dq33 = 0.5 * d2 * Q33.series_derivative(x);
        let dq = Matrix3::new(dq11, dq12, dq13, dq12, dq22, dq23, dq13, dq23, dq33);
        let mut dphi = Matrix3::zeros();
        dphi[(0, 2)] = d3 * PHI13.series_derivative(x);
        dphi[(1, 2)] = d2 * PHI23.series_derivative(x);
        dphi[(2, 2)] = -d * (-x).exp();
        return Ok(SingerJacobian { dq, dphi });
    }
    let a = alpha;
    let a2 = a * a;
    let a3 = a2 * a;
    let a4 = a3 * a;
    let a5 = a4 * a;
    let a6 = a5 * a;
    let e = (-x).exp();
    let e2 = (-2.0 * x).exp();
    let dq11 = -2.0 * d3 / (3.0 * a3)
        + d2 * (2.0 * e + 3.0) / a4
        + 5.0 * (e2 - 1.0) / (2.0 * a6)
        + d * (e2 + 8.0 * e - 4.0) / a5;
    let dq12 = -d2 * (e + 1.0) / a3 + d * (3.0 - e2 - 2.0 * e) / a4 + (4.0 * e - 2.0 * e2 - 2.0) / a5;
    let dq13 = d2 * e / a2 + 3.0 * (e2 - 1.0) / (2.0 * a4) + d * (e2 + 2.0 * e) / a3;
    let dq22 = (3.0 * e2 - 12.0 * e + 9.0) / (2.0 * a4) + d * (e2 - 2.0 * e - 2.0) / a3;
    let dq23 = (2.0 * e - e2 - 1.0) / a3 + d * (e - e2) / a2;
    let dq33 = (e2 - 1.0) / (2.0 * a2) + d * e2 / a;
    let dq = Matrix3::new(dq11, dq12, dq13, dq12, dq22, dq23, dq13, dq23, dq33);
    let mut dphi = Matrix3::zeros();
    dphi[(0, 2)] = 2.0 * (1.0 - e) / a3 - d * (e + 1.0) / a2;
    dphi[(1, 2)] = (e - 1.0) / a2 + d * e / a;
    dphi[(2, 2)] = -d * e;
    Ok(SingerJacobian { dq, dphi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn zero_alpha_is_wnoj_transition() {
        let phi = singer_phi(0.1, 0.0).unwrap();
        let want = Matrix3::new(1.0, 0.1, 0.005, 0.0, 1.0, 0.1, 0.0, 0.0, 1.0);
        assert!((phi - want).norm() < 1e-16);
    }

    #[test]
    fn huge_alpha_kills_acceleration_column() {
        let phi = singer_phi(1.0, 1e8).unwrap();
        for i in 0..3 {
            assert!(phi[(i, 2)].abs() < 1e-6);
        }
    }

    #[test]
    fn wnoa_kernel_values() {
        let (phi, q) = wnoa_phi_q(1.0, 1.0).unwrap();
        assert_eq!(phi, Matrix2::new(1.0, 1.0, 0.0, 1.0));
        assert!((q - Matrix2::new(1.0 / 3.0, 0.5, 0.5, 1.0)).norm() < 1e-15);
        let (_, q) = wnoj_phi_q(2.0, 1.0).unwrap();
        assert!(rel(q[(0, 0)], 1.6) < 1e-15);
    }

    #[test]
    fn series_leading_coefficients_match_wnoj() {
        let q = singer_q_unit_with(1.0, 0.0, Branch::Series).unwrap();
        let (_, w) = wnoj_phi_q(1.0, 1.0).unwrap();
        assert!((q - w).norm() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_interval() {
        assert!(matches!(singer_phi(0.0, 1.0), Err(Error::InvalidInterval(_))));
        assert!(matches!(singer_q(-1.0, 1.0, 1.0), Err(Error::InvalidInterval(_))));
        assert!(matches!(wnoa_phi_q(0.0, 1.0), Err(Error::InvalidInterval(_))));
        assert!(matches!(q_alpha_jacobian(0.0, 1.0), Err(Error::InvalidInterval(_))));
    }

    #[test]
    fn multi_axis_layout_interleaves_derivatives() {
        let prior = MotionPrior::Singer {
            params: vec![SingerParams::new(0.0, 1.0).unwrap(), SingerParams::new(2.0, 3.0).unwrap()],
        };
        let m = prior.interval(0.5).unwrap();
        assert_eq!(m.phi.nrows(), 6);
        let ax1 = singer_phi(0.5, 2.0).unwrap();
        let q1 = singer_q(0.5, 2.0, 3.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.phi[(2 * i + 1, 2 * j + 1)], ax1[(i, j)]);
                assert_eq!(m.q[(2 * i + 1, 2 * j + 1)], q1[(i, j)]);
                assert_eq!(m.q[(2 * i, 2 * j + 1)], 0.0);
            }
        }
    }
}
