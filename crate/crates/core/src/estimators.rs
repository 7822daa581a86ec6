//! End-to-end estimators over the low-rate endpoint grid.
//!
//! `InputPreint` feeds accelerations through a constant-velocity model and
//! estimates `(p, v)`; `MeasurementGp` treats them as observations of `a`
//! under a Singer prior and estimates `(p, v, a)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocktri::BlockTriDiagSPD;
use crate::error::{Error, Result};
use crate::gp_traj::{spd_inverse, Measurement, MeasurementStream, Posterior};
use crate::preint::{classic_preintegrate, input_endpoint_graph, measurement_endpoint_graph, preintegrate_windows};
use crate::priors::{MotionPrior, SingerParams};
use crate::sim::SimTrajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    InputPreint { q_input: f64 },
    MeasurementGp { params: SingerParams },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Input,
    Measurement,
}

impl MethodTag {
    pub fn name(self) -> &'static str {
        match self {
            MethodTag::Input => "input",
            MethodTag::Measurement => "measurement",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(MethodTag::Input),
            "measurement" => Ok(MethodTag::Measurement),
            other => Err(Error::Data(format!("unknown method '{other}'"))),
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            MethodTag::Input => 2,
            MethodTag::Measurement => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub r_pos: f64,
    pub r_acc: f64,
    /// Head prior over `(p, v, a)`; the input method uses its `(p, v)` part.
    pub x0_mean: [f64; 3],
    pub p0_diag: [f64; 3],
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r_pos", self.r_pos), ("r_acc", self.r_acc)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        match self.method {
            Method::InputPreint { q_input } if !(q_input > 0.0 && q_input.is_finite()) => {
                Err(Error::InvalidParameter(format!("q_input must be > 0, got {q_input}")))
            }
            Method::MeasurementGp { params } => params.validate(),
            _ => Ok(()),
        }
    }

    fn head(&self, d: usize) -> (DVector<f64>, DMatrix<f64>) {
        let x0 = DVector::from_column_slice(&self.x0_mean[..d]);
        let p0 = DMatrix::from_diagonal(&DVector::from_column_slice(&self.p0_diag[..d]));
        (x0, p0)
    }
}

/// Endpoint posterior of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateResult {
    pub method: MethodTag,
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub marginal_covs: Vec<DMatrix<f64>>,
    /// Posterior information over all endpoints (inverse of the full covariance).
    pub info: BlockTriDiagSPD,
}

impl EstimateResult {
    fn from_posterior(method: MethodTag, times: Vec<f64>, post: &Posterior) -> Self {
        Self {
            method,
            times,
            means: post.mean.blocks.clone(),
            marginal_covs: post.marginals().diag().to_vec(),
            info: post.info.clone(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.info.block_dim()
    }

    pub fn n_knots(&self) -> usize {
        self.times.len()
    }

    /// Dense covariance over all endpoint states.
    pub fn full_covariance(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.info.to_dense()).ok_or(Error::SingularCovariance)
    }
}

fn endpoints(pos: &MeasurementStream) -> Result<Vec<f64>> {
    let times: Vec<f64> = pos.items.iter().map(|m| m.time).collect();
    if times.len() < 2 {
        return Err(Error::GraphMismatch("need at least two position measurements".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("position times must increase".into()));
    }
    Ok(times)
}

fn scalar_channel(stream: &MeasurementStream, row: &[f64], var: f64) -> MeasurementStream {
    MeasurementStream::new(stream.items.iter().map(|m| Measurement::scalar(m.time, row, m.y[0], var)).collect())
}

/// Classic preintegration between consecutive position times, then the
/// endpoint graph with position factors.
pub fn run_input_estimator(
    pos: &MeasurementStream,
    acc: &MeasurementStream,
    cfg: &EstimatorConfig,
) -> Result<EstimateResult> {
    cfg.validate()?;
    let Method::InputPreint { q_input } = cfg.method else {
        return Err(Error::InvalidParameter("input estimator needs an input-preintegration config".into()));
    };
    let times = endpoints(pos)?;
    let factors =
        times.windows(2).map(|w| classic_preintegrate(acc, (w[0], w[1]), q_input)).collect::<Result<Vec<_>>>()?;
    let (x0, p0) = cfg.head(2);
    let pos2 = scalar_channel(pos, &[1.0, 0.0], cfg.r_pos);
    let post = input_endpoint_graph(&pos2, &factors, p0, x0)?;
    Ok(EstimateResult::from_posterior(MethodTag::Input, times, &post))
}

/// GP preintegration of acceleration measurements under a Singer prior,
/// then the endpoint graph with position factors. Windows with missing
/// accelerations fall back to the prior alone.
pub fn run_measurement_estimator(
    pos: &MeasurementStream,
    acc: &MeasurementStream,
    cfg: &EstimatorConfig,
) -> Result<EstimateResult> {
    cfg.validate()?;
    let Method::MeasurementGp { params } = cfg.method else {
        return Err(Error::InvalidParameter("measurement estimator needs Singer parameters".into()));
    };
    let times = endpoints(pos)?;
    let motion = MotionPrior::Singer { params: vec![params] };
    let (x0, p0) = cfg.head(3);
    let acc3 = scalar_channel(acc, &[0.0, 0.0, 1.0], cfg.r_acc);
    let windows = preintegrate_windows(&motion, &times, &acc3, &x0, &p0)?;
    let pos3 = scalar_channel(pos, &[1.0, 0.0, 0.0], cfg.r_pos);
    let post = measurement_endpoint_graph(&windows, &pos3, &x0, &p0)?;
    Ok(EstimateResult::from_posterior(MethodTag::Measurement, times, &post))
}

pub fn run_estimator(
    pos: &MeasurementStream,
    acc: &MeasurementStream,
    cfg: &EstimatorConfig,
) -> Result<EstimateResult> {
    match cfg.method {
        Method::InputPreint { .. } => run_input_estimator(pos, acc, cfg),
        Method::MeasurementGp { .. } => run_measurement_estimator(pos, acc, cfg),
    }
}

/// Run one estimator over every trajectory, in parallel, keeping input order.
pub fn estimate_dataset(trajs: &[SimTrajectory], cfg: &EstimatorConfig) -> Result<Vec<EstimateResult>> {
    trajs.par_iter().map(|t| run_estimator(&t.pos_meas, &t.acc_meas, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn streams() -> (MeasurementStream, MeasurementStream) {
        let pos = MeasurementStream::new(
            [0.0, 0.1, 0.2].iter().map(|&t| Measurement::scalar(t, &[1.0, 0.0, 0.0], 0.0, 1e-4)).collect(),
        );
        let acc = MeasurementStream::new(
            (0..=20).map(|i| Measurement::scalar(i as f64 * 0.01, &[0.0, 0.0, 1.0], 0.0, 1e-4)).collect(),
        );
        (pos, acc)
    }

    fn cfg(method: Method) -> EstimatorConfig {
        EstimatorConfig { method, r_pos: 1e-4, r_acc: 1e-4, x0_mean: [0.0; 3], p0_diag: [1e-3; 3] }
    }

    #[test]
    fn state_dimensions_per_method() {
        let (pos, acc) = streams();
        let a = run_input_estimator(&pos, &acc, &cfg(Method::InputPreint { q_input: 0.003 })).unwrap();
        let b = run_measurement_estimator(
            &pos,
            &acc,
            &cfg(Method::MeasurementGp { params: SingerParams { alpha: 1.0, sigma2: 1.0 } }),
        )
        .unwrap();
        assert_eq!(a.state_dim(), 2);
        assert_eq!(b.state_dim(), 3);
        assert_eq!(a.n_knots(), 3);
    }

    #[test]
    fn wrong_method_rejected() {
        let (pos, acc) = streams();
        let r = run_input_estimator(
            &pos,
            &acc,
            &cfg(Method::MeasurementGp { params: SingerParams { alpha: 1.0, sigma2: 1.0 } }),
        );
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn measurement_estimator_runs_without_accelerations() {
        let (pos, _) = streams();
        let r = run_measurement_estimator(
            &pos,
            &MeasurementStream::default(),
            &cfg(Method::MeasurementGp { params: SingerParams { alpha: 1.0, sigma2: 1.0 } }),
        )
        .unwrap();
        assert_eq!(r.means.len(), 3);
    }
}
