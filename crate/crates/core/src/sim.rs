//! Ground-truth sampling and measurement synthesis for the 1D study.
//!
//! Every trajectory owns a ChaCha8 stream selected by `(set, index)`, so a
//! dataset is reproducible from its seed and can be generated in any order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp_traj::{Measurement, MeasurementStream};
use crate::priors::MotionPrior;

pub const POS_ROW: [f64; 3] = [1.0, 0.0, 0.0];
pub const ACC_ROW: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub prior: MotionPrior,
    pub x0_mean: [f64; 3],
    pub p0_diag: [f64; 3],
    pub duration: f64,
    pub pos_rate: f64,
    pub acc_rate: f64,
    pub sigma_pos: f64,
    pub sigma_acc: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
}

/// Which dataset a trajectory belongs to; selects the RNG stream family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSet {
    Train,
    Eval,
}

impl DataSet {
    fn stream_tag(self) -> u64 {
        match self {
            DataSet::Train => 0,
            DataSet::Eval => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DataSet::Train => "train",
            DataSet::Eval => "eval",
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.prior.state_dim() != 3 {
            return Err(Error::Config("simulation needs a single-axis prior with state (p, v, a)".into()));
        }
        let positive = [
            ("duration", self.duration),
            ("pos_rate", self.pos_rate),
            ("acc_rate", self.acc_rate),
            ("sigma_pos", self.sigma_pos),
            ("sigma_acc", self.sigma_acc),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.x0_mean.iter().chain(&self.p0_diag).any(|v| !v.is_finite()) {
            return Err(Error::Config("x0_mean and p0_diag must be finite".into()));
        }
        if self.p0_diag.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("p0_diag entries must be non-negative".into()));
        }
        self.acc_per_pos()?;
        let steps = self.duration * self.acc_rate;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!(
                "duration {} is not a whole number of acceleration periods",
                self.duration
            )));
        }
        if !(steps.round() as usize).is_multiple_of(self.acc_per_pos()?) {
            return Err(Error::Config("duration must be a whole number of position periods".into()));
        }
        Ok(())
    }

    /// Acceleration samples per position period.
    pub fn acc_per_pos(&self) -> Result<usize> {
        let ratio = self.acc_rate / self.pos_rate;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "acc_rate {} must be an integer multiple of pos_rate {}",
                self.acc_rate, self.pos_rate
            )));
        }
        Ok(ratio.round() as usize)
    }

    /// Full-rate time grid `i / acc_rate`, `i = 0..=N`.
    pub fn grid(&self) -> Vec<f64> {
        let n = (self.duration * self.acc_rate).round() as usize;
        (0..=n).map(|i| i as f64 / self.acc_rate).collect()
    }

    /// Endpoint (position) times, a subset of [`SimConfig::grid`].
    pub fn endpoint_times(&self) -> Result<Vec<f64>> {
        let step = self.acc_per_pos()?;
        Ok(self.grid().into_iter().step_by(step).collect())
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0_mean)
    }

    pub fn p0(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.p0_diag))
    }

    pub fn count(&self, set: DataSet) -> usize {
        match set {
            DataSet::Train => self.n_train,
            DataSet::Eval => self.n_eval,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrajectory {
    pub times: Vec<f64>,
    /// `(p, v, a)` at every grid time.
    pub states: Vec<DVector<f64>>,
    pub pos_meas: MeasurementStream,
    pub acc_meas: MeasurementStream,
}

impl SimTrajectory {
    /// Ground-truth states at the given times (which must lie on the grid).
    pub fn states_at(&self, times: &[f64]) -> Result<Vec<DVector<f64>>> {
        times
            .iter()
            .map(|&t| {
                self.times
                    .iter()
                    .position(|&g| crate::gp_traj::same_time(g, t))
                    .map(|i| self.states[i].clone())
                    .ok_or(Error::MeasurementOffGrid(t))
            })
            .collect()
    }

    pub fn endpoint_times(&self) -> Vec<f64> {
        self.pos_meas.items.iter().map(|m| m.time).collect()
    }
}

/// RNG for trajectory `index` of `set`.
pub fn trajectory_rng(seed: u64, set: DataSet, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((set.stream_tag() << 32) | index as u64);
    rng
}

/// Draw from `N(0, cov)` via a symmetric square root (PSD inputs allowed).
pub fn sample_gaussian<R: Rng + ?Sized>(cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = cov.nrows();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    psd_sqrt(cov) * z
}

fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Sample the state sequence on the grid, then synthesize measurements.
pub fn sample_trajectory<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SimTrajectory> {
    cfg.validate()?;
    let times = cfg.grid();
    let mut states = Vec::with_capacity(times.len());
    states.push(cfg.x0() + sample_gaussian(&cfg.p0(), rng));
    // the grid is uniform, so one interval model serves every step
    let mut cache: Option<(f64, crate::priors::IntervalModel)> = None;
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let iv = match &cache {
            Some((h, iv)) if (h - dt).abs() <= 1e-12 * dt => iv.clone(),
            _ => {
                let iv = cfg.prior.interval(dt)?;
                cache = Some((dt, iv.clone()));
                iv
            }
        };
        let next = &iv.phi * states.last().unwrap() + sample_gaussian(&iv.q, rng);
        states.push(next);
    }
    let mut traj =
        SimTrajectory { times, states, pos_meas: MeasurementStream::default(), acc_meas: MeasurementStream::default() };
    let (pos, acc) = corrupt_measurements(&traj, cfg, rng)?;
    traj.pos_meas = pos;
    traj.acc_meas = acc;
    Ok(traj)
}

/// Position at the low rate and acceleration at every grid time, each with
/// additive Gaussian noise.
pub fn corrupt_measurements<R: Rng + ?Sized>(
    traj: &SimTrajectory,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(MeasurementStream, MeasurementStream)> {
    let step = cfg.acc_per_pos()?;
    let mut pos = Vec::new();
    let mut acc = Vec::with_capacity(traj.times.len());
    for (i, (&t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        if i % step == 0 {
            let n: f64 = rng.sample(StandardNormal);
            pos.push(Measurement::scalar(t, &POS_ROW, x[0] + cfg.sigma_pos * n, cfg.sigma_pos.powi(2)));
        }
        let n: f64 = rng.sample(StandardNormal);
        acc.push(Measurement::scalar(t, &ACC_ROW, x[2] + cfg.sigma_acc * n, cfg.sigma_acc.powi(2)));
    }
    Ok((MeasurementStream::new(pos), MeasurementStream::new(acc)))
}

/// All trajectories of one dataset, generated in parallel.
pub fn generate(cfg: &SimConfig, set: DataSet) -> Result<Vec<SimTrajectory>> {
    cfg.validate()?;
    (0..cfg.count(set)).into_par_iter().map(|i| sample_trajectory(cfg, &mut trajectory_rng(cfg.seed, set, i))).collect()
}

/// The white-noise-on-jerk and Singer experiment configurations.
pub fn experiment_presets() -> (SimConfig, SimConfig) {
    let base = SimConfig {
        prior: MotionPrior::wnoj(1.0),
        x0_mean: [0.0, 0.0, 1.0],
        p0_diag: [0.001; 3],
        duration: 1.0,
        pos_rate: 10.0,
        acc_rate: 100.0,
        sigma_pos: 0.01,
        sigma_acc: 0.01,
        n_train: 100,
        n_eval: 1000,
        seed: 20_240_601,
    };
    let singer =
        SimConfig { prior: MotionPrior::singer(10.0, 1.0), x0_mean: [0.0, 1.0, 0.0], seed: 20_240_602, ..base.clone() };
    (base, singer)
}
