//! Continuous-time Gaussian-process state estimation for a 1D inertial
//! problem: block-tridiagonal solvers, Singer-family motion priors, batch GP
//! regression with O(1) interpolation, three equivalent preintegration routes,
//! simulation, hyperparameter learning and consistency evaluation.

pub mod blocktri;
pub mod config;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod gp_traj;
pub mod io;
pub mod learn;
pub mod preint;
pub mod priors;
pub mod sim;

pub use error::{Error, Result};
