//! Gaussian filtering by natural-gradient variational updates (NANO), with
//! Kalman-family baselines, sigma-point quadrature, SO(3) error-state
//! support, benchmark scenarios and a Monte Carlo harness.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod nano;
pub mod scenarios;
pub mod sigma;

pub use error::{Error, Result};
pub use gaussian::GaussianBelief;
pub use linalg::{Matrix, Vector};
pub use model::{GaussianLoss, HessianMode, MeasurementLoss, NoiseSpec, StateSpaceModel};
pub use nano::{nano_predict, nano_update, NanoConfig, PdStrategy, UpdateTrace};
pub use sigma::{Rule, SigmaPointSet, TransformParams};
pub use harness::{run_trials, RunConfig, ScenarioKind, TrialResult};
pub use scenarios::FilterKind;
