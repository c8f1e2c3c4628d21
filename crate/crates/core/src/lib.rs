//! Individual lactate threshold estimation for recreational runners.
//!
//! The pipeline ingests incremental treadmill test sessions, relativizes each
//! athlete's intensity axis to their peak treadmill speed, resamples every
//! channel onto a fixed grid, and fits a small layer-recurrent network that
//! estimates the lactate curve from easily measurable features (heart rate,
//! heart-rate recovery, perceived exertion). The threshold is extracted from
//! the estimated curve with the Dmax method and reported as running speed and
//! pace.
//!
//! Training uses Levenberg-Marquardt with Bayesian regularization (evidence
//! framework), multi-start Nguyen-Widrow initialization, and a hidden-units x
//! delays grid search. Train/test splits come either from an expert-provided
//! assignment file or from stratified sampling over hierarchically clustered
//! lactate-curve shapes.

pub mod cli;
pub mod dmax;
pub mod domain;
pub mod evaluate;
pub mod fileio;
pub mod lrnn;
pub mod sampling;
pub mod standardize;
pub mod synth;
pub mod train;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
