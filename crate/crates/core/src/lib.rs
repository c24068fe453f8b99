//! Non-stationary spatio-temporal Hawkes process for confirmed-case event data.
//!
//! The model's conditional intensity is a constant background, plus
//! Gaussian bumps anchored at city landmarks, plus a self-exciting sum over
//! past events. The triggering kernel separates into a Gaussian-in-lag
//! temporal factor and a non-stationary spatial factor built from
//! location-dependent Gaussian feature functions whose covariance ellipses
//! are parameterized by focus points emitted by small neural networks.
//!
//! Module map:
//!
//! - [`types`], [`geometry`]: events, landmarks, regions, configuration.
//! - [`kernels`]: temporal kernel, focus-point covariance, spatial kernel.
//! - [`neural`]: the focus-point networks with hand-written backprop.
//! - [`intensity`]: conditional intensity evaluation.
//! - [`likelihood`]: closed-form log-likelihood, its error bound, gradients.
//! - [`trainer`]: Adam-based maximum likelihood with step-decay schedule.
//! - [`simulator`]: Ogata thinning.
//! - [`baselines`]: homogeneous Poisson, ETAS, SIR and AR(p).
//! - [`evaluation`]: weekly per-region counts and MAE quantiles.
//! - [`io`]: CSV / GeoJSON ingestion and plot-ready exports.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod intensity;
pub mod io;
pub mod kernels;
pub mod likelihood;
pub mod neural;
pub mod params;
pub mod simulator;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use geometry::{region_area, LocalProjection, RegionMap};
pub use intensity::IntensityContext;
pub use kernels::{CovMatrix, FocusOutput, LocalFeatures};
pub use likelihood::{error_bound, log_likelihood, log_likelihood_grad, ErrorBound, LikelihoodBreakdown};
pub use neural::{NetEval, NetworkWeights};
pub use params::ModelParams;
pub use trainer::{fit, FitConfig, FitReport, StopReason};
pub use types::{Event, KernelConfig, Landmark, LandmarkCategory, Region};

/// Planar location in kilometres.
pub type Point = [f64; 2];
