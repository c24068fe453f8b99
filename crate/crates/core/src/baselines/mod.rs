//! Comparison models: homogeneous Poisson, ETAS, per-region SIR and AR(p).

pub mod ar;
pub mod etas;
pub mod poisson;
pub mod sir;

pub use ar::{ar_fit, ar_predict, pacf, ArParams, Pacf};
pub use etas::{etas_fit, etas_intensity, etas_kernel, etas_log_likelihood, etas_simulate, EtasFit, EtasParams};
pub use poisson::poisson_fit;
pub use sir::{sir_fit, sir_predict, SirParams, SirTrajectory};
