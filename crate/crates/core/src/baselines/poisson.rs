//! Homogeneous Poisson process.

use crate::error::{invalid, Result};

/// Maximum-likelihood rate `N / (|S| T)`.
pub fn poisson_fit(n_events: usize, area: f64, horizon: f64) -> Result<f64> {
    if !(area > 0.0 && area.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("Poisson fit needs positive area and horizon (got {area}, {horizon})")));
    }
    Ok(n_events as f64 / (area * horizon))
}
