//! Stationary Gaussian-diffusion Hawkes (ETAS-type) baseline.
//!
//! The triggering kernel is
//! `C e^{−βΔ} / (2π √|Σ| Δ) · exp{−(d − μ)ᵀ Σ⁻¹ (d − μ) / 2Δ}` with
//! `Σ = diag(σx², σy²)`, i.e. a spatial slice `C e^{−βΔ} N(d; μ, ΣΔ)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BoundingBox;
use crate::likelihood::pairwise_sum;
use crate::trainer::{maximize, FitConfig, StopReason};
use crate::types::validate_events;
use crate::{Event, Point};

/// History older than this many e-folding times `1/β` is ignored.
const WINDOW_DECAYS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasParams {
    pub c_e: f64,
    pub beta: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
    pub mu: Point,
    pub lambda0: f64,
}

impl EtasParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [("beta", self.beta), ("sigma_x2", self.sigma_x2), ("sigma_y2", self.sigma_y2)];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("ETAS {name} must be positive, got {v}")));
            }
        }
        if !(self.c_e.is_finite() && self.c_e >= 0.0 && self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(invalid("ETAS C_e must be non-negative and lambda0 positive"));
        }
        if !(self.mu[0].is_finite() && self.mu[1].is_finite()) {
            return Err(invalid("ETAS shift mu must be finite"));
        }
        Ok(())
    }

    /// `[log λ0, log C, log β, log σx², log σy², μx, μy]`.
    pub fn to_flat(&self) -> Vec<f64> {
        vec![
            self.lambda0.ln(),
            self.c_e.ln(),
            self.beta.ln(),
            self.sigma_x2.ln(),
            self.sigma_y2.ln(),
            self.mu[0],
            self.mu[1],
        ]
    }

    pub fn from_flat(x: &[f64]) -> Self {
        Self {
            lambda0: x[0].exp(),
            c_e: x[1].exp(),
            beta: x[2].exp(),
            sigma_x2: x[3].exp(),
            sigma_y2: x[4].exp(),
            mu: [x[5], x[6]],
        }
    }

    /// Expected offspring per event over an infinite horizon, `C/β`.
    pub fn branching_ratio(&self) -> f64 {
        self.c_e / self.beta
    }

    pub fn window(&self) -> f64 {
        WINDOW_DECAYS / self.beta
    }
}

/// Triggering kernel for lag `dt > 0` and displacement `d = s − s′`.
pub fn etas_kernel(dt: f64, d: Point, p: &EtasParams) -> f64 {
    let ex = d[0] - p.mu[0];
    let ey = d[1] - p.mu[1];
    let q = ex * ex / (p.sigma_x2 * dt) + ey * ey / (p.sigma_y2 * dt);
    p.c_e * (-p.beta * dt).exp() * (-0.5 * q).exp() / (2.0 * PI * (p.sigma_x2 * p.sigma_y2).sqrt() * dt)
}

/// `λ0 + Σ_{t_j < t} kernel`; terms with zero lag are skipped.
pub fn etas_intensity(t: f64, s: Point, history: &[Event], p: &EtasParams) -> f64 {
    let window = p.window();
    let end = history.partition_point(|e| e.t < t);
    let start = history[..end].partition_point(|e| e.t < t - window);
    p.lambda0
        + history[start..end]
            .iter()
            .map(|e| etas_kernel(t - e.t, [s[0] - e.s[0], s[1] - e.s[1]], p))
            .sum::<f64>()
}

/// Log-likelihood and its gradient w.r.t. [`EtasParams::to_flat`].
pub fn etas_log_likelihood(events: &[Event], area: f64, horizon: f64, p: &EtasParams) -> Result<(f64, Vec<f64>)> {
    let window = p.window();
    let per_event: Vec<(f64, [f64; 7])> = (0..events.len())
        .into_par_iter()
        .map(|i| {
            let e = &events[i];
            let start = events[..i].partition_point(|h| h.t < e.t - window);
            let mut lambda = p.lambda0;
            let mut g = [0.0; 7];
            g[0] = p.lambda0;
            for h in &events[start..i] {
                let dt = e.t - h.t;
                if dt <= 0.0 {
                    continue;
                }
                let ex = e.s[0] - h.s[0] - p.mu[0];
                let ey = e.s[1] - h.s[1] - p.mu[1];
                let k = etas_kernel(dt, [e.s[0] - h.s[0], e.s[1] - h.s[1]], p);
                lambda += k;
                g[1] += k;
                g[2] += k * (-p.beta * dt);
                g[3] += k * (-0.5 + ex * ex / (2.0 * p.sigma_x2 * dt));
                g[4] += k * (-0.5 + ey * ey / (2.0 * p.sigma_y2 * dt));
                g[5] += k * ex / (p.sigma_x2 * dt);
                g[6] += k * ey / (p.sigma_y2 * dt);
            }
            for v in &mut g {
                *v /= lambda;
            }
            (lambda.ln(), g)
        })
        .collect();
    let logs: Vec<f64> = per_event.iter().map(|(l, _)| *l).collect();
    let mut grad = vec![0.0; 7];
    for (_, g) in &per_event {
        for k in 0..7 {
            grad[k] += g[k];
        }
    }
    let mut integral = p.lambda0 * area * horizon;
    grad[0] -= p.lambda0 * area * horizon;
    for e in events {
        let tau = horizon - e.t;
        let surv = (-p.beta * tau).exp();
        let mass = p.c_e * (1.0 - surv) / p.beta;
        integral += mass;
        grad[1] -= mass;
        grad[2] -= p.c_e * (tau * surv - (1.0 - surv) / p.beta);
    }
    let value = pairwise_sum(&logs) - integral;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("ETAS log-likelihood is {value}")));
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("ETAS gradient entry {k} is not finite")));
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtasFit {
    pub params: EtasParams,
    pub log_likelihood: f64,
    pub trace: Vec<f64>,
    pub stop_reason: StopReason,
}

/// Default starting point: half the events attributed to the background,
/// unit-rate decay, 1 km²/day diffusion, no drift.
pub fn etas_initial(n_events: usize, area: f64, horizon: f64) -> EtasParams {
    EtasParams {
        c_e: 0.5,
        beta: 1.0,
        sigma_x2: 1.0,
        sigma_y2: 1.0,
        mu: [0.0, 0.0],
        lambda0: 0.5 * n_events.max(1) as f64 / (area * horizon),
    }
}

pub fn etas_fit(events: &[Event], area: f64, horizon: f64, fit_config: &FitConfig) -> Result<EtasFit> {
    etas_fit_from(events, area, horizon, fit_config, etas_initial(events.len(), area, horizon))
}

pub fn etas_fit_from(
    events: &[Event],
    area: f64,
    horizon: f64,
    fit_config: &FitConfig,
    init: EtasParams,
) -> Result<EtasFit> {
    if events.len() < 2 {
        return Err(invalid(format!("ETAS fit needs at least 2 events, got {}", events.len())));
    }
    if !(area > 0.0 && horizon > 0.0) {
        return Err(invalid("ETAS fit needs positive area and horizon"));
    }
    validate_events(events, horizon)?;
    init.validate()?;
    let objective = |x: &[f64]| etas_log_likelihood(events, area, horizon, &EtasParams::from_flat(x));
    let best = maximize(objective, init.to_flat(), &[true; 7], fit_config, &mut |_| {})?;
    Ok(EtasFit {
        params: EtasParams::from_flat(&best.x),
        log_likelihood: best.value,
        trace: best.trace,
        stop_reason: best.stop_reason,
    })
}

/// Cluster simulation over `[0, T]`: immigrants uniform on `bounds`, each
/// event spawning `Poisson(C/β)` children at lags `Exp(β)` displaced by
/// `N(μ, ΣΔ)`. Children landing outside `bounds` are discarded along with
/// their descendants, matching a background that is zero off the study region.
pub fn etas_simulate(p: &EtasParams, bounds: &BoundingBox, horizon: f64, seed: u64, max_events: usize) -> Result<Vec<Event>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let n_imm = Poisson::new(p.lambda0 * bounds.area() * horizon)
        .map_err(|e| invalid(format!("immigrant count: {e}")))?
        .sample(&mut rng) as usize;
    for _ in 0..n_imm {
        let s = [
            bounds.min[0] + rng.random::<f64>() * bounds.width(),
            bounds.min[1] + rng.random::<f64>() * bounds.height(),
        ];
        events.push(Event { t: rng.random::<f64>() * horizon, s });
    }
    let offspring = Poisson::new(p.branching_ratio().max(1e-300)).map_err(|e| invalid(format!("offspring: {e}")))?;
    let lag = Exp::new(p.beta).map_err(|e| invalid(format!("lag: {e}")))?;
    let mut next = 0;
    while next < events.len() {
        let parent = events[next];
        next += 1;
        let k = offspring.sample(&mut rng) as usize;
        for _ in 0..k {
            let dt: f64 = lag.sample(&mut rng);
            let t = parent.t + dt;
            if t > horizon {
                continue;
            }
            let zx: f64 = StandardNormal.sample(&mut rng);
            let zy: f64 = StandardNormal.sample(&mut rng);
            let s = [
                parent.s[0] + p.mu[0] + (p.sigma_x2 * dt).sqrt() * zx,
                parent.s[1] + p.mu[1] + (p.sigma_y2 * dt).sqrt() * zy,
            ];
            if !bounds.contains(s) {
                continue;
            }
            events.push(Event { t, s });
            if events.len() > max_events {
                return Err(Error::Numerical(format!("ETAS simulation exceeded {max_events} events")));
            }
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(events)
}
