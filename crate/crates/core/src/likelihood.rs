//! Point-process log-likelihood with the closed-form compensator.
//!
//! `ℓ = Σ_i log λ(t_i, s_i) − ∫₀ᵀ∫_S λ`. Extending the spatial integral to R²
//! and replacing each feature function by the isotropic Gaussian of the same
//! ellipse area reduces the compensator to
//!
//! ```text
//! λ0 |S| T + T Σ_l γ_l + √(2π) C σ0 Σ_i [Φ((T − t_i)/σ0) − ½]
//! ```
//!
//! whose relative error is bounded by `max{U − 1, 1 − 1/U}` with
//! `U = (√(4A² + c⁴π²) + c²π) / 2A`. The boundary term is not modelled.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{active_range, landmark_density};
use crate::kernels::{cov_focus_backward, spatial_backward, spatial_value, temporal_value, LocalFeatures, LocalGrad};
use crate::neural::{self, NetEval};
use crate::params::ModelParams;
use crate::types::{KernelConfig, Landmark};
use crate::Event;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
/// Work is split into this many contiguous event chunks regardless of the
/// thread count, so reductions happen in a fixed order.
const CHUNKS: usize = 32;

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal density φ(x).
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Bound on the relative error of the closed-form compensator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub u: f64,
    pub max_rel_err: f64,
}

pub fn error_bound(area: f64, focus_bound: f64) -> Result<ErrorBound> {
    if !(area > 0.0 && area.is_finite() && focus_bound > 0.0 && focus_bound.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "error bound needs A > 0 and c > 0 (got A={area}, c={focus_bound})"
        )));
    }
    let c2 = focus_bound * focus_bound;
    let u = ((4.0 * area * area + c2 * c2 * PI * PI).sqrt() + c2 * PI) / (2.0 * area);
    Ok(ErrorBound { u, max_rel_err: (u - 1.0).max(1.0 - 1.0 / u) })
}

/// The three closed-form parts of the compensator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralParts {
    pub background: f64,
    pub landmarks: f64,
    pub triggering: f64,
}

impl IntegralParts {
    pub fn total(&self) -> f64 {
        self.background + self.landmarks + self.triggering
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodBreakdown {
    pub sum_log_intensity: f64,
    pub integral_background: f64,
    pub integral_landmarks: f64,
    pub integral_triggering: f64,
    pub total: f64,
    pub bound_u: f64,
    pub max_rel_err: f64,
}

/// Closed-form compensator; O(N).
pub fn integral_approx(events: &[Event], params: &ModelParams, config: &KernelConfig) -> IntegralParts {
    let horizon = config.horizon;
    let sigma0 = params.sigma0();
    let tail: f64 = events.iter().map(|e| normal_cdf((horizon - e.t) / sigma0) - 0.5).sum();
    IntegralParts {
        background: params.lambda0() * config.area_s * horizon,
        landmarks: horizon * params.gammas().iter().sum::<f64>(),
        triggering: SQRT_2PI * params.magnitude() * sigma0 * tail,
    }
}

/// Numerically careful summation in a fixed association order.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let size = n.div_ceil(CHUNKS).max(1);
    (0..n).step_by(size).map(|a| a..(a + size).min(n)).collect()
}

fn validate(events: &[Event], params: &ModelParams, config: &KernelConfig, landmarks: &[Landmark]) -> Result<()> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::InvalidInput("log-likelihood needs at least one event".into()));
    }
    crate::types::validate_events(events, config.horizon)?;
    if landmarks.len() != params.n_landmarks() {
        return Err(Error::Shape(format!(
            "{} landmarks but parameters carry {} landmark effects",
            landmarks.len(),
            params.n_landmarks()
        )));
    }
    if params.components() != config.components {
        return Err(Error::Shape(format!(
            "parameters have {} components, config expects {}",
            params.components(),
            config.components
        )));
    }
    Ok(())
}

struct Prepared {
    evals: Vec<NetEval>,
    features: Vec<LocalFeatures>,
    /// `g_l(s_i)`, row-major `N × L`.
    landmark_g: Vec<f64>,
    gammas: Vec<f64>,
    sigmas: Vec<f64>,
    window: f64,
}

fn prepare(events: &[Event], params: &ModelParams, config: &KernelConfig, landmarks: &[Landmark]) -> Result<Prepared> {
    let evals: Vec<NetEval> =
        events.par_iter().map(|e| neural::forward(e.s, params.nets(), config.focus_bound)).collect();
    if let Some(i) = evals.iter().position(|e| !e.is_finite()) {
        return Err(Error::Numerical(format!("network output at event {i} is not finite")));
    }
    let tau_z = params.tau_z();
    let features = evals.iter().map(|e| e.features(config.ellipse_area, tau_z)).collect();
    let gammas = params.gammas();
    let sigmas = params.sigmas();
    let landmark_g = events
        .iter()
        .flat_map(|e| landmarks.iter().zip(&sigmas).map(move |(l, &sd)| landmark_density(e.s, l.location, sd)))
        .collect();
    Ok(Prepared { evals, features, landmark_g, gammas, sigmas, window: config.window(params.sigma0()) })
}

fn intensity_at(i: usize, events: &[Event], params: &ModelParams, prep: &Prepared) -> f64 {
    let l = prep.gammas.len();
    let e = &events[i];
    let exo: f64 = prep.landmark_g[i * l..(i + 1) * l].iter().zip(&prep.gammas).map(|(g, gam)| g * gam).sum();
    let (c, sigma0) = (params.magnitude(), params.sigma0());
    let trig: f64 = active_range(events, e.t, prep.window)
        .map(|j| {
            let d = [e.s[0] - events[j].s[0], e.s[1] - events[j].s[1]];
            temporal_value(e.t - events[j].t, c, sigma0) * spatial_value(d, &prep.features[i], &prep.features[j])
        })
        .sum();
    params.lambda0() + exo + trig
}

fn checked_log(i: usize, lambda: f64) -> Result<f64> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(lambda.ln())
    } else {
        Err(Error::Numerical(format!("intensity at event {i} is {lambda}")))
    }
}

fn breakdown(sum_log: f64, parts: IntegralParts, config: &KernelConfig) -> Result<LikelihoodBreakdown> {
    let bound = config.error_bound()?;
    let total = sum_log - parts.total();
    if !total.is_finite() {
        return Err(Error::Numerical(format!("log-likelihood is {total}")));
    }
    Ok(LikelihoodBreakdown {
        sum_log_intensity: sum_log,
        integral_background: parts.background,
        integral_landmarks: parts.landmarks,
        integral_triggering: parts.triggering,
        total,
        bound_u: bound.u,
        max_rel_err: bound.max_rel_err,
    })
}

/// `Σ_i log λ(t_i, s_i | strictly earlier events) − closed-form compensator`.
pub fn log_likelihood(
    events: &[Event],
    params: &ModelParams,
    config: &KernelConfig,
    landmarks: &[Landmark],
) -> Result<LikelihoodBreakdown> {
    validate(events, params, config, landmarks)?;
    let prep = prepare(events, params, config, landmarks)?;
    let logs: Vec<f64> = (0..events.len())
        .into_par_iter()
        .map(|i| checked_log(i, intensity_at(i, events, params, &prep)))
        .collect::<Result<_>>()?;
    breakdown(pairwise_sum(&logs), integral_approx(events, params, config), config)
}

/// Log-likelihood together with its gradient w.r.t. the flat unconstrained
/// parameter vector (see [`ModelParams::to_flat`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGradient {
    pub breakdown: LikelihoodBreakdown,
    pub grad: Vec<f64>,
}

pub fn log_likelihood_grad(
    events: &[Event],
    params: &ModelParams,
    config: &KernelConfig,
    landmarks: &[Landmark],
) -> Result<LikelihoodGradient> {
    log_likelihood_grad_with(events, params, config, landmarks, true)
}

struct ChunkAcc {
    logs: Vec<f64>,
    background: f64,
    magnitude: f64,
    decay: f64,
    gamma: Vec<f64>,
    sigma: Vec<f64>,
    /// Indexed by event, offset by `base`.
    local: Vec<LocalGrad>,
    base: usize,
}

/// As [`log_likelihood_grad`]; with `net_grads = false` the network entries of
/// the gradient are left at zero and the backward pass through the networks
/// is skipped.
pub fn log_likelihood_grad_with(
    events: &[Event],
    params: &ModelParams,
    config: &KernelConfig,
    landmarks: &[Landmark],
    net_grads: bool,
) -> Result<LikelihoodGradient> {
    validate(events, params, config, landmarks)?;
    let prep = prepare(events, params, config, landmarks)?;
    let n = events.len();
    let n_l = landmarks.len();
    let r = params.components();
    let (c, sigma0) = (params.magnitude(), params.sigma0());
    let window = prep.window;

    let chunks: Vec<ChunkAcc> = chunk_ranges(n)
        .into_par_iter()
        .map(|range| -> Result<ChunkAcc> {
            // a chunk touches its own events and their histories
            let base = active_range(events, events[range.start].t, window).start.min(range.start);
            let mut acc = ChunkAcc {
                logs: Vec::with_capacity(range.len()),
                background: 0.0,
                magnitude: 0.0,
                decay: 0.0,
                gamma: vec![0.0; n_l],
                sigma: vec![0.0; n_l],
                local: vec![LocalGrad::zeros(r); range.end - base],
                base,
            };
            let mut scratch: Vec<(usize, f64)> = Vec::new();
            for i in range {
                let e = &events[i];
                let g_row = &prep.landmark_g[i * n_l..(i + 1) * n_l];
                let exo: f64 = g_row.iter().zip(&prep.gammas).map(|(g, gam)| g * gam).sum();
                scratch.clear();
                let mut trig = 0.0;
                for j in active_range(events, e.t, window) {
                    let d = [e.s[0] - events[j].s[0], e.s[1] - events[j].s[1]];
                    let nu = temporal_value(e.t - events[j].t, c, sigma0);
                    trig += nu * spatial_value(d, &prep.features[i], &prep.features[j]);
                    scratch.push((j, nu));
                }
                let lambda = params.lambda0() + exo + trig;
                acc.logs.push(checked_log(i, lambda)?);
                let a = 1.0 / lambda;
                acc.background += a;
                for k in 0..n_l {
                    let ag = a * g_row[k];
                    acc.gamma[k] += ag;
                    let (lx, ly) = (landmarks[k].location[0] - e.s[0], landmarks[k].location[1] - e.s[1]);
                    let r2 = (lx * lx + ly * ly) / (prep.sigmas[k] * prep.sigmas[k]);
                    acc.sigma[k] += ag * prep.gammas[k] * (r2 - 2.0);
                }
                for &(j, nu) in &scratch {
                    let d = [e.s[0] - events[j].s[0], e.s[1] - events[j].s[1]];
                    let dt = e.t - events[j].t;
                    let (li, lj) = (i - base, j - base);
                    let (gi, gj) = if li > lj {
                        let (lo, hi) = acc.local.split_at_mut(li);
                        (&mut hi[0], &mut lo[lj])
                    } else {
                        unreachable!("history indices precede the event")
                    };
                    let ups = spatial_backward(d, &prep.features[i], &prep.features[j], a * nu, gi, gj);
                    let term = a * nu * ups;
                    acc.magnitude += term;
                    acc.decay += term * dt * dt / (sigma0 * sigma0);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut logs = Vec::with_capacity(n);
    let mut sum_a = 0.0;
    let mut g_mag = 0.0;
    let mut g_decay = 0.0;
    let mut g_gamma = vec![0.0; n_l];
    let mut g_sigma = vec![0.0; n_l];
    let mut local = vec![LocalGrad::zeros(r); n];
    for ch in &chunks {
        logs.extend_from_slice(&ch.logs);
        sum_a += ch.background;
        g_mag += ch.magnitude;
        g_decay += ch.decay;
        for k in 0..n_l {
            g_gamma[k] += ch.gamma[k];
            g_sigma[k] += ch.sigma[k];
        }
        for (off, lg) in ch.local.iter().enumerate() {
            local[ch.base + off].add_assign(lg);
        }
    }

    let parts = integral_approx(events, params, config);
    let bd = breakdown(pairwise_sum(&logs), parts, config)?;

    let horizon = config.horizon;
    let mut grad = vec![0.0; params.len()];
    grad[0] = params.lambda0() * (sum_a - config.area_s * horizon);
    // ∂/∂log C of the compensator is the triggering part itself
    grad[1] = g_mag - parts.triggering;
    let tail_decay: f64 = events
        .iter()
        .map(|e| {
            let z = (horizon - e.t) / sigma0;
            (normal_cdf(z) - 0.5) - z * normal_pdf(z)
        })
        .sum();
    grad[2] = g_decay - SQRT_2PI * c * sigma0 * tail_decay;
    let gammas = &prep.gammas;
    for k in 0..n_l {
        grad[4 + k] = gammas[k] * (g_gamma[k] - horizon);
        grad[4 + n_l + k] = g_sigma[k];
    }

    let tau_z = params.tau_z();
    let area = config.ellipse_area;
    let mut g_tau = 0.0;
    for (i, lg) in local.iter().enumerate() {
        for (comp, g) in prep.features[i].components.iter().zip(&lg.cov) {
            g_tau += 2.0 * (g[0] * comp.cov.xx + g[1] * comp.cov.xy + g[2] * comp.cov.yy);
        }
    }
    grad[3] = g_tau;

    if net_grads {
        let net_len: Vec<usize> = params.nets().iter().map(|n| n.len()).collect();
        let partial: Vec<Vec<Vec<f64>>> = chunk_ranges(n)
            .into_par_iter()
            .map(|range| -> Result<Vec<Vec<f64>>> {
                let mut bufs: Vec<Vec<f64>> = net_len.iter().map(|&l| vec![0.0; l]).collect();
                for i in range {
                    let lg = &local[i];
                    let comps = &prep.features[i].components;
                    let grad_psi: Vec<[f64; 2]> =
                        comps.iter().zip(&lg.cov).map(|(cp, g)| cov_focus_backward(cp.psi, area, tau_z, g)).collect();
                    neural::backward(&prep.evals[i], params.nets(), &grad_psi, &lg.weight, &mut bufs)?;
                }
                Ok(bufs)
            })
            .collect::<Result<_>>()?;
        for bufs in &partial {
            for (rr, buf) in bufs.iter().enumerate() {
                let off = params.net_offset(rr);
                for (g, v) in grad[off..off + buf.len()].iter_mut().zip(buf) {
                    *g += v;
                }
            }
        }
    }

    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("gradient of {} is {}", params.param_name(i), grad[i])));
    }
    Ok(LikelihoodGradient { breakdown: bd, grad })
}
