//! Full-batch maximum-likelihood training with Adam.
//!
//! The learning rate starts at 1 and is multiplied by 0.1 whenever the
//! log-likelihood has not strictly improved on its best value for 10 epochs.
//! Training stops once the spread (max − min) of the log-likelihood over the
//! trailing 30 epochs falls below 1, or after `max_epochs`. The best
//! parameters seen are returned.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::likelihood::log_likelihood_grad_with;
use crate::neural::{NetworkWeights, DEFAULT_HIDDEN};
use crate::params::{ModelParams, ParamGroup};
use crate::types::{validate_landmarks, KernelConfig, Landmark};
use crate::Event;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam step `x ← x − lr m̂ / (√v̂ + ε)`; pass the negated
/// gradient to ascend.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() || state.v.len() != grads.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// How the component networks are initialized when no starting point is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetInit {
    Glorot,
    /// Zero output layer: ψ = 0 and uniform weights everywhere.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lr_init: f64,
    pub lr_decay: f64,
    pub patience_decay: usize,
    pub stop_window: usize,
    pub stop_oscillation: f64,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub net_init: NetInit,
    /// When false the networks stay at their initial values.
    pub train_nets: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr_init: 1.0,
            lr_decay: 0.1,
            patience_decay: 10,
            stop_window: 30,
            stop_oscillation: 1.0,
            adam: AdamConfig::default(),
            max_epochs: 2000,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            net_init: NetInit::Glorot,
            train_nets: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_init", self.lr_init),
            ("lr_decay", self.lr_decay),
            ("stop_oscillation", self.stop_oscillation),
            ("adam.eps", self.adam.eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if self.patience_decay == 0 || self.stop_window == 0 || self.max_epochs == 0 {
            return Err(invalid("patience, stop window and max_epochs must be positive"));
        }
        if self.patience_decay >= self.stop_window {
            return Err(invalid(format!(
                "patience_decay ({}) must be shorter than stop_window ({})",
                self.patience_decay, self.stop_window
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid("hidden layer sizes must be non-empty and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
    NumericalAbort,
}

/// Progress passed to an observer after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochInfo<'a> {
    pub epoch: usize,
    pub value: f64,
    pub best: f64,
    pub lr: f64,
    pub x: &'a [f64],
}

/// Result of [`maximize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: Vec<f64>,
    pub lr_decays: Vec<usize>,
    pub stop_reason: StopReason,
    pub abort_message: Option<String>,
}

/// Adam ascent on an objective returning `(value, gradient)`, with the
/// step-decay schedule and oscillation stopping rule of [`FitConfig`].
/// Coordinates with `mask[i] == false` are held fixed.
pub fn maximize<F>(
    mut objective: F,
    x0: Vec<f64>,
    mask: &[bool],
    cfg: &FitConfig,
    observer: &mut dyn FnMut(&EpochInfo<'_>),
) -> Result<Maximum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if mask.len() != x0.len() {
        return Err(Error::Shape(format!("mask has {} entries for {} parameters", mask.len(), x0.len())));
    }
    let mut x = x0;
    let mut state = AdamState::new(x.len());
    let mut lr = cfg.lr_init;
    let mut best_x = x.clone();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut trace = Vec::new();
    let mut lr_decays = Vec::new();
    let mut step = vec![0.0; x.len()];

    for epoch in 0..cfg.max_epochs {
        let (value, grad) = match objective(&x) {
            Ok(v) if v.0.is_finite() => v,
            Ok((v, _)) if epoch > 0 => {
                return Ok(abort(best_x, best, trace, lr_decays, format!("objective is {v}")));
            }
            Err(Error::Numerical(msg)) if epoch > 0 => return Ok(abort(best_x, best, trace, lr_decays, msg)),
            Ok((v, _)) => return Err(Error::Numerical(format!("objective at the starting point is {v}"))),
            Err(e) => return Err(e),
        };
        if grad.len() != x.len() {
            return Err(Error::Shape(format!("gradient has {} entries, expected {}", grad.len(), x.len())));
        }
        trace.push(value);
        if value > best {
            best = value;
            best_x.clone_from(&x);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience_decay {
                // resume from the best iterate with fresh moments at the smaller step
                lr *= cfg.lr_decay;
                lr_decays.push(epoch);
                since_best = 0;
                x.clone_from(&best_x);
                state = AdamState::new(x.len());
            }
        }
        observer(&EpochInfo { epoch, value, best, lr, x: &x });

        if trace.len() >= cfg.stop_window {
            let tail = &trace[trace.len() - cfg.stop_window..];
            let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
            if hi - lo < cfg.stop_oscillation {
                return Ok(Maximum {
                    x: best_x,
                    value: best,
                    trace,
                    lr_decays,
                    stop_reason: StopReason::Converged,
                    abort_message: None,
                });
            }
        }
        if epoch + 1 == cfg.max_epochs {
            break;
        }
        for i in 0..x.len() {
            step[i] = if mask[i] { -grad[i] } else { 0.0 };
        }
        adam_step(&mut x, &step, &mut state, lr, &cfg.adam)?;
    }
    Ok(Maximum { x: best_x, value: best, trace, lr_decays, stop_reason: StopReason::MaxEpochs, abort_message: None })
}

fn abort(x: Vec<f64>, value: f64, trace: Vec<f64>, lr_decays: Vec<usize>, msg: String) -> Maximum {
    Maximum { x, value, trace, lr_decays, stop_reason: StopReason::NumericalAbort, abort_message: Some(msg) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub trace: Vec<f64>,
    pub params: ModelParams,
    pub initial_log_likelihood: f64,
    pub best_log_likelihood: f64,
    pub epochs: usize,
    pub stop_reason: StopReason,
    pub abort_message: Option<String>,
    /// Epoch indices at which the learning rate was decayed.
    pub lr_decays: Vec<usize>,
    pub seed: u64,
    /// Kept out of serialized artifacts so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Default starting point for a fit, seeded from `fit_config.seed`.
pub fn initial_params(
    events: &[Event],
    landmarks: &[Landmark],
    config: &KernelConfig,
    fit_config: &FitConfig,
) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(fit_config.seed);
    let mut p = ModelParams::initial(events.len(), config, landmarks.len(), &fit_config.hidden, &mut rng)?;
    if fit_config.net_init == NetInit::Symmetric {
        for net in p.nets_mut() {
            *net = NetworkWeights::symmetric(&fit_config.hidden, &mut rng);
        }
    }
    Ok(p)
}

pub fn fit(events: &[Event], landmarks: &[Landmark], config: &KernelConfig, fit_config: &FitConfig) -> Result<FitReport> {
    let init = initial_params(events, landmarks, config, fit_config)?;
    fit_from(events, landmarks, config, fit_config, init, &mut |_| {})
}

/// Fit from an explicit starting point, reporting every epoch to `observer`.
pub fn fit_from(
    events: &[Event],
    landmarks: &[Landmark],
    config: &KernelConfig,
    fit_config: &FitConfig,
    init: ModelParams,
    observer: &mut dyn FnMut(&EpochInfo<'_>),
) -> Result<FitReport> {
    if events.len() < 2 {
        return Err(invalid(format!("fit needs at least 2 events, got {}", events.len())));
    }
    config.validate()?;
    validate_landmarks(landmarks)?;
    let started = Instant::now();
    let mask: Vec<bool> = (0..init.len())
        .map(|i| fit_config.train_nets || !matches!(init.group_of(i), ParamGroup::Net(_)))
        .collect();
    let template = init.clone();
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = template.with_flat(x)?;
        let g = log_likelihood_grad_with(events, &p, config, landmarks, fit_config.train_nets)?;
        Ok((g.breakdown.total, g.grad))
    };
    let best = maximize(objective, init.to_flat(), &mask, fit_config, observer)?;
    Ok(FitReport {
        initial_log_likelihood: best.trace[0],
        best_log_likelihood: best.value,
        epochs: best.trace.len(),
        trace: best.trace,
        params: template.with_flat(&best.x)?,
        stop_reason: best.stop_reason,
        abort_message: best.abort_message,
        lr_decays: best.lr_decays,
        seed: fit_config.seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
