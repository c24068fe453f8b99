//! Conditional intensity
//! `λ(t, s) = λ0 + Σ_l γ_l g(s | s_l, σ_l² I) + Σ_{t_j < t} ν(t, t_j) υ(s, s_j)`.

use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::kernels::{spatial_value, temporal_value, LocalFeatures};
use crate::params::ModelParams;
use crate::types::{KernelConfig, Landmark};
use crate::Event;
use crate::Point;

/// Isotropic normalized Gaussian `g(s | center, σ² I)`.
#[inline]
pub fn landmark_density(s: Point, center: Point, sigma: f64) -> f64 {
    let dx = s[0] - center[0];
    let dy = s[1] - center[1];
    let var = sigma * sigma;
    (-(dx * dx + dy * dy) / (2.0 * var)).exp() / (2.0 * PI * var)
}

/// Exogenous promotion `Σ_l γ_l g(s | s_l, σ_l² I)`.
pub fn landmark_term(s: Point, landmarks: &[Landmark], gammas: &[f64], sigmas: &[f64]) -> f64 {
    landmarks
        .iter()
        .zip(gammas.iter().zip(sigmas))
        .map(|(l, (&g, &sd))| g * landmark_density(s, l.location, sd))
        .sum()
}

/// Indices `j` with `t - t_j ∈ (0, window]` in a time-sorted history.
pub fn active_range(history: &[Event], t: f64, window: f64) -> Range<usize> {
    let end = history.partition_point(|e| e.t < t);
    let start = history[..end].partition_point(|e| e.t < t - window);
    start..end
}

/// Read-only evaluation context with per-event feature mappings cached once.
#[derive(Debug, Clone)]
pub struct IntensityContext<'a> {
    pub params: &'a ModelParams,
    pub config: &'a KernelConfig,
    pub landmarks: &'a [Landmark],
    pub history: &'a [Event],
    window: f64,
    gammas: Vec<f64>,
    sigmas: Vec<f64>,
    features: Vec<LocalFeatures>,
}

impl<'a> IntensityContext<'a> {
    pub fn new(
        params: &'a ModelParams,
        config: &'a KernelConfig,
        landmarks: &'a [Landmark],
        history: &'a [Event],
    ) -> Result<Self> {
        Self::with_window(params, config, landmarks, history, config.window(params.sigma0()))
    }

    pub fn with_window(
        params: &'a ModelParams,
        config: &'a KernelConfig,
        landmarks: &'a [Landmark],
        history: &'a [Event],
        window: f64,
    ) -> Result<Self> {
        if !(window > 0.0) {
            return Err(Error::InvalidInput(format!("truncation window must be positive, got {window}")));
        }
        if history.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::InvalidInput("history must be sorted by time".into()));
        }
        if landmarks.len() != params.n_landmarks() {
            return Err(Error::Shape(format!(
                "{} landmarks but parameters carry {} landmark effects",
                landmarks.len(),
                params.n_landmarks()
            )));
        }
        let features = history.iter().map(|e| params.local_features(e.s, config)).collect();
        Ok(Self {
            params,
            config,
            landmarks,
            history,
            window,
            gammas: params.gammas(),
            sigmas: params.sigmas(),
            features,
        })
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn history_features(&self) -> &[LocalFeatures] {
        &self.features
    }

    pub fn features_at(&self, s: Point) -> LocalFeatures {
        self.params.local_features(s, self.config)
    }

    /// `λ0 + Σ_l γ_l g(s | s_l, σ_l² I)`.
    pub fn background_at(&self, s: Point) -> f64 {
        self.params.lambda0() + landmark_term(s, self.landmarks, &self.gammas, &self.sigmas)
    }

    /// Self-exciting part at `(t, s)` given the feature mapping at `s`.
    pub fn triggering_at(&self, t: f64, s: Point, feats: &LocalFeatures) -> f64 {
        let (c, sigma0) = (self.params.magnitude(), self.params.sigma0());
        self.active(t)
            .map(|j| {
                let e = &self.history[j];
                let d = [s[0] - e.s[0], s[1] - e.s[1]];
                temporal_value(t - e.t, c, sigma0) * spatial_value(d, feats, &self.features[j])
            })
            .sum()
    }

    /// History indices contributing at time `t`.
    pub fn active(&self, t: f64) -> Range<usize> {
        active_range(self.history, t, self.window)
    }

    /// λ(t, s) with a precomputed feature mapping at `s`; no range checks.
    pub fn intensity_with(&self, t: f64, s: Point, feats: &LocalFeatures) -> f64 {
        self.background_at(s) + self.triggering_at(t, s, feats)
    }

    pub fn conditional_intensity(&self, t: f64, s: Point) -> Result<f64> {
        if !(t >= 0.0 && t <= self.config.horizon) {
            return Err(Error::InvalidInput(format!("t={t} outside [0, {}]", self.config.horizon)));
        }
        if !(s[0].is_finite() && s[1].is_finite()) {
            return Err(Error::InvalidInput("location must be finite".into()));
        }
        let feats = self.features_at(s);
        Ok(self.intensity_with(t, s, &feats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{spatial_kernel, temporal_kernel};
    use crate::neural::NetworkWeights;
    use crate::types::LandmarkCategory;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(rng: &mut ChaCha8Rng, n_landmarks: usize) -> ModelParams {
        let nets = (0..3).map(|_| NetworkWeights::glorot(&[8, 4], rng)).collect();
        ModelParams::new(0.05, 0.8, 1.5, 1.0, vec![2.0; n_landmarks], vec![0.8; n_landmarks], nets).unwrap()
    }

    fn landmark(x: f64, y: f64) -> Landmark {
        Landmark { id: format!("{x},{y}"), category: LandmarkCategory::School, location: [x, y] }
    }

    #[test]
    fn landmark_values() {
        assert_eq!(landmark_term([0.0, 0.0], &[], &[], &[]), 0.0);
        let v = landmark_term([1.0, 2.0], &[landmark(1.0, 2.0)], &[1.0], &[1.0]);
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((v - 0.159155).abs() < 1e-6);
    }

    #[test]
    fn empty_history_is_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = params(&mut rng, 0);
        let cfg = KernelConfig::new(50.0, 100.0);
        let ctx = IntensityContext::new(&p, &cfg, &[], &[]).unwrap();
        for _ in 0..20 {
            let s = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            assert_eq!(ctx.conditional_intensity(rng.random_range(0.0..50.0), s).unwrap(), p.lambda0());
        }
        assert!(ctx.conditional_intensity(51.0, [0.0, 0.0]).is_err());
        assert!(ctx.conditional_intensity(-0.1, [0.0, 0.0]).is_err());
    }

    #[test]
    fn event_beyond_window_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = params(&mut rng, 1);
        let lms = [landmark(0.5, 0.5)];
        let cfg = KernelConfig::new(100.0, 100.0);
        let hist = [Event::new(1.0, 0.0, 0.0)];
        let ctx = IntensityContext::new(&p, &cfg, &lms, &hist).unwrap();
        let t = 1.0 + 10.0 * p.sigma0();
        let got = ctx.conditional_intensity(t, [0.0, 0.0]).unwrap();
        let bg = p.lambda0() + landmark_term([0.0, 0.0], &lms, &p.gammas(), &p.sigmas());
        assert_eq!(got, bg);
    }

    #[test]
    fn single_event_composes_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params(&mut rng, 0);
        let cfg = KernelConfig::new(100.0, 100.0);
        let (t1, s1) = (10.0, [0.3, -0.4]);
        let hist = [Event { t: t1, s: s1 }];
        let ctx = IntensityContext::new(&p, &cfg, &[], &hist).unwrap();
        let delta = 0.7;
        let got = ctx.conditional_intensity(t1 + delta, s1).unwrap();
        let f = p.local_features(s1, &cfg);
        let expected = p.lambda0()
            + temporal_kernel(t1 + delta, t1, p.magnitude(), p.sigma0()).unwrap()
                * spatial_kernel(s1, s1, &f, &f).unwrap();
        assert!((got - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn causality_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = params(&mut rng, 0);
        let cfg = KernelConfig::new(100.0, 100.0);
        let mut hist: Vec<Event> = (0..30)
            .map(|_| Event::new(rng.random_range(0.0..20.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        hist.sort_by(|a, b| a.t.total_cmp(&b.t));
        let ctx = IntensityContext::new(&p, &cfg, &[], &hist).unwrap();
        let extra = Event::new(hist[10].t + 1e-3, 0.1, 0.1);
        let mut hist2 = hist.clone();
        hist2.insert(11, extra);
        let ctx2 = IntensityContext::new(&p, &cfg, &[], &hist2).unwrap();
        for _ in 0..100 {
            let t = rng.random_range(0.0..25.0);
            let s = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = ctx.conditional_intensity(t, s).unwrap();
            let b = ctx2.conditional_intensity(t, s).unwrap();
            assert!(a >= p.lambda0());
            assert!(b >= a - 1e-15 * a);
            if t <= extra.t {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn truncation_is_negligible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = params(&mut rng, 0);
            let cfg = KernelConfig::new(200.0, 100.0);
            let mut hist: Vec<Event> = (0..80)
                .map(|_| Event::new(rng.random_range(0.0..60.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            hist.sort_by(|a, b| a.t.total_cmp(&b.t));
            let trunc = IntensityContext::new(&p, &cfg, &[], &hist).unwrap();
            let full = IntensityContext::with_window(&p, &cfg, &[], &hist, 1e9).unwrap();
            for _ in 0..20 {
                let t = rng.random_range(0.0..70.0);
                let s = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let a = trunc.conditional_intensity(t, s).unwrap();
                let b = full.conditional_intensity(t, s).unwrap();
                assert!((a - b).abs() / b < 1e-12);
            }
        }
    }

    #[test]
    fn ties_are_excluded_from_history() {
        let hist = [Event::new(1.0, 0.0, 0.0), Event::new(2.0, 0.0, 0.0), Event::new(3.0, 0.0, 0.0)];
        assert_eq!(active_range(&hist, 2.0, 10.0), 0..1);
        assert_eq!(active_range(&hist, 3.5, 1.0), 2..3);
        assert_eq!(active_range(&hist, 3.0, 1.0), 1..2);
    }
}
