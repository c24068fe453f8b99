//! Autoregressive AR(p) model and partial autocorrelations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Paper default order.
pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArParams {
    pub order: usize,
    /// `φ_1..φ_p`, coefficient `k` multiplies `x_{t−k−1}`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub innovation_variance: f64,
    /// The design was singular and only the intercept was fitted.
    pub intercept_only: bool,
}

/// Least squares on `x_t = c + Σ_k φ_k x_{t−k} + e_t`.
pub fn ar_fit(series: &[f64], order: usize) -> Result<ArParams> {
    if order == 0 {
        return Err(invalid("AR order must be at least 1"));
    }
    if series.len() <= order + 2 {
        return Err(invalid(format!("AR({order}) needs more than {} observations, got {}", order + 2, series.len())));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(invalid("AR series contains non-finite values"));
    }
    let rows = series.len() - order;
    let design = DMatrix::from_fn(rows, order + 1, |r, c| if c == 0 { 1.0 } else { series[order + r - c] });
    let target = DVector::from_fn(rows, |r, _| series[order + r]);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank_ok = svd.singular_values.iter().all(|&s| s > 1e-10 * smax.max(1.0));
    if !rank_ok {
        let mean = target.mean();
        let var = target.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / rows as f64;
        return Ok(ArParams {
            order,
            coefficients: vec![0.0; order],
            intercept: mean,
            innovation_variance: var,
            intercept_only: true,
        });
    }
    let beta = svd.solve(&target, 1e-14).map_err(|e| invalid(format!("AR least squares failed: {e}")))?;
    let resid = &target - &design * &beta;
    Ok(ArParams {
        order,
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        innovation_variance: resid.norm_squared() / rows as f64,
        intercept_only: false,
    })
}

/// One-step-ahead prediction from the most recent `order` values of `history`.
pub fn ar_predict(p: &ArParams, history: &[f64]) -> Result<f64> {
    if history.len() < p.order {
        return Err(invalid(format!("AR({}) prediction needs {} past values, got {}", p.order, p.order, history.len())));
    }
    let n = history.len();
    Ok(p.intercept + p.coefficients.iter().enumerate().map(|(k, phi)| phi * history[n - 1 - k]).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pacf {
    /// Partial autocorrelation at lags `1..=max_lag`.
    pub values: Vec<f64>,
    /// Half-width of the approximate 95% band, `1.96/√n`.
    pub band: f64,
    /// Zero-variance series; values are reported as 0.
    pub degenerate: bool,
}

/// Biased sample autocorrelations at lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    (0..=max_lag)
        .map(|k| {
            if k >= n || c0 == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            series[..n - k].iter().zip(&series[k..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / c0
        })
        .collect()
}

/// Durbin–Levinson recursion on the sample autocorrelations.
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Pacf> {
    if max_lag == 0 || series.len() <= max_lag {
        return Err(invalid(format!("PACF up to lag {max_lag} needs more than {max_lag} observations")));
    }
    let n = series.len();
    let band = 1.96 / (n as f64).sqrt();
    let mean = series.iter().sum::<f64>() / n as f64;
    if series.iter().all(|x| (x - mean).abs() == 0.0) {
        return Ok(Pacf { values: vec![0.0; max_lag], band, degenerate: true });
    }
    let r = acf(series, max_lag);
    let mut values = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::new();
    let mut v = 1.0;
    for k in 1..=max_lag {
        let num = r[k] - phi.iter().enumerate().map(|(j, p)| p * r[k - 1 - j]).sum::<f64>();
        let a = if v > 0.0 { num / v } else { 0.0 };
        let mut next = vec![0.0; k];
        for j in 0..k - 1 {
            next[j] = phi[j] - a * phi[k - 2 - j];
        }
        next[k - 1] = a;
        phi = next;
        v *= 1.0 - a * a;
        values.push(a);
    }
    Ok(Pacf { values, band, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_ar1() {
        let mut x = vec![3.0];
        for _ in 0..40 {
            let last = *x.last().unwrap();
            x.push(0.5 * last);
        }
        let p = ar_fit(&x, 1).unwrap();
        assert!((p.coefficients[0] - 0.5).abs() < 1e-10);
        assert!(p.intercept.abs() < 1e-10);
        assert!(!p.intercept_only);
        assert!((ar_predict(&p, &x).unwrap() - 0.5 * x[40]).abs() < 1e-10);
    }

    #[test]
    fn exact_ar3_with_intercept() {
        let phi = [0.4, -0.2, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        for t in 3..60 {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let det = 1.5 + phi[0] * x[t - 1] + phi[1] * x[t - 2] + phi[2] * x[t - 3];
            // a little noise in the first half keeps the design full rank
            x.push(if t < 30 { det + noise } else { det });
        }
        let tail = &x[27..45];
        let p = ar_fit(tail, 3).unwrap();
        for (c, want) in p.coefficients.iter().zip(phi) {
            assert!((c - want).abs() < 1e-8);
        }
        assert!((p.intercept - 1.5).abs() < 1e-8);
    }

    #[test]
    fn constant_series_falls_back() {
        let p = ar_fit(&[2.0; 20], 3).unwrap();
        assert!(p.intercept_only);
        assert_eq!(p.intercept, 2.0);
        let q = pacf(&[2.0; 20], 5).unwrap();
        assert!(q.degenerate);
    }

    #[test]
    fn pacf_lag_one_is_acf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = vec![0.0];
        for _ in 0..2000 {
            let e: f64 = StandardNormal.sample(&mut rng);
            let last = *x.last().unwrap();
            x.push(0.6 * last + e);
        }
        let p = pacf(&x, 5).unwrap();
        assert!((p.values[0] - acf(&x, 1)[1]).abs() < 1e-14);
        assert!((p.values[0] - 0.6).abs() < 0.05);
        assert!(p.values[1..].iter().all(|v| v.abs() < 3.0 * p.band));
    }

    #[test]
    fn pacf_cuts_off_for_ar2() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = vec![0.0, 0.0];
        for t in 2..5000 {
            let e: f64 = StandardNormal.sample(&mut rng);
            x.push(0.5 * x[t - 1] + 0.3 * x[t - 2] + e);
        }
        let p = pacf(&x, 6).unwrap();
        assert!((p.values[1] - 0.3).abs() < 0.05);
        assert!(p.values[2..].iter().all(|v| v.abs() < 3.0 * p.band));
    }

    #[test]
    fn short_series_rejected() {
        assert!(ar_fit(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).is_err());
        assert!(pacf(&[1.0, 2.0], 2).is_err());
    }
}
