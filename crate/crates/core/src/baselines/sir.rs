//! Discrete-time SIR per region, fitted to weekly new-case counts.
//!
//! Starting at the week of the first case with `I0` set to that week's count,
//!
//! ```text
//! new_t = β S_{t−1} I_{t−1} / N
//! S_t = S_{t−1} − new_t,  I_t = I_{t−1} + new_t − γ I_{t−1},  R_t = N − S_t − I_t
//! ```
//!
//! The predicted count is `I0` at the first week and `new_t` afterwards.
//! `(β, γ)` minimize the squared error to the observed counts via a coarse
//! grid over `[0, 5] × [0, 1]` refined by Nelder–Mead.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const BETA_MAX: f64 = 5.0;
const GRID_BETA: usize = 51;
const GRID_GAMMA: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub beta: f64,
    pub gamma: f64,
    pub population: f64,
    pub i0: f64,
    /// Index of the first week with a positive count.
    pub start_week: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirTrajectory {
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub new_cases: Vec<f64>,
}

/// Weekly Euler trajectory over `weeks` steps starting from `(N − I0, I0, 0)`.
pub fn sir_trajectory(beta: f64, gamma: f64, population: f64, i0: f64, weeks: usize) -> SirTrajectory {
    let mut tr = SirTrajectory {
        s: Vec::with_capacity(weeks),
        i: Vec::with_capacity(weeks),
        r: Vec::with_capacity(weeks),
        new_cases: Vec::with_capacity(weeks),
    };
    if weeks == 0 {
        return tr;
    }
    let mut s = population - i0;
    let mut i = i0;
    tr.s.push(s);
    tr.i.push(i);
    tr.r.push(population - (s + i));
    tr.new_cases.push(i0);
    for _ in 1..weeks {
        let new = (beta * s * i / population).min(s);
        let rec = gamma * i;
        s -= new;
        i = i + new - rec;
        tr.s.push(s);
        tr.i.push(i);
        tr.r.push(population - (s + i));
        tr.new_cases.push(new);
    }
    tr
}

/// Predicted weekly new cases over weeks `0..weeks`, zero before `start_week`.
pub fn sir_predict(p: &SirParams, weeks: usize) -> Vec<f64> {
    let mut out = vec![0.0; weeks];
    if p.start_week < weeks {
        let tr = sir_trajectory(p.beta, p.gamma, p.population, p.i0, weeks - p.start_week);
        out[p.start_week..].copy_from_slice(&tr.new_cases);
    }
    out
}

fn loss(beta: f64, gamma: f64, population: f64, observed: &[f64]) -> f64 {
    let tr = sir_trajectory(beta, gamma, population, observed[0], observed.len());
    tr.new_cases.iter().zip(observed).map(|(p, o)| (p - o) * (p - o)).sum()
}

/// Nelder–Mead minimization of `f` over `[lo, hi]` (points are clamped).
pub(crate) fn nelder_mead<F: Fn(&[f64; 2]) -> f64>(f: F, start: [f64; 2], lo: [f64; 2], hi: [f64; 2], tol: f64) -> [f64; 2] {
    let clamp = |p: [f64; 2]| [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])];
    let step = [0.05 * (hi[0] - lo[0]), 0.05 * (hi[1] - lo[1])];
    let mut simplex = [
        clamp(start),
        clamp([start[0] + step[0], start[1]]),
        clamp([start[0], start[1] + step[1]]),
    ];
    if simplex[1] == simplex[0] {
        simplex[1] = clamp([start[0] - step[0], start[1]]);
    }
    if simplex[2] == simplex[0] {
        simplex[2] = clamp([start[0], start[1] - step[1]]);
    }
    let mut vals = simplex.map(|p| f(&p));
    for _ in 0..2000 {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.map(|k| simplex[k]);
        vals = idx.map(|k| vals[k]);
        let spread = (vals[2] - vals[0]).abs();
        let size = (0..2).map(|d| (simplex[2][d] - simplex[0][d]).abs().max((simplex[1][d] - simplex[0][d]).abs())).fold(0.0, f64::max);
        if spread <= tol * (1.0 + vals[0].abs()) && size <= tol {
            break;
        }
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along = |t: f64| clamp([centroid[0] + t * (simplex[2][0] - centroid[0]), centroid[1] + t * (simplex[2][1] - centroid[1])]);
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[2] = xe;
                vals[2] = fe;
            } else {
                simplex[2] = xr;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = xr;
            vals[2] = fr;
        } else {
            let xc = if fr < vals[2] { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < vals[2].min(fr) {
                simplex[2] = xc;
                vals[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = clamp([
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ]);
                    vals[k] = f(&simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    simplex[best]
}

pub fn sir_fit(counts: &[f64], population: f64) -> Result<SirParams> {
    if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(invalid("SIR counts must be finite and non-negative"));
    }
    let total: f64 = counts.iter().sum();
    if !(population.is_finite() && population > 0.0 && population >= total) {
        return Err(invalid(format!("population {population} must be positive and at least the case total {total}")));
    }
    let Some(start_week) = counts.iter().position(|&c| c > 0.0) else {
        return Ok(SirParams { beta: 0.0, gamma: 0.0, population, i0: 0.0, start_week: counts.len() });
    };
    let observed = &counts[start_week..];
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for bi in 0..GRID_BETA {
        let beta = BETA_MAX * bi as f64 / (GRID_BETA - 1) as f64;
        for gi in 0..GRID_GAMMA {
            let gamma = gi as f64 / (GRID_GAMMA - 1) as f64;
            let l = loss(beta, gamma, population, observed);
            if l < best.0 {
                best = (l, [beta, gamma]);
            }
        }
    }
    let refined = nelder_mead(|x| loss(x[0], x[1], population, observed), best.1, [0.0, 0.0], [BETA_MAX, 1.0], 1e-12);
    Ok(SirParams { beta: refined[0], gamma: refined[1], population, i0: observed[0], start_week })
}
