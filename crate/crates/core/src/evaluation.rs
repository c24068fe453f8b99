//! Weekly per-region case counts and MAE quantiles.
//!
//! Expected counts integrate the intensity over each region and week with a
//! fixed quasi-random grid: 4096 Halton points per region and 64 midpoint
//! times per week, so every evaluation is deterministic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{point_in_polygon, BoundingBox, RegionMap};
use crate::intensity::IntensityContext;
use crate::kernels::{spatial_value, temporal_value, LocalFeatures};
use crate::params::ModelParams;
use crate::trainer::{fit, FitConfig, FitReport};
use crate::types::{KernelConfig, Landmark};
use crate::{Event, Point};

pub const DAYS_PER_WEEK: f64 = 7.0;
pub const SPACE_POINTS: usize = 4096;
pub const TIME_POINTS: usize = 64;
pub const DEFAULT_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

/// Weeks × regions matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub weeks: Vec<usize>,
    pub regions: Vec<String>,
    pub values: Vec<f64>,
}

impl CountMatrix {
    pub fn new(weeks: Vec<usize>, regions: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != weeks.len() * regions.len() {
            return Err(Error::Shape(format!(
                "{} values for {} weeks × {} regions",
                values.len(),
                weeks.len(),
                regions.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("counts must be non-negative"));
        }
        Ok(Self { weeks, regions, values })
    }

    pub fn zeros(weeks: Vec<usize>, regions: Vec<String>) -> Self {
        let values = vec![0.0; weeks.len() * regions.len()];
        Self { weeks, regions, values }
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn get(&self, week: usize, region: usize) -> f64 {
        self.values[week * self.regions.len() + region]
    }

    pub fn set(&mut self, week: usize, region: usize, v: f64) {
        let n = self.regions.len();
        self.values[week * n + region] = v;
    }

    pub fn row(&self, week: usize) -> &[f64] {
        let n = self.regions.len();
        &self.values[week * n..(week + 1) * n]
    }

    pub fn column(&self, region: usize) -> Vec<f64> {
        (0..self.weeks.len()).map(|w| self.get(w, region)).collect()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.weeks != other.weeks || self.regions != other.regions {
            return Err(Error::Shape("count matrices cover different weeks or regions".into()));
        }
        Ok(())
    }
}

/// Number of complete weeks in `[0, horizon]`.
pub fn full_weeks(horizon: f64) -> usize {
    (horizon / DAYS_PER_WEEK + 1e-9).floor() as usize
}

/// Observed events per region for each listed week; events outside every
/// region are ignored.
pub fn observed_counts(events: &[Event], regions: &RegionMap, weeks: &[usize]) -> CountMatrix {
    let ids: Vec<String> = regions.regions().iter().map(|r| r.id.clone()).collect();
    let mut m = CountMatrix::zeros(weeks.to_vec(), ids);
    for e in events {
        let w = (e.t / DAYS_PER_WEEK).floor() as usize;
        if let (Some(row), Some(r)) = (weeks.iter().position(|&x| x == w), regions.locate(e.s)) {
            let v = m.get(row, r);
            m.set(row, r, v + 1.0);
        }
    }
    m
}

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Fixed quadrature points per region, each carrying weight `area / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub points: Vec<Vec<Point>>,
    pub weights: Vec<f64>,
    pub time_points: usize,
    pub region_ids: Vec<String>,
}

impl QuadratureGrid {
    pub fn new(regions: &RegionMap) -> Result<Self> {
        Self::with_resolution(regions, SPACE_POINTS, TIME_POINTS)
    }

    pub fn with_resolution(regions: &RegionMap, space_points: usize, time_points: usize) -> Result<Self> {
        if space_points == 0 || time_points == 0 {
            return Err(invalid("quadrature resolution must be positive"));
        }
        let mut points = Vec::with_capacity(regions.len());
        let mut weights = Vec::with_capacity(regions.len());
        for (i, region) in regions.regions().iter().enumerate() {
            let bb = BoundingBox::of_points(region.polygon.iter())
                .ok_or_else(|| invalid(format!("region {} has no vertices", region.id)))?;
            let mut pts = Vec::with_capacity(space_points);
            let max_tries = (space_points as u64) * 10_000;
            let mut k = 1u64;
            while pts.len() < space_points && k <= max_tries {
                let p = [bb.min[0] + halton(k, 2) * bb.width(), bb.min[1] + halton(k, 3) * bb.height()];
                if point_in_polygon(p, &region.polygon) {
                    pts.push(p);
                }
                k += 1;
            }
            if pts.len() < space_points {
                return Err(invalid(format!("region {} is degenerate: quadrature grid could not be filled", region.id)));
            }
            weights.push(regions.area(i) / space_points as f64);
            points.push(pts);
        }
        Ok(Self {
            points,
            weights,
            time_points,
            region_ids: regions.regions().iter().map(|r| r.id.clone()).collect(),
        })
    }

    fn time_nodes(&self, week: usize) -> impl Iterator<Item = f64> + '_ {
        let dt = DAYS_PER_WEEK / self.time_points as f64;
        let t0 = week as f64 * DAYS_PER_WEEK;
        (0..self.time_points).map(move |k| t0 + (k as f64 + 0.5) * dt)
    }
}

/// Expected counts `∫_week ∫_region λ` of the model for every listed week,
/// using the context's history as the conditioning set. The temporal and
/// spatial quadratures factorize because the triggering kernel is separable.
pub fn expected_counts(ctx: &IntensityContext<'_>, grid: &QuadratureGrid, weeks: &[usize]) -> Result<CountMatrix> {
    let params = ctx.params;
    let (c, sigma0) = (params.magnitude(), params.sigma0());
    let window = ctx.window();
    let history = ctx.history;
    let hist_feats = ctx.history_features();
    let dt = DAYS_PER_WEEK / grid.time_points as f64;
    // proposal-free pruning radius: beyond it every spatial term is below e^{-40} of its peak
    let u_bound = ctx.config.error_bound()?.u;
    let tau_z = params.tau_z();
    let env_var = 2.0 * tau_z * tau_z * u_bound * ctx.config.ellipse_area / std::f64::consts::PI;
    let cutoff2 = 80.0 * env_var;

    let feats: Vec<Vec<LocalFeatures>> =
        grid.points.par_iter().map(|pts| pts.iter().map(|&u| ctx.features_at(u)).collect()).collect();
    let backgrounds: Vec<Vec<f64>> =
        grid.points.par_iter().map(|pts| pts.iter().map(|&u| ctx.background_at(u)).collect()).collect();

    let cells: Vec<(usize, usize)> = (0..weeks.len()).flat_map(|w| (0..grid.points.len()).map(move |r| (w, r))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(wi, r)| {
            let week = weeks[wi];
            let t_lo = week as f64 * DAYS_PER_WEEK;
            let t_hi = t_lo + DAYS_PER_WEEK;
            let start = history.partition_point(|e| e.t < t_lo - window);
            let end = history.partition_point(|e| e.t < t_hi);
            let time_weight: Vec<(usize, f64)> = (start..end)
                .filter_map(|j| {
                    let tj = history[j].t;
                    let w: f64 = grid
                        .time_nodes(week)
                        .filter(|&tau| tau > tj && tau - tj <= window)
                        .map(|tau| temporal_value(tau - tj, c, sigma0) * dt)
                        .sum();
                    (w > 0.0).then_some((j, w))
                })
                .collect();
            let mut total = 0.0;
            for (k, &u) in grid.points[r].iter().enumerate() {
                let mut v = backgrounds[r][k] * DAYS_PER_WEEK;
                for &(j, w) in &time_weight {
                    let d = [u[0] - history[j].s[0], u[1] - history[j].s[1]];
                    if d[0] * d[0] + d[1] * d[1] > cutoff2 {
                        continue;
                    }
                    v += w * spatial_value(d, &feats[r][k], &hist_feats[j]);
                }
                total += v;
            }
            total * grid.weights[r]
        })
        .collect();
    CountMatrix::new(weeks.to_vec(), grid.region_ids.clone(), values)
}

/// Expected counts for an arbitrary intensity, by brute-force quadrature.
pub fn expected_counts_with<F>(intensity: F, grid: &QuadratureGrid, weeks: &[usize]) -> Result<CountMatrix>
where
    F: Fn(f64, Point) -> f64 + Sync,
{
    let dt = DAYS_PER_WEEK / grid.time_points as f64;
    let cells: Vec<(usize, usize)> = (0..weeks.len()).flat_map(|w| (0..grid.points.len()).map(move |r| (w, r))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(wi, r)| {
            let mut total = 0.0;
            for tau in grid.time_nodes(weeks[wi]) {
                for &u in &grid.points[r] {
                    total += intensity(tau, u);
                }
            }
            total * dt * grid.weights[r]
        })
        .collect();
    CountMatrix::new(weeks.to_vec(), grid.region_ids.clone(), values)
}

/// Constant-rate prediction `rate · area(r) · 7` for every week.
pub fn poisson_counts(rate: f64, regions: &RegionMap, weeks: &[usize]) -> CountMatrix {
    let ids: Vec<String> = regions.regions().iter().map(|r| r.id.clone()).collect();
    let values = weeks.iter().flat_map(|_| (0..regions.len()).map(|r| rate * regions.area(r) * DAYS_PER_WEEK)).collect();
    CountMatrix { weeks: weeks.to_vec(), regions: ids, values }
}

/// Linear-interpolation quantile of `values` (sorted internally).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Mean absolute error over weeks, per region.
pub fn per_region_mae(predicted: &CountMatrix, observed: &CountMatrix) -> Result<Vec<f64>> {
    predicted.check_same_shape(observed)?;
    if predicted.n_weeks() == 0 {
        return Err(invalid("no weeks to score"));
    }
    let weeks = predicted.n_weeks() as f64;
    Ok((0..predicted.n_regions())
        .map(|r| (0..predicted.n_weeks()).map(|w| (predicted.get(w, r) - observed.get(w, r)).abs()).sum::<f64>() / weeks)
        .collect())
}

/// Quantiles of the per-region MAE distribution.
pub fn mae_quantiles(predicted: &CountMatrix, observed: &CountMatrix, qs: &[f64]) -> Result<Vec<f64>> {
    let mut mae = per_region_mae(predicted, observed)?;
    mae.sort_by(|a, b| a.total_cmp(b));
    Ok(qs.iter().map(|&q| quantile_sorted(&mae, q)).collect())
}

/// Quantiles over all region-week absolute errors.
pub fn region_week_quantiles(predicted: &CountMatrix, observed: &CountMatrix, qs: &[f64]) -> Result<Vec<f64>> {
    predicted.check_same_shape(observed)?;
    let mut err: Vec<f64> = predicted.values.iter().zip(&observed.values).map(|(p, o)| (p - o).abs()).collect();
    err.sort_by(|a, b| a.total_cmp(b));
    Ok(qs.iter().map(|&q| quantile_sorted(&err, q)).collect())
}

pub const RANDOM_REPLICATIONS: usize = 100;

/// The "Random" baseline: each replication draws Poisson counts with the given
/// means and scores them; the median over replications of every quantile is
/// reported.
pub fn random_baseline_quantiles(
    means: &CountMatrix,
    observed: &CountMatrix,
    qs: &[f64],
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    means.check_same_shape(observed)?;
    if replications == 0 {
        return Err(invalid("at least one replication is required"));
    }
    let per_rep: Vec<Vec<f64>> = (0..replications as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
            let values = means
                .values
                .iter()
                .map(|&m| if m > 0.0 { Poisson::new(m).map(|d| d.sample(&mut rng)).unwrap_or(0.0) } else { 0.0 })
                .collect();
            let sample = CountMatrix { values, ..means.clone() };
            mae_quantiles(&sample, observed, qs)
        })
        .collect::<Result<_>>()?;
    Ok((0..qs.len()).map(|i| quantile(&per_rep.iter().map(|r| r[i]).collect::<Vec<_>>(), 0.5)).collect())
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub quantiles: Vec<f64>,
    pub log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub week: usize,
    pub message: String,
}

/// Out-of-sample one-week-ahead predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub predicted: CountMatrix,
    pub observed: CountMatrix,
    pub reports: Vec<Option<FitReport>>,
    pub failures: Vec<FoldFailure>,
}

impl Backtest {
    /// Predicted and observed matrices restricted to the folds that succeeded.
    pub fn successful(&self) -> (CountMatrix, CountMatrix) {
        let keep: Vec<usize> = (0..self.predicted.n_weeks()).filter(|&w| self.reports[w].is_some()).collect();
        let pick = |m: &CountMatrix| CountMatrix {
            weeks: keep.iter().map(|&w| m.weeks[w]).collect(),
            regions: m.regions.clone(),
            values: keep.iter().flat_map(|&w| m.row(w).to_vec()).collect(),
        };
        (pick(&self.predicted), pick(&self.observed))
    }
}

/// Minimum number of training weeks before the first prediction.
pub const MIN_TRAINING_WEEKS: usize = 4;

/// Events strictly before `cutoff`.
pub fn events_before(events: &[Event], cutoff: f64) -> &[Event] {
    &events[..events.partition_point(|e| e.t < cutoff)]
}

/// For each week `w` in `first_week..first_week + horizon`: fit on events with
/// `t < 7w`, then predict week `w` conditioning on those events only.
#[allow(clippy::too_many_arguments)]
pub fn rolling_backtest(
    events: &[Event],
    regions: &RegionMap,
    landmarks: &[Landmark],
    kernel: &KernelConfig,
    fit_config: &FitConfig,
    first_week: usize,
    horizon: usize,
) -> Result<Backtest> {
    if first_week < MIN_TRAINING_WEEKS {
        return Err(invalid(format!("backtest needs at least {MIN_TRAINING_WEEKS} training weeks, first week is {first_week}")));
    }
    if horizon == 0 {
        return Err(invalid("backtest horizon must be at least one week"));
    }
    let weeks: Vec<usize> = (first_week..first_week + horizon).collect();
    let grid = QuadratureGrid::new(regions)?;
    type Fold = (Result<(Vec<f64>, FitReport)>, usize);
    let folds: Vec<Fold> = weeks
        .par_iter()
        .map(|&w| {
            let cutoff = w as f64 * DAYS_PER_WEEK;
            let train = events_before(events, cutoff);
            let run = || -> Result<(Vec<f64>, FitReport)> {
                let cfg = KernelConfig { horizon: cutoff, ..kernel.clone() };
                let report = fit(train, landmarks, &cfg, fit_config)?;
                let ctx = IntensityContext::new(&report.params, &cfg, landmarks, train)?;
                let m = expected_counts(&ctx, &grid, &[w])?;
                Ok((m.values, report))
            };
            (run(), w)
        })
        .collect();
    let ids = grid.region_ids.clone();
    let mut predicted = CountMatrix::zeros(weeks.clone(), ids);
    let mut reports = Vec::with_capacity(weeks.len());
    let mut failures = Vec::new();
    for (row, (res, w)) in folds.into_iter().enumerate() {
        match res {
            Ok((vals, rep)) => {
                for (r, v) in vals.into_iter().enumerate() {
                    predicted.set(row, r, v);
                }
                reports.push(Some(rep));
            }
            Err(e) => {
                failures.push(FoldFailure { week: w, message: e.to_string() });
                reports.push(None);
            }
        }
    }
    Ok(Backtest { predicted, observed: observed_counts(events, regions, &weeks), reports, failures })
}

/// Convenience: expected counts of a fitted model, conditioning on `history`.
pub fn model_counts(
    params: &ModelParams,
    kernel: &KernelConfig,
    landmarks: &[Landmark],
    history: &[Event],
    grid: &QuadratureGrid,
    weeks: &[usize],
) -> Result<CountMatrix> {
    let ctx = IntensityContext::new(params, kernel, landmarks, history)?;
    expected_counts(&ctx, grid, weeks)
}
