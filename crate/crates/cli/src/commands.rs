//! Subcommand implementations. Every command reads and validates all of its
//! inputs before the output directory is created or locked.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nsstpp::baselines::{
    ar_fit, ar_predict, etas_fit, etas_intensity, pacf, poisson_fit, sir_fit, sir_predict, EtasParams,
};
use nsstpp::evaluation::{
    expected_counts, expected_counts_with, full_weeks, mae_quantiles, observed_counts, poisson_counts,
    random_baseline_quantiles, region_week_quantiles, rolling_backtest, CountMatrix, QuadratureGrid, ResultRow,
    DAYS_PER_WEEK,
};
use nsstpp::geometry::BoundingBox;
use nsstpp::io::{self, ArtifactMeta, Coordinates, GridSpec, ModelFile};
use nsstpp::neural::NetworkWeights;
use nsstpp::simulator::{simulate, Cause, SimConfig};
use nsstpp::trainer::{fit_from, initial_params, EpochInfo, NetInit};
use nsstpp::{
    error_bound, Event, FitConfig, IntensityContext, KernelConfig, Landmark, LocalProjection,
    ModelParams, RegionMap, StopReason,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::settings::{CoordinateSystem, EvalMode, Settings};

/// Bad command-line usage (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A command ran to completion but hit a numerical abort (exit code 3).
#[derive(Debug)]
pub struct NumericalAbort(pub String);

impl std::fmt::Display for NumericalAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical abort: {}", self.0)
    }
}

impl std::error::Error for NumericalAbort {}

/// Exclusive hold on an output directory, released on drop.
pub struct OutputDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn acquire(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))?;
        let lock = path.join(".nsstpp.lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .with_context(|| format!("output directory {} is locked by another run ({})", path.display(), lock.display()))?;
        Ok(Self { path: path.to_path_buf(), lock })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| nsstpp::Error::Validation(format!("cannot read {}: {e}", path.display())).into())
}

/// Input file kinds that can supply a projection centroid.
#[derive(Clone, Copy)]
enum Source {
    Csv,
    GeoJson,
}

/// `(lon, lat)` pairs from a CSV with `lon`/`lat` columns; unparsable rows are left to validation.
fn csv_lonlat(bytes: &[u8]) -> Vec<(f64, f64)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(bytes);
    let Ok(headers) = rdr.headers().cloned() else { return Vec::new() };
    let (Some(ix), Some(iy)) = (headers.iter().position(|h| h == "lon"), headers.iter().position(|h| h == "lat")) else {
        return Vec::new();
    };
    rdr.records()
        .filter_map(|r| r.ok())
        .filter_map(|r| Some((r.get(ix)?.parse().ok()?, r.get(iy)?.parse().ok()?)))
        .collect()
}

/// Every position in a GeoJSON document.
fn geojson_lonlat(bytes: &[u8]) -> Vec<(f64, f64)> {
    fn walk(v: &serde_json::Value, out: &mut Vec<(f64, f64)>) {
        match v {
            serde_json::Value::Array(a) => match (a.first().and_then(|x| x.as_f64()), a.get(1).and_then(|x| x.as_f64())) {
                (Some(x), Some(y)) => out.push((x, y)),
                _ => a.iter().for_each(|x| walk(x, out)),
            },
            serde_json::Value::Object(o) => {
                for (k, x) in o {
                    if k != "properties" {
                        walk(x, out);
                    }
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    if let Ok(v) = serde_json::from_slice::<serde_json::Value>(bytes) {
        walk(&v, &mut out);
    }
    out
}

/// Raw input files, kept for hashing, and the coordinate system they share.
#[derive(Default)]
struct Inputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    coords: Option<Coordinates>,
}

impl Inputs {
    /// Reads (once) and returns the contents of `path`.
    fn read(&mut self, path: &Path) -> Result<&[u8]> {
        let i = match self.files.iter().position(|(p, _)| p == path) {
            Some(i) => i,
            None => {
                self.files.push((path.to_path_buf(), read_bytes(path)?));
                self.files.len() - 1
            }
        };
        Ok(&self.files[i].1)
    }

    /// Fixes the coordinate system. Lon/lat input without an explicit origin
    /// is projected about the centroid of the first available source.
    fn init_coords(&mut self, s: &Settings, sources: &[(Option<&Path>, Source)]) -> Result<()> {
        let coords = match (s.coordinates, s.origin_lon, s.origin_lat) {
            (CoordinateSystem::Km, ..) => Coordinates::Km,
            (CoordinateSystem::Lonlat, Some(lon), Some(lat)) => Coordinates::LonLat(LocalProjection::new(lon, lat)?),
            (CoordinateSystem::Lonlat, None, None) => {
                let mut points = Vec::new();
                for (path, kind) in sources {
                    let Some(p) = path else { continue };
                    let bytes = self.read(p)?;
                    points = match kind {
                        Source::Csv => csv_lonlat(bytes),
                        Source::GeoJson => geojson_lonlat(bytes),
                    };
                    if !points.is_empty() {
                        break;
                    }
                }
                if points.is_empty() {
                    bail!(Usage("lon/lat input needs --origin-lon/--origin-lat or a file to centre on".into()));
                }
                Coordinates::LonLat(LocalProjection::centered_on(&points)?)
            }
            _ => bail!(Usage("--origin-lon and --origin-lat must be given together".into())),
        };
        self.coords = Some(coords);
        Ok(())
    }

    fn coords(&self) -> Result<Coordinates> {
        self.coords.ok_or_else(|| anyhow!("coordinate system not initialised"))
    }

    fn regions(&mut self, s: &Settings, path: Option<&Path>) -> Result<RegionMap> {
        match path {
            Some(p) => {
                let coords = self.coords()?;
                Ok(io::read_regions_from(self.read(p)?, coords).with_context(|| format!("regions file {}", p.display()))?)
            }
            None => Ok(RegionMap::grid(0.0, 0.0, s.side, s.side, s.grid_n, s.grid_n)?),
        }
    }

    fn landmarks(&mut self, path: Option<&Path>) -> Result<Vec<Landmark>> {
        match path {
            Some(p) => {
                let coords = self.coords()?;
                Ok(io::read_landmarks_from(self.read(p)?, coords).with_context(|| format!("landmarks file {}", p.display()))?)
            }
            None => Ok(Vec::new()),
        }
    }

    fn events(&mut self, path: &Path, horizon: f64, regions: &RegionMap) -> Result<Vec<Event>> {
        let coords = self.coords()?;
        let table = io::read_events_from(self.read(path)?, coords, horizon, Some(regions))
            .with_context(|| format!("events file {}", path.display()))?;
        Ok(table.events)
    }

    fn meta(&self, s: &Settings, command: &str) -> Result<ArtifactMeta> {
        let refs: Vec<&[u8]> = self.files.iter().map(|(_, b)| b.as_slice()).collect();
        Ok(ArtifactMeta { seed: s.seed, config_hash: s.hash(command, &refs)? })
    }

    fn model(&mut self, path: &Path) -> Result<ModelFile> {
        let bytes = self.read(path)?;
        let file: ModelFile = serde_json::from_slice(bytes)
            .map_err(|e| nsstpp::Error::Validation(format!("model file {}: {e}", path.display())))?;
        file.kernel.validate()?;
        Ok(file)
    }
}

fn check_landmarks_inside(landmarks: &[Landmark], bounds: &BoundingBox) -> Result<()> {
    if let Some(l) = landmarks.iter().find(|l| !bounds.contains(l.location)) {
        return Err(nsstpp::Error::Validation(format!("landmark `{}` lies outside the study region", l.id)).into());
    }
    Ok(())
}

// ---------------------------------------------------------------- simulate

pub struct SimulateArgs<'a> {
    pub out: &'a Path,
    pub regions: Option<&'a Path>,
    pub landmarks: Option<&'a Path>,
    pub model: Option<&'a Path>,
}

fn settings_params(s: &Settings, n_landmarks: usize) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let nets = (0..s.components)
        .map(|_| match s.sim_net_init {
            NetInit::Glorot => NetworkWeights::glorot(&s.hidden, &mut rng),
            NetInit::Symmetric => NetworkWeights::symmetric(&s.hidden, &mut rng),
        })
        .collect();
    Ok(ModelParams::new(
        s.lambda0,
        s.magnitude,
        s.sigma0,
        s.tau_z,
        vec![s.landmark_gamma; n_landmarks],
        vec![s.landmark_sigma; n_landmarks],
        nets,
    )?)
}

pub fn simulate_cmd(s: &Settings, a: &SimulateArgs<'_>) -> Result<()> {
    let horizon = s.horizon()?;
    let mut inputs = Inputs::default();
    inputs.init_coords(s, &[(a.regions, Source::GeoJson), (a.landmarks, Source::Csv)])?;
    let regions = inputs.regions(s, a.regions)?;
    let landmarks = inputs.landmarks(a.landmarks)?;
    let bounds = regions.bounds();
    check_landmarks_inside(&landmarks, &bounds)?;
    let (kernel, params) = match a.model {
        Some(p) => {
            let m = inputs.model(p)?;
            if m.params.n_landmarks() != landmarks.len() {
                bail!(nsstpp::Error::Shape(format!(
                    "model carries {} landmark effects but {} landmarks were given",
                    m.params.n_landmarks(),
                    landmarks.len()
                )));
            }
            (KernelConfig { horizon, area_s: regions.union_area(), ..m.kernel }, m.params)
        }
        None => (s.kernel(horizon, regions.union_area()), settings_params(s, landmarks.len())?),
    };
    let sim = SimConfig {
        horizon,
        bounds,
        regions: Some(&regions),
        params: &params,
        kernel: &kernel,
        landmarks: &landmarks,
        strategy: s.strategy,
        seed: s.seed,
        max_events: s.max_events,
    };
    sim.validate()?;
    let meta = inputs.meta(s, "simulate")?;

    let out = OutputDir::acquire(a.out)?;
    let result = simulate(&sim)?;
    if result.truncated {
        eprintln!("warning: event cap {} reached before the horizon; output truncated", s.max_events);
    }
    if result.is_explosive() {
        eprintln!("warning: branching ratio {:.3} ≥ 1, the process is explosive", result.branching_ratio);
    }
    let parents: Vec<Option<usize>> = (0..result.events.len()).map(|i| result.parent(i)).collect();
    io::write_events(&out.file("events.csv"), &result.events, Some(&parents), &meta)?;
    io::write_regions(&out.file("regions.geojson"), &regions, &meta)?;
    if !landmarks.is_empty() {
        io::write_landmarks(&out.file("landmarks.csv"), &landmarks, &meta)?;
    }
    io::write_json(&out.file("truth.json"), &ModelFile { kernel, params: params.clone() }, &meta)?;
    let background = result.causes.iter().filter(|c| matches!(c, Cause::Background)).count();
    let landmark = result.causes.iter().filter(|c| matches!(c, Cause::Landmark(_))).count();
    let summary = json!({
        "events": result.events.len(),
        "background_events": background,
        "landmark_events": landmark,
        "triggered_events": result.events.len() - background - landmark,
        "proposals": result.proposals,
        "truncated": result.truncated,
        "branching_ratio": result.branching_ratio,
    });
    io::write_json(&out.file("simulation.json"), &summary, &meta)?;
    println!("simulated {} events (truncated: {})", result.events.len(), result.truncated);
    Ok(())
}

// ---------------------------------------------------------------- fit

pub struct FitArgs<'a> {
    pub events: &'a Path,
    pub out: &'a Path,
    pub regions: Option<&'a Path>,
    pub landmarks: Option<&'a Path>,
    pub resume: bool,
}

#[derive(Serialize)]
struct TraceRow {
    epoch: usize,
    log_likelihood: f64,
}

pub fn fit_cmd(s: &Settings, a: &FitArgs<'_>) -> Result<()> {
    let horizon = s.horizon()?;
    let mut inputs = Inputs::default();
    inputs.init_coords(s, &[(Some(a.events), Source::Csv), (a.regions, Source::GeoJson), (a.landmarks, Source::Csv)])?;
    let regions = inputs.regions(s, a.regions)?;
    let landmarks = inputs.landmarks(a.landmarks)?;
    check_landmarks_inside(&landmarks, &regions.bounds())?;
    let events = inputs.events(a.events, horizon, &regions)?;
    if events.len() < 2 {
        bail!(nsstpp::Error::Validation(format!("fit needs at least 2 events, found {}", events.len())));
    }
    let kernel = s.kernel(horizon, regions.union_area());
    kernel.validate()?;
    let fit_config = s.fit_config();
    fit_config.validate()?;
    let checkpoint = a.out.join("checkpoint.json");
    let init = if a.resume && checkpoint.exists() {
        let m = inputs.model(&checkpoint)?;
        if m.kernel != kernel {
            bail!(Usage(format!("checkpoint {} was written with a different kernel configuration", checkpoint.display())));
        }
        m.params
    } else {
        initial_params(&events, &landmarks, &kernel, &fit_config)?
    };
    if init.n_landmarks() != landmarks.len() || init.components() != kernel.components {
        bail!(nsstpp::Error::Shape("starting parameters do not match the landmarks or component count".into()));
    }
    let meta = inputs.meta(s, "fit")?;

    let out = OutputDir::acquire(a.out)?;
    let template = init.clone();
    let mut checkpoint_error = None;
    let every = s.checkpoint_every;
    let mut observer = |info: &EpochInfo<'_>| {
        if checkpoint_error.is_some() || info.epoch == 0 || !info.epoch.is_multiple_of(every) {
            return;
        }
        let saved = template
            .with_flat(info.x)
            .map_err(anyhow::Error::from)
            .and_then(|params| Ok(io::write_json(&checkpoint, &ModelFile { kernel: kernel.clone(), params }, &meta)?));
        if let Err(e) = saved {
            checkpoint_error = Some(e);
        }
    };
    let report = fit_from(&events, &landmarks, &kernel, &fit_config, init, &mut observer)?;
    if let Some(e) = checkpoint_error {
        eprintln!("warning: checkpointing failed: {e:#}");
    }
    io::write_json(&out.file("model.json"), &ModelFile { kernel: kernel.clone(), params: report.params.clone() }, &meta)?;
    io::write_json(&out.file("fit_report.json"), &report, &meta)?;
    {
        let mut w = std::io::BufWriter::new(fs::File::create(out.file("trace.csv"))?);
        use std::io::Write;
        writeln!(w, "{}", meta.comment_line())?;
        let mut wtr = csv::Writer::from_writer(w);
        for (epoch, v) in report.trace.iter().enumerate() {
            wtr.serialize(TraceRow { epoch, log_likelihood: *v })?;
        }
        wtr.flush()?;
    }
    println!(
        "stop_reason={} epochs={} log_likelihood={}",
        serde_json::to_value(report.stop_reason)?.as_str().unwrap_or("?"),
        report.epochs,
        report.best_log_likelihood
    );
    if report.stop_reason == StopReason::NumericalAbort {
        return Err(NumericalAbort(report.abort_message.unwrap_or_default()).into());
    }
    Ok(())
}

// ---------------------------------------------------------------- predict

pub struct PredictArgs<'a> {
    pub model: &'a Path,
    pub events: &'a Path,
    pub out: &'a Path,
    pub regions: Option<&'a Path>,
    pub landmarks: Option<&'a Path>,
    pub week: usize,
    pub raster_time: Option<f64>,
}

pub fn predict_cmd(s: &Settings, a: &PredictArgs<'_>) -> Result<()> {
    let mut inputs = Inputs::default();
    inputs.init_coords(s, &[(Some(a.events), Source::Csv), (a.regions, Source::GeoJson), (a.landmarks, Source::Csv)])?;
    let model = inputs.model(a.model)?;
    let regions = inputs.regions(s, a.regions)?;
    let landmarks = inputs.landmarks(a.landmarks)?;
    let data_horizon = s.horizon.unwrap_or(model.kernel.horizon);
    let events = inputs.events(a.events, data_horizon, &regions)?;
    if model.params.n_landmarks() != landmarks.len() {
        bail!(nsstpp::Error::Shape(format!(
            "model carries {} landmark effects but {} landmarks were given",
            model.params.n_landmarks(),
            landmarks.len()
        )));
    }
    let week_start = a.week as f64 * DAYS_PER_WEEK;
    let history: Vec<Event> = match s.mode {
        EvalMode::OutOfSample => events.iter().filter(|e| e.t < week_start).copied().collect(),
        EvalMode::InSample => events.clone(),
    };
    let kernel = KernelConfig { horizon: model.kernel.horizon.max(week_start + DAYS_PER_WEEK), ..model.kernel.clone() };
    let raster_t = a.raster_time.unwrap_or(week_start);
    if !(raster_t >= 0.0 && raster_t <= kernel.horizon) {
        bail!(Usage(format!("raster time {raster_t} outside [0, {}]", kernel.horizon)));
    }
    let meta = inputs.meta(s, "predict")?;
    let grid_spec = GridSpec::covering(&regions.bounds(), s.raster_nx, s.raster_ny);

    let out = OutputDir::acquire(a.out)?;
    let ctx = IntensityContext::new(&model.params, &kernel, &landmarks, &history)?;
    let grid = QuadratureGrid::new(&regions)?;
    let counts = expected_counts(&ctx, &grid, &[a.week])?;
    io::write_counts(&out.file("counts.csv"), &counts, &meta)?;
    let raster = io::intensity_raster(&ctx, raster_t, &grid_spec)?;
    io::write_raster(&out.file("raster.csv"), &grid_spec, raster_t, &raster, &meta)?;
    println!("week {} expected total {:.4}", a.week, counts.values.iter().sum::<f64>());
    Ok(())
}

// ---------------------------------------------------------------- evaluate / baseline

pub const MODELS: [&str; 6] = ["nsstpp", "poisson", "random", "etas", "sir", "ar"];

pub struct EvaluateArgs<'a> {
    pub events: &'a Path,
    pub out: &'a Path,
    pub regions: Option<&'a Path>,
    pub landmarks: Option<&'a Path>,
    pub population: Option<&'a Path>,
    pub models: Vec<String>,
}

struct Study<'a> {
    s: &'a Settings,
    events: Vec<Event>,
    regions: RegionMap,
    landmarks: Vec<Landmark>,
    population: Vec<f64>,
    kernel: KernelConfig,
    fit_config: FitConfig,
    weeks: Vec<usize>,
    meta: ArtifactMeta,
}

/// Per-model predictions plus the diagnostics that go into `evaluation.json`.
struct ModelRun {
    predicted: CountMatrix,
    log_likelihood: Option<f64>,
    notes: Vec<String>,
    fitted: Option<serde_json::Value>,
}

fn etas_fit_config(base: &FitConfig) -> FitConfig {
    // the log-scale ETAS parameters are poorly scaled for the default step
    FitConfig { lr_init: base.lr_init.min(0.1), ..base.clone() }
}

fn etas_counts(p: &EtasParams, history: &[Event], grid: &QuadratureGrid, weeks: &[usize]) -> Result<CountMatrix> {
    Ok(expected_counts_with(|t, s| etas_intensity(t, s, history, p), grid, weeks)?)
}

fn weekly_series(events: &[Event], regions: &RegionMap, n_weeks: usize) -> CountMatrix {
    observed_counts(events, regions, &(0..n_weeks).collect::<Vec<_>>())
}

impl Study<'_> {
    fn area(&self) -> f64 {
        self.kernel.area_s
    }

    fn training(&self, week: usize) -> &[Event] {
        nsstpp::evaluation::events_before(&self.events, week as f64 * DAYS_PER_WEEK)
    }

    fn in_sample(&self) -> bool {
        self.s.mode == EvalMode::InSample
    }

    fn empty(&self) -> CountMatrix {
        let ids = self.regions.regions().iter().map(|r| r.id.clone()).collect();
        CountMatrix::zeros(self.weeks.clone(), ids)
    }

    fn nsstpp(&self, grid: &QuadratureGrid) -> Result<ModelRun> {
        if self.in_sample() {
            let report = nsstpp::fit(&self.events, &self.landmarks, &self.kernel, &self.fit_config)?;
            let ctx = IntensityContext::new(&report.params, &self.kernel, &self.landmarks, &self.events)?;
            let predicted = expected_counts(&ctx, grid, &self.weeks)?;
            let notes = report.abort_message.iter().cloned().collect();
            return Ok(ModelRun {
                predicted,
                log_likelihood: Some(report.best_log_likelihood),
                notes,
                fitted: Some(serde_json::to_value(&report.params)?),
            });
        }
        let first = self.weeks[0];
        let bt = rolling_backtest(&self.events, &self.regions, &self.landmarks, &self.kernel, &self.fit_config, first, self.weeks.len())?;
        let notes = bt.failures.iter().map(|f| format!("week {}: fit failed: {}", f.week, f.message)).collect();
        Ok(ModelRun { predicted: bt.predicted, log_likelihood: None, notes, fitted: None })
    }

    fn poisson_rate(&self, n: usize, horizon: f64) -> Result<f64> {
        Ok(poisson_fit(n, self.area(), horizon)?)
    }

    fn poisson(&self) -> Result<ModelRun> {
        let mut m = self.empty();
        let mut ll = None;
        let mut rate_all = None;
        for (row, &w) in self.weeks.iter().enumerate() {
            let (n, horizon) = if self.in_sample() {
                (self.events.len(), self.kernel.horizon)
            } else {
                (self.training(w).len(), w as f64 * DAYS_PER_WEEK)
            };
            let rate = self.poisson_rate(n, horizon)?;
            let pc = poisson_counts(rate, &self.regions, &[w]);
            for r in 0..m.n_regions() {
                m.set(row, r, pc.get(0, r));
            }
            if self.in_sample() {
                let n = self.events.len() as f64;
                ll = Some(if n > 0.0 { n * rate.ln() - rate * self.area() * horizon } else { 0.0 });
                rate_all = Some(rate);
            }
        }
        Ok(ModelRun { predicted: m, log_likelihood: ll, notes: vec![], fitted: rate_all.map(|r| json!({ "lambda0": r })) })
    }

    fn etas(&self, grid: &QuadratureGrid) -> Result<ModelRun> {
        let cfg = etas_fit_config(&self.fit_config);
        let mut notes = Vec::new();
        if self.in_sample() {
            let f = etas_fit(&self.events, self.area(), self.kernel.horizon, &cfg)?;
            let predicted = etas_counts(&f.params, &self.events, grid, &self.weeks)?;
            return Ok(ModelRun {
                predicted,
                log_likelihood: Some(f.log_likelihood),
                notes,
                fitted: Some(serde_json::to_value(f.params)?),
            });
        }
        let mut m = self.empty();
        for (row, &w) in self.weeks.iter().enumerate() {
            let train = self.training(w);
            match etas_fit(train, self.area(), w as f64 * DAYS_PER_WEEK, &cfg) {
                Ok(f) => {
                    let c = etas_counts(&f.params, train, grid, &[w])?;
                    for r in 0..m.n_regions() {
                        m.set(row, r, c.get(0, r));
                    }
                }
                Err(e) => notes.push(format!("week {w}: ETAS fit failed: {e}")),
            }
        }
        Ok(ModelRun { predicted: m, log_likelihood: None, notes, fitted: None })
    }

    fn sir(&self) -> Result<ModelRun> {
        let mut m = self.empty();
        let mut notes = Vec::new();
        let mut fitted = Vec::new();
        let end = *self.weeks.last().unwrap_or(&0) + 1;
        let all = weekly_series(&self.events, &self.regions, end);
        for r in 0..self.regions.len() {
            let series = all.column(r);
            if self.in_sample() {
                let p = sir_fit(&series, self.population[r])?;
                let pred = sir_predict(&p, end);
                for (row, &w) in self.weeks.iter().enumerate() {
                    m.set(row, r, pred[w]);
                }
                fitted.push(p);
                continue;
            }
            for (row, &w) in self.weeks.iter().enumerate() {
                match sir_fit(&series[..w], self.population[r]) {
                    Ok(p) => m.set(row, r, sir_predict(&p, w + 1)[w]),
                    Err(e) => notes.push(format!("week {w} region {}: SIR fit failed: {e}", self.regions.regions()[r].id)),
                }
            }
        }
        let fitted = if fitted.is_empty() { None } else { Some(serde_json::to_value(fitted)?) };
        Ok(ModelRun { predicted: m, log_likelihood: None, notes, fitted })
    }

    fn ar(&self) -> Result<ModelRun> {
        let order = self.s.ar_order;
        let mut m = self.empty();
        let mut notes = Vec::new();
        let end = *self.weeks.last().unwrap_or(&0) + 1;
        let all = weekly_series(&self.events, &self.regions, end);
        let full = weekly_series(&self.events, &self.regions, full_weeks(self.kernel.horizon).max(end));
        for r in 0..self.regions.len() {
            let series = all.column(r);
            let in_sample_fit = if self.in_sample() { Some(ar_fit(&full.column(r), order)?) } else { None };
            for (row, &w) in self.weeks.iter().enumerate() {
                let history = &series[..w];
                let fitted = match &in_sample_fit {
                    Some(p) => Ok(p.clone()),
                    None => ar_fit(history, order),
                };
                let pred = match fitted.and_then(|p| ar_predict(&p, history)) {
                    Ok(v) => v,
                    Err(e) => {
                        notes.push(format!("week {w} region {}: AR fallback to the mean: {e}", self.regions.regions()[r].id));
                        history.iter().sum::<f64>() / history.len().max(1) as f64
                    }
                };
                m.set(row, r, pred.max(0.0));
            }
        }
        Ok(ModelRun { predicted: m, log_likelihood: None, notes, fitted: None })
    }
}

fn load_study<'a>(s: &'a Settings, a: &EvaluateArgs<'_>, command: &str) -> Result<(Study<'a>, Vec<String>)> {
    let horizon = s.horizon()?;
    let mut inputs = Inputs::default();
    inputs.init_coords(s, &[(Some(a.events), Source::Csv), (a.regions, Source::GeoJson), (a.landmarks, Source::Csv)])?;
    let regions = inputs.regions(s, a.regions)?;
    let landmarks = inputs.landmarks(a.landmarks)?;
    check_landmarks_inside(&landmarks, &regions.bounds())?;
    let events = inputs.events(a.events, horizon, &regions)?;
    let mut notes = Vec::new();
    let population = match a.population {
        Some(p) => io::read_population_from(inputs.read(p)?, &regions).with_context(|| format!("population file {}", p.display()))?,
        None => {
            notes.push(format!("population is synthetic: {} per km² of region area", s.population_density));
            (0..regions.len()).map(|r| regions.area(r) * s.population_density).collect()
        }
    };
    let kernel = s.kernel(horizon, regions.union_area());
    kernel.validate()?;
    let fit_config = s.fit_config();
    fit_config.validate()?;
    let total_weeks = full_weeks(horizon);
    if s.first_week < nsstpp::evaluation::MIN_TRAINING_WEEKS || s.first_week >= total_weeks {
        bail!(Usage(format!(
            "first_week must lie in [{}, {total_weeks}) for a {horizon}-day horizon",
            nsstpp::evaluation::MIN_TRAINING_WEEKS
        )));
    }
    let n = s.weeks.unwrap_or(total_weeks - s.first_week);
    if n == 0 || s.first_week + n > total_weeks {
        bail!(Usage(format!("cannot predict {n} weeks from week {} within {total_weeks} full weeks", s.first_week)));
    }
    let weeks = (s.first_week..s.first_week + n).collect();
    let meta = inputs.meta(s, command)?;
    Ok((Study { s, events, regions, landmarks, population, kernel, fit_config, weeks, meta }, notes))
}

pub fn evaluate_cmd(s: &Settings, a: &EvaluateArgs<'_>, command: &str) -> Result<()> {
    let models: Vec<String> = if a.models.is_empty() { MODELS.iter().map(|m| m.to_string()).collect() } else { a.models.clone() };
    if let Some(m) = models.iter().find(|m| !MODELS.contains(&m.as_str())) {
        bail!(Usage(format!("unknown model `{m}`; expected one of {}", MODELS.join(", "))));
    }
    let (study, mut notes) = load_study(s, a, command)?;
    let grid = QuadratureGrid::new(&study.regions)?;
    let observed = observed_counts(&study.events, &study.regions, &study.weeks);

    let out = OutputDir::acquire(a.out)?;
    let mut rows = Vec::new();
    let mut region_week = Vec::new();
    let mut fitted = serde_json::Map::new();
    let mut poisson_means = None;
    let needs_poisson = models.iter().any(|m| m == "poisson" || m == "random");
    if needs_poisson {
        poisson_means = Some(study.poisson()?);
    }
    for name in &models {
        let run = match name.as_str() {
            "nsstpp" => study.nsstpp(&grid)?,
            "poisson" => poisson_means.take().ok_or_else(|| anyhow!("poisson predictions missing"))?,
            "random" => {
                let means = match &poisson_means {
                    Some(p) => p.predicted.clone(),
                    None => study.poisson()?.predicted,
                };
                let q = random_baseline_quantiles(&means, &observed, &s.quantiles, s.random_replications, s.seed)?;
                rows.push(ResultRow { model: name.clone(), quantiles: q, log_likelihood: None });
                continue;
            }
            "etas" => study.etas(&grid)?,
            "sir" => study.sir()?,
            "ar" => study.ar()?,
            _ => unreachable!("model names are validated above"),
        };
        let q = mae_quantiles(&run.predicted, &observed, &s.quantiles)?;
        if s.per_region_week {
            let v = region_week_quantiles(&run.predicted, &observed, &s.quantiles)?;
            region_week.push(ResultRow { model: name.clone(), quantiles: v, log_likelihood: run.log_likelihood });
        }
        rows.push(ResultRow { model: name.clone(), quantiles: q, log_likelihood: run.log_likelihood });
        io::write_counts(&out.file(&format!("predicted_{name}.csv")), &run.predicted, &study.meta)?;
        notes.extend(run.notes.into_iter().map(|n| format!("{name}: {n}")));
        if let Some(v) = run.fitted {
            fitted.insert(name.clone(), v);
        }
    }
    io::write_counts(&out.file("observed.csv"), &observed, &study.meta)?;
    io::write_results(&out.file("results.csv"), &s.quantiles, &rows, &study.meta)?;
    if s.per_region_week {
        io::write_results(&out.file("results_region_week.csv"), &s.quantiles, &region_week, &study.meta)?;
    }
    let report = json!({
        "mode": s.mode,
        "weeks": study.weeks,
        "models": models,
        "notes": notes,
        "fitted": fitted,
    });
    io::write_json(&out.file("evaluation.json"), &report, &study.meta)?;
    for n in &notes {
        eprintln!("note: {n}");
    }
    for r in &rows {
        let qs: Vec<String> = r.quantiles.iter().map(|v| format!("{v:.4}")).collect();
        println!("{:<8} {}", r.model, qs.join(" "));
    }
    Ok(())
}

// ---------------------------------------------------------------- export-kernel

pub struct ExportArgs<'a> {
    pub model: &'a Path,
    pub out: &'a Path,
    pub regions: Option<&'a Path>,
    pub landmarks: Option<&'a Path>,
    pub anchor: [f64; 2],
    pub grid: Option<GridSpec>,
}

pub fn export_kernel_cmd(s: &Settings, a: &ExportArgs<'_>) -> Result<()> {
    let mut inputs = Inputs::default();
    inputs.init_coords(s, &[(a.regions, Source::GeoJson), (a.landmarks, Source::Csv)])?;
    let model = inputs.model(a.model)?;
    let regions = inputs.regions(s, a.regions)?;
    let landmarks = inputs.landmarks(a.landmarks)?;
    if model.params.n_landmarks() != landmarks.len() {
        bail!(nsstpp::Error::Shape(format!(
            "model carries {} landmark effects but {} landmarks were given",
            model.params.n_landmarks(),
            landmarks.len()
        )));
    }
    let bounds = regions.bounds();
    let grid = a.grid.unwrap_or_else(|| GridSpec::covering(&bounds, s.raster_nx, s.raster_ny));
    if grid.nx == 0 || grid.ny == 0 || !(grid.dx > 0.0 && grid.dy > 0.0) {
        bail!(Usage("export grid needs positive spacing and cell counts".into()));
    }
    let meta = inputs.meta(s, "export-kernel")?;
    let out = OutputDir::acquire(a.out)?;
    let export = io::export_kernel(&out.path, &model.params, &model.kernel, &landmarks, &grid, &bounds, a.anchor, &meta)?;
    for w in &export.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", export.files.join(", "));
    Ok(())
}

// ---------------------------------------------------------------- error-bound

pub fn error_bound_cmd(area: f64, c: f64) -> Result<()> {
    let b = error_bound(area, c).map_err(|e| Usage(e.to_string()))?;
    println!("U = {:.6}", b.u);
    println!("max_rel_err = {:.6}", b.max_rel_err);
    Ok(())
}

// ---------------------------------------------------------------- pacf

pub struct PacfArgs<'a> {
    pub out: &'a Path,
    pub counts: Option<&'a Path>,
    pub events: Option<&'a Path>,
    pub regions: Option<&'a Path>,
}

#[derive(Serialize)]
struct PacfRow<'a> {
    region: &'a str,
    lag: usize,
    pacf: f64,
    band: f64,
    significant: bool,
}

pub fn pacf_cmd(s: &Settings, a: &PacfArgs<'_>) -> Result<()> {
    let mut inputs = Inputs::default();
    inputs.init_coords(s, &[(a.events, Source::Csv), (a.regions, Source::GeoJson)])?;
    let counts = match (a.counts, a.events) {
        (Some(p), None) => io::read_counts_from(inputs.read(p)?).with_context(|| format!("counts file {}", p.display()))?,
        (None, Some(p)) => {
            let horizon = s.horizon()?;
            let regions = inputs.regions(s, a.regions)?;
            let events = inputs.events(p, horizon, &regions)?;
            weekly_series(&events, &regions, full_weeks(horizon))
        }
        _ => bail!(Usage("pass exactly one of --counts or --events".into())),
    };
    let mut results = Vec::new();
    for r in 0..counts.n_regions() {
        let series = counts.column(r);
        let p = pacf(&series, s.max_lag).with_context(|| format!("region {}", counts.regions[r]))?;
        results.push(p);
    }
    let meta = inputs.meta(s, "pacf")?;
    let out = OutputDir::acquire(a.out)?;
    let mut w = std::io::BufWriter::new(fs::File::create(out.file("pacf.csv"))?);
    use std::io::Write;
    writeln!(w, "{}", meta.comment_line())?;
    let mut wtr = csv::Writer::from_writer(w);
    for (r, p) in results.iter().enumerate() {
        if p.degenerate {
            eprintln!("warning: region {} has a constant series; PACF reported as 0", counts.regions[r]);
        }
        for (k, v) in p.values.iter().enumerate() {
            wtr.serialize(PacfRow { region: &counts.regions[r], lag: k + 1, pacf: *v, band: p.band, significant: v.abs() > p.band })?;
        }
    }
    wtr.flush()?;
    println!("wrote PACF up to lag {} for {} regions", s.max_lag, counts.n_regions());
    Ok(())
}
