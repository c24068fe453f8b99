//! Ingestion of events, landmarks and regions, and plot-ready exports.
//!
//! Every CSV written here starts with a `# seed=…,config_hash=…` comment line;
//! the readers skip lines beginning with `#`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::evaluation::{CountMatrix, ResultRow};
use crate::geometry::{BoundingBox, LocalProjection, RegionMap};
use crate::intensity::IntensityContext;
use crate::kernels::spatial_kernel;
use crate::neural;
use crate::params::ModelParams;
use crate::types::{sort_and_separate, KernelConfig, Landmark, LandmarkCategory, Region};
use crate::{Event, Point};

/// Provenance stamped onto every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactMeta {
    pub fn comment_line(&self) -> String {
        format!("# seed={},config_hash={}", self.seed, self.config_hash)
    }
}

/// How coordinates in input files are interpreted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coordinates {
    /// Planar `x, y` in km.
    Km,
    /// `lon, lat` in degrees, projected with the given origin.
    LonLat(LocalProjection),
}

impl Coordinates {
    fn to_point(self, a: f64, b: f64) -> Result<Point> {
        match self {
            Self::Km => {
                if a.is_finite() && b.is_finite() {
                    Ok([a, b])
                } else {
                    Err(Error::Validation(format!("non-finite coordinate ({a}, {b})")))
                }
            }
            Self::LonLat(p) => p.project(a, b),
        }
    }

    fn column_names(&self) -> (&'static str, &'static str) {
        match self {
            Self::Km => ("x", "y"),
            Self::LonLat(_) => ("lon", "lat"),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

fn csv_writer<W: Write>(mut w: W, meta: &ArtifactMeta) -> Result<csv::Writer<W>> {
    writeln!(w, "{}", meta.comment_line())?;
    Ok(csv::Writer::from_writer(w))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Validation(format!("missing column `{name}`")))
}

fn parse_f64(field: Option<&str>, line: u64, what: &str) -> Result<f64> {
    let raw = field.unwrap_or("");
    raw.parse::<f64>()
        .map_err(|_| Error::Validation(format!("line {line}: cannot parse {what} from `{raw}`")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Events with an optional parent column, as produced by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTable {
    pub events: Vec<Event>,
    pub parents: Vec<Option<usize>>,
}

/// Reads events and validates every row against `[0, horizon]` and, when
/// given, the region union. Rows are returned stable-sorted with ties
/// separated. All problems are collected into one line-numbered report.
pub fn read_events_from<R: Read>(
    reader: R,
    coords: Coordinates,
    horizon: f64,
    regions: Option<&RegionMap>,
) -> Result<EventTable> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let (cx, cy) = coords.column_names();
    let (it, ix, iy) = (column(&headers, "t")?, column(&headers, cx)?, column(&headers, cy)?);
    let ip = headers.iter().position(|h| h.eq_ignore_ascii_case("parent"));
    let mut events = Vec::new();
    let mut parents = Vec::new();
    let mut problems = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let parsed = (|| -> Result<(Event, Option<usize>)> {
            let t = parse_f64(rec.get(it), line, "t")?;
            let s = coords
                .to_point(parse_f64(rec.get(ix), line, cx)?, parse_f64(rec.get(iy), line, cy)?)
                .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
            if !(t >= 0.0 && t <= horizon) {
                return Err(Error::Validation(format!("line {line}: t={t} outside [0, {horizon}]")));
            }
            if let Some(map) = regions {
                if !map.contains(s) {
                    return Err(Error::Validation(format!(
                        "line {line}: location ({}, {}) outside every region",
                        s[0], s[1]
                    )));
                }
            }
            let parent = match ip.and_then(|i| rec.get(i)).filter(|v| !v.is_empty()) {
                Some(v) => Some(v.parse::<usize>().map_err(|_| Error::Validation(format!("line {line}: bad parent `{v}`")))?),
                None => None,
            };
            Ok((Event { t, s }, parent))
        })();
        match parsed {
            Ok((e, p)) => {
                events.push(e);
                parents.push(p);
            }
            Err(Error::Validation(m)) => problems.push(m),
            Err(e) => return Err(e),
        }
    }
    if !problems.is_empty() {
        let shown: Vec<&str> = problems.iter().take(20).map(String::as_str).collect();
        let more = if problems.len() > 20 { format!(" (and {} more)", problems.len() - 20) } else { String::new() };
        return Err(Error::Validation(format!("{} invalid event rows: {}{more}", problems.len(), shown.join("; "))));
    }
    let sorted = events.windows(2).all(|w| w[0].t <= w[1].t);
    if !sorted {
        // parent indices refer to the file order; drop them once rows move
        parents = vec![None; events.len()];
    }
    sort_and_separate(&mut events);
    Ok(EventTable { events, parents })
}

pub fn read_events(path: &Path, coords: Coordinates, horizon: f64, regions: Option<&RegionMap>) -> Result<EventTable> {
    read_events_from(open(path)?, coords, horizon, regions)
}

pub fn write_events_to<W: Write>(w: W, events: &[Event], parents: Option<&[Option<usize>]>, meta: &ArtifactMeta) -> Result<()> {
    let mut wtr = csv_writer(w, meta)?;
    if parents.is_some() {
        wtr.write_record(["t", "x", "y", "parent"])?;
    } else {
        wtr.write_record(["t", "x", "y"])?;
    }
    for (i, e) in events.iter().enumerate() {
        let mut row = vec![e.t.to_string(), e.s[0].to_string(), e.s[1].to_string()];
        if let Some(p) = parents {
            row.push(p[i].map(|j| j.to_string()).unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_events(path: &Path, events: &[Event], parents: Option<&[Option<usize>]>, meta: &ArtifactMeta) -> Result<()> {
    write_events_to(create(path)?, events, parents, meta)
}

/// Landmarks CSV: `id,category,x,y` (or `lon,lat`).
pub fn read_landmarks_from<R: Read>(reader: R, coords: Coordinates) -> Result<Vec<Landmark>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let (cx, cy) = coords.column_names();
    let (ii, ic, ix, iy) = (column(&headers, "id")?, column(&headers, "category")?, column(&headers, cx)?, column(&headers, cy)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let category: LandmarkCategory =
            rec.get(ic).unwrap_or("").parse().map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        let location = coords
            .to_point(parse_f64(rec.get(ix), line, cx)?, parse_f64(rec.get(iy), line, cy)?)
            .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        out.push(Landmark { id: rec.get(ii).unwrap_or("").to_string(), category, location });
    }
    crate::types::validate_landmarks(&out)?;
    Ok(out)
}

pub fn read_landmarks(path: &Path, coords: Coordinates) -> Result<Vec<Landmark>> {
    read_landmarks_from(open(path)?, coords)
}

pub fn write_landmarks(path: &Path, landmarks: &[Landmark], meta: &ArtifactMeta) -> Result<()> {
    let mut wtr = csv_writer(create(path)?, meta)?;
    wtr.write_record(["id", "category", "x", "y"])?;
    for l in landmarks {
        wtr.write_record([l.id.clone(), l.category.as_str().to_string(), l.location[0].to_string(), l.location[1].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn ring_from(value: &Value, coords: Coordinates, id: &str) -> Result<Vec<Point>> {
    let ring = value.as_array().ok_or_else(|| Error::Validation(format!("region `{id}`: ring is not an array")))?;
    ring.iter()
        .map(|pos| {
            let pair = pos.as_array().filter(|a| a.len() >= 2);
            let (a, b) = match pair {
                Some(a) => (a[0].as_f64(), a[1].as_f64()),
                None => (None, None),
            };
            match (a, b) {
                (Some(a), Some(b)) => coords.to_point(a, b),
                _ => Err(Error::Validation(format!("region `{id}`: malformed position {pos}"))),
            }
        })
        .collect()
}

/// GeoJSON FeatureCollection of Polygon (or single-part MultiPolygon)
/// features; the outer ring is used. The id comes from the feature `id` or the
/// `id` property, the name from the `name` property.
pub fn read_regions_from<R: Read>(reader: R, coords: Coordinates) -> Result<RegionMap> {
    let doc: Value = serde_json::from_reader(reader).map_err(|e| Error::Validation(format!("regions GeoJSON: {e}")))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Validation("regions GeoJSON must be a FeatureCollection".into()))?;
    let mut regions = Vec::with_capacity(features.len());
    for (k, f) in features.iter().enumerate() {
        let props = f.get("properties");
        let id = f
            .get("id")
            .or_else(|| props.and_then(|p| p.get("id")))
            .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
            .unwrap_or_else(|| format!("region{k}"));
        let name = props.and_then(|p| p.get("name")).and_then(Value::as_str).unwrap_or(&id).to_string();
        let geom = f.get("geometry").ok_or_else(|| Error::Validation(format!("region `{id}` has no geometry")))?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or("");
        let c = geom.get("coordinates").ok_or_else(|| Error::Validation(format!("region `{id}` has no coordinates")))?;
        let outer = match kind {
            "Polygon" => c.get(0),
            "MultiPolygon" => {
                let parts = c.as_array().map(Vec::len).unwrap_or(0);
                if parts != 1 {
                    return Err(Error::Validation(format!("region `{id}`: MultiPolygon with {parts} parts is not supported")));
                }
                c.get(0).and_then(|p| p.get(0))
            }
            other => return Err(Error::Validation(format!("region `{id}`: unsupported geometry `{other}`"))),
        }
        .ok_or_else(|| Error::Validation(format!("region `{id}` has an empty polygon")))?;
        regions.push(Region::new(id.clone(), name, ring_from(outer, coords, &id)?)?);
    }
    RegionMap::new(regions)
}

pub fn read_regions(path: &Path, coords: Coordinates) -> Result<RegionMap> {
    read_regions_from(open(path)?, coords)
}

/// Writes planar (km) polygons as a GeoJSON FeatureCollection.
pub fn write_regions(path: &Path, regions: &RegionMap, meta: &ArtifactMeta) -> Result<()> {
    let features: Vec<Value> = regions
        .regions()
        .iter()
        .map(|r| {
            let mut ring: Vec<Value> = r.polygon.iter().map(|p| json!([p[0], p[1]])).collect();
            ring.push(json!([r.polygon[0][0], r.polygon[0][1]]));
            json!({
                "type": "Feature",
                "id": r.id,
                "properties": { "id": r.id, "name": r.name },
                "geometry": { "type": "Polygon", "coordinates": [ring] },
            })
        })
        .collect();
    let doc = json!({ "type": "FeatureCollection", "meta": meta, "features": features });
    write_json_value(path, &doc)
}

fn write_json_value(path: &Path, value: &Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Serializes `value` with a top-level `meta` block.
pub fn write_json<T: Serialize>(path: &Path, value: &T, meta: &ArtifactMeta) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    match &mut v {
        Value::Object(map) => {
            map.insert("meta".into(), serde_json::to_value(meta)?);
        }
        other => {
            let inner = other.take();
            v = json!({ "meta": meta, "value": inner });
        }
    }
    write_json_value(path, &v)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let v: Value = serde_json::from_reader(open(path)?).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_value(v).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Fitted parameters together with the kernel configuration they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kernel: KernelConfig,
    pub params: ModelParams,
}

/// Weekly counts: header `week,<region ids…>`, one row per week.
pub fn write_counts_to<W: Write>(w: W, m: &CountMatrix, meta: &ArtifactMeta) -> Result<()> {
    let mut wtr = csv_writer(w, meta)?;
    let mut header = vec!["week".to_string()];
    header.extend(m.regions.iter().cloned());
    wtr.write_record(&header)?;
    for (i, week) in m.weeks.iter().enumerate() {
        let mut row = vec![week.to_string()];
        row.extend(m.row(i).iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_counts(path: &Path, m: &CountMatrix, meta: &ArtifactMeta) -> Result<()> {
    write_counts_to(create(path)?, m, meta)
}

pub fn read_counts_from<R: Read>(reader: R) -> Result<CountMatrix> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(|h| h.eq_ignore_ascii_case("week")) != Some(true) {
        return Err(Error::Validation("count matrix must start with a `week` column".into()));
    }
    let regions: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut weeks = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != regions.len() + 1 {
            return Err(Error::Validation(format!("line {line}: expected {} fields", regions.len() + 1)));
        }
        weeks.push(rec[0].parse::<usize>().map_err(|_| Error::Validation(format!("line {line}: bad week `{}`", &rec[0])))?);
        for k in 1..rec.len() {
            let v = parse_f64(rec.get(k), line, "count")?;
            if !(v >= 0.0) {
                return Err(Error::Validation(format!("line {line}: negative count {v}")));
            }
            values.push(v);
        }
    }
    CountMatrix::new(weeks, regions, values)
}

pub fn read_counts(path: &Path) -> Result<CountMatrix> {
    read_counts_from(open(path)?)
}

/// Population CSV `region_id,population`, returned in region-map order.
pub fn read_population(path: &Path, regions: &RegionMap) -> Result<Vec<f64>> {
    read_population_from(open(path)?, regions)
}

/// `region_id,population` rows; every region must be listed.
pub fn read_population_from<R: Read>(reader: R, regions: &RegionMap) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ii, ip) = (column(&headers, "region_id")?, column(&headers, "population")?);
    let mut pop = vec![f64::NAN; regions.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let id = rec.get(ii).unwrap_or("");
        let Some(k) = regions.regions().iter().position(|r| r.id == id) else {
            return Err(Error::Validation(format!("line {line}: unknown region `{id}`")));
        };
        let v = parse_f64(rec.get(ip), line, "population")?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Validation(format!("line {line}: population must be positive")));
        }
        pop[k] = v;
    }
    if let Some(k) = pop.iter().position(|v| v.is_nan()) {
        return Err(Error::Validation(format!("no population given for region `{}`", regions.regions()[k].id)));
    }
    Ok(pop)
}

/// Regular grid of cell centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// `nx × ny` cell centres covering `bounds`.
    pub fn covering(bounds: &BoundingBox, nx: usize, ny: usize) -> Self {
        let dx = bounds.width() / nx as f64;
        let dy = bounds.height() / ny as f64;
        Self { x0: bounds.min[0] + dx / 2.0, y0: bounds.min[1] + dy / 2.0, dx, dy, nx, ny }
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| [self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy]))
    }

    /// Restricts the grid to `bounds`; returns the clipped grid and whether anything was cut.
    pub fn clip_to(&self, bounds: &BoundingBox) -> (Self, bool) {
        let lo_i = ((bounds.min[0] - self.x0) / self.dx).ceil().max(0.0) as usize;
        let lo_j = ((bounds.min[1] - self.y0) / self.dy).ceil().max(0.0) as usize;
        let hi_i = (((bounds.max[0] - self.x0) / self.dx).floor() + 1.0).clamp(0.0, self.nx as f64) as usize;
        let hi_j = (((bounds.max[1] - self.y0) / self.dy).floor() + 1.0).clamp(0.0, self.ny as f64) as usize;
        let clipped = Self {
            x0: self.x0 + lo_i as f64 * self.dx,
            y0: self.y0 + lo_j as f64 * self.dy,
            dx: self.dx,
            dy: self.dy,
            nx: hi_i.saturating_sub(lo_i),
            ny: hi_j.saturating_sub(lo_j),
        };
        let changed = clipped.nx != self.nx || clipped.ny != self.ny;
        (clipped, changed)
    }

    fn comment(&self) -> String {
        format!("# grid x0={},y0={},dx={},dy={},nx={},ny={}", self.x0, self.y0, self.dx, self.dy, self.nx, self.ny)
    }
}

/// Files written by [`export_kernel`], plus any warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExport {
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

/// Writes `focus_segments_r{r}.csv`, `kernel_slice.csv` (υ(anchor, ·)) and
/// `landmark_effects.csv` into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn export_kernel(
    dir: &Path,
    params: &ModelParams,
    config: &KernelConfig,
    landmarks: &[Landmark],
    grid: &GridSpec,
    bounds: &BoundingBox,
    anchor: Point,
    meta: &ArtifactMeta,
) -> Result<KernelExport> {
    let mut warnings = Vec::new();
    let (grid, clipped) = grid.clip_to(bounds);
    if clipped {
        warnings.push("export grid extends beyond the study-region bounding box; clipped".to_string());
    }
    let mut files = Vec::new();
    let points: Vec<Point> = grid.points().collect();
    let evals: Vec<neural::NetEval> = points.iter().map(|&p| neural::forward(p, params.nets(), config.focus_bound)).collect();
    for r in 0..params.components() {
        let name = format!("focus_segments_r{r}.csv");
        let mut w = BufWriter::new(File::create(dir.join(&name))?);
        writeln!(w, "{}", meta.comment_line())?;
        writeln!(w, "{}", grid.comment())?;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y", "psi_x", "psi_y", "w"])?;
        for (p, e) in points.iter().zip(&evals) {
            let o = &e.outputs[r];
            wtr.write_record([p[0].to_string(), p[1].to_string(), o.psi[0].to_string(), o.psi[1].to_string(), o.weight.to_string()])?;
        }
        wtr.flush()?;
        files.push(name);
    }
    let anchor_feats = params.local_features(anchor, config);
    {
        let mut w = BufWriter::new(File::create(dir.join("kernel_slice.csv"))?);
        writeln!(w, "{}", meta.comment_line())?;
        writeln!(w, "{}", grid.comment())?;
        writeln!(w, "# anchor x={},y={}", anchor[0], anchor[1])?;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y", "value"])?;
        for (p, e) in points.iter().zip(&evals) {
            let f = e.features(config.ellipse_area, params.tau_z());
            let v = spatial_kernel(anchor, *p, &anchor_feats, &f)?;
            wtr.write_record([p[0].to_string(), p[1].to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        files.push("kernel_slice.csv".into());
    }
    {
        let mut wtr = csv_writer(create(&dir.join("landmark_effects.csv"))?, meta)?;
        wtr.write_record(["id", "category", "gamma", "sigma"])?;
        for ((l, g), s) in landmarks.iter().zip(params.gammas()).zip(params.sigmas()) {
            wtr.write_record([l.id.clone(), l.category.as_str().to_string(), g.to_string(), s.to_string()])?;
        }
        wtr.flush()?;
        files.push("landmark_effects.csv".into());
    }
    Ok(KernelExport { files, warnings })
}

/// `λ(t, ·)` on the grid, row-major in `y` then `x`.
pub fn intensity_raster(ctx: &IntensityContext<'_>, t: f64, grid: &GridSpec) -> Result<Vec<f64>> {
    if !(t >= 0.0 && t <= ctx.config.horizon) {
        return Err(Error::InvalidInput(format!("raster time {t} outside [0, {}]", ctx.config.horizon)));
    }
    let points: Vec<Point> = grid.points().collect();
    use rayon::prelude::*;
    Ok(points
        .par_iter()
        .map(|&p| {
            let f = ctx.features_at(p);
            ctx.intensity_with(t, p, &f)
        })
        .collect())
}

pub fn write_raster(path: &Path, grid: &GridSpec, t: f64, values: &[f64], meta: &ArtifactMeta) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", meta.comment_line())?;
    writeln!(w, "{},t={t}", grid.comment())?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "y", "intensity"])?;
    for (p, v) in grid.points().zip(values) {
        wtr.write_record([p[0].to_string(), p[1].to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Results table with columns `model,Q<q>…,log_likelihood`.
pub fn write_results(path: &Path, qs: &[f64], rows: &[ResultRow], meta: &ArtifactMeta) -> Result<()> {
    let mut wtr = csv_writer(create(path)?, meta)?;
    let mut header = vec!["model".to_string()];
    header.extend(qs.iter().map(|q| format!("Q{q}")));
    header.push("log_likelihood".into());
    wtr.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.model.clone()];
        row.extend(r.quantiles.iter().map(f64::to_string));
        row.push(r.log_likelihood.map(|v| v.to_string()).unwrap_or_default());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the `# seed=…,config_hash=…` line of an artifact, if present.
pub fn read_meta(path: &Path) -> Result<Option<ArtifactMeta>> {
    let mut first = String::new();
    open(path)?.read_line(&mut first)?;
    let Some(rest) = first.trim().strip_prefix("# ") else { return Ok(None) };
    let mut seed = None;
    let mut hash = None;
    for kv in rest.split(',') {
        match kv.split_once('=') {
            Some(("seed", v)) => seed = v.parse().ok(),
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            _ => {}
        }
    }
    Ok(seed.zip(hash).map(|(seed, config_hash)| ArtifactMeta { seed, config_hash }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetworkWeights;

    fn meta() -> ArtifactMeta {
        ArtifactMeta { seed: 7, config_hash: "abc".into() }
    }

    #[test]
    fn events_round_trip() {
        let ev = vec![Event::new(0.5, 1.0, 2.0), Event::new(1.25, -0.5, 0.1)];
        let mut buf = Vec::new();
        write_events_to(&mut buf, &ev, Some(&[None, Some(0)]), &meta()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=7,config_hash=abc\n"));
        let back = read_events_from(buf.as_slice(), Coordinates::Km, 10.0, None).unwrap();
        assert_eq!(back.events, ev);
        assert_eq!(back.parents, vec![None, Some(0)]);
    }

    #[test]
    fn events_validation_is_line_numbered() {
        let regions = RegionMap::grid(0.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        let text = "t,x,y\n1,0.5,0.5\n11,0.5,0.5\n2,5,5\nabc,0,0\n";
        let err = read_events_from(text.as_bytes(), Coordinates::Km, 10.0, Some(&regions)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("line 4") && msg.contains("line 5"), "{msg}");
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn ties_are_separated_on_ingest() {
        let text = "t,x,y\n3,0,0\n3,1,1\n1,2,2\n";
        let t = read_events_from(text.as_bytes(), Coordinates::Km, 10.0, None).unwrap();
        assert_eq!(t.events[0].t, 1.0);
        assert_eq!(t.events[1].s, [0.0, 0.0]);
        assert!(t.events[2].t > t.events[1].t);
    }

    #[test]
    fn lonlat_events() {
        let proj = LocalProjection::new(-76.5, 3.4).unwrap();
        let text = "t,lon,lat\n1,-76.5,3.4\n";
        let t = read_events_from(text.as_bytes(), Coordinates::LonLat(proj), 10.0, None).unwrap();
        assert_eq!(t.events[0].s, [0.0, 0.0]);
    }

    #[test]
    fn regions_geojson() {
        let doc = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"id":"a","name":"A"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[2,0],[2,1],[0,1],[0,0]]]}},
            {"type":"Feature","id":7,"properties":{},
             "geometry":{"type":"MultiPolygon","coordinates":[[[[2,0],[3,0],[3,1],[2,1]]]]}}]}"#;
        let map = read_regions_from(doc.as_bytes(), Coordinates::Km).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map.regions()[1].id, "7");
        assert!((map.union_area() - 3.0).abs() < 1e-12);
        let bad = r#"{"type":"FeatureCollection","features":[{"type":"Feature","geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(read_regions_from(bad.as_bytes(), Coordinates::Km).is_err());
    }

    #[test]
    fn counts_round_trip() {
        let m = CountMatrix::new(vec![4, 5], vec!["a".into(), "b".into()], vec![1.0, 2.5, 0.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_counts_to(&mut buf, &m, &meta()).unwrap();
        assert_eq!(read_counts_from(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn landmarks_csv() {
        let text = "id,category,x,y\nh1,town_hall,1,2\ns1,school,3,4\n";
        let l = read_landmarks_from(text.as_bytes(), Coordinates::Km).unwrap();
        assert_eq!(l[0].category, LandmarkCategory::TownHall);
        assert!(read_landmarks_from("id,category,x,y\na,castle,0,0\n".as_bytes(), Coordinates::Km).is_err());
    }

    #[test]
    fn symmetric_export() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let nets = (0..3).map(|_| NetworkWeights::symmetric(&[8], &mut rng)).collect();
        let p = ModelParams::new(0.1, 0.5, 2.0, 1.0, vec![], vec![], nets).unwrap();
        let k = KernelConfig::new(10.0, 4.0);
        let bounds = BoundingBox { min: [0.0, 0.0], max: [2.0, 2.0] };
        let grid = GridSpec::covering(&BoundingBox { min: [-1.0, 0.0], max: [2.0, 2.0] }, 6, 4);
        let out = export_kernel(dir.path(), &p, &k, &[], &grid, &bounds, [1.0, 1.0], &meta()).unwrap();
        assert_eq!(out.files.len(), 5);
        assert_eq!(out.warnings.len(), 1);
        let text = std::fs::read_to_string(dir.path().join("focus_segments_r0.csv")).unwrap();
        for line in text.lines().skip(3) {
            let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!((f[2], f[3]), (0.0, 0.0));
            assert!((f[4] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_clipping() {
        let g = GridSpec { x0: -0.5, y0: 0.5, dx: 1.0, dy: 1.0, nx: 4, ny: 2 };
        let (c, changed) = g.clip_to(&BoundingBox { min: [0.0, 0.0], max: [2.0, 2.0] });
        assert!(changed);
        assert_eq!((c.x0, c.nx, c.ny), (0.5, 2, 2));
    }
}
