//! Planar geometry: lon/lat projection, polygon area and membership.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Region;
use crate::Point;

/// Kilometres per degree of longitude at the equator.
pub const KM_PER_DEG_LON: f64 = 111.320;
/// Kilometres per degree of latitude.
pub const KM_PER_DEG_LAT: f64 = 110.574;

/// Local equirectangular projection centred on `origin = (lon0, lat0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub lon0: f64,
    pub lat0: f64,
}

impl LocalProjection {
    pub fn new(lon0: f64, lat0: f64) -> Result<Self> {
        if !(lon0.is_finite() && lat0.is_finite()) {
            return Err(Error::InvalidInput("projection origin must be finite".into()));
        }
        if lat0.abs() >= 89.0 {
            return Err(Error::InvalidInput(format!("origin latitude {lat0} too close to a pole")));
        }
        Ok(Self { lon0, lat0 })
    }

    /// Origin at the centroid of the given (lon, lat) pairs.
    pub fn centered_on(coords: &[(f64, f64)]) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("cannot centre a projection on zero points".into()));
        }
        let n = coords.len() as f64;
        let (sx, sy) = coords.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        Self::new(sx / n, sy / n)
    }

    pub fn project(&self, lon: f64, lat: f64) -> Result<Point> {
        if !(lon.is_finite() && lat.is_finite()) {
            return Err(Error::Validation(format!("non-finite coordinate ({lon}, {lat})")));
        }
        if lat.abs() >= 89.0 {
            return Err(Error::Validation(format!("latitude {lat} outside the supported range")));
        }
        let x = (lon - self.lon0) * KM_PER_DEG_LON * self.lat0.to_radians().cos();
        let y = (lat - self.lat0) * KM_PER_DEG_LAT;
        Ok([x, y])
    }

    pub fn unproject(&self, p: Point) -> (f64, f64) {
        let lon = self.lon0 + p[0] / (KM_PER_DEG_LON * self.lat0.to_radians().cos());
        let lat = self.lat0 + p[1] / KM_PER_DEG_LAT;
        (lon, lat)
    }
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn signed_area(polygon: &[Point]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

/// Euclidean area of a region in km², independent of winding.
pub fn region_area(region: &Region) -> Result<f64> {
    if region.polygon.len() < 3 {
        return Err(Error::Validation(format!(
            "region `{}` has {} vertices; at least 3 are required",
            region.id,
            region.polygon.len()
        )));
    }
    Ok(signed_area(&region.polygon).abs())
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on_segment = |a: Point, b: Point, p: Point| {
        p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    };
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two non-adjacent edges of the closed polygon touch.
pub fn is_simple(polygon: &[Point]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (polygon[i], polygon[(i + 1) % n]);
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = (polygon[j], polygon[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Even-odd ray casting. Points exactly on an edge may fall either way.
pub fn point_in_polygon(p: Point, polygon: &[Point]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Self { min: first, max: first };
        for p in it {
            bb.min = [bb.min[0].min(p[0]), bb.min[1].min(p[1])];
            bb.max = [bb.max[0].max(p[0]), bb.max[1].max(p[1])];
        }
        Some(bb)
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

/// The aggregation regions that together make up the study area S.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    regions: Vec<Region>,
    areas: Vec<f64>,
    bounds: BoundingBox,
}

impl RegionMap {
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Validation("region map is empty".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for r in &regions {
            if !ids.insert(r.id.clone()) {
                return Err(Error::Validation(format!("duplicate region id `{}`", r.id)));
            }
        }
        let areas = regions.iter().map(region_area).collect::<Result<Vec<_>>>()?;
        let bounds = BoundingBox::of_points(regions.iter().flat_map(|r| r.polygon.iter()))
            .expect("regions have vertices");
        Ok(Self { regions, areas, bounds })
    }

    /// `nx * ny` equal rectangles tiling `[x0, x0 + width] x [y0, y0 + height]`,
    /// with ids `r{row}_{col}`.
    pub fn grid(x0: f64, y0: f64, width: f64, height: f64, nx: usize, ny: usize) -> Result<Self> {
        let mut regions = Vec::with_capacity(nx * ny);
        let (dx, dy) = (width / nx as f64, height / ny as f64);
        for row in 0..ny {
            for col in 0..nx {
                let xa = x0 + col as f64 * dx;
                let ya = y0 + row as f64 * dy;
                regions.push(Region::rectangle(format!("r{row}_{col}"), xa, ya, xa + dx, ya + dy)?);
            }
        }
        Self::new(regions)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn area(&self, index: usize) -> f64 {
        self.areas[index]
    }

    /// |S| as the sum of region areas; regions are assumed not to overlap.
    pub fn union_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn bounds(&self) -> BoundingBox {
        self.bounds
    }

    /// Index of the first region containing `p`.
    pub fn locate(&self, p: Point) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        self.regions.iter().position(|r| point_in_polygon(p, &r.polygon))
    }

    pub fn contains(&self, p: Point) -> bool {
        self.locate(p).is_some()
    }
}
