//! Domain data model shared by every module.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry;
use crate::likelihood::{self, ErrorBound};
use crate::Point;

/// Spacing added between events that share a timestamp, in days.
pub const TIE_JITTER_DAYS: f64 = 1e-6;

/// One confirmed case: diagnosis time (days since study start) and planar
/// residence location (km).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub s: Point,
}

impl Event {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, s: [x, y] }
    }
}

/// Stable-sorts events by time and separates ties so that timestamps are
/// strictly increasing. The k-th member of a tie group is shifted by
/// `k * TIE_JITTER_DAYS`; input order decides who goes first.
pub fn sort_and_separate(events: &mut [Event]) {
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    for i in 1..events.len() {
        let floor = events[i - 1].t + TIE_JITTER_DAYS;
        if events[i].t < floor {
            events[i].t = floor;
        }
    }
}

/// Checks the event-list invariants: finite, inside `[0, horizon]`, and
/// non-decreasing in time.
pub fn validate_events(events: &[Event], horizon: f64) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (i, e) in events.iter().enumerate() {
        if !(e.t.is_finite() && e.s[0].is_finite() && e.s[1].is_finite()) {
            return Err(Error::Validation(format!("event {i} has a non-finite field")));
        }
        if e.t < 0.0 || e.t > horizon {
            return Err(Error::Validation(format!(
                "event {i} at t={} lies outside [0, {horizon}]",
                e.t
            )));
        }
        if e.t < prev {
            return Err(Error::Validation(format!("event {i} breaks time ordering")));
        }
        prev = e.t;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkCategory {
    TownHall,
    Church,
    School,
    Other,
}

impl LandmarkCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TownHall => "town_hall",
            Self::Church => "church",
            Self::School => "school",
            Self::Other => "other",
        }
    }
}

impl fmt::Display for LandmarkCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LandmarkCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "town_hall" => Ok(Self::TownHall),
            "church" => Ok(Self::Church),
            "school" => Ok(Self::School),
            "other" => Ok(Self::Other),
            other => Err(Error::Validation(format!("unknown landmark category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub category: LandmarkCategory,
    pub location: Point,
}

pub fn validate_landmarks(landmarks: &[Landmark]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in landmarks {
        if !(l.location[0].is_finite() && l.location[1].is_finite()) {
            return Err(Error::Validation(format!("landmark `{}` has a non-finite location", l.id)));
        }
        if !seen.insert(l.id.as_str()) {
            return Err(Error::Validation(format!("duplicate landmark id `{}`", l.id)));
        }
    }
    Ok(())
}

/// An aggregation polygon (a comuna). The vertex list is implicitly closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub name: String,
    pub polygon: Vec<Point>,
}

impl Region {
    /// Builds a region after checking the polygon is simple with positive area.
    /// A repeated closing vertex is dropped.
    pub fn new(id: impl Into<String>, name: impl Into<String>, mut polygon: Vec<Point>) -> Result<Self> {
        let id = id.into();
        if polygon.len() > 1 && polygon.first() == polygon.last() {
            polygon.pop();
        }
        if polygon.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("region `{id}` has a non-finite vertex")));
        }
        let region = Self { id, name: name.into(), polygon };
        let area = geometry::region_area(&region)?;
        if area <= 0.0 {
            return Err(Error::Validation(format!("region `{}` has zero area", region.id)));
        }
        if !geometry::is_simple(&region.polygon) {
            return Err(Error::Validation(format!("region `{}` is self-intersecting", region.id)));
        }
        Ok(region)
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let id = id.into();
        let name = id.clone();
        Self::new(id, name, vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }
}

/// Hyper-parameters of the kernel and the observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Number of feature-function components R.
    pub components: usize,
    /// Area of the one-standard-deviation ellipse, km².
    pub ellipse_area: f64,
    /// Bound on the focus-point norm, km.
    pub focus_bound: f64,
    /// Initial covariance scale τz.
    pub tau_z_init: f64,
    /// Horizon T in days.
    pub horizon: f64,
    /// Area of the study region |S| in km².
    pub area_s: f64,
    /// History truncation window, in units of σ0.
    pub truncation_sigmas: f64,
}

impl KernelConfig {
    pub fn new(horizon: f64, area_s: f64) -> Self {
        Self {
            components: 3,
            ellipse_area: 0.35,
            focus_bound: 0.1,
            tau_z_init: 1.0,
            horizon,
            area_s,
            truncation_sigmas: 8.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(invalid("component count R must be at least 1"));
        }
        let positive = [
            ("ellipse area A", self.ellipse_area),
            ("focus bound c", self.focus_bound),
            ("tau_z_init", self.tau_z_init),
            ("horizon T", self.horizon),
            ("area |S|", self.area_s),
            ("truncation window", self.truncation_sigmas),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn error_bound(&self) -> Result<ErrorBound> {
        likelihood::error_bound(self.ellipse_area, self.focus_bound)
    }

    /// History window w_t in days for a given temporal decay σ0.
    pub fn window(&self, sigma0: f64) -> f64 {
        self.truncation_sigmas * sigma0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_become_strictly_increasing_in_input_order() {
        let mut ev = vec![
            Event::new(2.0, 0.0, 0.0),
            Event::new(1.0, 1.0, 0.0),
            Event::new(1.0, 2.0, 0.0),
            Event::new(1.0, 3.0, 0.0),
        ];
        sort_and_separate(&mut ev);
        let xs: Vec<f64> = ev.iter().map(|e| e.s[0]).collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0, 0.0]);
        assert_eq!(ev[0].t, 1.0);
        assert!((ev[1].t - (1.0 + 1e-6)).abs() < 1e-15);
        assert!((ev[2].t - (1.0 + 2e-6)).abs() < 1e-15);
        assert!(ev.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn event_validation_catches_range_and_order() {
        assert!(validate_events(&[Event::new(-1.0, 0.0, 0.0)], 10.0).is_err());
        assert!(validate_events(&[Event::new(11.0, 0.0, 0.0)], 10.0).is_err());
        assert!(validate_events(&[Event::new(1.0, f64::NAN, 0.0)], 10.0).is_err());
        assert!(validate_events(&[Event::new(2.0, 0.0, 0.0), Event::new(1.0, 0.0, 0.0)], 10.0).is_err());
        assert!(validate_events(&[Event::new(0.0, 0.0, 0.0), Event::new(10.0, 0.0, 0.0)], 10.0).is_ok());
    }

    #[test]
    fn landmark_ids_must_be_unique() {
        let l = Landmark { id: "a".into(), category: LandmarkCategory::Church, location: [0.0, 0.0] };
        assert!(validate_landmarks(&[l.clone(), l]).is_err());
    }

    #[test]
    fn category_parsing() {
        assert_eq!("town_hall".parse::<LandmarkCategory>().unwrap(), LandmarkCategory::TownHall);
        assert_eq!(" School ".parse::<LandmarkCategory>().unwrap(), LandmarkCategory::School);
        assert!("mall".parse::<LandmarkCategory>().is_err());
    }

    #[test]
    fn kernel_config_rejects_nonpositive() {
        let mut cfg = KernelConfig::new(10.0, 1.0);
        assert!(cfg.validate().is_ok());
        cfg.components = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = KernelConfig::new(10.0, 1.0);
        cfg.ellipse_area = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn self_intersecting_region_rejected() {
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(Region::new("b", "b", bowtie).is_err());
        assert!(Region::new("t", "t", vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
    }
}
