//! Resolved run settings: defaults, then the TOML config file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use nsstpp::simulator::BoundStrategy;
use nsstpp::trainer::NetInit;
use nsstpp::{FitConfig, KernelConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateSystem {
    Km,
    Lonlat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    OutOfSample,
    InSample,
}

/// Every tunable, with defaults. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// Observation horizon T in days.
    pub horizon: Option<f64>,
    pub coordinates: CoordinateSystem,
    pub origin_lon: Option<f64>,
    pub origin_lat: Option<f64>,
    /// Side of the square study region used when no regions file is given, km.
    pub side: f64,
    /// The square is split into `grid_n × grid_n` regions.
    pub grid_n: usize,

    pub components: usize,
    pub ellipse_area: f64,
    pub focus_bound: f64,
    pub tau_z_init: f64,
    pub truncation_sigmas: f64,

    pub lr_init: f64,
    pub lr_decay: f64,
    pub patience_decay: usize,
    pub stop_window: usize,
    pub stop_oscillation: f64,
    pub max_epochs: usize,
    pub hidden: Vec<usize>,
    pub net_init: NetInit,
    pub train_nets: bool,
    pub checkpoint_every: usize,

    pub lambda0: f64,
    pub magnitude: f64,
    pub sigma0: f64,
    pub tau_z: f64,
    pub landmark_gamma: f64,
    pub landmark_sigma: f64,
    pub sim_net_init: NetInit,
    pub max_events: usize,
    pub strategy: BoundStrategy,

    pub mode: EvalMode,
    pub first_week: usize,
    /// Number of predicted weeks; all remaining full weeks when absent.
    pub weeks: Option<usize>,
    pub quantiles: Vec<f64>,
    pub per_region_week: bool,
    pub population_density: f64,
    pub ar_order: usize,
    pub random_replications: usize,
    pub max_lag: usize,
    pub raster_nx: usize,
    pub raster_ny: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            seed: 0,
            horizon: None,
            coordinates: CoordinateSystem::Km,
            origin_lon: None,
            origin_lat: None,
            side: 10.0,
            grid_n: 2,
            components: 3,
            ellipse_area: 0.35,
            focus_bound: 0.1,
            tau_z_init: 1.0,
            truncation_sigmas: 8.0,
            lr_init: fit.lr_init,
            lr_decay: fit.lr_decay,
            patience_decay: fit.patience_decay,
            stop_window: fit.stop_window,
            stop_oscillation: fit.stop_oscillation,
            max_epochs: fit.max_epochs,
            hidden: fit.hidden,
            net_init: fit.net_init,
            train_nets: fit.train_nets,
            checkpoint_every: 50,
            lambda0: 0.05,
            magnitude: 0.2,
            sigma0: 2.0,
            tau_z: 1.0,
            landmark_gamma: 0.5,
            landmark_sigma: 0.5,
            sim_net_init: NetInit::Symmetric,
            max_events: 100_000,
            strategy: BoundStrategy::Envelope,
            mode: EvalMode::OutOfSample,
            first_week: 4,
            weeks: None,
            quantiles: nsstpp::evaluation::DEFAULT_QUANTILES.to_vec(),
            per_region_week: false,
            population_density: 5000.0,
            ar_order: nsstpp::baselines::ar::DEFAULT_ORDER,
            random_replications: nsstpp::evaluation::RANDOM_REPLICATIONS,
            max_lag: 10,
            raster_nx: 50,
            raster_ny: 50,
        }
    }
}

/// Command-line overrides; each flag replaces the config-file value.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[arg(long, value_parser = parse_enum::<CoordinateSystem>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<CoordinateSystem>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_lon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_lat: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipse_area: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focus_bound: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_z_init: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_sigmas: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_init: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience_decay: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_oscillation: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_enum::<NetInit>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net_init: Option<NetInit>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_nets: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_z: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmark_gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmark_sigma: Option<f64>,
    #[arg(long, value_parser = parse_enum::<NetInit>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_net_init: Option<NetInit>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_events: Option<usize>,
    #[arg(long, value_parser = parse_enum::<BoundStrategy>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<BoundStrategy>,
    #[arg(long, value_parser = parse_enum::<EvalMode>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<EvalMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_week: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weeks: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_region_week: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_density: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ar_order: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_replications: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raster_nx: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raster_ny: Option<usize>,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> std::result::Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).map_err(|e| e.to_string())
}

impl Settings {
    /// Defaults, overlaid with `file` (if any), overlaid with `flags`.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("config {} is not valid TOML", p.display()))?
            }
            None => toml::Table::new(),
        };
        let over = toml::Table::try_from(flags).context("cannot encode command-line overrides")?;
        table.extend(over);
        let s: Settings = table.try_into().context("invalid configuration")?;
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            bail!("quantiles must lie in [0, 1]");
        }
        if self.side.is_nan() || self.side <= 0.0 || self.grid_n == 0 {
            bail!("side must be positive and grid_n at least 1");
        }
        if self.checkpoint_every == 0 {
            bail!("checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn horizon(&self) -> Result<f64> {
        self.horizon
            .ok_or_else(|| crate::commands::Usage("the horizon (days) must be given via --horizon or the config file".into()).into())
    }

    pub fn kernel(&self, horizon: f64, area_s: f64) -> KernelConfig {
        KernelConfig {
            components: self.components,
            ellipse_area: self.ellipse_area,
            focus_bound: self.focus_bound,
            tau_z_init: self.tau_z_init,
            horizon,
            area_s,
            truncation_sigmas: self.truncation_sigmas,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            lr_init: self.lr_init,
            lr_decay: self.lr_decay,
            patience_decay: self.patience_decay,
            stop_window: self.stop_window,
            stop_oscillation: self.stop_oscillation,
            max_epochs: self.max_epochs,
            seed: self.seed,
            hidden: self.hidden.clone(),
            net_init: self.net_init,
            train_nets: self.train_nets,
            ..FitConfig::default()
        }
    }

    /// SHA-256 over the command, the resolved settings and the input file contents.
    pub fn hash(&self, command: &str, inputs: &[&[u8]]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(serde_json::to_vec(self)?);
        for bytes in inputs {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 4\nmax_epochs = 10\nhidden = [4, 2]\n").unwrap();
        let flags = Overrides { max_epochs: Some(99), ..Overrides::default() };
        let s = Settings::resolve(Some(&path), &flags).unwrap();
        assert_eq!((s.seed, s.max_epochs, s.hidden.clone()), (4, 99, vec![4, 2]));
        assert_eq!(s.lr_init, 1.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "sede = 4\n").unwrap();
        assert!(Settings::resolve(Some(&path), &Overrides::default()).is_err());
    }

    #[test]
    fn hash_tracks_settings_and_inputs() {
        let a = Settings::default();
        let b = Settings { seed: 1, ..Settings::default() };
        assert_ne!(a.hash("fit", &[]).unwrap(), b.hash("fit", &[]).unwrap());
        assert_ne!(a.hash("fit", &[b"x"]).unwrap(), a.hash("fit", &[b"y"]).unwrap());
        assert_eq!(a.hash("fit", &[b"x"]).unwrap(), a.hash("fit", &[b"x"]).unwrap());
    }

    #[test]
    fn enum_flags_parse() {
        assert_eq!(parse_enum::<EvalMode>("in_sample").unwrap(), EvalMode::InSample);
        assert!(parse_enum::<EvalMode>("sideways").is_err());
    }
}
