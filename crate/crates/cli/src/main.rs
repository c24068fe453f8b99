//! `nsstpp` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numerical failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use nsstpp::io::GridSpec;

use commands::{NumericalAbort, Usage};
use settings::{Overrides, Settings};

#[derive(Parser)]
#[command(name = "nsstpp", version, about = "Non-stationary spatio-temporal Hawkes process toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with settings; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        Settings::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Args)]
struct Study {
    /// Region polygons (GeoJSON); defaults to a `grid_n × grid_n` grid of side `side`.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Landmarks CSV (`id,category,x,y` or `lon,lat`).
    #[arg(long)]
    landmarks: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate events by thinning.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth model file; otherwise parameters come from the settings.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        study: Study,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the model by maximum likelihood.
    Fit {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `checkpoint.json` in the output directory.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        study: Study,
        #[command(flatten)]
        common: Common,
    },
    /// Expected per-region counts for one week and an intensity raster.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Zero-based week index.
        #[arg(long)]
        week: usize,
        /// Time of the intensity raster; defaults to the start of the week.
        #[arg(long)]
        raster_time: Option<f64>,
        #[command(flatten)]
        study: Study,
        #[command(flatten)]
        common: Common,
    },
    /// Score the model and baselines on weekly per-region counts.
    Evaluate {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-region population CSV (`region_id,population`).
        #[arg(long)]
        population: Option<PathBuf>,
        /// Comma-separated subset of nsstpp,poisson,random,etas,sir,ar.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[command(flatten)]
        study: Study,
        #[command(flatten)]
        common: Common,
    },
    /// Run a single baseline through the evaluation pipeline.
    Baseline {
        /// One of poisson, random, etas, sir, ar.
        name: String,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        population: Option<PathBuf>,
        #[command(flatten)]
        study: Study,
        #[command(flatten)]
        common: Common,
    },
    /// Export focus points, a kernel slice and landmark effects for plotting.
    ExportKernel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        anchor_x: f64,
        #[arg(long, allow_negative_numbers = true)]
        anchor_y: f64,
        /// Explicit grid as `x0,y0,dx,dy,nx,ny`; defaults to the raster grid over the region.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[command(flatten)]
        study: Study,
        #[command(flatten)]
        common: Common,
    },
    /// Print the compensator error bound for ellipse area A and focus bound c.
    ErrorBound {
        #[arg(long = "A")]
        area: f64,
        #[arg(long = "c")]
        c: f64,
    },
    /// Partial autocorrelations of weekly per-region counts.
    Pacf {
        #[arg(long)]
        out: PathBuf,
        /// Wide counts CSV: a `week` column then one column per region.
        #[arg(long, conflicts_with = "events")]
        counts: Option<PathBuf>,
        /// Events CSV, binned into weekly counts per region.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn grid_spec(text: &str) -> Result<GridSpec> {
    let v: Vec<f64> = text
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Usage(format!("--grid expects x0,y0,dx,dy,nx,ny: {e}")))?;
    if v.len() != 6 {
        return Err(Usage(format!("--grid expects 6 comma-separated values, got {}", v.len())).into());
    }
    let count = |x: f64| {
        if x >= 1.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Usage(format!("grid cell counts must be positive integers, got {x}")))
        }
    };
    Ok(GridSpec { x0: v[0], y0: v[1], dx: v[2], dy: v[3], nx: count(v[4])?, ny: count(v[5])? })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { out, model, study, common } => {
            let s = common.settings()?;
            let args = commands::SimulateArgs {
                out: &out,
                regions: study.regions.as_deref(),
                landmarks: study.landmarks.as_deref(),
                model: model.as_deref(),
            };
            commands::simulate_cmd(&s, &args)
        }
        Command::Fit { events, out, resume, study, common } => {
            let s = common.settings()?;
            let args = commands::FitArgs {
                events: &events,
                out: &out,
                regions: study.regions.as_deref(),
                landmarks: study.landmarks.as_deref(),
                resume,
            };
            commands::fit_cmd(&s, &args)
        }
        Command::Predict { model, events, out, week, raster_time, study, common } => {
            let s = common.settings()?;
            let args = commands::PredictArgs {
                model: &model,
                events: &events,
                out: &out,
                regions: study.regions.as_deref(),
                landmarks: study.landmarks.as_deref(),
                week,
                raster_time,
            };
            commands::predict_cmd(&s, &args)
        }
        Command::Evaluate { events, out, population, models, study, common } => {
            let s = common.settings()?;
            let args = commands::EvaluateArgs {
                events: &events,
                out: &out,
                regions: study.regions.as_deref(),
                landmarks: study.landmarks.as_deref(),
                population: population.as_deref(),
                models,
            };
            commands::evaluate_cmd(&s, &args, "evaluate")
        }
        Command::Baseline { name, events, out, population, study, common } => {
            if name == "nsstpp" || !commands::MODELS.contains(&name.as_str()) {
                return Err(Usage(format!("unknown baseline `{name}`; expected one of poisson, random, etas, sir, ar")).into());
            }
            let s = common.settings()?;
            let args = commands::EvaluateArgs {
                events: &events,
                out: &out,
                regions: study.regions.as_deref(),
                landmarks: study.landmarks.as_deref(),
                population: population.as_deref(),
                models: vec![name],
            };
            commands::evaluate_cmd(&s, &args, "baseline")
        }
        Command::ExportKernel { model, out, anchor_x, anchor_y, grid, study, common } => {
            let s = common.settings()?;
            let grid = grid.as_deref().map(grid_spec).transpose()?;
            let args = commands::ExportArgs {
                model: &model,
                out: &out,
                regions: study.regions.as_deref(),
                landmarks: study.landmarks.as_deref(),
                anchor: [anchor_x, anchor_y],
                grid,
            };
            commands::export_kernel_cmd(&s, &args)
        }
        Command::ErrorBound { area, c } => commands::error_bound_cmd(area, c),
        Command::Pacf { out, counts, events, regions, common } => {
            let s = common.settings()?;
            let args = commands::PacfArgs {
                out: &out,
                counts: counts.as_deref(),
                events: events.as_deref(),
                regions: regions.as_deref(),
            };
            commands::pacf_cmd(&s, &args)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<Usage>()) {
        return 1;
    }
    let numerical = e.chain().any(|c| {
        c.is::<NumericalAbort>() || matches!(c.downcast_ref::<nsstpp::Error>(), Some(nsstpp::Error::Numerical(_)))
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
