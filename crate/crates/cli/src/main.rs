//! `mfobs`: observability/stability checks, kernel design, simulation and bound envelopes.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Failure, Sweep, EXIT_FAILURE};
use crate::config::{Config, Mode, PlantKind, Rate};

#[derive(Parser)]
#[command(name = "mfobs", version, about = "Modulating-function observer design and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Observability and sampled-data stability report.
    Check {
        #[command(flatten)]
        common: Common,
        /// Machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Write the kernel table and gain curves.
    Kernel {
        #[command(flatten)]
        common: Common,
        /// Kernel order (defaults to the plant order).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Run a scenario and write the trace with its sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated disturbance levels to sweep.
        #[arg(long, value_delimiter = ',')]
        sweep_h: Vec<f64>,
        /// Number of noise seeds `0..N` to sweep.
        #[arg(long, default_value_t = 0)]
        sweep_seeds: usize,
    },
    /// Compute bound envelopes, from a previous trace or a fresh run.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Trace CSV written by `simulate`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Sidecar of the trace (default: trace path with `.meta`).
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

/// Flags mirroring config fields; flags override the file.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PlantKind>,
    #[arg(long)]
    t_bar: Option<f64>,
    #[arg(long)]
    t_under: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    extra_degree: Option<usize>,
    #[arg(long)]
    optimize: Option<bool>,
    #[arg(long)]
    kernel_seed: Option<u64>,
    #[arg(long)]
    h_level: Option<f64>,
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    rate: Option<Rate>,
    #[arg(long)]
    eta_bar_a: Option<f64>,
    #[arg(long)]
    eta_bar_phi: Option<f64>,
    #[arg(long)]
    eta_bar_d: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<Config, Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", p.display())))?;
                config::parse(&text).map_err(|e| Failure::new(EXIT_FAILURE, e))?
            }
            None => Config::default(),
        };
        macro_rules! over {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = Some(v);
                }
            };
        }
        over!(self.preset, cfg.plant.kind);
        over!(self.t_bar, cfg.sampler.t_bar);
        over!(self.t_under, cfg.sampler.t_under);
        over!(self.horizon, cfg.kernel.horizon);
        over!(self.extra_degree, cfg.kernel.extra_degree);
        over!(self.optimize, cfg.kernel.optimize);
        over!(self.kernel_seed, cfg.kernel.seed);
        over!(self.h_level, cfg.plant.h_level);
        over!(self.noise_variance, cfg.noise.variance);
        over!(self.seed, cfg.noise.seed);
        over!(self.t_end, cfg.run.t_end);
        over!(self.step, cfg.run.step);
        over!(self.mode, cfg.run.mode);
        over!(self.rate, cfg.run.rate);
        over!(self.eta_bar_a, cfg.gains.eta_bar_a);
        over!(self.eta_bar_phi, cfg.gains.eta_bar_phi);
        over!(self.eta_bar_d, cfg.gains.eta_bar_d);
        if let Some(o) = &self.out {
            cfg.output.dir = Some(o.display().to_string());
        }
        Ok(cfg)
    }
}

fn execute(cmd: &Command) -> commands::Outcome {
    let common = match cmd {
        Command::Check { common, .. }
        | Command::Kernel { common, .. }
        | Command::Simulate { common, .. }
        | Command::Bounds { common, .. } => common,
    };
    let mut cfg = common.load()?;
    if let Command::Kernel { order: Some(n), .. } = cmd {
        cfg.kernel.order = Some(*n);
    }
    let sc = cfg.resolve().map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    match cmd {
        Command::Check { json, .. } => commands::check(&cfg, &sc, *json),
        Command::Kernel { .. } => commands::kernel(&cfg, &sc),
        Command::Simulate { sweep_h, sweep_seeds, .. } => commands::simulate(
            &cfg,
            &sc,
            &Sweep {
                h_levels: sweep_h.clone(),
                seeds: *sweep_seeds,
            },
        ),
        Command::Bounds { trace, meta, .. } => commands::bounds(&cfg, &sc, trace.as_deref(), meta.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
