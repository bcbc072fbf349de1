//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{self, Outputs};
use crate::config::{Overrides, Resolved};
use crate::error::CliError;

/// Environment variable naming the output directory when `--output-dir` is absent.
pub const OUTPUT_DIR_ENV: &str = "XVENUE_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "xvenue", version, about = "Optimal limit-order splitting across trading venues")]
pub struct Args {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of every random stream; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of slices; overrides `run.slices`.
    #[arg(long, global = true)]
    pub slices: Option<usize>,
    /// Output directory; falls back to $XVENUE_OUTPUT_DIR, then `output.dir`, then `xvenue-out`.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
    /// Enable the market-order branch; overrides `grid.market_orders`.
    #[arg(long, global = true, value_enum)]
    pub market_orders: Option<Toggle>,
    /// Solver threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the target inventory curve.
    Curve {
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Solve one slice and write its value function and policy.
    Solve {
        /// Slice whose start time is used.
        #[arg(long, default_value_t = 0)]
        slice: usize,
    },
    /// Solve and simulate one slice.
    Simulate,
    /// Run the adaptive loop over all slices.
    Run,
    /// Update the configured prior from event logs.
    Calibrate {
        /// JSONL event logs, read in order.
        #[arg(long, required = true, num_args = 1..)]
        events: Vec<PathBuf>,
    },
    /// Update OTC priors from a JSONL log of requests, quotes and prices.
    OtcCalibrate {
        #[arg(long)]
        log: PathBuf,
    },
    /// Turn a finished run directory into figure tables.
    PlotData {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn output_dir(args: &Args, cfg: &Resolved) -> PathBuf {
    match (&args.output_dir, &cfg.file.output) {
        (Some(d), _) => d.clone(),
        (None, Some(o)) => cfg.base_dir.join(&o.dir),
        (None, None) => PathBuf::from("xvenue-out"),
    }
}

fn load(args: &Args) -> Result<Resolved, CliError> {
    let path = args.config.as_ref().ok_or_else(|| CliError::Config {
        path: "--config".into(),
        message: "this subcommand needs a config file".into(),
    })?;
    Resolved::load(path)
}

/// Runs the command and returns the outputs and the directory they go to.
pub fn dispatch(args: &Args) -> Result<(Outputs, PathBuf), CliError> {
    let overrides = Overrides {
        seed: args.seed,
        slices: args.slices,
        market_orders: args.market_orders.map(|t| t == Toggle::On),
    };
    match &args.command {
        Command::PlotData { run_dir } => {
            let out = commands::plot_data(run_dir)?;
            let dir = args.output_dir.clone().unwrap_or_else(|| run_dir.join("plot"));
            Ok((out, dir))
        }
        command => {
            let cfg = load(args)?;
            let out = match command {
                Command::Curve { points } => commands::curve(&cfg, *points)?,
                Command::Solve { slice } => commands::solve(&cfg, &overrides, *slice)?,
                Command::Simulate => commands::simulate(&cfg, &overrides)?,
                Command::Run => commands::run(&cfg, &overrides)?,
                Command::Calibrate { events } => commands::calibrate(&cfg, events)?,
                Command::OtcCalibrate { log } => commands::otc_calibrate(&cfg, log)?,
                Command::PlotData { .. } => unreachable!(),
            };
            Ok((out, output_dir(args, &cfg)))
        }
    }
}

/// Entry point; returns the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if args.quiet {
        log::LevelFilter::Error
    } else {
        match args.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let result = dispatch(&args).and_then(|(out, dir)| {
        commands::write_outputs(&dir, &out)?;
        log::info!("wrote {} files to {}", out.len(), dir.display());
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
