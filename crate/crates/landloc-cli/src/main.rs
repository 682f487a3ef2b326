//! Command-line entry point: world generation, training, inference
//! evaluation, robustness sweeps, and timing benchmarks.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 file error, 4 numeric
//! failure. Errors print as a single `error: <kind>: <message>` line.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Numeric(m) => m,
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<landloc::world::WorldError> for CliError {
    fn from(e: landloc::world::WorldError) -> Self {
        use landloc::world::WorldError as W;
        match &e {
            W::Io(_) => CliError::Io(e.to_string()),
            W::Parse { .. } | W::DuplicateId(_) => CliError::Io(e.to_string()),
            W::InvalidParam(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<landloc::sensors::SensorError> for CliError {
    fn from(e: landloc::sensors::SensorError) -> Self {
        use landloc::sensors::SensorError as S;
        match &e {
            S::World(w) => CliError::from_world_ref(w, e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<landloc::net::NetError> for CliError {
    fn from(e: landloc::net::NetError) -> Self {
        use landloc::net::NetError as N;
        match &e {
            N::InvalidConfig(_) => CliError::Usage(e.to_string()),
            N::NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<landloc::train::TrainError> for CliError {
    fn from(e: landloc::train::TrainError) -> Self {
        use landloc::train::TrainError as T;
        match &e {
            T::Io(_) | T::Checkpoint(_) => CliError::Io(e.to_string()),
            T::World(w) => CliError::from_world_ref(w, e.to_string()),
            T::Sensor(_) => CliError::Usage(e.to_string()),
            T::DivergedLoss(_) | T::RejectionRateTooHigh { .. } | T::SampleRejected => {
                CliError::Numeric(e.to_string())
            }
            T::Net(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<landloc::infer::InferError> for CliError {
    fn from(e: landloc::infer::InferError) -> Self {
        use landloc::infer::InferError as I;
        match &e {
            I::World(w) => CliError::from_world_ref(w, e.to_string()),
            I::InvalidParam(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<landloc::eval::EvalError> for CliError {
    fn from(e: landloc::eval::EvalError) -> Self {
        use landloc::eval::EvalError as E;
        match &e {
            E::Io(_) => CliError::Io(e.to_string()),
            E::World(w) => CliError::from_world_ref(w, e.to_string()),
            E::Empty(_) | E::LengthMismatch(..) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl CliError {
    fn from_world_ref(w: &landloc::world::WorldError, msg: String) -> CliError {
        use landloc::world::WorldError as W;
        match w {
            W::InvalidParam(_) => CliError::Usage(msg),
            _ => CliError::Io(msg),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "landloc",
    about = "Landmark-based vehicle self-localization on synthetic worlds",
    version
)]
struct Cli {
    /// Config file (flat `section.key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set train.steps=1000 (repeatable)
    #[arg(long = "set", global = true)]
    sets: Vec<String>,

    /// Root random seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (1 forces fully sequential execution)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a landmark map and ground-truth trajectory
    GenWorld {
        /// Output directory for map.csv and trajectory.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the offset-regression network on a generated world
    Train {
        /// Directory containing map.csv and trajectory.csv
        #[arg(long)]
        world: PathBuf,
        /// Output directory for checkpoint.json and loss.csv
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: sequence modes or the synthetic-offset task
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        world: PathBuf,
        /// gps_only | gps_net | net_only | net_ekf | net_ekf_gps | synthetic
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// Replace the network with an exact oracle (pipeline check)
        #[arg(long)]
        oracle: bool,
    },
    /// Run a measurement-impairment sweep and write CSV + SVG
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        world: PathBuf,
        /// clutter | miss | noise | combined
        #[arg(long)]
        variable: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure inference timing (optionally against the MCL baseline)
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also time the particle-filter baseline on the same inputs
        #[arg(long)]
        mcl: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    let mut cfg = match config::RunConfig::load(cli.config.as_deref(), &cli.sets) {
        Ok(c) => c,
        Err(e) => fail(e),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        // ignore failure: the global pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }

    let result = match cli.command {
        Command::GenWorld { out } => commands::gen_world(&cfg, &out),
        Command::Train { world, out, resume } => {
            commands::train(&cfg, &world, &out, resume.as_deref())
        }
        Command::Eval {
            checkpoint,
            world,
            mode,
            out,
            oracle,
        } => commands::eval(&cfg, checkpoint.as_deref(), &world, &mode, &out, oracle),
        Command::Sweep {
            checkpoint,
            world,
            variable,
            out,
        } => commands::sweep(&cfg, &checkpoint, &world, &variable, &out),
        Command::Bench { checkpoint, mcl } => commands::bench(&cfg, &checkpoint, mcl),
    };

    if let Err(e) = result {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("error: {}: {}", e.kind(), e.message());
    std::process::exit(e.exit_code());
}
