//! `lifb`: train, evaluate and inspect LIFB spiking networks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lifb", version, about = "Leaky integrate-and-fire-or-burst spiking networks")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every config-driven command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (config key `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Model and data flags; each one overrides the config key of the same name.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// snn6-small, cnn-small, mlp or mlp:<hidden>.
    #[arg(long)]
    pub arch: Option<String>,
    /// lif, lifb, posneg or pair.
    #[arg(long)]
    pub neuron: Option<String>,
    /// Simulation length T.
    #[arg(long, visible_alias = "steps")]
    pub timesteps: Option<usize>,
    /// `learnable` or a fixed burst intensity.
    #[arg(long)]
    pub kappa: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// mnist, gaussians or bars.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub val_limit: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write checkpoints, metrics and the resolved config.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on its dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `val` or `train`.
        #[arg(long, default_value = "val")]
        split: String,
        /// Override the simulation length stored in the checkpoint.
        #[arg(long)]
        timesteps: Option<usize>,
    },
    /// Train the neuron-variant by T grid and write mean±std tables.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Comma-separated variants, e.g. lif,lifb,lifb-fixed-2.
        #[arg(long)]
        variants: Option<String>,
        /// Comma-separated T values.
        #[arg(long = "t-list")]
        t_list: Option<String>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Exact threshold-function counts against the closed-form bounds.
    Capacity {
        #[arg(long, default_value_t = 3)]
        tmax: usize,
        /// Comma-separated alphabet sizes.
        #[arg(long, default_value = "2", value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 2.0)]
        kappa: f64,
        /// Take κ from the mean over a checkpoint's burst channels.
        #[arg(long, conflicts_with = "kappa")]
        from_checkpoint: Option<PathBuf>,
        /// Permit exact counts beyond the default enumeration budget.
        #[arg(long)]
        allow_large: bool,
        /// Fail instead of leaving over-budget cells blank.
        #[arg(long)]
        require_exact: bool,
        /// Write capacity.csv (and capacity.svg with --svg) here; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
    },
    /// Integrate the burst ODE neuron under a current step.
    Simulate(commands::SimulateArgs),
    /// Rewrite every LIFB layer of a checkpoint as a pair of binary units.
    Decouple {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that a LIFB checkpoint and its decoupled image agree bit for bit.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Decoupled checkpoint; built on the fly when omitted.
        #[arg(long)]
        decoupled: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        inputs: usize,
        #[arg(long = "t-list", default_value = "1,2,4,6", value_delimiter = ',')]
        t_list: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export spike rasters of randomly chosen neurons.
    Raster {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Neuron-layer ordinals (0 = first spiking layer); all when omitted.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        neurons: usize,
        /// Number of validation samples to record.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LIFB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("LIFB_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train { common, model, resume } => commands::train(&common, &model, resume.as_deref()),
        Command::Eval {
            checkpoint,
            split,
            timesteps,
        } => commands::eval(&checkpoint, &split, timesteps),
        Command::Ablate {
            common,
            model,
            variants,
            t_list,
            seeds,
        } => commands::ablate(&common, &model, variants, t_list, seeds),
        Command::Capacity {
            tmax,
            n,
            kappa,
            from_checkpoint,
            allow_large,
            require_exact,
            out,
            svg,
        } => commands::capacity(commands::CapacityArgs {
            tmax,
            n,
            kappa,
            from_checkpoint,
            allow_large,
            require_exact,
            out,
            svg,
        }),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Decouple { checkpoint, out } => commands::decouple(&checkpoint, &out),
        Command::Verify {
            checkpoint,
            decoupled,
            inputs,
            t_list,
            seed,
        } => commands::verify(&checkpoint, decoupled.as_deref(), inputs, &t_list, seed),
        Command::Raster {
            checkpoint,
            layers,
            neurons,
            samples,
            seed,
            out,
        } => commands::raster(&checkpoint, &layers, neurons, samples, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
