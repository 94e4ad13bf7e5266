use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ibrkit::dataset::Role;

mod commands;
mod store;

use commands::{GenerateArgs, PredictArgs, TrainArgs};
use store::{Store, STORE_ENV};

/// Cluster-specialized admittance identification for inverter-based resources.
#[derive(Debug, Parser)]
#[command(name = "ibrkit", version)]
struct Cli {
    /// Model store directory
    #[arg(long, global = true, env = STORE_ENV, default_value = "ibrkit-store")]
    store: PathBuf,
    /// Seed for clustering restarts and network training, recorded in outputs
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the analytical admittance over the training or testing grid
    Generate {
        #[arg(long, default_value = "train")]
        role: Role,
        /// Parameter catalog (default: the store's, seeded with the canonical set)
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Restrict to these IBRs (repeatable)
        #[arg(long = "ibr")]
        ibrs: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose k and cluster the training profiles
    Cluster {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 6)]
        k_max: usize,
    },
    /// Train one network per cluster
    Train {
        /// Cluster index or `all`
        #[arg(long, default_value = "all")]
        cluster: ClusterSelection,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Place a new device from a few measured Y_dd points
    Assign {
        /// CSV with columns f_hz,g_dd,b_dd
        #[arg(long)]
        measurement: PathBuf,
        /// Device name (default: file stem)
        #[arg(long)]
        ibr: Option<String>,
    },
    /// Evaluate a cluster network over an operating-point grid
    Predict {
        #[arg(long)]
        cluster: usize,
        /// Voltage values: `x` or `start:stop:step`
        #[arg(long, default_value = "1.0", allow_hyphen_values = true)]
        v: String,
        #[arg(long, default_value = "-1:1:0.2", allow_hyphen_values = true)]
        p: String,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        q: String,
        #[arg(long, default_value_t = 1.0)]
        f_min: f64,
        #[arg(long, default_value_t = 200.0)]
        f_max: f64,
        #[arg(long, default_value_t = 200)]
        n_freq: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write predicted minus analytical values for this catalog IBR
        #[arg(long)]
        compare: Option<String>,
    },
    /// Per-IBR, per-band error of the cluster networks on a dataset
    Eval {
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy)]
enum ClusterSelection {
    All,
    One(usize),
}

impl std::str::FromStr for ClusterSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Self::All);
        }
        s.parse()
            .map(Self::One)
            .map_err(|_| format!("expected a cluster index or `all`, got `{s}`"))
    }
}

fn run(cli: Cli) -> Result<()> {
    let store = Store::open(&cli.store)?;
    let seed = cli.seed;
    match cli.command {
        Command::Generate {
            role,
            catalog,
            ibrs,
            out,
        } => commands::generate_cmd(
            &store,
            GenerateArgs {
                role,
                catalog,
                ibrs,
                out,
            },
        ),
        Command::Cluster {
            train,
            k_min,
            k_max,
        } => commands::cluster_cmd(&store, train, k_min, k_max, seed),
        Command::Train {
            cluster,
            train,
            epochs,
            batch_size,
            learning_rate,
        } => commands::train_cmd(
            &store,
            TrainArgs {
                cluster: match cluster {
                    ClusterSelection::All => None,
                    ClusterSelection::One(c) => Some(c),
                },
                train,
                epochs,
                batch_size,
                learning_rate,
            },
            seed,
        ),
        Command::Assign { measurement, ibr } => {
            commands::assign_cmd(&store, &measurement, ibr, seed)
        }
        Command::Predict {
            cluster,
            v,
            p,
            q,
            f_min,
            f_max,
            n_freq,
            out,
            compare,
        } => commands::predict_cmd(
            &store,
            PredictArgs {
                cluster,
                v,
                p,
                q,
                f_min,
                f_max,
                n_freq,
                out,
                compare,
            },
            seed,
        ),
        Command::Eval { test } => commands::eval_cmd(&store, test, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
