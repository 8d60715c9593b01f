use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dcsim::datasets::{
    generate_synthetic_fingerprint_dataset, load_dataset, partition_iid, partition_label_bias, save_dataset,
};
use dcsim::harness::{
    emit_results, run_experiment, run_sweep, ExperimentConfig, Method, Results, DEFAULT_R_GRID,
};
use dcsim::Error;

#[derive(Parser)]
#[command(name = "dcsim", version, about = "FedAvg / DC / DCPd experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionMode {
    Iid,
    Bias,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-template fingerprint dataset.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_per_class: usize,
        #[arg(long, default_value_t = 64)]
        dims: usize,
        #[arg(long, default_value_t = 0.15)]
        flip: f64,
        #[arg(long, default_value_t = 0.1)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Partition a dataset across users and write the plan as JSON.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: PartitionMode,
        #[arg(long, default_value_t = 0.0)]
        r: f64,
        #[arg(long, default_value_t = 4)]
        users: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run methods over a grid of label-bias values.
    SweepR {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        r: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "fedavg,dc,dcpd")]
        methods: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status grouped by failure kind.
enum Failure {
    Config(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Json(_) => Failure::Config(msg),
            Error::Parse { .. } | Error::Io { .. } => Failure::Data(msg),
            _ => Failure::Runtime(msg),
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let config = ExperimentConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenSynth {
            out,
            n_per_class,
            dims,
            flip,
            density,
            seed,
        } => {
            let d = generate_synthetic_fingerprint_dataset(n_per_class, dims, density, flip, seed)
                .map_err(|e| Failure::Config(e.to_string()))?;
            save_dataset(&d, &out)?;
            eprintln!("wrote {} rows to {}", d.len(), out.display());
        }
        Command::Partition {
            data,
            mode,
            r,
            users,
            seed,
            out,
        } => {
            let d = load_dataset(&data)?;
            let plan = match mode {
                PartitionMode::Iid => partition_iid(&d, users, seed),
                PartitionMode::Bias => {
                    if users != 4 {
                        return Err(Failure::Config("bias partitioning is defined for 4 users".into()));
                    }
                    partition_label_bias(&d, r, seed)
                }
            }
            .map_err(|e| Failure::Config(e.to_string()))?;
            let json = serde_json::to_string_pretty(&plan).map_err(|e| Failure::Runtime(e.to_string()))?;
            fs::write(&out, json + "\n").map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
            eprintln!("plan {} sizes {:?}", plan.hash(), plan.sizes());
        }
        Command::Run { config, out } => {
            let config = load_config(&config)?;
            let report = run_experiment(&config)?;
            emit_results(&Results::Experiment(&report), &config, &out)?;
            let s = report.metrics.roc_auc_summary;
            let p = report.metrics.pr_auc_summary;
            println!(
                "{} roc_auc {:.4} ± {:.4} pr_auc {:.4} ± {:.4} ({} runs)",
                report.method, s.mean, s.stderr, p.mean, p.stderr, report.metrics.runs
            );
        }
        Command::SweepR {
            config,
            r,
            methods,
            out,
        } => {
            let config = load_config(&config)?;
            let r_values = r.unwrap_or_else(|| DEFAULT_R_GRID.to_vec());
            let methods = methods
                .iter()
                .map(|m| m.trim().parse::<Method>())
                .collect::<Result<Vec<_>, _>>()?;
            let sweep = run_sweep(&config, &r_values, &methods)?;
            emit_results(&Results::Sweep(&sweep), &config, &out)?;
            for cell in &sweep.cells {
                println!(
                    "{:<12} r={:<5} roc_auc {:.4} ± {:.4}",
                    cell.method.name(),
                    cell.r.unwrap_or_default(),
                    cell.metrics.roc_auc_summary.mean,
                    cell.metrics.roc_auc_summary.stderr
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
