use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oled_cli::commands::{self, Method};
use oled_cli::config::{load_toml, DatasetConfig, EvalConfig, ReconstructConfig, SweepConfig};
use oled_cli::{CliError, Result};
use oled_net::gradcheck::Target;

// Training allocates and drops multi-megabyte temporaries every step; the
// system allocator hands them back to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "oled", version, about = "Overlapping-echo detachment T2 mapping experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset of OLED images and T2 maps.
    GenDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the residual network on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a T2 map from one double-echo-removed OIMG image.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Solver, timing and guided-filter settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output path with a `.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate a depth or robustness grid; writes one CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a T2 estimate with a reference tissue map.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every layer and the whole network.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenDataset { config, out } => {
            let cfg: DatasetConfig = load_toml(&config)?;
            let m = commands::gen_dataset(&cfg, &out)?;
            let n_train = m.records(oled_cli::dataset::Split::Train).count();
            println!(
                "wrote {} samples ({} train, {} test) to {}",
                m.samples.len(),
                n_train,
                m.samples.len() - n_train,
                out.display()
            );
        }
        Cmd::Train { config, out } => {
            let res = commands::train_from_config(&config, &out)?;
            let (a, b) = (res.initial_val_loss(), res.final_val_loss());
            println!(
                "trained {} iterations; validation loss {a:?} -> {b:?}; checkpoints in {}",
                res.iterations,
                out.display()
            );
        }
        Cmd::Reconstruct { input, method, checkpoint, config, out, report } => {
            let cfg: ReconstructConfig = config.map(load_toml).transpose()?.unwrap_or_default();
            let report_path = report.unwrap_or_else(|| out.with_extension("json"));
            let r = commands::reconstruct_files(&input, method, checkpoint.as_deref(), &cfg, &out, &report_path)?;
            println!("{:?}: median {:.2} ms over {} runs", r.method, r.timing.median_ms, r.timing.runs_ms.len());
            if r.converged == Some(false) {
                println!("warning: solver stopped at max_outer_iters without converging");
            }
        }
        Cmd::Sweep { config, out } => {
            let cfg: SweepConfig = load_toml(&config)?;
            let rows = commands::sweep(&cfg)?;
            commands::write_sweep_csv(&rows, &out)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("wrote {} rows to {} ({failed} failed cells)", rows.len(), out.display());
        }
        Cmd::Evaluate { estimate, reference, config, out } => {
            let cfg: EvalConfig = config.map(load_toml).transpose()?.unwrap_or_default();
            let r = commands::evaluate_files(&estimate, &reference, &cfg, &out)?;
            println!(
                "median rel error {:.4}, mean {:.4}, rmse {:.2} ms over {} pixels",
                r.error.median_rel_error, r.error.mean_rel_error, r.error.rmse_ms, r.error.n_pixels
            );
        }
        Cmd::Gradcheck { seeds } => {
            let reports = commands::gradcheck_all(&Target::ALL, seeds)?;
            println!("target,seed,n_checked,max_rel_error,passed");
            for r in &reports {
                println!("{},{},{},{:.3e},{}", r.target.name(), r.seed, r.n_checked, r.max_rel_error, r.passed());
            }
            if let Some(bad) = reports.iter().find(|r| !r.passed()) {
                return Err(CliError::Failed(format!(
                    "gradient check {} seed {} failed: {:.3e}",
                    bad.target.name(),
                    bad.seed,
                    bad.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
