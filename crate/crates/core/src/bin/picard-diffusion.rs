use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use picard_diffusion::harness::output;
use picard_diffusion::harness::sweep::{sweep_dimension, SweepOptions, SweepStatus};
use picard_diffusion::harness::{run, ExperimentConfig};
use picard_diffusion::Mode;

#[derive(Parser)]
#[command(version, about = "Parallel-in-time Picard samplers for OU diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write record.json, rows.csv and residuals.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search the smallest Picard depth meeting a residual target per dimension.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,8,32,128")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 1024)]
        max_depth: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("loading config {}", path.display()))
}

fn out_dir(cli: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    cli.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn run_command(
    config_path: &Path,
    mode: Option<Mode>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut config = load(config_path)?;
    if let Some(m) = mode {
        config.mode = m;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if threads.is_some() {
        config.threads = threads;
    }
    let dir = out_dir(out, &config);
    config.output = Some(dir.clone());
    config.validate().with_context(|| format!("config {}", config_path.display()))?;
    let record = run(&config).with_context(|| {
        format!(
            "running {} ({} mode, seed {}) from {}",
            config.implementation.name(),
            config.mode,
            config.seed,
            config_path.display()
        )
    })?;
    output::write_run(&dir, &record).with_context(|| format!("writing outputs to {}", dir.display()))?;
    log::info!(
        "rounds {} evals {} KL {:?} W2 {:?} -> {}",
        record.report.sequential_rounds,
        record.report.total_score_evals,
        record.kl(),
        record.w2(),
        dir.display()
    );
    Ok(())
}

fn sweep_command(
    config_path: &Path,
    dims: Vec<usize>,
    tol: f64,
    max_depth: usize,
    threads: Option<usize>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let mut config = load(config_path)?;
    if threads.is_some() {
        config.threads = threads;
    }
    let dir = out_dir(out, &config);
    let opts = SweepOptions {
        dims,
        tol,
        max_depth,
    };
    let rows = sweep_dimension(&config, &opts).with_context(|| format!("sweep of {}", config_path.display()))?;
    std::fs::create_dir_all(dir.join("records"))?;
    output::write_sweep(&dir.join("sweep.csv"), &rows)?;
    let records: Vec<_> = rows.iter().filter_map(|r| r.record.as_ref()).collect();
    output::write_rows(&dir.join("rows.csv"), &records)?;
    for r in &records {
        output::write_json(&dir.join("records").join(format!("d{}.json", r.d)), r)?;
    }
    output::write_json(&dir.join("sweep.json"), &rows)?;
    let mut all_ok = true;
    for row in &rows {
        match row.status {
            SweepStatus::Ok => {}
            s => {
                all_ok &= !s.is_failure();
                log::warn!("d = {}: {s}: {}", row.d, row.error.as_deref().unwrap_or(""));
            }
        }
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            threads,
            out,
        } => run_command(&config, mode, seed, threads, out).map(|_| true),
        Command::Sweep {
            config,
            dims,
            tol,
            max_depth,
            threads,
            out,
        } => sweep_command(&config, dims, tol, max_depth, threads, out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
