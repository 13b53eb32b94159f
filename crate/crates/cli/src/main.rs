use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use critlat::{emit_report, resolve_jobs, run_sweep, summary_json, Experiment, ExperimentConfig};

/// Critical long-range random conductance lab.
#[derive(Parser)]
#[command(name = "critlat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seeds by this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads (default: config `jobs`, then CRITLAT_JOBS).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// kappa_eps, its deviation from the log asymptotics, second-moment check.
    KernelCheck(RunArgs),
    /// Corrector energy nu over the (eps, seed) grid.
    CorrectorSweep(RunArgs),
    /// L2 distance to the homogenized solution.
    HomogRate(RunArgs),
    /// Pathwise energy bound via the solenoidal flux.
    FluxCheck(RunArgs),
    /// Poincare constant of the killed operator.
    Poincare(RunArgs),
    /// KS distances of the rescaled walk to its Gaussian limit.
    WalkQip(RunArgs),
    /// On-diagonal heat kernel on a periodic box.
    Heatkernel(RunArgs),
    /// Residual of the exact two-scale identity.
    ScalingIdentity(RunArgs),
}

impl Command {
    fn split(self) -> (Experiment, RunArgs) {
        match self {
            Command::KernelCheck(a) => (Experiment::KernelCheck, a),
            Command::CorrectorSweep(a) => (Experiment::CorrectorSweep, a),
            Command::HomogRate(a) => (Experiment::HomogRate, a),
            Command::FluxCheck(a) => (Experiment::FluxCheck, a),
            Command::Poincare(a) => (Experiment::Poincare, a),
            Command::WalkQip(a) => (Experiment::WalkQip, a),
            Command::Heatkernel(a) => (Experiment::Heatkernel, a),
            Command::ScalingIdentity(a) => (Experiment::ScalingIdentity, a),
        }
    }
}

fn load(exp: Experiment, args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != exp {
        anyhow::bail!("config is for '{}' but the subcommand is '{}'", cfg.experiment.name(), exp.name());
    }
    if let Some(s) = args.seed_override {
        cfg.seeds = critlat::Seeds::List(vec![s]);
    }
    if args.jobs == Some(0) {
        anyhow::bail!("--jobs must be at least 1");
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (exp, args) = cli.command.split();
    let cfg = match load(exp, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let run = || -> anyhow::Result<usize> {
        let rec = run_sweep(&cfg, resolve_jobs(args.jobs, &cfg))?;
        let csv = emit_report(&cfg, &rec)?;
        if cfg.output.csv.is_none() {
            std::io::stdout().write_all(&csv).map_err(|e| anyhow::anyhow!("writing CSV to stdout: {e}"))?;
        }
        if cfg.output.json.is_none() {
            eprintln!("{}", summary_json(&cfg, &rec));
        }
        Ok(rec.failed_cells)
    };
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} cell(s) failed; see the status column");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
