use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use currentlab::experiment::{self, Command, ExperimentConfig};
use currentlab::{Error, Result};

/// Current-fluctuation experiments for one-dimensional particle systems.
#[derive(Parser)]
#[command(name = "currentlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Experiment config: a JSON file, or inline JSON starting with `{`.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replica count, overriding the config.
    #[arg(long, global = true)]
    replicas: Option<u64>,
    /// Output CSV path; standard output when neither this, the config nor
    /// CURRENTLAB_OUT_DIR names one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replicas.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fill the seconds column with wall time (otherwise 0).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Limit covariances and model constants.
    Analytic,
    /// Raw current moments and label tails.
    Simulate,
    /// Paired-estimator identity suites.
    Identity,
    /// Variance series with a log-log slope.
    Scaling,
    /// Exact small-system checks and coupling rate tables.
    Oracle,
    /// Covariance grids against their limits.
    Covariance,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Analytic => Command::Analytic,
            Sub::Simulate => Command::Simulate,
            Sub::Identity => Command::Identity,
            Sub::Scaling => Command::Scaling,
            Sub::Oracle => Command::Oracle,
            Sub::Covariance => Command::Covariance,
        }
    }
}

fn config(cli: &Cli, cmd: Command) -> Result<Option<ExperimentConfig>> {
    let Some(src) = &cli.config else {
        if cmd == Command::Oracle {
            return Ok(None);
        }
        return Err(Error::Config(format!("`{}` needs --config", cmd.name())));
    };
    let mut cfg = experiment::load_config(src)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.replicas {
        cfg.replicas = r;
    }
    Ok(Some(cfg))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        experiment::set_threads(n)?;
    }
    let cmd = Command::from(cli.command);
    let cfg = config(cli, cmd)?;
    let rows = match &cfg {
        Some(c) => experiment::run(cmd, c)?,
        None => experiment::run_oracle(cli.seed.unwrap_or(1), cli.replicas.unwrap_or(100_000))?,
    };
    let dir = std::env::var_os(experiment::OUT_DIR_ENV).map(PathBuf::from);
    match experiment::output_path(cli.out.as_deref(), cfg.as_ref(), dir.as_deref(), cmd) {
        Some(path) => {
            let io = |e: std::io::Error| Error::Resource(format!("{}: {e}", path.display()));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            let file = File::create(&path).map_err(io)?;
            experiment::write_csv(&rows, BufWriter::new(file), cli.timing)
        }
        None => experiment::write_csv(&rows, std::io::stdout().lock(), cli.timing),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("currentlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
