use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybridvol_cli::{commands, CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "hybridvol", version, about = "GARCH, GRU and hybrid volatility forecasting with VaR/ES backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Descriptive statistics of the input returns.
    Stats,
    /// Synthetic OHLC data from the configured GARCH model.
    Simulate,
    /// Full-sample GARCH estimate.
    GarchFit,
    /// Rolling GARCH, GRU blocks, risk series and backtest report.
    Run,
    /// Backtest report from an existing forecasts CSV.
    Backtest,
}

fn execute(cli: &Cli) -> Result<commands::Outcome, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Stats => commands::stats(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::GarchFit => commands::garch_fit(&cfg),
        Command::Run => commands::run(&cfg),
        Command::Backtest => commands::backtest(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.message);
            for p in &outcome.artifacts {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
