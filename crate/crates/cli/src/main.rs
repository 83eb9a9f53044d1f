//! Command-line entry point: `backtest`, `simulate`, and `cross-section`.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{FileConfig, Resolved, RunArgs};
use kelly_regret_core::{
    align, cross_section_at, emit_cross_section, emit_plot_data, load_factors, load_returns, run,
    synthesize, AlignedDataset, EmitOptions, Month, SyntheticSpec,
};

#[derive(Parser)]
#[command(
    name = "kelly-regret",
    version,
    about = "Regret-based selection of sparse dynamic portfolios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the monthly walk-forward backtest and write plot data.
    Backtest(RunArgs),
    /// Generate synthetic returns.csv and factors.csv from a spec file.
    Simulate {
        /// JSON file describing the synthetic factor model.
        #[arg(long)]
        spec: PathBuf,
        /// Directory for returns.csv and factors.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit the candidate cross-section for one out-of-sample month.
    CrossSection {
        #[command(flatten)]
        args: RunArgs,
        /// Month to evaluate, as YYYY-MM.
        #[arg(long)]
        date: String,
    },
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore the error if a pool already exists (tests call main twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn load_dataset(resolved: &Resolved) -> Result<AlignedDataset> {
    let returns = load_returns(&resolved.returns)?;
    let factors = load_factors(&resolved.factors)?;
    Ok(align(&returns, &factors)?)
}

fn prepare(args: &RunArgs) -> Result<(Resolved, AlignedDataset)> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut resolved = Resolved::merge(args, &file)?;
    init_threads(resolved.threads);
    let dataset = load_dataset(&resolved)?;
    resolved.backtest.policy.fee_vector = resolved.fee_vector(&dataset.returns.tickers)?;
    Ok((resolved, dataset))
}

fn write_resolved_config(resolved: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&resolved.out_dir)?;
    let text = serde_json::to_string_pretty(&resolved.to_resolved_config())?;
    std::fs::write(resolved.out_dir.join("resolved_config.json"), text + "\n")?;
    Ok(())
}

fn cmd_backtest(args: &RunArgs) -> Result<()> {
    let (resolved, dataset) = prepare(args)?;
    write_resolved_config(&resolved)?;
    let result = run(&dataset, &resolved.backtest)?;
    let files = emit_plot_data(
        &result,
        &resolved.out_dir,
        &EmitOptions {
            annual_weights: resolved.annual_weights,
        },
    )?;
    log::info!(
        "wrote {} files to {}",
        files.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

fn cmd_simulate(spec_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("cannot read spec {}", spec_path.display()))?;
    let spec: SyntheticSpec =
        serde_json::from_str(&text).with_context(|| format!("spec {}", spec_path.display()))?;
    let (returns, factors) = synthesize(&spec)?;
    std::fs::create_dir_all(out)?;
    returns.write_csv(&out.join("returns.csv"))?;
    factors.write_csv(&out.join("factors.csv"))?;
    Ok(())
}

fn cmd_cross_section(args: &RunArgs, date: &str) -> Result<()> {
    let (resolved, dataset) = prepare(args)?;
    let date: Month = date.parse()?;
    let cs = cross_section_at(&dataset, &resolved.backtest, date)?;
    emit_cross_section(&cs, &resolved.out_dir)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("KELLY_REGRET_LOG", "error")
            .write_style("KELLY_REGRET_LOG_STYLE"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Backtest(args) => cmd_backtest(args),
        Command::Simulate { spec, out } => cmd_simulate(spec, out),
        Command::CrossSection { args, date } => cmd_cross_section(args, date),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
