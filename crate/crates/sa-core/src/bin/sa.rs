use clap::{Args, Parser, Subcommand};
use sa_core::experiments::{
    emit_report, parse_config, run_experiment, ConfigOverrides, OutputFormat,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sa", about = "Stochastic approximation experiment runner", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replication study and emit a CSV or JSON report.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment name: quantile-fig, lms-compare, rates, normality, sim-expfam
    #[arg(long)]
    experiment: Option<String>,

    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    replications: Option<usize>,

    /// Single learning-rate scale (shorthand for a one-point grid)
    #[arg(long, conflicts_with = "gamma1_grid")]
    gamma1: Option<f64>,

    /// Comma-separated learning-rate scales
    #[arg(long, value_delimiter = ',')]
    gamma1_grid: Option<Vec<f64>>,

    /// Learning-rate exponent in (1/2, 1]
    #[arg(long)]
    gamma: Option<f64>,

    #[arg(long)]
    horizon: Option<usize>,

    /// Worker threads (default: SA_WORKERS env, then one per CPU)
    #[arg(long)]
    workers: Option<usize>,

    /// Output file path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,

    /// csv or json
    #[arg(long)]
    format: Option<String>,
}

fn run(args: &RunArgs) -> Result<(), String> {
    let format = match args.format.as_deref() {
        None => None,
        Some("csv") => Some(OutputFormat::Csv),
        Some("json") => Some(OutputFormat::Json),
        Some(other) => return Err(format!("unknown format: {other} (expected csv or json)")),
    };
    let flags = ConfigOverrides {
        experiment: args.experiment.clone(),
        seed: args.seed,
        replications: args.replications,
        horizon: args.horizon,
        gamma1: args.gamma1,
        gamma1_grid: args.gamma1_grid.clone(),
        gamma: args.gamma,
        alpha: None,
        theta0: None,
        inner_k: None,
        a1: None,
        sim_k: None,
        grid_m: None,
        workers: args.workers,
        output_path: args.out.as_ref().map(|p| p.display().to_string()),
        format: None,
    };
    let cfg = parse_config(args.config.as_deref(), &flags).map_err(|e| e.to_string())?;
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let format = format.unwrap_or(cfg.format);
    emit_report(&report, format).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(message) => {
                eprintln!("sa: {message}");
                ExitCode::FAILURE
            }
        },
    }
}
