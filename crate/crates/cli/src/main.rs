//! Command line front end: load a scenario, run it, write logs, print a
//! summary.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on solver
//! failures (a partial log is still written).

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairway_core::log::Summary;
use fairway_core::scenario::{builtin, builtin_names, Scenario, ScenarioConfig};
use fairway_core::sim::{run_full, RunMode, SimError};
use fairway_core::LogFormat;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fairway", version, about = "Multi-vessel collision avoidance simulator")]
struct Cli {
    /// List the built-in scenarios and exit.
    #[arg(long)]
    list_scenarios: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its log.
    Run(RunArgs),
    /// List the built-in scenarios.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name or path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// Output directory for log files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Log file format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Override the per-period consensus iteration budget.
    #[arg(long)]
    iter_max: Option<usize>,
    /// Override the consensus penalty parameter.
    #[arg(long)]
    beta: Option<f64>,
    /// Override the number of control periods.
    #[arg(long)]
    steps: Option<usize>,
    /// Reserved; runs are deterministic regardless.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the message trace and print the config digest.
    #[arg(long)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for LogFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => LogFormat::Csv,
            Format::Json => LogFormat::Json,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match (cli.list_scenarios, cli.command) {
        (true, _) | (_, Some(Command::ListScenarios)) => {
            for name in builtin_names() {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        (false, Some(Command::Run(args))) => match run_command(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(CliError::Config(msg)) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
            Err(CliError::Solver(msg)) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
        },
        (false, None) => {
            eprintln!("error: no command given (try `fairway run --scenario ho-2`)");
            ExitCode::from(1)
        }
    }
}

enum CliError {
    Config(String),
    Solver(String),
}

fn load_scenario(args: &RunArgs) -> Result<Scenario, CliError> {
    let text = match builtin(&args.scenario) {
        Some(text) => text.to_string(),
        None => {
            let path = Path::new(&args.scenario);
            std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!(
                    "cannot read scenario '{}': {e} (use --list-scenarios for built-ins)",
                    args.scenario
                ))
            })?
        }
    };
    let mut config = ScenarioConfig::from_json(&text)
        .map_err(|e| CliError::Config(format!("scenario '{}': {e}", args.scenario)))?;
    if let Some(iter_max) = args.iter_max {
        config.nadmm.iter_max = iter_max;
    }
    if let Some(beta) = args.beta {
        config.nadmm.beta = beta;
    }
    if let Some(steps) = args.steps {
        config.total_steps = steps;
    }
    config
        .build()
        .map_err(|e| CliError::Config(format!("scenario '{}': {e}", args.scenario)))
}

fn run_command(args: &RunArgs) -> Result<(), CliError> {
    let scenario = load_scenario(args)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Config(format!("cannot create '{}': {e}", args.out.display())))?;

    let ext = match args.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let log_path = args.out.join(format!("{}.{ext}", scenario.config.name));

    let (log, trace) = match run_full(&scenario, RunMode::default(), args.verbose) {
        Ok(out) => (out.log, out.trace),
        Err(SimError::Solver {
            ship,
            step,
            message,
            partial,
        }) => {
            let _ = partial.write(&log_path, Some(args.format.into()));
            return Err(CliError::Solver(format!(
                "solver failed for ship {ship} at step {step}: {message} (partial log: {})",
                log_path.display()
            )));
        }
    };

    log.write(&log_path, Some(args.format.into()))
        .map_err(|e| CliError::Config(format!("cannot write log: {e}")))?;
    println!("wrote {}", log_path.display());

    if args.verbose {
        println!("config digest: {}", log.config_digest);
        if let Some(trace) = trace {
            let trace_path = args.out.join(format!("{}-trace.jsonl", scenario.config.name));
            let mut text = String::new();
            for rec in &trace {
                text.push_str(&serde_json::to_string(rec).expect("trace serializes"));
                text.push('\n');
            }
            std::fs::write(&trace_path, text)
                .map_err(|e| CliError::Config(format!("cannot write trace: {e}")))?;
            println!("wrote {}", trace_path.display());
        }
    }

    println!("{}", Summary::compute(&log, &scenario));
    Ok(())
}
