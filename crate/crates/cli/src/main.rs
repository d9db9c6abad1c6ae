//! `qlink run --experiment <name>`: run a named experiment and write its
//! result JSON.
//!
//! Exit codes: 0 ok, 1 config error, 2 runtime error (including an
//! unwritable output), 3 an estimator did not converge, 4 usage error
//! (unknown experiment or bad arguments).

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qlink_core::experiments::{self, Config, ExperimentKind, RunResult};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "qlink", version, about = "Gate teleportation between two networked ion-trap modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or `all`) and write the result JSON.
    Run(RunArgs),
    /// List experiment names.
    List,
    /// Print the default config as TOML.
    DefaultConfig,
}

#[derive(clap::Args)]
struct RunArgs {
    /// teleported-cz, iswap, swap, grover, bell, memory, rbm,
    /// composite-pulse, entanglement, error-budget, circuit, or all.
    /// Defaults to `circuit` when --circuit is given.
    #[arg(long, short)]
    experiment: Option<String>,
    /// TOML config (JSON if the extension is .json); defaults apply when
    /// omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, short, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Replace every shot count in the config.
    #[arg(long)]
    shots_override: Option<u64>,
    /// Use the all-zero noise profile.
    #[arg(long)]
    noiseless: bool,
    /// Circuit in the text IR, run by the `circuit` experiment.
    #[arg(long)]
    circuit: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("estimator did not converge in {0}")]
    NotConverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Usage(_) => 4,
        }
    }
}

impl From<qlink_core::Error> for CliError {
    fn from(e: qlink_core::Error) -> Self {
        match e {
            qlink_core::Error::Config(_) | qlink_core::Error::Parse { .. } => CliError::Config(e.to_string()),
            qlink_core::Error::UnknownExperiment(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn load_config(args: &RunArgs) -> Result<Config, CliError> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(p) = &args.circuit {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
        cfg.circuit.source = Some(text);
    }
    if let Some(n) = args.shots_override {
        cfg = cfg.with_shots(n);
    }
    if args.noiseless {
        cfg = cfg.noiseless();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let name = match (&args.experiment, &args.circuit) {
        (Some(e), _) => e.clone(),
        (None, Some(_)) => "circuit".to_string(),
        (None, None) => return Err(CliError::Usage("--experiment is required".into())),
    };
    let kinds: Vec<ExperimentKind> = if name == "all" {
        ExperimentKind::ALL.to_vec()
    } else {
        vec![name.parse()?]
    };
    let cfg = load_config(&args)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(
            File::create(p).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    let (text, unconverged) = if kinds.len() == 1 {
        let r = experiments::run(kinds[0], &cfg, args.seed)?;
        (r.to_json()?, unconverged(std::slice::from_ref(&r)))
    } else {
        let kinds: Vec<ExperimentKind> = kinds
            .into_iter()
            .filter(|k| *k != ExperimentKind::Circuit || cfg.circuit.source.is_some())
            .collect();
        let results = experiments::run_batch(&kinds, &cfg, args.seed)
            .into_iter()
            .collect::<Result<Vec<RunResult>, _>>()?;
        let v = serde_json::json!({ "seed": args.seed, "results": results });
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Runtime(e.to_string()))?;
        (text, unconverged(&results))
    };
    writeln!(sink, "{text}").map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))?;
    match unconverged {
        Some(which) => Err(CliError::NotConverged(which)),
        None => Ok(()),
    }
}

fn unconverged(results: &[RunResult]) -> Option<String> {
    let names: Vec<&str> = results.iter().filter(|r| !r.converged).map(|r| r.experiment.name()).collect();
    (!names.is_empty()).then(|| names.join(", "))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::List => {
            for k in ExperimentKind::ALL {
                println!("{k}");
            }
            Ok(())
        }
        Command::DefaultConfig => toml::to_string(&Config::default())
            .map(|t| print!("{t}"))
            .map_err(|e| CliError::Runtime(e.to_string())),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
