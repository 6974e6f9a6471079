use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use modehop::harness::{self, ExperimentConfig};
use modehop::regeneration::ScheduleMode;

#[derive(Parser)]
#[command(name = "modehop", version, about = "Multimodal HMC sampling with mode search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a preset id.
    Run {
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        budget_seconds: Option<f64>,
        #[arg(long)]
        chains: Option<usize>,
        /// all-modes-first | on-the-fly | forced-update
        #[arg(long)]
        schedule: Option<ScheduleMode>,
    },
    /// List preset experiments.
    Presets,
    /// Re-optimize the modes of a registry file; prints the audit CSV.
    Audit {
        registry: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        grad_tol: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
    },
    /// Print every config key with its default.
    ExplainDefaults,
}

fn load(config: &str) -> Result<ExperimentConfig> {
    let path = PathBuf::from(config);
    let text = if path.exists() {
        std::fs::read_to_string(&path).with_context(|| format!("reading {config}"))?
    } else if let Some(t) = harness::preset_config(config) {
        t
    } else {
        anyhow::bail!("'{config}' is neither a file nor a preset id (see `modehop presets`)");
    };
    harness::parse_config(&text).with_context(|| format!("in {config}"))
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            budget_seconds,
            chains,
            schedule,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(b) = budget_seconds {
                anyhow::ensure!(b > 0.0 && b.is_finite(), "--budget-seconds must be positive");
                cfg.budget_seconds = Some(b);
            }
            if let Some(c) = chains {
                anyhow::ensure!(c >= 1, "--chains must be at least 1");
                cfg.chains = c;
            }
            if let Some(s) = schedule {
                cfg.schedule = s;
            }
            let report = harness::run_experiment(&cfg)?;
            print!("{}", report.summary);
            for w in &report.output.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Presets => print!("{}", harness::list_presets()),
        Command::Audit {
            registry,
            grad_tol,
            max_iter,
        } => print!("{}", harness::audit_registry_file(&registry, grad_tol, max_iter)?),
        Command::ExplainDefaults => print!("{}", harness::explain_defaults()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
