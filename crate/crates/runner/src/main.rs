//! `step`: run simulation plans, regenerate reports, manage the cache,
//! pre-compute perturbations, and test plugins.
//!
//! Exit codes: 0 success, 2 config error, 3 partial failures.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use step_runner::{RunnerError, Status};

#[derive(Parser)]
#[command(name = "step", version, about = "Trajectory-prediction benchmarking pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a simulation plan end to end.
    Run {
        /// Path to the simulation file (TOML).
        plan: PathBuf,
    },
    /// Regenerate report files from a result store.
    Report {
        /// Path to results.ndjson.
        store: PathBuf,
        /// Directory for the report files (default: the store's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Perturbation-only pre-pass: build every perturbed corpus a plan
    /// needs, training attack targets along the way.
    Attack {
        /// Path to the simulation file (TOML).
        plan: PathBuf,
    },
    /// Run the plugin conformance suite against a command.
    PluginTest {
        /// Command line that starts the plugin.
        command: Vec<String>,
        /// Per-call timeout in seconds.
        #[arg(long, default_value_t = 60.0)]
        timeout_secs: f64,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Check every entry's integrity digest.
    Verify { cache_dir: PathBuf },
    /// Remove entries (all of them, or only those older than the given age).
    Gc {
        cache_dir: PathBuf,
        #[arg(long)]
        older_than_days: Option<f64>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e @ RunnerError::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn run() -> Result<ExitCode, RunnerError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { plan } => {
            let plan = step_runner::parse_simulation_file(&plan)?;
            let summary = step_runner::run_plan(&plan)?;
            for record in &summary.records {
                let status = match &record.status {
                    Status::Computed => "computed".to_string(),
                    Status::Cached => "cached".to_string(),
                    Status::Skipped { reason } => format!("skipped({reason})"),
                    Status::Failed { error } => format!("failed({error})"),
                };
                let value = record
                    .metric
                    .as_ref()
                    .map(|m| format!("{:.6}", m.value))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{status:<24} {} {} {} seed={} source={} {}={}",
                    record.case.split_id,
                    record.case.model_id,
                    record.case.metric,
                    record.case.seed,
                    record.case.source.as_str(),
                    record.case.metric,
                    value
                );
            }
            println!(
                "done: {} computed, {} cached, {} skipped, {} failed -> {}",
                summary.computed,
                summary.cached,
                summary.skipped,
                summary.failed,
                plan.output_dir.display()
            );
            Ok(if summary.failed > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
        }
        Command::Report { store, out } => {
            let records = step_runner::read_store(&store)?;
            if records.is_empty() {
                return Err(RunnerError::EmptyStore);
            }
            let out = out.unwrap_or_else(|| {
                store.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
            });
            step_runner::emit_report(&records, &out)?;
            println!("report written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Cache { action } => match action {
            CacheAction::Verify { cache_dir } => {
                let cache = step_runner::Cache::open(&cache_dir)?;
                let (ok, corrupt) = cache.verify()?;
                println!("{} entries ok, {} corrupt", ok.len(), corrupt.len());
                for path in &corrupt {
                    println!("corrupt: {}", path.display());
                }
                Ok(if corrupt.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(3) })
            }
            CacheAction::Gc { cache_dir, older_than_days } => {
                let cache = step_runner::Cache::open(&cache_dir)?;
                let age = older_than_days
                    .map(|d| std::time::Duration::from_secs_f64(d * 86_400.0));
                let (count, bytes) = cache.gc(age)?;
                println!("removed {count} entries ({bytes} bytes)");
                Ok(ExitCode::SUCCESS)
            }
        },
        Command::Attack { plan } => {
            let plan = step_runner::parse_simulation_file(&plan)?;
            let built = step_runner::run_attack_pass(&plan)?;
            println!("materialized {built} perturbed corpora -> {}", plan.cache_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::PluginTest { command, timeout_secs } => {
            if command.is_empty() {
                return Err(RunnerError::config("plugin-test", "a command is required"));
            }
            let command = command.join(" ");
            let report = step_core::model::plugin::run_conformance(
                &command,
                std::time::Duration::from_secs_f64(timeout_secs),
            );
            print!("{}", report.render_text());
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
    }
}
