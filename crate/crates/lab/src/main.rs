use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use d2dce_core::verify::{verify_gradients, verify_properties, Check, Fault, Hooks};
use d2dce_lab::config::{resolve, ConfigFile, Experiment};
use d2dce_lab::error::{LabError, Result};
use d2dce_lab::{report, runner};

#[derive(Parser)]
#[command(
    name = "d2dce",
    about = "Gradient checks and toy experiments for the D2D-CE loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check loss gradients and loss properties on random instances.
    Verify {
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Swap in a deliberately wrong gradient to exercise the checks.
        #[arg(long, hide = true, value_parser = parse_fault)]
        inject_fault: Option<Fault>,
    },
    /// Train one experiment and write its report files.
    Run {
        #[arg(value_enum)]
        experiment: ExperimentArg,
        #[arg(long)]
        config: PathBuf,
        /// `key=value` pairs applied after the config file; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE", num_args = 1..)]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Gradients,
    Properties,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Mog,
    Instability,
    Ablation,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Mog => Experiment::Mog,
            ExperimentArg::Instability => Experiment::Instability,
            ExperimentArg::Ablation => Experiment::Ablation,
        }
    }
}

fn parse_fault(s: &str) -> std::result::Result<Fault, String> {
    Fault::ALL
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| format!("unknown fault `{s}`"))
}

fn print_check(c: &Check) {
    let status = if c.passed { "PASS" } else { "FAIL" };
    println!(
        "{status} {:<42} worst {:.3e} (limit {:.1e}) over {} comparisons{}",
        c.name,
        c.worst,
        c.limit,
        c.comparisons,
        if c.detail.is_empty() {
            String::new()
        } else {
            format!("; {}", c.detail)
        }
    );
}

fn verify(suite: Suite, seed: u64, fault: Option<Fault>) -> bool {
    let hooks = fault.map_or_else(Hooks::default, Fault::hooks);
    if let Some(f) = fault {
        println!("injected fault: {}", f.name());
    }
    let mut checks = Vec::new();
    if matches!(suite, Suite::Gradients | Suite::All) {
        checks.extend(verify_gradients(&hooks, seed));
    }
    if matches!(suite, Suite::Properties | Suite::All) {
        checks.extend(verify_properties(&hooks, seed));
    }
    checks.iter().for_each(print_check);
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    failed == 0
}

fn run(
    experiment: Experiment,
    config: PathBuf,
    overrides: Vec<String>,
    out: PathBuf,
) -> Result<()> {
    let text = std::fs::read_to_string(&config).map_err(|source| LabError::Io {
        path: config.clone(),
        source,
    })?;
    let mut file = ConfigFile::parse(&text, &config.display().to_string())?;
    for o in &overrides {
        file.push_override(o)?;
        println!("override: {o}");
    }
    let resolved = resolve(experiment, &file)?;
    let plan = resolved.plan()?;
    let threads = runner::thread_count();
    println!(
        "{experiment}: {} run(s) on {threads} thread(s)",
        plan.cells.len()
    );
    let start = Instant::now();
    let rep = runner::run_parallel(&plan, threads)?;
    report::write_all(&out, &resolved, &rep, start.elapsed())?;
    print!("{}", report::summary_text(&resolved, &rep, start.elapsed()));
    for cell in rep.cells.iter().filter(|c| c.diverged.is_some()) {
        println!(
            "warning: {} seed {} diverged: {}",
            cell.label,
            cell.seed,
            cell.diverged.as_deref().unwrap_or("")
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Verify {
            suite,
            seed,
            inject_fault,
        } => {
            if verify(suite, seed, inject_fault) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Run {
            experiment,
            config,
            overrides,
            out,
        } => match run(experiment.into(), config, overrides, out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Version => {
            println!("d2dce {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}
