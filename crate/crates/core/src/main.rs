use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kronic::experiments::{self, ExperimentConfig, ExperimentName, ExperimentResult};
use kronic::{KronicError, Result};

#[derive(Parser)]
#[command(name = "kronic", version, about = "Koopman eigenfunction identification and control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the available experiments.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Run an experiment: `run <name> [--config FILE] [--out DIR] [--key value ...]`.
    Run {
        experiment: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OPTIONS")]
        args: Vec<String>,
    },
    /// Controller comparison table for slow-manifold case 1 or 2.
    Compare {
        case: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OPTIONS")]
        args: Vec<String>,
    },
}

struct RunArgs {
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

fn split_args(args: &[String]) -> Result<RunArgs> {
    let mut out = RunArgs {
        config: None,
        out: None,
        overrides: Vec::new(),
    };
    for (k, v) in experiments::parse_overrides(args)? {
        match k.as_str() {
            "config" => out.config = Some(v.into()),
            "out" => out.out = Some(v.into()),
            _ => out.overrides.push((k, v)),
        }
    }
    Ok(out)
}

fn resolve(name: ExperimentName, args: &[String]) -> Result<ExperimentConfig> {
    let a = split_args(args)?;
    ExperimentConfig::resolve(name, a.config.as_deref(), &a.overrides, a.out)
}

fn report(result: &ExperimentResult, dir: &std::path::Path) {
    if let Ok(table) = std::fs::read_to_string(dir.join("comparison.txt")) {
        println!("{table}");
    }
    for c in &result.checks {
        println!(
            "[{}] {:<28} {:<13} (threshold {:e})  {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.id,
            format!("{:.6e}", c.value),
            c.threshold,
            c.description
        );
    }
    if let Some(e) = &result.error {
        println!("[FAIL] stage `{}`: {}", e.stage, e.message);
    }
    println!(
        "{}: {} in {:.2} s, results in {}",
        result.name,
        if result.all_pass() { "all checks passed" } else { "checks FAILED" },
        result.wall_time_seconds,
        dir.display()
    );
}

fn parse_case(case: &str) -> Result<ExperimentName> {
    match case {
        "1" | "case1" | "slow_manifold_case1" => Ok(ExperimentName::SlowManifoldCase1),
        "2" | "case2" | "slow_manifold_case2" => Ok(ExperimentName::SlowManifoldCase2),
        other => Err(KronicError::InvalidConfig(format!(
            "unknown comparison case `{other}` (expected case1 or case2)"
        ))),
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::List { json } => {
            let list = experiments::list_experiments();
            if json {
                println!("{}", serde_json::to_string_pretty(&list)?);
            } else {
                for e in list {
                    println!("{:<22} [{}] {}", e.name, e.topic, e.description);
                }
            }
            Ok(true)
        }
        Command::Run { experiment, args } => {
            let cfg = resolve(experiment.parse()?, &args)?;
            let result = experiments::run(&cfg)?;
            report(&result, &cfg.output_dir);
            Ok(result.all_pass())
        }
        Command::Compare { case, args } => {
            let name = parse_case(&case)?;
            let mut cfg = resolve(name, &args)?;
            if !args.iter().any(|a| a == "--out" || a.starts_with("--out=")) {
                cfg.output_dir = PathBuf::from(format!("results/compare_{}", name.as_str()));
            }
            let result = experiments::run_comparison(&cfg)?;
            report(&result, &cfg.output_dir);
            Ok(result.all_pass())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
