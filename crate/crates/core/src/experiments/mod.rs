//! Experiment runner: wires systems, identification and control into the
//! benchmark studies and writes CSV/JSON results plus a summary with checks.

pub mod config;
mod gyre;
mod hamiltonian;
mod slow_manifold;

pub use config::{key_specs, ExperimentConfig, KeySpec, Kind};
pub use gyre::{gyre_grid, GyreEnsembleOutcome};
pub use slow_manifold::{
    compare_controllers, slow_manifold_kronic_system, slow_manifold_reduced_system, Comparison,
    ComparisonRow, RowStatus,
};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{KronicError, Result};
use crate::systems::{fmt17, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentName {
    SlowManifoldCase1,
    SlowManifoldCase2,
    PendulumEnergy,
    DuffingIdentify,
    DuffingControl,
    DoubleWellHop,
    GyreAutonomous,
    GyreNonautonomous,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 8] = [
        ExperimentName::SlowManifoldCase1,
        ExperimentName::SlowManifoldCase2,
        ExperimentName::PendulumEnergy,
        ExperimentName::DuffingIdentify,
        ExperimentName::DuffingControl,
        ExperimentName::DoubleWellHop,
        ExperimentName::GyreAutonomous,
        ExperimentName::GyreNonautonomous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SlowManifoldCase1 => "slow_manifold_case1",
            Self::SlowManifoldCase2 => "slow_manifold_case2",
            Self::PendulumEnergy => "pendulum_energy",
            Self::DuffingIdentify => "duffing_identify",
            Self::DuffingControl => "duffing_control",
            Self::DoubleWellHop => "double_well_hop",
            Self::GyreAutonomous => "gyre_autonomous",
            Self::GyreNonautonomous => "gyre_nonautonomous",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::SlowManifoldCase1 => "identify slow-manifold eigenfunctions and compare LQR, KRONIC and feedback linearization (input on x2)",
            Self::SlowManifoldCase2 => "detect the unstabilizable embedding and stabilize the reduced system by SDRE (input on x1)",
            Self::PendulumEnergy => "identify the pendulum Hamiltonian and steer to energy levels -1, 0, 1, 2",
            Self::DuffingIdentify => "recover the Duffing Hamiltonian by sparse null-space regression; sample-count sweep",
            Self::DuffingControl => "steer the Duffing oscillator to the separatrix using the identified eigenfunction",
            Self::DoubleWellHop => "switching energy control that hops from the left to the right well",
            Self::GyreAutonomous => "steer an ensemble of drifters to a stream-function level in the steady double gyre",
            Self::GyreNonautonomous => "track a stream-function level in the time-periodic double gyre",
        }
    }

    /// Study the experiment belongs to.
    pub fn topic(self) -> &'static str {
        match self {
            Self::SlowManifoldCase1 | Self::SlowManifoldCase2 => "slow manifold: eigenfunction LQR/SDRE",
            Self::PendulumEnergy => "Hamiltonian energy control: pendulum",
            Self::DuffingIdentify | Self::DuffingControl => "Hamiltonian energy control: Duffing oscillator",
            Self::DoubleWellHop => "basin hopping in a double-well potential",
            Self::GyreAutonomous | Self::GyreNonautonomous => "double-gyre drifter control",
        }
    }
}

impl std::str::FromStr for ExperimentName {
    type Err = KronicError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                KronicError::InvalidConfig(format!(
                    "unknown experiment `{s}`; available: {}",
                    Self::ALL.map(|e| e.as_str()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentInfo {
    pub name: String,
    pub description: String,
    pub topic: String,
}

pub fn list_experiments() -> Vec<ExperimentInfo> {
    ExperimentName::ALL
        .iter()
        .map(|e| ExperimentInfo {
            name: e.as_str().into(),
            description: e.description().into(),
            topic: e.topic().into(),
        })
        .collect()
}

/// One pass/fail check recorded by an experiment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Check {
    pub id: String,
    pub description: String,
    #[serde(deserialize_with = "nullable_f64")]
    pub value: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub threshold: f64,
    pub pass: bool,
}

// Non-finite values serialize as `null`; read them back as NaN.
fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

/// Summary written to `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub config: BTreeMap<String, String>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageError>,
}

impl ExperimentResult {
    pub fn all_pass(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Mutable state of a running experiment: output directory, manifest, checks.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    dir: PathBuf,
    files: Vec<String>,
    checks: Vec<Check>,
    stage: String,
}

impl<'a> RunContext<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self {
            cfg,
            dir: cfg.output_dir.clone(),
            files: Vec::new(),
            checks: Vec::new(),
            stage: "setup".into(),
        })
    }

    pub fn stage(&mut self, name: &str) {
        log::info!("{}: {name}", self.cfg.experiment.as_str());
        self.stage = name.to_string();
    }

    /// Record a check; `pass` is computed by the caller so that both `<` and `>` bounds fit.
    pub fn check(&mut self, id: &str, description: &str, value: f64, threshold: f64, pass: bool) {
        log::info!(
            "check {id}: value {value:e} threshold {threshold:e} -> {}",
            if pass { "pass" } else { "FAIL" }
        );
        self.checks.push(Check {
            id: id.into(),
            description: description.into(),
            value,
            threshold,
            pass,
        });
    }

    pub fn check_below(&mut self, id: &str, description: &str, value: f64, threshold: f64) {
        self.check(id, description, value, threshold, value < threshold);
    }

    fn register(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_trajectory(&mut self, name: &str, traj: &Trajectory) -> Result<()> {
        let path = self.register(name);
        traj.write_csv(BufWriter::new(File::create(path)?))
    }

    pub fn write_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.register(name);
        write_table(&path, header, rows)
    }

    pub fn write_numeric_table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let rows: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|&v| fmt17(v)).collect()).collect();
        self.write_table(name, header, &rows)
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let path = self.register(name);
        std::fs::write(path, serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    pub fn path_for(&mut self, name: &str) -> PathBuf {
        self.register(name)
    }
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and string cells of a CSV table; every row must match the header width.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Run an experiment; stage failures are captured into the summary rather than returned.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_with(cfg, |ctx| match ctx.cfg.experiment {
        ExperimentName::SlowManifoldCase1 => slow_manifold::run_case1(ctx),
        ExperimentName::SlowManifoldCase2 => slow_manifold::run_case2(ctx),
        ExperimentName::PendulumEnergy => hamiltonian::run_pendulum(ctx),
        ExperimentName::DuffingIdentify => hamiltonian::run_duffing_identify(ctx),
        ExperimentName::DuffingControl => hamiltonian::run_duffing_control(ctx),
        ExperimentName::DoubleWellHop => hamiltonian::run_double_well(ctx),
        ExperimentName::GyreAutonomous => gyre::run_autonomous(ctx),
        ExperimentName::GyreNonautonomous => gyre::run_nonautonomous(ctx),
    })
}

/// Controller comparison only (no identification stage) for the slow-manifold cases.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.experiment {
        ExperimentName::SlowManifoldCase1 => run_with(cfg, slow_manifold::case1_control),
        ExperimentName::SlowManifoldCase2 => run_with(cfg, slow_manifold::run_case2),
        other => Err(KronicError::InvalidConfig(format!(
            "`{}` has no controller comparison (use slow_manifold_case1 or slow_manifold_case2)",
            other.as_str()
        ))),
    }
}

fn run_with(cfg: &ExperimentConfig, body: impl FnOnce(&mut RunContext<'_>) -> Result<()>) -> Result<ExperimentResult> {
    let start = Instant::now();
    let mut ctx = RunContext::new(cfg)?;
    let outcome = body(&mut ctx);
    let error = outcome.err().map(|e| {
        log::error!("{} failed in stage `{}`: {e}", cfg.experiment.as_str(), ctx.stage);
        StageError {
            stage: ctx.stage.clone(),
            message: e.to_string(),
        }
    });
    let result = ExperimentResult {
        name: cfg.experiment.as_str().into(),
        config: cfg.values.clone(),
        checks: ctx.checks,
        files: ctx.files,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        error,
    };
    std::fs::write(
        cfg.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    Ok(result)
}

/// Parse `--key value` / `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let Some(stripped) = a.strip_prefix("--") else {
            return Err(KronicError::InvalidConfig(format!("expected `--key value`, got `{a}`")));
        };
        if let Some((k, v)) = stripped.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else {
            let v = args.get(i + 1).ok_or_else(|| {
                KronicError::InvalidConfig(format!("missing value for `--{stripped}`"))
            })?;
            out.push((stripped.to_string(), v.clone()));
            i += 2;
        }
    }
    Ok(out)
}
