//! Flat `key = value` experiment configuration with typed defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{KronicError, Result};

use super::ExperimentName;

/// Declared type of a configuration value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Float,
    Int,
    /// Comma-separated floats.
    Vector,
    /// One of a fixed set of words.
    Choice(&'static [&'static str]),
}

/// A configuration key with its default and a one-line description.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(key: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind,
        default,
        help,
    }
}

const NULLSPACE_KEYS: [KeySpec; 4] = [
    key("svd_tol", Kind::Float, "1e-8", "relative singular-value threshold of the null space"),
    key("sparse_tol", Kind::Float, "0.05", "relative coefficient threshold for sparsification"),
    key("max_iter", Kind::Int, "20", "maximum sparsification passes"),
    key("validation_threshold", Kind::Float, "1e-4", "maximum linearity error of accepted models"),
];

const A_PSI: &[&str] = &["cot", "atan"];

/// Keys accepted by an experiment (common keys first).
pub fn key_specs(name: ExperimentName) -> Vec<KeySpec> {
    use ExperimentName::*;
    let mut keys = vec![
        key("dt", Kind::Float, "0.001", "integration step"),
        key("seed", Kind::Int, "0", "random seed (ensemble jitter only)"),
    ];
    let specific: Vec<KeySpec> = match name {
        SlowManifoldCase1 => vec![
            key("mu", Kind::Float, "-0.1", "slow eigenvalue"),
            key("lambda", Kind::Float, "1", "fast eigenvalue"),
            key("x0", Kind::Vector, "1,1", "initial state of the controlled runs"),
            key("horizon", Kind::Float, "50", "control horizon"),
            key("q", Kind::Float, "1", "state weight (Q = q I)"),
            key("r", Kind::Float, "1", "input weight"),
            key("id_horizon", Kind::Float, "2", "length of each identification trajectory"),
            key("degree", Kind::Int, "2", "monomial library degree"),
            key("holdout_x0", Kind::Vector, "-0.5,0.3", "initial state of the validation trajectory"),
        ],
        SlowManifoldCase2 => vec![
            key("mu", Kind::Float, "0.1", "slow eigenvalue"),
            key("lambda", Kind::Float, "-1", "fast eigenvalue"),
            key("x0", Kind::Vector, "1,1", "initial state of the controlled runs"),
            key("horizon", Kind::Float, "50", "control horizon"),
            key("q", Kind::Float, "1", "state weight (Q = q I)"),
            key("r", Kind::Float, "1", "input weight in state coordinates"),
            key("r_phi", Kind::Float, "4", "input weight in eigenfunction coordinates"),
            key("stab_tol", Kind::Float, "1e-3", "required ‖x(T)‖ of the SDRE run"),
        ],
        PendulumEnergy => vec![
            key("targets", Kind::Vector, "-1,0,1,2", "reference energy levels"),
            key("x0", Kind::Vector, "1,0", "initial state for non-minimal targets"),
            key("x0_low", Kind::Vector, "2,0", "initial state for the minimum-energy target"),
            key("horizon", Kind::Float, "20", "control horizon"),
            key("q", Kind::Float, "1", "energy weight"),
            key("r", Kind::Float, "1", "input weight"),
            key("tol", Kind::Float, "1e-3", "terminal energy tolerance"),
            key("monotone_slack", Kind::Float, "1e-9", "allowed increase of the squared energy error per sample"),
            key("id_horizon", Kind::Float, "10", "length of each identification trajectory"),
            key("degree", Kind::Int, "4", "monomial library degree"),
            key("svd_tol", Kind::Float, "1e-8", "relative singular-value threshold of the null space"),
            key("sparse_tol", Kind::Float, "0.05", "relative coefficient threshold for sparsification"),
        ],
        DuffingIdentify => vec![
            key("x0", Kind::Vector, "0,-2.8", "initial state of the identification trajectory"),
            key("horizon", Kind::Float, "10", "trajectory length"),
            key("degree", Kind::Int, "4", "monomial library degree"),
            key("coarse_dt", Kind::Float, "0.05", "sampling step of the coarse dataset"),
            key("coarse_samples", Kind::Int, "56", "samples used from the coarse dataset"),
            key("holdout_x0", Kind::Vector, "0.5,0.5", "initial state of the validation trajectory"),
            key("sweep_sizes", Kind::Vector, "10,20,56,100,250,500,1000,1792,2500,5000,10001", "sample counts for the measurement sweep"),
            key("coef_tol", Kind::Float, "1e-6", "coefficient tolerance after scale alignment"),
            key("residual_tol", Kind::Float, "1e-7", "equation residual tolerance"),
            key("coarse_residual_tol", Kind::Float, "1e-5", "equation residual tolerance of the coarse dataset"),
        ],
        DuffingControl => vec![
            key("x0", Kind::Vector, "0,-2.8", "initial state (identification and control)"),
            key("horizon", Kind::Float, "10", "control horizon"),
            key("degree", Kind::Int, "4", "monomial library degree"),
            key("id_samples", Kind::Int, "1792", "samples used for identification"),
            key("target", Kind::Float, "0", "reference energy level"),
            key("q", Kind::Float, "1", "energy weight"),
            key("r", Kind::Float, "1", "input weight"),
            key("tol", Kind::Float, "1e-2", "terminal energy tolerance"),
            key("sweep_sizes", Kind::Vector, "10,20,56,100,500,1792,5000,10001", "sample counts for the control-performance sweep"),
        ],
        DoubleWellHop => vec![
            key("a", Kind::Float, "-0.25", "asymmetry parameter (saddle position)"),
            key("x0", Kind::Vector, "-1.2,0", "first left-well initial state"),
            key("x0_alt", Kind::Vector, "-0.7,0.2", "second left-well initial state"),
            key("horizon", Kind::Float, "40", "control horizon"),
            key("q", Kind::Float, "25", "energy weight"),
            key("r", Kind::Float, "1", "input weight (R = r I)"),
            key("delta", Kind::Float, "1e-3", "energy offset above the saddle level"),
            key("band", Kind::Float, "1e-3", "coast band around the offset level"),
            key("tol", Kind::Float, "1e-3", "terminal energy tolerance"),
            key("id_horizon", Kind::Float, "10", "length of each identification trajectory"),
            key("degree", Kind::Int, "4", "monomial library degree"),
            key("svd_tol", Kind::Float, "1e-8", "relative singular-value threshold of the null space"),
            key("sparse_tol", Kind::Float, "0.05", "relative coefficient threshold for sparsification"),
        ],
        GyreAutonomous => vec![
            key("amplitude", Kind::Float, "0.25", "stream-function amplitude"),
            key("omega", Kind::Float, "6.283185307179586", "forcing frequency"),
            key("epsilon", Kind::Float, "0", "time-periodic perturbation"),
            key("psi_ref", Kind::Float, "0.2", "target stream-function level"),
            key("q", Kind::Float, "1", "tracking weight"),
            key("r", Kind::Float, "1", "input weight (R = r I)"),
            key("ensemble_size", Kind::Int, "100", "number of drifters (rounded to a k x k grid)"),
            key("jitter", Kind::Float, "0", "uniform random perturbation of the grid points"),
            key("horizon", Kind::Float, "10", "control horizon"),
            key("tol", Kind::Float, "1e-3", "terminal |Ψ − Ψ_ref| tolerance"),
            key("min_success", Kind::Int, "99", "drifters required within tolerance"),
            key("max_runtime", Kind::Float, "60", "wall-time budget in seconds"),
            key("a_psi", Kind::Choice(A_PSI), "cot", "model of ∂Ψ/∂t (cot or atan)"),
        ],
        GyreNonautonomous => vec![
            key("amplitude", Kind::Float, "0.25", "stream-function amplitude"),
            key("omega", Kind::Float, "6.283185307179586", "forcing frequency"),
            key("epsilon", Kind::Float, "0.25", "time-periodic perturbation"),
            key("psi_ref", Kind::Float, "0.2", "target stream-function level"),
            key("q", Kind::Float, "1", "tracking weight"),
            key("r", Kind::Float, "1", "input weight (R = r I)"),
            key("x0", Kind::Vector, "0.5,0.2951672353008665", "drifter initial state (on Ψ = 0.2 at t = 0)"),
            key("horizon", Kind::Float, "10", "control horizon"),
            key("window_start", Kind::Float, "5", "start of the evaluation window"),
            key("band", Kind::Float, "0.05", "allowed |Ψ − Ψ_ref| in the evaluation window"),
            key("min_excursion", Kind::Float, "0.1", "required unforced excursion"),
            key("a_psi", Kind::Choice(A_PSI), "cot", "model of ∂Ψ/∂t (cot or atan)"),
        ],
    };
    keys.extend(specific);
    if matches!(name, SlowManifoldCase1 | DuffingIdentify | DuffingControl) {
        keys.extend(NULLSPACE_KEYS);
    }
    keys
}

fn validate(spec: &KeySpec, value: &str) -> Result<()> {
    let bad = |what: &str| {
        KronicError::InvalidConfig(format!("`{}` expects {what}, got `{value}`", spec.key))
    };
    match spec.kind {
        Kind::Float => value.trim().parse::<f64>().map(|_| ()).map_err(|_| bad("a number")),
        Kind::Int => value.trim().parse::<usize>().map(|_| ()).map_err(|_| bad("a non-negative integer")),
        Kind::Vector => parse_vector(value).map(|_| ()).map_err(|_| bad("comma-separated numbers")),
        Kind::Choice(options) => {
            if options.contains(&value.trim()) {
                Ok(())
            } else {
                Err(bad(&format!("one of {}", options.join("|"))))
            }
        }
    }
}

fn parse_vector(value: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect()
}

/// Resolved configuration: defaults overlaid by a config file, then by CLI overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    pub values: BTreeMap<String, String>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentName) -> Self {
        let values = key_specs(experiment)
            .into_iter()
            .map(|s| (s.key.to_string(), s.default.to_string()))
            .collect();
        Self {
            experiment,
            values,
            output_dir: PathBuf::from("results").join(experiment.as_str()),
        }
    }

    pub fn valid_keys(&self) -> Vec<String> {
        key_specs(self.experiment).iter().map(|s| s.key.to_string()).collect()
    }

    /// Set a key, rejecting unknown keys and values of the wrong type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let specs = key_specs(self.experiment);
        let spec = specs.iter().find(|s| s.key == key).ok_or_else(|| KronicError::UnknownKey {
            key: key.to_string(),
            valid: self.valid_keys(),
        })?;
        validate(spec, value)?;
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Apply a flat `key = value` document; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                KronicError::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    /// Build with precedence CLI overrides > file > defaults.
    pub fn resolve(
        experiment: ExperimentName,
        file: Option<&Path>,
        overrides: &[(String, String)],
        output_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let mut cfg = Self::new(experiment);
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        if let Some(dir) = output_dir {
            cfg.output_dir = dir;
        }
        Ok(cfg)
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("configuration key `{key}` is not declared for {}", self.experiment.as_str()))
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.raw(key).parse().expect("validated on insertion")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.raw(key).parse().expect("validated on insertion")
    }

    pub fn vector(&self, key: &str) -> Vec<f64> {
        parse_vector(self.raw(key)).expect("validated on insertion")
    }

    pub fn text(&self, key: &str) -> &str {
        self.raw(key)
    }

    /// Fixed-length vector (e.g. an initial state).
    pub fn vector_n(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let v = self.vector(key);
        if v.len() != n {
            return Err(KronicError::InvalidConfig(format!(
                "`{key}` needs {n} entries, got {}",
                v.len()
            )));
        }
        Ok(v)
    }
}
