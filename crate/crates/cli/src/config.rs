//! Experiment configuration: one JSON document plus command-line overrides.
//!
//! Rates are events per unit time, loads are dimensionless, and the ES rate
//! of an `n`-device system is `n * mu3`.

use std::path::PathBuf;

use clap::ValueEnum;
use mec_aoi::des::SimConfig;
use mec_aoi::mec::{DeviceParams, EsEnvironment, Policy};
use mec_aoi::mfe::{AlgoConfig, TypeSet};
use mec_aoi::optimize::OptConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Closed-form and chain-solver age side by side.
    Aoi,
    /// Discrete-event simulation estimate.
    Simulate,
    /// Mean-field equilibrium and its iteration log.
    Mfe,
    /// Best-response dynamics in the finite game.
    Nash,
    /// One output row per value of a swept parameter.
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Rho,
    Mu3,
    Lambda,
    Eta,
    V,
    PMax,
    FMax,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Rho => "rho",
            SweepParameter::Mu3 => "mu3",
            SweepParameter::Lambda => "lambda",
            SweepParameter::Eta => "eta",
            SweepParameter::V => "v",
            SweepParameter::PMax => "p_max",
            SweepParameter::FMax => "f_max",
        }
    }
}

/// What is computed at each sweep point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSolve {
    /// Optimal policy against the configured load.
    #[default]
    BestResponse,
    /// Full mean-field equilibrium.
    Mfe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default)]
    pub solve: SweepSolve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NashConfig {
    pub max_sweeps: usize,
    /// Population sizes at which the exploitability of the mean-field policy is reported.
    pub exploitability_n: Vec<usize>,
}

impl Default for NashConfig {
    fn default() -> Self {
        NashConfig {
            max_sweeps: 100,
            exploitability_n: Vec::new(),
        }
    }
}

fn default_mu3() -> f64 {
    1.0
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub types: Vec<DeviceParams>,
    /// Type probabilities; uniform when omitted.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_mu3")]
    pub mu3: f64,
    /// Number of devices for finite-population modes.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub policy: Option<Policy>,
    /// Mean ES load seen by a generic device.
    #[serde(default)]
    pub rho: f64,
    /// Explicit exogenous and ES rates for single-device runs.
    #[serde(default)]
    pub environment: Option<EsEnvironment>,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default)]
    pub algo: AlgoConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub nash: NashConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Also write the event trace of replication 0 when simulating one device.
    #[serde(default)]
    pub trace: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    /// `key=value` pairs; keys are dotted paths, values are JSON (bare strings allowed).
    pub set: Vec<String>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Sets `path` (dot separated; numeric segments index arrays) inside `root`.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(invalid(format!("malformed override key {path:?}")));
    }
    let mut node = root;
    for (depth, segment) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        node = match node {
            Value::Array(items) => {
                let index: usize = segment
                    .parse()
                    .map_err(|_| invalid(format!("{path}: {segment:?} is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(index)
                    .ok_or_else(|| invalid(format!("{path}: index {index} out of range for {len} items")))?
            }
            Value::Object(map) => {
                let fill = if last {
                    Value::Null
                } else {
                    Value::Object(Default::default())
                };
                let entry = map.entry(segment.to_string()).or_insert(fill);
                if entry.is_null() && !last {
                    *entry = Value::Object(Default::default());
                }
                entry
            }
            _ => return Err(invalid(format!("{path}: {segment:?} is below a scalar value"))),
        };
    }
    *node = value;
    Ok(())
}

fn parse_assignment(text: &str) -> Result<(&str, Value), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {text:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim(), value))
}

impl ExperimentConfig {
    /// Parses `text`, applies `overrides`, and checks what the mode needs.
    pub fn resolve(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let mut root: Value =
            serde_json::from_str(text).map_err(|e| invalid(format!("config is not valid JSON: {e}")))?;
        if !root.is_object() {
            return Err(invalid("config must be a JSON object"));
        }
        for assignment in &overrides.set {
            let (key, value) = parse_assignment(assignment)?;
            set_path(&mut root, key, value)?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(root).map_err(|e| invalid(format!("config: {e}")))?;
        if let Some(mode) = overrides.mode {
            cfg.mode = Some(mode);
        }
        if let Some(output) = &overrides.output {
            cfg.output = output.clone();
        }
        if let Some(seed) = overrides.seed {
            cfg.sim.master_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mode(&self) -> Mode {
        self.mode.expect("validated config has a mode")
    }

    pub fn type_set(&self) -> Result<TypeSet, CliError> {
        let weights = match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.types.len() as f64; self.types.len()],
        };
        TypeSet::new(self.types.clone(), weights).map_err(|e| invalid(e.to_string()))
    }

    fn require_policy(&self) -> Result<Policy, CliError> {
        let policy = self.policy.ok_or_else(|| invalid("this mode needs a policy"))?;
        let ok = (0.0..=1.0).contains(&policy.p_local)
            && policy.mu_local > 0.0
            && policy.mu_tx > 0.0
            && policy.mu_local.is_finite()
            && policy.mu_tx.is_finite();
        if ok {
            Ok(policy)
        } else {
            Err(invalid(format!("invalid policy {policy:?}")))
        }
    }

    fn require_n(&self) -> Result<usize, CliError> {
        match self.n {
            Some(n) if n >= 1 => Ok(n),
            Some(_) => Err(invalid("n must be at least 1")),
            None => Err(invalid("this mode needs n")),
        }
    }

    fn require_single_type(&self) -> Result<(), CliError> {
        if self.types.len() == 1 {
            Ok(())
        } else {
            Err(invalid(format!(
                "this mode needs exactly one type, got {}",
                self.types.len()
            )))
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mode = self.mode.ok_or_else(|| invalid("no mode given"))?;
        if self.types.is_empty() {
            return Err(invalid("types must not be empty"));
        }
        self.type_set()?;
        if !(self.mu3 > 0.0) || !self.mu3.is_finite() {
            return Err(invalid(format!("mu3 must be positive, got {}", self.mu3)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(invalid(format!("rho must be nonnegative, got {}", self.rho)));
        }
        if let Some(env) = &self.environment {
            if !(env.exo_rate >= 0.0) || !(env.es_rate > 0.0) {
                return Err(invalid(format!("invalid environment {env:?}")));
            }
        }
        self.opt.validate().map_err(invalid)?;
        self.algo.validate().map_err(|e| invalid(e.to_string()))?;
        self.sim.validate().map_err(|e| invalid(e.to_string()))?;

        match mode {
            Mode::Aoi => {
                self.require_policy()?;
            }
            Mode::Simulate => {
                self.require_policy()?;
                match self.n {
                    Some(_) => {
                        self.require_n()?;
                    }
                    None => {
                        self.require_single_type()?;
                        if self.environment.is_none() {
                            return Err(invalid("single-device simulation needs an environment (or set n)"));
                        }
                    }
                }
            }
            Mode::Mfe => {}
            Mode::Nash => {
                self.require_n()?;
                if self.policy.is_some() {
                    self.require_policy()?;
                }
                if self.nash.max_sweeps == 0 {
                    return Err(invalid("nash.max_sweeps must be positive"));
                }
                if self.nash.exploitability_n.contains(&0) {
                    return Err(invalid("exploitability sizes must be positive"));
                }
            }
            Mode::Sweep => {
                let sweep = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| invalid("sweep mode needs a sweep section"))?;
                self.require_single_type()?;
                if sweep.values.is_empty() {
                    return Err(invalid("sweep.values must not be empty"));
                }
                if sweep.parameter == SweepParameter::Rho && sweep.solve == SweepSolve::Mfe {
                    return Err(invalid(
                        "rho is an output of the equilibrium and cannot be swept with solve=mfe",
                    ));
                }
                if sweep.parameter == SweepParameter::Mu3 && sweep.solve == SweepSolve::BestResponse {
                    return Err(invalid("mu3 does not enter a best response; sweep it with solve=mfe"));
                }
                for &value in &sweep.values {
                    self.with_sweep_value(sweep.parameter, value)?;
                }
            }
        }
        Ok(())
    }

    /// Copy of the configuration with one parameter replaced.
    pub fn with_sweep_value(&self, parameter: SweepParameter, value: f64) -> Result<Self, CliError> {
        let mut cfg = self.clone();
        let device = &mut cfg.types[0];
        match parameter {
            SweepParameter::Rho => cfg.rho = value,
            SweepParameter::Mu3 => cfg.mu3 = value,
            SweepParameter::Lambda => device.lambda = value,
            SweepParameter::Eta => device.eta = value,
            SweepParameter::V => device.freshness_weight = value,
            SweepParameter::PMax => device.p_max = value,
            SweepParameter::FMax => device.f_max = value,
        }
        let bad_scalar = !value.is_finite()
            || match parameter {
                SweepParameter::Rho | SweepParameter::V => value < 0.0,
                _ => value <= 0.0,
            };
        if bad_scalar {
            return Err(invalid(format!(
                "sweep value {value} is out of range for {}",
                parameter.name()
            )));
        }
        cfg.types[0].validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }
}
