//! Mean-field equilibrium of the offloading game.
//!
//! For a fixed ES load `rho` each device type picks the policy minimizing its
//! mean-field cost. The policies regenerate a load through the consistency
//! map, and the equilibrium is a fixed point of the composition. It is found
//! by damped iteration
//! `rho_k = (1 - gamma) * rho_{k-1} + gamma * T(rho_{k-1})`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mec::{self, DeviceParams, Policy};
use crate::optimize::{minimize_box, OptConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeSet {
    pub types: Vec<DeviceParams>,
    /// Population share of each type.
    pub weights: Vec<f64>,
}

impl TypeSet {
    pub fn new(types: Vec<DeviceParams>, weights: Vec<f64>) -> Result<Self> {
        let set = TypeSet { types, weights };
        set.validate()?;
        Ok(set)
    }

    pub fn single(params: DeviceParams) -> Self {
        TypeSet {
            types: vec![params],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() || self.types.len() != self.weights.len() {
            return Err(Error::InvalidParams(format!(
                "{} types with {} weights",
                self.types.len(),
                self.weights.len()
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "type weights must be nonnegative and sum to 1, got {:?}",
                self.weights
            )));
        }
        self.types.iter().try_for_each(DeviceParams::validate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoConfig {
    /// Damping step in (0, 1].
    pub gamma: f64,
    /// Stop once successive loads differ by less than this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub initial_rho: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            gamma: 0.5,
            epsilon: 1e-6,
            max_iters: 500,
            initial_rho: 0.0,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.gamma <= 1.0
            && self.epsilon > 0.0
            && self.max_iters > 0
            && self.initial_rho >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid iteration config {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub rho: f64,
    pub residual: f64,
    pub policies: Vec<Policy>,
    /// Mean-field cost of each type's policy at the load it responded to.
    pub costs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfEquilibrium {
    pub policies: Vec<Policy>,
    pub rho: f64,
    /// Final `|rho_k - rho_{k-1}|`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Damping actually used (halved once after a failed first attempt).
    pub gamma: f64,
    /// Per-capita ES rate the equilibrium was computed for.
    pub mu3: f64,
    pub history: Vec<IterationRecord>,
}

/// Window over which a non-shrinking residual counts as oscillation.
const OSCILLATION_WINDOW: usize = 50;

/// Minimizes the mean-field cost of `params` at load `rho`.
pub fn best_policy(params: &DeviceParams, rho: f64, cfg: &OptConfig) -> Policy {
    best_policy_with_cost(params, rho, cfg).0
}

pub fn best_policy_with_cost(params: &DeviceParams, rho: f64, cfg: &OptConfig) -> (Policy, f64) {
    let (lower, upper) = params.policy_bounds();
    let objective = |x: &[f64; 3]| mec::mean_field_cost(&Policy::from_array(*x), params, rho).unwrap_or(f64::INFINITY);
    let m = minimize_box(&objective, lower, upper, cfg, &[]);
    (Policy::from_array(m.x), m.value)
}

/// Load regenerated by the policies: `E[throughput] / mu3`.
pub fn consistency_map(policies: &[Policy], types: &TypeSet, mu3: f64) -> f64 {
    types
        .types
        .iter()
        .zip(&types.weights)
        .zip(policies)
        .map(|((params, &w), policy)| w * mec::tx_throughput(policy, params.lambda))
        .sum::<f64>()
        / mu3
}

/// Damped fixed-point iteration with the optimizer as inner map.
pub fn solve_mfe(types: &TypeSet, mu3: f64, opt: &OptConfig, algo: &AlgoConfig) -> Result<MfEquilibrium> {
    opt.validate().map_err(Error::InvalidParams)?;
    solve_mfe_with(types, mu3, algo, |params, rho| best_policy(params, rho, opt))
}

/// Damped fixed-point iteration with an arbitrary per-type response map.
///
/// If the first attempt does not converge or oscillates, it is rerun once
/// from scratch with half the damping step.
pub fn solve_mfe_with<B>(types: &TypeSet, mu3: f64, algo: &AlgoConfig, respond: B) -> Result<MfEquilibrium>
where
    B: Fn(&DeviceParams, f64) -> Policy + Sync,
{
    types.validate()?;
    algo.validate()?;
    if !(mu3 > 0.0) {
        return Err(Error::InvalidParams(format!("mu3 must be positive, got {mu3}")));
    }
    let first = iterate(types, mu3, algo, algo.gamma, &respond);
    if first.converged {
        return Ok(first);
    }
    Ok(iterate(types, mu3, algo, algo.gamma * 0.5, &respond))
}

fn iterate<B>(types: &TypeSet, mu3: f64, algo: &AlgoConfig, gamma: f64, respond: &B) -> MfEquilibrium
where
    B: Fn(&DeviceParams, f64) -> Policy + Sync,
{
    let mut rho = algo.initial_rho;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut policies = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;

    for k in 1..=algo.max_iters {
        policies = types
            .types
            .par_iter()
            .map(|params| respond(params, rho))
            .collect::<Vec<_>>();
        let costs = types
            .types
            .iter()
            .zip(&policies)
            .map(|(params, policy)| mec::mean_field_cost(policy, params, rho).unwrap_or(f64::NAN))
            .collect();
        let target = consistency_map(&policies, types, mu3);
        let next = (1.0 - gamma) * rho + gamma * target;
        residual = (next - rho).abs();
        rho = next;
        history.push(IterationRecord {
            k,
            rho,
            residual,
            policies: policies.clone(),
            costs,
        });
        if residual < algo.epsilon {
            converged = true;
            break;
        }
        if oscillating(&history) {
            break;
        }
    }

    MfEquilibrium {
        policies,
        rho,
        residual,
        iterations: history.len(),
        converged,
        gamma,
        mu3,
        history,
    }
}

/// True when the residual has not shrunk over the trailing window, or rose
/// in most of its steps.
fn oscillating(history: &[IterationRecord]) -> bool {
    if history.len() <= OSCILLATION_WINDOW {
        return false;
    }
    let window = &history[history.len() - OSCILLATION_WINDOW - 1..];
    let rises = window.windows(2).filter(|w| w[1].residual > w[0].residual).count();
    window[OSCILLATION_WINDOW].residual >= window[0].residual || 2 * rises > OSCILLATION_WINDOW
}

/// Writes the iteration log as CSV: `k,rho,residual` then per type
/// `p_<t>,mu_local_<t>,mu_tx_<t>,cost_<t>`.
pub fn write_iteration_log<W: Write>(eq: &MfEquilibrium, mut out: W) -> std::io::Result<()> {
    let types = eq.policies.len();
    let mut header = String::from("k,rho,residual");
    for t in 0..types {
        header.push_str(&format!(",p_{t},mu_local_{t},mu_tx_{t},cost_{t}"));
    }
    writeln!(out, "{header}")?;
    for rec in &eq.history {
        let mut line = format!("{},{},{}", rec.k, rec.rho, rec.residual);
        for (policy, cost) in rec.policies.iter().zip(&rec.costs) {
            line.push_str(&format!(
                ",{},{},{},{}",
                policy.p_local, policy.mu_local, policy.mu_tx, cost
            ));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
