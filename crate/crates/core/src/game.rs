//! The finite N-device game.
//!
//! Device `i` pays the power cost of its policy plus the weighted average age
//! of the N-device system, where its ES sees the other devices' transmitter
//! output as exogenous traffic. This module computes best responses,
//! Gauss-Seidel best-response dynamics, and the exploitability of a profile
//! (the largest cost reduction any device gets by deviating alone).

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mec::{self, DeviceParams, EsEnvironment, Policy, SystemParams};
use crate::mfe::{MfEquilibrium, TypeSet};
use crate::optimize::{minimize_box, OptConfig};

/// Joint policies and arrival rates of an N-device system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub policies: Vec<Policy>,
    pub lambdas: Vec<f64>,
    pub sys: SystemParams,
}

impl Profile {
    pub fn new(policies: Vec<Policy>, lambdas: Vec<f64>, sys: SystemParams) -> Result<Self> {
        let profile = Profile { policies, lambdas, sys };
        profile.validate()?;
        Ok(profile)
    }

    pub fn symmetric(policy: Policy, lambda: f64, sys: SystemParams) -> Self {
        Profile {
            policies: vec![policy; sys.n],
            lambdas: vec![lambda; sys.n],
            sys,
        }
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        if self.policies.len() != self.sys.n || self.lambdas.len() != self.sys.n {
            return Err(Error::InvalidParams(format!(
                "profile has {} policies and {} rates for n={}",
                self.policies.len(),
                self.lambdas.len(),
                self.sys.n
            )));
        }
        Ok(())
    }

    /// What device `i` sees at the ES.
    pub fn environment(&self, i: usize) -> EsEnvironment {
        EsEnvironment::new(
            mec::exogenous_rate(&self.policies, &self.lambdas, i),
            self.sys.es_rate(),
        )
    }
}

fn check_device(i: usize, profile: &Profile, params: &DeviceParams) -> Result<()> {
    profile.validate()?;
    if i >= profile.len() {
        return Err(Error::InvalidParams(format!("device {i} out of range")));
    }
    if params.lambda != profile.lambdas[i] {
        return Err(Error::InvalidParams(format!(
            "device {i} arrival rate {} differs from its params {}",
            profile.lambdas[i], params.lambda
        )));
    }
    Ok(())
}

/// Cost of device `i` under `profile`.
pub fn finite_cost(i: usize, profile: &Profile, params: &DeviceParams) -> Result<f64> {
    check_device(i, profile, params)?;
    cost_in(&profile.policies[i], params, &profile.environment(i))
}

fn cost_in(policy: &Policy, params: &DeviceParams, env: &EsEnvironment) -> Result<f64> {
    let delta = mec::device_aoi(policy, params.lambda, env)?;
    Ok(mec::device_cost(policy, params, delta))
}

/// Best response of device `i` with everyone else held fixed.
pub fn best_response(i: usize, profile: &Profile, params: &DeviceParams, cfg: &OptConfig) -> Result<Policy> {
    Ok(best_response_with_cost(i, profile, params, cfg)?.0)
}

pub fn best_response_with_cost(
    i: usize,
    profile: &Profile,
    params: &DeviceParams,
    cfg: &OptConfig,
) -> Result<(Policy, f64)> {
    check_device(i, profile, params)?;
    respond(&profile.policies[i], params, &profile.environment(i), cfg)
}

/// Minimizes the cost against a fixed ES environment, warm-started at `incumbent`.
fn respond(incumbent: &Policy, params: &DeviceParams, env: &EsEnvironment, cfg: &OptConfig) -> Result<(Policy, f64)> {
    let (lower, upper) = params.policy_bounds();
    let objective = |x: &[f64; 3]| cost_in(&Policy::from_array(*x), params, env).unwrap_or(f64::INFINITY);
    let m = minimize_box(&objective, lower, upper, cfg, &[incumbent.as_array()]);
    let policy = Policy::from_array(m.x);
    // Re-evaluate so that solver errors surface instead of hiding as +inf.
    let cost = cost_in(&policy, params, env)?;
    Ok((policy, cost))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsOutcome {
    pub profile: Profile,
    pub converged: bool,
    pub sweeps: usize,
    /// Largest policy-coordinate change in each sweep.
    pub max_changes: Vec<f64>,
}

/// Gauss-Seidel best-response sweeps in device index order.
///
/// A device only switches when that lowers its cost by more than
/// `cfg.refine_tolerance`. The dynamics stop once every other device has
/// confirmed its policy after the last switch, so the profile is a Nash
/// equilibrium up to that tolerance.
#[allow(clippy::needless_range_loop)]
pub fn best_response_dynamics(
    initial: &Profile,
    params: &[DeviceParams],
    cfg: &OptConfig,
    max_sweeps: usize,
) -> Result<DynamicsOutcome> {
    initial.validate()?;
    if params.len() != initial.len() {
        return Err(Error::InvalidParams(format!(
            "{} device params for {} devices",
            params.len(),
            initial.len()
        )));
    }
    let n = initial.len();
    let mut profile = initial.clone();
    let mut max_changes = Vec::new();
    // Devices confirmed in a row since the last switch.
    let mut confirmed = 0usize;
    let mut switched = false;
    let mut converged = false;

    'sweeps: for _ in 0..max_sweeps {
        let mut sweep_change: f64 = 0.0;
        for i in 0..n {
            let incumbent_cost = finite_cost(i, &profile, &params[i])?;
            let (candidate, cost) = best_response_with_cost(i, &profile, &params[i], cfg)?;
            if cost < incumbent_cost - cfg.refine_tolerance {
                sweep_change = sweep_change.max(candidate.distance(&profile.policies[i]));
                profile.policies[i] = candidate;
                confirmed = 0;
                switched = true;
            } else {
                confirmed += 1;
            }
            // The last switcher responded to the current profile; everyone
            // after it has confirmed against the same profile.
            if confirmed >= n || (switched && confirmed + 1 >= n) {
                max_changes.push(sweep_change);
                converged = true;
                break 'sweeps;
            }
        }
        max_changes.push(sweep_change);
    }

    Ok(DynamicsOutcome {
        profile,
        converged,
        sweeps: max_changes.len(),
        max_changes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploitabilityReport {
    /// Cost reduction each device gets from its best response.
    pub per_device_gain: Vec<f64>,
    pub max_gain: f64,
    pub mean_gain: f64,
}

/// Unilateral-deviation gains of every device in `profile`.
///
/// Devices with identical parameters, policy and ES environment share one
/// best-response computation.
pub fn exploitability(profile: &Profile, params: &[DeviceParams], cfg: &OptConfig) -> Result<ExploitabilityReport> {
    profile.validate()?;
    if params.len() != profile.len() {
        return Err(Error::InvalidParams(format!(
            "{} device params for {} devices",
            params.len(),
            profile.len()
        )));
    }
    let envs: Vec<EsEnvironment> = (0..profile.len()).map(|i| profile.environment(i)).collect();
    let key = |i: usize| -> Vec<u64> {
        let p = &params[i];
        let mut k: Vec<u64> = [
            p.lambda,
            p.eta,
            p.freshness_weight,
            p.p_max,
            p.f_max,
            envs[i].exo_rate,
            envs[i].es_rate,
        ]
        .iter()
        .chain(profile.policies[i].as_array().iter())
        .map(|v| v.to_bits())
        .collect();
        k.push(p.pairing as u64);
        k
    };

    let mut unique: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut representative = Vec::new();
    let slots: Vec<usize> = (0..profile.len())
        .map(|i| {
            *unique.entry(key(i)).or_insert_with(|| {
                representative.push(i);
                representative.len() - 1
            })
        })
        .collect();

    let gains = representative
        .par_iter()
        .map(|&i| {
            let incumbent = cost_in(&profile.policies[i], &params[i], &envs[i])?;
            let (_, best) = respond(&profile.policies[i], &params[i], &envs[i], cfg)?;
            Ok(incumbent - best)
        })
        .collect::<Result<Vec<f64>>>()?;

    let per_device_gain: Vec<f64> = slots.iter().map(|&s| gains[s]).collect();
    let max_gain = per_device_gain.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_gain = per_device_gain.iter().sum::<f64>() / per_device_gain.len() as f64;
    Ok(ExploitabilityReport {
        per_device_gain,
        max_gain,
        mean_gain,
    })
}

/// Number of devices per type: floor shares, remainder by largest fraction.
pub fn allocate_types(weights: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &t in order.iter().take(n.saturating_sub(assigned)) {
        counts[t] += 1;
    }
    counts
}

/// Device parameters and the profile obtained by giving every device the
/// equilibrium policy of its type.
pub fn mfe_profile(mfe: &MfEquilibrium, types: &TypeSet, n: usize) -> Result<(Profile, Vec<DeviceParams>)> {
    types.validate()?;
    if mfe.policies.len() != types.len() {
        return Err(Error::InvalidParams(format!(
            "equilibrium has {} policies for {} types",
            mfe.policies.len(),
            types.len()
        )));
    }
    let counts = allocate_types(&types.weights, n);
    let mut params = Vec::with_capacity(n);
    let mut policies = Vec::with_capacity(n);
    for (t, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            params.push(types.types[t].clone());
            policies.push(mfe.policies[t]);
        }
    }
    let lambdas = params.iter().map(|p| p.lambda).collect();
    let profile = Profile::new(policies, lambdas, SystemParams::new(n, mfe.mu3))?;
    Ok((profile, params))
}

/// Exploitability of the mean-field policies in an `n`-device system.
pub fn exploitability_of_mfe(
    mfe: &MfEquilibrium,
    types: &TypeSet,
    n: usize,
    cfg: &OptConfig,
) -> Result<ExploitabilityReport> {
    let (profile, params) = mfe_profile(mfe, types, n)?;
    exploitability(&profile, &params, cfg)
}

/// Writes `N,max_gain,mean_gain` rows.
pub fn write_exploitability_csv<W: Write>(rows: &[(usize, ExploitabilityReport)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "N,max_gain,mean_gain")?;
    for (n, report) in rows {
        writeln!(out, "{n},{},{}", report.max_gain, report.mean_gain)?;
    }
    Ok(())
}
