//! The edge-computing offloading network seen from one device.
//!
//! Tasks arrive at rate `lambda` and are routed to the local processor with
//! probability `p_local`, otherwise to the transmitter, whose output joins a
//! shared edge server (ES). Every server is LCFS with preemption. The ES also
//! receives exogenous traffic from the rest of the population.
//!
//! Age components of the SHS model: 0 = device, 1 = transmitter,
//! 2 = local processor, 3 = edge server.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shs::{self, ResetEntry, ShsModel, Transition};

/// Lower bound on both service rates.
pub const RATE_MIN: f64 = 1e-3;

pub const NUM_STATES: usize = 8;
pub const NUM_AGES: usize = 4;

/// A device's decision: routing probability and the two service rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Probability that a task is processed locally.
    pub p_local: f64,
    pub mu_local: f64,
    pub mu_tx: f64,
}

impl Policy {
    pub fn new(p_local: f64, mu_local: f64, mu_tx: f64) -> Self {
        Policy {
            p_local,
            mu_local,
            mu_tx,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_local, self.mu_local, self.mu_tx]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Policy::new(x[0], x[1], x[2])
    }

    /// Projects onto the feasible box of `params`.
    pub fn clamped(&self, params: &DeviceParams) -> Self {
        let (lo, hi) = params.policy_bounds();
        let x = self.as_array();
        Policy::from_array(std::array::from_fn(|k| x[k].clamp(lo[k], hi[k])))
    }

    pub fn is_feasible(&self, params: &DeviceParams) -> bool {
        let (lo, hi) = params.policy_bounds();
        self.as_array()
            .iter()
            .enumerate()
            .all(|(k, &x)| x >= lo[k] && x <= hi[k])
    }

    /// Largest absolute coordinate difference.
    pub fn distance(&self, other: &Policy) -> f64 {
        let (a, b) = (self.as_array(), other.as_array());
        (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
    }
}

/// How busy fractions pair with the power terms in the device cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostPairing {
    /// Transmit power over transmitter busy time, `eta * mu_local^3` over
    /// local busy time.
    #[default]
    Physical,
    /// The crossed pairing `t_local * mu_tx + t_tx * eta * mu_local^3`.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Task arrival rate.
    pub lambda: f64,
    /// Effective capacitance; local processing power is `eta * mu_local^3`.
    pub eta: f64,
    /// Weight on average age in the cost.
    #[serde(rename = "v")]
    pub freshness_weight: f64,
    /// Cap on the transmitter rate.
    pub p_max: f64,
    /// Cap on the local processor rate.
    pub f_max: f64,
    #[serde(default)]
    pub type_id: String,
    #[serde(default)]
    pub pairing: CostPairing,
}

impl DeviceParams {
    pub fn new(lambda: f64, eta: f64, freshness_weight: f64, p_max: f64, f_max: f64) -> Self {
        DeviceParams {
            lambda,
            eta,
            freshness_weight,
            p_max,
            f_max,
            type_id: String::new(),
            pairing: CostPairing::Physical,
        }
    }

    /// Lower and upper corners of the feasible `(p_local, mu_local, mu_tx)` box.
    pub fn policy_bounds(&self) -> ([f64; 3], [f64; 3]) {
        (
            [0.0, RATE_MIN, RATE_MIN],
            [1.0, self.f_max.max(RATE_MIN), self.p_max.max(RATE_MIN)],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.lambda.is_finite()
            && self.eta > 0.0
            && self.freshness_weight >= 0.0
            && self.p_max > 0.0
            && self.f_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "device params need lambda, eta, p_max, f_max > 0 and v >= 0: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Number of devices.
    pub n: usize,
    /// Per-capita ES rate; the ES serves at `n * mu3`.
    pub mu3: f64,
}

impl SystemParams {
    pub fn new(n: usize, mu3: f64) -> Self {
        SystemParams { n, mu3 }
    }

    pub fn es_rate(&self) -> f64 {
        self.n as f64 * self.mu3
    }

    pub fn validate(&self) -> Result<()> {
        if self.n >= 1 && self.mu3 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("need n >= 1 and mu3 > 0: {self:?}")))
        }
    }
}

/// What one device sees at the ES: exogenous arrivals and the service rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsEnvironment {
    pub exo_rate: f64,
    pub es_rate: f64,
}

impl EsEnvironment {
    pub fn new(exo_rate: f64, es_rate: f64) -> Self {
        EsEnvironment { exo_rate, es_rate }
    }

    /// Environment with load `rho` on an ES of rate `es_rate`.
    pub fn from_load(rho: f64, es_rate: f64) -> Self {
        EsEnvironment::new(rho * es_rate, es_rate)
    }

    pub fn rho(&self) -> f64 {
        self.exo_rate / self.es_rate
    }
}

/// Which rate drives a transition of the device model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MecRate {
    /// `lambda * p_local`
    LocalArrival,
    /// `lambda * (1 - p_local)`
    TxArrival,
    Exogenous,
    TxService,
    LocalService,
    EsService,
}

use MecRate::*;
use ResetEntry::{Copy as C, Zero as Z};

type Row = (MecRate, usize, [ResetEntry; NUM_AGES]);

/// The transition table, states numbered 0..8 (s1..s8).
///
/// Server contents per state (T = transmitter, L = local, ES):
/// s1 T freshest, L 2nd, ES oldest; s2 T freshest, ES 2nd, L oldest;
/// s3 L freshest, T 2nd, ES oldest; s4 T empty, L freshest, ES 2nd;
/// s5 T empty, ES freshest, L 2nd; s6 T empty, L freshest, ES class 2;
/// s7 T freshest, L 2nd, ES class 2; s8 L freshest, T 2nd, ES class 2.
///
/// L and the ES re-serve a copy of a departing packet, so they are always
/// busy. The transmitter feeds the point where exogenous traffic merges and
/// cannot do that, so its age stops growing while it is empty (s4..s6).
const TABLE: [&[Row]; NUM_STATES] = [
    &[
        (LocalArrival, 2, [C(0), C(1), Z, C(3)]),
        (TxArrival, 0, [C(0), Z, C(2), C(3)]),
        (Exogenous, 6, [C(0), C(1), C(2), C(0)]),
        (TxService, 4, [C(0), Z, C(2), C(1)]),
        (LocalService, 0, [C(2), C(1), C(2), C(2)]),
        (EsService, 0, [C(3), C(1), C(2), C(3)]),
    ],
    &[
        (LocalArrival, 2, [C(0), C(1), Z, C(3)]),
        (TxArrival, 1, [C(0), Z, C(2), C(3)]),
        (Exogenous, 6, [C(0), C(1), C(2), C(0)]),
        (TxService, 4, [C(0), Z, C(2), C(1)]),
        (LocalService, 1, [C(2), C(1), C(2), C(3)]),
        (EsService, 1, [C(3), C(1), C(3), C(3)]),
    ],
    &[
        (LocalArrival, 2, [C(0), C(1), Z, C(3)]),
        (TxArrival, 0, [C(0), Z, C(2), C(3)]),
        (Exogenous, 7, [C(0), C(1), C(2), C(0)]),
        (TxService, 3, [C(0), Z, C(2), C(1)]),
        (LocalService, 2, [C(2), C(2), C(2), C(2)]),
        (EsService, 2, [C(3), C(1), C(2), C(3)]),
    ],
    &[
        (LocalArrival, 3, [C(0), Z, Z, C(3)]),
        (TxArrival, 0, [C(0), Z, C(2), C(3)]),
        (Exogenous, 5, [C(0), Z, C(2), C(0)]),
        (LocalService, 3, [C(2), Z, C(2), C(2)]),
        (EsService, 3, [C(3), Z, C(2), C(3)]),
    ],
    &[
        (LocalArrival, 3, [C(0), Z, Z, C(3)]),
        (TxArrival, 1, [C(0), Z, C(2), C(3)]),
        (Exogenous, 5, [C(0), Z, C(2), C(0)]),
        (LocalService, 4, [C(2), Z, C(2), C(3)]),
        (EsService, 4, [C(3), Z, C(3), C(3)]),
    ],
    &[
        (LocalArrival, 5, [C(0), Z, Z, C(3)]),
        (TxArrival, 6, [C(0), Z, C(2), C(3)]),
        (Exogenous, 5, [C(0), Z, C(2), C(0)]),
        (LocalService, 5, [C(2), Z, C(2), C(2)]),
        (EsService, 5, [C(3), Z, C(2), C(3)]),
    ],
    &[
        (LocalArrival, 7, [C(0), C(1), Z, C(3)]),
        (TxArrival, 6, [C(0), Z, C(2), C(3)]),
        (Exogenous, 6, [C(0), C(1), C(2), C(0)]),
        (TxService, 4, [C(0), Z, C(2), C(1)]),
        (LocalService, 6, [C(2), C(1), C(2), C(2)]),
        (EsService, 6, [C(3), C(1), C(2), C(3)]),
    ],
    &[
        (LocalArrival, 7, [C(0), C(1), Z, C(3)]),
        (TxArrival, 6, [C(0), Z, C(2), C(3)]),
        (Exogenous, 7, [C(0), C(1), C(2), C(0)]),
        (TxService, 3, [C(0), Z, C(2), C(1)]),
        (LocalService, 7, [C(2), C(2), C(2), C(2)]),
        (EsService, 7, [C(3), C(1), C(2), C(3)]),
    ],
];

/// States in which the transmitter holds no packet.
pub const TX_IDLE_STATES: [usize; 3] = [3, 4, 5];

/// The full labeled table, `(source, label, target, reset)`.
pub fn transition_table() -> impl Iterator<Item = (usize, MecRate, usize, [ResetEntry; NUM_AGES])> {
    TABLE
        .iter()
        .enumerate()
        .flat_map(|(s, rows)| rows.iter().map(move |&(label, t, reset)| (s, label, t, reset)))
}

fn check_policy(policy: &Policy, lambda: f64) -> Result<()> {
    let rates_ok = lambda > 0.0 && policy.mu_local > 0.0 && policy.mu_tx > 0.0;
    let p_ok = (0.0..=1.0).contains(&policy.p_local);
    let finite = lambda.is_finite() && policy.mu_local.is_finite() && policy.mu_tx.is_finite();
    if rates_ok && p_ok && finite {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "need lambda, mu_local, mu_tx > 0 and p_local in [0, 1]: lambda={lambda}, {policy:?}"
        )))
    }
}

/// Builds the device SHS. Transitions whose rate is below the prune
/// threshold (e.g. `lambda * (1 - p)` at `p = 1`) are omitted.
pub fn build_mec_shs(policy: &Policy, lambda: f64, env: &EsEnvironment) -> Result<ShsModel> {
    check_policy(policy, lambda)?;
    if !(env.exo_rate >= 0.0) || !(env.es_rate > 0.0) {
        return Err(Error::InvalidParams(format!(
            "need exo_rate >= 0 and es_rate > 0: {env:?}"
        )));
    }
    let rate = |label: MecRate| match label {
        LocalArrival => lambda * policy.p_local,
        TxArrival => lambda * (1.0 - policy.p_local),
        Exogenous => env.exo_rate,
        TxService => policy.mu_tx,
        LocalService => policy.mu_local,
        EsService => env.es_rate,
    };
    let transitions = transition_table()
        .filter_map(|(s, label, t, reset)| {
            let r = rate(label);
            (r >= shs::PRUNE_RATE).then(|| Transition::new(s, t, r, reset.to_vec()))
        })
        .collect();
    let growth = (0..NUM_STATES)
        .map(|s| {
            if TX_IDLE_STATES.contains(&s) {
                vec![1, 0, 1, 1]
            } else {
                vec![1, 1, 1, 1]
            }
        })
        .collect();
    Ok(ShsModel {
        num_states: NUM_STATES,
        num_ages: NUM_AGES,
        growth,
        transitions,
    })
}

/// Analytic average age of the device under `env`.
pub fn device_aoi(policy: &Policy, lambda: f64, env: &EsEnvironment) -> Result<f64> {
    let model = build_mec_shs(policy, lambda, env)?;
    Ok(shs::solve_aoi(&model)?.delta)
}

/// Rate at which a device's transmitter delivers packets to the ES.
pub fn tx_throughput(policy: &Policy, lambda: f64) -> f64 {
    let offered = lambda * (1.0 - policy.p_local);
    if offered <= 0.0 {
        return 0.0;
    }
    offered * policy.mu_tx / (offered + policy.mu_tx)
}

/// Sum of the other devices' transmitter throughputs.
pub fn exogenous_rate(policies: &[Policy], lambdas: &[f64], i: usize) -> f64 {
    policies
        .iter()
        .zip(lambdas)
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, (policy, &lambda))| tx_throughput(policy, lambda))
        .sum()
}

/// Average age of device `i` in an `N`-device system.
pub fn finite_n_aoi(policies: &[Policy], lambdas: &[f64], i: usize, sys: &SystemParams) -> Result<f64> {
    if policies.len() != lambdas.len() || policies.len() != sys.n || i >= sys.n {
        return Err(Error::InvalidParams(format!(
            "profile of {} policies / {} rates for n={} and device {i}",
            policies.len(),
            lambdas.len(),
            sys.n
        )));
    }
    sys.validate()?;
    let env = EsEnvironment::new(exogenous_rate(policies, lambdas, i), sys.es_rate());
    device_aoi(&policies[i], lambdas[i], &env)
}

/// Mean-field average age in closed form, at ES load `rho`.
pub fn mf_aoi_closed_form(policy: &Policy, lambda: f64, rho: f64) -> Result<f64> {
    check_policy(policy, lambda)?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParams(format!("need rho >= 0, got {rho}")));
    }
    let p = policy.p_local;
    let q = 1.0 - p;
    let tx = policy.mu_tx;
    let local = policy.mu_local;
    let load = 1.0 + rho;

    let m1 = load * p * q;
    let m2 = local * load + tx * (1.0 + (2.0 - p) * p * rho);
    let m3 = load * (tx + local).powi(2) - tx * tx * q * rho;

    let numerator = lambda.powi(3) * m1 + lambda.powi(2) * m2 + lambda * m3 + tx * local * (tx + local) * load;
    let denominator =
        (tx + lambda * p * load + tx * p * rho) * (local * (tx + local) * load + lambda * q * (tx + local * load));
    Ok(load / lambda * numerator / denominator)
}

/// Long-run busy fractions `(t_local, t_tx)` of the two device servers.
pub fn busy_fractions(policy: &Policy, lambda: f64) -> (f64, f64) {
    let local_in = lambda * policy.p_local;
    let tx_in = lambda * (1.0 - policy.p_local);
    let frac = |a: f64, mu: f64| if a > 0.0 { a / (a + mu) } else { 0.0 };
    (frac(local_in, policy.mu_local), frac(tx_in, policy.mu_tx))
}

/// Power cost of the policy plus the weighted average age `delta`.
pub fn device_cost(policy: &Policy, params: &DeviceParams, delta: f64) -> f64 {
    let (t_local, t_tx) = busy_fractions(policy, params.lambda);
    let cube = params.eta * policy.mu_local.powi(3);
    let power = match params.pairing {
        CostPairing::Physical => t_tx * policy.mu_tx + t_local * cube,
        CostPairing::Literal => t_local * policy.mu_tx + t_tx * cube,
    };
    power + params.freshness_weight * delta
}

/// Device cost in the mean-field system at load `rho`.
pub fn mean_field_cost(policy: &Policy, params: &DeviceParams, rho: f64) -> Result<f64> {
    let delta = mf_aoi_closed_form(policy, params.lambda, rho)?;
    Ok(device_cost(policy, params, delta))
}
