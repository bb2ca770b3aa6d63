//! Discrete-event simulation of the offloading network.
//!
//! Each device routes Poisson task arrivals to its local processor or its
//! transmitter; the transmitter forwards to one shared edge server. Every
//! server holds at most one packet and an arrival preempts (discards) the
//! packet in service. A delivery from the local processor or the ES updates
//! the owner's freshest generation time if the packet is newer than what
//! the device already has, so the device age is a sawtooth with unit slope
//! and downward jumps. The average age is the time integral of that sawtooth
//! over the post-warmup window.
//!
//! Service times are exponential, so a preempting packet simply takes over
//! the completion already scheduled for the server: the residual time is
//! again exponential with the same rate. Each server therefore has at most
//! one pending completion and the queue never holds stale events.
//!
//! Replications are independent, seeded from the master seed and the
//! replication index, and aggregated in index order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::mec::{EsEnvironment, Policy, SystemParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulated time per replication.
    pub horizon: f64,
    /// Leading fraction of the horizon excluded from the average.
    pub warmup_fraction: f64,
    pub replications: usize,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 1e5,
            warmup_fraction: 0.2,
            replications: 20,
            master_seed: 0x5eed,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup_fraction must be in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        Ok(())
    }
}

/// Confidence level of [`AoiEstimate::ci_half_width`].
pub const CONFIDENCE: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoiEstimate {
    pub mean: f64,
    /// Student-t half width over replication means (infinite for one replication).
    pub ci_half_width: f64,
    /// Processed events summed over replications.
    pub events: u64,
    pub class1_arrivals: u64,
    pub class1_deliveries: u64,
    pub replication_means: Vec<f64>,
}

/// Seed for substream `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    master ^ splitmix64(stream)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Arrival(usize),
    TxDone(usize),
    LocalDone(usize),
    EsDone,
    ExoArrival,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum EsPacket {
    Own { device: usize, generated: f64 },
    Exogenous,
}

#[derive(Clone, Debug)]
struct Device {
    policy: Policy,
    lambda: f64,
    tx: Option<f64>,
    local: Option<f64>,
    /// Generation time of the freshest delivered packet.
    freshest: f64,
    /// Time up to which the age integral has been accumulated.
    mark: f64,
    area: f64,
}

struct ReplicationResult {
    aoi: Vec<f64>,
    events: u64,
    arrivals: u64,
    deliveries: u64,
}

/// One row of the optional event trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub event_type: &'static str,
    pub server: &'static str,
    pub class: u8,
    /// Age at device 0 after the event.
    pub device_age: f64,
}

struct Simulation<'a> {
    devices: Vec<Device>,
    es: Option<EsPacket>,
    es_rate: f64,
    exo_rate: f64,
    heap: BinaryHeap<Event>,
    seq: u64,
    rng: ChaCha8Rng,
    now: f64,
    warmup_end: f64,
    events: u64,
    arrivals: u64,
    deliveries: u64,
    trace: Option<&'a mut dyn FnMut(TraceRecord)>,
}

impl<'a> Simulation<'a> {
    fn new(
        devices: &[(Policy, f64)],
        env: EsEnvironment,
        seed: u64,
        warmup_end: f64,
        trace: Option<&'a mut dyn FnMut(TraceRecord)>,
    ) -> Self {
        let devices = devices
            .iter()
            .map(|&(policy, lambda)| Device {
                policy,
                lambda,
                tx: None,
                local: None,
                freshest: 0.0,
                mark: 0.0,
                area: 0.0,
            })
            .collect();
        Simulation {
            devices,
            es: None,
            es_rate: env.es_rate,
            exo_rate: env.exo_rate,
            heap: BinaryHeap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0.0,
            warmup_end,
            events: 0,
            arrivals: 0,
            deliveries: 0,
            trace,
        }
    }

    fn exp(&mut self, rate: f64) -> f64 {
        let e: f64 = self.rng.sample(Exp1);
        e / rate
    }

    fn schedule(&mut self, delay: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time: self.now + delay,
            seq: self.seq,
            kind,
        });
    }

    fn record(&mut self, event_type: &'static str, server: &'static str, class: u8) {
        if let Some(trace) = self.trace.as_mut() {
            let age = self.now - self.devices[0].freshest;
            trace(TraceRecord {
                t: self.now,
                event_type,
                server,
                class,
                device_age: age,
            });
        }
    }

    /// Integrates device `d`'s age up to `t`, ignoring the warmup window.
    fn accumulate(&mut self, d: usize, t: f64) {
        let warmup_end = self.warmup_end;
        let dev = &mut self.devices[d];
        let from = dev.mark.max(warmup_end);
        if t > from {
            dev.area += (t - from) * (0.5 * (t + from) - dev.freshest);
        }
        dev.mark = t;
    }

    fn deliver(&mut self, d: usize, generated: f64) {
        self.deliveries += 1;
        if generated > self.devices[d].freshest {
            let now = self.now;
            self.accumulate(d, now);
            self.devices[d].freshest = generated;
        }
    }

    fn run(mut self, horizon: f64) -> ReplicationResult {
        for d in 0..self.devices.len() {
            let delay = self.exp(self.devices[d].lambda);
            self.schedule(delay, Kind::Arrival(d));
        }
        if self.exo_rate > 0.0 {
            let delay = self.exp(self.exo_rate);
            self.schedule(delay, Kind::ExoArrival);
        }

        while let Some(event) = self.heap.pop() {
            if event.time > horizon {
                break;
            }
            self.now = event.time;
            match event.kind {
                Kind::Arrival(d) => {
                    self.events += 1;
                    self.arrivals += 1;
                    let delay = self.exp(self.devices[d].lambda);
                    self.schedule(delay, Kind::Arrival(d));
                    let local = self.rng.random::<f64>() < self.devices[d].policy.p_local;
                    let now = self.now;
                    if local {
                        if self.devices[d].local.replace(now).is_some() {
                            self.record("preempt", "L", 1);
                        } else {
                            let delay = self.exp(self.devices[d].policy.mu_local);
                            self.schedule(delay, Kind::LocalDone(d));
                        }
                        self.record("arrival", "L", 1);
                    } else {
                        if self.devices[d].tx.replace(now).is_some() {
                            self.record("preempt", "T", 1);
                        } else {
                            let delay = self.exp(self.devices[d].policy.mu_tx);
                            self.schedule(delay, Kind::TxDone(d));
                        }
                        self.record("arrival", "T", 1);
                    }
                }
                Kind::TxDone(d) => {
                    self.events += 1;
                    let generated = self.devices[d].tx.take().expect("completion of an idle transmitter");
                    self.record("completion", "T", 1);
                    self.start_es(EsPacket::Own { device: d, generated });
                    self.record("arrival", "ES", 1);
                }
                Kind::LocalDone(d) => {
                    self.events += 1;
                    let generated = self.devices[d].local.take().expect("completion of an idle processor");
                    self.deliver(d, generated);
                    self.record("completion", "L", 1);
                }
                Kind::EsDone => {
                    self.events += 1;
                    let packet = self.es.take().expect("completion of an idle server");
                    match packet {
                        EsPacket::Own { device, generated } => {
                            self.deliver(device, generated);
                            self.record("completion", "ES", 1);
                        }
                        EsPacket::Exogenous => self.record("completion", "ES", 2),
                    }
                }
                Kind::ExoArrival => {
                    self.events += 1;
                    let delay = self.exp(self.exo_rate);
                    self.schedule(delay, Kind::ExoArrival);
                    self.start_es(EsPacket::Exogenous);
                    self.record("exo_arrival", "ES", 2);
                }
            }
        }

        self.now = horizon;
        for d in 0..self.devices.len() {
            self.accumulate(d, horizon);
        }
        let window = horizon - self.warmup_end;
        ReplicationResult {
            aoi: self.devices.iter().map(|d| d.area / window).collect(),
            events: self.events,
            arrivals: self.arrivals,
            deliveries: self.deliveries,
        }
    }

    /// Traffic class of the packet at the ES, from device 0's viewpoint.
    fn es_class(&self) -> u8 {
        match self.es {
            Some(EsPacket::Own { device: 0, .. }) => 1,
            _ => 2,
        }
    }

    fn start_es(&mut self, packet: EsPacket) {
        if self.es.is_some() {
            self.record("preempt", "ES", self.es_class());
        } else {
            let delay = self.exp(self.es_rate);
            self.schedule(delay, Kind::EsDone);
        }
        self.es = Some(packet);
    }
}

fn check_rates(policy: &Policy, lambda: f64) -> Result<()> {
    let ok = lambda > 0.0 && policy.mu_local > 0.0 && policy.mu_tx > 0.0 && (0.0..=1.0).contains(&policy.p_local);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "invalid device lambda={lambda} {policy:?}"
        )))
    }
}

fn aggregate(results: &[ReplicationResult], device: usize) -> AoiEstimate {
    let means: Vec<f64> = results.iter().map(|r| r.aoi[device]).collect();
    let r = means.len() as f64;
    let mean = means.iter().sum::<f64>() / r;
    let ci_half_width = if means.len() < 2 {
        f64::INFINITY
    } else {
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let t = StudentsT::new(0.0, 1.0, r - 1.0)
            .expect("degrees of freedom positive")
            .inverse_cdf(0.5 + CONFIDENCE / 2.0);
        t * (var / r).sqrt()
    };
    AoiEstimate {
        mean,
        ci_half_width,
        events: results.iter().map(|r| r.events).sum(),
        class1_arrivals: results.iter().map(|r| r.arrivals).sum(),
        class1_deliveries: results.iter().map(|r| r.deliveries).sum(),
        replication_means: means,
    }
}

fn run_replications(devices: &[(Policy, f64)], env: EsEnvironment, cfg: &SimConfig) -> Vec<ReplicationResult> {
    let warmup_end = cfg.horizon * cfg.warmup_fraction;
    (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(cfg.master_seed, rep as u64);
            Simulation::new(devices, env, seed, warmup_end, None).run(cfg.horizon)
        })
        .collect()
}

/// One device facing Poisson exogenous traffic at the ES.
pub fn simulate_device(policy: &Policy, lambda: f64, env: &EsEnvironment, cfg: &SimConfig) -> Result<AoiEstimate> {
    cfg.validate()?;
    check_rates(policy, lambda)?;
    if !(env.exo_rate >= 0.0) || !(env.es_rate > 0.0) {
        return Err(Error::InvalidParams(format!("invalid ES environment {env:?}")));
    }
    let results = run_replications(&[(*policy, lambda)], *env, cfg);
    Ok(aggregate(&results, 0))
}

/// All `n` devices sharing one ES of rate `n * mu3`; returns one estimate per device.
pub fn simulate_population(
    policies: &[Policy],
    lambdas: &[f64],
    sys: &SystemParams,
    cfg: &SimConfig,
) -> Result<Vec<AoiEstimate>> {
    cfg.validate()?;
    sys.validate()?;
    if policies.len() != sys.n || lambdas.len() != sys.n {
        return Err(Error::InvalidConfig(format!(
            "{} policies and {} rates for n={}",
            policies.len(),
            lambdas.len(),
            sys.n
        )));
    }
    let devices: Vec<(Policy, f64)> = policies.iter().copied().zip(lambdas.iter().copied()).collect();
    for (policy, lambda) in &devices {
        check_rates(policy, *lambda)?;
    }
    let results = run_replications(&devices, EsEnvironment::new(0.0, sys.es_rate()), cfg);
    Ok((0..sys.n).map(|d| aggregate(&results, d)).collect())
}

/// Runs replication `replication` of [`simulate_device`] and writes its
/// event trace as CSV (`t,event_type,server,class,device_age`). Returns the
/// replication's average age.
pub fn trace_device<W: Write>(
    policy: &Policy,
    lambda: f64,
    env: &EsEnvironment,
    cfg: &SimConfig,
    replication: usize,
    mut out: W,
) -> Result<f64> {
    cfg.validate()?;
    check_rates(policy, lambda)?;
    let io = |e: std::io::Error| Error::InvalidConfig(format!("trace output: {e}"));
    writeln!(out, "t,event_type,server,class,device_age").map_err(io)?;
    let mut failure = None;
    let mut sink = |rec: TraceRecord| {
        if failure.is_none() {
            if let Err(e) = writeln!(
                out,
                "{},{},{},{},{}",
                rec.t, rec.event_type, rec.server, rec.class, rec.device_age
            ) {
                failure = Some(e);
            }
        }
    };
    let seed = derive_seed(cfg.master_seed, replication as u64);
    let result = Simulation::new(
        &[(*policy, lambda)],
        *env,
        seed,
        cfg.horizon * cfg.warmup_fraction,
        Some(&mut sink),
    )
    .run(cfg.horizon);
    if let Some(e) = failure {
        return Err(io(e));
    }
    Ok(result.aoi[0])
}
