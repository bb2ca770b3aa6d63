//! Piecewise-linear stochastic hybrid system (SHS) solver for average age.
//!
//! A model is a finite continuous-time Markov chain whose transitions carry
//! a reset map on a vector of ages. Between transitions, every age component
//! whose growth flag is set increases at unit rate. Given an ergodic chain the
//! solver computes
//!
//! * the stationary distribution `pi` from the balance equations,
//! * the stationary correlation vectors `v[s][k] = E[x_k 1{state = s}]`,
//! * the average age of component 0, `sum_s v[s][0]`.
//!
//! Transitions with a rate below [`PRUNE_RATE`] are dropped before solving.
//! When the pruned chain is reducible but has a single closed class, the
//! solution lives on that class and every transient state gets zero mass.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::solve_guarded;

/// Transitions slower than this are treated as absent.
pub const PRUNE_RATE: f64 = 1e-12;

/// One output component of a reset map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetEntry {
    /// The new age equals the old age at this index.
    Copy(usize),
    /// The new age is zero (a fresh packet).
    Zero,
}

impl Serialize for ResetEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ResetEntry::Copy(j) => serializer.serialize_u64(*j as u64),
            ResetEntry::Zero => serializer.serialize_str("z"),
        }
    }
}

impl<'de> Deserialize<'de> for ResetEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntryVisitor;

        impl Visitor<'_> for EntryVisitor {
            type Value = ResetEntry;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an age index or \"z\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<ResetEntry, E> {
                Ok(ResetEntry::Copy(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<ResetEntry, E> {
                usize::try_from(v)
                    .map(ResetEntry::Copy)
                    .map_err(|_| E::custom("negative age index"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ResetEntry, E> {
                match v {
                    "z" | "Z" => Ok(ResetEntry::Zero),
                    other => Err(E::custom(format!("unknown reset entry {other:?}"))),
                }
            }
        }

        deserializer.deserialize_any(EntryVisitor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub source: usize,
    pub target: usize,
    pub rate: f64,
    pub reset: Vec<ResetEntry>,
}

impl Transition {
    pub fn new(source: usize, target: usize, rate: f64, reset: Vec<ResetEntry>) -> Self {
        Transition {
            source,
            target,
            rate,
            reset,
        }
    }
}

/// A piecewise-linear SHS: the discrete chain plus age dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShsModel {
    pub num_states: usize,
    /// Number of age components; index 0 is the monitored age.
    pub num_ages: usize,
    /// Per-state growth flags (0 or 1) for each age component.
    pub growth: Vec<Vec<u8>>,
    pub transitions: Vec<Transition>,
}

impl ShsModel {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParams(format!("model json: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Total outgoing rate per state over the active (unpruned) transitions.
    pub fn outgoing_rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        for t in self.active() {
            out[t.source] += t.rate;
        }
        out
    }

    /// Multiplies every transition rate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut model = self.clone();
        for t in &mut model.transitions {
            t.rate *= factor;
        }
        model
    }

    /// Relabels states: old state `s` becomes `perm[s]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut growth = vec![Vec::new(); self.num_states];
        for (s, row) in self.growth.iter().enumerate() {
            growth[perm[s]] = row.clone();
        }
        let transitions = self
            .transitions
            .iter()
            .map(|t| Transition::new(perm[t.source], perm[t.target], t.rate, t.reset.clone()))
            .collect();
        ShsModel {
            num_states: self.num_states,
            num_ages: self.num_ages,
            growth,
            transitions,
        }
    }

    fn active(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(|t| t.rate >= PRUNE_RATE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyModel,
    GrowthShape {
        state: usize,
    },
    NonBinaryGrowth {
        state: usize,
        age: usize,
    },
    NonPositiveRate {
        transition: usize,
        rate: f64,
    },
    DanglingState {
        transition: usize,
        index: usize,
    },
    ResetLength {
        transition: usize,
        len: usize,
    },
    DanglingAge {
        transition: usize,
        position: usize,
        index: usize,
    },
    ReducibleChain {
        closed_classes: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyModel => write!(f, "model has no states or no ages"),
            Violation::GrowthShape { state } => write!(f, "growth row for state {state} has wrong length"),
            Violation::NonBinaryGrowth { state, age } => {
                write!(f, "growth[{state}][{age}] is not 0 or 1")
            }
            Violation::NonPositiveRate { transition, rate } => {
                write!(f, "transition {transition} has nonpositive rate {rate}")
            }
            Violation::DanglingState { transition, index } => {
                write!(f, "transition {transition} references missing state {index}")
            }
            Violation::ResetLength { transition, len } => {
                write!(f, "transition {transition} has reset map of length {len}")
            }
            Violation::DanglingAge {
                transition,
                position,
                index,
            } => write!(
                f,
                "transition {transition} reset[{position}] references missing age {index}"
            ),
            Violation::ReducibleChain { closed_classes } => {
                write!(f, "reducible chain ({closed_classes} closed classes)")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn is_reducible(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, Violation::ReducibleChain { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks structure, rates and irreducibility of the positive-rate graph.
pub fn validate_model(model: &ShsModel) -> ValidationReport {
    let mut violations = structural_violations(model);
    for (i, t) in model.transitions.iter().enumerate() {
        if !(t.rate > 0.0) || !t.rate.is_finite() {
            violations.push(Violation::NonPositiveRate {
                transition: i,
                rate: t.rate,
            });
        }
    }
    if violations.is_empty() {
        let reach = reachability(model);
        let irreducible = reach.iter().all(|row| row.iter().all(|&r| r));
        if !irreducible {
            violations.push(Violation::ReducibleChain {
                closed_classes: closed_classes(&reach).len(),
            });
        }
    }
    ValidationReport { violations }
}

fn structural_violations(model: &ShsModel) -> Vec<Violation> {
    let mut out = Vec::new();
    if model.num_states == 0 || model.num_ages == 0 {
        out.push(Violation::EmptyModel);
        return out;
    }
    if model.growth.len() != model.num_states {
        out.push(Violation::GrowthShape {
            state: model.growth.len().min(model.num_states),
        });
    }
    for (s, row) in model.growth.iter().enumerate() {
        if row.len() != model.num_ages {
            out.push(Violation::GrowthShape { state: s });
        }
        for (k, &g) in row.iter().enumerate() {
            if g > 1 {
                out.push(Violation::NonBinaryGrowth { state: s, age: k });
            }
        }
    }
    for (i, t) in model.transitions.iter().enumerate() {
        for index in [t.source, t.target] {
            if index >= model.num_states {
                out.push(Violation::DanglingState { transition: i, index });
            }
        }
        if t.reset.len() != model.num_ages {
            out.push(Violation::ResetLength {
                transition: i,
                len: t.reset.len(),
            });
        }
        for (position, entry) in t.reset.iter().enumerate() {
            if let ResetEntry::Copy(index) = *entry {
                if index >= model.num_ages {
                    out.push(Violation::DanglingAge {
                        transition: i,
                        position,
                        index,
                    });
                }
            }
        }
    }
    out
}

/// `reach[s][t]` is true when `t` is reachable from `s` (including `s` itself).
fn reachability(model: &ShsModel) -> Vec<Vec<bool>> {
    let m = model.num_states;
    let mut adjacency = vec![Vec::new(); m];
    for t in model.active() {
        adjacency[t.source].push(t.target);
    }
    (0..m)
        .map(|start| {
            let mut seen = vec![false; m];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(s) = queue.pop_front() {
                for &next in &adjacency[s] {
                    if !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
            }
            seen
        })
        .collect()
}

/// Closed communicating classes (bottom strongly connected components).
fn closed_classes(reach: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let m = reach.len();
    let mut assigned = vec![false; m];
    let mut classes = Vec::new();
    for s in 0..m {
        if assigned[s] {
            continue;
        }
        let closed = (0..m).all(|t| !reach[s][t] || reach[t][s]);
        if closed {
            let class: Vec<usize> = (0..m).filter(|&t| reach[s][t]).collect();
            for &t in &class {
                assigned[t] = true;
            }
            classes.push(class);
        }
    }
    classes
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    pub probs: Vec<f64>,
}

impl StationaryDistribution {
    /// Largest violation of the balance equations over all states.
    pub fn balance_residual(&self, model: &ShsModel) -> f64 {
        let out = model.outgoing_rates();
        let mut inflow = vec![0.0; model.num_states];
        for t in model.active() {
            inflow[t.target] += t.rate * self.probs[t.source];
        }
        (0..model.num_states)
            .map(|s| (self.probs[s] * out[s] - inflow[s]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationVectors {
    /// Row `s` holds `E[x 1{state = s}]`.
    pub v: Vec<Vec<f64>>,
}

impl CorrelationVectors {
    /// Largest violation of the correlation equations over all (state, age) pairs.
    pub fn residual(&self, model: &ShsModel, pi: &StationaryDistribution) -> f64 {
        let n = model.num_ages;
        let out = model.outgoing_rates();
        let mut rhs: Vec<Vec<f64>> = (0..model.num_states)
            .map(|s| (0..n).map(|k| f64::from(model.growth[s][k]) * pi.probs[s]).collect())
            .collect();
        for t in model.active() {
            for (k, entry) in t.reset.iter().enumerate() {
                if let ResetEntry::Copy(j) = *entry {
                    rhs[t.target][k] += t.rate * self.v[t.source][j];
                }
            }
        }
        let mut worst: f64 = 0.0;
        for (s, row) in rhs.iter().enumerate() {
            for (v, r) in self.v[s].iter().zip(row) {
                worst = worst.max((v * out[s] - r).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AoiSolution {
    pub pi: StationaryDistribution,
    pub v: CorrelationVectors,
    pub delta: f64,
}

fn check_solvable(model: &ShsModel) -> Result<()> {
    let mut violations = structural_violations(model);
    for (i, t) in model.transitions.iter().enumerate() {
        if t.rate < 0.0 || !t.rate.is_finite() {
            violations.push(Violation::NonPositiveRate {
                transition: i,
                rate: t.rate,
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidModel(ValidationReport { violations }))
    }
}

/// States of the closed class the pruned chain settles in when started
/// from state 0. Closed classes unreachable from state 0 are ignored; two
/// reachable ones leave the stationary distribution undetermined.
fn recurrent_class(model: &ShsModel) -> Result<Vec<usize>> {
    let reach = reachability(model);
    let classes: Vec<Vec<usize>> = closed_classes(&reach)
        .into_iter()
        .filter(|class| reach[0][class[0]])
        .collect();
    match <[Vec<usize>; 1]>::try_from(classes) {
        Ok([class]) => Ok(class),
        Err(_) => Err(Error::SingularSystem {
            system: "balance",
            condition: f64::INFINITY,
        }),
    }
}

/// Solves the balance equations with the normalization constraint.
pub fn solve_stationary(model: &ShsModel) -> Result<StationaryDistribution> {
    check_solvable(model)?;
    let class = recurrent_class(model)?;
    let mut local = vec![usize::MAX; model.num_states];
    for (i, &s) in class.iter().enumerate() {
        local[s] = i;
    }
    let k = class.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for t in model.active() {
        let (src, dst) = (local[t.source], local[t.target]);
        if src == usize::MAX {
            continue;
        }
        a[(dst, src)] += t.rate;
        a[(src, src)] -= t.rate;
    }
    // One balance equation is redundant; replace it with sum(pi) = 1.
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let x = solve_guarded(a, &b, "balance")?;

    let mut probs = vec![0.0; model.num_states];
    for (i, &s) in class.iter().enumerate() {
        probs[s] = x[i].max(0.0);
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(StationaryDistribution { probs })
}

/// Solves the stationary correlation equations given `pi` for the same model.
pub fn solve_correlations(model: &ShsModel, pi: &StationaryDistribution) -> Result<CorrelationVectors> {
    check_solvable(model)?;
    let n = model.num_ages;
    let class: Vec<usize> = (0..model.num_states).filter(|&s| pi.probs[s] > 0.0).collect();
    if class.is_empty() {
        return Err(Error::InvalidParams("stationary distribution has no mass".into()));
    }
    let mut local = vec![usize::MAX; model.num_states];
    for (i, &s) in class.iter().enumerate() {
        local[s] = i;
    }
    let size = class.len() * n;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut b = DVector::<f64>::zeros(size);
    for (i, &s) in class.iter().enumerate() {
        for k in 0..n {
            b[i * n + k] = f64::from(model.growth[s][k]) * pi.probs[s];
        }
    }
    for t in model.active() {
        let (src, dst) = (local[t.source], local[t.target]);
        if src == usize::MAX || dst == usize::MAX {
            continue;
        }
        for k in 0..n {
            a[(src * n + k, src * n + k)] += t.rate;
        }
        for (k, entry) in t.reset.iter().enumerate() {
            if let ResetEntry::Copy(j) = *entry {
                a[(dst * n + k, src * n + j)] -= t.rate;
            }
        }
    }
    let x = solve_guarded(a, &b, "correlation")?;

    let mut v = vec![vec![0.0; n]; model.num_states];
    for (i, &s) in class.iter().enumerate() {
        for k in 0..n {
            let value = x[i * n + k];
            // Roundoff can leave -1e-17 where the exact value is 0.
            v[s][k] = if value < 0.0 && value > -1e-12 { 0.0 } else { value };
        }
    }
    Ok(CorrelationVectors { v })
}

/// Average age of component 0: the sum of the first column of `v`.
pub fn average_aoi(v: &CorrelationVectors) -> f64 {
    v.v.iter().map(|row| row[0]).sum()
}

/// Stationary distribution, correlations and average age in one call.
pub fn solve_aoi(model: &ShsModel) -> Result<AoiSolution> {
    let pi = solve_stationary(model)?;
    let v = solve_correlations(model, &pi)?;
    let delta = average_aoi(&v);
    Ok(AoiSolution { pi, v, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ResetEntry::{Copy, Zero};

    fn two_state(forward: f64, backward: f64) -> ShsModel {
        ShsModel {
            num_states: 2,
            num_ages: 1,
            growth: vec![vec![1], vec![1]],
            transitions: vec![
                Transition::new(0, 1, forward, vec![Copy(0)]),
                Transition::new(1, 0, backward, vec![Zero]),
            ],
        }
    }

    /// Single-state LCFS-P M/M/1: age 0 at the monitor, age 1 in service.
    pub(crate) fn mm1(arrival: f64, service: f64) -> ShsModel {
        ShsModel {
            num_states: 1,
            num_ages: 2,
            growth: vec![vec![1, 1]],
            transitions: vec![
                Transition::new(0, 0, arrival, vec![Copy(0), Zero]),
                Transition::new(0, 0, service, vec![Copy(1), Copy(1)]),
            ],
        }
    }

    #[test]
    fn minimal_chain_validates() {
        assert!(validate_model(&two_state(1.0, 1.0)).is_empty());
    }

    #[test]
    fn absorbing_state_is_reducible() {
        let mut model = two_state(1.0, 1.0);
        model.transitions.pop();
        let report = validate_model(&model);
        assert!(report.is_reducible(), "{report}");
    }

    #[test]
    fn reports_dangling_indices_and_bad_rates() {
        let model = ShsModel {
            num_states: 2,
            num_ages: 2,
            growth: vec![vec![1, 1], vec![1, 2]],
            transitions: vec![
                Transition::new(0, 5, 1.0, vec![Copy(0), Zero]),
                Transition::new(1, 0, -1.0, vec![Copy(3), Zero]),
                Transition::new(1, 0, 1.0, vec![Zero]),
            ],
        };
        let report = validate_model(&model);
        let v = &report.violations;
        assert!(v.contains(&Violation::DanglingState {
            transition: 0,
            index: 5
        }));
        assert!(v.contains(&Violation::NonPositiveRate {
            transition: 1,
            rate: -1.0
        }));
        assert!(v.contains(&Violation::DanglingAge {
            transition: 1,
            position: 0,
            index: 3
        }));
        assert!(v.contains(&Violation::ResetLength { transition: 2, len: 1 }));
        assert!(v.contains(&Violation::NonBinaryGrowth { state: 1, age: 1 }));
    }

    #[test]
    fn two_state_birth_death() {
        let pi = solve_stationary(&two_state(1.0, 3.0)).unwrap();
        assert!((pi.probs[0] - 0.75).abs() < 1e-14);
        assert!((pi.probs[1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn mm1_hand_solution() {
        // v0 = 1/lambda + 1/mu, v1 = 1/lambda with pi = 1.
        let sol = solve_aoi(&mm1(1.0, 1.0)).unwrap();
        assert!((sol.v.v[0][0] - 2.0).abs() < 1e-12);
        assert!((sol.v.v[0][1] - 1.0).abs() < 1e-12);
        assert!((sol.delta - 2.0).abs() < 1e-12);

        let sol = solve_aoi(&mm1(2.0, 4.0)).unwrap();
        assert!((sol.delta - 0.75).abs() < 1e-12);
    }

    #[test]
    fn transient_states_get_zero_mass() {
        // State 0 leaks into the closed pair {1, 2}.
        let model = ShsModel {
            num_states: 3,
            num_ages: 2,
            growth: vec![vec![1, 1]; 3],
            transitions: vec![
                Transition::new(0, 1, 1.0, vec![Copy(0), Zero]),
                Transition::new(1, 2, 1.0, vec![Copy(0), Zero]),
                Transition::new(2, 1, 1.0, vec![Copy(1), Copy(1)]),
                Transition::new(2, 0, 0.0, vec![Copy(0), Copy(1)]),
            ],
        };
        assert!(validate_model(&model)
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NonPositiveRate { .. })));
        let sol = solve_aoi(&model).unwrap();
        assert_eq!(sol.pi.probs[0], 0.0);
        assert!((sol.pi.probs[1] - 0.5).abs() < 1e-14);
        assert_eq!(sol.v.v[0], vec![0.0, 0.0]);
    }

    #[test]
    fn two_reachable_closed_classes_are_singular() {
        let model = ShsModel {
            num_states: 3,
            num_ages: 1,
            growth: vec![vec![1]; 3],
            transitions: vec![
                Transition::new(0, 1, 1.0, vec![Zero]),
                Transition::new(0, 2, 1.0, vec![Zero]),
                Transition::new(1, 1, 1.0, vec![Zero]),
                Transition::new(2, 2, 1.0, vec![Zero]),
            ],
        };
        assert!(matches!(solve_stationary(&model), Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn closed_classes_unreachable_from_state_zero_are_ignored() {
        let model = ShsModel {
            num_states: 2,
            num_ages: 1,
            growth: vec![vec![1], vec![1]],
            transitions: vec![
                Transition::new(0, 0, 2.0, vec![Zero]),
                Transition::new(1, 1, 1.0, vec![Zero]),
            ],
        };
        assert!(validate_model(&model).is_reducible());
        let sol = solve_aoi(&model).unwrap();
        assert_eq!(sol.pi.probs, vec![1.0, 0.0]);
        assert!((sol.delta - 0.5).abs() < 1e-14);
    }

    #[test]
    fn age_that_never_resets_is_singular() {
        let model = ShsModel {
            num_states: 1,
            num_ages: 1,
            growth: vec![vec![1]],
            transitions: vec![Transition::new(0, 0, 1.0, vec![Copy(0)])],
        };
        let pi = solve_stationary(&model).unwrap();
        assert!(matches!(
            solve_correlations(&model, &pi),
            Err(Error::SingularSystem {
                system: "correlation",
                ..
            })
        ));
    }

    #[test]
    fn json_round_trip_uses_z_for_zero() {
        let model = mm1(1.0, 2.0);
        let text = model.to_json();
        assert!(text.contains("\"z\""));
        assert_eq!(ShsModel::from_json(&text).unwrap(), model);
    }

    #[test]
    fn parses_documented_schema() {
        let text = r#"{"num_states": 1, "num_ages": 2, "growth": [[1, 1]],
            "transitions": [
              {"source": 0, "target": 0, "rate": 2.0, "reset": [0, "z"]},
              {"source": 0, "target": 0, "rate": 4.0, "reset": [1, 1]}]}"#;
        let model = ShsModel::from_json(text).unwrap();
        assert_eq!(model, mm1(2.0, 4.0));
        assert!(ShsModel::from_json(
            r#"{"num_states": 1, "num_ages": 1, "growth": [[1]],
            "transitions": [{"source": 0, "target": 0, "rate": 1, "reset": ["q"]}]}"#
        )
        .is_err());
    }
}
