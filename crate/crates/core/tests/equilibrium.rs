mod common;

use common::reference_device;
use mec_aoi::game::{best_response_dynamics, exploitability_of_mfe, finite_cost, Profile};
use mec_aoi::mec::{mean_field_cost, DeviceParams, Policy, SystemParams};
use mec_aoi::mfe::{best_policy, consistency_map, solve_mfe, AlgoConfig, TypeSet};
use mec_aoi::optimize::OptConfig;

#[test]
fn equilibrium_is_self_consistent_and_feasible() {
    let params = reference_device();
    let types = TypeSet::single(params.clone());
    let opt = OptConfig::default();
    let algo = AlgoConfig::default();
    let eq = solve_mfe(&types, 1.0, &opt, &algo).unwrap();
    assert!(eq.converged && eq.residual < algo.epsilon);
    for record in &eq.history {
        assert!(
            record.policies.iter().all(|p| p.is_feasible(&params)),
            "iteration {}",
            record.k
        );
    }
    let again = best_policy(&params, eq.rho, &opt);
    let regenerated = consistency_map(&[again], &types, 1.0);
    assert!(
        (regenerated - eq.rho).abs() <= algo.epsilon / eq.gamma,
        "{regenerated} vs {}",
        eq.rho
    );
}

#[test]
fn two_type_equilibrium_weights_contributions() {
    let heavy = DeviceParams::new(5.0, 0.5, 10.0, 1.0, 0.3);
    let light = DeviceParams::new(1.0, 0.5, 10.0, 1.0, 0.3);
    let types = TypeSet::new(vec![heavy, light], vec![0.25, 0.75]).unwrap();
    let eq = solve_mfe(&types, 1.0, &OptConfig::default(), &AlgoConfig::default()).unwrap();
    assert!(eq.converged);
    assert_eq!(eq.policies.len(), 2);
    let bound = 0.25 * 5.0 + 0.75 * 1.0;
    assert!(eq.rho >= 0.0 && eq.rho <= bound);
}

#[test]
fn symmetric_dynamics_settle_with_shrinking_steps() {
    let n = 5;
    let params = vec![reference_device(); n];
    let cfg = OptConfig::default();
    let start = Profile::symmetric(Policy::new(0.5, 0.15, 0.5), 2.5, SystemParams::new(n, 1.0));
    let outcome = best_response_dynamics(&start, &params, &cfg, 50).unwrap();
    assert!(outcome.converged, "{:?}", outcome.max_changes);
    let tail = &outcome.max_changes[outcome.max_changes.len().saturating_sub(3)..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{:?}", outcome.max_changes);

    let restart = best_response_dynamics(&outcome.profile, &params, &cfg, 5).unwrap();
    assert!(restart.converged);
    assert_eq!(restart.sweeps, 1);
    assert_eq!(restart.profile, outcome.profile);
}

#[test]
fn mean_field_policy_gains_are_nonnegative() {
    let params = reference_device();
    let types = TypeSet::single(params.clone());
    let cfg = OptConfig::default();
    let eq = solve_mfe(&types, 1.0, &cfg, &AlgoConfig::default()).unwrap();
    let report = exploitability_of_mfe(&eq, &types, 20, &cfg).unwrap();
    assert_eq!(report.per_device_gain.len(), 20);
    assert!(report.per_device_gain.iter().all(|&g| g >= -cfg.refine_tolerance));
    assert!(report.max_gain >= report.mean_gain);

    // In a huge population the finite cost tends to the mean-field cost.
    let profile = Profile::symmetric(eq.policies[0], params.lambda, SystemParams::new(2000, 1.0));
    let finite = finite_cost(0, &profile, &params).unwrap();
    let limit = mean_field_cost(&eq.policies[0], &params, eq.rho).unwrap();
    assert!((finite - limit).abs() / limit <= 1e-2);
}
