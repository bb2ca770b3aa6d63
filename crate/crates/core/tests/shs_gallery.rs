mod common;

use common::{gallery, matrix_correlation_residual, mec_instances, rel};
use mec_aoi::mec::{build_mec_shs, EsEnvironment, Policy};
use mec_aoi::shs::{solve_aoi, validate_model, ShsModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_models() -> Vec<(String, ShsModel)> {
    let mut models = gallery();
    models.extend(mec_instances());
    models
}

#[test]
fn gallery_solutions_are_well_formed() {
    for (name, model) in all_models() {
        let sol = solve_aoi(&model).unwrap_or_else(|e| panic!("{name}: {e}"));
        let sum: f64 = sol.pi.probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "{name}: sum {sum}");
        assert!(sol.pi.probs.iter().all(|&p| p >= 0.0), "{name}");
        assert!(sol.pi.balance_residual(&model) <= 1e-10, "{name}");
        assert!(sol.v.v.iter().flatten().all(|&x| x >= 0.0), "{name}");
        assert!(sol.delta.is_finite() && sol.delta > 0.0, "{name}");
        let column: f64 = sol.v.v.iter().map(|row| row[0]).sum();
        assert_eq!(sol.delta, column, "{name}");
    }
}

#[test]
fn correlation_equations_hold_under_explicit_matrices() {
    for (name, model) in all_models() {
        let sol = solve_aoi(&model).unwrap();
        let r = matrix_correlation_residual(&model, &sol);
        assert!(r <= 1e-10, "{name}: residual {r}");
        assert!(sol.v.residual(&model, &sol.pi) <= 1e-10, "{name}");
    }
}

#[test]
fn interior_gallery_models_validate() {
    for (name, model) in gallery() {
        assert!(validate_model(&model).is_empty(), "{name}");
    }
    let model = build_mec_shs(&Policy::new(0.5, 0.3, 1.0), 2.5, &EsEnvironment::new(1.0, 10.0)).unwrap();
    assert!(validate_model(&model).is_empty());
}

#[test]
fn preemptive_servers_in_series_add_mean_times() {
    let models = gallery();
    let get = |name: &str| &models.iter().find(|(n, _)| n == name).unwrap().1;
    let single = solve_aoi(get("lcfs_single")).unwrap().delta;
    assert!((single - 2.0).abs() <= 1e-12);
    let idle_busy = solve_aoi(get("lcfs_idle_busy")).unwrap().delta;
    assert!((idle_busy - 0.75).abs() <= 1e-12);
    let tandem = solve_aoi(get("tandem_two_hop")).unwrap().delta;
    assert!(rel(tandem, 1.0 / 1.5 + 1.0 / 2.0 + 1.0 / 0.5) <= 1e-12);
}

#[test]
fn occupancy_matches_simulated_chain() {
    let model = build_mec_shs(&Policy::new(0.5, 0.3, 1.0), 2.5, &EsEnvironment::new(1.0, 10.0)).unwrap();
    let pi = solve_aoi(&model).unwrap().pi.probs;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let out = model.outgoing_rates();
    let mut time_in = vec![0.0; model.num_states];
    let mut state = 0;
    let horizon = 2e5;
    let mut t = 0.0;
    while t < horizon {
        let hold = -(1.0 - rng.random::<f64>()).ln() / out[state];
        time_in[state] += hold.min(horizon - t);
        t += hold;
        let mut pick = rng.random::<f64>() * out[state];
        for tr in model.transitions.iter().filter(|tr| tr.source == state) {
            pick -= tr.rate;
            if pick <= 0.0 {
                state = tr.target;
                break;
            }
        }
    }
    for s in 0..model.num_states {
        let occupancy = time_in[s] / horizon;
        assert!((occupancy - pi[s]).abs() <= 5e-3, "state {s}: {occupancy} vs {}", pi[s]);
    }
}

fn mec_strategy() -> impl Strategy<Value = ShsModel> {
    (
        0.1f64..10.0,
        0.0f64..=1.0,
        0.01f64..5.0,
        0.01f64..5.0,
        0.0f64..20.0,
        0.5f64..50.0,
    )
        .prop_map(|(lambda, p, mu_local, mu_tx, exo, es)| {
            build_mec_shs(&Policy::new(p, mu_local, mu_tx), lambda, &EsEnvironment::new(exo, es)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_states_leaves_age_unchanged(model in mec_strategy(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..model.num_states).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let base = solve_aoi(&model).unwrap().delta;
        let relabeled = solve_aoi(&model.permuted(&perm)).unwrap().delta;
        prop_assert!(rel(relabeled, base) <= 1e-12, "{} vs {}", relabeled, base);
    }

    #[test]
    fn rescaling_time_scales_age_inversely(model in mec_strategy(), c in 0.1f64..10.0) {
        let base = solve_aoi(&model).unwrap().delta;
        let scaled = solve_aoi(&model.scaled(c)).unwrap().delta;
        prop_assert!(rel(scaled, base / c) <= 1e-10);
    }

    #[test]
    fn solutions_are_nonnegative(model in mec_strategy()) {
        let sol = solve_aoi(&model).unwrap();
        prop_assert!(sol.pi.probs.iter().all(|&p| p >= 0.0));
        prop_assert!(sol.v.v.iter().flatten().all(|&x| x >= 0.0));
        prop_assert!(sol.pi.balance_residual(&model) <= 1e-10);
    }
}
