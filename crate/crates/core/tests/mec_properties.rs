mod common;

use common::rel;
use mec_aoi::mec::{
    device_aoi, exogenous_rate, finite_n_aoi, mf_aoi_closed_form, tx_throughput, EsEnvironment, Policy, SystemParams,
};
use proptest::prelude::*;

const LAMBDAS: [f64; 4] = [0.5, 1.0, 2.5, 5.0];
const PS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
const RATES: [f64; 3] = [0.3, 1.0, 3.0];
const RHOS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

fn closed(p: f64, mu_local: f64, mu_tx: f64, lambda: f64, rho: f64) -> f64 {
    mf_aoi_closed_form(&Policy::new(p, mu_local, mu_tx), lambda, rho).unwrap()
}

#[test]
fn age_is_monotone_on_the_sample_grid() {
    for &lambda in &LAMBDAS {
        for &p in &PS {
            for &rho in &RHOS {
                for &other in &RATES {
                    for w in RATES.windows(2) {
                        let slow = closed(p, w[0], other, lambda, rho);
                        let fast = closed(p, w[1], other, lambda, rho);
                        assert!(fast <= slow, "mu_local {w:?} at lambda={lambda} p={p} rho={rho}");
                        let slow = closed(p, other, w[0], lambda, rho);
                        let fast = closed(p, other, w[1], lambda, rho);
                        assert!(fast <= slow, "mu_tx {w:?} at lambda={lambda} p={p} rho={rho}");
                    }
                }
            }
            for &mu_local in &RATES {
                for &mu_tx in &RATES {
                    for w in RHOS.windows(2) {
                        let light = closed(p, mu_local, mu_tx, lambda, w[0]);
                        let heavy = closed(p, mu_local, mu_tx, lambda, w[1]);
                        assert!(heavy >= light, "rho {w:?}");
                    }
                    assert!(closed(p, mu_local, mu_tx, lambda, 1.0) > closed(p, mu_local, mu_tx, lambda, 0.0));
                }
            }
        }
    }
}

fn symmetric_gap(n: usize, policy: Policy, lambda: f64, mu3: f64) -> f64 {
    let sys = SystemParams::new(n, mu3);
    let finite = finite_n_aoi(&vec![policy; n], &vec![lambda; n], 0, &sys).unwrap();
    let rho_n = (n - 1) as f64 * tx_throughput(&policy, lambda) / sys.es_rate();
    let limit = mf_aoi_closed_form(&policy, lambda, rho_n).unwrap();
    rel(finite, limit)
}

#[test]
fn finite_population_approaches_mean_field() {
    let policy = Policy::new(0.5, 0.3, 1.0);
    let gaps: Vec<f64> = [10, 100, 1000]
        .iter()
        .map(|&n| symmetric_gap(n, policy, 2.5, 1.0))
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] <= 1e-2, "{gaps:?}");
}

#[test]
fn large_population_is_close_for_other_policies() {
    for &(p, mu_local, mu_tx, lambda) in &[(0.2, 0.3, 1.0, 2.5), (0.7, 1.0, 0.5, 1.0), (0.5, 3.0, 3.0, 5.0)] {
        let gap = symmetric_gap(1000, Policy::new(p, mu_local, mu_tx), lambda, 1.0);
        assert!(gap <= 1e-2, "p={p}: {gap}");
    }
}

#[test]
fn isolated_device_needs_no_exogenous_traffic() {
    let policy = Policy::new(0.4, 0.5, 1.0);
    assert_eq!(exogenous_rate(&[policy], &[2.0], 0), 0.0);
    let one = finite_n_aoi(&[policy], &[2.0], 0, &SystemParams::new(1, 3.0)).unwrap();
    let direct = device_aoi(&policy, 2.0, &EsEnvironment::new(0.0, 3.0)).unwrap();
    assert_eq!(one, direct);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn local_only_age_ignores_load(lambda in 0.05f64..20.0, mu_local in 0.01f64..10.0, mu_tx in 0.01f64..10.0) {
        let expected = 1.0 / lambda + 1.0 / mu_local;
        for rho in [0.0, 1.0, 10.0] {
            let delta = closed(1.0, mu_local, mu_tx, lambda, rho);
            prop_assert!((delta - expected).abs() <= 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn doubling_every_rate_halves_finite_age(
        n in 1usize..6,
        p in 0.0f64..=1.0,
        mu_local in 0.05f64..3.0,
        mu_tx in 0.05f64..3.0,
        lambda in 0.1f64..5.0,
        mu3 in 0.1f64..5.0,
    ) {
        let policy = Policy::new(p, mu_local, mu_tx);
        let base = finite_n_aoi(&vec![policy; n], &vec![lambda; n], 0, &SystemParams::new(n, mu3)).unwrap();
        let fast = Policy::new(p, 2.0 * mu_local, 2.0 * mu_tx);
        let scaled = finite_n_aoi(&vec![fast; n], &vec![2.0 * lambda; n], 0, &SystemParams::new(n, 2.0 * mu3)).unwrap();
        prop_assert!(rel(scaled, base / 2.0) <= 1e-10);
    }

    #[test]
    fn closed_form_tracks_engine_at_fast_server(
        lambda in 0.2f64..8.0,
        p in 0.05f64..0.95,
        mu_local in 0.1f64..4.0,
        mu_tx in 0.1f64..4.0,
        rho in 0.0f64..3.0,
    ) {
        let policy = Policy::new(p, mu_local, mu_tx);
        let engine = device_aoi(&policy, lambda, &EsEnvironment::from_load(rho, 1e6)).unwrap();
        let formula = mf_aoi_closed_form(&policy, lambda, rho).unwrap();
        prop_assert!(rel(formula, engine) <= 1e-3);
    }
}
