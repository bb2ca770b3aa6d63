#![allow(dead_code)]

use std::path::Path;

use mec_aoi::mec::{build_mec_shs, DeviceParams, EsEnvironment, Policy};
use mec_aoi::shs::{AoiSolution, ResetEntry, ShsModel};
use nalgebra::DMatrix;

pub fn gallery() -> Vec<(String, ShsModel)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/gallery");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .expect("gallery directory")
        .map(|e| e.expect("gallery entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).expect("gallery file");
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, ShsModel::from_json(&text).expect("gallery model parses"))
        })
        .collect()
}

/// Offloading-network models over a spread of policies and loads,
/// including the boundary routing probabilities.
pub fn mec_instances() -> Vec<(String, ShsModel)> {
    let mut out = Vec::new();
    for &lambda in &[0.5, 2.5, 10.0] {
        for &p in &[0.0, 0.3, 0.5, 1.0] {
            for &(mu_local, mu_tx) in &[(0.3, 1.0), (2.0, 0.5)] {
                for &(exo, es) in &[(0.0, 10.0), (1.0, 10.0), (40.0, 50.0)] {
                    let policy = Policy::new(p, mu_local, mu_tx);
                    let model = build_mec_shs(&policy, lambda, &EsEnvironment::new(exo, es)).unwrap();
                    let name = format!("mec lambda={lambda} p={p} mu_local={mu_local} mu_tx={mu_tx} exo={exo} es={es}");
                    out.push((name, model));
                }
            }
        }
    }
    out
}

/// Binary matrix `A` with `x' = x A` for a reset map.
pub fn reset_matrix(reset: &[ResetEntry], n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for (k, entry) in reset.iter().enumerate() {
        if let ResetEntry::Copy(j) = entry {
            a[(*j, k)] = 1.0;
        }
    }
    a
}

/// Largest violation of `v_s * out_s = u_s pi_s + sum_in q v_src A`,
/// assembled with explicit matrices.
pub fn matrix_correlation_residual(model: &ShsModel, sol: &AoiSolution) -> f64 {
    let n = model.num_ages;
    let m = model.num_states;
    let row = |s: usize| DMatrix::from_row_slice(1, n, &sol.v.v[s]);
    let mut lhs: Vec<DMatrix<f64>> = (0..m).map(|_| DMatrix::zeros(1, n)).collect();
    let mut rhs: Vec<DMatrix<f64>> = (0..m)
        .map(|s| {
            let u: Vec<f64> = model.growth[s].iter().map(|&g| g as f64 * sol.pi.probs[s]).collect();
            DMatrix::from_row_slice(1, n, &u)
        })
        .collect();
    for t in model.transitions.iter().filter(|t| t.rate > 0.0) {
        lhs[t.source] += row(t.source) * t.rate;
        rhs[t.target] += row(t.source) * reset_matrix(&t.reset, n) * t.rate;
    }
    (0..m).map(|s| (&lhs[s] - &rhs[s]).amax()).fold(0.0, f64::max)
}

/// The single-type parameter set used for the load-response experiments.
pub fn reference_device() -> DeviceParams {
    DeviceParams::new(2.5, 5.0, 10.0, 1.0, 0.3)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
