use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mec_aoi::des::{simulate_device, simulate_population, trace_device};
use mec_aoi::game::{
    allocate_types, best_response_dynamics, exploitability_of_mfe, finite_cost, mfe_profile, write_exploitability_csv,
    Profile,
};
use mec_aoi::mec::{
    device_aoi, finite_n_aoi, mean_field_cost, mf_aoi_closed_form, tx_throughput, DeviceParams, EsEnvironment, Policy,
    SystemParams,
};
use mec_aoi::mfe::{best_policy_with_cost, solve_mfe, write_iteration_log, MfEquilibrium, TypeSet};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Mode, SweepParameter, SweepSolve};
use crate::CliError;

/// ES rate used to emulate the mean-field limit with the chain solver.
pub const MEAN_FIELD_ES_RATE: f64 = 1e6;

/// Files produced by a run, held in memory until the run has finished.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
    /// Descriptions of solvers that hit their iteration caps.
    pub unconverged: Vec<String>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.add(name, text.into_bytes());
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn solver(e: mec_aoi::Error) -> CliError {
    CliError::Solver(e.to_string())
}

/// Runs the configured experiment; nothing touches the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    let mut out = Artifacts::default();
    match cfg.mode() {
        Mode::Aoi => aoi(cfg, &mut out)?,
        Mode::Simulate => simulate(cfg, &mut out)?,
        Mode::Mfe => mfe(cfg, &mut out)?,
        Mode::Nash => nash(cfg, &mut out)?,
        Mode::Sweep => sweep(cfg, &mut out)?,
    }
    out.json("resolved_config.json", cfg);
    Ok(out)
}

fn aoi(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let policy = cfg.policy.expect("validated");
    let env = cfg
        .environment
        .unwrap_or_else(|| EsEnvironment::from_load(cfg.rho, MEAN_FIELD_ES_RATE));
    let mut csv = String::from("type,lambda,rho,exo_rate,es_rate,closed_form,shs,rel_gap\n");
    for (t, params) in cfg.types.iter().enumerate() {
        let closed = mf_aoi_closed_form(&policy, params.lambda, cfg.rho).map_err(solver)?;
        let shs = device_aoi(&policy, params.lambda, &env).map_err(solver)?;
        let gap = (closed - shs).abs() / shs;
        writeln!(
            csv,
            "{t},{},{},{},{},{closed},{shs},{gap}",
            params.lambda, cfg.rho, env.exo_rate, env.es_rate
        )
        .unwrap();
        out.summary
            .push(format!("type {t}: closed form {closed:.6}, chain solver {shs:.6}"));
    }
    out.add("aoi.csv", csv.into_bytes());
    Ok(())
}

/// Type index of each device under largest-remainder allocation.
fn device_types(types: &TypeSet, n: usize) -> Vec<usize> {
    allocate_types(&types.weights, n)
        .iter()
        .enumerate()
        .flat_map(|(t, &count)| std::iter::repeat_n(t, count))
        .collect()
}

fn simulate(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let policy = cfg.policy.expect("validated");
    let mut csv =
        String::from("device,type,lambda,mean,ci_half_width,events,class1_arrivals,class1_deliveries,analytic\n");
    match cfg.n {
        Some(n) => {
            let types = cfg.type_set()?;
            let assignment = device_types(&types, n);
            let lambdas: Vec<f64> = assignment.iter().map(|&t| cfg.types[t].lambda).collect();
            let policies = vec![policy; n];
            let sys = SystemParams::new(n, cfg.mu3);
            let estimates = simulate_population(&policies, &lambdas, &sys, &cfg.sim).map_err(solver)?;
            for (i, est) in estimates.iter().enumerate() {
                let analytic = finite_n_aoi(&policies, &lambdas, i, &sys).map_err(solver)?;
                writeln!(
                    csv,
                    "{i},{},{},{},{},{},{},{},{analytic}",
                    assignment[i],
                    lambdas[i],
                    est.mean,
                    est.ci_half_width,
                    est.events,
                    est.class1_arrivals,
                    est.class1_deliveries
                )
                .unwrap();
            }
            let mean = estimates.iter().map(|e| e.mean).sum::<f64>() / n as f64;
            out.summary.push(format!("{n} devices, mean simulated age {mean:.6}"));
        }
        None => {
            let env = cfg.environment.expect("validated");
            let lambda = cfg.types[0].lambda;
            let est = simulate_device(&policy, lambda, &env, &cfg.sim).map_err(solver)?;
            let analytic = device_aoi(&policy, lambda, &env).map_err(solver)?;
            writeln!(
                csv,
                "0,0,{lambda},{},{},{},{},{},{analytic}",
                est.mean, est.ci_half_width, est.events, est.class1_arrivals, est.class1_deliveries
            )
            .unwrap();
            out.summary.push(format!(
                "simulated age {:.6} +- {:.6}, chain solver {analytic:.6}",
                est.mean, est.ci_half_width
            ));
            if cfg.trace {
                let mut trace = Vec::new();
                trace_device(&policy, lambda, &env, &cfg.sim, 0, &mut trace).map_err(solver)?;
                out.add("trace.csv", trace);
            }
        }
    }
    out.add("simulate.csv", csv.into_bytes());
    Ok(())
}

#[derive(Serialize)]
struct EquilibriumSummary<'a> {
    rho: f64,
    policies: &'a [Policy],
    costs: Vec<f64>,
    aoi: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
    gamma: f64,
    mu3: f64,
}

fn summarize<'a>(eq: &'a MfEquilibrium, types: &TypeSet) -> Result<EquilibriumSummary<'a>, CliError> {
    let mut costs = Vec::new();
    let mut aoi = Vec::new();
    for (policy, params) in eq.policies.iter().zip(&types.types) {
        costs.push(mean_field_cost(policy, params, eq.rho).map_err(solver)?);
        aoi.push(mf_aoi_closed_form(policy, params.lambda, eq.rho).map_err(solver)?);
    }
    Ok(EquilibriumSummary {
        rho: eq.rho,
        policies: &eq.policies,
        costs,
        aoi,
        residual: eq.residual,
        iterations: eq.iterations,
        converged: eq.converged,
        gamma: eq.gamma,
        mu3: eq.mu3,
    })
}

fn equilibrium(cfg: &ExperimentConfig, types: &TypeSet, out: &mut Artifacts) -> Result<MfEquilibrium, CliError> {
    let eq = solve_mfe(types, cfg.mu3, &cfg.opt, &cfg.algo).map_err(solver)?;
    if !eq.converged {
        out.unconverged.push(format!(
            "mean-field iteration stopped after {} iterations with residual {:e}",
            eq.iterations, eq.residual
        ));
    }
    Ok(eq)
}

fn mfe(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let types = cfg.type_set()?;
    let eq = equilibrium(cfg, &types, out)?;
    out.json("mfe.json", &summarize(&eq, &types)?);
    let mut log = Vec::new();
    write_iteration_log(&eq, &mut log)?;
    out.add("mfe_iterations.csv", log);
    out.summary.push(format!(
        "rho {:.6} after {} iterations (converged: {})",
        eq.rho, eq.iterations, eq.converged
    ));
    Ok(())
}

#[derive(Serialize)]
struct NashSummary<'a> {
    converged: bool,
    sweeps: usize,
    max_changes: &'a [f64],
    start: &'static str,
}

fn nash(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let n = cfg.n.expect("validated");
    let types = cfg.type_set()?;
    let needs_mfe = cfg.policy.is_none() || !cfg.nash.exploitability_n.is_empty();
    let eq = if needs_mfe {
        Some(equilibrium(cfg, &types, out)?)
    } else {
        None
    };

    let (start, params, origin) = match cfg.policy {
        Some(policy) => {
            let params: Vec<DeviceParams> = device_types(&types, n).iter().map(|&t| cfg.types[t].clone()).collect();
            let lambdas = params.iter().map(|p| p.lambda).collect();
            let profile = Profile::new(vec![policy; n], lambdas, SystemParams::new(n, cfg.mu3)).map_err(solver)?;
            (profile, params, "policy")
        }
        None => {
            let (profile, params) = mfe_profile(eq.as_ref().expect("solved above"), &types, n).map_err(solver)?;
            (profile, params, "mfe")
        }
    };

    let outcome = best_response_dynamics(&start, &params, &cfg.opt, cfg.nash.max_sweeps).map_err(solver)?;
    if !outcome.converged {
        out.unconverged.push(format!(
            "best-response dynamics did not settle in {} sweeps",
            outcome.sweeps
        ));
    }
    let assignment = device_types(&types, n);
    let mut csv = String::from("device,type,lambda,p_local,mu_local,mu_tx,cost,aoi\n");
    for i in 0..n {
        let p = &outcome.profile.policies[i];
        let cost = finite_cost(i, &outcome.profile, &params[i]).map_err(solver)?;
        let aoi = finite_n_aoi(
            &outcome.profile.policies,
            &outcome.profile.lambdas,
            i,
            &outcome.profile.sys,
        )
        .map_err(solver)?;
        writeln!(
            csv,
            "{i},{},{},{},{},{},{cost},{aoi}",
            assignment[i], params[i].lambda, p.p_local, p.mu_local, p.mu_tx
        )
        .unwrap();
    }
    out.add("nash.csv", csv.into_bytes());
    out.json(
        "nash.json",
        &NashSummary {
            converged: outcome.converged,
            sweeps: outcome.sweeps,
            max_changes: &outcome.max_changes,
            start: origin,
        },
    );
    out.summary.push(format!(
        "{n} devices: {} sweeps (converged: {})",
        outcome.sweeps, outcome.converged
    ));

    if let Some(eq) = &eq {
        if !cfg.nash.exploitability_n.is_empty() {
            let rows = cfg
                .nash
                .exploitability_n
                .iter()
                .map(|&size| exploitability_of_mfe(eq, &types, size, &cfg.opt).map(|r| (size, r)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(solver)?;
            let mut csv = Vec::new();
            write_exploitability_csv(&rows, &mut csv)?;
            out.add("exploitability.csv", csv);
        }
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let axis = cfg.sweep.as_ref().expect("validated");
    let name = axis.parameter.name();
    let points: Vec<ExperimentConfig> = axis
        .values
        .iter()
        .map(|&v| cfg.with_sweep_value(axis.parameter, v))
        .collect::<Result<_, _>>()?;

    let mut csv = String::new();
    match axis.solve {
        SweepSolve::BestResponse => {
            if axis.parameter == SweepParameter::Rho {
                csv.push_str("rho,p_opt,mu_local_opt,mu_tx_opt,cost,aoi\n");
            } else {
                writeln!(csv, "{name},rho,p_opt,mu_local_opt,mu_tx_opt,cost,aoi").unwrap();
            }
            let rows: Vec<Result<String, CliError>> = points
                .par_iter()
                .zip(axis.values.par_iter())
                .map(|(point, &value)| {
                    let params = &point.types[0];
                    let (policy, cost) = best_policy_with_cost(params, point.rho, &point.opt);
                    let aoi = mf_aoi_closed_form(&policy, params.lambda, point.rho).map_err(solver)?;
                    let lead = if axis.parameter == SweepParameter::Rho {
                        format!("{value}")
                    } else {
                        format!("{value},{}", point.rho)
                    };
                    Ok(format!(
                        "{lead},{},{},{},{cost},{aoi}\n",
                        policy.p_local, policy.mu_local, policy.mu_tx
                    ))
                })
                .collect();
            for row in rows {
                csv.push_str(&row?);
            }
        }
        SweepSolve::Mfe => {
            writeln!(
                csv,
                "{name},rho_mfe,p_mfe,mu_local_mfe,mu_tx_mfe,tx_throughput,cost,aoi,iterations,converged"
            )
            .unwrap();
            let rows: Vec<Result<(String, bool), CliError>> = points
                .par_iter()
                .zip(axis.values.par_iter())
                .map(|(point, &value)| {
                    let types = point.type_set()?;
                    let eq = solve_mfe(&types, point.mu3, &point.opt, &point.algo).map_err(solver)?;
                    let params = &point.types[0];
                    let policy = eq.policies[0];
                    let cost = mean_field_cost(&policy, params, eq.rho).map_err(solver)?;
                    let aoi = mf_aoi_closed_form(&policy, params.lambda, eq.rho).map_err(solver)?;
                    let row = format!(
                        "{value},{},{},{},{},{},{cost},{aoi},{},{}\n",
                        eq.rho,
                        policy.p_local,
                        policy.mu_local,
                        policy.mu_tx,
                        tx_throughput(&policy, params.lambda),
                        eq.iterations,
                        eq.converged
                    );
                    Ok((row, eq.converged))
                })
                .collect();
            for (row, &value) in rows.into_iter().zip(&axis.values) {
                let (row, converged) = row?;
                if !converged {
                    out.unconverged
                        .push(format!("equilibrium at {name}={value} did not converge"));
                }
                csv.push_str(&row);
            }
        }
    }
    out.summary.push(format!("{} points over {name}", axis.values.len()));
    out.add("sweep.csv", csv.into_bytes());
    Ok(())
}
