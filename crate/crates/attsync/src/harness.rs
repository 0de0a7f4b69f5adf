//! Batch studies and verification tooling behind the CLI: Monte Carlo basin
//! probes, finite-difference gradient checks, parameter-feasibility reports,
//! and the bundled reference scenarios.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ScenarioConfig};
use crate::controllers;
use crate::engine::{self, SystemState};
use crate::plant;
use crate::potential;
use crate::so3;
use crate::topology::OrientedTree;

/// Bundled scenario names, resolvable anywhere a config path is accepted.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "seven_sat_hybrid",
        include_str!("../scenarios/seven_sat_hybrid.toml"),
    ),
    (
        "seven_sat_continuous",
        include_str!("../scenarios/seven_sat_continuous.toml"),
    ),
    (
        "seven_sat_vfree",
        include_str!("../scenarios/seven_sat_vfree.toml"),
    ),
    (
        "seven_sat_kw_zero",
        include_str!("../scenarios/seven_sat_kw_zero.toml"),
    ),
];

pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Loads a config from a bundled scenario name or a filesystem path.
pub fn load_config(name_or_path: &str) -> Result<ScenarioConfig, ConfigError> {
    match bundled_scenario(name_or_path) {
        Some(text) => ScenarioConfig::from_toml(text),
        None => ScenarioConfig::from_path(std::path::Path::new(name_or_path)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: usize,
    pub seed: u64,
    pub converged: bool,
    pub t_converge: Option<f64>,
    pub jumps: u64,
    pub final_max_dist_sq: f64,
    /// For non-converged trials: largest over edges of the distance to the
    /// closest enumerated undesired critical rotation.
    pub nearest_equilibrium_distance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub master_seed: u64,
    pub converged_count: usize,
    pub converged_fraction: f64,
    pub max_jumps: u64,
    pub worst_t_converge: Option<f64>,
    pub guard_trips: usize,
    pub per_trial: Vec<TrialSummary>,
}

/// Runs `trials` independent simulations from Haar-random initial attitudes
/// at rest (per-trial seed = master seed + index). Deterministic under a
/// fixed master seed; trials execute in parallel.
pub fn montecarlo(
    cfg: &ScenarioConfig,
    trials: usize,
    master_seed: u64,
) -> Result<MonteCarloReport, ConfigError> {
    let base = cfg.to_run_spec()?; // validate once up front
    let per_trial: Vec<TrialSummary> = (0..trials)
        .into_par_iter()
        .map(|index| {
            let seed = master_seed.wrapping_add(index as u64);
            let mut spec = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<Matrix3<f64>> = (0..spec.tree.n_agents())
                .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
                .collect();
            spec.initial = SystemState::at_rest(r, &spec.tree, spec.kind);
            match engine::run(&spec) {
                Ok(rec) => {
                    let s = &rec.summary;
                    TrialSummary {
                        index,
                        seed,
                        converged: s.converged,
                        t_converge: s.t_converge,
                        jumps: s.jumps,
                        final_max_dist_sq: s.final_max_dist_sq,
                        nearest_equilibrium_distance: s.nearest_equilibrium,
                        error: None,
                    }
                }
                Err(e) => TrialSummary {
                    index,
                    seed,
                    converged: false,
                    t_converge: None,
                    jumps: 0,
                    final_max_dist_sq: f64::NAN,
                    nearest_equilibrium_distance: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let converged_count = per_trial.iter().filter(|t| t.converged).count();
    let guard_trips = per_trial.iter().filter(|t| t.error.is_some()).count();
    Ok(MonteCarloReport {
        trials,
        master_seed,
        converged_count,
        converged_fraction: if trials == 0 {
            0.0
        } else {
            converged_count as f64 / trials as f64
        },
        max_jumps: per_trial.iter().map(|t| t.jumps).max().unwrap_or(0),
        worst_t_converge: per_trial
            .iter()
            .filter_map(|t| t.t_converge)
            .fold(None, |acc: Option<f64>, x| {
                Some(acc.map_or(x, |a| a.max(x)))
            }),
        guard_trips,
        per_trial,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub points: usize,
    pub max_rel_err_grad_xi: f64,
    pub max_rel_err_grad_r: f64,
    pub max_rel_err_stacked_torque: f64,
    pub aux_descent_violations: usize,
    pub threshold: f64,
    pub pass: bool,
}

fn rel_err(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / reference.abs().max(1.0)
}

/// Central finite differences against the analytic gradients, the auxiliary
/// descent property, and the stacked-torque identity, at Haar-random points.
///
/// `flip_sign` is a negative-control hook that negates the analytic
/// gradients before comparison; it must make the check fail.
pub fn gradcheck(
    cfg: &ScenarioConfig,
    points: usize,
    flip_sign: bool,
) -> Result<GradCheckReport, ConfigError> {
    let spec = cfg.to_run_spec()?;
    let p = &spec.params;
    let gains = &spec.gains;
    let tree = &spec.tree;
    let sign = if flip_sign { -1.0 } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead);
    let mut max_xi = 0.0f64;
    let mut max_r = 0.0f64;
    let mut max_stacked = 0.0f64;
    let mut aux_violations = 0usize;
    let h = 1e-6;

    for _ in 0..points {
        let r = so3::random_rotation::<f64, _>(&mut rng).into_matrix();
        let xi = (rand::Rng::gen::<f64>(&mut rng) - 0.5) * 2.0 * std::f64::consts::PI;

        // grad_xi
        let fd =
            (potential::u_value(&r, xi + h, p) - potential::u_value(&r, xi - h, p)) / (2.0 * h);
        max_xi = max_xi.max(rel_err(sign * potential::grad_xi(&r, xi, p), fd));

        // grad_r_body along the three body axes
        let g = potential::grad_r_body(&r, xi, p) * sign;
        for eta in [Vector3::x(), Vector3::y(), Vector3::z()] {
            let rp = r * so3::exp_so3(eta * h).into_matrix();
            let rm = r * so3::exp_so3(eta * -h).into_matrix();
            let fd = (potential::u_value(&rp, xi, p) - potential::u_value(&rm, xi, p)) / (2.0 * h);
            max_r = max_r.max(rel_err(2.0 * eta.dot(&g), fd));
        }

        // aux descent: U(Qtilde, zeta) nonincreasing along the auxiliary flow
        let q = so3::random_rotation::<f64, _>(&mut rng).into_matrix();
        let (q_rate, z_rate) = controllers::aux_flow(&r, &q, xi, gains, p);
        let hq = 1e-7;
        let q2 = so3::project_to_rotation(&(q + q_rate * hq * sign))
            .unwrap()
            .into_matrix();
        let u0 = potential::u_value(&(q.transpose() * r), xi, p);
        let u1 = potential::u_value(&(q2.transpose() * r), xi + z_rate * hq * sign, p);
        if u1 > u0 + 1e-12 {
            aux_violations += 1;
        }
    }

    // stacked-torque identity on the configured tree at random states:
    // per-agent assembly == -k_r Hbar Psi - k_w w - k_wbar (L (x) I3) w
    let n = tree.n_agents();
    let m = tree.n_edges();
    let lap = tree.laplacian::<f64>();
    for _ in 0..points.min(50) {
        let r: Vec<Matrix3<f64>> = (0..n)
            .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
            .collect();
        let w: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rand::Rng::gen::<f64>(&mut rng) - 0.5,
                    rand::Rng::gen::<f64>(&mut rng) - 0.5,
                    rand::Rng::gen::<f64>(&mut rng) - 0.5,
                )
            })
            .collect();
        let rbar = plant::edge_relatives(&r, tree);
        let xi: Vec<f64> = (0..m)
            .map(|_| (rand::Rng::gen::<f64>(&mut rng) - 0.5) * 2.0)
            .collect();
        let per_agent = controllers::hybrid_torques(&rbar, &xi, &w, tree, gains, p);
        let grads: Vec<Vector3<f64>> = (0..m)
            .map(|k| potential::grad_r_body(&rbar[k], xi[k], p) * sign)
            .collect();
        let bracket = tree.hbar_premultiply(&rbar, &grads).unwrap();
        // (L (x) I3) w via the dense Laplacian
        let mut w_stack = DVector::zeros(3 * n);
        for (i, wi) in w.iter().enumerate() {
            w_stack.fixed_rows_mut::<3>(3 * i).copy_from(wi);
        }
        for i in 0..n {
            let mut expected = -bracket[i] * gains.k_r - w[i] * gains.k_w;
            let mut lw = Vector3::zeros();
            for j in 0..n {
                lw += w[j] * lap[(i, j)];
            }
            expected -= lw * gains.k_w_bar;
            max_stacked = max_stacked.max(rel_err((per_agent[i] - expected).norm(), 0.0));
        }
    }

    let threshold = 1e-5;
    let pass = max_xi <= threshold
        && max_r <= threshold
        && max_stacked <= threshold
        && aux_violations == 0;
    Ok(GradCheckReport {
        points,
        max_rel_err_grad_xi: max_xi,
        max_rel_err_grad_r: max_r,
        max_rel_err_stacked_torque: max_stacked,
        aux_descent_violations: aux_violations,
        threshold,
        pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamReport {
    pub case: String,
    pub delta_star: f64,
    pub gamma_bound: f64,
    pub delta_bound: f64,
    pub gamma: f64,
    pub delta: f64,
    pub u: [f64; 3],
    pub condition1_margins: Vec<(usize, f64, f64)>,
    pub condition1_pass: bool,
}

/// Synthesizes/validates the potential parameters and runs the Condition-1
/// certificate.
pub fn check_params(cfg: &ScenarioConfig) -> Result<ParamReport, ConfigError> {
    let eigs = cfg.potential.eigenvalues;
    let params = cfg.potential_params()?;
    let phi_l = params.xi_set().iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let report = potential::check_condition1(&params);
    Ok(ParamReport {
        case: format!("{:?}", potential::synthesis_case(eigs)),
        delta_star: potential::delta_star(eigs),
        gamma_bound: potential::gamma_bound(eigs),
        delta_bound: potential::delta_bound(eigs, params.gamma(), phi_l),
        gamma: params.gamma(),
        delta: params.delta(),
        u: [params.u().x, params.u().y, params.u().z],
        condition1_margins: report.point_margins,
        condition1_pass: report.pass,
    })
}

/// Builds the tree referenced by the config (re-exported convenience).
pub fn tree_of(cfg: &ScenarioConfig) -> Result<OrientedTree, ConfigError> {
    Ok(OrientedTree::build(cfg.graph.agents, &cfg.graph.edges)?)
}
