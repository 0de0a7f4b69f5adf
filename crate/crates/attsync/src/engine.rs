//! Execution of the networked hybrid system: fixed-step flow integration on
//! the product manifold, jump detection with jump-priority semantics, hybrid
//! time bookkeeping, and Lyapunov-certificate monitoring.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::controllers::{self, ControllerKind, Gains};
use crate::plant;
use crate::potential::{self, PotentialParams};
use crate::so3::{self, hat};
use crate::topology::OrientedTree;
use crate::{lit, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),
    #[error("redundant edge state drifted {drift} from the agent attitudes at t = {t}")]
    EdgeDrift { t: f64, drift: f64 },
    #[error("jump_event called with no violating component")]
    EmptyJumpSet,
    #[error("certificate violation: {0}")]
    CertificateViolation(String),
    #[error("state dimensions inconsistent with the tree")]
    DimensionMismatch,
    #[error(transparent)]
    Rotation(#[from] so3::So3Error),
}

/// Hybrid time: seconds of flow and the jump counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: u64,
}

/// Full continuous/discrete state of one run. `q` and `zeta` are empty for
/// the laws without auxiliary systems.
#[derive(Debug, Clone)]
pub struct SystemState<S: Real> {
    pub r: Vec<Matrix3<S>>,
    pub omega: Vec<Vector3<S>>,
    pub rbar: Vec<Matrix3<S>>,
    pub xi: Vec<S>,
    pub q: Vec<Matrix3<S>>,
    pub zeta: Vec<S>,
}

impl<S: Real> SystemState<S> {
    /// At-rest state with all switch angles zero and, for the velocity-free
    /// law, `Q_i = R_i`.
    pub fn at_rest(r: Vec<Matrix3<S>>, tree: &OrientedTree, kind: ControllerKind) -> Self {
        let rbar = plant::edge_relatives(&r, tree);
        let n = tree.n_agents();
        let m = tree.n_edges();
        let (q, zeta) = match kind {
            ControllerKind::VelocityFree => (r.clone(), vec![S::zero(); n]),
            _ => (Vec::new(), Vec::new()),
        };
        SystemState {
            omega: vec![Vector3::zeros(); n],
            rbar,
            xi: vec![S::zero(); m],
            r,
            q,
            zeta,
        }
    }

    pub fn q_tildes(&self) -> Vec<Matrix3<S>> {
        self.q
            .iter()
            .zip(&self.r)
            .map(|(q, r)| q.transpose() * r)
            .collect()
    }

    fn is_finite(&self) -> bool {
        let fin = |x: &S| num_traits::ToPrimitive::to_f64(x).is_some_and(f64::is_finite);
        self.r
            .iter()
            .chain(&self.rbar)
            .chain(&self.q)
            .all(|m| m.iter().all(fin))
            && self.omega.iter().all(|v| v.iter().all(fin))
            && self.xi.iter().all(fin)
            && self.zeta.iter().all(fin)
    }
}

/// Everything a run needs, already validated.
#[derive(Debug, Clone)]
pub struct RunSpec<S: Real> {
    pub tree: OrientedTree,
    pub params: PotentialParams<S>,
    pub gains: Gains<S>,
    pub kind: ControllerKind,
    pub inertia: Vec<Vector3<S>>,
    pub initial: SystemState<S>,
    pub h: S,
    pub t_end: S,
    pub sample_stride: usize,
    pub epsilon: S,
}

impl<S: Real> RunSpec<S> {
    pub fn validate(&self) -> Result<(), EngineError> {
        let n = self.tree.n_agents();
        let m = self.tree.n_edges();
        let s = &self.initial;
        let aux = self.kind == ControllerKind::VelocityFree;
        let ok = s.r.len() == n
            && s.omega.len() == n
            && s.rbar.len() == m
            && s.xi.len() == m
            && self.inertia.len() == n
            && s.q.len() == if aux { n } else { 0 }
            && s.zeta.len() == s.q.len();
        if !ok {
            return Err(EngineError::DimensionMismatch);
        }
        Ok(())
    }
}

/// Lyapunov function of the selected law:
/// continuous `k_R sum_k tr(A(I - Rbar_k)) + sum_i w'Jw`,
/// hybrid `k_R sum_k U(Rbar_k, xi_k) + sum_i w'Jw`,
/// velocity-free adds `k_qtilde sum_i U(Qtilde_i, zeta_i)`.
pub fn lyapunov<S: Real>(state: &SystemState<S>, spec: &RunSpec<S>) -> S {
    let p = &spec.params;
    let mut v = S::zero();
    for k in 0..spec.tree.n_edges() {
        let xi = match spec.kind {
            ControllerKind::Continuous => S::zero(),
            _ => state.xi[k],
        };
        v += spec.gains.k_r * potential::u_value(&state.rbar[k], xi, p);
    }
    if spec.kind == ControllerKind::VelocityFree {
        for (qt, &z) in state.q_tildes().iter().zip(&state.zeta) {
            v += spec.gains.k_qtilde * potential::u_value(qt, z, p);
        }
    }
    for (w, j) in state.omega.iter().zip(&spec.inertia) {
        v += w.dot(&j.component_mul(w));
    }
    v
}

fn torques<S: Real>(state: &SystemState<S>, spec: &RunSpec<S>) -> Vec<Vector3<S>> {
    match spec.kind {
        ControllerKind::Continuous => controllers::continuous_torques(
            &state.r,
            &state.omega,
            &spec.tree,
            &spec.gains,
            &spec.params,
        ),
        ControllerKind::Hybrid => controllers::hybrid_torques(
            &state.rbar,
            &state.xi,
            &state.omega,
            &spec.tree,
            &spec.gains,
            &spec.params,
        ),
        ControllerKind::VelocityFree => controllers::vf_torques(
            &state.rbar,
            &state.xi,
            &state.q_tildes(),
            &state.zeta,
            &spec.tree,
            &spec.gains,
            &spec.params,
        ),
    }
}

/// Time derivative of every continuous state, in the ambient space.
fn derivative<S: Real>(state: &SystemState<S>, spec: &RunSpec<S>) -> SystemState<S> {
    let tau = torques(state, spec);
    let r_rates: Vec<Matrix3<S>> = state
        .r
        .iter()
        .zip(&state.omega)
        .map(|(r, w)| plant::attitude_rate(r, w))
        .collect();
    let omega_rates: Vec<Vector3<S>> = (0..spec.tree.n_agents())
        .map(|i| plant::omega_rate(&state.omega[i], &spec.inertia[i], &tau[i]))
        .collect();
    // Rbardot_k = Rbar_k [w_head]x - [w_tail]x Rbar_k
    let rbar_rates: Vec<Matrix3<S>> = (0..spec.tree.n_edges())
        .map(|k| {
            let (head, tail) = spec.tree.edge(k);
            state.rbar[k] * hat(state.omega[head]).matrix()
                - hat(state.omega[tail]).matrix() * state.rbar[k]
        })
        .collect();
    let xi_rates: Vec<S> = match spec.kind {
        ControllerKind::Continuous => vec![S::zero(); spec.tree.n_edges()],
        _ => (0..spec.tree.n_edges())
            .map(|k| controllers::xi_flow(&state.rbar[k], state.xi[k], &spec.gains, &spec.params))
            .collect(),
    };
    let (q_rates, zeta_rates) = if spec.kind == ControllerKind::VelocityFree {
        let mut qr = Vec::with_capacity(state.q.len());
        let mut zr = Vec::with_capacity(state.q.len());
        for i in 0..state.q.len() {
            let (a, b) = controllers::aux_flow(
                &state.r[i],
                &state.q[i],
                state.zeta[i],
                &spec.gains,
                &spec.params,
            );
            qr.push(a);
            zr.push(b);
        }
        (qr, zr)
    } else {
        (Vec::new(), Vec::new())
    };
    SystemState {
        r: r_rates,
        omega: omega_rates,
        rbar: rbar_rates,
        xi: xi_rates,
        q: q_rates,
        zeta: zeta_rates,
    }
}

fn axpy<S: Real>(base: &SystemState<S>, k: &SystemState<S>, c: S) -> SystemState<S> {
    SystemState {
        r: base.r.iter().zip(&k.r).map(|(a, b)| a + b * c).collect(),
        omega: base
            .omega
            .iter()
            .zip(&k.omega)
            .map(|(a, b)| a + b * c)
            .collect(),
        rbar: base
            .rbar
            .iter()
            .zip(&k.rbar)
            .map(|(a, b)| a + b * c)
            .collect(),
        xi: base
            .xi
            .iter()
            .zip(&k.xi)
            .map(|(&a, &b)| a + b * c)
            .collect(),
        q: base.q.iter().zip(&k.q).map(|(a, b)| a + b * c).collect(),
        zeta: base
            .zeta
            .iter()
            .zip(&k.zeta)
            .map(|(&a, &b)| a + b * c)
            .collect(),
    }
}

/// One classical 4-stage Runge-Kutta step in the ambient space, followed by
/// projection of every rotation block back onto SO(3) and reconciliation of
/// the redundant edge states against the agent attitudes.
pub fn step<S: Real>(
    state: &SystemState<S>,
    spec: &RunSpec<S>,
    t: f64,
) -> Result<SystemState<S>, EngineError> {
    let h = spec.h;
    let half = h / lit(2.0);
    let k1 = derivative(state, spec);
    let k2 = derivative(&axpy(state, &k1, half), spec);
    let k3 = derivative(&axpy(state, &k2, half), spec);
    let k4 = derivative(&axpy(state, &k3, h), spec);
    let sixth = h / lit(6.0);
    let mut next = axpy(state, &k1, sixth);
    next = axpy(&next, &k2, sixth * lit(2.0));
    next = axpy(&next, &k3, sixth * lit(2.0));
    next = axpy(&next, &k4, sixth);

    for r in next.r.iter_mut().chain(next.q.iter_mut()) {
        *r = so3::project_to_rotation(r)?.into_matrix();
    }
    // reconcile edge states: drift beyond tolerance means the integrator or
    // the coupled dynamics are wrong
    for k in 0..spec.tree.n_edges() {
        let projected = so3::project_to_rotation(&next.rbar[k])?.into_matrix();
        let recomputed = plant::edge_relative(&next.r, &spec.tree, k);
        let drift = (projected - recomputed).norm();
        if drift > lit(1e-6) {
            return Err(EngineError::EdgeDrift {
                t,
                drift: num_traits::ToPrimitive::to_f64(&drift).unwrap_or(f64::NAN),
            });
        }
        next.rbar[k] = recomputed;
    }
    if !next.is_finite() {
        return Err(EngineError::NonFiniteState(t));
    }
    Ok(next)
}

/// Indices of components currently in the jump set.
pub fn violating_components<S: Real>(
    state: &SystemState<S>,
    spec: &RunSpec<S>,
) -> (Vec<usize>, Vec<usize>) {
    let p = &spec.params;
    let mut edges = Vec::new();
    let mut agents = Vec::new();
    if spec.kind != ControllerKind::Continuous {
        for k in 0..spec.tree.n_edges() {
            if potential::gap(&state.rbar[k], state.xi[k], p) >= p.delta() {
                edges.push(k);
            }
        }
    }
    if spec.kind == ControllerKind::VelocityFree {
        for (i, (qt, &z)) in state.q_tildes().iter().zip(&state.zeta).enumerate() {
            if potential::gap_aux(qt, z, p) >= p.delta_q() {
                agents.push(i);
            }
        }
    }
    (edges, agents)
}

/// One jump event: resets every violating `xi_k` to its minimizer and every
/// violating `zeta_i` likewise; `Q` and all other states are unchanged.
#[allow(clippy::type_complexity)]
pub fn jump_event<S: Real>(
    state: &SystemState<S>,
    spec: &RunSpec<S>,
) -> Result<(SystemState<S>, Vec<usize>, Vec<usize>), EngineError> {
    let (edges, agents) = violating_components(state, spec);
    if edges.is_empty() && agents.is_empty() {
        return Err(EngineError::EmptyJumpSet);
    }
    let mut next = state.clone();
    for &k in &edges {
        next.xi[k] = controllers::xi_jump(&state.rbar[k], &spec.params);
    }
    let q_tildes = state.q_tildes();
    for &i in &agents {
        next.zeta[i] = controllers::aux_jump(&q_tildes[i], &spec.params);
    }
    Ok((next, edges, agents))
}

/// One row of the time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: HybridTime,
    pub dist_sq: Vec<f64>,
    pub omega_norm: Vec<f64>,
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpLogEntry {
    pub time: HybridTime,
    pub edges_reset: Vec<usize>,
    pub agents_reset: Vec<usize>,
    pub v_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub converged: bool,
    pub t_converge: Option<f64>,
    pub t_final: f64,
    pub jumps: u64,
    pub reset_components: u64,
    pub jump_ceiling: u64,
    pub v_initial: f64,
    pub v_final: f64,
    pub final_max_dist_sq: f64,
    pub final_max_omega_norm: f64,
    /// Largest pairwise angular-velocity disagreement at the end of the run
    /// (velocity consensus metric for the k_w = 0 mode).
    pub final_max_omega_pairwise: f64,
    pub final_max_qtilde_dist_sq: Option<f64>,
    /// For non-converged runs: largest over edges of the distance to the
    /// closest undesired critical rotation.
    pub nearest_equilibrium: Option<f64>,
    /// Set when the run timed out essentially at rest at an undesired
    /// critical configuration.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub samples: Vec<Sample>,
    pub jump_log: Vec<JumpLogEntry>,
    pub summary: RunSummary,
}

impl RunRecord {
    /// CSV columns: t, j, dist_sq_edge_1..M, omega_norm_1..N, xi_1..M,
    /// (zeta_1..N for the velocity-free law), V.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let (m, n) = self
            .samples
            .first()
            .map(|s| (s.dist_sq.len(), s.omega_norm.len()))
            .unwrap_or((0, 0));
        let with_zeta = self.samples.first().is_some_and(|s| !s.zeta.is_empty());
        let mut header = vec!["t".to_string(), "j".to_string()];
        header.extend((1..=m).map(|k| format!("dist_sq_edge_{k}")));
        header.extend((1..=n).map(|i| format!("omega_norm_{i}")));
        header.extend((1..=m).map(|k| format!("xi_{k}")));
        if with_zeta {
            header.extend((1..=n).map(|i| format!("zeta_{i}")));
        }
        header.push("V".to_string());
        out.push_str(&header.join(","));
        out.push('\n');
        for s in &self.samples {
            let mut row = vec![format!("{}", s.time.t), format!("{}", s.time.j)];
            row.extend(s.dist_sq.iter().map(|x| format!("{x}")));
            row.extend(s.omega_norm.iter().map(|x| format!("{x}")));
            row.extend(s.xi.iter().map(|x| format!("{x}")));
            if with_zeta {
                row.extend(s.zeta.iter().map(|x| format!("{x}")));
            }
            row.push(format!("{}", s.v));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn f<S: Real>(x: S) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

fn metrics<S: Real>(state: &SystemState<S>, spec: &RunSpec<S>) -> (f64, f64, Option<f64>) {
    let max_dist = state
        .rbar
        .iter()
        .map(|rb| f(so3::Rotation::from_matrix_unchecked(*rb).dist_id_sq()))
        .fold(0.0, f64::max);
    let max_omega = state.omega.iter().map(|w| f(w.norm())).fold(0.0, f64::max);
    let max_qt = if spec.kind == ControllerKind::VelocityFree {
        Some(
            state
                .q_tildes()
                .iter()
                .map(|qt| f(so3::Rotation::from_matrix_unchecked(*qt).dist_id_sq()))
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    (max_dist, max_omega, max_qt)
}

fn make_sample<S: Real>(state: &SystemState<S>, spec: &RunSpec<S>, time: HybridTime) -> Sample {
    Sample {
        time,
        dist_sq: state
            .rbar
            .iter()
            .map(|rb| f(so3::Rotation::from_matrix_unchecked(*rb).dist_id_sq()))
            .collect(),
        omega_norm: state.omega.iter().map(|w| f(w.norm())).collect(),
        xi: state.xi.iter().map(|&x| f(x)).collect(),
        zeta: state.zeta.iter().map(|&z| f(z)).collect(),
        v: f(lyapunov(state, spec)),
    }
}

/// Nearest-undesired-equilibrium metric for timed-out runs: largest over
/// edges of the distance to the closest critical rotation, plus a diagnostic
/// string when the network is essentially at rest there.
fn equilibrium_diagnostic<S: Real>(
    state: &SystemState<S>,
    spec: &RunSpec<S>,
) -> (Option<f64>, Option<String>) {
    let (_, max_omega, _) = metrics(state, spec);
    let pi = std::f64::consts::PI;
    let mut worst = 0.0f64;
    for rb in &state.rbar {
        let best = spec
            .params
            .eigenvectors()
            .iter()
            .map(|&q| {
                let r_star = so3::Rotation::<S>::from_axis_angle(lit(pi), q).unwrap();
                f((rb - r_star.matrix()).norm())
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    let diagnostic = if worst < 1e-3 && max_omega <= 1e-4 {
        Some(format!(
            "stuck at an undesired critical configuration (max distance {worst:.2e} to a pi-rotation about an eigenvector, max |omega| {max_omega:.2e})"
        ))
    } else {
        None
    };
    (Some(worst), diagnostic)
}

/// Runs the hybrid system until `t_end`, convergence, or a guard trip.
///
/// Jump-priority semantics: whenever any component's gap meets its threshold
/// the event fires before any flow. Certificates monitored throughout: flow
/// monotonicity of V, per-event V drop, and the jump-count ceiling.
pub fn run<S: Real>(spec: &RunSpec<S>) -> Result<RunRecord, EngineError> {
    spec.validate()?;
    let mut state = spec.initial.clone();
    if !state.is_finite() {
        return Err(EngineError::NonFiniteState(0.0));
    }
    let mut t = 0.0f64;
    let mut j = 0u64;
    let h = f(spec.h);
    let t_end = f(spec.t_end);
    let eps = f(spec.epsilon);
    let stride = spec.sample_stride.max(1);

    let v_initial = f(lyapunov(&state, spec));
    let jump_ceiling = (v_initial / f(spec.gains.k_r * spec.params.delta())).ceil() as u64;
    let max_jumps = 10 * jump_ceiling.max(1);
    let jump_drop_bound = match spec.kind {
        ControllerKind::VelocityFree => f(spec.gains.k_r.min(spec.gains.k_qtilde)
            * spec.params.delta().min(spec.params.delta_q())),
        _ => f(spec.gains.k_r * spec.params.delta()),
    };

    let mut samples = vec![make_sample(&state, spec, HybridTime { t, j })];
    let mut jump_log = Vec::new();
    let mut reset_components = 0u64;
    let mut v_prev = v_initial;
    let mut sustained_since: Option<f64> = None;
    let mut t_converge = None;
    let mut converged = false;
    let mut step_count = 0usize;

    loop {
        // jump priority
        let (edges, agents) = violating_components(&state, spec);
        if !(edges.is_empty() && agents.is_empty()) {
            let (next, e, a) = jump_event(&state, spec)?;
            let v_next = f(lyapunov(&next, spec));
            let drop = v_prev - v_next;
            if drop < jump_drop_bound - 1e-9 {
                return Err(EngineError::CertificateViolation(format!(
                    "jump at t = {t} dropped V by {drop}, below the bound {jump_drop_bound}"
                )));
            }
            j += 1;
            if j > max_jumps {
                return Err(EngineError::CertificateViolation(format!(
                    "jump count {j} exceeded the guard {max_jumps} (ceiling {jump_ceiling})"
                )));
            }
            reset_components += (e.len() + a.len()) as u64;
            jump_log.push(JumpLogEntry {
                time: HybridTime { t, j },
                edges_reset: e,
                agents_reset: a,
                v_drop: drop,
            });
            state = next;
            v_prev = v_next;
            samples.push(make_sample(&state, spec, HybridTime { t, j }));
            continue;
        }

        if t >= t_end || converged {
            break;
        }

        state = step(&state, spec, t)?;
        t += h;
        step_count += 1;
        let v = f(lyapunov(&state, spec));
        if v > v_prev + 1e-8 {
            return Err(EngineError::CertificateViolation(format!(
                "V increased along flow at t = {t}: {v_prev} -> {v}"
            )));
        }
        v_prev = v;
        if step_count.is_multiple_of(stride) {
            samples.push(make_sample(&state, spec, HybridTime { t, j }));
        }

        let (max_dist, max_omega, _) = metrics(&state, spec);
        if max_dist <= eps * eps && max_omega <= eps {
            let since = *sustained_since.get_or_insert(t);
            if t - since >= 1.0 {
                converged = true;
                t_converge = Some(since);
            }
        } else {
            sustained_since = None;
        }
    }

    let last = samples.last().cloned();
    let final_sample = make_sample(&state, spec, HybridTime { t, j });
    if last.is_none_or(|s| s != final_sample) {
        samples.push(final_sample);
    }
    if j > jump_ceiling {
        return Err(EngineError::CertificateViolation(format!(
            "realized jumps {j} exceed the ceiling {jump_ceiling}"
        )));
    }
    let (final_max_dist_sq, final_max_omega_norm, final_max_qtilde_dist_sq) = metrics(&state, spec);
    let mut final_max_omega_pairwise = 0.0f64;
    for a in 0..state.omega.len() {
        for b in (a + 1)..state.omega.len() {
            final_max_omega_pairwise =
                final_max_omega_pairwise.max(f((state.omega[a] - state.omega[b]).norm()));
        }
    }
    let (nearest_equilibrium, diagnostic) = if converged {
        (None, None)
    } else {
        equilibrium_diagnostic(&state, spec)
    };
    Ok(RunRecord {
        samples,
        jump_log,
        summary: RunSummary {
            converged,
            t_converge,
            t_final: t,
            jumps: j,
            reset_components,
            jump_ceiling,
            v_initial,
            v_final: v_prev,
            final_max_dist_sq,
            final_max_omega_norm,
            final_max_omega_pairwise,
            final_max_qtilde_dist_sq,
            nearest_equilibrium,
            diagnostic,
        },
    })
}
