//! The three feedback laws — continuous, hybrid, and velocity-free hybrid —
//! plus the per-agent auxiliary system, all as pure state-to-rate maps.
//!
//! Every torque map takes raw `Matrix3`/`Vector3` state slices so the
//! integrator can evaluate them at intermediate stage values.

use nalgebra::{Matrix3, Vector3};

use crate::potential::{self, PotentialParams};
use crate::so3::{hat, psi, Rotation};
use crate::topology::OrientedTree;
use crate::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Continuous,
    Hybrid,
    VelocityFree,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("gain {name} must be positive for the {kind:?} law, got {value}")]
    NonPositiveGain {
        name: &'static str,
        kind: ControllerKind,
        value: f64,
    },
    #[error("k_w = 0 requires the time-varying-consensus mode to be enabled explicitly")]
    ZeroVelocityGain,
}

/// Feedback and auxiliary-system gains. Defaults are the reference
/// seven-satellite values.
#[derive(Debug, Clone, Copy)]
pub struct Gains<S: Real> {
    pub k_r: S,
    pub k_w: S,
    pub k_w_bar: S,
    pub k_xi: S,
    pub k_q: S,
    pub k_qtilde: S,
    pub k_zeta: S,
    /// Permits `k_w = 0` (torque-free velocity consensus instead of rest).
    pub allow_zero_k_w: bool,
    /// Experimental relative auxiliary damping added to the velocity-free
    /// torque; off by default.
    pub relative_aux_damping: bool,
}

impl<S: Real> Default for Gains<S> {
    fn default() -> Self {
        Gains {
            k_r: S::one(),
            k_w: lit(0.1),
            k_w_bar: lit(0.1),
            k_xi: lit(20.0),
            k_q: lit(20.0),
            k_qtilde: lit(2.0),
            k_zeta: lit(20.0),
            allow_zero_k_w: false,
            relative_aux_damping: false,
        }
    }
}

impl<S: Real> Gains<S> {
    pub fn validate(&self, kind: ControllerKind) -> Result<(), ControllerError> {
        let f = |x: S| num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN);
        let positive = |name: &'static str, v: S| {
            if v > S::zero() {
                Ok(())
            } else {
                Err(ControllerError::NonPositiveGain {
                    name,
                    kind,
                    value: f(v),
                })
            }
        };
        positive("k_r", self.k_r)?;
        if self.k_w < S::zero() || self.k_w_bar < S::zero() {
            return Err(ControllerError::NonPositiveGain {
                name: "k_w",
                kind,
                value: f(self.k_w.min(self.k_w_bar)),
            });
        }
        match kind {
            ControllerKind::Continuous | ControllerKind::Hybrid => {
                if self.k_w == S::zero() && !self.allow_zero_k_w {
                    return Err(ControllerError::ZeroVelocityGain);
                }
                if kind == ControllerKind::Hybrid {
                    positive("k_xi", self.k_xi)?;
                }
            }
            ControllerKind::VelocityFree => {
                positive("k_xi", self.k_xi)?;
                positive("k_q", self.k_q)?;
                positive("k_qtilde", self.k_qtilde)?;
                positive("k_zeta", self.k_zeta)?;
            }
        }
        Ok(())
    }
}

/// Per-agent auxiliary state `(Q_i, zeta_i)` of the velocity-free law.
#[derive(Debug, Clone)]
pub struct AuxState<S: Real> {
    pub q: Rotation<S>,
    pub zeta: S,
}

impl<S: Real> AuxState<S> {
    /// `Qtilde_i = Q_i' R_i`.
    pub fn q_tilde(&self, r: &Rotation<S>) -> Matrix3<S> {
        self.q.matrix().transpose() * r.matrix()
    }
}

fn velocity_damping<S: Real>(
    omega: &[Vector3<S>],
    tree: &OrientedTree,
    gains: &Gains<S>,
    tau: &mut [Vector3<S>],
) {
    for i in 0..tree.n_agents() {
        tau[i] -= omega[i] * gains.k_w;
        if gains.k_w_bar > S::zero() {
            for end in tree.incident(i) {
                tau[i] -= (omega[i] - omega[end.neighbor]) * gains.k_w_bar;
            }
        }
    }
}

/// Continuous law: `tau_i = -k_R sum_j psi(A R_j' R_i) - k_w w_i
/// - k_wbar sum_j (w_i - w_j)`.
pub fn continuous_torques<S: Real>(
    r: &[Matrix3<S>],
    omega: &[Vector3<S>],
    tree: &OrientedTree,
    gains: &Gains<S>,
    p: &PotentialParams<S>,
) -> Vec<Vector3<S>> {
    let mut tau = vec![Vector3::zeros(); tree.n_agents()];
    for i in 0..tree.n_agents() {
        let mut grad_sum = Vector3::zeros();
        for end in tree.incident(i) {
            grad_sum += psi(&(p.a() * r[end.neighbor].transpose() * r[i]));
        }
        tau[i] = -grad_sum * gains.k_r;
    }
    velocity_damping(omega, tree, gains, &mut tau);
    tau
}

/// The shared gradient bracket of the hybrid laws: agent `i` receives
/// `-k_r [ sum over head edges g_k - sum over tail edges Rbar_k g_k ]`,
/// with `g_k = grad_r_body(Rbar_k, xi_k)`.
pub fn gradient_torques<S: Real>(
    rbar: &[Matrix3<S>],
    xi: &[S],
    tree: &OrientedTree,
    k_r: S,
    p: &PotentialParams<S>,
) -> Vec<Vector3<S>> {
    let mut tau = vec![Vector3::zeros(); tree.n_agents()];
    for k in 0..tree.n_edges() {
        let g = potential::grad_r_body(&rbar[k], xi[k], p);
        let (head, tail) = tree.edge(k);
        tau[head] -= g * k_r;
        tau[tail] += rbar[k] * g * k_r;
    }
    tau
}

/// Hybrid law (flow part): gradient bracket plus velocity damping.
pub fn hybrid_torques<S: Real>(
    rbar: &[Matrix3<S>],
    xi: &[S],
    omega: &[Vector3<S>],
    tree: &OrientedTree,
    gains: &Gains<S>,
    p: &PotentialParams<S>,
) -> Vec<Vector3<S>> {
    let mut tau = gradient_torques(rbar, xi, tree, gains.k_r, p);
    velocity_damping(omega, tree, gains, &mut tau);
    tau
}

/// Edge switch-angle flow: `xidot_k = -k_xi grad_xi(Rbar_k, xi_k)`.
pub fn xi_flow<S: Real>(
    rbar_k: &Matrix3<S>,
    xi_k: S,
    gains: &Gains<S>,
    p: &PotentialParams<S>,
) -> S {
    -gains.k_xi * potential::grad_xi(rbar_k, xi_k, p)
}

/// Edge switch-angle jump: the minimizer of `U(Rbar_k, .)` over the switch set.
pub fn xi_jump<S: Real>(rbar_k: &Matrix3<S>, p: &PotentialParams<S>) -> S {
    potential::xi_star(rbar_k, p).0
}

/// Auxiliary flow (`Qtilde = Q' R` held fixed inside the stage):
/// `Qdot = k_q Q [Qtilde g(Qtilde, zeta)]x`, `zetadot = -k_zeta grad_xi(Qtilde, zeta)`.
pub fn aux_flow<S: Real>(
    r_i: &Matrix3<S>,
    q_i: &Matrix3<S>,
    zeta_i: S,
    gains: &Gains<S>,
    p: &PotentialParams<S>,
) -> (Matrix3<S>, S) {
    let q_tilde = q_i.transpose() * r_i;
    let g = potential::grad_r_body(&q_tilde, zeta_i, p);
    let q_rate = q_i * hat(q_tilde * g).matrix() * gains.k_q;
    let zeta_rate = -gains.k_zeta * potential::grad_xi(&q_tilde, zeta_i, p);
    (q_rate, zeta_rate)
}

/// Auxiliary jump: `zeta+` is the minimizer over the auxiliary switch set;
/// `Q` is unchanged by jumps.
pub fn aux_jump<S: Real>(q_tilde_i: &Matrix3<S>, p: &PotentialParams<S>) -> S {
    potential::zeta_star(q_tilde_i, p).0
}

/// Velocity-free law: the hybrid gradient bracket plus auxiliary damping
/// `-k_qtilde g(Qtilde_i, zeta_i)`. Takes no angular velocities.
pub fn vf_torques<S: Real>(
    rbar: &[Matrix3<S>],
    xi: &[S],
    q_tilde: &[Matrix3<S>],
    zeta: &[S],
    tree: &OrientedTree,
    gains: &Gains<S>,
    p: &PotentialParams<S>,
) -> Vec<Vector3<S>> {
    let mut tau = gradient_torques(rbar, xi, tree, gains.k_r, p);
    for i in 0..tree.n_agents() {
        tau[i] -= potential::grad_r_body(&q_tilde[i], zeta[i], p) * gains.k_qtilde;
    }
    if gains.relative_aux_damping {
        let extra = relative_aux_damping(q_tilde, zeta, tree, gains, p);
        for i in 0..tree.n_agents() {
            tau[i] += extra[i];
        }
    }
    tau
}

/// Experimental relative auxiliary damping
/// `-k_wbar sum_j (d_i - d_j)` with `d_i = g(Qtilde_i, zeta_i)`.
/// Contributes only when the `relative_aux_damping` flag is set.
pub fn relative_aux_damping<S: Real>(
    q_tilde: &[Matrix3<S>],
    zeta: &[S],
    tree: &OrientedTree,
    gains: &Gains<S>,
    p: &PotentialParams<S>,
) -> Vec<Vector3<S>> {
    let d: Vec<Vector3<S>> = (0..tree.n_agents())
        .map(|i| potential::grad_r_body(&q_tilde[i], zeta[i], p))
        .collect();
    let mut out = vec![Vector3::zeros(); tree.n_agents()];
    for i in 0..tree.n_agents() {
        for end in tree.incident(i) {
            out[i] -= (d[i] - d[end.neighbor]) * gains.k_w_bar;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant;
    use crate::potential::reference_params;
    use crate::so3::{self, exp_so3};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    type V = Vector3<f64>;
    type M = Matrix3<f64>;

    fn rot(theta: f64, axis: V) -> M {
        Rotation::from_axis_angle(theta, axis)
            .unwrap()
            .into_matrix()
    }

    fn seven_ics() -> (OrientedTree, Vec<M>) {
        let tree = OrientedTree::build(7, &crate::topology::seven_agent_edges()).unwrap();
        let r: Vec<M> = (0..7)
            .map(|i| {
                let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
                rot(sign * PI / 2.0, V::z())
            })
            .collect();
        (tree, r)
    }

    #[test]
    fn continuous_torque_cases() {
        let p = reference_params();
        let gains = Gains::default();
        let tree = OrientedTree::build(3, &[(1, 2), (2, 3)]).unwrap();

        // synchronization: zero torque
        let r = vec![rot(0.3, V::x()); 3];
        let w = vec![V::zeros(); 3];
        for t in continuous_torques(&r, &w, &tree, &gains, &p) {
            assert_relative_eq!(t.norm(), 0.0, epsilon = 1e-12);
        }

        // the reference initial conditions sit at an undesired equilibrium
        let (tree7, r7) = seven_ics();
        let w7 = vec![V::zeros(); 7];
        for t in continuous_torques(&r7, &w7, &tree7, &gains, &p) {
            assert_relative_eq!(t.norm(), 0.0, epsilon = 1e-12);
        }

        // single edge gradient oracle
        let tree2 = OrientedTree::build(2, &[(1, 2)]).unwrap();
        let r2 = vec![rot(0.1, V::x()), M::identity()];
        let w2 = vec![V::zeros(); 2];
        let tau = continuous_torques(&r2, &w2, &tree2, &gains, &p);
        let expected = -gains.k_r * psi(&(p.a() * rot(0.1, V::x())));
        assert_relative_eq!(tau[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_reduces_to_continuous_at_zero_xi() {
        let p = reference_params();
        let gains = Gains::default();
        let tree = OrientedTree::build(4, &[(1, 2), (2, 3), (2, 4)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r: Vec<M> = (0..4)
                .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
                .collect();
            let w: Vec<V> = (0..4).map(|_| V::new(0.3, -0.1, 0.2)).collect();
            let rbar = plant::edge_relatives(&r, &tree);
            let xi = vec![0.0; 3];
            let a = continuous_torques(&r, &w, &tree, &gains, &p);
            let b = hybrid_torques(&rbar, &xi, &w, &tree, &gains, &p);
            for i in 0..4 {
                assert_relative_eq!(a[i], b[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hybrid_matches_stacked_matrix_assembly() {
        let p = reference_params();
        let gains = Gains::default();
        let (tree, _) = seven_ics();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r: Vec<M> = (0..7)
            .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
            .collect();
        let rbar = plant::edge_relatives(&r, &tree);
        let xi: Vec<f64> = (0..6).map(|k| 0.1 * k as f64).collect();
        let grads: Vec<V> = (0..6)
            .map(|k| crate::potential::grad_r_body(&rbar[k], xi[k], &p))
            .collect();
        let stacked = tree.hbar_premultiply(&rbar, &grads).unwrap();
        let per_agent = gradient_torques(&rbar, &xi, &tree, gains.k_r, &p);
        for i in 0..7 {
            assert_relative_eq!(per_agent[i], -stacked[i] * gains.k_r, epsilon = 1e-10);
        }
    }

    #[test]
    fn hybrid_escapes_reference_equilibrium_after_jump() {
        let p = reference_params();
        let gains = Gains::default();
        let (tree, r) = seven_ics();
        let rbar = plant::edge_relatives(&r, &tree);
        // every edge relative is a pi-rotation about e3 here
        for rb in &rbar {
            assert_relative_eq!(*rb, rot(PI, V::z()), epsilon = 1e-12);
        }
        let w = vec![V::zeros(); 7];
        let xi_post = vec![0.9 * PI; 6];
        let tau = hybrid_torques(&rbar, &xi_post, &w, &tree, &gains, &p);
        assert!(tau.iter().any(|t| t.norm() > 1e-3));
    }

    #[test]
    fn xi_flow_and_jump() {
        let p = reference_params();
        let gains = Gains::default();
        assert_eq!(xi_flow(&M::identity(), 0.0, &gains, &p), 0.0);
        assert_relative_eq!(
            xi_flow(&rot(PI, V::z()), 0.0, &gains, &p),
            0.0,
            epsilon = 1e-10
        );
        // flow opposes the gradient
        let r = rot(0.8, V::y());
        let g = crate::potential::grad_xi(&r, 0.3, &p);
        assert_relative_eq!(xi_flow(&r, 0.3, &gains, &p), -20.0 * g);
        // reference jump: 0 -> 0.9 pi at the pi-rotation
        assert_eq!(xi_jump(&rot(PI, V::z()), &p), 0.9 * PI);
        let drop = crate::potential::u_value(&rot(PI, V::z()), 0.0, &p)
            - crate::potential::u_value(&rot(PI, V::z()), 0.9 * PI, &p);
        assert!(drop >= p.delta());
    }

    #[test]
    fn aux_flow_cases() {
        let p = reference_params();
        let gains = Gains::default();
        let r = rot(0.4, V::x());
        // Q = R, zeta = 0: critical point, zero rates
        let (qr, zr) = aux_flow(&r, &r, 0.0, &gains, &p);
        assert_relative_eq!(qr.norm(), 0.0, epsilon = 1e-12);
        assert_eq!(zr, 0.0);

        // zeta rate vanishes at the symmetric product
        let q = r * rot(PI, V::z()).transpose();
        let (_, zr2) = aux_flow(&r, &q, 0.0, &gains, &p);
        assert_relative_eq!(zr2, 0.0, epsilon = 1e-10);

        // descent: U(Qtilde, zeta) is nonincreasing along the aux flow at
        // fixed R (omega = 0)
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let r = so3::random_rotation::<f64, _>(&mut rng).into_matrix();
            let q = so3::random_rotation::<f64, _>(&mut rng).into_matrix();
            let zeta = (rand::Rng::gen::<f64>(&mut rng) - 0.5) * 2.0;
            let (q_rate, z_rate) = aux_flow(&r, &q, zeta, &gains, &p);
            let h = 1e-7;
            let q2 = so3::project_to_rotation(&(q + q_rate * h))
                .unwrap()
                .into_matrix();
            let u0 = crate::potential::u_value(&(q.transpose() * r), zeta, &p);
            let u1 = crate::potential::u_value(&(q2.transpose() * r), zeta + z_rate * h, &p);
            assert!(u1 <= u0 + 1e-12, "aux flow increased U: {u0} -> {u1}");
        }
    }

    #[test]
    fn aux_jump_mirrors_xi_jump() {
        let p = reference_params();
        assert_eq!(aux_jump(&rot(PI, V::z()), &p), 0.9 * PI);
        let aux = AuxState {
            q: Rotation::from_axis_angle(0.3, V::y()).unwrap(),
            zeta: 0.0,
        };
        let r = Rotation::from_axis_angle(0.3, V::y()).unwrap();
        assert_relative_eq!(aux.q_tilde(&r), M::identity(), epsilon = 1e-14);
    }

    #[test]
    fn vf_torque_cases() {
        let p = reference_params();
        let gains = Gains::default();
        let tree = OrientedTree::build(3, &[(1, 2), (2, 3)]).unwrap();

        // synchronized, aligned aux: zero
        let rbar = vec![M::identity(); 2];
        let q_tilde = vec![M::identity(); 3];
        let tau = vf_torques(&rbar, &[0.0; 2], &q_tilde, &[0.0; 3], &tree, &gains, &p);
        for t in &tau {
            assert_relative_eq!(t.norm(), 0.0, epsilon = 1e-12);
        }

        // Q_i = R_i, all switch angles zero: equals the continuous law with
        // zero velocity gains
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<M> = (0..3)
            .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
            .collect();
        let rbar = plant::edge_relatives(&r, &tree);
        let tau = vf_torques(&rbar, &[0.0; 2], &q_tilde, &[0.0; 3], &tree, &gains, &p);
        let mut g0 = gains;
        g0.k_w = 0.0;
        g0.k_w_bar = 0.0;
        g0.allow_zero_k_w = true;
        let cont = continuous_torques(&r, &[V::zeros(); 3], &tree, &g0, &p);
        for i in 0..3 {
            assert_relative_eq!(tau[i], cont[i], epsilon = 1e-12);
        }

        // small-angle damping term
        let qt = rot(0.05, V::y());
        let tau2 = vf_torques(
            &[M::identity(); 2],
            &[0.0; 2],
            &[qt, M::identity(), M::identity()],
            &[0.0; 3],
            &tree,
            &gains,
            &p,
        );
        let approx_term = -gains.k_qtilde * psi(&(p.a() * rot(0.05, V::y())));
        assert_relative_eq!(tau2[0], approx_term, epsilon = 1e-3);
    }

    #[test]
    fn relative_aux_damping_term() {
        let p = reference_params();
        let mut gains = Gains::<f64>::default();
        let tree = OrientedTree::build(2, &[(1, 2)]).unwrap();

        // all Qtilde equal: zero
        let qt = vec![rot(0.2, V::x()); 2];
        for t in relative_aux_damping(&qt, &[0.1; 2], &tree, &gains, &p) {
            assert_relative_eq!(t.norm(), 0.0, epsilon = 1e-14);
        }

        // two agents: the terms are opposite
        let qt2 = vec![M::identity(), rot(0.1, V::x())];
        let terms = relative_aux_damping(&qt2, &[0.0; 2], &tree, &gains, &p);
        assert_relative_eq!(terms[0], -terms[1], epsilon = 1e-14);
        assert!(terms[0].norm() > 0.0);

        // disabled flag contributes exactly zero to the torque
        gains.relative_aux_damping = false;
        let rbar = vec![rot(0.1, V::x())];
        let without = vf_torques(&rbar, &[0.0], &qt2, &[0.0; 2], &tree, &gains, &p);
        gains.relative_aux_damping = true;
        let with = vf_torques(&rbar, &[0.0], &qt2, &[0.0; 2], &tree, &gains, &p);
        assert!((0..2).any(|i| (with[i] - without[i]).norm() > 0.0));
        for i in 0..2 {
            assert_relative_eq!(with[i] - without[i], terms[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn gains_validation() {
        let mut g = Gains::<f64>::default();
        assert!(g.validate(ControllerKind::Hybrid).is_ok());
        g.k_w = 0.0;
        assert_eq!(
            g.validate(ControllerKind::Continuous),
            Err(ControllerError::ZeroVelocityGain)
        );
        g.allow_zero_k_w = true;
        assert!(g.validate(ControllerKind::Continuous).is_ok());
        g.k_r = 0.0;
        assert!(matches!(
            g.validate(ControllerKind::Hybrid),
            Err(ControllerError::NonPositiveGain { name: "k_r", .. })
        ));
        let g2 = Gains::<f64> {
            k_qtilde: 0.0,
            ..Default::default()
        };
        assert!(g2.validate(ControllerKind::VelocityFree).is_err());
        assert!(g2.validate(ControllerKind::Hybrid).is_ok());
    }

    #[test]
    fn velocity_free_interface_takes_no_omega() {
        // compile-time contract: vf_torques' signature has no angular
        // velocity slice. This test pins the arity/type so a regression that
        // adds omega fails to compile.
        #[allow(clippy::type_complexity)]
        let f: fn(
            &[M],
            &[f64],
            &[M],
            &[f64],
            &OrientedTree,
            &Gains<f64>,
            &PotentialParams<f64>,
        ) -> Vec<V> = vf_torques::<f64>;
        let _ = f;
    }

    #[test]
    fn aux_flow_preserves_tangency() {
        // Qdot must satisfy Q' Qdot skew (tangent to SO(3))
        let p = reference_params();
        let gains = Gains::default();
        let r = rot(1.0, V::new(0.6, 0.0, 0.8));
        let q = rot(-0.4, V::y());
        let (q_rate, _) = aux_flow(&r, &q, 0.2, &gains, &p);
        let s = q.transpose() * q_rate;
        assert_relative_eq!((s + s.transpose()).norm(), 0.0, epsilon = 1e-12);
        // finite-difference of exp-updated Q matches the linear rate
        let h = 1e-9;
        let v = so3::vex(&so3::Skew::new(s).unwrap());
        let q_next = q * exp_so3(v * h).into_matrix();
        assert_relative_eq!(
            (q_next - q) / h,
            q_rate,
            epsilon = 1e-4,
            max_relative = 1e-5
        );
    }
}
