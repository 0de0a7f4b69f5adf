//! Rigid-body attitude dynamics: kinematics on SO(3) and Euler's equation,
//! plus the per-edge relative attitudes used by the network layer.

use nalgebra::{Matrix3, Vector3};

use crate::so3::{hat, Rotation};
use crate::topology::OrientedTree;
use crate::{lit, Real};

/// Principal moments of inertia of the reference small-satellite body, kg m^2.
pub fn default_inertia<S: Real>() -> Vector3<S> {
    Vector3::new(lit(0.06), lit(0.08), lit(0.1))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("inertia moments must be strictly positive, got ({0}, {1}, {2})")]
    NonPositiveInertia(f64, f64, f64),
    #[error("expected {expected} agent states, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One agent's attitude, body angular velocity, and diagonal inertia.
#[derive(Debug, Clone)]
pub struct AgentState<S: Real> {
    pub r: Rotation<S>,
    pub omega: Vector3<S>,
    pub inertia: Vector3<S>,
}

impl<S: Real> AgentState<S> {
    pub fn new(r: Rotation<S>, omega: Vector3<S>, inertia: Vector3<S>) -> Result<Self, PlantError> {
        if inertia.iter().any(|&j| j <= S::zero()) {
            let g = |i: usize| num_traits::ToPrimitive::to_f64(&inertia[i]).unwrap_or(f64::NAN);
            return Err(PlantError::NonPositiveInertia(g(0), g(1), g(2)));
        }
        Ok(AgentState { r, omega, inertia })
    }

    /// At-rest agent with the default inertia.
    pub fn at_rest(r: Rotation<S>) -> Self {
        AgentState {
            r,
            omega: Vector3::zeros(),
            inertia: default_inertia(),
        }
    }

    /// Rotational kinetic energy `omega' J omega / 2`.
    pub fn kinetic_energy(&self) -> S {
        self.omega.dot(&self.inertia.component_mul(&self.omega)) / lit(2.0)
    }
}

/// Attitude kinematics `Rdot = R [omega]x`, returned in the ambient space of
/// 3x3 matrices for use inside integrator stages.
pub fn attitude_rate<S: Real>(r: &Matrix3<S>, omega: &Vector3<S>) -> Matrix3<S> {
    r * hat(*omega).matrix()
}

/// Euler's equation solved for the acceleration:
/// `omegadot = J^{-1} (tau - omega x J omega)` with diagonal `J`.
pub fn omega_rate<S: Real>(
    omega: &Vector3<S>,
    inertia: &Vector3<S>,
    tau: &Vector3<S>,
) -> Vector3<S> {
    let j_omega = inertia.component_mul(omega);
    let rhs = tau - omega.cross(&j_omega);
    rhs.component_div(inertia)
}

/// Relative attitude of edge `k`: `Rbar_k = R_tail' R_head`.
pub fn edge_relative<S: Real>(r: &[Matrix3<S>], tree: &OrientedTree, k: usize) -> Matrix3<S> {
    let (head, tail) = tree.edge(k);
    r[tail].transpose() * r[head]
}

/// All edge relative attitudes recomputed from the agent attitudes.
pub fn edge_relatives<S: Real>(r: &[Matrix3<S>], tree: &OrientedTree) -> Vec<Matrix3<S>> {
    (0..tree.n_edges())
        .map(|k| edge_relative(r, tree, k))
        .collect()
}

/// Total rotational kinetic energy of the network.
pub fn kinetic_energy_sum<S: Real>(agents: &[AgentState<S>]) -> S {
    agents
        .iter()
        .fold(S::zero(), |acc, a| acc + a.kinetic_energy())
}
