//! Distributed attitude synchronization for multi-agent rigid bodies on SO(3).
//!
//! The crate provides three distributed feedback laws over an undirected tree
//! of rigid bodies: a continuous gradient law (almost-global), a hybrid law
//! that switches a per-edge scalar to escape the saddle points of the
//! attitude potential (global), and a velocity-free hybrid law that replaces
//! angular-velocity damping with per-agent auxiliary systems. A fixed-step
//! hybrid flow/jump engine executes the closed loop and monitors the
//! associated Lyapunov certificates at runtime.
//!
//! The core math (`so3`, `topology`, `potential`, `plant`, `controllers`) is
//! generic over the scalar type through [`Real`]; the simulation engine and
//! the CLI harness are `f64`-concrete. Type aliases for the common `f64`
//! instantiation live at the crate root.

pub mod config;
pub mod controllers;
pub mod engine;
pub mod harness;
pub mod plant;
pub mod potential;
pub mod so3;
pub mod topology;

/// Scalar type of the generic core: `f32` or `f64`.
pub trait Real:
    nalgebra::RealField + Copy + num_traits::FromPrimitive + num_traits::ToPrimitive
{
}
impl<T> Real for T where
    T: nalgebra::RealField + Copy + num_traits::FromPrimitive + num_traits::ToPrimitive
{
}

/// Converts an `f64` literal into the generic scalar.
pub(crate) fn lit<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("f64 literal must convert into the scalar type")
}

pub type Rotation = so3::Rotation<f64>;
pub type Skew = so3::Skew<f64>;
pub type PotentialParams = potential::PotentialParams<f64>;
pub type AgentState = plant::AgentState<f64>;
pub type AuxState = controllers::AuxState<f64>;
pub type Gains = controllers::Gains<f64>;

pub use config::ScenarioConfig;
pub use engine::{RunRecord, RunSummary};
pub use topology::OrientedTree;
