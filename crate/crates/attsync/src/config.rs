//! Scenario configuration: a TOML schema that validates into a [`RunSpec`].
//!
//! Schema (all numbers decimal):
//!
//! ```toml
//! controller = "hybrid"            # continuous | hybrid | velocity-free
//!
//! [graph]
//! agents = 7
//! edges = [[1, 2], [2, 3]]         # one-based (head, tail) pairs, a tree
//!
//! [potential]
//! eigenvalues = [5.0, 8.57, 12.0]  # of A, ascending
//! # eigenvectors = [[1,0,0],[0,1,0],[0,0,1]]   # optional, default axes
//! xi_set = [2.8274333882308138]    # edge switch angles
//! # pi_set = [...]                 # aux switch angles, default xi_set
//! gamma = 1.9251                   # with delta; or use *_fraction instead
//! delta = 0.3848
//! # delta_q = 0.3848               # aux threshold, default delta
//! # gamma_fraction / delta_fraction: synthesize gamma, delta from bounds
//! # u = [0.0, 0.6455, 0.7638]      # optional override of the switch axis
//!
//! [gains]                          # all optional, defaults below
//! k_r = 1.0
//! k_w = 0.1
//! k_w_bar = 0.1
//! k_xi = 20.0
//! k_q = 20.0
//! k_qtilde = 2.0
//! k_zeta = 20.0
//!
//! [[initial.agents]]               # one per agent
//! axis = [0.0, 0.0, 1.0]
//! angle = -1.5707963267948966
//! # omega = [0, 0, 0]              # optional
//! # inertia = [0.06, 0.08, 0.1]    # optional
//! # q_axis / q_angle / zeta        # velocity-free auxiliary ICs
//!
//! [initial]
//! # xi = [0.0, ...]                # per-edge, optional, default 0
//!
//! [integration]
//! h = 0.001
//! t_end = 30.0
//! sample_stride = 100              # optional, default 100
//! seed = 7                         # optional, default 0
//!
//! [options]                        # optional section
//! epsilon = 0.01
//! allow_zero_k_w = false
//! relative_aux_damping = false
//! # perturbation = 1e-6            # initial attitude kick, default off
//! ```

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerError, ControllerKind, Gains};
use crate::engine::{RunSpec, SystemState};
use crate::plant;
use crate::potential::{self, PotentialError, PotentialParams};
use crate::so3::{self, So3Error};
use crate::topology::{OrientedTree, TopologyError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Gains(#[from] ControllerError),
    #[error(transparent)]
    Rotation(#[from] So3Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub agents: usize,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub eigenvalues: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvectors: Option<[[f64; 3]; 3]>,
    pub xi_set: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi_set: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsSection {
    pub k_r: f64,
    pub k_w: f64,
    pub k_w_bar: f64,
    pub k_xi: f64,
    pub k_q: f64,
    pub k_qtilde: f64,
    pub k_zeta: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        let g = Gains::<f64>::default();
        GainsSection {
            k_r: g.k_r,
            k_w: g.k_w,
            k_w_bar: g.k_w_bar,
            k_xi: g.k_xi,
            k_q: g.k_q,
            k_qtilde: g.k_qtilde,
            k_zeta: g.k_zeta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentIc {
    pub axis: [f64; 3],
    pub angle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_axis: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub agents: Vec<AgentIc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    pub h: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_stride() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptionsSection {
    pub epsilon: f64,
    pub allow_zero_k_w: bool,
    pub relative_aux_damping: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
}

impl Default for OptionsSection {
    fn default() -> Self {
        OptionsSection {
            epsilon: 1e-2,
            allow_zero_k_w: false,
            relative_aux_damping: false,
            perturbation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub controller: ControllerKind,
    pub graph: GraphSection,
    pub potential: PotentialSection,
    #[serde(default)]
    pub gains: GainsSection,
    pub initial: InitialSection,
    pub integration: IntegrationSection,
    #[serde(default)]
    pub options: OptionsSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the potential parameters, synthesizing the missing pieces.
    pub fn potential_params(&self) -> Result<PotentialParams<f64>, ConfigError> {
        let pot = &self.potential;
        let eigenvectors = match pot.eigenvectors {
            Some(rows) => [
                Vector3::from(rows[0]),
                Vector3::from(rows[1]),
                Vector3::from(rows[2]),
            ],
            None => [Vector3::x(), Vector3::y(), Vector3::z()],
        };
        let u = match pot.u {
            Some(v) => Vector3::from(v).normalize(),
            None => {
                let alphas = potential::synthesis_alphas(pot.eigenvalues);
                (eigenvectors[0] * alphas[0]
                    + eigenvectors[1] * alphas[1]
                    + eigenvectors[2] * alphas[2])
                    .normalize()
            }
        };
        let phi_l = pot.xi_set.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let (gamma, delta) = match (pot.gamma, pot.delta) {
            (Some(g), Some(d)) => (g, d),
            (None, None) => {
                let gf = pot.gamma_fraction.unwrap_or(0.95);
                let df = pot.delta_fraction.unwrap_or(0.95);
                if !(gf > 0.0 && gf < 1.0 && df > 0.0 && df < 1.0) {
                    return Err(PotentialError::BadFraction(gf.min(df)).into());
                }
                let g = gf * potential::gamma_bound(pot.eigenvalues);
                let d = df * potential::delta_bound(pot.eigenvalues, g, phi_l);
                (g, d)
            }
            _ => {
                return Err(invalid(
                    "potential: give both gamma and delta, or neither (fractions)",
                ))
            }
        };
        Ok(PotentialParams::new(
            pot.eigenvalues,
            eigenvectors,
            u,
            gamma,
            delta,
            pot.delta_q,
            pot.xi_set.clone(),
            pot.pi_set.clone(),
        )?)
    }

    pub fn gains_struct(&self) -> Gains<f64> {
        Gains {
            k_r: self.gains.k_r,
            k_w: self.gains.k_w,
            k_w_bar: self.gains.k_w_bar,
            k_xi: self.gains.k_xi,
            k_q: self.gains.k_q,
            k_qtilde: self.gains.k_qtilde,
            k_zeta: self.gains.k_zeta,
            allow_zero_k_w: self.options.allow_zero_k_w,
            relative_aux_damping: self.options.relative_aux_damping,
        }
    }

    /// Full validation into an executable run specification.
    pub fn to_run_spec(&self) -> Result<RunSpec<f64>, ConfigError> {
        let tree = OrientedTree::build(self.graph.agents, &self.graph.edges)?;
        let params = self.potential_params()?;
        let gains = self.gains_struct();
        gains.validate(self.controller)?;
        if self.integration.h <= 0.0 || self.integration.t_end < 0.0 {
            return Err(invalid("integration: h must be > 0 and t_end >= 0"));
        }
        if self.options.epsilon <= 0.0 {
            return Err(invalid("options: epsilon must be > 0"));
        }
        if self.initial.agents.len() != tree.n_agents() {
            return Err(invalid(format!(
                "initial: expected {} agent blocks, got {}",
                tree.n_agents(),
                self.initial.agents.len()
            )));
        }

        let mut r = Vec::new();
        let mut omega = Vec::new();
        let mut inertia = Vec::new();
        let mut q = Vec::new();
        let mut zeta = Vec::new();
        let aux = self.controller == ControllerKind::VelocityFree;
        for (i, ic) in self.initial.agents.iter().enumerate() {
            let axis = Vector3::from(ic.axis);
            if axis.norm() == 0.0 {
                return Err(invalid(format!("initial agent {}: zero axis", i + 1)));
            }
            let rot = so3::Rotation::from_axis_angle(ic.angle, axis.normalize())?;
            r.push(rot.into_matrix());
            omega.push(Vector3::from(ic.omega.unwrap_or([0.0; 3])));
            let j = Vector3::from(ic.inertia.unwrap_or([0.06, 0.08, 0.1]));
            if j.iter().any(|&x| x <= 0.0) {
                return Err(invalid(format!(
                    "initial agent {}: inertia must be positive",
                    i + 1
                )));
            }
            inertia.push(j);
            if aux {
                let q_i = match (ic.q_axis, ic.q_angle) {
                    (Some(ax), Some(angle)) => {
                        let ax = Vector3::from(ax);
                        if ax.norm() == 0.0 {
                            return Err(invalid(format!("initial agent {}: zero q_axis", i + 1)));
                        }
                        so3::Rotation::from_axis_angle(angle, ax.normalize())?.into_matrix()
                    }
                    (None, None) => *r.last().unwrap(),
                    _ => {
                        return Err(invalid(format!(
                            "initial agent {}: give both q_axis and q_angle, or neither",
                            i + 1
                        )))
                    }
                };
                q.push(q_i);
                zeta.push(ic.zeta.unwrap_or(0.0));
            } else if ic.q_axis.is_some() || ic.q_angle.is_some() || ic.zeta.is_some() {
                return Err(invalid(format!(
                    "initial agent {}: auxiliary ICs only apply to the velocity-free law",
                    i + 1
                )));
            }
        }

        // optional initial attitude perturbation (saddle-escape experiments)
        if let Some(angle) = self.options.perturbation {
            let mut rng = ChaCha8Rng::seed_from_u64(self.integration.seed);
            for r_i in &mut r {
                let axis = loop {
                    let v = Vector3::new(
                        rand::Rng::gen::<f64>(&mut rng) - 0.5,
                        rand::Rng::gen::<f64>(&mut rng) - 0.5,
                        rand::Rng::gen::<f64>(&mut rng) - 0.5,
                    );
                    if v.norm() > 1e-3 {
                        break v.normalize();
                    }
                };
                *r_i *= so3::exp_so3(axis * angle).into_matrix();
            }
        }

        let xi = match &self.initial.xi {
            Some(v) => {
                if v.len() != tree.n_edges() {
                    return Err(invalid(format!(
                        "initial: expected {} xi values, got {}",
                        tree.n_edges(),
                        v.len()
                    )));
                }
                v.clone()
            }
            None => vec![0.0; tree.n_edges()],
        };
        let rbar = plant::edge_relatives(&r, &tree);
        let initial = SystemState {
            r,
            omega,
            rbar,
            xi,
            q,
            zeta,
        };
        let spec = RunSpec {
            tree,
            params,
            gains,
            kind: self.controller,
            inertia,
            initial,
            h: self.integration.h,
            t_end: self.integration.t_end,
            sample_stride: self.integration.sample_stride,
            epsilon: self.options.epsilon,
        };
        spec.validate()
            .map_err(|e| invalid(format!("inconsistent initial state: {e}")))?;
        Ok(spec)
    }
}
