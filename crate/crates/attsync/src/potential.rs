//! The switched attitude potential `U(R, xi) = tr(A(I - R Ra(xi, u))) + gamma xi^2 / 2`,
//! its gradients, parameter synthesis, and the numerical certificate that a
//! switch value lowers the potential by more than `delta` at every undesired
//! critical point.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::so3::{self, psi, Rotation};
use crate::{lit, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PotentialError {
    #[error("eigenvalues must satisfy 0 < l1 <= l2 < l3, got ({0}, {1}, {2})")]
    BadEigenvalues(f64, f64, f64),
    #[error("eigenvectors must be orthonormal")]
    BadEigenvectors,
    #[error("u must be a unit vector (norm {0})")]
    NonUnitU(f64),
    #[error("gamma {gamma} violates the bound gamma < {bound}")]
    GammaOutOfBounds { gamma: f64, bound: f64 },
    #[error("delta {delta} violates the bound 0 < delta < {bound}")]
    DeltaOutOfBounds { delta: f64, bound: f64 },
    #[error("switch-angle set must be nonempty with angles in (0, pi]")]
    BadSwitchSet,
    #[error("synthesis fraction {0} must lie in (0, 1)")]
    BadFraction(f64),
    #[error("equilibrium enumeration requires three distinct eigenvalues")]
    RepeatedEigenvalues,
}

fn f<S: Real>(x: S) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

/// Parameters of the potential and its switching logic.
///
/// `xi_set` drives the per-edge switches, `pi_set` the per-agent auxiliary
/// switches; they default to the same set. `delta` and `delta_q` are the
/// corresponding jump thresholds.
#[derive(Debug, Clone)]
pub struct PotentialParams<S: Real> {
    a: Matrix3<S>,
    eigenvalues: [S; 3],
    eigenvectors: [Vector3<S>; 3],
    u: Vector3<S>,
    gamma: S,
    delta: S,
    delta_q: S,
    xi_set: Vec<S>,
    pi_set: Vec<S>,
}

/// Synthesis regime selected from the eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisCase {
    RepeatedLow,
    LargeMiddle,
    Generic,
}

/// Relative slack used to snap eigenvalue triples sitting numerically on the
/// `l2 = l1 l3 / (l3 - l1)` boundary into the LargeMiddle regime.
const CASE_BOUNDARY_REL_TOL: f64 = 1e-3;

impl<S: Real> PotentialParams<S> {
    /// Validates every invariant and assembles `A` from its eigen data.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eigenvalues: [S; 3],
        eigenvectors: [Vector3<S>; 3],
        u: Vector3<S>,
        gamma: S,
        delta: S,
        delta_q: Option<S>,
        xi_set: Vec<S>,
        pi_set: Option<Vec<S>>,
    ) -> Result<Self, PotentialError> {
        let [l1, l2, l3] = eigenvalues;
        if !(l1 > S::zero() && l1 <= l2 && l2 < l3) {
            return Err(PotentialError::BadEigenvalues(f(l1), f(l2), f(l3)));
        }
        for i in 0..3 {
            for j in i..3 {
                let dot = eigenvectors[i].dot(&eigenvectors[j]);
                let target = if i == j { S::one() } else { S::zero() };
                if (dot - target).abs() > lit(1e-9) {
                    return Err(PotentialError::BadEigenvectors);
                }
            }
        }
        let un = u.norm();
        if (un - S::one()).abs() > lit(1e-9) {
            return Err(PotentialError::NonUnitU(f(un)));
        }
        if xi_set.is_empty()
            || xi_set
                .iter()
                .any(|&x| x.abs() <= S::zero() || x.abs() > lit(std::f64::consts::PI + 1e-12))
        {
            return Err(PotentialError::BadSwitchSet);
        }
        let pi_set = pi_set.unwrap_or_else(|| xi_set.clone());
        if pi_set.is_empty()
            || pi_set
                .iter()
                .any(|&x| x.abs() <= S::zero() || x.abs() > lit(std::f64::consts::PI + 1e-12))
        {
            return Err(PotentialError::BadSwitchSet);
        }

        let gb = gamma_bound(eigenvalues);
        if !(gamma > S::zero() && gamma < gb) {
            return Err(PotentialError::GammaOutOfBounds {
                gamma: f(gamma),
                bound: f(gb),
            });
        }
        let phi_l = xi_set
            .iter()
            .map(|x| x.abs())
            .fold(S::zero(), |a, b| if b > a { b } else { a });
        let db = delta_bound(eigenvalues, gamma, phi_l);
        if !(delta > S::zero() && delta < db) {
            return Err(PotentialError::DeltaOutOfBounds {
                delta: f(delta),
                bound: f(db),
            });
        }
        let delta_q = delta_q.unwrap_or(delta);
        if delta_q <= S::zero() {
            return Err(PotentialError::DeltaOutOfBounds {
                delta: f(delta_q),
                bound: f(db),
            });
        }

        let mut a = Matrix3::zeros();
        for i in 0..3 {
            a += eigenvectors[i] * eigenvectors[i].transpose() * eigenvalues[i];
        }
        Ok(PotentialParams {
            a,
            eigenvalues,
            eigenvectors,
            u,
            gamma,
            delta,
            delta_q,
            xi_set,
            pi_set,
        })
    }

    pub fn a(&self) -> &Matrix3<S> {
        &self.a
    }
    pub fn eigenvalues(&self) -> [S; 3] {
        self.eigenvalues
    }
    pub fn eigenvectors(&self) -> &[Vector3<S>; 3] {
        &self.eigenvectors
    }
    pub fn u(&self) -> Vector3<S> {
        self.u
    }
    pub fn gamma(&self) -> S {
        self.gamma
    }
    pub fn delta(&self) -> S {
        self.delta
    }
    pub fn delta_q(&self) -> S {
        self.delta_q
    }
    pub fn xi_set(&self) -> &[S] {
        &self.xi_set
    }
    pub fn pi_set(&self) -> &[S] {
        &self.pi_set
    }

    /// Test-only copy with an arbitrary `delta`, bypassing the feasibility
    /// bound so that negative certificate cases can be exercised.
    pub fn with_delta_unchecked(&self, delta: S) -> Self {
        let mut p = self.clone();
        p.delta = delta;
        p.delta_q = delta;
        p
    }
}

/// `Delta*` of the synthesis regime picked by [`synthesis_case`].
pub fn delta_star<S: Real>(eigs: [S; 3]) -> S {
    let [l1, l2, l3] = eigs;
    match synthesis_case(eigs) {
        SynthesisCase::RepeatedLow => l1 * (S::one() - l2 / l3),
        SynthesisCase::LargeMiddle => l1,
        SynthesisCase::Generic => {
            let pair_sum = (l1 * l2 + l1 * l3 + l2 * l3) * lit(2.0);
            lit::<S>(4.0) * l1 * l2 * l3 / pair_sum
        }
    }
}

pub fn synthesis_case<S: Real>(eigs: [S; 3]) -> SynthesisCase {
    let [l1, l2, l3] = eigs;
    if (l2 - l1).abs() <= lit::<S>(1e-9) * l3 {
        return SynthesisCase::RepeatedLow;
    }
    let boundary = l1 * l3 / (l3 - l1);
    if l2 >= boundary * (S::one() - lit(CASE_BOUNDARY_REL_TOL)) {
        SynthesisCase::LargeMiddle
    } else {
        SynthesisCase::Generic
    }
}

/// Upper bound on gamma: `4 Delta* / pi^2`.
pub fn gamma_bound<S: Real>(eigs: [S; 3]) -> S {
    delta_star(eigs) * lit(4.0 / (std::f64::consts::PI * std::f64::consts::PI))
}

/// Upper bound on delta: `(4 Delta*/pi^2 - gamma) phi_L^2 / 2`.
pub fn delta_bound<S: Real>(eigs: [S; 3], gamma: S, phi_l: S) -> S {
    (gamma_bound(eigs) - gamma) * phi_l * phi_l / lit(2.0)
}

/// Direction weights `alpha_i` of the switch axis `u = sum alpha_i q_i`,
/// all taken nonnegative.
pub fn synthesis_alphas<S: Real>(eigs: [S; 3]) -> [S; 3] {
    let [l1, l2, l3] = eigs;
    match synthesis_case(eigs) {
        SynthesisCase::RepeatedLow => {
            let a3 = (S::one() - l2 / l3).sqrt();
            let a2 = (l2 / l3).sqrt();
            [S::zero(), a2, a3]
        }
        SynthesisCase::LargeMiddle => {
            let a2 = (l2 / (l2 + l3)).sqrt();
            let a3 = (l3 / (l2 + l3)).sqrt();
            [S::zero(), a2, a3]
        }
        SynthesisCase::Generic => {
            let pair_sum = (l1 * l2 + l1 * l3 + l2 * l3) * lit(2.0);
            let alpha = |num: S| -> S {
                let v = S::one() - lit::<S>(4.0) * num / pair_sum;
                if v > S::zero() {
                    v.sqrt()
                } else {
                    S::zero()
                }
            };
            [alpha(l2 * l3), alpha(l1 * l3), alpha(l1 * l2)]
        }
    }
}

/// Builds a full parameter set from eigen data and the two bound fractions.
pub fn synthesize<S: Real>(
    a_eigs: [S; 3],
    q_vecs: [Vector3<S>; 3],
    xi_set: Vec<S>,
    gamma_fraction: S,
    delta_fraction: S,
) -> Result<PotentialParams<S>, PotentialError> {
    for frac in [gamma_fraction, delta_fraction] {
        if !(frac > S::zero() && frac < S::one()) {
            return Err(PotentialError::BadFraction(f(frac)));
        }
    }
    let alphas = synthesis_alphas(a_eigs);
    let mut u = Vector3::zeros();
    for i in 0..3 {
        u += q_vecs[i] * alphas[i];
    }
    u.normalize_mut();
    let gamma = gamma_fraction * gamma_bound(a_eigs);
    let phi_l = xi_set
        .iter()
        .map(|x| x.abs())
        .fold(S::zero(), |a, b| if b > a { b } else { a });
    let delta = delta_fraction * delta_bound(a_eigs, gamma, phi_l);
    PotentialParams::new(a_eigs, q_vecs, u, gamma, delta, None, xi_set, None)
}

fn ra<S: Real>(xi: S, u: Vector3<S>) -> Matrix3<S> {
    so3::exp_so3(u * xi).into_matrix()
}

/// `U(R, xi) = tr(A(I - R Ra(xi, u))) + gamma xi^2 / 2`.
pub fn u_value<S: Real>(r: &Matrix3<S>, xi: S, p: &PotentialParams<S>) -> S {
    let m = p.a * (Matrix3::identity() - r * ra(xi, p.u));
    m.trace() + p.gamma * xi * xi / lit(2.0)
}

/// Partial derivative of `U` in the switch angle:
/// `gamma xi + 2 u' psi(A R Ra(xi, u))`.
pub fn grad_xi<S: Real>(r: &Matrix3<S>, xi: S, p: &PotentialParams<S>) -> S {
    let g = psi(&(p.a * r * ra(xi, p.u)));
    p.gamma * xi + lit::<S>(2.0) * p.u.dot(&g)
}

/// Body-frame rotation gradient `g = psi(Ra(xi,u) A R)`: the directional
/// derivative of `U` along `R exp(t [eta]x)` at t = 0 equals `2 eta' g`.
pub fn grad_r_body<S: Real>(r: &Matrix3<S>, xi: S, p: &PotentialParams<S>) -> Vector3<S> {
    psi(&(ra(xi, p.u) * p.a * r))
}

fn star_over<S: Real>(r: &Matrix3<S>, set: &[S], p: &PotentialParams<S>) -> (S, S) {
    let mut best = (set[0], u_value(r, set[0], p));
    for &angle in &set[1..] {
        let v = u_value(r, angle, p);
        if v < best.1 {
            best = (angle, v);
        }
    }
    best
}

/// Minimizer of `U(R, .)` over the edge switch set, ties broken by set order.
pub fn xi_star<S: Real>(r: &Matrix3<S>, p: &PotentialParams<S>) -> (S, S) {
    star_over(r, &p.xi_set, p)
}

/// Minimizer over the auxiliary switch set.
pub fn zeta_star<S: Real>(r: &Matrix3<S>, p: &PotentialParams<S>) -> (S, S) {
    star_over(r, &p.pi_set, p)
}

/// `U(R, xi) - min over the edge switch set`; a jump is enabled at
/// `gap >= delta`.
pub fn gap<S: Real>(r: &Matrix3<S>, xi: S, p: &PotentialParams<S>) -> S {
    u_value(r, xi, p) - xi_star(r, p).1
}

/// Auxiliary-system variant of [`gap`], against `pi_set`.
pub fn gap_aux<S: Real>(r: &Matrix3<S>, zeta: S, p: &PotentialParams<S>) -> S {
    u_value(r, zeta, p) - zeta_star(r, p).1
}

/// The isolated critical points of `tr(A(I - R))`: the identity (desired)
/// and the pi-rotations about the eigenvectors of A.
#[derive(Debug, Clone)]
pub struct EquilibriumSet<S: Real> {
    pub desired: Rotation<S>,
    /// One pi-rotation per eigenvector, in ascending-eigenvalue order.
    pub undesired: Vec<Rotation<S>>,
}

pub fn undesired_equilibria<S: Real>(
    p: &PotentialParams<S>,
) -> Result<EquilibriumSet<S>, PotentialError> {
    let [l1, l2, l3] = p.eigenvalues;
    if (l2 - l1).abs() <= lit::<S>(1e-9) * l3 || (l3 - l2).abs() <= lit::<S>(1e-9) * l3 {
        return Err(PotentialError::RepeatedEigenvalues);
    }
    let pi = lit::<S>(std::f64::consts::PI);
    let undesired = p
        .eigenvectors
        .iter()
        .map(|&q| Rotation::from_axis_angle(pi, q).expect("eigenvector is unit"))
        .collect();
    Ok(EquilibriumSet {
        desired: Rotation::identity(),
        undesired,
    })
}

/// Eigenvalues (ascending) of the Hessian block `tr(A R*) I - A R*` at a
/// critical point of the weighted trace.
pub fn hessian_block_eigs<S: Real>(r_star: &Matrix3<S>, p: &PotentialParams<S>) -> [S; 3] {
    let ar = p.a * r_star;
    let block = Matrix3::identity() * ar.trace() - ar;
    // At a critical point A R* is symmetric; symmetrize away roundoff.
    let sym = (block + block.transpose()) * lit::<S>(0.5);
    let mut eigs: Vec<S> = nalgebra::SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [eigs[0], eigs[1], eigs[2]]
}

/// Outcome of the numerical Condition-1 certificate.
#[derive(Debug, Clone)]
pub struct Condition1Report {
    /// Per undesired critical point: (eigenvector index, gap, gap - delta).
    pub point_margins: Vec<(usize, f64, f64)>,
    /// Gradient zeros found by descent probing that are neither the desired
    /// point nor an enumerated undesired point.
    pub unclassified_zeros: usize,
    pub pass: bool,
}

/// Verifies the switch-gap condition at every enumerated undesired critical
/// point and probes for additional gradient zeros by short descent runs from
/// random starts.
pub fn check_condition1<S: Real>(p: &PotentialParams<S>) -> Condition1Report {
    check_condition1_with_delta(p, p.delta)
}

pub fn check_condition1_with_delta<S: Real>(p: &PotentialParams<S>, delta: S) -> Condition1Report {
    let pi = lit::<S>(std::f64::consts::PI);
    let mut point_margins = Vec::new();
    let mut pass = true;
    for (beta, &q) in p.eigenvectors.iter().enumerate() {
        let r_star = Rotation::from_axis_angle(pi, q).expect("unit eigenvector");
        let g = gap(r_star.matrix(), S::zero(), p);
        let margin = g - delta;
        if margin <= S::zero() {
            pass = false;
        }
        point_margins.push((beta, f(g), f(margin)));
    }

    // Descent probe: every gradient zero reachable from random starts must be
    // either the desired pair (I, 0) or one of the enumerated pi-rotations.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut unclassified = 0usize;
    let eq = p
        .eigenvectors
        .iter()
        .map(|&q| {
            Rotation::from_axis_angle(pi, q)
                .expect("unit")
                .into_matrix()
        })
        .collect::<Vec<_>>();
    let step = lit::<S>(0.05);
    for _ in 0..60 {
        let mut r = so3::random_rotation::<S, _>(&mut rng).into_matrix();
        let mut xi = S::zero();
        for _ in 0..4000 {
            let gr = grad_r_body(&r, xi, p);
            let gx = grad_xi(&r, xi, p);
            if gr.norm() + gx.abs() < lit(1e-9) {
                break;
            }
            r *= so3::exp_so3(gr * -step).into_matrix();
            xi -= step * gx * lit(0.2);
        }
        let gr = grad_r_body(&r, xi, p);
        let gx = grad_xi(&r, xi, p);
        if gr.norm() + gx.abs() >= lit(1e-6) {
            continue; // did not land on a critical point
        }
        let near_desired = (r - Matrix3::identity()).norm() < lit(1e-3) && xi.abs() < lit(1e-3);
        let near_undesired = eq.iter().any(|m| (r - m).norm() < lit(1e-3));
        if !near_desired && !near_undesired {
            unclassified += 1;
        }
    }
    if unclassified > 0 {
        pass = false;
    }
    Condition1Report {
        point_margins,
        unclassified_zeros: unclassified,
        pass,
    }
}

/// The seven-satellite scenario parameter set used throughout the bundled
/// configurations: A = diag(5, 8.57, 12), u = [0, 0.6455, 0.7638],
/// gamma = 1.9251, delta = 0.3848, switch set {0.9 pi}.
pub fn reference_params() -> PotentialParams<f64> {
    PotentialParams::new(
        [5.0, 8.57, 12.0],
        [Vector3::x(), Vector3::y(), Vector3::z()],
        Vector3::new(0.0, 0.6455, 0.7638).normalize(),
        1.9251,
        0.3848,
        None,
        vec![0.9 * std::f64::consts::PI],
        None,
    )
    .expect("reference parameters are feasible")
}
