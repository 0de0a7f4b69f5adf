//! Rotation-group algebra: hat/vex maps, the antisymmetric projection ψ,
//! angle-axis construction, the exponential map and orthonormality repair.
//!
//! All values are immutable after construction and checked against fixed
//! tolerances: 1e-9 for rotation construction, 1e-12 for skew symmetry.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{lit, Real};

/// Orthonormality / determinant tolerance for rotation construction.
pub const ROTATION_TOL: f64 = 1e-9;
/// Skew-symmetry tolerance.
pub const SKEW_TOL: f64 = 1e-12;
/// Below this tangent norm the exponential map uses its truncated series.
pub const EXP_SERIES_SWITCH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum So3Error {
    #[error("matrix is not orthonormal: ||R'R - I||_F = {0:e}")]
    NotOrthonormal(f64),
    #[error("matrix determinant {0} is not +1 within tolerance")]
    BadDeterminant(f64),
    #[error("matrix is not skew-symmetric: ||S + S'||_F = {0:e}")]
    NotSkew(f64),
    #[error("rotation axis is not a unit vector (norm {0})")]
    NonUnitAxis(f64),
    #[error("orthogonal projection requires det > 0, got {0}")]
    NonPositiveDeterminant(f64),
    #[error("polar iteration did not converge")]
    ProjectionDiverged,
}

fn to_f64<S: Real>(x: S) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

/// Validation tolerance in the scalar's own precision: 1e-9 at f64,
/// proportionally looser for narrower types.
fn rotation_tol<S: Real>() -> S {
    let scaled = S::default_epsilon() * lit(1e7);
    lit::<S>(ROTATION_TOL).max(scaled)
}

/// A 3x3 rotation matrix, orthonormal with determinant +1 to 1e-9 (at f64).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<S: Real>(Matrix3<S>);

impl<S: Real> Rotation<S> {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates the orthonormality and determinant invariants.
    pub fn new(m: Matrix3<S>) -> Result<Self, So3Error> {
        let defect = (m.transpose() * m - Matrix3::identity()).norm();
        if defect > rotation_tol::<S>() {
            return Err(So3Error::NotOrthonormal(to_f64(defect)));
        }
        let det = m.determinant();
        if (det - S::one()).abs() > rotation_tol::<S>() {
            return Err(So3Error::BadDeterminant(to_f64(det)));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix that is already known to satisfy the invariants.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<S>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<S> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix3<S> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Normalized Euclidean distance to the identity: tr(I - R)/4, in [0, 1].
    pub fn dist_id_sq(&self) -> S {
        let tr = self.0.trace();
        (lit::<S>(3.0) - tr) / lit(4.0)
    }

    /// Rodrigues formula `I + sin(t) [u]x + (1 - cos(t)) [u]x^2`.
    pub fn from_axis_angle(theta: S, axis: Vector3<S>) -> Result<Self, So3Error> {
        let n = axis.norm();
        if (n - S::one()).abs() > rotation_tol::<S>() {
            return Err(So3Error::NonUnitAxis(to_f64(n)));
        }
        let k = hat(axis).into_matrix();
        let m = Matrix3::identity() + k * theta.sin() + k * k * (S::one() - theta.cos());
        Ok(Rotation(m))
    }

    /// Row-major 9-element form used by all file formats.
    pub fn to_row_major(&self) -> [S; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: [S; 9]) -> Result<Self, So3Error> {
        Rotation::new(Matrix3::new(
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8],
        ))
    }
}

impl<S: Real> std::ops::Mul for Rotation<S> {
    type Output = Rotation<S>;
    fn mul(self, rhs: Rotation<S>) -> Rotation<S> {
        Rotation(self.0 * rhs.0)
    }
}

impl<S: Real> std::ops::Mul<Vector3<S>> for Rotation<S> {
    type Output = Vector3<S>;
    fn mul(self, rhs: Vector3<S>) -> Vector3<S> {
        self.0 * rhs
    }
}

/// A 3x3 skew-symmetric matrix, checked to 1e-12.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Skew<S: Real>(Matrix3<S>);

impl<S: Real> Skew<S> {
    pub fn new(m: Matrix3<S>) -> Result<Self, So3Error> {
        let defect = (m + m.transpose()).norm();
        if defect > lit(SKEW_TOL) {
            return Err(So3Error::NotSkew(to_f64(defect)));
        }
        Ok(Skew(m))
    }

    pub fn matrix(&self) -> &Matrix3<S> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix3<S> {
        self.0
    }
}

/// `hat(v) w = v x w` for all w.
pub fn hat<S: Real>(v: Vector3<S>) -> Skew<S> {
    let z = S::zero();
    Skew(Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z))
}

/// Inverse of [`hat`].
pub fn vex<S: Real>(s: &Skew<S>) -> Vector3<S> {
    let m = &s.0;
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `vex` of the antisymmetric part: psi(C) = [c32-c23, c13-c31, c21-c12] / 2.
pub fn psi<S: Real>(c: &Matrix3<S>) -> Vector3<S> {
    let half = lit::<S>(0.5);
    Vector3::new(
        (c[(2, 1)] - c[(1, 2)]) * half,
        (c[(0, 2)] - c[(2, 0)]) * half,
        (c[(1, 0)] - c[(0, 1)]) * half,
    )
}

/// Exponential map so(3) -> SO(3), with a truncated series below 1e-6 to
/// avoid the 0/0 in the Rodrigues coefficients.
pub fn exp_so3<S: Real>(v: Vector3<S>) -> Rotation<S> {
    let theta = v.norm();
    let k = hat(v).into_matrix();
    if theta < lit(EXP_SERIES_SWITCH) {
        // I + K + K^2/2; truncation error O(theta^3) < 1e-18 at the switchover.
        return Rotation(Matrix3::identity() + k + k * k * lit::<S>(0.5));
    }
    let a = theta.sin() / theta;
    let b = (S::one() - theta.cos()) / (theta * theta);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Nearest rotation by the iterated polar averaging `M <- (M + M^-T)/2`.
pub fn project_to_rotation<S: Real>(m: &Matrix3<S>) -> Result<Rotation<S>, So3Error> {
    let det = m.determinant();
    if det <= S::zero() {
        return Err(So3Error::NonPositiveDeterminant(to_f64(det)));
    }
    let mut x = *m;
    for _ in 0..100 {
        let inv_t = x
            .try_inverse()
            .ok_or(So3Error::ProjectionDiverged)?
            .transpose();
        x = (x + inv_t) * lit::<S>(0.5);
        if (x.transpose() * x - Matrix3::identity()).norm() <= lit(SKEW_TOL) {
            return Ok(Rotation(x));
        }
    }
    Err(So3Error::ProjectionDiverged)
}

/// Haar-uniform rotation from a normalized 4-dimensional Gaussian quaternion.
pub fn random_rotation<S: Real, R: Rng>(rng: &mut R) -> Rotation<S> {
    let q: [f64; 4] = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    Rotation(m.map(lit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type M = Matrix3<f64>;
    type V = Vector3<f64>;

    #[test]
    fn hat_matches_cross_product() {
        assert_eq!(hat(V::zeros()).into_matrix(), M::zeros());
        let v = V::new(1.0, 2.0, 3.0);
        let expected = M::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(hat(v).into_matrix(), expected);
        assert_eq!(hat(v).into_matrix() * v, V::zeros());
        let w = V::new(-0.3, 4.0, 0.7);
        assert_relative_eq!(hat(v).into_matrix() * w, v.cross(&w), epsilon = 1e-15);
    }

    #[test]
    fn vex_inverts_hat() {
        for v in [V::new(1.0, 2.0, 3.0), V::zeros(), V::new(-1.0, 0.0, 5.0)] {
            assert_eq!(vex(&hat(v)), v);
        }
        assert!(Skew::new(M::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn psi_component_formula() {
        assert_eq!(psi(&M::identity()), V::zeros());
        let v = V::new(1.0, 2.0, 3.0);
        assert_eq!(psi(&hat(v).into_matrix()), v);
        let c = M::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(psi(&c), V::new(0.0, 0.0, -0.5));
    }

    #[test]
    fn dist_id_sq_values() {
        assert_eq!(Rotation::<f64>::identity().dist_id_sq(), 0.0);
        let u = V::new(0.0, 0.6, 0.8);
        let r = Rotation::from_axis_angle(std::f64::consts::PI, u).unwrap();
        assert_relative_eq!(r.dist_id_sq(), 1.0, epsilon = 1e-12);
        let r = Rotation::from_axis_angle(std::f64::consts::FRAC_PI_2, V::z()).unwrap();
        assert_relative_eq!(r.dist_id_sq(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn axis_angle_cases() {
        let r = Rotation::from_axis_angle(0.0, V::x()).unwrap();
        assert_eq!(*r.matrix(), M::identity());

        let r = Rotation::from_axis_angle(std::f64::consts::PI, V::z()).unwrap();
        assert_relative_eq!(
            *r.matrix(),
            M::from_diagonal(&V::new(-1.0, -1.0, 1.0)),
            epsilon = 1e-15
        );

        let u = V::new(0.0, 0.6, 0.8);
        let a = Rotation::from_axis_angle(0.7, u).unwrap();
        let b = Rotation::from_axis_angle(-0.7, u).unwrap();
        assert_relative_eq!(*(a * b).matrix(), M::identity(), epsilon = 1e-15);

        assert!(Rotation::from_axis_angle(1.0, V::new(0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn axis_angle_pi_is_reflection_form() {
        // R(pi, u) = -I + 2 u u'
        let u = V::new(0.36, 0.48, 0.8).normalize();
        let r = Rotation::from_axis_angle(std::f64::consts::PI, u).unwrap();
        let expected = -M::identity() + u * u.transpose() * 2.0;
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn exp_so3_cases() {
        assert_eq!(*exp_so3(V::zeros()).matrix(), M::identity());
        let v = V::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let expected = Rotation::from_axis_angle(std::f64::consts::FRAC_PI_2, V::z()).unwrap();
        assert_relative_eq!(*exp_so3(v).matrix(), *expected.matrix(), epsilon = 1e-14);

        let tiny = V::new(1e-9, 0.0, 0.0);
        let diff = exp_so3(tiny).into_matrix() - (M::identity() + hat(tiny).into_matrix());
        assert!(diff.norm() <= 1e-18);
    }

    #[test]
    fn projection_repairs_drift() {
        let r = Rotation::from_axis_angle(0.4, V::new(0.0, 0.6, 0.8)).unwrap();
        let p = project_to_rotation(r.matrix()).unwrap();
        assert_relative_eq!(*p.matrix(), *r.matrix(), epsilon = 1e-12);

        let mut noisy = r.into_matrix();
        noisy[(0, 1)] += 1e-6;
        let p = project_to_rotation(&noisy).unwrap();
        assert!((p.into_matrix() - r.into_matrix()).norm() < 1e-5);
        assert!((p.matrix().transpose() * p.matrix() - M::identity()).norm() <= 1e-12);

        let p = project_to_rotation(&(M::identity() * 1.01)).unwrap();
        assert_relative_eq!(*p.matrix(), M::identity(), epsilon = 1e-12);

        assert!(project_to_rotation(&M::from_diagonal(&V::new(-1.0, 1.0, 1.0))).is_err());
    }

    #[test]
    fn random_rotation_is_deterministic_and_valid() {
        let a: Rotation<f64> = random_rotation(&mut ChaCha8Rng::seed_from_u64(7));
        let b: Rotation<f64> = random_rotation(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        for seed in 0..100 {
            let r: Rotation<f64> = random_rotation(&mut ChaCha8Rng::seed_from_u64(seed));
            assert!(Rotation::new(r.into_matrix()).is_ok());
        }
    }

    #[test]
    fn random_rotation_trace_has_haar_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| random_rotation::<f64, _>(&mut rng).matrix().trace())
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.05, "mean trace {mean}");
    }

    #[test]
    fn works_at_f32() {
        let v = Vector3::<f32>::new(0.1, -0.2, 0.3);
        let r = exp_so3(v);
        assert!(Rotation::new(r.into_matrix()).is_ok());
        assert!((vex(&hat(v)) - v).norm() == 0.0);
    }
}
