//! SO(3) and SE(3) group operations: exponential/logarithm maps, composition,
//! group actions, and the adjoint/left-Jacobian matrices used to differentiate
//! pose-valued expressions with respect to small left perturbations.
//!
//! Twists are ordered (omega, v): rotation part first. The left perturbation of
//! a pose `T` by a twist `xi` is `exp(xi) * T`.

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the trigonometric coefficient ratios switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// A 3D rotation, stored as a unit quaternion (Hamilton convention).
/// The external contract is the matrix action; serialization uses (qx, qy, qz, qw).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    #[inline]
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// From quaternion components, w last (TUM ordering). Normalizes.
    pub fn from_quaternion_xyzw(x: f64, y: f64, z: f64, w: f64) -> Self {
        Rotation(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    /// Quaternion components (qx, qy, qz, qw), canonicalized to w >= 0.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        if q.w < 0.0 {
            [-q.i, -q.j, -q.k, -q.w]
        } else {
            [q.i, q.j, q.k, q.w]
        }
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation(UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix(m),
        ))
    }

    #[inline]
    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    #[inline]
    pub fn compose(&self, other: &Rotation) -> Rotation {
        // renormalize so orthonormality survives arbitrarily long chains
        Rotation(UnitQuaternion::new_normalize(
            self.0.into_inner() * other.0.into_inner(),
        ))
    }

    #[inline]
    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        let vn = Vector3::new(q.i, q.j, q.k).norm();
        2.0 * vn.atan2(q.w.abs())
    }

    /// so(3) exponential: rotation vector to rotation.
    pub fn exp(omega: &Vector3<f64>) -> Rotation {
        let theta = omega.norm();
        // q = (cos(theta/2), sin(theta/2) * omega/theta); the ratio
        // sin(theta/2)/theta is evaluated by series near zero.
        let half = 0.5 * theta;
        let k = if theta < 1e-4 {
            0.5 - theta * theta / 48.0 + theta.powi(4) / 3840.0
        } else {
            half.sin() / theta
        };
        let q = Quaternion::new(half.cos(), k * omega.x, k * omega.y, k * omega.z);
        Rotation(UnitQuaternion::new_normalize(q))
    }

    /// so(3) logarithm. Errors with `RotationNearPi` when trace(R) <= -1 + 1e-9.
    pub fn log(&self) -> Result<Vector3<f64>> {
        let q = self.0.quaternion();
        let (w, v) = if q.w < 0.0 {
            (-q.w, -Vector3::new(q.i, q.j, q.k))
        } else {
            (q.w, Vector3::new(q.i, q.j, q.k))
        };
        let vn = v.norm();
        // trace(R) = 3 - 4*|qv|^2; the near-pi guard in trace form.
        let trace = 3.0 - 4.0 * vn * vn;
        if trace <= -1.0 + 1e-9 {
            return Err(Error::RotationNearPi {
                margin: std::f64::consts::PI - 2.0 * vn.atan2(w),
            });
        }
        let theta = 2.0 * vn.atan2(w);
        // omega = qv * theta / sin(theta/2), with sin(theta/2) = |qv|
        let k = if vn < 1e-6 {
            // theta/sin(theta/2) -> 2 + theta^2/12
            2.0 + theta * theta / 12.0
        } else {
            theta / vn
        };
        Ok(v * k)
    }
}

/// A rigid transform: rotation followed by translation (x -> R x + t).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    #[inline]
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: t,
        }
    }

    #[inline]
    pub fn from_rotation(r: Rotation) -> Self {
        Pose {
            rotation: r,
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    #[inline]
    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -r_inv.rotate(&self.translation),
        }
    }

    /// Apply to a point: rotation then translation.
    #[inline]
    pub fn act(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(x) + self.translation
    }

    /// Homogeneous 4x4 matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// An se(3) element: (omega, v), rotation part in radians.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    #[inline]
    pub fn zero() -> Self {
        Twist {
            omega: Vector3::zeros(),
            v: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Twist { omega, v }
    }

    #[inline]
    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Twist {
            omega: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }

    #[inline]
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega.x, self.omega.y, self.omega.z, self.v.x, self.v.y, self.v.z,
        )
    }

    #[inline]
    pub fn scaled(&self, s: f64) -> Twist {
        Twist {
            omega: self.omega * s,
            v: self.v * s,
        }
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }
}

/// Skew-symmetric matrix of a 3-vector.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// hat: twist to 4x4 se(3) matrix [[skew(omega), v], [0, 0]].
pub fn hat(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.omega));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v);
    m
}

/// vee: inverse of `hat`. Exact roundtrip (reads the stored entries back).
pub fn vee(m: &Matrix4<f64>) -> Twist {
    Twist {
        omega: Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
        v: Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
    }
}

/// Rodrigues coefficients sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3, with
/// series fallbacks that keep the switchover error below 1e-12.
fn rot_coeffs(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    let a = if theta < 1e-4 {
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        theta.sin() / theta
    };
    // (1 - cos t)/t^2 = 0.5 * (sin(t/2)/(t/2))^2 avoids the 1-cos cancellation
    let b = if theta < 1e-4 {
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        let s = (0.5 * theta).sin() / (0.5 * theta);
        0.5 * s * s
    };
    let c = if theta < 1e-2 {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    };
    (a, b, c)
}

/// SE(3) exponential: Rodrigues rotation plus V-matrix translation.
pub fn exp_se3(xi: &Twist) -> Pose {
    let theta = xi.omega.norm();
    let rotation = Rotation::exp(&xi.omega);
    let (_, b, c) = rot_coeffs(theta);
    let w = skew(&xi.omega);
    let v_mat = Matrix3::identity() + w * b + w * w * c;
    Pose {
        rotation,
        translation: v_mat * xi.v,
    }
}

/// SE(3) logarithm, inverse of `exp_se3`. Propagates `RotationNearPi`.
pub fn log_se3(p: &Pose) -> Result<Twist> {
    let omega = p.rotation.log()?;
    let theta = omega.norm();
    let w = skew(&omega);
    // V^{-1} = I - w/2 + d * w^2, d = (1 - (t sin t)/(2 (1-cos t)))/t^2
    let d = if theta < 1e-3 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * d;
    Ok(Twist {
        omega,
        v: v_inv * p.translation,
    })
}

/// Adjoint of a pose as a 6x6 matrix on (omega, v) twists:
/// Ad_T = [[R, 0], [skew(t) R, R]].
pub fn adjoint(p: &Pose) -> Matrix6<f64> {
    let r = p.rotation.matrix();
    let tr = skew(&p.translation) * r;
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&tr);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad
}

/// Left Jacobian of SO(3): J_l(w) = I + B skew(w) + C skew(w)^2.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (_, b, c) = rot_coeffs(theta);
    let w = skew(omega);
    Matrix3::identity() + w * b + w * w * c
}

/// Inverse left Jacobian of SO(3).
pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let d = if theta < 1e-3 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - w * 0.5 + w * w * d
}

/// Coupling block of the SE(3) left Jacobian (2nd-order commutator terms).
fn q_matrix(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
    let w = skew(omega);
    let p = skew(v);
    let (_, _, c1) = rot_coeffs(theta); // (t - sin t)/t^3
    let (c2, c3) = if theta < 0.1 {
        (
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        )
    } else {
        let t4 = t2 * t2;
        (
            (t2 + 2.0 * theta.cos() - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * theta.sin() + theta * theta.cos()) / (2.0 * t4 * theta),
        )
    };
    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    p * 0.5
        + (wp + pw + wpw) * c1
        + (w * wp + pw * w - wpw * 3.0) * c2
        + (wpw * w + w * wpw) * c3
}

/// Left Jacobian of SE(3) on (omega, v) twists:
/// [[J_l(w), 0], [Q(w, v), J_l(w)]].
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let jl = so3_left_jacobian(&xi.omega);
    let q = q_matrix(&xi.omega, &xi.v);
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    j.fixed_view_mut::<3, 3>(3, 0).copy_from(&q);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    j
}

/// Inverse left Jacobian of SE(3).
pub fn se3_left_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let jl_inv = so3_left_jacobian_inv(&xi.omega);
    let q = q_matrix(&xi.omega, &xi.v);
    let coupling = -jl_inv * q * jl_inv;
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl_inv);
    j.fixed_view_mut::<3, 3>(3, 0).copy_from(&coupling);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl_inv);
    j
}

/// Left-perturbation twist taking `b` to `a`: a = exp(delta) * b.
/// Useful for comparing poses in tests and finite differences.
pub fn left_delta(a: &Pose, b: &Pose) -> Result<Twist> {
    log_se3(&a.compose(&b.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    const EPS: f64 = 1e-9;

    fn random_twist(rng: &mut StdRng, max_angle: f64) -> Twist {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.gen_range(0.0..max_angle);
        let v = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        Twist::new(axis * angle, v)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp_se3(&Twist::zero());
        assert!((p.translation).norm() < EPS);
        assert!((p.rotation.matrix() - Matrix3::identity()).norm() < EPS);
    }

    #[test]
    fn exp_pure_rotation_quarter_turn() {
        let p = exp_se3(&Twist::new(Vector3::new(0.0, 0.0, PI / 2.0), Vector3::zeros()));
        let r = p.act(&Vector3::new(1.0, 0.0, 0.0));
        assert!((r - Vector3::new(0.0, 1.0, 0.0)).norm() < EPS);
        assert!(p.translation.norm() < EPS);
    }

    #[test]
    fn exp_pure_translation() {
        let p = exp_se3(&Twist::new(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)));
        assert!((p.translation - Vector3::new(1.0, 2.0, 3.0)).norm() < EPS);
        assert!((p.rotation.matrix() - Matrix3::identity()).norm() < EPS);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let xi = log_se3(&Pose::identity()).unwrap();
        assert!(xi.norm() < EPS);
    }

    #[test]
    fn log_exp_roundtrip_fixed() {
        let xi = Twist::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 0.0, -1.0));
        let back = log_se3(&exp_se3(&xi)).unwrap();
        assert!((back.to_vector() - xi.to_vector()).norm() < EPS);
    }

    #[test]
    fn log_rejects_rotation_near_pi() {
        let p = exp_se3(&Twist::new(
            Vector3::new(0.0, 0.0, PI - 1e-12),
            Vector3::zeros(),
        ));
        match log_se3(&p) {
            Err(Error::RotationNearPi { .. }) => {}
            other => panic!("expected RotationNearPi, got {:?}", other),
        }
    }

    #[test]
    fn log_exp_roundtrip_random() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let xi = random_twist(&mut rng, PI - 0.1);
            let back = log_se3(&exp_se3(&xi)).unwrap();
            assert!(
                (back.to_vector() - xi.to_vector()).norm() < EPS,
                "roundtrip failed for {:?}",
                xi
            );
        }
    }

    #[test]
    fn exp_small_angle_region_is_accurate() {
        // check continuity across the series switchovers by comparing against
        // a slightly scaled large-angle evaluation
        for &theta in &[1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2] {
            let axis = Vector3::new(1.0, 2.0, 2.0).normalize();
            let v = Vector3::new(0.3, -0.4, 0.5);
            let xi = Twist::new(axis * theta, v);
            // exp(t xi/2)^2 = exp(t xi) for collinear twists
            let half = exp_se3(&xi.scaled(0.5));
            let full = exp_se3(&xi);
            let composed = half.compose(&half);
            assert!(
                (composed.translation - full.translation).norm() < 1e-12,
                "theta {theta}"
            );
            assert!((composed.rotation.matrix() - full.rotation.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn collinear_composition_equals_scaled_exp() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let xi = random_twist(&mut rng, 0.4);
            let n = 5;
            let mut acc = Pose::identity();
            for _ in 0..n {
                acc = acc.compose(&exp_se3(&xi.scaled(0.2)));
            }
            let direct = exp_se3(&xi.scaled(0.2 * n as f64));
            assert!((acc.translation - direct.translation).norm() < 1e-8);
            assert!((acc.rotation.matrix() - direct.rotation.matrix()).norm() < 1e-8);
        }
    }

    #[test]
    fn compose_inverse_is_identity() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..100 {
            let p = exp_se3(&random_twist(&mut rng, 2.5));
            let id = p.compose(&p.inverse());
            assert!(id.translation.norm() < EPS);
            assert!((id.rotation.matrix() - Matrix3::identity()).norm() < EPS);
        }
    }

    #[test]
    fn act_examples() {
        let p = Pose::identity();
        assert!((p.act(&Vector3::new(1.0, 2.0, 3.0)) - Vector3::new(1.0, 2.0, 3.0)).norm() < EPS);
        let t = Pose::from_translation(Vector3::new(0.0, 0.0, 5.0));
        assert!((t.act(&Vector3::new(1.0, 1.0, 1.0)) - Vector3::new(1.0, 1.0, 6.0)).norm() < EPS);
    }

    #[test]
    fn orthonormality_survives_many_compositions() {
        let mut rng = StdRng::seed_from_u64(17);
        let steps: Vec<Rotation> = (0..64)
            .map(|_| Rotation::exp(&(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * 0.3)))
            .collect();
        let mut r = Rotation::identity();
        for i in 0..1_000_000usize {
            r = r.compose(&steps[i & 63]);
        }
        let m = r.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hat_vee_roundtrip_exact() {
        let xi = Twist::new(Vector3::new(0.3, -0.7, 0.1), Vector3::new(5.0, -2.0, 0.25));
        let back = vee(&hat(&xi));
        assert_eq!(back.to_vector(), xi.to_vector());
    }

    // Independent series oracle for the SE(3) left Jacobian: sum ad^n/(n+1)!.
    fn se3_left_jacobian_series(xi: &Twist) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.omega));
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&xi.v));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&skew(&xi.omega));
        let mut term = Matrix6::identity();
        let mut sum = Matrix6::zeros();
        let mut factorial = 1.0;
        for n in 0..40 {
            factorial *= (n + 1) as f64;
            sum += term / factorial;
            term *= ad;
        }
        sum
    }

    #[test]
    fn se3_left_jacobian_matches_series() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..200 {
            let xi = random_twist(&mut rng, 2.9);
            let closed = se3_left_jacobian(&xi);
            let series = se3_left_jacobian_series(&xi);
            assert!(
                (closed - series).norm() < 1e-10 * series.norm().max(1.0),
                "J_l mismatch for {:?}",
                xi
            );
            let inv = se3_left_jacobian_inv(&xi);
            assert!((closed * inv - Matrix6::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn left_jacobian_satisfies_exp_identity() {
        // exp(hat(xi + h d)) ~= exp(hat(J_l(xi) h d)) exp(hat(xi))
        let mut rng = StdRng::seed_from_u64(23);
        let h = 1e-6;
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 2.5);
            let d = random_twist(&mut rng, 1.0);
            let lhs = exp_se3(&Twist::from_vector(&(xi.to_vector() + d.to_vector() * h)));
            let jd = se3_left_jacobian(&xi) * d.to_vector();
            let rhs = exp_se3(&Twist::from_vector(&(jd * h))).compose(&exp_se3(&xi));
            let delta = left_delta(&lhs, &rhs).unwrap();
            assert!(delta.norm() < 1e-9, "identity failed: residual {}", delta.norm());
        }
    }
}
