//! The similarity group Sim(3) and its tangent space.
//!
//! Elements are stored as (unit quaternion, translation, scale) and act on
//! points as `x -> s * R * x + t`. Tangent vectors are ordered
//! `[rho (3), phi (3), sigma]` where `phi` is the rotation vector and
//! `sigma = ln(s)`.

use core::fmt;
use core::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, SMatrix, SVector, UnitQuaternion, Vector3};

use super::GeometryError;
use crate::math;

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

/// Rotation angles closer than this to pi are rejected by [`Sim3::log`].
pub const LOG_BRANCH_MARGIN: f64 = 1e-6;

/// Below this norm the complex series replaces the closed form in `W`.
const SERIES_RADIUS: f64 = 0.5;

/// Tangent vector of Sim(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent7 {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
    pub sigma: f64,
}

impl Tangent7 {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>, sigma: f64) -> Self {
        Self { rho, phi, sigma }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), 0.0)
    }

    pub fn from_vector(v: &Vector7) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]), v[6])
    }

    pub fn to_vector(&self) -> Vector7 {
        Vector7::from_column_slice(&[
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z, self.sigma,
        ])
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Lie bracket matrix: `ad(xi) * eta = vee([hat(xi), hat(eta)])`.
    pub fn ad(&self) -> Matrix7 {
        let mut m = Matrix7::zeros();
        let phi_x = skew(&self.phi);
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(phi_x + Matrix3::identity() * self.sigma));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&self.rho));
        m.fixed_view_mut::<3, 1>(0, 6).copy_from(&(-self.rho));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi_x);
        m
    }
}

/// A similarity transform.
#[derive(Clone, Copy, PartialEq)]
pub struct Sim3 {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

impl fmt::Debug for Sim3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Sim3(q=[{}, {}, {}, {}], t=[{}, {}, {}], s={})",
            q.w, q.i, q.j, q.k, self.translation.x, self.translation.y, self.translation.z, self.scale
        )
    }
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Builds a transform, rejecting non-positive or non-finite scale and
    /// non-finite translation. The quaternion is renormalized.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self, GeometryError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::InvalidScale(scale));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let q = rotation.into_inner();
        if !q.coords.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            rotation: normalize(q),
            translation,
            scale,
        })
    }

    /// Builds from raw quaternion coefficients `(w, x, y, z)`.
    pub fn from_wxyz(q: [f64; 4], translation: Vector3<f64>, scale: f64) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Self::new(UnitQuaternion::new_unchecked(quat), translation, scale)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self {
            rotation: r,
            ..Self::identity()
        }
    }

    /// Pure scaling about the origin.
    ///
    /// # Panics
    /// If `s` is not a positive finite number.
    pub fn from_scale(s: f64) -> Self {
        assert!(s > 0.0 && s.is_finite(), "scale must be positive");
        Self {
            scale: s,
            ..Self::identity()
        }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Copy with the scale replaced; rotation and translation are kept.
    pub fn with_scale(&self, s: f64) -> Result<Self, GeometryError> {
        Self::new(self.rotation, self.translation, s)
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.rotation_matrix() * self.scale));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            rotation: normalize(self.rotation.into_inner() * other.rotation.into_inner()),
            translation: self.translation + self.rotation * other.translation * self.scale,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let inv_r = self.rotation.inverse();
        let inv_s = 1.0 / self.scale;
        Sim3 {
            rotation: inv_r,
            translation: -(inv_r * self.translation) * inv_s,
            scale: inv_s,
        }
    }

    /// `self^-1 * other`.
    pub fn between(&self, other: &Sim3) -> Sim3 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// Exponential map.
    pub fn exp(xi: &Tangent7) -> Sim3 {
        let rotation = so3_exp(&xi.phi);
        let w = w_matrix(&xi.phi, xi.sigma);
        Sim3 {
            rotation,
            translation: w * xi.rho,
            scale: math::exp(xi.sigma),
        }
    }

    /// Logarithm on the principal branch; fails when the rotation angle is
    /// within [`LOG_BRANCH_MARGIN`] of pi.
    pub fn log(&self) -> Result<Tangent7, GeometryError> {
        let phi = so3_log(&self.rotation);
        let angle = phi.norm();
        if angle > math::PI - LOG_BRANCH_MARGIN {
            return Err(GeometryError::LogBranch { angle });
        }
        let sigma = math::ln(self.scale);
        let w = w_matrix(&phi, sigma);
        let rho = w
            .lu()
            .solve(&self.translation)
            .ok_or(GeometryError::LogBranch { angle })?;
        Ok(Tangent7::new(rho, phi, sigma))
    }

    /// Adjoint: `T * exp(xi) * T^-1 = exp(Ad(T) * xi)`.
    pub fn adjoint(&self) -> Matrix7 {
        let r = self.rotation_matrix();
        let mut m = Matrix7::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * self.scale));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&self.translation) * r));
        m.fixed_view_mut::<3, 1>(0, 6).copy_from(&(-self.translation));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m[(6, 6)] = 1.0;
        m
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }
}

impl Mul for Sim3 {
    type Output = Sim3;
    fn mul(self, rhs: Sim3) -> Sim3 {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Sim3> for &'a Sim3 {
    type Output = Sim3;
    fn mul(self, rhs: &Sim3) -> Sim3 {
        self.compose(rhs)
    }
}

/// Right Jacobian: `exp(xi + d) ~= exp(xi) * exp(J_r(xi) * d)`.
///
/// Evaluated from its power series in `ad(xi)`, which converges everywhere.
pub fn right_jacobian(xi: &Tangent7) -> Matrix7 {
    let minus_ad = -xi.ad();
    let mut sum = Matrix7::identity();
    let mut term = Matrix7::identity();
    for n in 1..64 {
        term = term * minus_ad / ((n + 1) as f64);
        sum += term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    sum
}

/// Inverse right Jacobian: `log(exp(xi) * exp(d)) ~= xi + J_r^-1(xi) * d`.
///
/// Small arguments use the Bernoulli series directly; it converges for
/// spectral radius below `2 pi`, so larger ones invert `J_r`.
pub fn right_jacobian_inv(xi: &Tangent7) -> Matrix7 {
    // B_n / n! for even n >= 2.
    const COEFFS: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30_240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
        1.0 / 74_724_249_600.0,
        -3617.0 / 10_670_622_842_880_000.0,
    ];
    let ad = xi.ad();
    let norm = ad.norm();
    if norm < 0.5 {
        let ad2 = ad * ad;
        let mut sum = Matrix7::identity() + ad * 0.5;
        let mut power = ad2;
        for c in COEFFS {
            let term = power * c;
            sum += term;
            if term.amax() < 1e-18 {
                break;
            }
            power *= ad2;
        }
        return sum;
    }
    right_jacobian(xi).try_inverse().unwrap_or_else(Matrix7::identity)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn normalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q)
}

pub(crate) fn so3_exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = phi.norm();
    let (w, k) = if theta < 1e-8 {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (math::cos(half), math::sin(half) / theta)
    };
    normalize(Quaternion::new(w, phi.x * k, phi.y * k, phi.z * k))
}

/// Rotation vector with angle in `[0, pi]`.
pub(crate) fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.vector().into_owned())
    } else {
        (q.w, q.vector().into_owned())
    };
    let n = v.norm();
    if n < 1e-10 {
        let k = 2.0 / w * (1.0 - n * n / (3.0 * w * w));
        v * k
    } else {
        v * (2.0 * math::atan2(n, w) / n)
    }
}

/// `W = int_0^1 exp(sigma u) R(u phi) du`, the map taking `rho` to the
/// translation in the exponential.
fn w_matrix(phi: &Vector3<f64>, sigma: f64) -> Matrix3<f64> {
    let theta = phi.norm();
    let a = if sigma == 0.0 { 1.0 } else { math::expm1(sigma) / sigma };
    if theta == 0.0 {
        return Matrix3::identity() * a;
    }
    // g(z) = (e^z - 1) / z with z = sigma + i theta:
    // Re g = int e^{su} cos(tu) du, Im g = int e^{su} sin(tu) du.
    let (re, im) = g_of_z(sigma, theta);
    let b = im / theta;
    let c = (a - re) / (theta * theta);
    let k = skew(phi);
    Matrix3::identity() * a + k * b + k * k * c
}

fn g_of_z(sigma: f64, theta: f64) -> (f64, f64) {
    let r2 = sigma * sigma + theta * theta;
    if r2 < SERIES_RADIUS * SERIES_RADIUS {
        // sum_{n>=0} z^n / (n + 1)!
        let (mut re, mut im) = (1.0, 0.0);
        let (mut tr, mut ti) = (1.0, 0.0);
        for n in 1..40 {
            let d = (n + 1) as f64;
            let nr = (tr * sigma - ti * theta) / d;
            let ni = (tr * theta + ti * sigma) / d;
            tr = nr;
            ti = ni;
            re += tr;
            im += ti;
            if tr.abs() + ti.abs() < 1e-20 {
                break;
            }
        }
        (re, im)
    } else {
        let es = math::exp(sigma);
        let nr = es * math::cos(theta) - 1.0;
        let ni = es * math::sin(theta);
        ((nr * sigma + ni * theta) / r2, (ni * sigma - nr * theta) / r2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_tangent(rng: &mut ChaCha8Rng, radius: f64) -> Tangent7 {
        loop {
            let v = Vector7::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return Tangent7::from_vector(&(v * (radius * rng.random_range(0.0..1.0))));
            }
        }
    }

    fn tangent_dist(a: &Sim3, b: &Sim3) -> f64 {
        a.between(b).log().unwrap().norm()
    }

    #[test]
    fn zero_tangent_is_identity() {
        let t = Sim3::exp(&Tangent7::zero());
        assert_eq!(t, Sim3::identity());
    }

    #[test]
    fn decoupled_scale() {
        let t = Sim3::exp(&Tangent7::new(
            Vector3::zeros(),
            Vector3::zeros(),
            core::f64::consts::LN_2,
        ));
        assert!((t.scale() - 2.0).abs() < 1e-15);
        assert!(t.translation().norm() == 0.0);
        assert!(t.rotation_angle() == 0.0);
    }

    #[test]
    fn scale_only_compose_multiplies() {
        let c = Sim3::from_scale(2.0) * Sim3::from_scale(3.0);
        assert!((c.scale() - 6.0).abs() < 1e-15);
        assert_eq!(c.translation().norm(), 0.0);
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Sim3::exp(&random_tangent(&mut rng, 1.0));
        assert!(tangent_dist(&(t * Sim3::identity()), &t) < 1e-15);
        assert!(tangent_dist(&(Sim3::identity() * t), &t) < 1e-15);
    }

    #[test]
    fn compose_matches_point_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Sim3::exp(&random_tangent(&mut rng, 2.0));
        let b = Sim3::exp(&random_tangent(&mut rng, 2.0));
        let ab = a * b;
        for _ in 0..100 {
            let x = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let lhs = ab.transform_point(&x);
            let rhs = a.transform_point(&b.transform_point(&x));
            assert!((lhs - rhs).norm() < 1e-12, "{}", (lhs - rhs).norm());
        }
    }

    #[test]
    fn exp_log_roundtrip_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let xi = random_tangent(&mut rng, 1.0);
            let back = Sim3::exp(&xi).log().unwrap();
            assert!((back.to_vector() - xi.to_vector()).norm() < 1e-9);
        }
    }

    #[test]
    fn exp_log_roundtrip_tiny_and_mixed_magnitudes() {
        let cases = [
            Tangent7::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(1e-9, 0.0, 0.0), 1e-9),
            Tangent7::new(Vector3::new(0.3, 0.1, 0.2), Vector3::zeros(), 0.7),
            Tangent7::new(Vector3::new(0.3, 0.1, 0.2), Vector3::new(0.0, 0.0, 2.5), 0.0),
            Tangent7::new(Vector3::new(0.3, 0.1, 0.2), Vector3::new(0.0, 1e-7, 0.0), -1.5),
            Tangent7::new(Vector3::new(3.0, 0.1, -2.0), Vector3::new(0.4, 0.2, 0.1), 1e-7),
        ];
        for xi in cases {
            let back = Sim3::exp(&xi).log().unwrap();
            assert!(
                (back.to_vector() - xi.to_vector()).norm() < 1e-12,
                "{:?} -> {:?}",
                xi,
                back
            );
        }
    }

    #[test]
    fn log_near_pi_is_rejected() {
        let t = Sim3::from_rotation(so3_exp(&Vector3::new(0.0, 0.0, math::PI - 1e-8)));
        assert!(matches!(t.log(), Err(GeometryError::LogBranch { .. })));
        let ok = Sim3::from_rotation(so3_exp(&Vector3::new(0.0, 0.0, math::PI - 0.1)));
        assert!(ok.log().is_ok());
    }

    #[test]
    fn w_matrix_matches_quadrature() {
        // Independent check of the closed form against midpoint quadrature.
        let phi = Vector3::new(0.4, -0.9, 0.3);
        for sigma in [-0.8, 0.0, 1e-4, 0.6] {
            let n = 20000;
            let mut acc = Matrix3::zeros();
            for k in 0..n {
                let u = (k as f64 + 0.5) / n as f64;
                let r = so3_exp(&(phi * u)).to_rotation_matrix().into_inner();
                acc += r * (sigma * u).exp() / n as f64;
            }
            assert!((acc - w_matrix(&phi, sigma)).amax() < 1e-8);
        }
    }

    #[test]
    fn adjoint_conjugates_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = Sim3::exp(&random_tangent(&mut rng, 1.5));
            let xi = random_tangent(&mut rng, 0.5);
            let lhs = t * Sim3::exp(&xi) * t.inverse();
            let rhs = Sim3::exp(&Tangent7::from_vector(&(t.adjoint() * xi.to_vector())));
            assert!(tangent_dist(&lhs, &rhs) < 1e-10);
        }
    }

    #[test]
    fn right_jacobian_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let xi = random_tangent(&mut rng, 1.0);
            let d = random_tangent(&mut rng, 1.0).to_vector() * 1e-6;
            let lhs = Sim3::exp(&Tangent7::from_vector(&(xi.to_vector() + d)));
            let rhs = Sim3::exp(&xi) * Sim3::exp(&Tangent7::from_vector(&(right_jacobian(&xi) * d)));
            assert!(tangent_dist(&lhs, &rhs) < 1e-11);
        }
    }

    #[test]
    fn group_axioms_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let a = Sim3::exp(&random_tangent(&mut rng, 1.5));
            let b = Sim3::exp(&random_tangent(&mut rng, 1.5));
            let c = Sim3::exp(&random_tangent(&mut rng, 1.5));
            assert!(tangent_dist(&((a * b) * c), &(a * (b * c))) < 1e-9);
            assert!((a * a.inverse()).log().unwrap().norm() < 1e-9);
            assert!((a.inverse() * a).log().unwrap().norm() < 1e-9);
        }
    }

    #[test]
    fn constructor_rejects_bad_scale() {
        assert!(Sim3::new(UnitQuaternion::identity(), Vector3::zeros(), 0.0).is_err());
        assert!(Sim3::new(UnitQuaternion::identity(), Vector3::zeros(), -1.0).is_err());
        assert!(Sim3::new(UnitQuaternion::identity(), Vector3::zeros(), f64::NAN).is_err());
    }
}
