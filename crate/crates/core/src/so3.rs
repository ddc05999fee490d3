//! Rotation algebra on SO(3).
//!
//! Rotations are stored as 3×3 matrices and parameterized for regression by
//! axis-angle vectors `y = θ·v`. The exponential map is Rodrigues' formula;
//! the log map recovers the angle from the trace and the axis from the
//! antisymmetric part. All `acos` arguments are clamped to `[-1, 1]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this angle exp/log switch to their Taylor forms.
pub const SMALL_ANGLE: f64 = 1e-8;
/// `log_map` refuses angles within this distance of π.
pub const NEAR_PI: f64 = 1e-6;
/// `rotation_to_azimuth` refuses elevations within this distance of ±π/2.
pub const GIMBAL_MARGIN: f64 = 1e-6;

/// Jacobian coefficients switch to series below this angle.
const JACOBIAN_SERIES_ANGLE: f64 = 1e-2;

pub type Vec3<S> = [S; 3];

#[inline]
pub fn dot<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm<S: Scalar>(a: &Vec3<S>) -> S {
    dot(a, a).sqrt()
}

#[inline]
pub fn cross<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<S>(pub [[S; 3]; 3]);

impl<S: Scalar> Mat3<S> {
    pub fn zero() -> Self {
        Mat3([[S::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = S::one();
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.0[r][c]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                t.0[c][r] = self.0[r][c];
            }
        }
        t
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let mut out = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] = self.0[r][0] * rhs.0[0][c]
                    + self.0[r][1] * rhs.0[1][c]
                    + self.0[r][2] * rhs.0[2][c];
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &Vec3<S>) -> Vec3<S> {
        [
            dot(&self.0[0], v),
            dot(&self.0[1], v),
            dot(&self.0[2], v),
        ]
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.zip(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.zip(rhs, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v *= k);
        out
    }

    fn zip(&self, rhs: &Self, f: impl Fn(S, S) -> S) -> Self {
        let mut out = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] = f(self.0[r][c], rhs.0[r][c]);
            }
        }
        out
    }

    pub fn trace(&self) -> S {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// `Σ_ij a_ij·b_ij`, i.e. `trace(selfᵀ·rhs)`.
    pub fn frobenius_dot(&self, rhs: &Self) -> S {
        let mut acc = S::zero();
        for r in 0..3 {
            for c in 0..3 {
                acc += self.0[r][c] * rhs.0[r][c];
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> S {
        self.frobenius_dot(self).sqrt()
    }

    pub fn det(&self) -> S {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// The cross-product matrix `[v]×`, so that `skew(v)·w = v × w`.
pub fn skew<S: Scalar>(v: &Vec3<S>) -> Mat3<S> {
    let z = S::zero();
    Mat3([[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]])
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
fn vee_antisymmetric<S: Scalar>(m: &Mat3<S>) -> Vec3<S> {
    let half = S::lit(0.5);
    [
        (m.0[2][1] - m.0[1][2]) * half,
        (m.0[0][2] - m.0[2][0]) * half,
        (m.0[1][0] - m.0[0][1]) * half,
    ]
}

#[inline]
/// Rotation angle of `m` as `atan2(sinθ, cosθ)`, with `sinθ` from the skew part.
/// Equals `acos((tr − 1)/2)` but keeps full precision near 0 and π.
fn rotation_angle<S: Scalar>(m: &Mat3<S>) -> S {
    let half = S::lit(0.5);
    let w = [
        (m.0[2][1] - m.0[1][2]) * half,
        (m.0[0][2] - m.0[2][0]) * half,
        (m.0[1][0] - m.0[0][1]) * half,
    ];
    let c = (m.trace() - S::one()) * half;
    norm(&w).atan2(c.max(-S::one()).min(S::one()))
}

/// Axis-angle vector `y = θ·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle<S> {
    pub y: Vec3<S>,
}

impl<S: Scalar> AxisAngle<S> {
    pub fn new(y: Vec3<S>) -> Self {
        Self { y }
    }

    pub fn zero() -> Self {
        Self { y: [S::zero(); 3] }
    }

    pub fn angle(&self) -> S {
        norm(&self.y)
    }

    /// `‖y‖ < π`, the range on which axis-angle and rotation correspond one-to-one.
    pub fn is_canonical(&self) -> bool {
        self.angle() < S::PI()
    }
}

impl<S> From<Vec3<S>> for AxisAngle<S> {
    fn from(y: Vec3<S>) -> Self {
        Self { y }
    }
}

/// A proper orthogonal 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<S> {
    m: Mat3<S>,
}

impl<S: Scalar> Rotation<S> {
    pub fn identity() -> Self {
        Self {
            m: Mat3::identity(),
        }
    }

    /// Validates `‖mᵀm − I‖_F ≤ tol` and `|det − 1| ≤ tol`.
    pub fn from_matrix(m: Mat3<S>) -> Result<Self> {
        let orth = m.transpose().mul(&m).sub(&Mat3::identity()).frobenius_norm();
        let det = m.det();
        let tol = S::structural_tol();
        if !(orth <= tol && (det - S::one()).abs() <= tol) {
            return Err(Error::NotARotation {
                orthogonality: orth.as_f64(),
                det: det.as_f64(),
            });
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix_unchecked(m: Mat3<S>) -> Self {
        Self { m }
    }

    pub fn matrix(&self) -> &Mat3<S> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    /// `self · rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            m: self.m.mul(&rhs.m),
        }
    }

    pub fn rot_x(angle: S) -> Self {
        let (s, c) = angle.sin_cos();
        let (z, o) = (S::zero(), S::one());
        Self {
            m: Mat3([[o, z, z], [z, c, -s], [z, s, c]]),
        }
    }

    pub fn rot_y(angle: S) -> Self {
        let (s, c) = angle.sin_cos();
        let (z, o) = (S::zero(), S::one());
        Self {
            m: Mat3([[c, z, s], [z, o, z], [-s, z, c]]),
        }
    }

    pub fn rot_z(angle: S) -> Self {
        let (s, c) = angle.sin_cos();
        let (z, o) = (S::zero(), S::one());
        Self {
            m: Mat3([[c, -s, z], [s, c, z], [z, z, o]]),
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> S {
        rotation_angle(&self.m)
    }
}

/// Viewing angles. Azimuth in `[0, 2π)`, elevation in `(−π/2, π/2)`, tilt in `[−π, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerPose<S> {
    pub azimuth: S,
    pub elevation: S,
    pub tilt: S,
}

impl<S: Scalar> EulerPose<S> {
    pub fn new(azimuth: S, elevation: S, tilt: S) -> Result<Self> {
        let pi = S::PI();
        let half_pi = S::FRAC_PI_2();
        if !(azimuth >= S::zero() && azimuth < pi + pi) {
            return Err(Error::InvalidRange {
                value: azimuth.as_f64(),
                range: "azimuth in [0, 2pi)",
            });
        }
        if !(elevation > -half_pi && elevation < half_pi) {
            return Err(Error::InvalidRange {
                value: elevation.as_f64(),
                range: "elevation in (-pi/2, pi/2)",
            });
        }
        if !(tilt >= -pi && tilt < pi) {
            return Err(Error::InvalidRange {
                value: tilt.as_f64(),
                range: "tilt in [-pi, pi)",
            });
        }
        Ok(Self {
            azimuth,
            elevation,
            tilt,
        })
    }
}

/// Rodrigues coefficients `sinθ/θ` and `(1 − cosθ)/θ²`.
fn rodrigues_coefficients<S: Scalar>(theta: S) -> (S, S) {
    let half = theta * S::lit(0.5);
    let sin_half = half.sin();
    (theta.sin() / theta, S::lit(2.0) * sin_half * sin_half / (theta * theta))
}

/// Exponential map `R = expm([y]×)`.
pub fn exp_map<S: Scalar>(y: &AxisAngle<S>) -> Rotation<S> {
    let k = skew(&y.y);
    let k2 = k.mul(&k);
    let theta = y.angle();
    let m = if theta < S::lit(SMALL_ANGLE) {
        Mat3::identity().add(&k).add(&k2.scale(S::lit(0.5)))
    } else {
        let (a, b) = rodrigues_coefficients(theta);
        Mat3::identity().add(&k.scale(a)).add(&k2.scale(b))
    };
    Rotation::from_matrix_unchecked(m)
}

/// Exponential map together with `∂R/∂y_k` for `k = 0, 1, 2`.
pub fn exp_map_jacobian<S: Scalar>(y: &AxisAngle<S>) -> (Rotation<S>, [Mat3<S>; 3]) {
    let theta = y.angle();
    let t2 = theta * theta;
    // a = sinθ/θ, b = (1−cosθ)/θ², c = a'(θ)/θ, d = b'(θ)/θ
    let (a, b, c, d) = if theta < S::lit(JACOBIAN_SERIES_ANGLE) {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            S::one() - t2 / S::lit(6.0) + t4 / S::lit(120.0) - t6 / S::lit(5040.0),
            S::lit(0.5) - t2 / S::lit(24.0) + t4 / S::lit(720.0) - t6 / S::lit(40320.0),
            S::lit(-1.0 / 3.0) + t2 / S::lit(30.0) - t4 / S::lit(840.0) + t6 / S::lit(45360.0),
            S::lit(-1.0 / 12.0) + t2 / S::lit(180.0) - t4 / S::lit(6720.0)
                + t6 / S::lit(453600.0),
        )
    } else {
        let (a, b) = rodrigues_coefficients(theta);
        let (s, co) = theta.sin_cos();
        let c = (theta * co - s) / (t2 * theta);
        let d = (theta * s - S::lit(2.0) * (S::one() - co)) / (t2 * t2);
        (a, b, c, d)
    };
    let k = skew(&y.y);
    let k2 = k.mul(&k);
    let r = Mat3::identity().add(&k.scale(a)).add(&k2.scale(b));
    let mut jac = [Mat3::zero(); 3];
    for (axis, out) in jac.iter_mut().enumerate() {
        let mut e = [S::zero(); 3];
        e[axis] = S::one();
        let ek = skew(&e);
        let sym = ek.mul(&k).add(&k.mul(&ek));
        *out = ek
            .scale(a)
            .add(&sym.scale(b))
            .add(&k.scale(c * y.y[axis]))
            .add(&k2.scale(d * y.y[axis]));
    }
    (Rotation::from_matrix_unchecked(r), jac)
}

/// Log map, the inverse of [`exp_map`] on `‖y‖ < π`.
///
/// Fails with [`Error::NearPiRotation`] when the angle exceeds `π − 1e-6`.
pub fn log_map<S: Scalar>(r: &Rotation<S>) -> Result<AxisAngle<S>> {
    let theta = r.angle();
    if theta > S::PI() - S::lit(NEAR_PI) {
        return Err(Error::NearPiRotation {
            angle: theta.as_f64(),
        });
    }
    let w = vee_antisymmetric(&r.m);
    if theta < S::lit(SMALL_ANGLE) {
        return Ok(AxisAngle::new(w));
    }
    let k = theta / theta.sin();
    Ok(AxisAngle::new([w[0] * k, w[1] * k, w[2] * k]))
}

/// Geodesic distance `‖log(R1·R2ᵀ)‖_F / √2`, in radians.
pub fn geodesic_distance<S: Scalar>(r1: &Rotation<S>, r2: &Rotation<S>) -> S {
    rotation_angle(&r1.m.mul(&r2.m.transpose()))
}

/// Viewpoint angle error in degrees: `|acos((trace(Rᵀ·R*) − 1)/2)|`.
pub fn viewpoint_error_deg<S: Scalar>(r: &Rotation<S>, r_star: &Rotation<S>) -> S {
    rotation_angle(&r.m.transpose().mul(&r_star.m)).abs().to_degrees()
}

/// `R = R_y(tilt) · R_x(elevation) · R_z(azimuth)`.
///
/// Azimuth turns about the world z-axis, elevation about the camera x-axis, and
/// tilt about the viewing axis (y after the first two turns). Elevation is the
/// middle angle, so the only singularity is at `|elevation| = π/2`.
pub fn euler_to_rotation<S: Scalar>(e: &EulerPose<S>) -> Rotation<S> {
    Rotation::rot_y(e.tilt)
        .compose(&Rotation::rot_x(e.elevation))
        .compose(&Rotation::rot_z(e.azimuth))
}

/// Azimuth in `[0, 2π)` under the [`euler_to_rotation`] convention.
///
/// Row 1 of `R` is `(cos(el)·sin(az), cos(el)·cos(az), −sin(el))`, independent of tilt.
pub fn rotation_to_azimuth<S: Scalar>(r: &Rotation<S>) -> Result<S> {
    let (s, c) = (r.m.0[1][0], r.m.0[1][1]);
    if s.hypot(c) < S::lit(GIMBAL_MARGIN).sin() {
        let elevation = -r.m.0[1][2].max(-S::one()).min(S::one()).asin();
        return Err(Error::GimbalLock {
            elevation: elevation.as_f64(),
        });
    }
    let two_pi = S::PI() + S::PI();
    let mut az = s.atan2(c);
    if az < S::zero() {
        az += two_pi;
    }
    if az >= two_pi {
        az = S::zero();
    }
    Ok(az)
}

/// Rotation with uniformly distributed axis and angle uniform in `[0, max_angle)`.
pub fn random_rotation<S: Scalar, R: Rng + ?Sized>(rng: &mut R, max_angle: S) -> Result<Rotation<S>> {
    if !(max_angle > S::zero() && max_angle <= S::PI()) {
        return Err(Error::InvalidRange {
            value: max_angle.as_f64(),
            range: "max_angle in (0, pi]",
        });
    }
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let u: f64 = rng.random();
    let rho = (1.0 - z * z).max(0.0).sqrt();
    let axis = [rho * phi.cos(), rho * phi.sin(), z];
    let angle = max_angle * S::lit(u);
    let y = AxisAngle::new(axis.map(|a| S::lit(a) * angle));
    Ok(exp_map(&y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_mat_close(a: &Mat3<f64>, b: &Mat3<f64>, tol: f64) {
        let d = a.sub(b).frobenius_norm();
        assert!(d <= tol, "matrices differ by {d:e}\n{a:?}\n{b:?}");
    }

    fn random_vec(rng: &mut ChaCha8Rng, max_norm: f64) -> Vec3<f64> {
        loop {
            let v = [
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            ];
            if norm(&v) <= max_norm {
                return v;
            }
        }
    }

    #[test]
    fn skew_layout() {
        assert_eq!(skew(&[0.0, 0.0, 0.0]), Mat3::<f64>::zero());
        let expected = Mat3([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(skew(&[0.0, 0.0, 1.0]), expected);
    }

    #[test]
    fn skew_matches_componentwise_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v = random_vec(&mut rng, 10.0);
            let w = random_vec(&mut rng, 10.0);
            let s = skew(&v);
            assert_eq!(s.transpose(), s.scale(-1.0));
            let brute = [
                v[1] * w[2] - v[2] * w[1],
                v[2] * w[0] - v[0] * w[2],
                v[0] * w[1] - v[1] * w[0],
            ];
            let got = s.mul_vec(&w);
            for i in 0..3 {
                assert!((got[i] - brute[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exp_map_canonical_cases() {
        assert_eq!(exp_map(&AxisAngle::<f64>::zero()), Rotation::identity());
        let r = exp_map(&AxisAngle::new([0.0, 0.0, FRAC_PI_2]));
        let expected = Mat3([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_mat_close(r.matrix(), &expected, 1e-15);
    }

    #[test]
    fn exp_map_tiny_angle_uses_taylor_form() {
        let y = AxisAngle::new([1e-10, -2e-10, 3e-10]);
        let r = exp_map(&y);
        assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        assert_mat_close(r.matrix(), &Mat3::identity().add(&skew(&y.y)), 1e-18);
    }

    #[test]
    fn log_map_canonical_cases() {
        let zero = log_map(&Rotation::<f64>::identity()).unwrap();
        assert_eq!(zero.y, [0.0, 0.0, 0.0]);
        let m = Mat3::<f64>([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let y = log_map(&Rotation::from_matrix(m).unwrap()).unwrap();
        assert!(y.y[0].abs() < 1e-15 && y.y[1].abs() < 1e-15);
        assert!((y.y[2] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn log_map_rejects_near_pi() {
        let r = Rotation::rot_x(PI);
        assert!(matches!(log_map(&r), Err(Error::NearPiRotation { .. })));
        let r = Rotation::rot_y(PI - 1e-7);
        assert!(matches!(log_map(&r), Err(Error::NearPiRotation { .. })));
        assert!(log_map(&Rotation::rot_y(PI - 1e-3)).is_ok());
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let y = random_vec(&mut rng, PI - 1e-3);
            let back = log_map(&exp_map(&AxisAngle::new(y))).unwrap();
            let err = norm(&[back.y[0] - y[0], back.y[1] - y[1], back.y[2] - y[2]]);
            assert!(err <= 1e-9, "round trip error {err:e} for {y:?}");
        }
    }

    #[test]
    fn geodesic_basic_cases() {
        let r = exp_map(&AxisAngle::<f64>::new([0.3, -0.2, 0.1]));
        assert!(geodesic_distance(&r, &r).abs() < 1e-7);
        let d = geodesic_distance(&Rotation::rot_z(FRAC_PI_2), &Rotation::identity());
        assert!((d - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn geodesic_to_identity_is_vector_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let y = random_vec(&mut rng, PI - 1e-3);
            let d = geodesic_distance(&exp_map(&AxisAngle::new(y)), &Rotation::identity());
            assert!((d - norm(&y)).abs() <= 1e-9);
        }
    }

    #[test]
    fn viewpoint_error_cases() {
        let r = Rotation::rot_x(0.4);
        assert_eq!(viewpoint_error_deg(&Rotation::<f64>::identity(), &Rotation::identity()), 0.0);
        assert!(viewpoint_error_deg(&r, &r) < 1e-5);
        let e = viewpoint_error_deg(&Rotation::rot_z(PI), &Rotation::identity());
        assert!((e - 180.0).abs() < 1e-12);
    }

    #[test]
    fn euler_cases() {
        let id = euler_to_rotation(&EulerPose::new(0.0, 0.0, 0.0).unwrap());
        assert_mat_close(id.matrix(), &Mat3::identity(), 0.0);
        let r = euler_to_rotation(&EulerPose::new(FRAC_PI_2, 0.0, 0.0).unwrap());
        assert_mat_close(r.matrix(), Rotation::rot_z(FRAC_PI_2).matrix(), 0.0);
        let r = euler_to_rotation(&EulerPose::<f64>::new(2.0, 0.3, -0.4).unwrap());
        assert!((rotation_to_azimuth(&r).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(rotation_to_azimuth(&Rotation::<f64>::identity()).unwrap(), 0.0);
        let az = rotation_to_azimuth(&Rotation::rot_z(3.0 * FRAC_PI_2)).unwrap();
        assert!((az - 3.0 * FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn euler_pose_validates_ranges() {
        assert!(EulerPose::new(-0.1, 0.0, 0.0).is_err());
        assert!(EulerPose::new(2.0 * PI, 0.0, 0.0).is_err());
        assert!(EulerPose::new(0.0, FRAC_PI_2, 0.0).is_err());
        assert!(EulerPose::new(0.0, 0.0, PI).is_err());
        assert!(EulerPose::new(0.0, 0.0, -PI).is_ok());
    }

    #[test]
    fn azimuth_gimbal_lock() {
        let r = Rotation::rot_x(FRAC_PI_2).compose(&Rotation::rot_z(1.0));
        assert!(matches!(rotation_to_azimuth(&r), Err(Error::GimbalLock { .. })));
    }

    #[test]
    fn random_rotation_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_rotation(&mut rng, 1e-12).unwrap();
        assert_mat_close(r.matrix(), &Mat3::identity(), 1e-9);
        assert!(random_rotation::<f64, _>(&mut rng, 0.0).is_err());
        assert!(random_rotation::<f64, _>(&mut rng, PI + 1e-9).is_err());

        let a = random_rotation::<f64, _>(&mut ChaCha8Rng::seed_from_u64(1), PI).unwrap();
        let b = random_rotation::<f64, _>(&mut ChaCha8Rng::seed_from_u64(1), PI).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_rotation_axis_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut mean = [0.0; 3];
        let n = 10_000;
        for _ in 0..n {
            let r = random_rotation(&mut rng, PI).unwrap();
            let y = log_map(&r).unwrap();
            let t = y.angle();
            for i in 0..3 {
                mean[i] += y.y[i] / t / n as f64;
            }
        }
        for m in mean {
            assert!(m.abs() < 0.05, "axis mean {mean:?}");
        }
    }

    #[test]
    fn produced_rotations_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let r = random_rotation(&mut rng, PI).unwrap();
            Rotation::from_matrix(*r.matrix()).unwrap();
            let e = EulerPose::new(
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(-1.5..1.5),
                rng.random_range(-PI..PI),
            )
            .unwrap();
            Rotation::from_matrix(*euler_to_rotation(&e).matrix()).unwrap();
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        let mut samples: Vec<Vec3<f64>> = (0..200).map(|_| random_vec(&mut rng, 3.0)).collect();
        samples.push([1e-3, -2e-3, 5e-3]);
        samples.push([0.0, 0.0, 0.0]);
        for y in samples {
            let (_, jac) = exp_map_jacobian(&AxisAngle::new(y));
            for k in 0..3 {
                let mut yp = y;
                let mut ym = y;
                yp[k] += h;
                ym[k] -= h;
                let fd = exp_map(&AxisAngle::new(yp))
                    .matrix()
                    .sub(exp_map(&AxisAngle::new(ym)).matrix())
                    .scale(1.0 / (2.0 * h));
                assert_mat_close(&jac[k], &fd, 1e-8);
            }
        }
    }

    #[test]
    fn f32_round_trip() {
        let y = AxisAngle::new([0.4f32, -1.1, 0.7]);
        let r = exp_map(&y);
        Rotation::from_matrix(*r.matrix()).unwrap();
        let back = log_map(&r).unwrap();
        for i in 0..3 {
            assert!((back.y[i] - y.y[i]).abs() < 1e-5);
        }
    }
}
