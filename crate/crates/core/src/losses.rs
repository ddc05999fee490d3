//! Geodesic pose loss, categorical cross-entropy, and the λ-weighted joint loss.

use crate::error::{Error, Result};
use crate::model::CategoryDistribution;
use crate::so3::{exp_map, exp_map_jacobian, geodesic_distance, AxisAngle, Rotation, Vec3};
use crate::scalar::Scalar;

/// Lower bound on `sin(θ_rel)` in the pose-loss gradient.
pub const SIN_CLAMP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLossConfig {
    pub lambda: f64,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl JointLossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

/// Geodesic distance between `exp_map(y_pred)` and `r_star`, with its
/// gradient with respect to `y_pred`.
///
/// The `1/sin(θ_rel)` factor of the acos derivative is evaluated with
/// `sin(θ_rel)` clamped below at `1e-3`, which covers
/// `θ_rel ∉ [1e-3, π − 1e-3]`. An exact match has zero gradient.
pub fn pose_loss<S: Scalar>(y_pred: &Vec3<S>, r_star: &Rotation<S>) -> (S, Vec3<S>) {
    let (r, jac) = exp_map_jacobian(&AxisAngle::new(*y_pred));
    let tr = r.matrix().frobenius_dot(r_star.matrix());
    let c = (tr - S::one()) * S::lit(0.5);
    let theta = c.max(-S::one()).min(S::one()).acos();
    if c >= S::one() {
        return (theta, [S::zero(); 3]);
    }
    let s = theta.sin().max(S::lit(SIN_CLAMP));
    let k = -S::lit(0.5) / s;
    let grad = [
        k * jac[0].frobenius_dot(r_star.matrix()),
        k * jac[1].frobenius_dot(r_star.matrix()),
        k * jac[2].frobenius_dot(r_star.matrix()),
    ];
    (theta, grad)
}

/// `L_p(y1, y2)`: geodesic distance between the rotations of two axis-angle vectors.
pub fn axis_angle_distance<S: Scalar>(y1: &Vec3<S>, y2: &Vec3<S>) -> S {
    geodesic_distance(&exp_map(&AxisAngle::new(*y1)), &exp_map(&AxisAngle::new(*y2)))
}

/// `−log p_{c*}` and the combined softmax + cross-entropy gradient `p − onehot(c*)`
/// with respect to the logits that produced `p`.
pub fn cross_entropy<S: Scalar>(p: &CategoryDistribution<S>, c_star: usize) -> Result<(S, Vec<S>)> {
    let probs = p.as_slice();
    if c_star >= probs.len() {
        return Err(Error::IndexOutOfRange {
            index: c_star,
            len: probs.len(),
        });
    }
    let loss = -probs[c_star].max(S::min_positive_value()).ln();
    let mut grad = probs.to_vec();
    grad[c_star] -= S::one();
    Ok((loss, grad))
}

/// `pose + λ·category`.
pub fn joint_loss<S: Scalar>(cfg: &JointLossConfig, pose: S, category: S) -> S {
    pose + S::lit(cfg.lambda) * category
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{log_map, random_rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn zero_at_ground_truth() {
        let r = Rotation::rot_x(0.7).compose(&Rotation::rot_z(-1.2));
        let y = log_map(&r).unwrap();
        let (l, g): (f64, _) = pose_loss(&y.y, &r);
        assert!(l < 1e-7);
        assert!(g.iter().all(|v| v.abs() < 1e-9));
        let (l, g) = pose_loss(&[0.0; 3], &Rotation::<f64>::identity());
        assert_eq!(l, 0.0);
        assert_eq!(g, [0.0; 3]);
    }

    #[test]
    fn single_axis_value() {
        let (l, _) = pose_loss(&[0.0, 0.0, FRAC_PI_2], &Rotation::<f64>::identity());
        assert!((l - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn symmetric_in_prediction_and_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let a = random_rotation::<f64, _>(&mut rng, 3.0).unwrap();
            let b = random_rotation::<f64, _>(&mut rng, 3.0).unwrap();
            let ya = log_map(&a).unwrap();
            let yb = log_map(&b).unwrap();
            let (lab, _) = pose_loss(&ya.y, &b);
            let (lba, _) = pose_loss(&yb.y, &a);
            assert!((lab - lba).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 300 {
            let y = [
                rng.random_range(-2.5..2.5),
                rng.random_range(-2.5..2.5),
                rng.random_range(-2.5..2.5),
            ];
            let r_star = random_rotation::<f64, _>(&mut rng, PI).unwrap();
            let (l, g) = pose_loss(&y, &r_star);
            if !(1e-3 + 1e-4..=PI - 1e-3 - 1e-4).contains(&l) {
                continue;
            }
            for k in 0..3 {
                let (mut yp, mut ym) = (y, y);
                yp[k] += h;
                ym[k] -= h;
                let num = (pose_loss(&yp, &r_star).0 - pose_loss(&ym, &r_star).0) / (2.0 * h);
                let rel = (g[k] - num).abs() / g[k].abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-4, "y={y:?} k={k} analytic {} numeric {num}", g[k]);
            }
            checked += 1;
        }
    }

    #[test]
    fn gradient_is_bounded_in_clamp_zone() {
        let r_star = Rotation::<f64>::rot_z(0.5);
        let (_, g) = pose_loss(&[0.0, 0.0, 0.5 + 1e-6], &r_star);
        assert!(g.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        let (_, g) = pose_loss(&[0.0, 0.0, 0.5 - PI + 1e-6], &r_star);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_cases() {
        let eps: f64 = 1e-12;
        let p = CategoryDistribution::new(vec![eps / 2.0, 1.0 - eps, eps / 2.0]).unwrap();
        let (l, g) = cross_entropy(&p, 1).unwrap();
        assert!(l.abs() < 1e-11);
        assert!((g[1] + eps).abs() < 1e-15);

        let k = 5;
        let u = CategoryDistribution::<f64>::uniform(k);
        let (l, _) = cross_entropy(&u, 2).unwrap();
        assert!((l - (k as f64).ln()).abs() < 1e-12);

        assert!(matches!(cross_entropy(&u, 5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn cross_entropy_logit_gradient_matches_finite_differences() {
        use crate::nn::{softmax, Tensor2};
        let z = vec![0.3, -1.1, 2.0, 0.4];
        let probs = |z: &[f64]| {
            let t = softmax(&Tensor2::from_vec(1, z.len(), z.to_vec()).unwrap());
            CategoryDistribution::new(t.into_vec()).unwrap()
        };
        let (_, g) = cross_entropy(&probs(&z), 2).unwrap();
        let h = 1e-5;
        for i in 0..z.len() {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += h;
            zm[i] -= h;
            let num = (cross_entropy(&probs(&zp), 2).unwrap().0 - cross_entropy(&probs(&zm), 2).unwrap().0) / (2.0 * h);
            assert!((g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-8) < 1e-6);
        }
    }

    #[test]
    fn joint_loss_combines_terms() {
        assert_eq!(joint_loss(&JointLossConfig::new(0.0).unwrap(), 0.5, 0.3), 0.5);
        assert!((joint_loss(&JointLossConfig::new(1.0).unwrap(), 0.5f64, 0.3) - 0.8).abs() < 1e-15);
        assert!(JointLossConfig::new(-0.1).is_err());
        assert_eq!(JointLossConfig::default().lambda, 0.1);
    }
}
