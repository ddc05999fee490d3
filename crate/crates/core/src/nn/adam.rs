use crate::error::{Error, Result};
use crate::nn::params::{Gradients, ParameterStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// Bias-corrected Adam update for every parameter named in `grads`.
///
/// Entries of the store without a gradient are left untouched, including
/// their step counts.
pub fn adam_step<S: Scalar>(store: &mut ParameterStore<S>, grads: &Gradients<S>, cfg: &AdamConfig) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = store
            .get(name)
            .ok_or_else(|| Error::shape(format!("gradient for unknown parameter {name}")))?;
        if p.len() != g.len() {
            return Err(Error::shape(format!(
                "gradient for {name} has {} entries, parameter has {}",
                g.len(),
                p.len()
            )));
        }
    }
    let b1 = S::lit(cfg.beta1);
    let b2 = S::lit(cfg.beta2);
    let lr = S::lit(cfg.lr);
    let eps = S::lit(cfg.eps);
    for (name, g) in grads.iter() {
        let p = store.get_mut(name).expect("checked above");
        p.step += 1;
        let t = i32::try_from(p.step).unwrap_or(i32::MAX);
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        for i in 0..g.len() {
            p.m[i] = b1 * p.m[i] + (S::one() - b1) * g[i];
            p.v[i] = b2 * p.v[i] + (S::one() - b2) * g[i] * g[i];
            let m_hat = p.m[i] / c1;
            let v_hat = p.v[i] / c2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("p", vec![1], vec![v]).unwrap();
        s
    }

    fn grad(v: f64) -> Gradients<f64> {
        let mut g = Gradients::new();
        g.accumulate("p", &[v]);
        g
    }

    #[test]
    fn single_step_hand_computed() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &grad(1.0), &cfg).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −0.1/(1 + 1e-8)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.values("p")[0] - expected).abs() < 1e-16);
        assert!((s.values("p")[0] - (-0.099999999)).abs() < 1e-9);
        assert_eq!(s.get("p").unwrap().step, 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters() {
        let mut s = scalar_store(0.5);
        adam_step(&mut s, &grad(0.0), &AdamConfig::default()).unwrap();
        assert_eq!(s.values("p")[0], 0.5);
        let p = s.get("p").unwrap();
        assert_eq!((p.m[0], p.v[0], p.step), (0.0, 0.0, 1));
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig::default();
        adam_step(&mut s, &grad(2.0), &cfg).unwrap();
        let (m0, v0) = (s.get("p").unwrap().m[0], s.get("p").unwrap().v[0]);
        adam_step(&mut s, &grad(0.0), &cfg).unwrap();
        let p = s.get("p").unwrap();
        assert!((p.m[0] - 0.9 * m0).abs() < 1e-15);
        assert!((p.v[0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut a = scalar_store(0.3);
        let mut b = scalar_store(0.3);
        for k in 0..5 {
            adam_step(&mut a, &grad(k as f64 - 2.0), &AdamConfig::default()).unwrap();
            adam_step(&mut b, &grad(k as f64 - 2.0), &AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
        let mut bad = Gradients::new();
        bad.accumulate("p", &[1.0, 2.0]);
        assert!(adam_step(&mut a, &bad, &AdamConfig::default()).is_err());
        let mut unknown = Gradients::new();
        unknown.accumulate("q", &[1.0]);
        assert!(adam_step(&mut a, &unknown, &AdamConfig::default()).is_err());
    }
}
