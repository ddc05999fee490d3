use crate::nn::params::{Gradients, ParameterStore};
use crate::scalar::Scalar;

/// Worst coordinate of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub coordinates: usize,
    pub per_param: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |w| w.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.per_param.iter().filter(move |p| p.rel_error > self.tolerance)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` for every
/// coordinate of every parameter named in `analytic`.
pub fn gradcheck<S, F>(
    mut f: F,
    store: &ParameterStore<S>,
    analytic: &Gradients<S>,
    h: f64,
    tolerance: f64,
) -> GradcheckReport
where
    S: Scalar,
    F: FnMut(&ParameterStore<S>) -> S,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = store.clone();
    let hs = S::lit(h);
    let mut per_param = Vec::new();
    let mut coordinates = 0;
    for (name, grad) in analytic.iter() {
        let mut worst: Option<ParamCheck> = None;
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.values(name)[i];
            probe.values_mut(name)[i] = orig + hs;
            let fp = f(&probe);
            probe.values_mut(name)[i] = orig - hs;
            let fm = f(&probe);
            probe.values_mut(name)[i] = orig;
            let numeric = ((fp - fm) / (hs + hs)).as_f64();
            let analytic = a.as_f64();
            let rel_error = relative_error(analytic, numeric);
            coordinates += 1;
            if worst.as_ref().is_none_or(|w| rel_error > w.rel_error) {
                worst = Some(ParamCheck {
                    name: name.to_string(),
                    index: i,
                    analytic,
                    numeric,
                    rel_error,
                });
            }
        }
        per_param.extend(worst);
    }
    GradcheckReport {
        tolerance,
        coordinates,
        per_param,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("p", vec![vals.len()], vals.to_vec()).unwrap();
        s
    }

    #[test]
    fn half_squared_norm_passes() {
        let vals = [0.3, -1.2, 2.5, 0.01];
        let s = store(&vals);
        let mut g = Gradients::new();
        g.accumulate("p", &vals);
        let r = gradcheck(|s| 0.5 * s.values("p").iter().map(|v| v * v).sum::<f64>(), &s, &g, 1e-5, 1e-7);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.coordinates, 4);
    }

    #[test]
    fn linear_function_is_exact() {
        let c = [2.0, -3.0, 0.5];
        let s = store(&[0.1, 0.2, 0.3]);
        let mut g = Gradients::new();
        g.accumulate("p", &c);
        let r = gradcheck(
            |s| s.values("p").iter().zip(&c).map(|(a, b)| a * b).sum::<f64>(),
            &s,
            &g,
            1e-5,
            1e-9,
        );
        assert!(r.max_rel_error() < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let s = store(&[1.0, 2.0]);
        let mut g = Gradients::new();
        g.accumulate("p", &[1.0, 3.0]);
        let r = gradcheck(|s| 0.5 * s.values("p").iter().map(|v| v * v).sum::<f64>(), &s, &g, 1e-5, 1e-6);
        assert!(!r.passed());
        let w = r.worst().unwrap();
        assert_eq!((w.name.as_str(), w.index), ("p", 1));
    }
}
