use crate::error::Result;
use crate::nn::tensor::Tensor2;
use crate::scalar::Scalar;

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax<S: Scalar>(logits: &Tensor2<S>) -> Tensor2<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient with respect to the logits given `∂L/∂p` for softmax output `p`:
/// `∂L/∂z_j = p_j·(g_j − Σ_i p_i·g_i)`.
pub fn softmax_backward<S: Scalar>(p: &Tensor2<S>, upstream: &Tensor2<S>) -> Result<Tensor2<S>> {
    upstream.ensure_shape(p.rows(), p.cols(), "softmax upstream gradient")?;
    let mut out = Tensor2::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let pr = p.row(r);
        let gr = upstream.row(r);
        let inner: S = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for (o, (&pj, &gj)) in out.row_mut(r).iter_mut().zip(pr.iter().zip(gr)) {
            *o = pj * (gj - inner);
        }
    }
    Ok(out)
}

/// Mean categorical cross-entropy of softmax(logits) against integer targets.
///
/// Returns `(mean loss, ∂loss/∂logits, probabilities)`; the gradient is
/// `(p − onehot)/N`. Targets must already be in range.
pub fn softmax_cross_entropy<S: Scalar>(logits: &Tensor2<S>, targets: &[usize]) -> (S, Tensor2<S>, Tensor2<S>) {
    let p = softmax(logits);
    let n = S::from_usize(targets.len().max(1)).unwrap();
    let mut grad = p.clone();
    let mut loss = S::zero();
    for (r, &c) in targets.iter().enumerate() {
        loss -= p.get(r, c).max(S::min_positive_value()).ln();
        let row = grad.row_mut(r);
        row[c] -= S::one();
        row.iter_mut().for_each(|v| *v /= n);
    }
    (loss / n, grad, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_are_uniform() {
        let p = softmax(&Tensor2::<f64>::from_vec(1, 4, vec![0.3; 4]).unwrap());
        for &v in p.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_invariance_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<f64> = (0..20).map(|_| rng.random_range(-30.0..30.0)).collect();
        let a = softmax(&Tensor2::from_vec(4, 5, z.clone()).unwrap());
        let shifted: Vec<f64> = z.iter().enumerate().map(|(i, v)| v + (i / 5) as f64 * 7.5).collect();
        let b = softmax(&Tensor2::from_vec(4, 5, shifted).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for r in 0..4 {
            let s: f64 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(a.row(r).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (n, k) = (3, 4);
        let z = Tensor2::<f64>::from_vec(n, k, (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let targets = [1, 3, 0];
        let (_, g, _) = softmax_cross_entropy(&z, &targets);
        let h = 1e-5;
        for i in 0..n * k {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.data_mut()[i] += h;
            zm.data_mut()[i] -= h;
            let num = (softmax_cross_entropy(&zp, &targets).0 - softmax_cross_entropy(&zm, &targets).0) / (2.0 * h);
            let a = g.data()[i];
            assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-8) < 1e-6);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = Tensor2::from_vec(1, 3, vec![0.2, -1.0, 0.7]).unwrap();
        let c = Tensor2::from_vec(1, 3, vec![1.5, -0.3, 0.8]).unwrap();
        let f = |z: &Tensor2<f64>| -> f64 { softmax(z).data().iter().zip(c.data()).map(|(a, b)| a * b).sum() };
        let g = softmax_backward(&softmax(&z), &c).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp.data_mut()[i] += h;
            zm.data_mut()[i] -= h;
            let num = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((g.data()[i] - num).abs() < 1e-9);
        }
    }
}
