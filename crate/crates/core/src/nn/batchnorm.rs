use crate::error::{Error, Result};
use crate::nn::tensor::Tensor2;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-feature batch normalization over borrowed parameters and running statistics.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormLayer<'a, S> {
    pub scale: &'a [S],
    pub shift: &'a [S],
    pub running_mean: &'a [S],
    pub running_var: &'a [S],
    pub momentum: S,
    pub eps: S,
    pub mode: BnMode,
}

/// Forward state needed by the backward pass and by the running-stat update.
#[derive(Debug, Clone)]
pub struct BnCache<S> {
    pub mode: BnMode,
    pub x_hat: Tensor2<S>,
    pub inv_std: Vec<S>,
    /// Batch statistics (train mode only; biased variance).
    pub batch_mean: Vec<S>,
    pub batch_var: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<S> {
    pub input: Tensor2<S>,
    pub scale: Vec<S>,
    pub shift: Vec<S>,
}

impl<'a, S: Scalar> BatchNormLayer<'a, S> {
    pub fn width(&self) -> usize {
        self.scale.len()
    }

    pub fn forward(&self, x: &Tensor2<S>) -> Result<(Tensor2<S>, BnCache<S>)> {
        let d = self.width();
        if x.cols() != d {
            return Err(Error::shape(format!("batch norm expects {d} columns, got {}", x.cols())));
        }
        let n = x.rows();
        let (mean, var) = match self.mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let inv_n = S::one() / S::from_usize(n).unwrap();
                let mut mean = vec![S::zero(); d];
                for r in 0..n {
                    for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m *= inv_n);
                let mut var = vec![S::zero(); d];
                for r in 0..n {
                    for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        let c = v - m;
                        *s += c * c;
                    }
                }
                var.iter_mut().for_each(|s| *s *= inv_n);
                (mean, var)
            }
            BnMode::Eval => (self.running_mean.to_vec(), self.running_var.to_vec()),
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + self.eps).sqrt()).collect();
        let mut x_hat = Tensor2::zeros(n, d);
        let mut out = Tensor2::zeros(n, d);
        for r in 0..n {
            let xr = x.row(r);
            let hr = x_hat.row_mut(r);
            for j in 0..d {
                hr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let orow = out.row_mut(r);
            for j in 0..d {
                orow[j] = x_hat.get(r, j) * self.scale[j] + self.shift[j];
            }
        }
        let (batch_mean, batch_var) = match self.mode {
            BnMode::Train => (mean, var),
            BnMode::Eval => (Vec::new(), Vec::new()),
        };
        Ok((
            out,
            BnCache {
                mode: self.mode,
                x_hat,
                inv_std,
                batch_mean,
                batch_var,
            },
        ))
    }

    pub fn backward(&self, cache: &BnCache<S>, upstream: &Tensor2<S>) -> Result<BnGrads<S>> {
        let d = self.width();
        let n = cache.x_hat.rows();
        upstream.ensure_shape(n, d, "batch norm upstream gradient")?;
        let mut g_scale = vec![S::zero(); d];
        let mut g_shift = vec![S::zero(); d];
        for r in 0..n {
            let up = upstream.row(r);
            let hr = cache.x_hat.row(r);
            for j in 0..d {
                g_scale[j] += up[j] * hr[j];
                g_shift[j] += up[j];
            }
        }
        let mut gx = Tensor2::zeros(n, d);
        match cache.mode {
            BnMode::Eval => {
                for r in 0..n {
                    let up = upstream.row(r);
                    let gr = gx.row_mut(r);
                    for j in 0..d {
                        gr[j] = up[j] * self.scale[j] * cache.inv_std[j];
                    }
                }
            }
            BnMode::Train => {
                // dx = γ/(Nσ) · (N·dy − Σdy − x̂·Σ(dy·x̂))
                let nf = S::from_usize(n).unwrap();
                for r in 0..n {
                    let up = upstream.row(r);
                    let hr = cache.x_hat.row(r);
                    let gr = gx.row_mut(r);
                    for j in 0..d {
                        let k = self.scale[j] * cache.inv_std[j] / nf;
                        gr[j] = k * (nf * up[j] - g_shift[j] - hr[j] * g_scale[j]);
                    }
                }
            }
        }
        Ok(BnGrads {
            input: gx,
            scale: g_scale,
            shift: g_shift,
        })
    }
}

/// `running ← momentum·running + (1 − momentum)·batch`. No-op for eval-mode caches.
pub fn update_running_stats<S: Scalar>(
    running_mean: &mut [S],
    running_var: &mut [S],
    cache: &BnCache<S>,
    momentum: S,
) {
    if cache.mode != BnMode::Train {
        return;
    }
    let keep = momentum;
    let take = S::one() - momentum;
    for (r, &b) in running_mean.iter_mut().zip(&cache.batch_mean) {
        *r = keep * *r + take * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&cache.batch_var) {
        *r = keep * *r + take * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer<'a>(scale: &'a [f64], shift: &'a [f64], rm: &'a [f64], rv: &'a [f64], mode: BnMode) -> BatchNormLayer<'a, f64> {
        BatchNormLayer {
            scale,
            shift,
            running_mean: rm,
            running_var: rv,
            momentum: 0.9,
            eps: 1e-5,
            mode,
        }
    }

    #[test]
    fn standardized_batch_passes_through() {
        let x = Tensor2::from_vec(4, 1, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (y, _) = layer(&[1.0], &[0.0], &[0.0], &[1.0], BnMode::Train).forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_scale_outputs_shift() {
        let x = Tensor2::from_vec(3, 2, vec![1.0, 9.0, -4.0, 2.0, 0.5, 3.0]).unwrap();
        for mode in [BnMode::Train, BnMode::Eval] {
            let (y, _) = layer(&[0.0, 0.0], &[0.7, -1.2], &[0.0, 0.0], &[1.0, 1.0], mode).forward(&x).unwrap();
            for r in 0..3 {
                assert_eq!(y.row(r), &[0.7, -1.2]);
            }
        }
    }

    #[test]
    fn train_mode_needs_two_rows() {
        let x = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let l = layer(&[1.0], &[0.0], &[0.0], &[1.0], BnMode::Train);
        assert!(matches!(l.forward(&x), Err(Error::BatchTooSmall(1))));
        let l = layer(&[1.0], &[0.0], &[0.0], &[1.0], BnMode::Eval);
        assert!(l.forward(&x).is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor2::from_vec(2, 1, vec![1.0, 3.0]).unwrap();
        let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
        let (_, cache) = layer(&[1.0], &[0.0], &rm, &rv, BnMode::Train).forward(&x).unwrap();
        update_running_stats(&mut rm, &mut rv, &cache, 0.9);
        assert!((rm[0] - 0.2).abs() < 1e-15);
        assert!((rv[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    }

    fn fd_check(mode: BnMode) {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (n, d) = (6, 3);
        let rand_vec = |rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..k).map(|_| rng.random_range(lo..hi)).collect()
        };
        let scale = rand_vec(&mut rng, d, 0.5, 1.5);
        let shift = rand_vec(&mut rng, d, -1.0, 1.0);
        let rm = rand_vec(&mut rng, d, -0.5, 0.5);
        let rv = rand_vec(&mut rng, d, 0.5, 2.0);
        let x = Tensor2::from_vec(n, d, rand_vec(&mut rng, n * d, -2.0, 2.0)).unwrap();
        let c = Tensor2::from_vec(n, d, rand_vec(&mut rng, n * d, -1.0, 1.0)).unwrap();
        let f = |scale: &[f64], shift: &[f64], x: &Tensor2<f64>| -> f64 {
            let (y, _) = layer(scale, shift, &rm, &rv, mode).forward(x).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        let l = layer(&scale, &shift, &rm, &rv, mode);
        let (_, cache) = l.forward(&x).unwrap();
        let g = l.backward(&cache, &c).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for k in 0..n * d {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[k] += h;
            xm.data_mut()[k] -= h;
            let num = (f(&scale, &shift, &xp) - f(&scale, &shift, &xm)) / (2.0 * h);
            assert!(rel(g.input.data()[k], num) < 1e-5, "x[{k}] {} vs {num}", g.input.data()[k]);
        }
        for k in 0..d {
            let (mut sp, mut sm) = (scale.clone(), scale.clone());
            sp[k] += h;
            sm[k] -= h;
            let num = (f(&sp, &shift, &x) - f(&sm, &shift, &x)) / (2.0 * h);
            assert!(rel(g.scale[k], num) < 1e-5);
            let (mut bp, mut bm) = (shift.clone(), shift.clone());
            bp[k] += h;
            bm[k] -= h;
            let num = (f(&scale, &bp, &x) - f(&scale, &bm, &x)) / (2.0 * h);
            assert!(rel(g.shift[k], num) < 1e-5);
        }
    }

    #[test]
    fn train_backward_matches_finite_differences() {
        fd_check(BnMode::Train);
    }

    #[test]
    fn eval_backward_matches_finite_differences() {
        fd_check(BnMode::Eval);
    }
}
