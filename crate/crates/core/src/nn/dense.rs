use crate::error::{Error, Result};
use crate::nn::tensor::{axpy, dot, Tensor2};
use crate::scalar::Scalar;

/// Fully connected layer `x·Wᵀ + b` over borrowed parameters.
///
/// `weight` is `out_dim × in_dim`, row-major. Layers feeding a batch norm
/// carry no bias.
#[derive(Debug, Clone, Copy)]
pub struct DenseLayer<'a, S> {
    pub weight: &'a [S],
    pub bias: Option<&'a [S]>,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<S> {
    /// Empty (0 rows) when the input gradient was not requested.
    pub input: Tensor2<S>,
    pub weight: Vec<S>,
    pub bias: Option<Vec<S>>,
}

impl<'a, S: Scalar> DenseLayer<'a, S> {
    pub fn new(weight: &'a [S], bias: Option<&'a [S]>, in_dim: usize, out_dim: usize) -> Result<Self> {
        if weight.len() != in_dim * out_dim {
            return Err(Error::shape(format!(
                "dense weight has {} entries, expected {out_dim}x{in_dim}",
                weight.len()
            )));
        }
        if let Some(b) = bias {
            if b.len() != out_dim {
                return Err(Error::shape(format!("dense bias has {} entries, expected {out_dim}", b.len())));
            }
        }
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    #[inline]
    fn weight_row(&self, o: usize) -> &[S] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn check_input(&self, x: &Tensor2<S>) -> Result<()> {
        if x.cols() != self.in_dim {
            return Err(Error::shape(format!(
                "dense layer expects {} input columns, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        self.check_input(x)?;
        let mut out = Tensor2::zeros(x.rows(), self.out_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let orow = out.row_mut(r);
            for (o, slot) in orow.iter_mut().enumerate() {
                let b = self.bias.map_or(S::zero(), |b| b[o]);
                *slot = dot(xr, self.weight_row(o)) + b;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor2<S>, upstream: &Tensor2<S>) -> Result<DenseGrads<S>> {
        self.backward_with(x, upstream, true)
    }

    /// Like [`backward`](Self::backward) but skips the input gradient when
    /// `want_input` is false (first layer of a network).
    pub fn backward_with(&self, x: &Tensor2<S>, upstream: &Tensor2<S>, want_input: bool) -> Result<DenseGrads<S>> {
        self.check_input(x)?;
        upstream.ensure_shape(x.rows(), self.out_dim, "dense upstream gradient")?;
        let n = x.rows();
        let mut gw = vec![S::zero(); self.weight.len()];
        let mut gb = self.bias.map(|_| vec![S::zero(); self.out_dim]);
        let mut gx = if want_input {
            Tensor2::zeros(n, self.in_dim)
        } else {
            Tensor2::zeros(0, self.in_dim)
        };
        for r in 0..n {
            let up = upstream.row(r);
            let xr = x.row(r);
            for (o, &g) in up.iter().enumerate() {
                if g == S::zero() {
                    continue;
                }
                axpy(g, xr, &mut gw[o * self.in_dim..(o + 1) * self.in_dim]);
                if want_input {
                    axpy(g, self.weight_row(o), gx.row_mut(r));
                }
            }
            if let Some(gb) = gb.as_mut() {
                for (b, &g) in gb.iter_mut().zip(up) {
                    *b += g;
                }
            }
        }
        Ok(DenseGrads {
            input: gx,
            weight: gw,
            bias: gb,
        })
    }
}
