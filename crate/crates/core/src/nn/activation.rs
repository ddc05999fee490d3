use crate::error::Result;
use crate::nn::tensor::Tensor2;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// `π·tanh(x)`; the output stays strictly inside `(−π, π)`.
    PiTanh,
}

/// Largest value below π representable in `S`.
fn pi_below<S: Scalar>() -> S {
    S::PI() * (S::one() - S::epsilon())
}

impl Activation {
    pub fn apply<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Relu => v.max(S::zero()),
            Activation::PiTanh => {
                let out = S::PI() * v.tanh();
                // tanh rounds to ±1 for |v| ≳ 19
                if out.abs() >= S::PI() {
                    pi_below::<S>().copysign(out)
                } else {
                    out
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation input `v`.
    pub fn derivative<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Relu => {
                if v > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::PiTanh => {
                let t = v.tanh();
                S::PI() * (S::one() - t * t)
            }
        }
    }

    pub fn forward<S: Scalar>(self, x: &Tensor2<S>) -> Tensor2<S> {
        x.map(|v| self.apply(v))
    }

    /// Gradient with respect to the input `x` given the upstream gradient.
    pub fn backward<S: Scalar>(self, x: &Tensor2<S>, upstream: &Tensor2<S>) -> Result<Tensor2<S>> {
        upstream.ensure_shape(x.rows(), x.cols(), "activation upstream gradient")?;
        let data = x
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&v, &g)| g * self.derivative(v))
            .collect();
        Tensor2::from_vec(x.rows(), x.cols(), data)
    }
}
