use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::so3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Weighted,
    Top1,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Fusion::Weighted),
            "top1" => Ok(Fusion::Top1),
            other => Err(Error::InvalidConfig(format!("unknown fusion '{other}' (weighted|top1)"))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::Weighted => "weighted",
            Fusion::Top1 => "top1",
        })
    }
}

/// Probability vector over categories.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDistribution<S> {
    p: Vec<S>,
}

impl<S: Scalar> CategoryDistribution<S> {
    /// Validates non-negativity and unit sum.
    pub fn new(p: Vec<S>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::shape("empty category distribution"));
        }
        if p.iter().any(|v| !v.is_finite() || *v < S::zero()) {
            return Err(Error::InvalidRange {
                value: p.iter().map(|v| v.as_f64()).fold(f64::NAN, f64::min),
                range: "[0, 1]",
            });
        }
        let sum: S = p.iter().copied().sum();
        let tol = S::structural_tol() * S::from_usize(p.len()).unwrap().max(S::one());
        if (sum - S::one()).abs() > tol {
            return Err(Error::InvalidRange {
                value: sum.as_f64(),
                range: "sum = 1",
            });
        }
        Ok(Self { p })
    }

    pub(crate) fn from_vec_unchecked(p: Vec<S>) -> Self {
        Self { p }
    }

    pub fn uniform(k: usize) -> Self {
        let v = S::one() / S::from_usize(k).unwrap();
        Self { p: vec![v; k] }
    }

    /// `δ(c)` over `k` categories.
    pub fn one_hot(c: usize, k: usize) -> Result<Self> {
        if c >= k {
            return Err(Error::IndexOutOfRange { index: c, len: k });
        }
        let mut p = vec![S::zero(); k];
        p[c] = S::one();
        Ok(Self { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.p
    }

    /// Most probable category; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }

    /// The `k` most probable categories, most probable first; ties by lowest index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.p.len()).collect();
        idx.sort_by(|&a, &b| self.p[b].partial_cmp(&self.p[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

pub(crate) fn argmax<S: Scalar>(p: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// One 3-vector per category slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<S> {
    pub y: Vec<Vec3<S>>,
}

impl<S: Scalar> HeadOutputs<S> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `Σ_i p_i·y_i`, accumulated in index order.
///
/// Panics if the head count differs from the length of `p`.
pub fn fuse_weighted<S: Scalar>(heads: &HeadOutputs<S>, p: &CategoryDistribution<S>) -> Vec3<S> {
    fuse_weighted_slice(&heads.y, p.as_slice())
}

pub(crate) fn fuse_weighted_slice<S: Scalar>(heads: &[Vec3<S>], p: &[S]) -> Vec3<S> {
    assert_eq!(heads.len(), p.len(), "head count must match distribution length");
    let mut out = [S::zero(); 3];
    for (y, &w) in heads.iter().zip(p) {
        for j in 0..3 {
            out[j] += w * y[j];
        }
    }
    out
}

/// Output of the head at `argmax p`.
pub fn fuse_top1<S: Scalar>(heads: &HeadOutputs<S>, p: &CategoryDistribution<S>) -> Vec3<S> {
    assert_eq!(heads.len(), p.len(), "head count must match distribution length");
    heads.y[p.argmax()]
}

/// Fuses with the given rule.
pub fn fuse<S: Scalar>(fusion: Fusion, heads: &HeadOutputs<S>, p: &CategoryDistribution<S>) -> Vec3<S> {
    match fusion {
        Fusion::Weighted => fuse_weighted(heads, p),
        Fusion::Top1 => fuse_top1(heads, p),
    }
}
