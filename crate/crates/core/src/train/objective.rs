//! Batch objectives and their gradients: category, oracle pose, and joint.

use crate::error::{Error, Result};
use crate::losses::pose_loss;
use crate::model::{argmax, fuse_weighted_slice, Fusion, HeadCache, Network};
use crate::nn::softmax::softmax_backward;
use crate::nn::{softmax_cross_entropy, BnMode, Gradients, Tensor2};
use crate::scalar::Scalar;
use crate::so3::{Rotation, Vec3};

/// Borrowed mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, S> {
    pub x: &'a Tensor2<S>,
    pub categories: &'a [usize],
    pub rotations: &'a [Rotation<S>],
}

impl<S: Scalar> Batch<'_, S> {
    fn check(&self, k: usize) -> Result<()> {
        let n = self.x.rows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.categories.len() != n || self.rotations.len() != n {
            return Err(Error::shape(format!(
                "batch has {n} rows but {} labels and {} rotations",
                self.categories.len(),
                self.rotations.len()
            )));
        }
        if let Some(&c) = self.categories.iter().find(|&&c| c >= k) {
            return Err(Error::IndexOutOfRange { index: c, len: k });
        }
        Ok(())
    }
}

/// Objective value, its parts, gradients, and the head caches whose
/// batch statistics should be folded into running statistics.
#[derive(Debug, Clone)]
pub struct Objective<S> {
    pub total: S,
    pub pose: Option<S>,
    pub category: Option<S>,
    pub grads: Gradients<S>,
    pub head_caches: Vec<(usize, HeadCache<S>)>,
}

impl<S: Scalar> Objective<S> {
    /// Applies train-mode head statistics to the network's running statistics.
    pub fn commit_stats(&self, net: &mut Network<S>) {
        for (slot, cache) in &self.head_caches {
            net.commit_head_stats(*slot, cache);
        }
    }
}

fn vec3<S: Scalar>(row: &[S]) -> Vec3<S> {
    [row[0], row[1], row[2]]
}

/// Mean cross-entropy of the category network. Feature gradients only when `train_feature`.
pub fn category_objective<S: Scalar>(net: &Network<S>, batch: &Batch<'_, S>, train_feature: bool) -> Result<Objective<S>> {
    batch.check(net.num_categories())?;
    let (feats, fcache) = net.feature_forward(batch.x)?;
    let cat = net.category_forward(&feats)?;
    let (loss, dlogits, _) = softmax_cross_entropy(&cat.logits, batch.categories);
    let (dfeat, mut grads) = net.category_backward(&cat, &dlogits)?;
    if train_feature {
        grads.merge(net.feature_backward(&fcache, &dfeat)?);
    }
    Ok(Objective {
        total: loss,
        pose: None,
        category: Some(loss),
        grads,
        head_caches: Vec::new(),
    })
}

/// Mean pose loss with the oracle category: each row only reaches the head of its
/// ground-truth category. Feature gradients only when `train_feature`.
pub fn oracle_pose_objective<S: Scalar>(
    net: &Network<S>,
    batch: &Batch<'_, S>,
    train_feature: bool,
    mode: BnMode,
) -> Result<Objective<S>> {
    batch.check(net.num_categories())?;
    let cfg = net.config();
    let n = batch.x.rows();
    let inv_n = S::one() / S::from_usize(n).unwrap();
    let (feats, fcache) = net.feature_forward(batch.x)?;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_head_slots()];
    for (r, &c) in batch.categories.iter().enumerate() {
        groups[cfg.head_slot(c)].push(r);
    }
    let mut dfeat = Tensor2::zeros(n, cfg.feature_dim);
    let mut grads = Gradients::new();
    let mut head_caches = Vec::new();
    let mut total = S::zero();
    for (slot, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let sub = feats.select_rows(rows);
        let (out, cache) = net.head_forward(slot, &sub, mode)?;
        let mut dout = Tensor2::zeros(rows.len(), 3);
        for (i, &r) in rows.iter().enumerate() {
            let (l, g) = pose_loss(&vec3(out.row(i)), &batch.rotations[r]);
            total += l;
            for j in 0..3 {
                dout.set(i, j, g[j] * inv_n);
            }
        }
        let (dsub, g) = net.head_backward(slot, &cache, &dout)?;
        grads.merge(g);
        if train_feature {
            for (i, &r) in rows.iter().enumerate() {
                dfeat.row_mut(r).copy_from_slice(dsub.row(i));
            }
        }
        head_caches.push((slot, cache));
    }
    if train_feature {
        grads.merge(net.feature_backward(&fcache, &dfeat)?);
    }
    let pose = total * inv_n;
    Ok(Objective {
        total: pose,
        pose: Some(pose),
        category: None,
        grads,
        head_caches,
    })
}

/// Mean fused pose loss plus `λ`·mean cross-entropy, with gradients for every subnet.
///
/// Weighted fusion propagates the pose gradient into the category network through
/// `p`; top-1 fusion treats the selected index as constant.
pub fn joint_objective<S: Scalar>(
    net: &Network<S>,
    batch: &Batch<'_, S>,
    fusion: Fusion,
    lambda: f64,
    mode: BnMode,
) -> Result<Objective<S>> {
    batch.check(net.num_categories())?;
    let cfg = net.config();
    let k = cfg.num_categories;
    let n = batch.x.rows();
    let inv_n = S::one() / S::from_usize(n).unwrap();
    let (feats, fcache) = net.feature_forward(batch.x)?;
    let cat = net.category_forward(&feats)?;
    let mut outs = Vec::with_capacity(cfg.num_head_slots());
    for slot in 0..cfg.num_head_slots() {
        outs.push(net.head_forward(slot, &feats, mode)?);
    }
    let mut douts: Vec<Tensor2<S>> = outs.iter().map(|_| Tensor2::zeros(n, 3)).collect();
    let mut dp = Tensor2::zeros(n, k);
    let mut pose_total = S::zero();
    let mut ys = vec![[S::zero(); 3]; k];
    for r in 0..n {
        for (c, y) in ys.iter_mut().enumerate() {
            *y = vec3(outs[cfg.head_slot(c)].0.row(r));
        }
        let p = cat.probs.row(r);
        match fusion {
            Fusion::Weighted => {
                let fused = fuse_weighted_slice(&ys, p);
                let (l, g) = pose_loss(&fused, &batch.rotations[r]);
                pose_total += l;
                let g = [g[0] * inv_n, g[1] * inv_n, g[2] * inv_n];
                for c in 0..k {
                    let d = douts[cfg.head_slot(c)].row_mut(r);
                    for j in 0..3 {
                        d[j] += p[c] * g[j];
                    }
                    dp.set(r, c, g[0] * ys[c][0] + g[1] * ys[c][1] + g[2] * ys[c][2]);
                }
            }
            Fusion::Top1 => {
                let c = argmax(p);
                let (l, g) = pose_loss(&ys[c], &batch.rotations[r]);
                pose_total += l;
                let d = douts[cfg.head_slot(c)].row_mut(r);
                for j in 0..3 {
                    d[j] += g[j] * inv_n;
                }
            }
        }
    }
    let (ce, dlogits_ce, _) = softmax_cross_entropy(&cat.logits, batch.categories);
    let lam = S::lit(lambda);
    let mut dlogits = dlogits_ce.map(|v| v * lam);
    if fusion == Fusion::Weighted {
        let via_p = softmax_backward(&cat.probs, &dp)?;
        for (a, &b) in dlogits.data_mut().iter_mut().zip(via_p.data()) {
            *a += b;
        }
    }
    let (mut dfeat, mut grads) = net.category_backward(&cat, &dlogits)?;
    let mut head_caches = Vec::with_capacity(outs.len());
    for (slot, ((_, cache), dout)) in outs.into_iter().zip(&douts).enumerate() {
        let (df, g) = net.head_backward(slot, &cache, dout)?;
        for (a, &b) in dfeat.data_mut().iter_mut().zip(df.data()) {
            *a += b;
        }
        grads.merge(g);
        head_caches.push((slot, cache));
    }
    grads.merge(net.feature_backward(&fcache, &dfeat)?);
    let pose = pose_total * inv_n;
    Ok(Objective {
        total: pose + lam * ce,
        pose: Some(pose),
        category: Some(ce),
        grads,
        head_caches,
    })
}
