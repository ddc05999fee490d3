//! Pose and category metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{fuse, CategoryDistribution, Fusion, HeadOutputs, Network};
use crate::so3::{exp_map, geodesic_distance, rotation_to_azimuth, viewpoint_error_deg, AxisAngle, Rotation};

const EVAL_CHUNK: usize = 256;

/// Where the category distribution used for fusion comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySource {
    /// `δ(c*)` from the ground-truth label.
    Oracle,
    Network,
}

/// Median of a non-empty slice; the mean of the middle two for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-group medians and their unweighted mean.
pub fn median_pose_err(groups: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let mut medians = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::EmptyCategory(i));
        }
        medians.push(median(g));
    }
    let mean = if medians.is_empty() {
        0.0
    } else {
        medians.iter().sum::<f64>() / medians.len() as f64
    };
    Ok((medians, mean))
}

/// Fraction of errors strictly below `delta`.
pub fn threshold_acc(errors: &[f64], delta: f64) -> f64 {
    assert!(delta > 0.0, "threshold must be positive");
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e < delta).count() as f64 / errors.len() as f64
}

/// `1 − min(|e|, 2π − |e|)/π`.
pub fn aaai_score(err: f64) -> f64 {
    let e = err.abs();
    1.0 - e.min(2.0 * std::f64::consts::PI - e) / std::f64::consts::PI
}

/// Circular azimuth difference in radians.
pub fn azimuth_err(r: &Rotation<f64>, r_star: &Rotation<f64>) -> Result<f64> {
    let d = (rotation_to_azimuth(r)? - rotation_to_azimuth(r_star)?).abs();
    Ok(d.min(2.0 * std::f64::consts::PI - d))
}

/// Minimum viewpoint error over the heads of the `k` most probable categories.
pub fn topk_pose_err(
    heads: &HeadOutputs<f64>,
    p: &CategoryDistribution<f64>,
    r_star: &Rotation<f64>,
    k: usize,
) -> Result<f64> {
    if k == 0 || k > p.len() || heads.len() != p.len() {
        return Err(Error::InvalidK { k, categories: p.len() });
    }
    Ok(p.top_k(k)
        .into_iter()
        .map(|c| viewpoint_error_deg(&exp_map(&AxisAngle::new(heads.y[c])), r_star))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: usize,
    pub count: usize,
    pub median_pose_err_deg: f64,
    pub cat_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// `P%(<22.5°)`, as a fraction.
    pub p_lt_22_5: f64,
    /// `P%(<45°)`, as a fraction.
    pub p_lt_45: f64,
    pub aaai: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub k: usize,
    /// Mean over categories of the per-category median top-k error.
    pub mean_pose_err_deg: f64,
    /// Fraction of samples whose true category is among the `k` most probable.
    pub cat_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fusion: Fusion,
    pub category_source: CategorySource,
    pub num_samples: usize,
    pub per_category: Vec<CategoryReport>,
    /// Unweighted mean of per-category medians.
    pub mean_pose_err_deg: f64,
    /// Sample-weighted category accuracy.
    pub cat_acc_overall: f64,
    /// Mean of per-category accuracies.
    pub cat_acc_mean: f64,
    pub rotation: ThresholdReport,
    pub azimuth: ThresholdReport,
    /// Samples left out of the azimuth metrics because either rotation is in gimbal lock.
    pub azimuth_skipped: usize,
    pub topk: Vec<TopKReport>,
}

/// Metrics of `net` on `dataset`, with top-k rows for `k = 1..=min(max_k, K)`.
pub fn evaluate(
    net: &Network<f64>,
    dataset: &Dataset,
    fusion: Fusion,
    source: CategorySource,
    max_k: usize,
) -> Result<EvalReport> {
    let k_cats = net.num_categories();
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.input_dim != net.config().input_dim {
        return Err(Error::shape(format!(
            "dataset has {} features, model expects {}",
            dataset.input_dim,
            net.config().input_dim
        )));
    }
    if let Some(s) = dataset.samples.iter().find(|s| s.category >= k_cats) {
        return Err(Error::shape(format!("label {} but model has {k_cats} categories", s.category)));
    }
    if max_k == 0 || max_k > k_cats {
        return Err(Error::InvalidK { k: max_k, categories: k_cats });
    }
    let top = max_k;
    let mut errs: Vec<Vec<f64>> = vec![Vec::new(); k_cats];
    let mut topk_errs: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k_cats]; top];
    let mut topk_hits = vec![0usize; top];
    let mut correct = vec![0usize; k_cats];
    let mut rot_err_all = Vec::with_capacity(dataset.len());
    let mut rot_rad = Vec::with_capacity(dataset.len());
    let mut az_err = Vec::new();
    let mut az_skipped = 0;
    for chunk in dataset.samples.chunks(EVAL_CHUNK) {
        let x = crate::nn::Tensor2::from_rows(&chunk.iter().map(|s| s.x.clone()).collect::<Vec<_>>())?;
        let (ps, heads) = net.infer(&x)?;
        for ((s, p_net), h) in chunk.iter().zip(ps).zip(heads) {
            let c = s.category;
            let p = match source {
                CategorySource::Oracle => CategoryDistribution::one_hot(c, k_cats)?,
                CategorySource::Network => p_net,
            };
            if p.argmax() == c {
                correct[c] += 1;
            }
            let r = exp_map(&AxisAngle::new(fuse(fusion, &h, &p)));
            let e = viewpoint_error_deg(&r, &s.rotation);
            errs[c].push(e);
            rot_err_all.push(e);
            rot_rad.push(geodesic_distance(&r, &s.rotation));
            match azimuth_err(&r, &s.rotation) {
                Ok(a) => az_err.push(a),
                Err(Error::GimbalLock { .. }) => az_skipped += 1,
                Err(e) => return Err(e),
            }
            let ranked = p.top_k(top);
            for k in 1..=top {
                topk_errs[k - 1][c].push(topk_pose_err(&h, &p, &s.rotation, k)?);
                if ranked[..k].contains(&c) {
                    topk_hits[k - 1] += 1;
                }
            }
        }
    }
    let present: Vec<usize> = (0..k_cats).filter(|&c| !errs[c].is_empty()).collect();
    let groups: Vec<Vec<f64>> = present.iter().map(|&c| errs[c].clone()).collect();
    let (medians, mean_pose_err_deg) = median_pose_err(&groups)?;
    let per_category: Vec<CategoryReport> = present
        .iter()
        .zip(&medians)
        .map(|(&c, &m)| CategoryReport {
            category: c,
            count: errs[c].len(),
            median_pose_err_deg: m,
            cat_acc: correct[c] as f64 / errs[c].len() as f64,
        })
        .collect();
    let n = dataset.len();
    let cat_acc_mean = per_category.iter().map(|r| r.cat_acc).sum::<f64>() / per_category.len() as f64;
    let thresholds = |deg: &[f64], rad: &[f64]| ThresholdReport {
        p_lt_22_5: threshold_acc(deg, 22.5),
        p_lt_45: threshold_acc(deg, 45.0),
        aaai: if rad.is_empty() {
            0.0
        } else {
            rad.iter().map(|&e| aaai_score(e)).sum::<f64>() / rad.len() as f64
        },
        samples: rad.len(),
    };
    let az_deg: Vec<f64> = az_err.iter().map(|e| e.to_degrees()).collect();
    let topk = (1..=top)
        .map(|k| {
            let groups: Vec<Vec<f64>> = present.iter().map(|&c| topk_errs[k - 1][c].clone()).collect();
            Ok(TopKReport {
                k,
                mean_pose_err_deg: median_pose_err(&groups)?.1,
                cat_acc: topk_hits[k - 1] as f64 / n as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        fusion,
        category_source: source,
        num_samples: n,
        per_category,
        mean_pose_err_deg,
        cat_acc_overall: correct.iter().sum::<usize>() as f64 / n as f64,
        cat_acc_mean,
        rotation: thresholds(&rot_err_all, &rot_rad),
        azimuth: thresholds(&az_deg, &az_err),
        azimuth_skipped: az_skipped,
        topk,
    })
}

impl EvalReport {
    /// Aligned text table; top-k rows up to `show_topk`.
    pub fn render(&self, show_topk: usize) -> String {
        let mut s = String::new();
        let src = match self.category_source {
            CategorySource::Oracle => "oracle",
            CategorySource::Network => "network",
        };
        s.push_str(&format!("fusion: {}   category source: {src}   samples: {}\n", self.fusion, self.num_samples));
        s.push_str(&format!("{:>8} {:>7} {:>14} {:>8}\n", "category", "count", "pose-err(deg)", "cat-acc"));
        for r in &self.per_category {
            s.push_str(&format!(
                "{:>8} {:>7} {:>14.3} {:>8.4}\n",
                r.category, r.count, r.median_pose_err_deg, r.cat_acc
            ));
        }
        s.push_str(&format!("{:>8} {:>7} {:>14.3} {:>8.4}\n", "mean", self.num_samples, self.mean_pose_err_deg, self.cat_acc_mean));
        s.push_str(&format!("overall cat-acc         {:.4}\n", self.cat_acc_overall));
        s.push_str(&format!(
            "rotation  P(<22.5) {:.4}  P(<45) {:.4}  AAAI {:.4}\n",
            self.rotation.p_lt_22_5, self.rotation.p_lt_45, self.rotation.aaai
        ));
        s.push_str(&format!(
            "azimuth   P(<22.5) {:.4}  P(<45) {:.4}  AAAI {:.4}  skipped {}\n",
            self.azimuth.p_lt_22_5, self.azimuth.p_lt_45, self.azimuth.aaai, self.azimuth_skipped
        ));
        for t in self.topk.iter().filter(|t| t.k <= show_topk) {
            s.push_str(&format!("top-{}     pose-err {:.3}  cat-acc {:.4}\n", t.k, t.mean_pose_err_deg, t.cat_acc));
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(self.topk.len()))
    }
}
