//! Shared feature network, category network and a bank of pose heads.

mod fusion;

pub use fusion::{fuse, fuse_top1, fuse_weighted, CategoryDistribution, Fusion, HeadOutputs};
pub(crate) use fusion::{argmax, fuse_weighted_slice};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::batchnorm::update_running_stats;
use crate::nn::{softmax, Activation, BatchNormLayer, BnCache, BnMode, DenseLayer, Gradients, ParameterStore, Tensor2};
use crate::scalar::Scalar;
use crate::so3::{exp_map, AxisAngle, Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    CategoryDependent,
    CategoryIndependent,
}

impl std::str::FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category_dependent" | "dependent" => Ok(HeadVariant::CategoryDependent),
            "category_independent" | "independent" => Ok(HeadVariant::CategoryIndependent),
            other => Err(Error::InvalidConfig(format!("unknown head variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadVariant::CategoryDependent => "category_dependent",
            HeadVariant::CategoryIndependent => "category_independent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_categories: usize,
    pub input_dim: usize,
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub category_hidden: Vec<usize>,
    /// Hidden widths of each category-dependent head.
    pub head_hidden: [usize; 2],
    pub variant: HeadVariant,
    /// First hidden width of the single shared head; the second is `head_hidden[1]`.
    pub independent_hidden: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: 64 → 128 → 64 features, heads 64 → 128 → 64 → 3,
    /// shared head hidden width `K·128`.
    pub fn desk(num_categories: usize) -> Self {
        Self {
            num_categories,
            input_dim: 64,
            feature_hidden: vec![128],
            feature_dim: 64,
            category_hidden: vec![64],
            head_hidden: [128, 64],
            variant: HeadVariant::CategoryDependent,
            independent_hidden: num_categories * 128,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// Head widths `1000/factor` and `500/factor`, rounded, at least 1.
    pub fn scaled_head_widths(factor: f64) -> Result<[usize; 2]> {
        if !(factor >= 1.0 && factor.is_finite()) {
            return Err(Error::InvalidConfig(format!("head scale factor must be >= 1, got {factor}")));
        }
        Ok([((1000.0 / factor).round() as usize).max(1), ((500.0 / factor).round() as usize).max(1)])
    }

    pub fn with_variant(mut self, variant: HeadVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(Error::InvalidConfig(format!("need K >= 2 categories, got {}", self.num_categories)));
        }
        let widths = [self.input_dim, self.feature_dim, self.head_hidden[0], self.head_hidden[1], self.independent_hidden];
        if widths.iter().chain(&self.feature_hidden).chain(&self.category_hidden).any(|&w| w == 0) {
            return Err(Error::InvalidConfig("all layer widths must be >= 1".into()));
        }
        if !(self.bn_momentum >= 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::InvalidConfig(format!("bn momentum must be in [0, 1), got {}", self.bn_momentum)));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::InvalidConfig(format!("bn eps must be > 0, got {}", self.bn_eps)));
        }
        Ok(())
    }

    /// Number of distinct head stacks: `K`, or 1 for the shared variant.
    pub fn num_head_slots(&self) -> usize {
        match self.variant {
            HeadVariant::CategoryDependent => self.num_categories,
            HeadVariant::CategoryIndependent => 1,
        }
    }

    /// Stack that serves category `c`.
    pub fn head_slot(&self, c: usize) -> usize {
        match self.variant {
            HeadVariant::CategoryDependent => c,
            HeadVariant::CategoryIndependent => 0,
        }
    }

    fn head_widths(&self) -> [usize; 2] {
        match self.variant {
            HeadVariant::CategoryDependent => self.head_hidden,
            HeadVariant::CategoryIndependent => [self.independent_hidden, self.head_hidden[1]],
        }
    }

    /// Line-oriented `key=value` text, stored in checkpoints.
    pub fn to_echo(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "num_categories={}\ninput_dim={}\nfeature_hidden={}\nfeature_dim={}\ncategory_hidden={}\nhead_hidden={},{}\nvariant={}\nindependent_hidden={}\nbn_momentum={:e}\nbn_eps={:e}\n",
            self.num_categories,
            self.input_dim,
            list(&self.feature_hidden),
            self.feature_dim,
            list(&self.category_hidden),
            self.head_hidden[0],
            self.head_hidden[1],
            self.variant,
            self.independent_hidden,
            self.bn_momentum,
            self.bn_eps
        )
    }

    pub fn from_echo(text: &str) -> Result<Self> {
        let bad = |m: String| Error::CorruptCheckpoint(format!("model config echo: {m}"));
        let mut cfg = ModelConfig::desk(2);
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line '{line}'")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
            let list = |v: &str| -> Result<Vec<usize>> {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',').map(num).collect()
            };
            let float = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "num_categories" => cfg.num_categories = num(v)?,
                "input_dim" => cfg.input_dim = num(v)?,
                "feature_hidden" => cfg.feature_hidden = list(v)?,
                "feature_dim" => cfg.feature_dim = num(v)?,
                "category_hidden" => cfg.category_hidden = list(v)?,
                "head_hidden" => {
                    let w = list(v)?;
                    if w.len() != 2 {
                        return Err(bad("head_hidden needs two widths".into()));
                    }
                    cfg.head_hidden = [w[0], w[1]];
                }
                "variant" => cfg.variant = v.parse().map_err(|_| bad(format!("variant '{v}'")))?,
                "independent_hidden" => cfg.independent_hidden = num(v)?,
                "bn_momentum" => cfg.bn_momentum = float(v)?,
                "bn_eps" => cfg.bn_eps = float(v)?,
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
            seen += 1;
        }
        if seen != 10 {
            return Err(bad(format!("expected 10 keys, found {seen}")));
        }
        cfg.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }
}

/// Which subnetwork a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subnet {
    Feature,
    Category,
    Pose,
}

impl Subnet {
    pub fn of(name: &str) -> Option<Subnet> {
        if name.starts_with("feature.") {
            Some(Subnet::Feature)
        } else if name.starts_with("category.") {
            Some(Subnet::Category)
        } else if name.starts_with("head.") {
            Some(Subnet::Pose)
        } else {
            None
        }
    }
}

/// Running statistics live in the store but are never optimized.
pub fn is_running_stat(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

pub fn head_prefix(cfg: &ModelConfig, slot: usize) -> String {
    match cfg.variant {
        HeadVariant::CategoryDependent => format!("head.{slot}"),
        HeadVariant::CategoryIndependent => "head.shared".to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct MlpCache<S> {
    /// Input of every dense layer.
    inputs: Vec<Tensor2<S>>,
    /// Pre-activation output of every hidden layer.
    pre: Vec<Tensor2<S>>,
}

#[derive(Debug, Clone)]
pub struct CategoryOutput<S> {
    pub logits: Tensor2<S>,
    pub probs: Tensor2<S>,
    cache: MlpCache<S>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<S> {
    feats: Tensor2<S>,
    bn1: BnCache<S>,
    a1: Tensor2<S>,
    h1: Tensor2<S>,
    bn2: BnCache<S>,
    a2: Tensor2<S>,
    h2: Tensor2<S>,
    z3: Tensor2<S>,
}

/// Result of `predict` for one row.
#[derive(Debug, Clone)]
pub struct Prediction<S> {
    pub p: CategoryDistribution<S>,
    pub heads: HeadOutputs<S>,
    pub fused: Vec3<S>,
    pub rotation: Rotation<S>,
}

#[derive(Debug, Clone)]
pub struct Network<S> {
    config: ModelConfig,
    pub params: ParameterStore<S>,
}

/// Scale of the pose output layer's initial weights, so that fresh heads predict
/// near the identity, inside the canonical axis-angle ball.
const OUTPUT_INIT_GAIN: f64 = 0.01;

impl<S: Scalar> Network<S> {
    /// Glorot-uniform weights (scaled down in the pose output layer), zero biases,
    /// unit BN scale, zero BN shift.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let mut dense = |params: &mut ParameterStore<S>, name: &str, fan_in: usize, fan_out: usize, bias: bool, gain: f64| -> Result<()> {
            let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| S::lit(rng.random_range(-a..a))).collect();
            params.insert(format!("{name}.weight"), vec![fan_out, fan_in], w)?;
            if bias {
                params.insert(format!("{name}.bias"), vec![fan_out], vec![S::zero(); fan_out])?;
            }
            Ok(())
        };
        let fw = feature_widths(&config);
        for l in 0..fw.len() - 1 {
            dense(&mut params, &format!("feature.{l}"), fw[l], fw[l + 1], true, 1.0)?;
        }
        let cw = category_widths(&config);
        for l in 0..cw.len() - 1 {
            dense(&mut params, &format!("category.{l}"), cw[l], cw[l + 1], true, 1.0)?;
        }
        let [h1, h2] = config.head_widths();
        for slot in 0..config.num_head_slots() {
            let p = head_prefix(&config, slot);
            dense(&mut params, &format!("{p}.fc1"), config.feature_dim, h1, false, 1.0)?;
            dense(&mut params, &format!("{p}.fc2"), h1, h2, false, 1.0)?;
            dense(&mut params, &format!("{p}.fc3"), h2, 3, true, OUTPUT_INIT_GAIN)?;
            for (bn, w) in [("bn1", h1), ("bn2", h2)] {
                params.insert(format!("{p}.{bn}.scale"), vec![w], vec![S::one(); w])?;
                params.insert(format!("{p}.{bn}.shift"), vec![w], vec![S::zero(); w])?;
                params.insert(format!("{p}.{bn}.running_mean"), vec![w], vec![S::zero(); w])?;
                params.insert(format!("{p}.{bn}.running_var"), vec![w], vec![S::one(); w])?;
            }
        }
        Ok(Self { config, params })
    }

    /// Wraps an existing store after checking it has exactly the expected tensors.
    pub fn from_parts(config: ModelConfig, params: ParameterStore<S>) -> Result<Self> {
        config.validate()?;
        let reference = Network::<S>::new(config.clone(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        for (name, p) in reference.params.iter() {
            match params.get(name) {
                Some(q) if q.shape == p.shape => {}
                Some(q) => {
                    return Err(Error::shape(format!("tensor {name} has shape {:?}, expected {:?}", q.shape, p.shape)));
                }
                None => return Err(Error::shape(format!("missing tensor {name}"))),
            }
        }
        if params.len() != reference.params.len() {
            let extra: Vec<&str> = params.names().filter(|n| !reference.params.contains(n)).collect();
            return Err(Error::shape(format!("unexpected tensors {extra:?}")));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_categories(&self) -> usize {
        self.config.num_categories
    }

    /// Number of optimizable values, optionally restricted to names with `prefix`.
    pub fn trainable_count(&self, prefix: &str) -> usize {
        self.params.count_values(|n| n.starts_with(prefix) && !is_running_stat(n))
    }

    fn dense(&self, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<DenseLayer<'_, S>> {
        let b = if bias {
            Some(self.params.values(&format!("{name}.bias")))
        } else {
            None
        };
        DenseLayer::new(self.params.values(&format!("{name}.weight")), b, in_dim, out_dim)
    }

    fn bn(&self, name: &str, mode: BnMode) -> BatchNormLayer<'_, S> {
        BatchNormLayer {
            scale: self.params.values(&format!("{name}.scale")),
            shift: self.params.values(&format!("{name}.shift")),
            running_mean: self.params.values(&format!("{name}.running_mean")),
            running_var: self.params.values(&format!("{name}.running_var")),
            momentum: S::lit(self.config.bn_momentum),
            eps: S::lit(self.config.bn_eps),
            mode,
        }
    }

    fn mlp_forward(&self, prefix: &str, widths: &[usize], x: &Tensor2<S>, relu_last: bool) -> Result<(Tensor2<S>, MlpCache<S>)> {
        let layers = widths.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(layers),
            pre: Vec::with_capacity(layers),
        };
        let mut h = x.clone();
        for l in 0..layers {
            let z = self.dense(&format!("{prefix}.{l}"), widths[l], widths[l + 1], true)?.forward(&h)?;
            cache.inputs.push(h);
            if l + 1 < layers || relu_last {
                h = Activation::Relu.forward(&z);
                cache.pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, cache))
    }

    fn mlp_backward(
        &self,
        prefix: &str,
        widths: &[usize],
        cache: &MlpCache<S>,
        upstream: &Tensor2<S>,
        want_input: bool,
    ) -> Result<(Tensor2<S>, Gradients<S>)> {
        let layers = widths.len() - 1;
        let mut grads = Gradients::new();
        let mut g = upstream.clone();
        for l in (0..layers).rev() {
            if l < cache.pre.len() {
                g = Activation::Relu.backward(&cache.pre[l], &g)?;
            }
            let name = format!("{prefix}.{l}");
            let layer = self.dense(&name, widths[l], widths[l + 1], true)?;
            let dg = layer.backward_with(&cache.inputs[l], &g, l > 0 || want_input)?;
            grads.accumulate(&format!("{name}.weight"), &dg.weight);
            if let Some(b) = &dg.bias {
                grads.accumulate(&format!("{name}.bias"), b);
            }
            g = dg.input;
        }
        Ok((g, grads))
    }

    /// Feature network: dense + ReLU per layer, output width `d`.
    pub fn feature_forward(&self, x: &Tensor2<S>) -> Result<(Tensor2<S>, MlpCache<S>)> {
        if x.cols() != self.config.input_dim {
            return Err(Error::shape(format!("input has {} columns, model expects {}", x.cols(), self.config.input_dim)));
        }
        self.mlp_forward("feature", &feature_widths(&self.config), x, true)
    }

    pub fn feature_backward(&self, cache: &MlpCache<S>, dfeat: &Tensor2<S>) -> Result<Gradients<S>> {
        Ok(self.mlp_backward("feature", &feature_widths(&self.config), cache, dfeat, false)?.1)
    }

    pub fn features(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        Ok(self.feature_forward(x)?.0)
    }

    /// Category network logits and softmax probabilities.
    pub fn category_forward(&self, feats: &Tensor2<S>) -> Result<CategoryOutput<S>> {
        self.check_feats(feats)?;
        let (logits, cache) = self.mlp_forward("category", &category_widths(&self.config), feats, false)?;
        let probs = softmax(&logits);
        Ok(CategoryOutput { logits, probs, cache })
    }

    /// Gradient w.r.t. the features and the category parameters, given `dL/dlogits`.
    pub fn category_backward(&self, out: &CategoryOutput<S>, dlogits: &Tensor2<S>) -> Result<(Tensor2<S>, Gradients<S>)> {
        self.mlp_backward("category", &category_widths(&self.config), &out.cache, dlogits, true)
    }

    pub fn category_distributions(&self, feats: &Tensor2<S>) -> Result<Vec<CategoryDistribution<S>>> {
        let out = self.category_forward(feats)?;
        Ok((0..out.probs.rows())
            .map(|r| CategoryDistribution::from_vec_unchecked(out.probs.row(r).to_vec()))
            .collect())
    }

    fn check_feats(&self, feats: &Tensor2<S>) -> Result<()> {
        if feats.cols() != self.config.feature_dim {
            return Err(Error::shape(format!("features have {} columns, model expects {}", feats.cols(), self.config.feature_dim)));
        }
        Ok(())
    }

    /// One head stack on `feats`. Train mode on fewer than two rows falls back to eval mode.
    pub fn head_forward(&self, slot: usize, feats: &Tensor2<S>, mode: BnMode) -> Result<(Tensor2<S>, HeadCache<S>)> {
        self.check_feats(feats)?;
        if slot >= self.config.num_head_slots() {
            return Err(Error::IndexOutOfRange {
                index: slot,
                len: self.config.num_head_slots(),
            });
        }
        let mode = if feats.rows() < 2 { BnMode::Eval } else { mode };
        let p = head_prefix(&self.config, slot);
        let [w1, w2] = self.config.head_widths();
        let z1 = self.dense(&format!("{p}.fc1"), self.config.feature_dim, w1, false)?.forward(feats)?;
        let (a1, bn1) = self.bn(&format!("{p}.bn1"), mode).forward(&z1)?;
        let h1 = Activation::Relu.forward(&a1);
        let z2 = self.dense(&format!("{p}.fc2"), w1, w2, false)?.forward(&h1)?;
        let (a2, bn2) = self.bn(&format!("{p}.bn2"), mode).forward(&z2)?;
        let h2 = Activation::Relu.forward(&a2);
        let z3 = self.dense(&format!("{p}.fc3"), w2, 3, true)?.forward(&h2)?;
        let out = Activation::PiTanh.forward(&z3);
        Ok((
            out,
            HeadCache {
                feats: feats.clone(),
                bn1,
                a1,
                h1,
                bn2,
                a2,
                h2,
                z3,
            },
        ))
    }

    pub fn head_backward(&self, slot: usize, cache: &HeadCache<S>, dout: &Tensor2<S>) -> Result<(Tensor2<S>, Gradients<S>)> {
        let p = head_prefix(&self.config, slot);
        let [w1, w2] = self.config.head_widths();
        let mut grads = Gradients::new();
        let dz3 = Activation::PiTanh.backward(&cache.z3, dout)?;
        let g3 = self.dense(&format!("{p}.fc3"), w2, 3, true)?.backward(&cache.h2, &dz3)?;
        grads.accumulate(&format!("{p}.fc3.weight"), &g3.weight);
        grads.accumulate(&format!("{p}.fc3.bias"), g3.bias.as_deref().unwrap_or_default());
        let da2 = Activation::Relu.backward(&cache.a2, &g3.input)?;
        let b2 = self.bn(&format!("{p}.bn2"), cache.bn2.mode).backward(&cache.bn2, &da2)?;
        grads.accumulate(&format!("{p}.bn2.scale"), &b2.scale);
        grads.accumulate(&format!("{p}.bn2.shift"), &b2.shift);
        let g2 = self.dense(&format!("{p}.fc2"), w1, w2, false)?.backward(&cache.h1, &b2.input)?;
        grads.accumulate(&format!("{p}.fc2.weight"), &g2.weight);
        let da1 = Activation::Relu.backward(&cache.a1, &g2.input)?;
        let b1 = self.bn(&format!("{p}.bn1"), cache.bn1.mode).backward(&cache.bn1, &da1)?;
        grads.accumulate(&format!("{p}.bn1.scale"), &b1.scale);
        grads.accumulate(&format!("{p}.bn1.shift"), &b1.shift);
        let g1 = self.dense(&format!("{p}.fc1"), self.config.feature_dim, w1, false)?.backward(&cache.feats, &b1.input)?;
        grads.accumulate(&format!("{p}.fc1.weight"), &g1.weight);
        Ok((g1.input, grads))
    }

    /// Folds a train-mode forward pass into the head's running statistics.
    pub fn commit_head_stats(&mut self, slot: usize, cache: &HeadCache<S>) {
        let p = head_prefix(&self.config, slot);
        let momentum = S::lit(self.config.bn_momentum);
        for (bn, c) in [("bn1", &cache.bn1), ("bn2", &cache.bn2)] {
            let mean_name = format!("{p}.{bn}.running_mean");
            let var_name = format!("{p}.{bn}.running_var");
            let mut mean = self.params.values(&mean_name).to_vec();
            let mut var = self.params.values(&var_name).to_vec();
            update_running_stats(&mut mean, &mut var, c, momentum);
            self.params.values_mut(&mean_name).copy_from_slice(&mean);
            self.params.values_mut(&var_name).copy_from_slice(&var);
        }
    }

    /// Eval-mode outputs of every category slot; the shared variant is replicated `K` times.
    pub fn pose_heads(&self, feats: &Tensor2<S>) -> Result<Vec<HeadOutputs<S>>> {
        let k = self.config.num_categories;
        let outs = (0..self.config.num_head_slots())
            .map(|s| Ok(self.head_forward(s, feats, BnMode::Eval)?.0))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..feats.rows())
            .map(|r| HeadOutputs {
                y: (0..k)
                    .map(|c| {
                        let row = outs[self.config.head_slot(c)].row(r);
                        [row[0], row[1], row[2]]
                    })
                    .collect(),
            })
            .collect())
    }

    /// Category distributions and head outputs for every row, in eval mode.
    pub fn infer(&self, x: &Tensor2<S>) -> Result<(Vec<CategoryDistribution<S>>, Vec<HeadOutputs<S>>)> {
        let feats = self.features(x)?;
        Ok((self.category_distributions(&feats)?, self.pose_heads(&feats)?))
    }

    pub fn predict(&self, x: &Tensor2<S>, fusion: Fusion) -> Result<Vec<Prediction<S>>> {
        let (ps, heads) = self.infer(x)?;
        Ok(ps
            .into_iter()
            .zip(heads)
            .map(|(p, heads)| {
                let fused = fuse(fusion, &heads, &p);
                let rotation = exp_map(&AxisAngle::new(fused));
                Prediction { p, heads, fused, rotation }
            })
            .collect())
    }
}

fn feature_widths(cfg: &ModelConfig) -> Vec<usize> {
    let mut w = vec![cfg.input_dim];
    w.extend(&cfg.feature_hidden);
    w.push(cfg.feature_dim);
    w
}

fn category_widths(cfg: &ModelConfig) -> Vec<usize> {
    let mut w = vec![cfg.feature_dim];
    w.extend(&cfg.category_hidden);
    w.push(cfg.num_categories);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(variant: HeadVariant) -> ModelConfig {
        ModelConfig {
            num_categories: 3,
            input_dim: 5,
            feature_hidden: vec![6],
            feature_dim: 4,
            category_hidden: vec![4],
            head_hidden: [6, 5],
            variant,
            independent_hidden: 9,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    fn input(rows: usize, cols: usize, seed: u64) -> Tensor2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_feature_layer_passes_through() {
        let mut cfg = tiny(HeadVariant::CategoryDependent);
        cfg.feature_hidden.clear();
        cfg.input_dim = 4;
        let mut net = Network::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = net.params.values_mut("feature.0.weight");
        w.fill(0.0);
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let x = Tensor2::from_rows(&[vec![0.5, 1.0, 0.0, 2.0], vec![3.0, 0.25, 0.125, 0.0]]).unwrap();
        assert_eq!(net.features(&x).unwrap(), x);
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = tiny(HeadVariant::CategoryDependent);
        let a = Network::<f64>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = Network::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let x = input(6, 5, 1);
        let fa = a.features(&x).unwrap();
        assert_eq!((fa.rows(), fa.cols()), (6, 4));
        assert_eq!(fa, b.features(&x).unwrap());
        assert!(matches!(a.features(&input(2, 4, 1)), Err(Error::ShapeMismatch(_))));
        assert!(matches!(a.category_forward(&input(2, 5, 1)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn category_rows_are_distributions() {
        let net = Network::<f64>::new(tiny(HeadVariant::CategoryDependent), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for p in net.category_distributions(&input(8, 4, 2)).unwrap() {
            let s: f64 = p.as_slice().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.as_slice().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zeroed_category_output_is_uniform() {
        let mut net = Network::<f64>::new(tiny(HeadVariant::CategoryDependent), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        net.params.values_mut("category.1.weight").fill(0.0);
        for p in net.category_distributions(&input(4, 4, 2)).unwrap() {
            assert!(p.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn heads_bounded_and_identical_weights_agree() {
        let mut net = Network::<f64>::new(tiny(HeadVariant::CategoryDependent), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for v in net.params.values_mut("head.0.fc3.weight") {
            *v *= 100.0;
        }
        let names: Vec<String> = net.params.names().filter(|n| n.starts_with("head.0.")).map(String::from).collect();
        for n in &names {
            let v = net.params.values(n).to_vec();
            net.params.values_mut(&n.replacen("head.0.", "head.2.", 1)).copy_from_slice(&v);
        }
        let outs = net.pose_heads(&input(10, 4, 4)).unwrap();
        for h in &outs {
            assert_eq!(h.len(), 3);
            assert_eq!(h.y[0], h.y[2]);
            assert!(h.y.iter().flatten().all(|v| v.abs() < std::f64::consts::PI));
        }
    }

    #[test]
    fn independent_variant_replicates() {
        let net = Network::<f64>::new(tiny(HeadVariant::CategoryIndependent), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(net.params.contains("head.shared.fc1.weight"));
        assert!(!net.params.contains("head.0.fc1.weight"));
        for h in net.pose_heads(&input(5, 4, 4)).unwrap() {
            assert!(h.y.iter().all(|y| *y == h.y[0]));
        }
    }

    #[test]
    fn desk_variants_have_matched_parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dep = Network::<f64>::new(ModelConfig::desk(4), &mut rng).unwrap();
        let ind = Network::<f64>::new(ModelConfig::desk(4).with_variant(HeadVariant::CategoryIndependent), &mut rng).unwrap();
        let (a, b) = (dep.trainable_count("head.") as f64, ind.trainable_count("head.") as f64);
        assert!((a - b).abs() / a < 0.05, "dep {a} vs indep {b}");
    }

    #[test]
    fn predict_zero_output_is_identity() {
        let mut net = Network::<f64>::new(tiny(HeadVariant::CategoryDependent), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for slot in 0..3 {
            net.params.values_mut(&format!("head.{slot}.fc3.weight")).fill(0.0);
        }
        for pr in net.predict(&input(3, 5, 1), Fusion::Weighted).unwrap() {
            assert_eq!(pr.fused, [0.0; 3]);
            assert_eq!(pr.rotation, Rotation::identity());
        }
    }

    #[test]
    fn echo_round_trip_and_from_parts() {
        for v in [HeadVariant::CategoryDependent, HeadVariant::CategoryIndependent] {
            let cfg = tiny(v);
            assert_eq!(ModelConfig::from_echo(&cfg.to_echo()).unwrap(), cfg);
            let net = Network::<f64>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert!(Network::from_parts(cfg.clone(), net.params.clone()).is_ok());
            let mut other = tiny(v);
            other.feature_dim = 5;
            assert!(Network::from_parts(other, net.params).is_err());
        }
        assert!(ModelConfig::from_echo("num_categories=3\n").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::desk(1);
        assert!(c.validate().is_err());
        c.num_categories = 4;
        c.feature_dim = 0;
        assert!(c.validate().is_err());
        assert_eq!(ModelConfig::scaled_head_widths(8.0).unwrap(), [125, 63]);
        assert!(ModelConfig::scaled_head_widths(0.5).is_err());
    }
}
