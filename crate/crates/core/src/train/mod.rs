//! Multi-phase training protocols.

mod batches;
mod objective;

pub use batches::{balanced_batches, per_category_batches};
pub use objective::{category_objective, joint_objective, oracle_pose_objective, Batch, Objective};

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, CategorySource};
use crate::model::{is_running_stat, CategoryDistribution, Fusion, HeadVariant, Network, Subnet};
use crate::nn::adam::adam_step;
use crate::nn::{AdamConfig, BnMode, Tensor2};
use crate::so3::Rotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Balanced,
    PoseFirst,
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(ProtocolKind::Balanced),
            "pose-first" | "pose_first" => Ok(ProtocolKind::PoseFirst),
            other => Err(Error::InvalidConfig(format!("unknown protocol '{other}' (balanced|pose-first)"))),
        }
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProtocolKind::Balanced => "balanced",
            ProtocolKind::PoseFirst => "pose-first",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Pose,
    Category,
    Joint,
}

/// Which subnets a phase may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub feature: bool,
    pub category: bool,
    pub pose: bool,
}

impl Trainable {
    pub fn allows(&self, name: &str) -> bool {
        if is_running_stat(name) {
            return false;
        }
        match Subnet::of(name) {
            Some(Subnet::Feature) => self.feature,
            Some(Subnet::Category) => self.category,
            Some(Subnet::Pose) => self.pose,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub name: &'static str,
    pub epochs: usize,
    pub lr: f64,
    pub trainable: Trainable,
    pub loss: LossKind,
    pub source: CategorySource,
    pub batching: Batching,
}

/// How a phase forms its mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batching {
    /// Near-equal rows of every category in each batch.
    Balanced,
    /// Single-category batches, so each category-dependent head trains on its own
    /// data. Falls back to `Balanced` when the heads are shared.
    PerCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochBudget {
    pub pretrain: usize,
    pub heads: usize,
    pub oracle: usize,
    pub category: usize,
    pub joint: usize,
}

impl Default for EpochBudget {
    fn default() -> Self {
        Self {
            pretrain: 20,
            heads: 30,
            oracle: 30,
            category: 10,
            joint: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Learning rate of the joint fine-tuning phase.
    pub joint_lr: f64,
    pub fusion: Fusion,
    pub lambda: f64,
    pub epochs: EpochBudget,
    /// Store measured epoch durations in the records; otherwise `wall_ms` is 0.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            adam: AdamConfig::default(),
            joint_lr: 1e-4,
            fusion: Fusion::Weighted,
            lambda: 0.1,
            epochs: EpochBudget::default(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        for (what, lr) in [("lr", self.adam.lr), ("joint lr", self.joint_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidConfig(format!("{what} must be > 0, got {lr}")));
            }
        }
        Ok(())
    }
}

fn pretrain_phase(epochs: usize, lr: f64) -> Phase {
    Phase {
        name: "pretrain",
        epochs,
        lr,
        trainable: Trainable { feature: true, category: true, pose: false },
        loss: LossKind::Category,
        source: CategorySource::Network,
        batching: Batching::Balanced,
    }
}

fn heads_phase(epochs: usize, lr: f64) -> Phase {
    Phase {
        name: "heads",
        epochs,
        lr,
        trainable: Trainable { feature: false, category: false, pose: true },
        loss: LossKind::Pose,
        source: CategorySource::Oracle,
        batching: Batching::PerCategory,
    }
}

fn oracle_phase(epochs: usize, lr: f64) -> Phase {
    Phase {
        name: "pose-first",
        epochs,
        lr,
        trainable: Trainable { feature: true, category: false, pose: true },
        loss: LossKind::Pose,
        source: CategorySource::Oracle,
        batching: Batching::Balanced,
    }
}

fn category_phase(epochs: usize, lr: f64) -> Phase {
    Phase {
        name: "category",
        epochs,
        lr,
        trainable: Trainable { feature: false, category: true, pose: false },
        loss: LossKind::Category,
        source: CategorySource::Network,
        batching: Batching::Balanced,
    }
}

fn joint_phase(epochs: usize, lr: f64) -> Phase {
    Phase {
        name: "joint",
        epochs,
        lr,
        trainable: Trainable { feature: true, category: true, pose: true },
        loss: LossKind::Joint,
        source: CategorySource::Network,
        batching: Batching::Balanced,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub kind: ProtocolKind,
    pub phases: Vec<Phase>,
}

impl Protocol {
    /// Balanced: pretrain, heads, category, joint.
    /// Pose-first: pretrain, heads, oracle fine-tuning of FN+PN, category, joint.
    pub fn new(kind: ProtocolKind, cfg: &TrainConfig) -> Self {
        let e = cfg.epochs;
        let lr = cfg.adam.lr;
        let phases = match kind {
            ProtocolKind::Balanced => vec![
                pretrain_phase(e.pretrain, lr),
                heads_phase(e.heads, lr),
                category_phase(e.category, lr),
                joint_phase(e.joint, cfg.joint_lr),
            ],
            ProtocolKind::PoseFirst => vec![
                pretrain_phase(e.pretrain, lr),
                heads_phase(e.heads, lr),
                oracle_phase(e.oracle, lr),
                category_phase(e.category, lr),
                joint_phase(e.joint, cfg.joint_lr),
            ],
        };
        Self { kind, phases }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub loss_pose: Option<f64>,
    pub loss_cat: Option<f64>,
    pub val_pose_err_deg: Option<f64>,
    pub val_cat_acc: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub wall_ms: u64,
}

/// Everything that evolves during training and is saved in checkpoints.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: Network<f64>,
    pub rng: ChaCha8Rng,
    pub phases_done: usize,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn new(net: Network<f64>, rng: ChaCha8Rng) -> Self {
        Self {
            net,
            rng,
            phases_done: 0,
            epochs_done: 0,
        }
    }
}

/// Progress callbacks.
pub trait Observer {
    fn phase_start(&mut self, _index: usize, _total: usize, _phase: &Phase) -> Result<()> {
        Ok(())
    }

    fn epoch_end(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    fn phase_end(&mut self, _index: usize, _phase: &Phase, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores every event.
pub struct Silent;

impl Observer for Silent {}

/// Training split in tensor form.
struct Prepared {
    x: Tensor2<f64>,
    categories: Vec<usize>,
    rotations: Vec<Rotation<f64>>,
    num_categories: usize,
}

impl Prepared {
    fn new(ds: &Dataset, k: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(s) = ds.samples.iter().find(|s| s.category >= k) {
            return Err(Error::IndexOutOfRange { index: s.category, len: k });
        }
        Ok(Self {
            x: ds.features(),
            categories: ds.categories(),
            rotations: ds.rotations(),
            num_categories: k,
        })
    }
}

/// Runs a single phase for its configured number of epochs.
pub fn run_phase(
    phase: &Phase,
    state: &mut TrainState,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let k = state.net.num_categories();
    let data = Prepared::new(train, k)?;
    let counts = train.category_counts();
    if phase.loss == LossKind::Pose {
        for (c, &n) in counts.iter().enumerate().take(k) {
            if n == 0 {
                log::warn!("{}", Error::CategoryWithNoSamples(c));
            }
        }
    }
    let adam = cfg.adam.with_lr(phase.lr);
    let per_category = phase.batching == Batching::PerCategory && state.net.config().variant == HeadVariant::CategoryDependent;
    let mut records = Vec::with_capacity(phase.epochs);
    for _ in 0..phase.epochs {
        let epoch = state.epochs_done + 1;
        let started = Instant::now();
        let batches = if per_category {
            per_category_batches(&data.categories, data.num_categories, cfg.batch_size, &mut state.rng)?
        } else {
            balanced_batches(&data.categories, data.num_categories, cfg.batch_size, &mut state.rng)?
        };
        let (mut pose_sum, mut cat_sum) = (0.0, 0.0);
        for rows in &batches {
            let x = data.x.select_rows(rows);
            let cats: Vec<usize> = rows.iter().map(|&r| data.categories[r]).collect();
            let rots: Vec<Rotation<f64>> = rows.iter().map(|&r| data.rotations[r]).collect();
            let batch = Batch {
                x: &x,
                categories: &cats,
                rotations: &rots,
            };
            let mut obj = match phase.loss {
                LossKind::Category => category_objective(&state.net, &batch, phase.trainable.feature)?,
                LossKind::Pose => oracle_pose_objective(&state.net, &batch, phase.trainable.feature, BnMode::Train)?,
                LossKind::Joint => joint_objective(&state.net, &batch, cfg.fusion, cfg.lambda, BnMode::Train)?,
            };
            if !obj.total.is_finite() || !obj.grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: phase.name.to_string(),
                    epoch,
                });
            }
            pose_sum += obj.pose.unwrap_or(0.0);
            cat_sum += obj.category.unwrap_or(0.0);
            obj.grads.retain(|n| phase.trainable.allows(n));
            adam_step(&mut state.net.params, &obj.grads, &adam)?;
            if phase.trainable.pose {
                obj.commit_stats(&mut state.net);
            }
        }
        let nb = batches.len() as f64;
        let (val_pose_err_deg, val_cat_acc) = match val {
            Some(v) => {
                let r = evaluate(&state.net, v, cfg.fusion, phase.source, 1)?;
                (Some(r.mean_pose_err_deg), Some(r.cat_acc_overall))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            phase: phase.name.to_string(),
            loss_pose: matches!(phase.loss, LossKind::Pose | LossKind::Joint).then_some(pose_sum / nb),
            loss_cat: matches!(phase.loss, LossKind::Category | LossKind::Joint).then_some(cat_sum / nb),
            val_pose_err_deg,
            val_cat_acc,
            wall_ms: if cfg.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        state.epochs_done = epoch;
        observer.epoch_end(&record)?;
        records.push(record);
    }
    Ok(records)
}

/// Runs the phases not yet completed in `state`, in order.
pub fn run_protocol(
    protocol: &Protocol,
    state: &mut TrainState,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<TrainReport> {
    let started = Instant::now();
    let mut report = TrainReport::default();
    let total = protocol.phases.len();
    for (i, phase) in protocol.phases.iter().enumerate().skip(state.phases_done) {
        observer.phase_start(i, total, phase)?;
        report.records.extend(run_phase(phase, state, train, val, cfg, observer)?);
        state.phases_done = i + 1;
        observer.phase_end(i, phase, state)?;
    }
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

/// Categorization pretraining of the feature and category networks.
pub fn pretrain_feature(state: &mut TrainState, train: &Dataset, epochs: usize, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    run_phase(&pretrain_phase(epochs, cfg.adam.lr), state, train, None, cfg, &mut Silent)
}

/// Each head learns from its own category only; the feature network is frozen.
pub fn train_heads_independent(state: &mut TrainState, train: &Dataset, epochs: usize, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    run_phase(&heads_phase(epochs, cfg.adam.lr), state, train, None, cfg, &mut Silent)
}

/// Feature network and heads fine-tuned under the oracle category.
pub fn train_pose_first_phase(state: &mut TrainState, train: &Dataset, epochs: usize, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    run_phase(&oracle_phase(epochs, cfg.adam.lr), state, train, None, cfg, &mut Silent)
}

/// Category network alone, on fixed features.
pub fn train_category_phase(state: &mut TrainState, train: &Dataset, epochs: usize, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    run_phase(&category_phase(epochs, cfg.adam.lr), state, train, None, cfg, &mut Silent)
}

/// All subnets on the fused pose loss plus `λ`·cross-entropy.
pub fn finetune_joint(state: &mut TrainState, train: &Dataset, epochs: usize, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    run_phase(&joint_phase(epochs, cfg.joint_lr), state, train, None, cfg, &mut Silent)
}

/// `δ(c*)`.
pub fn oracle_distribution(c_star: usize, k: usize) -> Result<CategoryDistribution<f64>> {
    CategoryDistribution::one_hot(c_star, k)
}
