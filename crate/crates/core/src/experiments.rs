//! Paired experiments on the standard synthetic benchmark.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{standard_benchmark, Dataset};
use crate::error::Result;
use crate::eval::{evaluate, CategorySource, EvalReport};
use crate::model::{HeadVariant, ModelConfig, Network};
use crate::train::{run_phase, run_protocol, Protocol, ProtocolKind, Silent, TrainConfig, TrainReport, TrainState};

/// Held-out samples per category in the standard benchmark.
pub const STANDARD_TEST_PER_CATEGORY: usize = 100;

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

/// Fresh network and training RNG for `seed`.
pub fn initial_state(model: &ModelConfig, seed: u64) -> Result<TrainState> {
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(INIT_STREAM);
    let net = Network::new(model.clone(), &mut init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAIN_STREAM);
    Ok(TrainState::new(net, rng))
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub model: ModelConfig,
    pub train_cfg: TrainConfig,
}

impl Benchmark {
    /// K=4, 500/category train, 100/category test, desk-scale model, default schedule.
    pub fn standard(seed: u64) -> Result<Self> {
        let (train, test) = standard_benchmark(seed, STANDARD_TEST_PER_CATEGORY)?;
        Ok(Self {
            seed,
            train,
            test,
            model: ModelConfig::desk(4),
            train_cfg: TrainConfig::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub kind: ProtocolKind,
    pub report: EvalReport,
    /// Test metrics just before joint fine-tuning.
    pub before_joint: EvalReport,
    pub train: TrainReport,
    pub net: Network<f64>,
}

/// Trains one protocol end to end and evaluates on the test split with network categories.
pub fn run_protocol_experiment(b: &Benchmark, kind: ProtocolKind, cfg: &TrainConfig) -> Result<ProtocolRun> {
    let protocol = Protocol::new(kind, cfg);
    let mut state = initial_state(&b.model, b.seed)?;
    let last = protocol.phases.len() - 1;
    let pre = Protocol {
        kind,
        phases: protocol.phases[..last].to_vec(),
    };
    let mut train = run_protocol(&pre, &mut state, &b.train, None, cfg, &mut Silent)?;
    let before_joint = evaluate(&state.net, &b.test, cfg.fusion, CategorySource::Network, 1)?;
    train.records.extend(run_phase(&protocol.phases[last], &mut state, &b.train, None, cfg, &mut Silent)?);
    state.phases_done = protocol.phases.len();
    let report = evaluate(&state.net, &b.test, cfg.fusion, CategorySource::Network, 3)?;
    Ok(ProtocolRun {
        kind,
        report,
        before_joint,
        train,
        net: state.net,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HeadsComparison {
    pub dependent: f64,
    pub independent: f64,
    pub dependent_params: usize,
    pub independent_params: usize,
}

/// Pretraining plus per-category head training, for the dependent and the
/// parameter-matched independent variant; both scored with oracle categories.
pub fn heads_comparison(b: &Benchmark, cfg: &TrainConfig) -> Result<HeadsComparison> {
    let protocol = Protocol::new(ProtocolKind::Balanced, cfg);
    let phases = Protocol {
        kind: ProtocolKind::Balanced,
        phases: protocol.phases[..2].to_vec(),
    };
    let mut out = Vec::new();
    for variant in [HeadVariant::CategoryDependent, HeadVariant::CategoryIndependent] {
        let model = b.model.clone().with_variant(variant);
        let mut state = initial_state(&model, b.seed)?;
        run_protocol(&phases, &mut state, &b.train, None, cfg, &mut Silent)?;
        let r = evaluate(&state.net, &b.test, cfg.fusion, CategorySource::Oracle, 1)?;
        out.push((r.mean_pose_err_deg, state.net.trainable_count("head.")));
    }
    Ok(HeadsComparison {
        dependent: out[0].0,
        independent: out[1].0,
        dependent_params: out[0].1,
        independent_params: out[1].1,
    })
}

/// Full pose-first protocol for each `λ`.
pub fn lambda_sweep(b: &Benchmark, cfg: &TrainConfig, lambdas: &[f64]) -> Result<Vec<(f64, EvalReport)>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let cfg = TrainConfig { lambda, ..cfg.clone() };
            Ok((lambda, run_protocol_experiment(b, ProtocolKind::PoseFirst, &cfg)?.report))
        })
        .collect()
}
