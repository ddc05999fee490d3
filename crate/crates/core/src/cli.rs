//! The `catpose` command line.
//!
//! Exit codes: 0 success, 1 failed ablation verdict, 2 configuration or shape
//! error, 3 I/O or file-format error, 4 non-finite loss, 5 gradient check failure.

use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{parse_override, RunConfig};
use crate::data::{save_csv, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, CategorySource, EvalReport};
use crate::experiments::{heads_comparison, initial_state, lambda_sweep, run_protocol_experiment, Benchmark};
use crate::model::Fusion;
use crate::selfcheck::{run_selfcheck, SelfCheckConfig};
use crate::train::{run_protocol, EpochRecord, Observer, Phase, Protocol, ProtocolKind, TrainState};

#[derive(Debug, Parser)]
#[command(name = "catpose", version, about = "Joint object-category and 3D pose estimation on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs_joint=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Suite {
    Heads,
    Protocol,
    Lambda,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset split as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Run a training protocol, writing checkpoints and metrics.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        fusion: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a phase checkpoint of the same run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV split to evaluate; defaults to the configured held-out split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        fusion: Option<String>,
        /// Replace the category network with the ground-truth one-hot distribution.
        #[arg(long)]
        oracle_category: bool,
        #[arg(long, default_value_t = 1)]
        topk: usize,
        /// JSON report path; defaults to the checkpoint path with `.eval.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired experiments under a shared seed with an ordering verdict.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        suite: Suite,
    },
    /// Finite-difference check of every backward pass on a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Schema { .. } | Error::CorruptCheckpoint(_) | Error::VersionMismatch { .. } => 3,
        Error::NonFiniteLoss { .. } => 4,
        _ => 2,
    }
}

fn load_config(common: &Common, extra: Vec<(String, String)>) -> Result<RunConfig> {
    let mut overrides = common.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(seed) = common.seed {
        overrides.push(("run.seed".into(), seed.to_string()));
    }
    overrides.extend(extra);
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData { common, out, split } => {
            let cfg = load_config(&common, Vec::new())?;
            if !cfg.data.train.is_empty() {
                return Err(Error::InvalidConfig("gen-data needs the synthetic generator; data.train is set".into()));
            }
            let (train, test) = cfg.datasets()?;
            let ds = match split {
                Split::Train => train,
                Split::Test => test.ok_or_else(|| Error::InvalidConfig("data.test_per_category is 0".into()))?,
            };
            save_csv(&ds, &out)?;
            let counts = ds.category_counts();
            println!("wrote {} samples to {}", ds.len(), out.display());
            for (c, n) in counts.iter().enumerate() {
                println!("  category {c}: {n}");
            }
            Ok(0)
        }
        Command::Train {
            common,
            protocol,
            fusion,
            lambda,
            out,
            resume,
        } => {
            let mut extra = Vec::new();
            if let Some(p) = protocol {
                extra.push(("train.protocol".to_string(), quoted(&p)));
            }
            if let Some(f) = fusion {
                extra.push(("train.fusion".to_string(), quoted(&f)));
            }
            if let Some(l) = lambda {
                extra.push(("train.lambda".to_string(), format!("{l:?}")));
            }
            if let Some(o) = out {
                extra.push(("run.out".to_string(), quoted(&o.to_string_lossy())));
            }
            let cfg = load_config(&common, extra)?;
            train(&cfg, resume.as_deref())
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            fusion,
            oracle_category,
            topk,
            out,
        } => {
            let mut extra = Vec::new();
            if let Some(f) = fusion {
                extra.push(("train.fusion".to_string(), quoted(&f)));
            }
            let cfg = load_config(&common, extra)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let k = ckpt.model.num_categories;
            let ds = match data {
                Some(path) => crate::data::load_csv(&path)?.with_num_categories(k)?,
                None => cfg
                    .datasets()?
                    .1
                    .ok_or_else(|| Error::InvalidConfig("no --data given and no held-out split configured".into()))?
                    .with_num_categories(k)?,
            };
            let net = ckpt.into_state()?.net;
            let source = if oracle_category {
                CategorySource::Oracle
            } else {
                CategorySource::Network
            };
            let report = evaluate(&net, &ds, cfg.fusion()?, source, topk)?;
            print!("{}", report.render(topk));
            let path = out.unwrap_or_else(|| checkpoint.with_extension("eval.json"));
            write_json(&path, &report)?;
            println!("report written to {}", path.display());
            Ok(0)
        }
        Command::Ablate { common, suite } => {
            let cfg = load_config(&common, Vec::new())?;
            ablate(&cfg, suite)
        }
        Command::Gradcheck { common } => {
            let cfg = load_config(&common, Vec::new())?;
            let g = &cfg.gradcheck;
            let report = run_selfcheck(&SelfCheckConfig {
                seed: g.seed,
                step: g.step,
                layer_tol: g.layer_tol,
                loss_tol: g.loss_tol,
                inject_fault: (!g.inject_fault.is_empty()).then(|| g.inject_fault.clone()),
            })?;
            print!("{}", report.render());
            if let Some((check, w)) = report.worst() {
                println!("worst coordinate: {check}: {}[{}] relative error {:.3e}", w.name, w.index, w.rel_error);
            }
            if report.passed() {
                println!("gradcheck passed");
                Ok(0)
            } else {
                eprintln!("gradcheck failed for:");
                for (check, p) in report.failures() {
                    eprintln!("  {check}: {}[{}] relative error {:.3e}", p.name, p.index, p.rel_error);
                }
                Ok(5)
            }
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Streams epoch records to metrics.jsonl and checkpoints every finished phase.
struct RunObserver {
    dir: PathBuf,
    metrics: File,
    metrics_path: PathBuf,
}

impl Observer for RunObserver {
    fn phase_start(&mut self, index: usize, total: usize, phase: &Phase) -> Result<()> {
        println!("== phase {}/{}: {} ({} epochs, lr {:e})", index + 1, total, phase.name, phase.epochs, phase.lr);
        Ok(())
    }

    fn epoch_end(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.metrics, "{line}").map_err(|e| Error::io(&self.metrics_path, e))?;
        self.metrics.flush().map_err(|e| Error::io(&self.metrics_path, e))?;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        log::info!(
            "epoch {:>3} {:<10} loss_pose {} loss_cat {} val_pose_err {} val_cat_acc {}",
            record.epoch,
            record.phase,
            fmt(record.loss_pose),
            fmt(record.loss_cat),
            fmt(record.val_pose_err_deg),
            fmt(record.val_cat_acc)
        );
        Ok(())
    }

    fn phase_end(&mut self, index: usize, phase: &Phase, state: &TrainState) -> Result<()> {
        let path = self.dir.join(phase_checkpoint_name(index, phase.name));
        save_checkpoint(&path, &Checkpoint::from_state(state))?;
        log::info!("checkpoint {}", path.display());
        Ok(())
    }
}

pub fn phase_checkpoint_name(index: usize, name: &str) -> String {
    format!("phase-{}-{}.pfck", index + 1, name)
}

/// Keeps the first `epochs` lines of an existing metrics log.
fn truncate_metrics(path: &Path, epochs: usize) -> Result<()> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let kept: String = text.lines().take(epochs).map(|l| format!("{l}\n")).collect();
    if kept.lines().count() != epochs {
        return Err(Error::InvalidConfig(format!(
            "{} holds fewer than the {epochs} epochs recorded in the checkpoint",
            path.display()
        )));
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<i32> {
    let (train_ds, test_ds) = cfg.datasets()?;
    let model = cfg.model_config(train_ds.num_categories, train_ds.input_dim)?;
    let train_cfg = cfg.train_config()?;
    let kind = cfg.protocol()?;
    let protocol = Protocol::new(kind, &train_cfg);
    let dir = cfg.run.out.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let metrics_path = dir.join("metrics.jsonl");
    let mut state = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model != model {
                return Err(Error::InvalidConfig(format!(
                    "{} was written for a different model configuration",
                    path.display()
                )));
            }
            if ckpt.phases_done > protocol.phases.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} is past the end of the {kind} protocol",
                    path.display()
                )));
            }
            truncate_metrics(&metrics_path, ckpt.epochs_done)?;
            println!("resuming after phase {} (epoch {})", ckpt.phases_done, ckpt.epochs_done);
            ckpt.into_state()?
        }
        None => {
            std::fs::write(&metrics_path, "").map_err(|e| Error::io(&metrics_path, e))?;
            initial_state(&model, cfg.run.seed)?
        }
    };
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(dir.join("config.toml"), e))?;
    let metrics = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut observer = RunObserver {
        dir: dir.clone(),
        metrics,
        metrics_path,
    };
    println!("protocol {kind}: {} phases, {} training samples", protocol.phases.len(), train_ds.len());
    run_protocol(&protocol, &mut state, &train_ds, test_ds.as_ref(), &train_cfg, &mut observer)?;
    let final_path = dir.join("final.pfck");
    save_checkpoint(&final_path, &Checkpoint::from_state(&state))?;
    println!("final checkpoint {}", final_path.display());
    if let Some(test) = &test_ds {
        let report = evaluate(&state.net, test, train_cfg.fusion, CategorySource::Network, 3.min(model.num_categories))?;
        print!("{}", report.render(3));
        write_json(&dir.join("eval.json"), &report)?;
    }
    Ok(0)
}

fn benchmark(cfg: &RunConfig) -> Result<Benchmark> {
    let (train, test) = cfg.datasets()?;
    let test = test.ok_or_else(|| Error::InvalidConfig("ablations need a held-out split".into()))?;
    let model = cfg.model_config(train.num_categories, train.input_dim)?;
    Ok(Benchmark {
        seed: cfg.run.seed,
        train,
        test,
        model,
        train_cfg: cfg.train_config()?,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "does not hold"
    }
}

fn ablate(cfg: &RunConfig, suite: Suite) -> Result<i32> {
    let b = benchmark(cfg)?;
    let tc = &b.train_cfg;
    match suite {
        Suite::Heads => {
            let h = heads_comparison(&b, tc)?;
            println!("{:<24} {:>10} {:>14}", "pose heads", "params", "pose-err (deg)");
            println!("{:<24} {:>10} {:>14.3}", "category-dependent", h.dependent_params, h.dependent);
            println!("{:<24} {:>10} {:>14.3}", "category-independent", h.independent_params, h.independent);
            let ok = h.dependent < h.independent;
            println!("verdict: dependent < independent {}", verdict(ok));
            Ok(if ok { 0 } else { 1 })
        }
        Suite::Protocol => {
            let runs = [ProtocolKind::Balanced, ProtocolKind::PoseFirst]
                .into_iter()
                .map(|k| run_protocol_experiment(&b, k, tc))
                .collect::<Result<Vec<_>>>()?;
            println!("{:<12} {:>18} {:>18} {:>10}", "protocol", "pose-err pre-joint", "pose-err final", "cat-acc");
            for r in &runs {
                println!(
                    "{:<12} {:>18.3} {:>18.3} {:>10.4}",
                    r.kind.to_string(),
                    r.before_joint.mean_pose_err_deg,
                    r.report.mean_pose_err_deg,
                    r.report.cat_acc_overall
                );
            }
            let ok = runs[1].report.mean_pose_err_deg <= runs[0].report.mean_pose_err_deg;
            println!("verdict: pose-first <= balanced {}", verdict(ok));
            let improved = runs[0].report.mean_pose_err_deg < runs[0].before_joint.mean_pose_err_deg;
            println!("verdict: joint fine-tuning improves balanced {}", verdict(improved));
            Ok(if ok { 0 } else { 1 })
        }
        Suite::Lambda => {
            let rows = lambda_sweep(&b, tc, &[0.1, 1.0])?;
            println!("{:<8} {:>14} {:>10}", "lambda", "pose-err (deg)", "cat-acc");
            for (l, r) in &rows {
                println!("{:<8} {:>14.3} {:>10.4}", l, r.mean_pose_err_deg, r.cat_acc_overall);
            }
            let ok = rows[0].1.mean_pose_err_deg <= rows[1].1.mean_pose_err_deg;
            println!("verdict: lambda 0.1 pose-err <= lambda 1 pose-err {} (informational)", verdict(ok));
            Ok(0)
        }
    }
}

/// Loads a dataset and a checkpoint and evaluates them; used by tests.
pub fn evaluate_checkpoint(path: &Path, data: &Dataset, fusion: Fusion, source: CategorySource, max_k: usize) -> Result<EvalReport> {
    let net = load_checkpoint(path)?.into_state()?.net;
    evaluate(&net, data, fusion, source, max_k)
}
