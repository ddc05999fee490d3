//! Finite-difference verification of every backward pass, on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::pose_loss;
use crate::model::{Fusion, HeadVariant, ModelConfig, Network};
use crate::nn::gradcheck::ParamCheck;
use crate::nn::softmax::softmax_backward;
use crate::nn::{
    gradcheck, softmax, softmax_cross_entropy, Activation, BatchNormLayer, BnMode, DenseLayer, GradcheckReport, Gradients,
    ParameterStore, Tensor2,
};
use crate::so3::{exp_map, random_rotation, AxisAngle, Rotation};
use crate::train::{category_objective, joint_objective, oracle_pose_objective, Batch, Objective};

#[derive(Debug, Clone)]
pub struct SelfCheckConfig {
    pub seed: u64,
    pub step: f64,
    pub layer_tol: f64,
    pub loss_tol: f64,
    /// Gradient tensor to corrupt before comparison.
    pub inject_fault: Option<String>,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            step: 1e-5,
            layer_tol: 1e-6,
            loss_tol: 1e-4,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub report: GradcheckReport,
}

#[derive(Debug, Clone)]
pub struct SelfCheckReport {
    pub checks: Vec<Check>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.report.passed())
    }

    /// Failing tensors as `(check, worst coordinate)`.
    pub fn failures(&self) -> Vec<(&str, &ParamCheck)> {
        self.checks
            .iter()
            .flat_map(|c| c.report.failures().map(move |p| (c.name.as_str(), p)))
            .collect()
    }

    pub fn worst(&self) -> Option<(&str, &ParamCheck)> {
        self.checks
            .iter()
            .filter_map(|c| c.report.worst().map(|w| (c.name.as_str(), w)))
            .max_by(|a, b| (a.1.rel_error / tol_of(self, a.0)).total_cmp(&(b.1.rel_error / tol_of(self, b.0))))
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<28} {:>7} {:>11} {:>9}  worst coordinate\n", "check", "coords", "max rel", "tol");
        for c in &self.checks {
            let r = &c.report;
            let worst = r
                .worst()
                .map(|w| format!("{}[{}] analytic {:.6e} numeric {:.6e}", w.name, w.index, w.analytic, w.numeric))
                .unwrap_or_default();
            out.push_str(&format!(
                "{:<28} {:>7} {:>11.3e} {:>9.0e}  {}{}\n",
                c.name,
                r.coordinates,
                r.max_rel_error(),
                r.tolerance,
                worst,
                if r.passed() { "" } else { "  FAIL" }
            ));
        }
        out
    }
}

fn tol_of(report: &SelfCheckReport, name: &str) -> f64 {
    report
        .checks
        .iter()
        .find(|c| c.name == name)
        .map_or(1.0, |c| c.report.tolerance)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor2<f64> {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Values in `±[0.1, 1.5]`, away from the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2<f64> {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.5);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
    .expect("sized")
}

fn dot(a: &Tensor2<f64>, b: &Tensor2<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

struct Runner<'a> {
    cfg: &'a SelfCheckConfig,
    checks: Vec<Check>,
}

impl Runner<'_> {
    fn run<F>(&mut self, name: &str, store: &ParameterStore<f64>, mut grads: Gradients<f64>, tol: f64, f: F)
    where
        F: FnMut(&ParameterStore<f64>) -> f64,
    {
        if let Some(fault) = &self.cfg.inject_fault {
            if let Some(g) = grads.get_mut(fault) {
                g[0] += 0.1 * g[0].abs().max(1.0);
            }
        }
        let report = gradcheck(f, store, &grads, self.cfg.step, tol);
        self.checks.push(Check {
            name: name.to_string(),
            report,
        });
    }
}

fn store_of(entries: &[(&str, &Tensor2<f64>)]) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (name, t) in entries {
        s.insert(*name, vec![t.rows(), t.cols()], t.data().to_vec()).expect("fresh names");
    }
    s
}

fn tensor(s: &ParameterStore<f64>, name: &str) -> Tensor2<f64> {
    let p = s.get(name).expect("known tensor");
    Tensor2::from_vec(p.shape[0], p.shape[1], p.values.clone()).expect("sized")
}

fn layer_checks(r: &mut Runner<'_>, rng: &mut ChaCha8Rng) -> Result<()> {
    let tol = r.cfg.layer_tol;
    let (n, din, dout) = (5, 4, 3);

    let x = random_tensor(rng, n, din, -1.0, 1.0);
    let w = random_tensor(rng, dout, din, -1.0, 1.0);
    let b = random_tensor(rng, 1, dout, -1.0, 1.0);
    let c = random_tensor(rng, n, dout, -1.0, 1.0);
    let store = store_of(&[("dense.x", &x), ("dense.weight", &w), ("dense.bias", &b)]);
    let dense_out = |s: &ParameterStore<f64>| -> f64 {
        let layer = DenseLayer::new(s.values("dense.weight"), Some(s.values("dense.bias")), din, dout).expect("sized");
        dot(&layer.forward(&tensor(s, "dense.x")).expect("sized"), &c)
    };
    let g = DenseLayer::new(w.data(), Some(b.data()), din, dout)?.backward(&x, &c)?;
    let mut grads = Gradients::new();
    grads.accumulate("dense.x", g.input.data());
    grads.accumulate("dense.weight", &g.weight);
    grads.accumulate("dense.bias", g.bias.as_deref().unwrap_or_default());
    r.run("dense", &store, grads, tol, dense_out);

    for mode in [BnMode::Train, BnMode::Eval] {
        let x = random_tensor(rng, n, dout, -2.0, 2.0);
        let scale = random_tensor(rng, 1, dout, 0.5, 1.5);
        let shift = random_tensor(rng, 1, dout, -0.5, 0.5);
        let mean: Vec<f64> = (0..dout).map(|_| rng.random_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..dout).map(|_| rng.random_range(0.5..2.0)).collect();
        let c = random_tensor(rng, n, dout, -1.0, 1.0);
        let store = store_of(&[("bn.x", &x), ("bn.scale", &scale), ("bn.shift", &shift)]);
        let layer = |s: &'_ ParameterStore<f64>| -> (Tensor2<f64>, crate::nn::BnCache<f64>) {
            let l = BatchNormLayer {
                scale: s.values("bn.scale"),
                shift: s.values("bn.shift"),
                running_mean: &mean,
                running_var: &var,
                momentum: 0.9,
                eps: 1e-5,
                mode,
            };
            l.forward(&tensor(s, "bn.x")).expect("sized")
        };
        let (_, cache) = layer(&store);
        let l = BatchNormLayer {
            scale: scale.data(),
            shift: shift.data(),
            running_mean: &mean,
            running_var: &var,
            momentum: 0.9,
            eps: 1e-5,
            mode,
        };
        let g = l.backward(&cache, &c)?;
        let mut grads = Gradients::new();
        grads.accumulate("bn.x", g.input.data());
        grads.accumulate("bn.scale", &g.scale);
        grads.accumulate("bn.shift", &g.shift);
        let name = if mode == BnMode::Train { "batchnorm (train)" } else { "batchnorm (eval)" };
        r.run(name, &store, grads, tol, |s| dot(&layer(s).0, &c));
    }

    for (name, act) in [("relu", Activation::Relu), ("pi_tanh", Activation::PiTanh)] {
        let x = off_kink(rng, n, dout);
        let c = random_tensor(rng, n, dout, -1.0, 1.0);
        let key = format!("{name}.x");
        let store = store_of(&[(key.as_str(), &x)]);
        let mut grads = Gradients::new();
        grads.accumulate(&key, act.backward(&x, &c)?.data());
        r.run(name, &store, grads, tol, |s| dot(&act.forward(&tensor(s, &key)), &c));
    }

    let z = random_tensor(rng, n, dout, -3.0, 3.0);
    let c = random_tensor(rng, n, dout, -1.0, 1.0);
    let store = store_of(&[("softmax.z", &z)]);
    let mut grads = Gradients::new();
    grads.accumulate("softmax.z", softmax_backward(&softmax(&z), &c)?.data());
    r.run("softmax", &store, grads, tol, |s| dot(&softmax(&tensor(s, "softmax.z")), &c));

    let targets: Vec<usize> = (0..n).map(|i| i % dout).collect();
    let store = store_of(&[("cross_entropy.z", &z)]);
    let mut grads = Gradients::new();
    grads.accumulate("cross_entropy.z", softmax_cross_entropy(&z, &targets).1.data());
    r.run("softmax cross-entropy", &store, grads, tol, |s| {
        softmax_cross_entropy(&tensor(s, "cross_entropy.z"), &targets).0
    });
    Ok(())
}

/// Ground-truth rotations at relative angles in `[0.2, 2.8]` from `exp(y)`.
fn targets_near(rng: &mut ChaCha8Rng, ys: &Tensor2<f64>) -> Result<Vec<Rotation<f64>>> {
    (0..ys.rows())
        .map(|i| {
            let r = exp_map(&AxisAngle::new([ys.get(i, 0), ys.get(i, 1), ys.get(i, 2)]));
            loop {
                let d = random_rotation::<f64, _>(rng, 2.8)?;
                if crate::so3::log_map(&d)?.angle() >= 0.2 {
                    return Ok(r.compose(&d));
                }
            }
        })
        .collect()
}

fn pose_loss_check(r: &mut Runner<'_>, rng: &mut ChaCha8Rng) -> Result<()> {
    let ys = random_tensor(rng, 6, 3, -1.5, 1.5);
    let rots = targets_near(rng, &ys)?;
    let total = |s: &ParameterStore<f64>| -> (f64, Vec<f64>) {
        let y = s.values("pose.y");
        let mut g = Vec::with_capacity(y.len());
        let mut l = 0.0;
        for (i, r) in rots.iter().enumerate() {
            let (li, gi) = pose_loss(&[y[3 * i], y[3 * i + 1], y[3 * i + 2]], r);
            l += li;
            g.extend_from_slice(&gi);
        }
        (l, g)
    };
    let store = store_of(&[("pose.y", &ys)]);
    let mut grads = Gradients::new();
    grads.accumulate("pose.y", &total(&store).1);
    r.run("geodesic pose loss", &store, grads, r.cfg.loss_tol, |s| total(s).0);
    Ok(())
}

/// The tiny model used by the composed-objective checks (K=3, d=8).
pub fn tiny_model(variant: HeadVariant) -> ModelConfig {
    ModelConfig {
        num_categories: 3,
        input_dim: 5,
        feature_hidden: vec![7],
        feature_dim: 8,
        category_hidden: vec![6],
        head_hidden: [6, 5],
        variant,
        independent_hidden: 9,
        bn_momentum: 0.9,
        bn_eps: 1e-5,
    }
}

fn objective_checks(r: &mut Runner<'_>, rng: &mut ChaCha8Rng) -> Result<()> {
    let n = 9;
    let x = random_tensor(rng, n, 5, -1.0, 1.0);
    let cats: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let ys = random_tensor(rng, n, 3, -0.3, 0.3);
    let rots = targets_near(rng, &ys)?;
    let batch = Batch {
        x: &x,
        categories: &cats,
        rotations: &rots,
    };
    type Obj<'b> = Box<dyn Fn(&Network<f64>) -> Result<Objective<f64>> + 'b>;
    for variant in [HeadVariant::CategoryDependent, HeadVariant::CategoryIndependent] {
        let cfg = tiny_model(variant);
        let mut net = Network::new(cfg.clone(), rng)?;
        // Nonzero biases keep pre-activations off the ReLU kink.
        let offsets: Vec<String> = net
            .params
            .names()
            .filter(|n| n.ends_with(".bias") || n.ends_with(".shift"))
            .map(String::from)
            .collect();
        for name in offsets {
            net.params.values_mut(&name).iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let tag = match variant {
            HeadVariant::CategoryDependent => "dependent",
            HeadVariant::CategoryIndependent => "independent",
        };
        let objectives: Vec<(String, Obj<'_>)> = vec![
            (format!("category objective ({tag})"), Box::new(|net: &Network<f64>| category_objective(net, &batch, true))),
            (
                format!("oracle pose objective ({tag})"),
                Box::new(|net: &Network<f64>| oracle_pose_objective(net, &batch, true, BnMode::Train)),
            ),
            (
                format!("joint weighted ({tag})"),
                Box::new(|net: &Network<f64>| joint_objective(net, &batch, Fusion::Weighted, 0.1, BnMode::Train)),
            ),
            (
                format!("joint top-1 ({tag})"),
                Box::new(|net: &Network<f64>| joint_objective(net, &batch, Fusion::Top1, 0.1, BnMode::Train)),
            ),
        ];
        for (name, f) in objectives {
            let grads = f(&net)?.grads;
            let cfg = cfg.clone();
            r.run(&name, &net.params, grads, r.cfg.loss_tol, |s| {
                let probe = Network::from_parts(cfg.clone(), s.clone()).expect("same shapes");
                f(&probe).expect("valid batch").total
            });
        }
    }
    Ok(())
}

/// Every layer, both losses and the composed training objectives.
pub fn run_selfcheck(cfg: &SelfCheckConfig) -> Result<SelfCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut r = Runner { cfg, checks: Vec::new() };
    layer_checks(&mut r, &mut rng)?;
    pose_loss_check(&mut r, &mut rng)?;
    objective_checks(&mut r, &mut rng)?;
    Ok(SelfCheckReport { checks: r.checks })
}
