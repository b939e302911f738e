//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line. Expensive artifacts (datasets, trained modules) are
//! built once and shared between criteria.
//!
//! Absolute paper numbers come from physical hardware; the gate verifies
//! the property suites exactly and the experimental results as trends
//! between the two synthetic render domains.

use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simreach::bench::{
    box_stats, eval_perception, eval_reach, held_out_test_set, EvalConfig, PerceptionSource,
    Scenario, SUCCESS_CM,
};
use simreach::numgrad::{Gradients, Graph, Params, Tensor};
use simreach::policynet::{
    ArchProfile, CombinedNetwork, ControlModule, Discriminator, PerceptionModule,
};
use simreach::simworld::{
    make_control_dataset, make_perception_dataset, ControlDataset, KinematicChain,
    PerceptionDataset, RenderProfile, TrajectoryConfig,
};
use simreach::transfer::{
    adapt_adt, adapt_supervised, finetune_e2e, loss_confusion, loss_control, loss_discriminator,
    loss_encoder_adv, loss_perception_sup, mix_perception_gradients, pretrain_perception,
    train_control, AdaptConfig, AdtConfig, AdtOutcome, ControlTrainConfig, E2EConfig,
    E2eDatasets, E2eVariant, PiController, PretrainConfig, GAMMA_MAX, INTEGRAL_CLAMP,
};

// Training budgets, scaled so the whole gate runs on one CPU core.
const PRETRAIN_EPOCHS: usize = 30;
const ADAPT_EPOCHS: usize = 40;
const ADT_STEPS: usize = 1500;
const E2E_STEPS: usize = 600;
const CONTROL_EPOCHS: usize = 20;
const EVAL_TRIALS: usize = 45;

fn gate(criterion: usize, what: &str, ok: bool) {
    println!(
        "acceptance criterion {criterion} ({what}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({what}) failed");
}

fn desk() -> ArchProfile {
    ArchProfile::desk()
}

fn median(values: &[f64]) -> f64 {
    box_stats(values).unwrap().median
}

// ---------------------------------------------------------------------------
// shared artifacts

static SIM_TRAIN: LazyLock<PerceptionDataset> = LazyLock::new(|| {
    make_perception_dataset(101, &RenderProfile::sim(64), 3000, true).unwrap()
});

static SIM_TEST: LazyLock<PerceptionDataset> = LazyLock::new(|| {
    make_perception_dataset(202, &RenderProfile::sim(64), 144, true).unwrap()
});

static REAL_TEST: LazyLock<PerceptionDataset> = LazyLock::new(|| held_out_test_set(64).unwrap());

static REAL_LABELED: LazyLock<PerceptionDataset> = LazyLock::new(|| {
    make_perception_dataset(303, &RenderProfile::pseudo_real(64), 186, true).unwrap()
});

static REAL_UNLABELED: LazyLock<PerceptionDataset> = LazyLock::new(|| {
    make_perception_dataset(404, &RenderProfile::pseudo_real(64), 186, false).unwrap()
});

fn first_n(ds: &PerceptionDataset, n: usize) -> PerceptionDataset {
    let mut out = ds.clone();
    out.samples.truncate(n);
    out
}

static SOURCE: LazyLock<PerceptionModule> = LazyLock::new(|| {
    pretrain_perception(
        &desk(),
        &SIM_TRAIN,
        &PretrainConfig {
            epochs: PRETRAIN_EPOCHS,
            seed: 7,
            ..PretrainConfig::default()
        },
    )
    .unwrap()
    .module
});

fn supervised(labels: usize) -> PerceptionModule {
    adapt_supervised(
        &SOURCE,
        &SIM_TRAIN,
        &first_n(&REAL_LABELED, labels),
        &AdaptConfig {
            epochs: ADAPT_EPOCHS,
            seed: 8,
            ..AdaptConfig::default()
        },
    )
    .unwrap()
}

static SUP_186: LazyLock<PerceptionModule> = LazyLock::new(|| supervised(186));
static SUP_48: LazyLock<PerceptionModule> = LazyLock::new(|| supervised(48));

fn adt_run(labels: usize, seed: u64) -> AdtOutcome {
    let labeled = if labels == 0 {
        None
    } else {
        Some(first_n(&REAL_LABELED, labels))
    };
    adapt_adt(
        &SOURCE,
        &SIM_TRAIN,
        labeled.as_ref(),
        &REAL_UNLABELED,
        &AdtConfig {
            steps: ADT_STEPS,
            seed,
            ..AdtConfig::default()
        },
    )
    .unwrap()
}

static ADT_93: LazyLock<AdtOutcome> = LazyLock::new(|| adt_run(93, 0));

static CONTROL_333: LazyLock<(ControlDataset, ControlModule)> = LazyLock::new(|| {
    let chain = KinematicChain::default_seven_dof();
    let ds = make_control_dataset(
        505,
        &RenderProfile::sim(64),
        &chain,
        333,
        &TrajectoryConfig::default(),
    )
    .unwrap();
    let module = train_control(
        &desk(),
        &ds,
        &ControlTrainConfig {
            epochs: CONTROL_EPOCHS,
            seed: 9,
            ..ControlTrainConfig::default()
        },
    )
    .unwrap()
    .module;
    (ds, module)
});

fn reach_eval(
    perception: &PerceptionSource,
    control: &ControlModule,
    scenario: Scenario,
) -> simreach::bench::EvalOutcome {
    let chain = KinematicChain::default_seven_dof();
    eval_reach(
        perception,
        control,
        &chain,
        &EvalConfig {
            scenario,
            n_trials: EVAL_TRIALS,
            seed: 77,
            resolution: 64,
            ..EvalConfig::default()
        },
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness

const H: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
// whole-module checks tolerate finite-difference noise from the smaller
// fallback step used near activation kinks
const TOL_MODULE: f64 = 1e-3;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Finite-difference check of randomly chosen parameter elements against
/// the analytic gradient; returns the worst relative error seen.
fn param_gradcheck(
    params: &Params,
    grads: &Gradients,
    loss: &dyn Fn(&Params) -> f64,
    rng: &mut ChaCha8Rng,
    checks: usize,
) -> f64 {
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let name = &names[rng.gen_range(0..names.len())];
        let i = rng.gen_range(0..params.get(name).unwrap().numel());
        let eval = |delta: f64| {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[i] += delta;
            loss(&p)
        };
        let analytic = grads.get(name.as_str()).map(|g| g.data()[i]).unwrap_or(0.0);
        let rel_at = |h: f64| rel_err(analytic, (eval(h) - eval(-h)) / (2.0 * h));
        let mut rel = rel_at(H);
        if rel >= TOL_MODULE {
            // a step of H can cross a relu/maxpool kink, which inflates the
            // central difference by O(1) no matter how correct the gradient
            // is; a genuinely wrong gradient stays wrong as h shrinks
            rel = rel_at(H * 1e-2);
        }
        worst = worst.max(rel);
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Kink-free draw for relu/maxpool paths: magnitudes bounded away from 0.
fn rand_off_kink(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Gradcheck a single-op loss `f(x) -> scalar` over every element of x.
fn op_gradcheck(x0: &Tensor, f: &dyn Fn(&mut Graph, simreach::numgrad::NodeId) -> simreach::numgrad::NodeId) -> f64 {
    let mut g = Graph::new();
    let x = g.param("x", x0.clone());
    let loss = f(&mut g, x);
    let analytic = g.backward(loss).unwrap().get("x").unwrap().clone();
    let eval = |t: &Tensor| {
        let mut g = Graph::new();
        let x = g.leaf(t.clone());
        let loss = f(&mut g, x);
        g.value(loss).item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..x0.numel() {
        let mut tp = x0.clone();
        tp.data_mut()[i] += H;
        let mut tm = x0.clone();
        tm.data_mut()[i] -= H;
        let numeric = (eval(&tp) - eval(&tm)) / (2.0 * H);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

fn op_sweep(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    {
        // conv2d w.r.t. input, weights and bias via param-side checks
        let x = rand_off_kink(&mut rng, vec![1, 4, 4, 2]);
        let w = rand_tensor(&mut rng, vec![3, 3, 2, 3], -0.6, 0.6);
        let b = rand_tensor(&mut rng, vec![3], -0.2, 0.2);
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let w = g.leaf(w.clone());
            let b = g.leaf(b.clone());
            let c = g.conv2d(x, w, b).unwrap();
            g.mean_all(c)
        }));
        let xf = x.clone();
        worst = worst.max(op_gradcheck(&w, &|g, w| {
            let x = g.leaf(xf.clone());
            let b = g.leaf(b.clone());
            let c = g.conv2d(x, w, b).unwrap();
            g.mean_all(c)
        }));
    }
    {
        let x = rand_off_kink(&mut rng, vec![1, 4, 4, 2]);
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let p = g.maxpool2(x).unwrap();
            let r = g.relu(p);
            g.sum_all(r)
        }));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 5], -2.0, 2.0);
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let s = g.sigmoid(x);
            g.mean_all(s)
        }));
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let s = g.softmax(x).unwrap();
            let c = g.select_col(s, 1).unwrap();
            let l = g.log(c);
            g.mean_all(l)
        }));
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let s = g.softmax(x).unwrap();
            g.nll(s, 2).unwrap()
        }));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
        let w = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![4], -0.5, 0.5);
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let w = g.leaf(w.clone());
            let b = g.leaf(b.clone());
            let y = g.linear(x, w, b).unwrap();
            g.sum_all(y)
        }));
        let xf = x.clone();
        worst = worst.max(op_gradcheck(&w, &|g, w| {
            let x = g.leaf(xf.clone());
            let b = g.leaf(b.clone());
            let y = g.linear(x, w, b).unwrap();
            g.mean_all(y)
        }));
    }
    {
        let x = rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
        let other = rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0);
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let o = g.leaf(other.clone());
            let a = g.add(x, o).unwrap();
            let s = g.sub(a, x).unwrap();
            let m = g.mul(s, x).unwrap();
            let f = g.affine(m, 1.7, -0.3);
            g.mean_all(f)
        }));
        // concat, reshape and half_mse
        worst = worst.max(op_gradcheck(&x, &|g, x| {
            let o = g.leaf(other.clone());
            let c = g.concat(x, o).unwrap();
            let r = g.reshape(c, vec![3, 4]).unwrap();
            let t = g.leaf(Tensor::new(vec![3, 4], vec![0.1; 12]).unwrap());
            g.half_mse(r, t).unwrap()
        }));
        let pos = rand_tensor(&mut rng, vec![2, 3], 0.2, 2.0);
        worst = worst.max(op_gradcheck(&pos, &|g, x| {
            let l = g.log(x);
            g.sum_all(l)
        }));
    }
    worst
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;

    // every op, 20 seeds
    for seed in 0..20 {
        worst = worst.max(op_sweep(seed));
    }
    eprintln!("  worst after op sweep: {worst:.3e}");
    let worst_ops = worst;
    let mut worst = 0.0f64;

    // full desk perception module
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let arch = desk();
        let module = PerceptionModule::new(&arch, "p", &mut rng).unwrap();
        let images = rand_off_kink(&mut rng, vec![1, 64, 64, 3]);
        let labels = rand_tensor(&mut rng, vec![1, 3], 0.0, 1.0);
        let loss = |params: &Params| {
            let m = PerceptionModule {
                arch: arch.clone(),
                prefix: "p".to_string(),
                params: params.clone(),
            };
            let mut g = Graph::new();
            let x = g.leaf(images.clone());
            let out = m.forward(&mut g, x).unwrap();
            let y = g.leaf(labels.clone());
            let l = loss_perception_sup(&mut g, out.pred, y).unwrap();
            g.value(l).item()
        };
        let grads = {
            let mut g = Graph::new();
            let x = g.leaf(images.clone());
            let out = module.forward(&mut g, x).unwrap();
            let y = g.leaf(labels.clone());
            let l = loss_perception_sup(&mut g, out.pred, y).unwrap();
            g.backward(l).unwrap()
        };
        let w = param_gradcheck(&module.params, &grads, &loss, &mut rng, 3);
        if w > TOL_MODULE {
            eprintln!("  perception seed {seed}: worst {w:.3e}");
        }
        worst = worst.max(w);
    }
    eprintln!("  worst after perception: {worst:.3e}");

    // control module and discriminator
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let arch = desk();
        let control = ControlModule::new(&arch, "c", &mut rng).unwrap();
        let theta = rand_tensor(&mut rng, vec![2, 10], 0.05, 0.95);
        let target = rand_tensor(&mut rng, vec![2, 7], -0.4, 0.4);
        let loss = |params: &Params| {
            let m = ControlModule {
                arch: arch.clone(),
                prefix: "c".to_string(),
                params: params.clone(),
            };
            let mut g = Graph::new();
            let out = m.forward(&mut g, &theta).unwrap();
            let t = g.leaf(target.clone());
            let l = loss_control(&mut g, out, t).unwrap();
            g.value(l).item()
        };
        let grads = {
            let mut g = Graph::new();
            let out = control.forward(&mut g, &theta).unwrap();
            let t = g.leaf(target.clone());
            let l = loss_control(&mut g, out, t).unwrap();
            g.backward(l).unwrap()
        };
        let w = param_gradcheck(&control.params, &grads, &loss, &mut rng, 4);
        if w > TOL_MODULE {
            eprintln!("  control seed {seed}: worst {w:.3e}");
        }
        worst = worst.max(w);

        let disc = Discriminator::new(&arch, "d", &mut rng).unwrap();
        let f = arch.feature_dim();
        let src = rand_tensor(&mut rng, vec![2, f], -0.5, 0.5);
        let tgt = rand_tensor(&mut rng, vec![2, f], -0.5, 0.5);
        let dloss = |params: &Params| {
            let m = Discriminator {
                arch: arch.clone(),
                prefix: "d".to_string(),
                params: params.clone(),
            };
            let mut g = Graph::new();
            let s = g.leaf(src.clone());
            let t = g.leaf(tgt.clone());
            let l = loss_discriminator(&mut g, &m, s, t).unwrap();
            g.value(l).item()
        };
        let dgrads = {
            let mut g = Graph::new();
            let s = g.leaf(src.clone());
            let t = g.leaf(tgt.clone());
            let l = loss_discriminator(&mut g, &disc, s, t).unwrap();
            g.backward(l).unwrap()
        };
        let w = param_gradcheck(&disc.params, &dgrads, &dloss, &mut rng, 4);
        if w > TOL_MODULE {
            eprintln!("  discriminator seed {seed}: worst {w:.3e}");
        }
        worst = worst.max(w);
    }

    let elapsed = start.elapsed();
    gate(
        1,
        "gradient correctness",
        worst_ops < GRAD_TOL && worst < TOL_MODULE && elapsed.as_secs() < 60,
    );
}

// ---------------------------------------------------------------------------
// criterion 2: loss oracles

/// Independent plain-loop evaluation of the discriminator's p_sim column.
fn oracle_p_sim(d: &Discriminator, features: &[Vec<f64>]) -> Vec<f64> {
    let arch = &d.arch;
    let layers = arch.discriminator_hidden.len() + 1;
    features
        .iter()
        .map(|row| {
            let mut h = row.clone();
            for layer in 0..layers {
                let w = d.params.get(&format!("d.fc{layer}.w")).unwrap();
                let b = d.params.get(&format!("d.fc{layer}.b")).unwrap();
                let (inn, out) = (w.shape()[0], w.shape()[1]);
                let mut next = vec![0.0; out];
                for o in 0..out {
                    let mut acc = b.data()[o];
                    for i in 0..inn {
                        acc += h[i] * w.data()[i * out + o];
                    }
                    next[o] = if layer + 1 < layers { acc.max(0.0) } else { acc };
                }
                h = next;
            }
            let m = h[0].max(h[1]);
            let e0 = (h[0] - m).exp();
            let e1 = (h[1] - m).exp();
            e0 / (e0 + e1)
        })
        .collect()
}

#[test]
fn criterion_2_loss_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut arch = desk();
    arch.discriminator_hidden = vec![16, 16];
    let f = arch.feature_dim();
    let mut ok = true;
    const TOL: f64 = 1e-12;

    // half-MSE losses against the direct formula
    for _ in 0..20 {
        let m = rng.gen_range(1..6);
        let pred = rand_tensor(&mut rng, vec![m, 3], -1.0, 1.0);
        let target = rand_tensor(&mut rng, vec![m, 3], -1.0, 1.0);
        let direct = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (2.0 * m as f64);
        let mut g = Graph::new();
        let p = g.leaf(pred.clone());
        let t = g.leaf(target.clone());
        let l = loss_perception_sup(&mut g, p, t).unwrap();
        ok &= (g.value(l).item() - direct).abs() < TOL;

        let pred7 = rand_tensor(&mut rng, vec![m, 7], -1.0, 1.0);
        let target7 = rand_tensor(&mut rng, vec![m, 7], -1.0, 1.0);
        let direct7 = pred7
            .data()
            .iter()
            .zip(target7.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (2.0 * m as f64);
        let mut g = Graph::new();
        let p = g.leaf(pred7);
        let t = g.leaf(target7);
        let l = loss_control(&mut g, p, t).unwrap();
        ok &= (g.value(l).item() - direct7).abs() < TOL;
    }

    // adversarial losses against the independent network oracle
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let d = Discriminator::new(&arch, "d", &mut rng).unwrap();
        let m = rng.gen_range(1..5);
        let src = rand_tensor(&mut rng, vec![m, f], -1.0, 1.0);
        let tgt = rand_tensor(&mut rng, vec![m, f], -1.0, 1.0);
        let rows = |t: &Tensor| -> Vec<Vec<f64>> {
            t.data().chunks(f).map(|c| c.to_vec()).collect()
        };
        let p_src = oracle_p_sim(&d, &rows(&src));
        let p_tgt = oracle_p_sim(&d, &rows(&tgt));

        let direct_d = -(p_src.iter().map(|p| p.ln()).sum::<f64>()
            + p_tgt.iter().map(|p| (1.0 - p).ln()).sum::<f64>())
            / (2.0 * m as f64);
        let mut g = Graph::new();
        let s = g.leaf(src.clone());
        let t = g.leaf(tgt.clone());
        let l = loss_discriminator(&mut g, &d, s, t).unwrap();
        ok &= (g.value(l).item() - direct_d).abs() < TOL;

        let direct_e = -p_tgt.iter().map(|p| p.ln()).sum::<f64>() / m as f64;
        let mut g = Graph::new();
        let t = g.leaf(tgt.clone());
        let l = loss_encoder_adv(&mut g, &d, t).unwrap();
        ok &= (g.value(l).item() - direct_e).abs() < TOL;

        let direct_c = -0.25
            * (p_src.iter().map(|p| p.ln()).sum::<f64>() / m as f64
                + p_src.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / m as f64
                + p_tgt.iter().map(|p| p.ln()).sum::<f64>() / m as f64
                + p_tgt.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / m as f64);
        let mut g = Graph::new();
        let s = g.leaf(src.clone());
        let t = g.leaf(tgt.clone());
        let l = loss_confusion(&mut g, &d, s, t, true).unwrap();
        ok &= (g.value(l).item() - direct_c).abs() < TOL;
    }

    // maximally confused discriminator (all-zero parameters -> p = 1/2)
    {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Discriminator::new(&arch, "d", &mut rng).unwrap();
        let names: Vec<String> = d.params.iter().map(|(n, _)| n.clone()).collect();
        for n in names {
            for v in d.params.get_mut(&n).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let src = rand_tensor(&mut rng, vec![3, f], -1.0, 1.0);
        let tgt = rand_tensor(&mut rng, vec![3, f], -1.0, 1.0);
        let ln2 = std::f64::consts::LN_2;
        let mut g = Graph::new();
        let s = g.leaf(src.clone());
        let t = g.leaf(tgt.clone());
        let l = loss_discriminator(&mut g, &d, s, t).unwrap();
        ok &= (g.value(l).item() - ln2).abs() < TOL;
        let mut g = Graph::new();
        let t = g.leaf(tgt.clone());
        let l = loss_encoder_adv(&mut g, &d, t).unwrap();
        ok &= (g.value(l).item() - ln2).abs() < TOL;
        let mut g = Graph::new();
        let s = g.leaf(src);
        let t = g.leaf(tgt);
        let l = loss_confusion(&mut g, &d, s, t, true).unwrap();
        ok &= (g.value(l).item() - ln2).abs() < TOL;
    }

    gate(2, "loss oracles", ok);
}

// ---------------------------------------------------------------------------
// criterion 3: PI controller

#[test]
fn criterion_3_pi_controller() {
    // stub plant: pushing the encoder harder raises the discriminator loss
    let (a, b) = (0.24, 4.0);
    let mut pi = PiController::new(0.28);
    let mut measured = a + b * pi.gamma();
    let mut ok = true;
    for _ in 0..500 {
        let gamma = pi.update(measured);
        ok &= pi.integral().abs() <= INTEGRAL_CLAMP;
        ok &= gamma > 0.0 && gamma < GAMMA_MAX;
        measured = a + b * gamma;
    }
    ok &= (measured - 0.28).abs() < 0.01;

    // real ADT run: L_D^Ad inside the workable band for >= 80% of the
    // steps after a 20% burn-in
    let log = &ADT_93.log;
    let burn = log.rows.len() / 5;
    let tail = &log.rows[burn..];
    let in_band = tail
        .iter()
        .filter(|r| r.l_d >= 0.26 && r.l_d <= 0.30)
        .count();
    let frac = in_band as f64 / tail.len() as f64;
    println!("  L_D in [0.26, 0.30] for {:.1}% of post-burn-in steps", frac * 100.0);
    ok &= frac >= 0.80;

    gate(3, "PI regulation", ok);
}

// ---------------------------------------------------------------------------
// criterion 4: domain-gap trend

#[test]
fn criterion_4_domain_gap_trend() {
    let start = std::time::Instant::now();
    let sim_err = median(&eval_perception(&SOURCE, &SIM_TEST).unwrap());
    let real_err = median(&eval_perception(&SOURCE, &REAL_TEST).unwrap());
    let sup_err = median(&eval_perception(&SUP_186, &REAL_TEST).unwrap());
    println!(
        "  median error cm: sim {sim_err:.2}, real {real_err:.2}, real after 186-label adaptation {sup_err:.2}"
    );
    let ok = real_err >= 5.0 * sim_err
        && sup_err <= 0.3 * real_err
        && start.elapsed().as_secs() <= 15 * 60;
    gate(4, "domain-gap trend", ok);
}

// ---------------------------------------------------------------------------
// criterion 5: ADT headline

#[test]
fn criterion_5_adt_headline() {
    let sup186 = median(&eval_perception(&SUP_186, &REAL_TEST).unwrap());
    let sup48 = median(&eval_perception(&SUP_48, &REAL_TEST).unwrap());
    let adt93 = median(&eval_perception(&ADT_93.module, &REAL_TEST).unwrap());
    let adt48 = median(&eval_perception(&adt_run(48, 0).module, &REAL_TEST).unwrap());
    let adt0 = median(&eval_perception(&adt_run(0, 0).module, &REAL_TEST).unwrap());
    println!(
        "  median error cm: sup186 {sup186:.2}, adt93 {adt93:.2}, sup48 {sup48:.2}, \
         adt48 {adt48:.2}, unsupervised adt {adt0:.2}"
    );
    let ok = adt93 <= 1.10 * sup186 && adt48 <= 0.5 * sup48 && adt0 >= 3.0 * adt93;
    gate(5, "ADT headline", ok);
}

// ---------------------------------------------------------------------------
// criterion 6: seed robustness

#[test]
fn criterion_6_seed_robustness() {
    let mut medians = vec![median(&eval_perception(&ADT_93.module, &REAL_TEST).unwrap())];
    for seed in 1..5u64 {
        let run = adt_run(93, seed);
        medians.push(median(&eval_perception(&run.module, &REAL_TEST).unwrap()));
    }
    let mean = medians.iter().sum::<f64>() / medians.len() as f64;
    println!("  per-seed medians: {medians:.2?}, mean {mean:.2}");
    let ok = medians.iter().all(|m| (m - mean).abs() <= 0.10 * mean);
    gate(6, "seed robustness", ok);
}

// ---------------------------------------------------------------------------
// criterion 7: control module scaling

#[test]
fn criterion_7_control_module() {
    let (_, big) = &*CONTROL_333;
    let chain = KinematicChain::default_seven_dof();
    let small_ds = make_control_dataset(
        505,
        &RenderProfile::sim(64),
        &chain,
        118,
        &TrajectoryConfig::default(),
    )
    .unwrap();
    let small = train_control(
        &desk(),
        &small_ds,
        &ControlTrainConfig {
            epochs: CONTROL_EPOCHS,
            seed: 9,
            ..ControlTrainConfig::default()
        },
    )
    .unwrap()
    .module;

    let big_eval = reach_eval(&PerceptionSource::GroundTruth, big, Scenario::SingleObject);
    let small_eval = reach_eval(&PerceptionSource::GroundTruth, &small, Scenario::SingleObject);
    // 50x60x20 cm workspace diagonal
    let diagonal = (50.0f64.powi(2) + 60.0f64.powi(2) + 20.0f64.powi(2)).sqrt();
    println!(
        "  333 trajectories: success {:.1}%, median {:.2} cm; 118: success {:.1}%, median {:.2} cm",
        big_eval.success_rate * 100.0,
        big_eval.stats.median,
        small_eval.success_rate * 100.0,
        small_eval.stats.median
    );
    let ok = big_eval.success_rate >= 0.95
        && big_eval.stats.median <= 0.02 * diagonal
        && small_eval.success_rate < big_eval.success_rate
        && small_eval.stats.median > big_eval.stats.median;
    gate(7, "control-module scaling", ok);
}

// ---------------------------------------------------------------------------
// criterion 8: end-to-end fine-tuning

#[test]
fn criterion_8_end_to_end() {
    let (control_sim, control) = &*CONTROL_333;
    let base = CombinedNetwork {
        perception: ADT_93.module.clone(),
        control: control.clone(),
    };
    let ee0 = reach_eval(
        &PerceptionSource::Network(&base.perception),
        &base.control,
        Scenario::ClutterNovel,
    );

    // weighted fine-tuning: control loss end-to-end plus anchored
    // perception supervision
    let datasets = E2eDatasets {
        control_sim: Some(control_sim),
        control_real: None,
        perception_sim: Some(&SIM_TRAIN),
        perception_real: Some(&REAL_LABELED),
        unlabeled_real: Some(&REAL_UNLABELED),
    };
    let weighted = finetune_e2e(
        &base,
        &datasets,
        &E2EConfig {
            steps: E2E_STEPS,
            seed: 3,
            ..E2EConfig::default()
        },
        E2eVariant::WeightedSup,
    )
    .unwrap()
    .network;
    let ee2 = reach_eval(
        &PerceptionSource::Network(&weighted.perception),
        &weighted.control,
        Scenario::ClutterNovel,
    );

    // naive fine-tuning on real image-velocity pairs
    let chain = KinematicChain::default_seven_dof();
    let control_real = make_control_dataset(
        606,
        &RenderProfile::pseudo_real(64),
        &chain,
        60,
        &TrajectoryConfig::default(),
    )
    .unwrap();
    let naive_sets = E2eDatasets {
        control_sim: Some(control_sim),
        control_real: Some(&control_real),
        perception_sim: None,
        perception_real: None,
        unlabeled_real: None,
    };
    let naive = finetune_e2e(
        &base,
        &naive_sets,
        &E2EConfig {
            steps: E2E_STEPS,
            seed: 3,
            ..E2EConfig::default()
        },
        E2eVariant::Naive,
    )
    .unwrap()
    .network;
    let ee1 = reach_eval(
        &PerceptionSource::Network(&naive.perception),
        &naive.control,
        Scenario::ClutterNovel,
    );

    println!(
        "  clutter-novel median cm: direct {:.2}, weighted {:.2}, naive {:.2}",
        ee0.stats.median, ee2.stats.median, ee1.stats.median
    );

    // gradient-mixing endpoint identities
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut gp = Gradients::new();
    let mut gc = Gradients::new();
    for i in 0..3 {
        gp.insert(
            format!("p.t{i}"),
            rand_tensor(&mut rng, vec![2, 2], -1.0, 1.0),
        );
        gc.insert(
            format!("p.t{i}"),
            rand_tensor(&mut rng, vec![2, 2], -1.0, 1.0),
        );
    }
    let is_p = |n: &str| n.starts_with("p.");
    let at1 = mix_perception_gradients(1.0, &gp, &gc, is_p);
    let at0 = mix_perception_gradients(0.0, &gp, &gc, is_p);
    let mut endpoints_ok = true;
    for (name, g) in &gp {
        for (k, v) in g.data().iter().enumerate() {
            endpoints_ok &= (at1[name].data()[k] - v).abs() < 1e-10;
            endpoints_ok &= (at0[name].data()[k] - gc[name].data()[k]).abs() < 1e-10;
        }
    }

    let ok = ee2.stats.median <= 0.9 * ee0.stats.median
        && ee1.stats.median > ee0.stats.median
        && endpoints_ok;
    gate(8, "end-to-end fine-tuning", ok);
}

// ---------------------------------------------------------------------------
// criterion 9: statistics and formats

#[test]
fn criterion_9_statistics_and_formats() {
    let mut ok = true;

    // box_stats vs sort-based brute force on 1000 random arrays
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let s = box_stats(&values).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let at = |p: f64| {
            let rank = p * (n as f64 - 1.0);
            let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
            sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
        };
        ok &= (s.q1 - at(0.25)).abs() < 1e-12
            && (s.median - at(0.5)).abs() < 1e-12
            && (s.q3 - at(0.75)).abs() < 1e-12;
        let iqr = s.q3 - s.q1;
        let brute: Vec<f64> = sorted
            .iter()
            .copied()
            .filter(|v| *v >= s.q3 + 1.5 * iqr || *v <= s.q1 - 1.5 * iqr)
            .collect();
        ok &= s.outliers == brute;
    }

    // success threshold boundary cases
    ok &= 4.5 < SUCCESS_CM && 4.7 > SUCCESS_CM;

    // dataset round-trips are bit-exact and reruns byte-identical
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_perception_dataset(3, &RenderProfile::pseudo_real(24), 4, true).unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    simreach::simworld::save_perception_dataset(&ds, &dir_a).unwrap();
    let loaded = simreach::simworld::load_perception_dataset(&dir_a).unwrap();
    simreach::simworld::save_perception_dataset(&loaded, &dir_b).unwrap();
    for name in ["manifest.json", "labels.csv", "img_00000.ppm", "img_00003.ppm"] {
        ok &= std::fs::read(dir_a.join(name)).unwrap() == std::fs::read(dir_b.join(name)).unwrap();
    }
    let ds2 = make_perception_dataset(3, &RenderProfile::pseudo_real(24), 4, true).unwrap();
    for (x, y) in ds.samples.iter().zip(&ds2.samples) {
        ok &= x.image.data() == y.image.data() && x.label == y.label;
    }

    // checkpoint round-trip preserves every parameter bit
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut arch = desk();
    arch.resolution = 16;
    arch.conv_channels = vec![4];
    arch.pool_after = vec![true];
    let module = PerceptionModule::new(&arch, "p", &mut rng).unwrap();
    let path = tmp.path().join("p.ckpt");
    module.save(&path).unwrap();
    let restored = PerceptionModule::load(&path).unwrap();
    ok &= restored.params.checksum() == module.params.checksum();

    // fixed-seed training reruns are bit-identical
    let ds_small = make_perception_dataset(9, &RenderProfile::sim(16), 6, true).unwrap();
    let cfg = PretrainConfig {
        epochs: 1,
        seed: 4,
        ..PretrainConfig::default()
    };
    let a = pretrain_perception(&arch, &ds_small, &cfg).unwrap();
    let b = pretrain_perception(&arch, &ds_small, &cfg).unwrap();
    ok &= a.module.params.checksum() == b.module.params.checksum();

    gate(9, "statistics and formats", ok);
}
