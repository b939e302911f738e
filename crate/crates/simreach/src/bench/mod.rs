//! Metrics, box statistics, error-map grids, closed-loop rollout
//! evaluation and report emission.

mod report;

pub use report::{emit_report, ErrorMap, Report};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::numgrad::{Graph, Tensor};
use crate::policynet::{ControlModule, PerceptionModule};
use crate::simworld::{
    axis_spans_cm, item_seed, make_perception_dataset, normalize_pos, novel_distractor_set,
    randomize_scene, render, render_with_mask, KinematicChain, PerceptionDataset, Primitive,
    RenderProfile, Scene, Shape, CM_PER_UNIT, REFERENCE_Q, SUCCESS_RADIUS, TARGET_SIDE,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// statistics

/// Five-number-style summary with the w=1.5 outlier rule.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub outliers: Vec<f64>,
}

pub const OUTLIER_W: f64 = 1.5;

impl BoxStats {
    /// Placeholder for a failed grid cell ("NaN means no result").
    pub fn nan() -> Self {
        Self {
            median: f64::NAN,
            q1: f64::NAN,
            q3: f64::NAN,
            outliers: vec![],
        }
    }

    pub fn is_nan(&self) -> bool {
        self.median.is_nan()
    }
}

/// Quantile by linear interpolation between closest ranks on sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = p * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Quartiles by linear interpolation; outliers are the points at or beyond
/// the Q1/Q3 whiskers with w = 1.5.
pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::EmptyBatch("box_stats"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let outliers = sorted
        .iter()
        .copied()
        .filter(|v| *v >= q3 + OUTLIER_W * iqr || *v <= q1 - OUTLIER_W * iqr)
        .collect();
    Ok(BoxStats {
        median,
        q1,
        q3,
        outliers,
    })
}

// ---------------------------------------------------------------------------
// metrics

/// Euclidean distance between two normalized positions after denormalizing
/// each axis to its cm-analog span.
pub fn perception_error(pred: &[f64; 3], gt: &[f64; 3]) -> f64 {
    let spans = axis_spans_cm();
    (0..3)
        .map(|i| ((pred[i] - gt[i]) * spans[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Success threshold in cm-analog units (4.6).
pub const SUCCESS_CM: f64 = SUCCESS_RADIUS * CM_PER_UNIT;

/// Per-axis errors of a perception module over a labeled dataset, in
/// cm-analog units.
pub fn eval_perception(module: &PerceptionModule, dataset: &PerceptionDataset) -> Result<Vec<f64>> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyBatch("eval_perception"));
    }
    let r = dataset.resolution;
    // batch the forward passes to bound peak memory
    let chunk = 16;
    let mut errors = Vec::with_capacity(dataset.samples.len());
    for group in dataset.samples.chunks(chunk) {
        let mut data = Vec::with_capacity(group.len() * r * r * 3);
        for s in group {
            data.extend_from_slice(s.image.data());
        }
        let images = Tensor::new(vec![group.len(), r, r, 3], data)?;
        let pred = module.predict(&images)?;
        for (i, s) in group.iter().enumerate() {
            let gt = s.label.ok_or(Error::MissingDataset(
                "evaluation set must be labeled".to_string(),
            ))?;
            let p = [
                pred.data()[i * 3],
                pred.data()[i * 3 + 1],
                pred.data()[i * 3 + 2],
            ];
            errors.push(perception_error(&p, &gt));
        }
    }
    Ok(errors)
}

// ---------------------------------------------------------------------------
// held-out test set

/// Seed reserved for the held-out labeled PSEUDO_REAL test set; training
/// seeds must differ so the seed-partitioned item streams are disjoint.
pub const TEST_SET_SEED: u64 = 0xbe5e_7001;
pub const TEST_SET_SIZE: usize = 144;

pub fn held_out_test_set(resolution: usize) -> Result<PerceptionDataset> {
    make_perception_dataset(
        TEST_SET_SEED,
        &RenderProfile::pseudo_real(resolution),
        TEST_SET_SIZE,
        true,
    )
}

/// Training sets are generated from per-item streams keyed by
/// `item_seed(base, index)`; a training base seed equal to the test seed
/// would replay the exact test scenes.
pub fn assert_disjoint_training_seed(train_seed: u64) -> Result<()> {
    if train_seed == TEST_SET_SEED {
        return Err(Error::Config(format!(
            "training seed {train_seed:#x} collides with the held-out test seed"
        )));
    }
    // paranoia: the first few item streams must not coincide either
    for i in 0..4 {
        if item_seed(train_seed, i) == item_seed(TEST_SET_SEED, i) {
            return Err(Error::Config(format!(
                "training seed {train_seed:#x} shares item stream {i} with the test set"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// closed-loop evaluation

/// The Fig.-13-style test conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    SingleObject,
    ClutterSeen,
    ClutterNovel,
    Occluded,
    MovingTarget,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "single-object" => Self::SingleObject,
            "clutter-seen" => Self::ClutterSeen,
            "clutter-novel" => Self::ClutterNovel,
            "occluded" => Self::Occluded,
            "moving-target" => Self::MovingTarget,
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario `{other}` (expected single-object, clutter-seen, \
                     clutter-novel, occluded or moving-target)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SingleObject => "single-object",
            Self::ClutterSeen => "clutter-seen",
            Self::ClutterNovel => "clutter-novel",
            Self::Occluded => "occluded",
            Self::MovingTarget => "moving-target",
        }
    }
}

/// One rollout outcome.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ReachResult {
    /// Final end-effector-to-target distance, cm-analog.
    pub final_distance_cm: f64,
    pub success: bool,
    /// Number of executed control steps.
    pub steps: usize,
}

/// Where x̂* comes from during rollouts.
pub enum PerceptionSource<'a> {
    Network(&'a PerceptionModule),
    /// Ground truth injected at the bottleneck: reduces the evaluation to
    /// the control-only benchmark.
    GroundTruth,
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub scenario: Scenario,
    pub n_trials: usize,
    /// Trials sharing one target scene before the next is drawn.
    pub trials_per_target: usize,
    pub seed: u64,
    pub resolution: usize,
    pub dt: f64,
    pub timeout_s: f64,
    /// Stop when every joint velocity magnitude falls below this.
    pub v_stop: f64,
    /// Target drift speed for the moving-target scenario, units/s.
    pub drift_speed: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::SingleObject,
            // 15 targets x 3 trials
            n_trials: 45,
            trials_per_target: 3,
            seed: 0,
            resolution: 64,
            dt: 0.05,
            timeout_s: 10.0,
            v_stop: 1e-3,
            drift_speed: 0.02,
        }
    }
}

pub struct EvalOutcome {
    pub results: Vec<ReachResult>,
    pub stats: BoxStats,
    pub success_rate: f64,
}

/// Minimum fraction of the target's projected blob an occluder must hide.
pub const OCCLUSION_MIN: f64 = 0.30;

fn visible_target_pixels(scene: &Scene, resolution: usize) -> usize {
    let (_, mask) = render_with_mask(scene, resolution);
    mask.iter().filter(|m| **m).count()
}

/// Place one tall cuboid between the camera and the target until it hides
/// at least [`OCCLUSION_MIN`] of the target's visible pixels.
fn add_occluder(scene: &mut Scene, resolution: usize) -> Result<f64> {
    let base = visible_target_pixels(scene, resolution);
    if base == 0 {
        return Err(Error::Config(
            "target not visible before occlusion".to_string(),
        ));
    }
    // table-plane direction from the target toward the camera
    let mut dir = scene.camera.pos - scene.target.pos;
    dir.z = 0.0;
    let dir = if dir.norm() < 1e-9 {
        Vector3::new(-1.0, 0.0, 0.0)
    } else {
        dir.normalize()
    };
    let mut best: Option<(f64, Primitive)> = None;
    for scale in [1.0, 1.4, 1.9, 2.5] {
        for offset in [0.10, 0.08, 0.06, 0.05] {
            let occ = Primitive {
                shape: Shape::Cuboid {
                    sx: TARGET_SIDE * scale,
                    sy: TARGET_SIDE * scale,
                    sz: TARGET_SIDE * 1.5 * scale,
                },
                pos: scene.target.pos + dir * offset,
                yaw: 0.0,
                color: [0.65, 0.6, 0.5],
            };
            scene.distractors.push(occ.clone());
            let visible = visible_target_pixels(scene, resolution);
            scene.distractors.pop();
            let hidden = 1.0 - visible as f64 / base as f64;
            if hidden >= OCCLUSION_MIN {
                // prefer the mildest qualifying occlusion so the task
                // stays solvable
                match &best {
                    Some((h, _)) if *h <= hidden => {}
                    _ => best = Some((hidden, occ)),
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    let (hidden, occ) =
        best.ok_or_else(|| Error::Config("could not build an occluded scene".to_string()))?;
    scene.distractors.push(occ);
    Ok(hidden)
}

/// Build the trial scene for a scenario from a per-target stream.
fn scenario_scene(scenario: Scenario, rng: &mut ChaCha8Rng, resolution: usize) -> Result<Scene> {
    let profile = RenderProfile::pseudo_real(resolution);
    let mut scene = randomize_scene(rng, &profile);
    match scenario {
        Scenario::SingleObject => scene.distractors.clear(),
        Scenario::ClutterSeen => {}
        Scenario::ClutterNovel => {
            // swap every distractor for a shape/color pair excluded from
            // both training profiles
            let novel = novel_distractor_set();
            for d in &mut scene.distractors {
                let (shape, color) = novel[rng.gen_range(0..novel.len())];
                d.shape = shape;
                d.color = color;
            }
        }
        Scenario::Occluded => {
            add_occluder(&mut scene, resolution)?;
        }
        Scenario::MovingTarget => {}
    }
    Ok(scene)
}

/// One closed-loop rollout: image → x̂* → Θ → v at 20 Hz until the arm
/// settles or time is out.
fn rollout(
    perception: &PerceptionSource,
    control: &ControlModule,
    chain: &KinematicChain,
    mut scene: Scene,
    cfg: &EvalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ReachResult> {
    let max_steps = (cfg.timeout_s / cfg.dt).round() as usize;
    let mut q = REFERENCE_Q;
    for (i, v) in q.iter_mut().enumerate() {
        *v += rng.gen_range(-0.1..0.1);
        let j = &chain.joints[i];
        *v = v.clamp(j.limits.0, j.limits.1);
    }
    let drift_dir = {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        Vector3::new(a.cos(), a.sin(), 0.0)
    };

    let estimate = |scene: &Scene| -> Result<[f64; 3]> {
        match perception {
            PerceptionSource::GroundTruth => Ok(normalize_pos(&scene.target_top_center())),
            PerceptionSource::Network(p) => {
                let image = render(scene, cfg.resolution);
                let mut batch = image.data().to_vec();
                let pred = p.predict(&Tensor::new(
                    vec![1, cfg.resolution, cfg.resolution, 3],
                    std::mem::take(&mut batch),
                )?)?;
                Ok([pred.data()[0], pred.data()[1], pred.data()[2]])
            }
        }
    };

    let moving = cfg.scenario == Scenario::MovingTarget;
    let mut x_hat = estimate(&scene)?;
    let mut steps = 0;
    for step in 0..max_steps {
        if moving {
            scene.target.pos += drift_dir * (cfg.drift_speed * cfg.dt);
            // fresh pixel noise per frame
            scene.noise_seed = scene.noise_seed.wrapping_add(1);
            x_hat = estimate(&scene)?;
        }
        let q_norm = chain.normalize_q(&q);
        let mut theta = [0.0; 10];
        theta[..3].copy_from_slice(&x_hat);
        theta[3..].copy_from_slice(&q_norm);
        let mut g = Graph::new();
        let t = g.leaf(Tensor::new(vec![1, 10], theta.to_vec())?);
        let out = control.forward_node(&mut g, t)?;
        let v = g.value(out).data().to_vec();
        steps = step + 1;
        let mut max_v: f64 = 0.0;
        for (i, vi) in v.iter().enumerate() {
            q[i] += vi * cfg.dt;
            let j = &chain.joints[i];
            q[i] = q[i].clamp(j.limits.0, j.limits.1);
            max_v = max_v.max(vi.abs());
        }
        if max_v < cfg.v_stop {
            break;
        }
    }
    let ee = chain.forward_unchecked(&q);
    let final_distance_cm = (ee - scene.target_top_center()).norm() * CM_PER_UNIT;
    Ok(ReachResult {
        final_distance_cm,
        success: final_distance_cm < SUCCESS_CM,
        steps,
    })
}

/// Closed-loop benchmark over `n_trials` rollouts; trials run in parallel
/// with per-trial seeds, aggregation ordered by trial index.
pub fn eval_reach(
    perception: &PerceptionSource,
    control: &ControlModule,
    chain: &KinematicChain,
    cfg: &EvalConfig,
) -> Result<EvalOutcome> {
    if cfg.n_trials == 0 || cfg.trials_per_target == 0 {
        return Err(Error::EmptyBatch("eval_reach"));
    }
    let results: Result<Vec<ReachResult>> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|trial| {
            let target_idx = (trial / cfg.trials_per_target) as u64;
            let mut scene_rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, target_idx));
            let scene = scenario_scene(cfg.scenario, &mut scene_rng, cfg.resolution)?;
            let mut trial_rng =
                ChaCha8Rng::seed_from_u64(item_seed(cfg.seed ^ 0x5eed_0f71, trial as u64));
            rollout(perception, control, chain, scene, cfg, &mut trial_rng)
        })
        .collect();
    let results = results?;
    let distances: Vec<f64> = results.iter().map(|r| r.final_distance_cm).collect();
    let stats = box_stats(&distances)?;
    let success_rate =
        results.iter().filter(|r| r.success).count() as f64 / results.len() as f64;
    Ok(EvalOutcome {
        results,
        stats,
        success_rate,
    })
}

// ---------------------------------------------------------------------------
// error-map grids

/// Evaluate `cell(row_budget, col_budget) -> per-sample errors` over a
/// budget grid; failed cells become NaN stats.
pub fn error_map(
    cell: impl Fn(usize, usize) -> Result<Vec<f64>> + Sync,
    row_budgets: &[usize],
    col_budgets: &[usize],
) -> Result<Vec<Vec<BoxStats>>> {
    if row_budgets.is_empty() || col_budgets.is_empty() {
        return Err(Error::EmptyBatch("error_map"));
    }
    let grid = row_budgets
        .iter()
        .map(|&r| {
            col_budgets
                .iter()
                .map(|&c| match cell(r, c) {
                    Ok(errs) => box_stats(&errs).unwrap_or_else(|_| BoxStats::nan()),
                    Err(e) => {
                        eprintln!("error_map cell ({r}, {c}) failed: {e}");
                        BoxStats::nan()
                    }
                })
                .collect()
        })
        .collect();
    Ok(grid)
}
