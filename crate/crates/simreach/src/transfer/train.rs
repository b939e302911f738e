//! The training procedures: source pretraining, supervised adaptation,
//! adversarial adaptation (with PI-regulated balance), the confusion-loss
//! baseline, control training and end-to-end fine-tuning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::losses::{
    loss_confusion, loss_control, loss_discriminator, loss_encoder_adv, loss_perception_sup,
};
use super::pi::{PiController, DEFAULT_SETPOINT, GAMMA_MAX};
use crate::numgrad::{Gradients, Graph, RmsProp, Tensor};
use crate::policynet::{
    clone_params, ArchProfile, CombinedNetwork, ControlModule, Discriminator, PerceptionModule,
};
use crate::simworld::{ControlDataset, PerceptionDataset, PerceptionSample};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// training log

/// One CSV row per training step.
#[derive(Clone, Debug)]
pub struct TrainLogRow {
    pub step: usize,
    pub l_p_sup: f64,
    pub l_d: f64,
    pub l_e: f64,
    pub gamma: f64,
    pub u: f64,
    pub integral: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,l_p_sup,l_d,l_e,gamma,u,integral\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step, r.l_p_sup, r.l_d, r.l_e, r.gamma, r.u, r.integral
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// batch assembly

fn gather_images(
    samples: &[PerceptionSample],
    idxs: &[usize],
    ds: &PerceptionDataset,
    do_augment: bool,
    rng: &mut impl Rng,
) -> Tensor {
    let r = ds.resolution;
    let mut data = Vec::with_capacity(idxs.len() * r * r * 3);
    for &i in idxs {
        if do_augment {
            data.extend_from_slice(augment(&samples[i].image, ds.domain, rng).data());
        } else {
            data.extend_from_slice(samples[i].image.data());
        }
    }
    Tensor::new(vec![idxs.len(), r, r, 3], data).expect("sized batch")
}

fn gather_labels(samples: &[PerceptionSample], idxs: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idxs.len() * 3);
    for &i in idxs {
        let l = samples[i]
            .label
            .ok_or(Error::MissingDataset("labels required but absent".to_string()))?;
        data.extend_from_slice(&l);
    }
    Ok(Tensor::new(vec![idxs.len(), 3], data).expect("sized batch"))
}

fn sample_idxs(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.gen_range(0..n)).collect()
}

fn check_finite(loss: f64, what: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("{what} loss became {loss}")));
    }
    Ok(())
}

/// Keep only gradients whose name passes the filter.
fn filter_grads(grads: &Gradients, keep: impl Fn(&str) -> bool) -> Gradients {
    grads
        .iter()
        .filter(|(n, _)| keep(n))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect()
}

/// Detached feature batch: forward without keeping the graph.
fn encode_detached(module: &PerceptionModule, images: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.leaf(images.clone());
    let out = module.forward(&mut g, x)?;
    Ok(g.value(out.feature).clone())
}

// ---------------------------------------------------------------------------
// pretraining

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            batch: 32,
            seed: 0,
            augment: true,
        }
    }
}

pub struct PretrainResult {
    pub module: PerceptionModule,
    /// Mean supervised loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Supervised pretraining of the source perception module on labeled
/// simulated data; mini-batch 32, lr 0.01 by default.
pub fn pretrain_perception(
    arch: &ArchProfile,
    dataset: &PerceptionDataset,
    cfg: &PretrainConfig,
) -> Result<PretrainResult> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyBatch("pretrain_perception"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut module = PerceptionModule::new(arch, "src", &mut rng)?;
    let epoch_losses = train_supervised_epochs(
        &mut module,
        &[(dataset, 1.0)],
        cfg.epochs,
        cfg.lr,
        cfg.batch,
        cfg.augment,
        &mut rng,
    )?;
    Ok(PretrainResult {
        module,
        epoch_losses,
    })
}

/// Shared epoch loop for the purely supervised procedures. `sources` lists
/// (dataset, fraction-of-batch); fractions must sum to 1.
fn train_supervised_epochs(
    module: &mut PerceptionModule,
    sources: &[(&PerceptionDataset, f64)],
    epochs: usize,
    lr: f64,
    batch: usize,
    do_augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut opt = RmsProp::new(lr);
    let mut epoch_losses = Vec::with_capacity(epochs);
    // epochs counted over the first (dominant) source
    let steps_per_epoch = (sources[0].0.samples.len() + batch - 1) / batch;
    for _ in 0..epochs {
        let mut sum = 0.0;
        for _ in 0..steps_per_epoch {
            let mut images = Vec::new();
            let mut labels = Vec::new();
            let mut remaining = batch;
            for (k, (ds, frac)) in sources.iter().enumerate() {
                let take = if k + 1 == sources.len() {
                    remaining
                } else {
                    ((batch as f64) * frac).round() as usize
                };
                remaining -= take.min(remaining);
                let idxs = sample_idxs(rng, ds.samples.len(), take);
                images.push(gather_images(&ds.samples, &idxs, ds, do_augment, rng));
                labels.push(gather_labels(&ds.samples, &idxs)?);
            }
            let r = sources[0].0.resolution;
            let n: usize = images.iter().map(|t| t.shape()[0]).sum();
            let image_batch = Tensor::new(
                vec![n, r, r, 3],
                images.iter().flat_map(|t| t.data().iter().copied()).collect(),
            )?;
            let label_batch = Tensor::new(
                vec![n, 3],
                labels.iter().flat_map(|t| t.data().iter().copied()).collect(),
            )?;

            let mut g = Graph::new();
            let x = g.leaf(image_batch);
            let out = module.forward(&mut g, x)?;
            let y = g.leaf(label_batch);
            let loss = loss_perception_sup(&mut g, out.pred, y)?;
            let loss_v = g.value(loss).item();
            check_finite(loss_v, "perception")?;
            sum += loss_v;
            let grads = g.backward(loss)?;
            opt.step(&mut module.params, &grads)?;
        }
        epoch_losses.push(sum / steps_per_epoch as f64);
    }
    Ok(epoch_losses)
}

// ---------------------------------------------------------------------------
// supervised adaptation

#[derive(Clone, Debug)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Fraction of each mini-batch drawn from the real domain.
    pub real_fraction: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            // fine-tuning, not training from scratch: RmsProp steps are
            // lr-sized regardless of gradient magnitude, so the rate has
            // to be well below the pretraining 0.01 or the pretrained
            // features just diffuse
            epochs: 60,
            lr: 0.005,
            batch: 32,
            real_fraction: 0.875,
            seed: 0,
            augment: true,
        }
    }
}

/// Fine-tune a copy of the source module with mixed sim/real supervised
/// batches (87.5% real by default).
pub fn adapt_supervised(
    source: &PerceptionModule,
    sim: &PerceptionDataset,
    real: &PerceptionDataset,
    cfg: &AdaptConfig,
) -> Result<PerceptionModule> {
    if real.samples.is_empty() {
        return Err(Error::EmptyBatch("adapt_supervised: real set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut module = clone_params(source, "tgt");
    train_supervised_epochs(
        &mut module,
        &[(real, cfg.real_fraction), (sim, 1.0 - cfg.real_fraction)],
        cfg.epochs,
        cfg.lr,
        cfg.batch,
        cfg.augment,
        &mut rng,
    )?;
    Ok(module)
}

// ---------------------------------------------------------------------------
// adversarial adaptation

/// When the PI controller measures L_D^Ad within a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiMeasurement {
    /// Value computed before the discriminator update (default).
    PreUpdate,
    /// Recomputed on the same features after the discriminator update.
    PostUpdate,
}

#[derive(Clone, Debug)]
pub struct AdtConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_sim: usize,
    pub batch_unlabeled: usize,
    pub batch_labeled: usize,
    pub pi_enabled: bool,
    /// gamma used when the PI controller is disabled.
    pub fixed_gamma: f64,
    pub setpoint: f64,
    pub measurement: PiMeasurement,
    pub seed: u64,
    pub augment: bool,
}

impl Default for AdtConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.001,
            batch_sim: 32,
            batch_unlabeled: 32,
            batch_labeled: 32,
            pi_enabled: true,
            fixed_gamma: 1.0,
            setpoint: DEFAULT_SETPOINT,
            measurement: PiMeasurement::PreUpdate,
            seed: 0,
            augment: true,
        }
    }
}

pub struct AdtOutcome {
    pub module: PerceptionModule,
    pub discriminator: Discriminator,
    pub log: TrainLog,
}

/// Adversarial discriminative adaptation. The frozen source encoder serves
/// as the reference distribution; the target module starts as its copy.
///
/// Per step: (1) discriminator update on L_D^Ad over detached features,
/// (2) target-encoder update on gamma * L_E^Ad, (3) supervised update on
/// labeled real images when available, (4) PI update of gamma.
/// The labeled-supervision step runs at a reduced rate so the target
/// feature distribution drifts slowly enough for the discriminator (and
/// the PI loop around it) to track.
const ADT_SUP_LR_SCALE: f64 = 0.2;
const ADT_DISC_LR_SCALE: f64 = 0.5;
/// EMA coefficient for the L_D^Ad measurement fed to the PI controller.
const ADT_MEAS_SMOOTHING: f64 = 0.98;
/// Plant-gain calibration for the gamma -> encoder-step-size map: the
/// encoder learning rate that balances the discriminator at the 0.28
/// setpoint when gamma sits at its midpoint 0.01, measured empirically
/// on the desk profile. The quadratic characteristic stiffens the loop
/// around that operating point.
const ADT_ENC_LR_NOMINAL: f64 = 3.1e-3;

fn enc_lr(base: f64, gamma: f64) -> f64 {
    base * (ADT_ENC_LR_NOMINAL / 0.01) * (gamma / (GAMMA_MAX / 2.0)).powi(2)
}

pub fn adapt_adt(
    source: &PerceptionModule,
    sim: &PerceptionDataset,
    real_labeled: Option<&PerceptionDataset>,
    real_unlabeled: &PerceptionDataset,
    cfg: &AdtConfig,
) -> Result<AdtOutcome> {
    if sim.samples.is_empty() || real_unlabeled.samples.is_empty() {
        return Err(Error::EmptyBatch("adapt_adt"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut target = clone_params(source, "tgt");
    let mut disc = Discriminator::new(&source.arch, "disc", &mut rng)?;
    let mut pi = PiController::new(cfg.setpoint);
    let mut gamma = if cfg.pi_enabled {
        pi.gamma()
    } else {
        cfg.fixed_gamma
    };

    let mut opt_d = RmsProp::new(cfg.lr * ADT_DISC_LR_SCALE);
    let mut opt_enc = RmsProp::new(cfg.lr);
    let mut opt_sup = RmsProp::new(cfg.lr * ADT_SUP_LR_SCALE);
    let mut log = TrainLog::default();
    let mut l_d_smooth = std::f64::consts::LN_2;

    for step in 0..cfg.steps {
        // (1) discriminator update on detached features
        let sim_idx = sample_idxs(&mut rng, sim.samples.len(), cfg.batch_sim);
        let sim_images = gather_images(&sim.samples, &sim_idx, sim, cfg.augment, &mut rng);
        let src_feats = encode_detached(source, &sim_images)?;
        let real_idx = sample_idxs(&mut rng, real_unlabeled.samples.len(), cfg.batch_unlabeled);
        let real_images = gather_images(
            &real_unlabeled.samples,
            &real_idx,
            real_unlabeled,
            cfg.augment,
            &mut rng,
        );
        let tgt_feats = encode_detached(&target, &real_images)?;

        let mut g = Graph::new();
        let s = g.leaf(src_feats.clone());
        let t = g.leaf(tgt_feats.clone());
        let l_d_node = loss_discriminator(&mut g, &disc, s, t)?;
        let l_d_pre = g.value(l_d_node).item();
        check_finite(l_d_pre, "discriminator")?;
        let grads = g.backward(l_d_node)?;
        opt_d.step(&mut disc.params, &grads)?;

        // (2) encoder update on L_E^Ad through the live encoder. RmsProp
        // normalizes gradients by their running magnitude, so scaling the
        // loss by gamma would cancel out of the steady-state step; gamma
        // has to modulate the step size itself.
        let mut g = Graph::new();
        let x = g.leaf(real_images);
        let out = target.forward(&mut g, x)?;
        let l_e_node = loss_encoder_adv(&mut g, &disc, out.feature)?;
        let l_e = g.value(l_e_node).item();
        check_finite(l_e, "encoder-adversarial")?;
        let grads = g.backward(l_e_node)?;
        let enc_grads = filter_grads(&grads, |n| target.is_encoder_param(n));
        opt_enc.lr = enc_lr(cfg.lr, gamma);
        opt_enc.step(&mut target.params, &enc_grads)?;

        // (3) supervised update on labeled reals, skipped in the
        // unsupervised regime
        let mut l_p_sup = f64::NAN;
        if let Some(labeled) = real_labeled {
            let idx = sample_idxs(&mut rng, labeled.samples.len(), cfg.batch_labeled);
            let images = gather_images(&labeled.samples, &idx, labeled, cfg.augment, &mut rng);
            let labels = gather_labels(&labeled.samples, &idx)?;
            let mut g = Graph::new();
            let x = g.leaf(images);
            let out = target.forward(&mut g, x)?;
            let y = g.leaf(labels);
            let loss = loss_perception_sup(&mut g, out.pred, y)?;
            l_p_sup = g.value(loss).item();
            check_finite(l_p_sup, "perception")?;
            let grads = g.backward(loss)?;
            opt_sup.step(&mut target.params, &grads)?;
        }

        // (4) regulate gamma for the next step. A single mini-batch L_D
        // is far too noisy to hold a +-0.02 band, so the controller (and
        // the log) see an exponentially smoothed estimate.
        let instant = match cfg.measurement {
            PiMeasurement::PreUpdate => l_d_pre,
            PiMeasurement::PostUpdate => {
                let mut g = Graph::new();
                let s = g.leaf(src_feats);
                let t = g.leaf(tgt_feats);
                let node = loss_discriminator(&mut g, &disc, s, t)?;
                g.value(node).item()
            }
        };
        l_d_smooth = ADT_MEAS_SMOOTHING * l_d_smooth + (1.0 - ADT_MEAS_SMOOTHING) * instant;
        if cfg.pi_enabled {
            gamma = pi.update(l_d_smooth);
        }
        log.rows.push(TrainLogRow {
            step,
            l_p_sup,
            l_d: l_d_smooth,
            l_e,
            gamma,
            u: pi.u(),
            integral: pi.integral(),
        });
    }

    Ok(AdtOutcome {
        module: target,
        discriminator: disc,
        log,
    })
}

/// Domain-confusion baseline: one encoder shared by both domains, updated
/// on the four-term confusion loss instead of L_E^Ad.
pub fn adapt_confusion(
    source: &PerceptionModule,
    sim: &PerceptionDataset,
    real_labeled: Option<&PerceptionDataset>,
    real_unlabeled: &PerceptionDataset,
    cfg: &AdtConfig,
) -> Result<AdtOutcome> {
    if sim.samples.is_empty() || real_unlabeled.samples.is_empty() {
        return Err(Error::EmptyBatch("adapt_confusion"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shared = clone_params(source, "tgt");
    let mut disc = Discriminator::new(&source.arch, "disc", &mut rng)?;
    let mut pi = PiController::new(cfg.setpoint);
    let mut gamma = if cfg.pi_enabled {
        pi.gamma()
    } else {
        cfg.fixed_gamma
    };
    let mut opt_d = RmsProp::new(cfg.lr);
    let mut opt_enc = RmsProp::new(cfg.lr);
    let mut opt_sup = RmsProp::new(cfg.lr);
    let mut log = TrainLog::default();

    let m = cfg.batch_sim.min(cfg.batch_unlabeled);
    for step in 0..cfg.steps {
        let sim_idx = sample_idxs(&mut rng, sim.samples.len(), m);
        let sim_images = gather_images(&sim.samples, &sim_idx, sim, cfg.augment, &mut rng);
        let real_idx = sample_idxs(&mut rng, real_unlabeled.samples.len(), m);
        let real_images = gather_images(
            &real_unlabeled.samples,
            &real_idx,
            real_unlabeled,
            cfg.augment,
            &mut rng,
        );

        // discriminator update on detached shared-encoder features
        let src_feats = encode_detached(&shared, &sim_images)?;
        let tgt_feats = encode_detached(&shared, &real_images)?;
        let mut g = Graph::new();
        let s = g.leaf(src_feats);
        let t = g.leaf(tgt_feats);
        let l_d_node = loss_discriminator(&mut g, &disc, s, t)?;
        let l_d = g.value(l_d_node).item();
        check_finite(l_d, "discriminator")?;
        let grads = g.backward(l_d_node)?;
        opt_d.step(&mut disc.params, &grads)?;

        // shared-encoder update on the confusion loss over both domains
        let mut g = Graph::new();
        let xs = g.leaf(sim_images);
        let xr = g.leaf(real_images);
        let fs = shared.forward(&mut g, xs)?;
        let fr = shared.forward(&mut g, xr)?;
        let l_conf_node = loss_confusion(&mut g, &disc, fs.feature, fr.feature, true)?;
        let l_conf = g.value(l_conf_node).item();
        check_finite(l_conf, "confusion")?;
        let grads = g.backward(l_conf_node)?;
        let enc_grads = filter_grads(&grads, |n| shared.is_encoder_param(n));
        // same step-size modulation as the ADT loop: RmsProp would cancel
        // a plain loss scale
        opt_enc.lr = enc_lr(cfg.lr, gamma);
        opt_enc.step(&mut shared.params, &enc_grads)?;

        let mut l_p_sup = f64::NAN;
        if let Some(labeled) = real_labeled {
            let idx = sample_idxs(&mut rng, labeled.samples.len(), cfg.batch_labeled);
            let images = gather_images(&labeled.samples, &idx, labeled, cfg.augment, &mut rng);
            let labels = gather_labels(&labeled.samples, &idx)?;
            let mut g = Graph::new();
            let x = g.leaf(images);
            let out = shared.forward(&mut g, x)?;
            let y = g.leaf(labels);
            let loss = loss_perception_sup(&mut g, out.pred, y)?;
            l_p_sup = g.value(loss).item();
            check_finite(l_p_sup, "perception")?;
            let grads = g.backward(loss)?;
            opt_sup.step(&mut shared.params, &grads)?;
        }

        if cfg.pi_enabled {
            gamma = pi.update(l_d);
        }
        log.rows.push(TrainLogRow {
            step,
            l_p_sup,
            l_d,
            l_e: l_conf,
            gamma,
            u: pi.u(),
            integral: pi.integral(),
        });
    }
    Ok(AdtOutcome {
        module: shared,
        discriminator: disc,
        log,
    })
}

// ---------------------------------------------------------------------------
// control training

#[derive(Clone, Debug)]
pub struct ControlTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
}

impl Default for ControlTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 64,
            lr_start: 0.01,
            lr_end: 0.001,
            seed: 0,
        }
    }
}

pub struct ControlTrainResult {
    pub module: ControlModule,
    pub epoch_losses: Vec<f64>,
}

/// Supervised control training on Theta-v pairs from simulated
/// trajectories; the learning rate decays geometrically across epochs.
pub fn train_control(
    arch: &ArchProfile,
    dataset: &ControlDataset,
    cfg: &ControlTrainConfig,
) -> Result<ControlTrainResult> {
    let mut pairs: Vec<([f64; 10], [f64; 7])> = Vec::with_capacity(dataset.frame_count());
    for t in &dataset.trajectories {
        for f in &t.frames {
            let mut theta = [0.0; 10];
            theta[..3].copy_from_slice(&t.target_norm);
            theta[3..].copy_from_slice(&f.q_norm);
            pairs.push((theta, f.v));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("train_control"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut module = ControlModule::new(arch, "ctl", &mut rng)?;
    let mut opt = RmsProp::new(cfg.lr_start);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // geometric decay from lr_start to lr_end over the epochs
        let frac = if cfg.epochs > 1 {
            epoch as f64 / (cfg.epochs - 1) as f64
        } else {
            0.0
        };
        opt.lr = cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(frac);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch) {
            let mut theta = Vec::with_capacity(chunk.len() * 10);
            let mut v = Vec::with_capacity(chunk.len() * 7);
            for &i in chunk {
                theta.extend_from_slice(&pairs[i].0);
                v.extend_from_slice(&pairs[i].1);
            }
            let theta = Tensor::new(vec![chunk.len(), 10], theta)?;
            let v = Tensor::new(vec![chunk.len(), 7], v)?;
            let mut g = Graph::new();
            let pred = module.forward(&mut g, &theta)?;
            let target = g.leaf(v);
            let loss = loss_control(&mut g, pred, target)?;
            let loss_v = g.value(loss).item();
            check_finite(loss_v, "control")?;
            sum += loss_v;
            steps += 1;
            let grads = g.backward(loss)?;
            opt.step(&mut module.params, &grads)?;
        }
        epoch_losses.push(sum / steps as f64);
    }
    Ok(ControlTrainResult {
        module,
        epoch_losses,
    })
}

// ---------------------------------------------------------------------------
// end-to-end fine-tuning

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum E2eVariant {
    /// Control loss only, end-to-end, on image-velocity pairs (s = I).
    Naive,
    /// Weighted losses with L_p = L_p^Sup.
    WeightedSup,
    /// Weighted losses with L_p = L_p^Sup + gamma * L_E^Ad and a
    /// discriminator trained alongside.
    WeightedAdt,
}

#[derive(Clone, Debug)]
pub struct E2EConfig {
    pub beta: f64,
    pub steps: usize,
    pub lr: f64,
    /// Image-velocity pairs per step for L_c.
    pub batch_control: usize,
    /// Images per step for L_p^Sup.
    pub batch_perception: usize,
    /// Real fraction of the L_p^Sup batch.
    pub real_fraction: f64,
    /// Unlabeled reals per step for the adversarial terms (WeightedAdt).
    pub batch_unlabeled: usize,
    pub pi_enabled: bool,
    pub setpoint: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for E2EConfig {
    fn default() -> Self {
        Self {
            beta: 0.9,
            steps: 1000,
            lr: 0.001,
            batch_control: 16,
            batch_perception: 32,
            real_fraction: 0.5,
            batch_unlabeled: 16,
            pi_enabled: true,
            setpoint: DEFAULT_SETPOINT,
            seed: 0,
            augment: true,
        }
    }
}

/// Dataset handles for end-to-end fine-tuning; which are required depends
/// on the variant.
#[derive(Clone, Copy)]
pub struct E2eDatasets<'a> {
    /// Simulated trajectories: image-velocity and image-position pairs.
    pub control_sim: Option<&'a ControlDataset>,
    /// Real-domain trajectories with pseudo-inverse velocity labels
    /// (naive fine-tuning only).
    pub control_real: Option<&'a ControlDataset>,
    /// Labeled simulated images.
    pub perception_sim: Option<&'a PerceptionDataset>,
    /// Labeled real images.
    pub perception_real: Option<&'a PerceptionDataset>,
    /// Unlabeled real images for the adversarial terms.
    pub unlabeled_real: Option<&'a PerceptionDataset>,
}

fn require<'a, T>(opt: Option<&'a T>, what: &str) -> Result<&'a T> {
    opt.ok_or_else(|| Error::MissingDataset(format!("end-to-end fine-tuning needs {what}")))
}

/// Mixed perception-parameter gradient
/// `beta * d(L_p) + (1 - beta) * d(L_c^BN)`; exposed so the linearity
/// invariant is testable at the gradient level.
pub fn mix_perception_gradients(
    beta: f64,
    grads_p: &Gradients,
    grads_c: &Gradients,
    is_perception: impl Fn(&str) -> bool,
) -> Gradients {
    let mut out = Gradients::new();
    for (name, gp) in grads_p {
        if !is_perception(name) {
            continue;
        }
        let mut mixed = gp.clone();
        for v in mixed.data_mut() {
            *v *= beta;
        }
        if let Some(gc) = grads_c.get(name) {
            for (a, b) in mixed.data_mut().iter_mut().zip(gc.data()) {
                *a += (1.0 - beta) * b;
            }
        }
        out.insert(name.clone(), mixed);
    }
    // bottleneck gradients can reach perception parameters absent from the
    // perception graph only if the two passes use different batches; keep
    // them with weight (1 - beta)
    for (name, gc) in grads_c {
        if is_perception(name) && !out.contains_key(name) {
            let mut scaled = gc.clone();
            for v in scaled.data_mut() {
                *v *= 1.0 - beta;
            }
            out.insert(name.clone(), scaled);
        }
    }
    out
}

/// Sample (image, q, v, x*) rows from a control dataset's frames.
fn control_batch(
    ds: &ControlDataset,
    k: usize,
    do_augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let mut flat: Vec<(usize, usize)> = Vec::new();
    for (ti, t) in ds.trajectories.iter().enumerate() {
        for fi in 0..t.frames.len() {
            flat.push((ti, fi));
        }
    }
    if flat.is_empty() {
        return Err(Error::EmptyBatch("control_batch"));
    }
    let r = ds.resolution;
    let mut images = Vec::with_capacity(k * r * r * 3);
    let mut q = Vec::with_capacity(k * 7);
    let mut v = Vec::with_capacity(k * 7);
    let mut x = Vec::with_capacity(k * 3);
    for _ in 0..k {
        let (ti, fi) = flat[rng.gen_range(0..flat.len())];
        let t = &ds.trajectories[ti];
        if do_augment {
            images.extend_from_slice(augment(&t.image, ds.domain, rng).data());
        } else {
            images.extend_from_slice(t.image.data());
        }
        q.extend_from_slice(&t.frames[fi].q_norm);
        v.extend_from_slice(&t.frames[fi].v);
        x.extend_from_slice(&t.target_norm);
    }
    Ok((
        Tensor::new(vec![k, r, r, 3], images)?,
        Tensor::new(vec![k, 7], q)?,
        Tensor::new(vec![k, 7], v)?,
        Tensor::new(vec![k, 3], x)?,
    ))
}

pub struct E2eOutcome {
    pub network: CombinedNetwork,
    pub log: TrainLog,
}

/// End-to-end fine-tuning of the combined network.
///
/// Naive: the whole network follows the control-loss gradient. Weighted:
/// the control module follows d(L_c) while perception mixes
/// beta * d(L_p) + (1 - beta) * d(L_c^BN); the ADT variant adds the
/// adversarial term to L_p and trains a discriminator alongside.
pub fn finetune_e2e(
    network: &CombinedNetwork,
    datasets: &E2eDatasets,
    cfg: &E2EConfig,
    variant: E2eVariant,
) -> Result<E2eOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = network.clone();
    let p_prefix = net.perception.prefix.clone();
    let is_perception = |n: &str| n.starts_with(&format!("{p_prefix}."));
    let mut opt_p = RmsProp::new(cfg.lr);
    let mut opt_c = RmsProp::new(cfg.lr);
    let mut opt_d = RmsProp::new(cfg.lr);
    let mut log = TrainLog::default();

    let mut disc = match variant {
        E2eVariant::WeightedAdt => Some(Discriminator::new(
            &net.perception.arch,
            "disc",
            &mut rng,
        )?),
        _ => None,
    };
    let mut pi = PiController::new(cfg.setpoint);
    let mut gamma = if cfg.pi_enabled { pi.gamma() } else { 1.0 };

    // variant dataset requirements, checked up front
    match variant {
        E2eVariant::Naive => {
            require(datasets.control_real, "real image-velocity pairs")?;
            require(datasets.control_sim, "simulated trajectories")?;
        }
        E2eVariant::WeightedSup => {
            require(datasets.control_sim, "simulated trajectories")?;
            require(datasets.perception_real, "labeled real images")?;
        }
        E2eVariant::WeightedAdt => {
            require(datasets.control_sim, "simulated trajectories")?;
            require(datasets.perception_real, "labeled real images")?;
            require(datasets.perception_sim, "labeled simulated images")?;
            require(datasets.unlabeled_real, "unlabeled real images")?;
        }
    }

    for step in 0..cfg.steps {
        match variant {
            E2eVariant::Naive => {
                // 87.5% real image-velocity pairs, the rest simulated
                let real = datasets.control_real.expect("checked");
                let sim = datasets.control_sim.expect("checked");
                let k_real = ((cfg.batch_control as f64) * 0.875).round() as usize;
                let k_sim = cfg.batch_control - k_real;
                let (ir, qr, vr, _) = control_batch(real, k_real, cfg.augment, &mut rng)?;
                let r = real.resolution;
                let (images, q, v) = if k_sim == 0 {
                    (ir, qr, vr)
                } else {
                    let (is, qs, vs, _) = control_batch(sim, k_sim, cfg.augment, &mut rng)?;
                    let cat = |a: &Tensor, b: &Tensor, cols: Vec<usize>| {
                        let mut d = a.data().to_vec();
                        d.extend_from_slice(b.data());
                        let mut shape = vec![a.shape()[0] + b.shape()[0]];
                        shape.extend(cols);
                        Tensor::new(shape, d)
                    };
                    (
                        cat(&ir, &is, vec![r, r, 3])?,
                        cat(&qr, &qs, vec![7])?,
                        cat(&vr, &vs, vec![7])?,
                    )
                };

                let mut g = Graph::new();
                let x = g.leaf(images);
                let out = net.forward(&mut g, x, &q)?;
                let target = g.leaf(v);
                let loss = loss_control(&mut g, out.v_pred, target)?;
                let loss_v = g.value(loss).item();
                check_finite(loss_v, "control")?;
                let grads = g.backward(loss)?;
                opt_c.step(
                    &mut net.control.params,
                    &filter_grads(&grads, |n| !is_perception(n)),
                )?;
                opt_p.step(
                    &mut net.perception.params,
                    &filter_grads(&grads, is_perception),
                )?;
                log.rows.push(TrainLogRow {
                    step,
                    l_p_sup: f64::NAN,
                    l_d: f64::NAN,
                    l_e: loss_v,
                    gamma: f64::NAN,
                    u: f64::NAN,
                    integral: f64::NAN,
                });
            }
            E2eVariant::WeightedSup | E2eVariant::WeightedAdt => {
                let sim_control = datasets.control_sim.expect("checked");
                let real = datasets.perception_real.expect("checked");

                // control pass: L_c through the combined network
                let (ic, qc, vc, xc) =
                    control_batch(sim_control, cfg.batch_control, cfg.augment, &mut rng)?;
                let mut g = Graph::new();
                let x = g.leaf(ic.clone());
                let out = net.forward(&mut g, x, &qc)?;
                let target = g.leaf(vc);
                let l_c = loss_control(&mut g, out.v_pred, target)?;
                let l_c_v = g.value(l_c).item();
                check_finite(l_c_v, "control")?;
                let grads_c = g.backward(l_c)?;

                // perception pass: L_p on a mixed sim/real batch; the sim
                // image-position pairs come from the same control batch
                let k_real = ((cfg.batch_perception as f64) * cfg.real_fraction).round() as usize;
                let k_sim = cfg.batch_perception - k_real;
                let idx = sample_idxs(&mut rng, real.samples.len(), k_real);
                let real_images = gather_images(&real.samples, &idx, real, cfg.augment, &mut rng);
                let real_labels = gather_labels(&real.samples, &idx)?;
                let r = real.resolution;
                let mut images = real_images.data().to_vec();
                images.extend_from_slice(&ic.data()[..k_sim * r * r * 3]);
                let mut labels = real_labels.data().to_vec();
                labels.extend_from_slice(&xc.data()[..k_sim * 3]);
                let images = Tensor::new(vec![k_real + k_sim, r, r, 3], images)?;
                let labels = Tensor::new(vec![k_real + k_sim, 3], labels)?;

                let mut g = Graph::new();
                let x = g.leaf(images);
                let out = net.perception.forward(&mut g, x)?;
                let y = g.leaf(labels);
                let l_sup = loss_perception_sup(&mut g, out.pred, y)?;
                let l_sup_v = g.value(l_sup).item();
                check_finite(l_sup_v, "perception")?;

                let mut l_d_v = f64::NAN;
                let mut l_e_v = f64::NAN;
                let l_p = if let Some(d) = disc.as_mut() {
                    // adversarial pass: D on 32 sim (control + perception
                    // sim images) vs unlabeled reals, then gamma * L_E^Ad
                    // into the live encoder
                    let sim_ds = datasets.perception_sim.expect("checked");
                    let unl = datasets.unlabeled_real.expect("checked");
                    let extra = sample_idxs(&mut rng, sim_ds.samples.len(), cfg.batch_control);
                    let extra_images =
                        gather_images(&sim_ds.samples, &extra, sim_ds, cfg.augment, &mut rng);
                    let mut sim_images = ic.data()[..cfg.batch_control * r * r * 3].to_vec();
                    sim_images.extend_from_slice(extra_images.data());
                    let sim_images =
                        Tensor::new(vec![2 * cfg.batch_control, r, r, 3], sim_images)?;
                    let uidx = sample_idxs(&mut rng, unl.samples.len(), cfg.batch_unlabeled);
                    let unl_images =
                        gather_images(&unl.samples, &uidx, unl, cfg.augment, &mut rng);

                    let src_feats = encode_detached(&net.perception, &sim_images)?;
                    let tgt_feats = encode_detached(&net.perception, &unl_images)?;
                    // equal-size batches for L_D: subsample the sim side
                    let f = net.perception.arch.feature_dim();
                    let m = cfg.batch_unlabeled;
                    let src_sub =
                        Tensor::new(vec![m, f], src_feats.data()[..m * f].to_vec())?;
                    let mut gd = Graph::new();
                    let s = gd.leaf(src_sub);
                    let t = gd.leaf(tgt_feats);
                    let l_d = loss_discriminator(&mut gd, d, s, t)?;
                    l_d_v = gd.value(l_d).item();
                    check_finite(l_d_v, "discriminator")?;
                    let dgrads = gd.backward(l_d)?;
                    opt_d.step(&mut d.params, &dgrads)?;

                    // gamma * L_E^Ad added into the same perception graph
                    let xu = g.leaf(unl_images);
                    let unl_out = net.perception.forward(&mut g, xu)?;
                    let l_e = loss_encoder_adv(&mut g, d, unl_out.feature)?;
                    l_e_v = g.value(l_e).item();
                    check_finite(l_e_v, "encoder-adversarial")?;
                    let scaled = g.affine(l_e, gamma, 0.0);
                    g.add(l_sup, scaled)?
                } else {
                    l_sup
                };

                let grads_p = g.backward(l_p)?;
                let mixed = mix_perception_gradients(cfg.beta, &grads_p, &grads_c, is_perception);
                opt_p.step(&mut net.perception.params, &mixed)?;
                opt_c.step(
                    &mut net.control.params,
                    &filter_grads(&grads_c, |n| !is_perception(n)),
                )?;

                if disc.is_some() && cfg.pi_enabled {
                    gamma = pi.update(l_d_v);
                }
                log.rows.push(TrainLogRow {
                    step,
                    l_p_sup: l_sup_v,
                    l_d: l_d_v,
                    l_e: l_e_v,
                    gamma,
                    u: pi.u(),
                    integral: pi.integral(),
                });
            }
        }
    }
    Ok(E2eOutcome { network: net, log })
}
