//! Command-line pipeline: dataset generation, training, evaluation and
//! report emission, all driven by [`RunConfig`] plus flag overrides
//! (flags win).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    emit_report, error_map, eval_perception, eval_reach, held_out_test_set, ErrorMap, EvalConfig,
    PerceptionSource, Report, Scenario,
};
use crate::config::RunConfig;
use crate::policynet::{ArchProfile, CombinedNetwork, ControlModule, PerceptionModule};
use crate::simworld::{
    load_control_dataset, load_perception_dataset, make_control_dataset, make_perception_dataset,
    save_control_dataset, save_perception_dataset, Domain, KinematicChain, PerceptionDataset,
    RenderProfile, TrajectoryConfig,
};
use crate::transfer::{
    adapt_adt, adapt_confusion, adapt_supervised, finetune_e2e, pretrain_perception,
    train_control, AdaptConfig, AdtConfig, ControlTrainConfig, E2EConfig, E2eDatasets,
    E2eVariant, PretrainConfig, TrainLog,
};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "simreach",
    about = "Sim-to-real transfer of visuo-motor reaching policies",
    version
)]
pub struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Architecture profile: desk or paper.
    #[arg(long, global = true)]
    pub arch: Option<String>,
    /// Data root (default $ADT_REACH_HOME or ./data).
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,
    /// Worker cap for parallel evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a dataset under the chosen render profile.
    Gen(GenArgs),
    /// Train or adapt a module.
    Train {
        #[command(subcommand)]
        procedure: TrainCmd,
    },
    /// Evaluate checkpoints on benchmark scenarios or budget grids.
    Eval(EvalArgs),
    /// Re-emit report files from saved evaluation results.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// perception | control
    #[arg(long)]
    pub kind: Option<String>,
    /// sim | pseudo-real
    #[arg(long)]
    pub domain: Option<String>,
    /// Number of perception images.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of control trajectories.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Generate images without position labels.
    #[arg(long)]
    pub unlabeled: bool,
    /// Output directory (default: derived under the data root).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum TrainCmd {
    /// Supervised pretraining of the source perception module on SIM data.
    Pretrain {
        /// Labeled SIM perception dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Supervised adaptation on labeled PSEUDO_REAL data (87.5/12.5 mix).
    AdaptSupervised {
        /// Source perception checkpoint.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adversarial discriminative adaptation with PI-regulated balance.
    AdaptAdt {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        /// Labeled PSEUDO_REAL dataset; omit for unsupervised ADT.
        #[arg(long)]
        real_labeled: Option<PathBuf>,
        #[arg(long)]
        real_unlabeled: PathBuf,
        /// Use only the first N labeled samples.
        #[arg(long)]
        labeled: Option<usize>,
        /// Use only the first N unlabeled samples.
        #[arg(long)]
        unlabeled: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Disable the PI controller (fixed gamma = 1).
        #[arg(long)]
        no_pi: bool,
        #[arg(long)]
        setpoint: Option<f64>,
        #[arg(long)]
        fixed_gamma: Option<f64>,
    },
    /// Shared-encoder domain-confusion ablation.
    AdaptConfusion {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        real_labeled: Option<PathBuf>,
        #[arg(long)]
        real_unlabeled: PathBuf,
        #[arg(long)]
        labeled: Option<usize>,
        #[arg(long)]
        unlabeled: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the control module on simulated trajectories.
    TrainControl {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// End-to-end fine-tuning of a combined network.
    FinetuneE2e {
        /// naive | weighted | weighted-adt
        #[arg(long)]
        variant: String,
        #[arg(long)]
        perception: PathBuf,
        #[arg(long)]
        control: PathBuf,
        #[arg(long)]
        control_sim: Option<PathBuf>,
        #[arg(long)]
        control_real: Option<PathBuf>,
        #[arg(long)]
        perception_sim: Option<PathBuf>,
        #[arg(long)]
        perception_real: Option<PathBuf>,
        #[arg(long)]
        unlabeled_real: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
    },
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Perception checkpoint; omit with --ground-truth.
    #[arg(long)]
    pub perception: Option<PathBuf>,
    /// Control checkpoint (required for scenario rollouts).
    #[arg(long)]
    pub control: Option<PathBuf>,
    /// Inject ground-truth positions at the bottleneck.
    #[arg(long)]
    pub ground_truth: bool,
    /// single-object | clutter-seen | clutter-novel | occluded | moving-target
    #[arg(long)]
    pub scenario: Option<String>,
    /// Budget grid: adt | supervised.
    #[arg(long)]
    pub grid: Option<String>,
    /// Datasets for grid evaluation.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    #[arg(long)]
    pub real_labeled: Option<PathBuf>,
    #[arg(long)]
    pub real_unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Report root (default <data-root>/reports).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// results.json written by a previous eval run.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// plumbing

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(arch) = &cli.arch {
        cfg.arch = arch.clone();
    }
    if let Some(root) = &cli.data_root {
        cfg.data_root = Some(root.clone());
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = Some(jobs);
    }
    Ok(cfg.resolve())
}

fn parse_domain(s: &str) -> Result<Domain> {
    match s {
        "sim" => Ok(Domain::Sim),
        "pseudo-real" | "real" => Ok(Domain::PseudoReal),
        other => Err(Error::Config(format!(
            "unknown domain `{other}` (expected sim or pseudo-real)"
        ))),
    }
}

fn profile_for(domain: Domain, resolution: usize) -> RenderProfile {
    match domain {
        Domain::Sim => RenderProfile::sim(resolution),
        Domain::PseudoReal => RenderProfile::pseudo_real(resolution),
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::MissingDataset(path.display().to_string()));
    }
    Ok(())
}

fn load_perception(path: &Path) -> Result<crate::simworld::PerceptionDataset> {
    require_dir(path)?;
    load_perception_dataset(path)
}

fn load_control(path: &Path) -> Result<crate::simworld::ControlDataset> {
    require_dir(path)?;
    load_control_dataset(path)
}

/// First `n` samples of a seed-partitioned dataset (budget truncation).
fn take_samples(ds: &PerceptionDataset, n: Option<usize>) -> Result<PerceptionDataset> {
    let mut out = ds.clone();
    if let Some(n) = n {
        if n > out.samples.len() {
            return Err(Error::Config(format!(
                "budget {n} exceeds dataset size {}",
                out.samples.len()
            )));
        }
        out.samples.truncate(n);
    }
    Ok(out)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    std::fs::write(dir.join("run_config.json"), text)?;
    Ok(())
}

fn write_log(log: &TrainLog, ckpt: &Path) -> Result<()> {
    std::fs::write(ckpt.with_extension("log.csv"), log.to_csv())?;
    Ok(())
}

fn checkpoint_parent(out: &Path) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn check_arch(cfg: &RunConfig, arch: &ArchProfile, what: &str) -> Result<()> {
    if cfg.arch != arch.name {
        return Err(Error::ArchMismatch(format!(
            "{what} checkpoint uses profile `{}` but the run is configured for `{}`",
            arch.name, cfg.arch
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// commands

fn cmd_gen(cfg: &RunConfig, args: &GenArgs) -> Result<PathBuf> {
    let arch = cfg.arch_profile()?;
    let kind = args
        .kind
        .clone()
        .or_else(|| cfg.kind.clone())
        .ok_or_else(|| Error::Config("gen needs --kind perception|control".to_string()))?;
    let domain = parse_domain(
        args.domain
            .clone()
            .or_else(|| cfg.domain.clone())
            .unwrap_or_else(|| "sim".to_string())
            .as_str(),
    )?;
    let profile = profile_for(domain, arch.resolution);
    let labeled = !args.unlabeled && cfg.labeled;
    let domain_tag = match domain {
        Domain::Sim => "sim",
        Domain::PseudoReal => "real",
    };
    match kind.as_str() {
        "perception" => {
            let n = args
                .n
                .or(cfg.n)
                .ok_or_else(|| Error::Config("gen --kind perception needs --n".to_string()))?;
            if n == 0 {
                return Err(Error::Config("--n must be positive".to_string()));
            }
            let dir = args.out.clone().unwrap_or_else(|| {
                cfg.data_root().join(format!(
                    "perception_{domain_tag}_{n}_{}_s{}",
                    if labeled { "labeled" } else { "unlabeled" },
                    cfg.seed
                ))
            });
            let ds = make_perception_dataset(cfg.seed, &profile, n, labeled)?;
            save_perception_dataset(&ds, &dir)?;
            echo_config(cfg, &dir)?;
            Ok(dir)
        }
        "control" => {
            let n = args.trajectories.or(cfg.trajectories).ok_or_else(|| {
                Error::Config("gen --kind control needs --trajectories".to_string())
            })?;
            if n == 0 {
                return Err(Error::Config("--trajectories must be positive".to_string()));
            }
            let dir = args.out.clone().unwrap_or_else(|| {
                cfg.data_root()
                    .join(format!("control_{domain_tag}_{n}_s{}", cfg.seed))
            });
            let chain = KinematicChain::default_seven_dof();
            let ds =
                make_control_dataset(cfg.seed, &profile, &chain, n, &TrajectoryConfig::default())?;
            save_control_dataset(&ds, &dir)?;
            echo_config(cfg, &dir)?;
            Ok(dir)
        }
        other => Err(Error::Config(format!(
            "unknown dataset kind `{other}` (expected perception or control)"
        ))),
    }
}

fn cmd_train(cfg: &RunConfig, procedure: &TrainCmd) -> Result<PathBuf> {
    let arch = cfg.arch_profile()?;
    match procedure {
        TrainCmd::Pretrain { data, out, epochs } => {
            let ds = load_perception(data)?;
            let mut pc = PretrainConfig {
                seed: cfg.seed,
                augment: cfg.augment,
                ..PretrainConfig::default()
            };
            if let Some(e) = epochs.or(cfg.epochs) {
                pc.epochs = e;
            }
            if let Some(lr) = cfg.lr {
                pc.lr = lr;
            }
            if let Some(b) = cfg.batch {
                pc.batch = b;
            }
            let result = pretrain_perception(&arch, &ds, &pc)?;
            checkpoint_parent(out)?;
            result.module.save(out)?;
            Ok(out.clone())
        }
        TrainCmd::AdaptSupervised {
            source,
            sim,
            real,
            out,
            epochs,
        } => {
            let src = PerceptionModule::load(source)?;
            check_arch(cfg, &src.arch, "perception")?;
            let sim_ds = load_perception(sim)?;
            let real_ds = load_perception(real)?;
            let mut ac = AdaptConfig {
                seed: cfg.seed,
                augment: cfg.augment,
                ..AdaptConfig::default()
            };
            if let Some(e) = epochs.or(cfg.epochs) {
                ac.epochs = e;
            }
            let result = adapt_supervised(&src, &sim_ds, &real_ds, &ac)?;
            checkpoint_parent(out)?;
            result.save(out)?;
            Ok(out.clone())
        }
        TrainCmd::AdaptAdt {
            source,
            sim,
            real_labeled,
            real_unlabeled,
            labeled,
            unlabeled,
            out,
            steps,
            no_pi,
            setpoint,
            fixed_gamma,
        } => {
            let src = PerceptionModule::load(source)?;
            check_arch(cfg, &src.arch, "perception")?;
            let sim_ds = load_perception(sim)?;
            let labeled_ds = match real_labeled {
                Some(path) => Some(take_samples(&load_perception(path)?, *labeled)?),
                None => None,
            };
            let unlabeled_ds = take_samples(&load_perception(real_unlabeled)?, *unlabeled)?;
            let mut tc = AdtConfig {
                seed: cfg.seed,
                augment: cfg.augment,
                pi_enabled: cfg.pi && !*no_pi,
                setpoint: setpoint.unwrap_or(cfg.setpoint),
                fixed_gamma: fixed_gamma.unwrap_or(cfg.fixed_gamma),
                ..AdtConfig::default()
            };
            if let Some(s) = steps.or(cfg.steps) {
                tc.steps = s;
            }
            if let Some(lr) = cfg.lr {
                tc.lr = lr;
            }
            let result = adapt_adt(&src, &sim_ds, labeled_ds.as_ref(), &unlabeled_ds, &tc)?;
            checkpoint_parent(out)?;
            result.module.save(out)?;
            write_log(&result.log, out)?;
            Ok(out.clone())
        }
        TrainCmd::AdaptConfusion {
            source,
            sim,
            real_labeled,
            real_unlabeled,
            labeled,
            unlabeled,
            out,
            steps,
        } => {
            let src = PerceptionModule::load(source)?;
            check_arch(cfg, &src.arch, "perception")?;
            let sim_ds = load_perception(sim)?;
            let labeled_ds = match real_labeled {
                Some(path) => Some(take_samples(&load_perception(path)?, *labeled)?),
                None => None,
            };
            let unlabeled_ds = take_samples(&load_perception(real_unlabeled)?, *unlabeled)?;
            let mut tc = AdtConfig {
                seed: cfg.seed,
                augment: cfg.augment,
                ..AdtConfig::default()
            };
            if let Some(s) = steps.or(cfg.steps) {
                tc.steps = s;
            }
            let result = adapt_confusion(&src, &sim_ds, labeled_ds.as_ref(), &unlabeled_ds, &tc)?;
            checkpoint_parent(out)?;
            result.module.save(out)?;
            write_log(&result.log, out)?;
            Ok(out.clone())
        }
        TrainCmd::TrainControl { data, out, epochs } => {
            let ds = load_control(data)?;
            let mut tc = ControlTrainConfig {
                seed: cfg.seed,
                ..ControlTrainConfig::default()
            };
            if let Some(e) = epochs.or(cfg.epochs) {
                tc.epochs = e;
            }
            let result = train_control(&arch, &ds, &tc)?;
            checkpoint_parent(out)?;
            result.module.save(out)?;
            Ok(out.clone())
        }
        TrainCmd::FinetuneE2e {
            variant,
            perception,
            control,
            control_sim,
            control_real,
            perception_sim,
            perception_real,
            unlabeled_real,
            out,
            steps,
            beta,
        } => {
            let variant = match variant.as_str() {
                "naive" => E2eVariant::Naive,
                "weighted" => E2eVariant::WeightedSup,
                "weighted-adt" => E2eVariant::WeightedAdt,
                other => {
                    return Err(Error::Config(format!(
                        "unknown variant `{other}` (expected naive, weighted or weighted-adt)"
                    )))
                }
            };
            let network = CombinedNetwork {
                perception: PerceptionModule::load(perception)?,
                control: ControlModule::load(control)?,
            };
            check_arch(cfg, &network.perception.arch, "perception")?;
            check_arch(cfg, &network.control.arch, "control")?;
            let control_sim = control_sim.as_ref().map(|p| load_control(p)).transpose()?;
            let control_real = control_real.as_ref().map(|p| load_control(p)).transpose()?;
            let perception_sim = perception_sim
                .as_ref()
                .map(|p| load_perception(p))
                .transpose()?;
            let perception_real = perception_real
                .as_ref()
                .map(|p| load_perception(p))
                .transpose()?;
            let unlabeled_real = unlabeled_real
                .as_ref()
                .map(|p| load_perception(p))
                .transpose()?;
            let ds = E2eDatasets {
                control_sim: control_sim.as_ref(),
                control_real: control_real.as_ref(),
                perception_sim: perception_sim.as_ref(),
                perception_real: perception_real.as_ref(),
                unlabeled_real: unlabeled_real.as_ref(),
            };
            let mut ec = E2EConfig {
                seed: cfg.seed,
                augment: cfg.augment,
                pi_enabled: cfg.pi,
                setpoint: cfg.setpoint,
                beta: beta.unwrap_or(cfg.beta),
                ..E2EConfig::default()
            };
            if let Some(s) = steps.or(cfg.steps) {
                ec.steps = s;
            }
            let result = finetune_e2e(&network, &ds, &ec, variant)?;
            checkpoint_parent(out)?;
            result.network.save(out)?;
            write_log(&result.log, out)?;
            Ok(out.clone())
        }
    }
}

fn scenario_eval(cfg: &RunConfig, args: &EvalArgs, scenario: Scenario) -> Result<Report> {
    let control_path = args.control.as_ref().ok_or_else(|| {
        Error::Config("scenario evaluation needs --control <checkpoint>".to_string())
    })?;
    let control = ControlModule::load(control_path)?;
    check_arch(cfg, &control.arch, "control")?;
    let perception = match (&args.perception, args.ground_truth) {
        (_, true) => None,
        (Some(path), false) => {
            let p = PerceptionModule::load(path)?;
            check_arch(cfg, &p.arch, "perception")?;
            if p.arch != control.arch {
                return Err(Error::ArchMismatch(
                    "perception and control checkpoints use different profiles".to_string(),
                ));
            }
            Some(p)
        }
        (None, false) => {
            return Err(Error::Config(
                "eval needs --perception <checkpoint> or --ground-truth".to_string(),
            ))
        }
    };
    let chain = KinematicChain::default_seven_dof();
    let mut ec = EvalConfig {
        scenario,
        seed: cfg.seed,
        resolution: control.arch.resolution,
        ..EvalConfig::default()
    };
    if let Some(t) = args.trials.or(cfg.trials) {
        ec.n_trials = t;
    }
    let source = match &perception {
        Some(p) => PerceptionSource::Network(p),
        None => PerceptionSource::GroundTruth,
    };
    let outcome = eval_reach(&source, &control, &chain, &ec)?;
    Ok(Report {
        metrics: vec![
            ("success_rate".to_string(), outcome.success_rate),
            ("median_cm".to_string(), outcome.stats.median),
            ("q3_cm".to_string(), outcome.stats.q3),
            ("trials".to_string(), outcome.results.len() as f64),
        ],
        error_maps: vec![],
        boxplots: vec![(
            scenario.name().to_string(),
            vec![(scenario.name().to_string(), outcome.stats.clone())],
        )],
        manifest: serde_json::to_value(cfg)?,
    })
}

fn grid_eval(cfg: &RunConfig, args: &EvalArgs, grid: &str) -> Result<Report> {
    let arch = cfg.arch_profile()?;
    let sim = load_perception(args.sim.as_ref().ok_or_else(|| {
        Error::Config("grid evaluation needs --sim <labeled sim dataset>".to_string())
    })?)?;
    let real = load_perception(args.real_labeled.as_ref().ok_or_else(|| {
        Error::Config("grid evaluation needs --real-labeled <dataset>".to_string())
    })?)?;
    let test = held_out_test_set(arch.resolution)?;
    crate::bench::assert_disjoint_training_seed(cfg.seed)?;

    let map = match grid {
        "supervised" => {
            // Fig. 5 analog: sim pretraining budget x real label budget
            let rows = or_default(&cfg.sim_budgets, &[400, 1500, 3000]);
            let cols = or_default(&cfg.real_budgets, &[48, 93, 186]);
            let cells = error_map(
                |n_sim, n_real| {
                    let sim_n = take_samples(&sim, Some(n_sim))?;
                    let real_n = take_samples(&real, Some(n_real))?;
                    let pc = PretrainConfig {
                        seed: cfg.seed,
                        epochs: cfg.epochs.unwrap_or(30),
                        augment: cfg.augment,
                        ..PretrainConfig::default()
                    };
                    let src = pretrain_perception(&arch, &sim_n, &pc)?.module;
                    let ac = AdaptConfig {
                        seed: cfg.seed,
                        augment: cfg.augment,
                        ..AdaptConfig::default()
                    };
                    let adapted = adapt_supervised(&src, &sim_n, &real_n, &ac)?;
                    eval_perception(&adapted, &test)
                },
                &rows,
                &cols,
            )?;
            ErrorMap {
                row_label: "sim images".to_string(),
                col_label: "labeled real images".to_string(),
                row_budgets: rows,
                col_budgets: cols,
                cells,
            }
        }
        "adt" => {
            // Fig. 6 analog: unlabeled budget x labeled budget from one
            // pretrained source
            let source = PerceptionModule::load(args.perception.as_ref().ok_or_else(|| {
                Error::Config("--grid adt needs --perception <source checkpoint>".to_string())
            })?)?;
            check_arch(cfg, &source.arch, "perception")?;
            let unlabeled = load_perception(args.real_unlabeled.as_ref().ok_or_else(|| {
                Error::Config("--grid adt needs --real-unlabeled <dataset>".to_string())
            })?)?;
            let rows = or_default(&cfg.unlabeled_budgets, &[0, 93, 186]);
            let cols = or_default(&cfg.real_budgets, &[0, 48, 93]);
            let cells = error_map(
                |n_unlabeled, n_labeled| {
                    let labeled_ds = if n_labeled == 0 {
                        None
                    } else {
                        Some(take_samples(&real, Some(n_labeled))?)
                    };
                    let adapted = if n_unlabeled == 0 {
                        // bottom row: pure supervised adaptation
                        match &labeled_ds {
                            None => source.clone(),
                            Some(l) => {
                                let ac = AdaptConfig {
                                    seed: cfg.seed,
                                    augment: cfg.augment,
                                    ..AdaptConfig::default()
                                };
                                adapt_supervised(&source, &sim, l, &ac)?
                            }
                        }
                    } else {
                        let unl = take_samples(&unlabeled, Some(n_unlabeled))?;
                        let tc = AdtConfig {
                            seed: cfg.seed,
                            augment: cfg.augment,
                            pi_enabled: cfg.pi,
                            setpoint: cfg.setpoint,
                            steps: cfg.steps.unwrap_or(2000),
                            ..AdtConfig::default()
                        };
                        adapt_adt(&source, &sim, labeled_ds.as_ref(), &unl, &tc)?.module
                    };
                    eval_perception(&adapted, &test)
                },
                &rows,
                &cols,
            )?;
            ErrorMap {
                row_label: "unlabeled real images".to_string(),
                col_label: "labeled real images".to_string(),
                row_budgets: rows,
                col_budgets: cols,
                cells,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown grid `{other}` (expected adt or supervised)"
            )))
        }
    };
    Ok(Report {
        metrics: vec![],
        error_maps: vec![(grid.to_string(), map)],
        boxplots: vec![],
        manifest: serde_json::to_value(cfg)?,
    })
}

fn or_default(value: &[usize], default: &[usize]) -> Vec<usize> {
    if value.is_empty() {
        default.to_vec()
    } else {
        value.to_vec()
    }
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<PathBuf> {
    let scenario = args.scenario.clone().or_else(|| cfg.scenario.clone());
    let grid = args.grid.clone().or_else(|| cfg.grid.clone());
    let report = match (&scenario, &grid) {
        (Some(s), None) => scenario_eval(cfg, args, Scenario::parse(s)?)?,
        (None, Some(g)) => grid_eval(cfg, args, g)?,
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--scenario and --grid are mutually exclusive".to_string(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(
                "eval needs --scenario <name> or --grid <kind>".to_string(),
            ))
        }
    };
    let root = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.data_root().join("reports"));
    let dir = root.join(cfg.run_id());
    emit_report(&report, &dir)?;
    let mut results = serde_json::to_string_pretty(&report)?;
    results.push('\n');
    std::fs::write(dir.join("results.json"), results)?;
    Ok(dir)
}

fn cmd_report(args: &ReportArgs) -> Result<PathBuf> {
    let text = std::fs::read_to_string(&args.results).map_err(|e| Error::Format {
        path: args.results.display().to_string(),
        details: e.to_string(),
    })?;
    let report: Report = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: args.results.display().to_string(),
        details: e.to_string(),
    })?;
    emit_report(&report, &args.out)?;
    Ok(args.out.clone())
}

/// Dispatch a parsed invocation; prints the produced path on success.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = base_config(cli)?;
    if let Some(jobs) = cfg.jobs {
        // best effort: the global pool may already exist (e.g. in tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let path = match &cli.cmd {
        Cmd::Gen(args) => cmd_gen(&cfg, args)?,
        Cmd::Train { procedure } => cmd_train(&cfg, procedure)?,
        Cmd::Eval(args) => cmd_eval(&cfg, args)?,
        Cmd::Report(args) => cmd_report(args)?,
    };
    println!("{}", path.display());
    Ok(())
}
