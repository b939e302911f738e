//! Dataset factory and on-disk format.
//!
//! A dataset directory holds `manifest.json` (domain tag, counts, profile
//! snapshot, seed), one binary PPM (P6, 8-bit) per image with pixel values
//! mapped from [-1,1], and `labels.csv` where labels are present. The 8-bit
//! quantization is chosen so that save -> load -> save reproduces the bytes
//! exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::chain::{p_control_step, KinematicChain, DOF, REFERENCE_Q};
use super::render::render;
use super::scene::{randomize_scene, Domain, RenderProfile};
use super::normalize_pos;
use crate::numgrad::Tensor;
use crate::{Error, Result};

/// One rendered scene, optionally labelled with the normalized target
/// position (top centre of the target cuboid).
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionSample {
    pub image: Tensor,
    pub label: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionDataset {
    pub domain: Domain,
    pub resolution: usize,
    pub labeled: bool,
    pub seed: u64,
    pub profile: RenderProfile,
    pub samples: Vec<PerceptionSample>,
}

/// Per-step record of a control rollout; `q_norm` is the configuration
/// mapped into [0,1]^7 and `v` the raw velocity command in rad/s.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlFrame {
    pub q_norm: [f64; DOF],
    pub v: [f64; DOF],
}

/// One rollout: the scene is static, so a single image serves all frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub image: Tensor,
    pub target_norm: [f64; 3],
    pub q_star: [f64; DOF],
    pub frames: Vec<ControlFrame>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlDataset {
    pub domain: Domain,
    pub resolution: usize,
    pub seed: u64,
    pub profile: RenderProfile,
    pub trajectories: Vec<Trajectory>,
}

impl ControlDataset {
    pub fn frame_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.frames.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Proportional gain of the joint controller.
    pub gain: f64,
    /// Per-joint velocity clamp, rad/s.
    pub v_max: f64,
    /// Control period, 20 Hz.
    pub dt: f64,
    /// Rollout stops once max_i |q*_i - q_i| drops below this.
    pub joint_tol: f64,
    /// Wall-clock rollout timeout in seconds.
    pub timeout_s: f64,
    /// Std-dev of the normal draw around the reference initial config.
    pub q0_sigma: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            gain: 2.0,
            v_max: 0.5,
            dt: 1.0 / 20.0,
            joint_tol: 2e-3,
            timeout_s: 10.0,
            q0_sigma: 0.1,
        }
    }
}

/// Mix an item index into a base seed so each item gets its own stream and
/// the result does not depend on generation order.
pub fn item_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn make_perception_dataset(
    seed: u64,
    profile: &RenderProfile,
    n: usize,
    labeled: bool,
) -> Result<PerceptionDataset> {
    if n == 0 {
        return Err(Error::EmptyBatch("make_perception_dataset"));
    }
    let samples = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, i as u64));
            let scene = randomize_scene(&mut rng, profile);
            let image = render(&scene, profile.resolution);
            let label = labeled.then(|| normalize_pos(&scene.target_top_center()));
            PerceptionSample { image, label }
        })
        .collect();
    Ok(PerceptionDataset {
        domain: profile.domain,
        resolution: profile.resolution,
        labeled,
        seed,
        profile: profile.clone(),
        samples,
    })
}

/// Roll out one trajectory toward a freshly randomized scene.
///
/// The initial configuration is drawn normal around the reference pose; the
/// goal configuration comes from inverse kinematics on the target top
/// centre. IK failure is reported so the caller can resample.
pub fn generate_trajectory(
    rng: &mut impl Rng,
    chain: &KinematicChain,
    profile: &RenderProfile,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory> {
    let scene = randomize_scene(rng, profile);
    let target = scene.target_top_center();

    let noise = Normal::new(0.0, cfg.q0_sigma).expect("sigma >= 0");
    let mut q0 = REFERENCE_Q;
    for v in q0.iter_mut() {
        *v += noise.sample(rng);
    }
    chain.clamp_limits(&mut q0);

    let q_star = chain.inverse(&target, &q0)?;

    let max_steps = (cfg.timeout_s / cfg.dt).round() as usize;
    let mut q = q0;
    let mut frames = Vec::new();
    for _ in 0..max_steps {
        let err = (0..DOF).map(|i| (q_star[i] - q[i]).abs()).fold(0.0, f64::max);
        if err < cfg.joint_tol {
            break;
        }
        let v = p_control_step(&q, &q_star, cfg.gain, cfg.v_max);
        frames.push(ControlFrame {
            q_norm: chain.normalize_q(&q),
            v,
        });
        for i in 0..DOF {
            q[i] += v[i] * cfg.dt;
        }
    }

    Ok(Trajectory {
        image: render(&scene, profile.resolution),
        target_norm: normalize_pos(&target),
        q_star,
        frames,
    })
}

pub fn make_control_dataset(
    seed: u64,
    profile: &RenderProfile,
    chain: &KinematicChain,
    n_trajectories: usize,
    cfg: &TrajectoryConfig,
) -> Result<ControlDataset> {
    if n_trajectories == 0 {
        return Err(Error::EmptyBatch("make_control_dataset"));
    }
    const MAX_ATTEMPTS: usize = 50;
    let mut trajectories = Vec::with_capacity(n_trajectories);
    for i in 0..n_trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, i as u64));
        let mut attempts = 0;
        let traj = loop {
            match generate_trajectory(&mut rng, chain, profile, cfg) {
                Ok(t) => break t,
                Err(e) => {
                    attempts += 1;
                    eprintln!("trajectory {i}: resampling after IK failure ({e})");
                    if attempts >= MAX_ATTEMPTS {
                        return Err(Error::Unreachable(
                            [0.0, 0.0, 0.0],
                            format!("trajectory {i}: {MAX_ATTEMPTS} IK failures in a row"),
                        ));
                    }
                }
            }
        };
        trajectories.push(traj);
    }
    Ok(ControlDataset {
        domain: profile.domain,
        resolution: profile.resolution,
        seed,
        profile: profile.clone(),
        trajectories,
    })
}

// ---------------------------------------------------------------------------
// on-disk format

fn quantize(v: f64) -> u8 {
    (((v + 1.0) / 2.0 * 255.0).round()).clamp(0.0, 255.0) as u8
}

fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = Vec::with_capacity(h * w * 3 + 32);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    out.extend(image.data().iter().map(|&v| quantize(v)));
    fs::write(path, out)?;
    Ok(())
}

fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let bad = |details: &str| Error::Format {
        path: path.display().to_string(),
        details: details.to_string(),
    };
    // header: three whitespace-separated fields after the magic
    let mut pos = 0;
    let mut fields = Vec::new();
    let mut cur = Vec::new();
    while pos < bytes.len() && fields.len() < 4 {
        let b = bytes[pos];
        pos += 1;
        if b.is_ascii_whitespace() {
            if !cur.is_empty() {
                fields.push(String::from_utf8_lossy(&cur).into_owned());
                cur.clear();
            }
            // single whitespace byte terminates the header after maxval
            if fields.len() == 4 {
                break;
            }
        } else {
            cur.push(b);
        }
    }
    if fields.len() != 4 || fields[0] != "P6" {
        return Err(bad("expected binary PPM (P6) header"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("expected maxval 255"));
    }
    let expect = w * h * 3;
    if bytes.len() - pos != expect {
        return Err(bad(&format!(
            "expected {expect} pixel bytes, found {}",
            bytes.len() - pos
        )));
    }
    let data = bytes[pos..].iter().map(|&b| dequantize(b)).collect();
    Ok(Tensor::new(vec![h, w, 3], data).expect("sized above"))
}

#[derive(Serialize, Deserialize)]
struct PerceptionManifest {
    kind: String,
    domain: Domain,
    resolution: usize,
    count: usize,
    labeled: bool,
    seed: u64,
    profile: RenderProfile,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryMeta {
    frames: usize,
    target_norm: [f64; 3],
    q_star: [f64; DOF],
}

#[derive(Serialize, Deserialize)]
struct ControlManifest {
    kind: String,
    domain: Domain,
    resolution: usize,
    seed: u64,
    profile: RenderProfile,
    trajectories: Vec<TrajectoryMeta>,
}

fn image_name(index: usize) -> String {
    format!("img_{index:05}.ppm")
}

fn read_manifest_kind(dir: &Path) -> Result<serde_json::Value> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingDataset(dir.display().to_string()));
    }
    Ok(serde_json::from_slice(&fs::read(&path)?)?)
}

pub fn save_perception_dataset(ds: &PerceptionDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = PerceptionManifest {
        kind: "perception".to_string(),
        domain: ds.domain,
        resolution: ds.resolution,
        count: ds.samples.len(),
        labeled: ds.labeled,
        seed: ds.seed,
        profile: ds.profile.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    for (i, s) in ds.samples.iter().enumerate() {
        write_ppm(&dir.join(image_name(i)), &s.image)?;
    }
    if ds.labeled {
        let mut csv = Vec::new();
        writeln!(csv, "index,x1,x2,x3").expect("vec write");
        for (i, s) in ds.samples.iter().enumerate() {
            let l = s.label.ok_or_else(|| Error::Format {
                path: dir.display().to_string(),
                details: format!("sample {i} missing label in labeled dataset"),
            })?;
            writeln!(csv, "{i},{},{},{}", l[0], l[1], l[2]).expect("vec write");
        }
        fs::write(dir.join("labels.csv"), csv)?;
    }
    Ok(())
}

pub fn load_perception_dataset(dir: &Path) -> Result<PerceptionDataset> {
    let manifest: PerceptionManifest = serde_json::from_value(read_manifest_kind(dir)?)?;
    if manifest.kind != "perception" {
        return Err(Error::Format {
            path: dir.join("manifest.json").display().to_string(),
            details: format!("expected perception dataset, found kind `{}`", manifest.kind),
        });
    }
    let mut labels: Vec<Option<[f64; 3]>> = vec![None; manifest.count];
    if manifest.labeled {
        let path = dir.join("labels.csv");
        let text = fs::read_to_string(&path)?;
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = |d: String| Error::Format {
                path: path.display().to_string(),
                details: d,
            };
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", cols.len())));
            }
            let idx: usize = cols[0]
                .parse()
                .map_err(|_| bad(format!("bad index `{}`", cols[0])))?;
            let mut l = [0.0; 3];
            for k in 0..3 {
                l[k] = cols[k + 1]
                    .parse()
                    .map_err(|_| bad(format!("bad float `{}`", cols[k + 1])))?;
            }
            *labels.get_mut(idx).ok_or_else(|| bad(format!("index {idx} out of range")))? =
                Some(l);
        }
    }
    let mut samples = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let image = read_ppm(&dir.join(image_name(i)))?;
        if manifest.labeled && labels[i].is_none() {
            return Err(Error::Format {
                path: dir.join("labels.csv").display().to_string(),
                details: format!("missing label row for sample {i}"),
            });
        }
        samples.push(PerceptionSample {
            image,
            label: labels[i],
        });
    }
    Ok(PerceptionDataset {
        domain: manifest.domain,
        resolution: manifest.resolution,
        labeled: manifest.labeled,
        seed: manifest.seed,
        profile: manifest.profile,
        samples,
    })
}

pub fn save_control_dataset(ds: &ControlDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = ControlManifest {
        kind: "control".to_string(),
        domain: ds.domain,
        resolution: ds.resolution,
        seed: ds.seed,
        profile: ds.profile.clone(),
        trajectories: ds
            .trajectories
            .iter()
            .map(|t| TrajectoryMeta {
                frames: t.frames.len(),
                target_norm: t.target_norm,
                q_star: t.q_star,
            })
            .collect(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    let mut csv = Vec::new();
    writeln!(
        csv,
        "traj,frame,x1,x2,x3,q1,q2,q3,q4,q5,q6,q7,v1,v2,v3,v4,v5,v6,v7"
    )
    .expect("vec write");
    for (i, t) in ds.trajectories.iter().enumerate() {
        write_ppm(&dir.join(image_name(i)), &t.image)?;
        for (k, f) in t.frames.iter().enumerate() {
            write!(csv, "{i},{k}").expect("vec write");
            for v in t.target_norm {
                write!(csv, ",{v}").expect("vec write");
            }
            for v in f.q_norm {
                write!(csv, ",{v}").expect("vec write");
            }
            for v in f.v {
                write!(csv, ",{v}").expect("vec write");
            }
            writeln!(csv).expect("vec write");
        }
    }
    fs::write(dir.join("labels.csv"), csv)?;
    Ok(())
}

pub fn load_control_dataset(dir: &Path) -> Result<ControlDataset> {
    let manifest: ControlManifest = serde_json::from_value(read_manifest_kind(dir)?)?;
    if manifest.kind != "control" {
        return Err(Error::Format {
            path: dir.join("manifest.json").display().to_string(),
            details: format!("expected control dataset, found kind `{}`", manifest.kind),
        });
    }
    let path = dir.join("labels.csv");
    let text = fs::read_to_string(&path)?;
    let bad = |d: String| Error::Format {
        path: path.display().to_string(),
        details: d,
    };
    let mut frames: Vec<Vec<ControlFrame>> =
        manifest.trajectories.iter().map(|_| Vec::new()).collect();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 19 {
            return Err(bad(format!("expected 19 columns, got {}", cols.len())));
        }
        let traj: usize = cols[0]
            .parse()
            .map_err(|_| bad(format!("bad trajectory index `{}`", cols[0])))?;
        if traj >= frames.len() {
            return Err(bad(format!("trajectory index {traj} out of range")));
        }
        let mut vals = [0.0f64; 17];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = cols[k + 2]
                .parse()
                .map_err(|_| bad(format!("bad float `{}`", cols[k + 2])))?;
        }
        let mut q_norm = [0.0; DOF];
        let mut v = [0.0; DOF];
        q_norm.copy_from_slice(&vals[3..10]);
        v.copy_from_slice(&vals[10..17]);
        frames[traj].push(ControlFrame { q_norm, v });
    }
    let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
    for (i, (meta, frames)) in manifest.trajectories.iter().zip(frames).enumerate() {
        if frames.len() != meta.frames {
            return Err(bad(format!(
                "trajectory {i}: manifest says {} frames, csv has {}",
                meta.frames,
                frames.len()
            )));
        }
        trajectories.push(Trajectory {
            image: read_ppm(&dir.join(image_name(i)))?,
            target_norm: meta.target_norm,
            q_star: meta.q_star,
            frames,
        });
    }
    Ok(ControlDataset {
        domain: manifest.domain,
        resolution: manifest.resolution,
        seed: manifest.seed,
        profile: manifest.profile,
        trajectories,
    })
}
