//! Network definitions: perception (encoder + regressor), control,
//! discriminator and the combined end-to-end network.
//!
//! Modules own their parameters as named tensors; a forward pass registers
//! them on the caller's graph so gradients come back keyed by the same
//! names. Each module instance carries a `prefix` so several encoders can
//! share one graph without key collisions.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numgrad::{load_checkpoint, save_checkpoint, Graph, NodeId, Params, Tensor};
use crate::{Error, Result};

/// Architecture profile shared by all modules of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchProfile {
    pub name: String,
    pub resolution: usize,
    /// Output channels of each 3x3 conv layer, in order.
    pub conv_channels: Vec<usize>,
    /// Whether a 2x2 maxpool follows the conv layer at the same index.
    pub pool_after: Vec<bool>,
    /// Hidden widths of the perception regressor (ReLU), before the final
    /// 3-unit linear output.
    pub regressor_hidden: Vec<usize>,
    /// Hidden widths of the control module (ReLU), before the 7-unit output.
    pub control_hidden: Vec<usize>,
    /// Hidden widths of the discriminator (ReLU), before the 2-class head.
    pub discriminator_hidden: Vec<usize>,
}

impl ArchProfile {
    /// Small profile sized for CPU training: 4 conv layers on 64x64 input.
    pub fn desk() -> Self {
        Self {
            name: "desk".to_string(),
            resolution: 64,
            conv_channels: vec![8, 16, 16, 32],
            pool_after: vec![true, true, true, true],
            regressor_hidden: vec![64],
            control_hidden: vec![400, 300],
            discriminator_hidden: vec![256, 256],
        }
    }

    /// Full-size profile: twelve 3x3 conv layers in VGG-style groups with
    /// seven 2x2 maxpools on 256x256 input, encoded feature dim 256.
    pub fn paper() -> Self {
        Self {
            name: "paper".to_string(),
            resolution: 256,
            conv_channels: vec![16, 16, 32, 32, 64, 64, 64, 64, 64, 64, 64, 64],
            pool_after: vec![
                false, true, false, true, false, true, false, true, false, true, true, true,
            ],
            regressor_hidden: vec![256, 64],
            control_hidden: vec![400, 300],
            discriminator_hidden: vec![256, 256],
        }
    }

    /// Flattened encoder output width.
    pub fn feature_dim(&self) -> usize {
        let pools = self.pool_after.iter().filter(|&&p| p).count();
        let side = self.resolution >> pools;
        side * side * self.conv_channels.last().copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.pool_after.len() {
            return Err(Error::ArchMismatch(format!(
                "{} conv layers but {} pool flags",
                self.conv_channels.len(),
                self.pool_after.len()
            )));
        }
        let pools = self.pool_after.iter().filter(|&&p| p).count();
        if self.resolution >> pools == 0 || self.resolution % (1 << pools) != 0 {
            return Err(Error::ArchMismatch(format!(
                "resolution {} not divisible by 2^{pools}",
                self.resolution
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// parameter layout and initialization

/// Expected (name, shape, fan_in, fan_out) of every tensor in a module; the
/// single source of truth for init, load validation and pinned counts.
type ParamSpec = (String, Vec<usize>, usize, usize);

fn linear_specs(prefix: &str, widths: &[usize]) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for i in 0..widths.len() - 1 {
        let (din, dout) = (widths[i], widths[i + 1]);
        specs.push((format!("{prefix}.fc{i}.w"), vec![din, dout], din, dout));
        specs.push((format!("{prefix}.fc{i}.b"), vec![dout], din, dout));
    }
    specs
}

fn perception_specs(arch: &ArchProfile, prefix: &str) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut cin = 3;
    for (i, &cout) in arch.conv_channels.iter().enumerate() {
        specs.push((
            format!("{prefix}.enc.conv{i}.w"),
            vec![3, 3, cin, cout],
            9 * cin,
            9 * cout,
        ));
        specs.push((format!("{prefix}.enc.conv{i}.b"), vec![cout], 9 * cin, 9 * cout));
        cin = cout;
    }
    let mut widths = vec![arch.feature_dim()];
    widths.extend_from_slice(&arch.regressor_hidden);
    widths.push(3);
    specs.extend(linear_specs(&format!("{prefix}.reg"), &widths));
    specs
}

fn control_specs(arch: &ArchProfile, prefix: &str) -> Vec<ParamSpec> {
    let mut widths = vec![10];
    widths.extend_from_slice(&arch.control_hidden);
    widths.push(7);
    linear_specs(prefix, &widths)
}

fn discriminator_specs(arch: &ArchProfile, prefix: &str) -> Vec<ParamSpec> {
    let mut widths = vec![arch.feature_dim()];
    widths.extend_from_slice(&arch.discriminator_hidden);
    widths.push(2);
    linear_specs(prefix, &widths)
}

/// Xavier-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
fn init_params(specs: &[ParamSpec], rng: &mut impl Rng) -> Params {
    let mut params = Params::new();
    for (name, shape, fan_in, fan_out) in specs {
        let t = if name.ends_with(".b") {
            Tensor::zeros(shape.clone())
        } else {
            let bound = (6.0 / (*fan_in + *fan_out) as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            Tensor::new(shape.clone(), data).expect("sized by spec")
        };
        params.insert(name, t);
    }
    params
}

fn validate_params(specs: &[ParamSpec], params: &Params, what: &str) -> Result<()> {
    if params.len() != specs.len() {
        return Err(Error::ArchMismatch(format!(
            "{what}: expected {} tensors, found {}",
            specs.len(),
            params.len()
        )));
    }
    for (name, shape, _, _) in specs {
        match params.get(name) {
            Some(t) if t.shape() == &shape[..] => {}
            Some(t) => {
                return Err(Error::ArchMismatch(format!(
                    "{what}: `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
            None => {
                return Err(Error::ArchMismatch(format!("{what}: missing tensor `{name}`")))
            }
        }
    }
    Ok(())
}

/// Rebuild a parameter set under a new prefix, preserving order and bits.
fn reprefix(params: &Params, old: &str, new: &str) -> Params {
    let mut out = Params::new();
    for (name, t) in params.iter() {
        let renamed = format!("{new}{}", &name[old.len()..]);
        out.insert(&renamed, t.clone());
    }
    out
}

/// Register every tensor of `params` as graph parameters.
fn graph_params(g: &mut Graph, params: &Params) -> indexmap::IndexMap<String, NodeId> {
    params
        .iter()
        .map(|(name, t)| (name.clone(), g.param(name, t.clone())))
        .collect()
}

fn fc_stack(
    g: &mut Graph,
    nodes: &indexmap::IndexMap<String, NodeId>,
    prefix: &str,
    layers: usize,
    mut x: NodeId,
) -> Result<NodeId> {
    for i in 0..layers {
        let w = nodes[&format!("{prefix}.fc{i}.w")];
        let b = nodes[&format!("{prefix}.fc{i}.b")];
        x = g.linear(x, w, b)?;
        if i + 1 < layers {
            x = g.relu(x);
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// modules

/// Encoder + regressor; the regressor bottleneck *is* the position estimate.
#[derive(Clone, Debug)]
pub struct PerceptionModule {
    pub arch: ArchProfile,
    pub prefix: String,
    pub params: Params,
}

/// Nodes produced by a perception forward pass.
pub struct PerceptionOut {
    /// [N,3] position estimate.
    pub pred: NodeId,
    /// [N,feature_dim] flattened encoder output, discriminator input.
    pub feature: NodeId,
}

impl PerceptionModule {
    pub fn new(arch: &ArchProfile, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let params = init_params(&perception_specs(arch, prefix), rng);
        Ok(Self {
            arch: arch.clone(),
            prefix: prefix.to_string(),
            params,
        })
    }

    pub fn is_encoder_param(&self, name: &str) -> bool {
        name.starts_with(&format!("{}.enc.", self.prefix))
    }

    /// Run encoder + regressor on an image batch node of shape [N,R,R,3].
    pub fn forward(&self, g: &mut Graph, images: NodeId) -> Result<PerceptionOut> {
        let shape = g.value(images).shape().to_vec();
        let r = self.arch.resolution;
        if shape.len() != 4 || shape[1] != r || shape[2] != r || shape[3] != 3 {
            return Err(Error::ArchMismatch(format!(
                "perception expects [N,{r},{r},3] images, got {shape:?}"
            )));
        }
        let n = shape[0];
        let nodes = graph_params(g, &self.params);
        let mut x = images;
        for (i, pool) in self.arch.pool_after.iter().enumerate() {
            let w = nodes[&format!("{}.enc.conv{i}.w", self.prefix)];
            let b = nodes[&format!("{}.enc.conv{i}.b", self.prefix)];
            x = g.conv2d(x, w, b)?;
            x = g.relu(x);
            if *pool {
                x = g.maxpool2(x)?;
            }
        }
        let feature = g.reshape(x, vec![n, self.arch.feature_dim()])?;
        let pred = fc_stack(
            g,
            &nodes,
            &format!("{}.reg", self.prefix),
            self.arch.regressor_hidden.len() + 1,
            feature,
        )?;
        Ok(PerceptionOut { pred, feature })
    }

    /// Convenience inference on a raw image batch tensor.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.leaf(images.clone());
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out.pred).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "module": "perception",
            "prefix": self.prefix,
            "arch": self.arch,
        });
        save_checkpoint(path, &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let (arch, prefix) = module_meta(path, &ckpt.meta, "perception")?;
        validate_params(&perception_specs(&arch, &prefix), &ckpt.params, "perception")?;
        Ok(Self {
            arch,
            prefix,
            params: ckpt.params,
        })
    }
}

/// Bitwise copy of a module's parameters into a fresh module under a new
/// prefix; the source stays untouched.
pub fn clone_params(source: &PerceptionModule, prefix: &str) -> PerceptionModule {
    PerceptionModule {
        arch: source.arch.clone(),
        prefix: prefix.to_string(),
        params: reprefix(&source.params, &source.prefix, prefix),
    }
}

/// Copy parameters between existing modules; architectures must match.
pub fn copy_params(source: &PerceptionModule, target: &mut PerceptionModule) -> Result<()> {
    if source.arch != target.arch {
        return Err(Error::ArchMismatch(format!(
            "cannot copy `{}` parameters into `{}`",
            source.arch.name, target.arch.name
        )));
    }
    target.params = reprefix(&source.params, &source.prefix, &target.prefix);
    Ok(())
}

/// Three fully-connected layers mapping the scene configuration
/// Theta = [x*, q] in [0,1]^10 to seven joint velocities.
#[derive(Clone, Debug)]
pub struct ControlModule {
    pub arch: ArchProfile,
    pub prefix: String,
    pub params: Params,
}

impl ControlModule {
    pub fn new(arch: &ArchProfile, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let params = init_params(&control_specs(arch, prefix), rng);
        Ok(Self {
            arch: arch.clone(),
            prefix: prefix.to_string(),
            params,
        })
    }

    /// Forward from an existing [N,10] graph node. No range check: the
    /// combined network feeds this slot with unclamped perception output.
    pub fn forward_node(&self, g: &mut Graph, theta: NodeId) -> Result<NodeId> {
        let shape = g.value(theta).shape().to_vec();
        if shape.len() != 2 || shape[1] != 10 {
            return Err(Error::ArchMismatch(format!(
                "control expects [N,10] input, got {shape:?}"
            )));
        }
        let nodes = graph_params(g, &self.params);
        fc_stack(
            g,
            &nodes,
            &self.prefix,
            self.arch.control_hidden.len() + 1,
            theta,
        )
    }

    /// Forward from a raw [N,10] tensor normalized to [0,1].
    pub fn forward(&self, g: &mut Graph, theta: &Tensor) -> Result<NodeId> {
        const TOL: f64 = 1e-6;
        if let Some(v) = theta
            .data()
            .iter()
            .find(|v| **v < -TOL || **v > 1.0 + TOL)
        {
            return Err(Error::InputRange {
                op: "control_forward",
                details: format!("value {v} outside [0,1]"),
            });
        }
        let x = g.leaf(theta.clone());
        self.forward_node(g, x)
    }

    pub fn predict(&self, theta: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, theta)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "module": "control",
            "prefix": self.prefix,
            "arch": self.arch,
        });
        save_checkpoint(path, &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let (arch, prefix) = module_meta(path, &ckpt.meta, "control")?;
        validate_params(&control_specs(&arch, &prefix), &ckpt.params, "control")?;
        Ok(Self {
            arch,
            prefix,
            params: ckpt.params,
        })
    }
}

/// Fully-connected two-class domain classifier over encoder features.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub arch: ArchProfile,
    pub prefix: String,
    pub params: Params,
}

impl Discriminator {
    pub fn new(arch: &ArchProfile, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let params = init_params(&discriminator_specs(arch, prefix), rng);
        Ok(Self {
            arch: arch.clone(),
            prefix: prefix.to_string(),
            params,
        })
    }

    /// Softmax probabilities [N,2]; column 0 is p_sim, column 1 p_real.
    pub fn forward(&self, g: &mut Graph, feature: NodeId) -> Result<NodeId> {
        let shape = g.value(feature).shape().to_vec();
        let f = self.arch.feature_dim();
        if shape.len() != 2 || shape[1] != f {
            return Err(Error::ArchMismatch(format!(
                "discriminator expects [N,{f}] features, got {shape:?}"
            )));
        }
        let nodes = graph_params(g, &self.params);
        let logits = fc_stack(
            g,
            &nodes,
            &self.prefix,
            self.arch.discriminator_hidden.len() + 1,
            feature,
        )?;
        g.softmax(logits)
    }
}

/// Perception and control joined at the bottleneck: the control x* slot is
/// fed by the perception output during end-to-end passes.
#[derive(Clone, Debug)]
pub struct CombinedNetwork {
    pub perception: PerceptionModule,
    pub control: ControlModule,
}

pub struct CombinedOut {
    /// [N,7] velocity estimate.
    pub v_pred: NodeId,
    /// [N,3] bottleneck position estimate.
    pub x_pred: NodeId,
    /// [N,feature_dim] encoder feature.
    pub feature: NodeId,
}

impl CombinedNetwork {
    /// End-to-end forward: images [N,R,R,3] and joint angles q_norm [N,7].
    pub fn forward(&self, g: &mut Graph, images: NodeId, q_norm: &Tensor) -> Result<CombinedOut> {
        let p = self.perception.forward(g, images)?;
        let q = g.leaf(q_norm.clone());
        let theta = g.concat(p.pred, q)?;
        let v_pred = self.control.forward_node(g, theta)?;
        Ok(CombinedOut {
            v_pred,
            x_pred: p.pred,
            feature: p.feature,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "module": "combined",
            "perception_prefix": self.perception.prefix,
            "control_prefix": self.control.prefix,
            "arch": self.perception.arch,
        });
        let mut params = Params::new();
        for (name, t) in self.perception.params.iter().chain(self.control.params.iter()) {
            params.insert(name, t.clone());
        }
        save_checkpoint(path, &meta, &params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let meta_str = |key: &str| -> Result<String> {
            ckpt.meta
                .get(key)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| Error::Format {
                    path: path.display().to_string(),
                    details: format!("missing meta field `{key}`"),
                })
        };
        if meta_str("module")? != "combined" {
            return Err(Error::Format {
                path: path.display().to_string(),
                details: "not a combined-network checkpoint".to_string(),
            });
        }
        let arch: ArchProfile = serde_json::from_value(
            ckpt.meta.get("arch").cloned().unwrap_or_default(),
        )?;
        let (pp, cp) = (meta_str("perception_prefix")?, meta_str("control_prefix")?);
        let mut perception = Params::new();
        let mut control = Params::new();
        for (name, t) in ckpt.params.iter() {
            if name.starts_with(&format!("{pp}.")) {
                perception.insert(name, t.clone());
            } else {
                control.insert(name, t.clone());
            }
        }
        validate_params(&perception_specs(&arch, &pp), &perception, "perception")?;
        validate_params(&control_specs(&arch, &cp), &control, "control")?;
        Ok(Self {
            perception: PerceptionModule {
                arch: arch.clone(),
                prefix: pp,
                params: perception,
            },
            control: ControlModule {
                arch,
                prefix: cp,
                params: control,
            },
        })
    }
}

fn module_meta(
    path: &Path,
    meta: &serde_json::Value,
    expect: &str,
) -> Result<(ArchProfile, String)> {
    let kind = meta.get("module").and_then(|v| v.as_str()).unwrap_or("?");
    if kind != expect {
        return Err(Error::Format {
            path: path.display().to_string(),
            details: format!("expected {expect} checkpoint, found `{kind}`"),
        });
    }
    let arch = serde_json::from_value(meta.get("arch").cloned().unwrap_or_default())?;
    let prefix = meta
        .get("prefix")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    Ok((arch, prefix))
}

/// Discriminator hidden-layer lists studied in the architecture sweep
/// (Nets 1-8); index 3 is the (256,256) default.
pub fn discriminator_net_list() -> Vec<Vec<usize>> {
    vec![
        vec![32, 32],
        vec![64, 64],
        vec![128, 128],
        vec![256, 256],
        vec![512, 512],
        vec![256, 256, 256],
        vec![256, 256, 256, 256],
        vec![256, 256, 256, 256, 256],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn zero_params(params: &mut Params) {
        let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        for n in names {
            for v in params.get_mut(&n).unwrap().data_mut() {
                *v = 0.0;
            }
        }
    }

    fn desk_images(n: usize) -> Tensor {
        let mut r = rng();
        let data = (0..n * 64 * 64 * 3).map(|_| r.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, 64, 64, 3], data).unwrap()
    }

    #[test]
    fn desk_feature_dim_is_512_and_paper_is_256() {
        assert_eq!(ArchProfile::desk().feature_dim(), 512);
        assert_eq!(ArchProfile::paper().feature_dim(), 256);
    }

    #[test]
    fn parameter_counts_match_architecture_arithmetic() {
        // expected counts from the layer arithmetic, computed independently
        let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
        let fc = |din: usize, dout: usize| din * dout + dout;

        let mut r = rng();
        let desk = ArchProfile::desk();
        let p = PerceptionModule::new(&desk, "p", &mut r).unwrap();
        let expect =
            conv(3, 8) + conv(8, 16) + conv(16, 16) + conv(16, 32) + fc(512, 64) + fc(64, 3);
        assert_eq!(p.params.count_values(), expect);

        let paper = ArchProfile::paper();
        let p = PerceptionModule::new(&paper, "p", &mut r).unwrap();
        let expect = conv(3, 16)
            + conv(16, 16)
            + conv(16, 32)
            + conv(32, 32)
            + conv(32, 64)
            + 7 * conv(64, 64)
            + fc(256, 256)
            + fc(256, 64)
            + fc(64, 3);
        assert_eq!(p.params.count_values(), expect);

        let c = ControlModule::new(&paper, "c", &mut r).unwrap();
        assert_eq!(
            c.params.count_values(),
            fc(10, 400) + fc(400, 300) + fc(300, 7)
        );

        let d = Discriminator::new(&paper, "d", &mut r).unwrap();
        assert_eq!(
            d.params.count_values(),
            fc(256, 256) + fc(256, 256) + fc(256, 2)
        );
    }

    #[test]
    fn zero_perception_outputs_zero_and_shape_three() {
        let mut p = PerceptionModule::new(&ArchProfile::desk(), "p", &mut rng()).unwrap();
        zero_params(&mut p.params);
        let out = p.predict(&desk_images(2)).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perception_rejects_wrong_resolution() {
        let p = PerceptionModule::new(&ArchProfile::desk(), "p", &mut rng()).unwrap();
        let img = Tensor::zeros(vec![1, 32, 32, 3]);
        assert!(matches!(p.predict(&img), Err(Error::ArchMismatch(_))));
    }

    #[test]
    fn perception_forward_is_deterministic_and_exposes_feature() {
        let p = PerceptionModule::new(&ArchProfile::desk(), "p", &mut rng()).unwrap();
        let images = desk_images(3);
        let mut g = Graph::new();
        let x = g.leaf(images.clone());
        let out = p.forward(&mut g, x).unwrap();
        assert_eq!(g.value(out.feature).shape(), &[3, 512]);
        let a = g.value(out.pred).clone();
        let b = p.predict(&images).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_control_outputs_zero_velocities() {
        let mut c = ControlModule::new(&ArchProfile::desk(), "c", &mut rng()).unwrap();
        zero_params(&mut c.params);
        let theta = Tensor::new(vec![1, 10], vec![0.5; 10]).unwrap();
        let v = c.predict(&theta).unwrap();
        assert_eq!(v.shape(), &[1, 7]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn control_rejects_out_of_range_input() {
        let c = ControlModule::new(&ArchProfile::desk(), "c", &mut rng()).unwrap();
        let mut vals = vec![0.5; 10];
        vals[4] = 1.1;
        let theta = Tensor::new(vec![1, 10], vals).unwrap();
        assert!(matches!(c.predict(&theta), Err(Error::InputRange { .. })));
        // 1e-6 tolerance admits boundary noise
        let theta = Tensor::new(vec![1, 10], vec![1.0 + 5e-7; 10]).unwrap();
        assert!(c.predict(&theta).is_ok());
    }

    #[test]
    fn zero_discriminator_is_maximally_confused() {
        let arch = ArchProfile::desk();
        let mut d = Discriminator::new(&arch, "d", &mut rng()).unwrap();
        zero_params(&mut d.params);
        let mut g = Graph::new();
        let f = g.leaf(Tensor::new(vec![2, 512], vec![0.3; 1024]).unwrap());
        let probs = d.forward(&mut g, f).unwrap();
        for &v in g.value(probs).data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn discriminator_probabilities_sum_to_one_and_reject_bad_dim() {
        let arch = ArchProfile::desk();
        for hidden in discriminator_net_list() {
            let mut a = arch.clone();
            a.discriminator_hidden = hidden.clone();
            let d = Discriminator::new(&a, "d", &mut rng()).unwrap();
            let fc = |din: usize, dout: usize| din * dout + dout;
            let mut expect = 0;
            let mut din = 512;
            for &h in &hidden {
                expect += fc(din, h);
                din = h;
            }
            expect += fc(din, 2);
            assert_eq!(d.params.count_values(), expect);

            let mut g = Graph::new();
            let f = g.leaf(Tensor::new(vec![2, 512], vec![0.1; 1024]).unwrap());
            let probs = d.forward(&mut g, f).unwrap();
            for row in g.value(probs).data().chunks_exact(2) {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            let mut g = Graph::new();
            let f = g.leaf(Tensor::zeros(vec![2, 100]));
            assert!(matches!(d.forward(&mut g, f), Err(Error::ArchMismatch(_))));
        }
    }

    #[test]
    fn clone_params_isolates_target_from_source() {
        let src = PerceptionModule::new(&ArchProfile::desk(), "src", &mut rng()).unwrap();
        let before = src.params.checksum();
        let mut tgt = clone_params(&src, "tgt");
        // same outputs on the same input
        let images = desk_images(1);
        assert_eq!(
            src.predict(&images).unwrap().data(),
            tgt.predict(&images).unwrap().data()
        );
        // perturbing the target leaves the source bit-identical
        tgt.params.get_mut("tgt.enc.conv0.w").unwrap().data_mut()[0] += 1.0;
        assert_eq!(src.params.checksum(), before);
        assert_ne!(
            src.predict(&images).unwrap().data(),
            tgt.predict(&images).unwrap().data()
        );
    }

    #[test]
    fn copy_params_rejects_architecture_mismatch() {
        let mut r = rng();
        let src = PerceptionModule::new(&ArchProfile::desk(), "src", &mut r).unwrap();
        let mut tgt = PerceptionModule::new(&ArchProfile::paper(), "tgt", &mut r).unwrap();
        assert!(matches!(
            copy_params(&src, &mut tgt),
            Err(Error::ArchMismatch(_))
        ));
    }

    #[test]
    fn combined_forward_equals_control_of_perception() {
        let mut r = rng();
        let arch = ArchProfile::desk();
        let net = CombinedNetwork {
            perception: PerceptionModule::new(&arch, "p", &mut r).unwrap(),
            control: ControlModule::new(&arch, "c", &mut r).unwrap(),
        };
        let images = desk_images(2);
        let q = Tensor::new(vec![2, 7], vec![0.4; 14]).unwrap();

        let mut g = Graph::new();
        let x = g.leaf(images.clone());
        let out = net.forward(&mut g, x, &q).unwrap();
        let combined_v = g.value(out.v_pred).clone();

        // manual two-stage evaluation
        let x_pred = net.perception.predict(&images).unwrap();
        let mut theta = Vec::new();
        for i in 0..2 {
            theta.extend_from_slice(&x_pred.data()[i * 3..(i + 1) * 3]);
            theta.extend_from_slice(&q.data()[i * 7..(i + 1) * 7]);
        }
        let theta = Tensor::new(vec![2, 10], theta).unwrap();
        let mut g2 = Graph::new();
        let t = g2.leaf(theta);
        let v = net.control.forward_node(&mut g2, t).unwrap();
        assert!(combined_v
            .data()
            .iter()
            .zip(g2.value(v).data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn module_checkpoints_roundtrip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng();
        let arch = ArchProfile::desk();
        let p = PerceptionModule::new(&arch, "p", &mut r).unwrap();
        let path = dir.path().join("p.ckpt");
        p.save(&path).unwrap();
        let loaded = PerceptionModule::load(&path).unwrap();
        assert_eq!(loaded.params.checksum(), p.params.checksum());
        assert_eq!(loaded.arch, arch);
        // a control checkpoint is not a perception checkpoint
        let c = ControlModule::new(&arch, "c", &mut r).unwrap();
        let cpath = dir.path().join("c.ckpt");
        c.save(&cpath).unwrap();
        assert!(matches!(
            PerceptionModule::load(&cpath),
            Err(Error::Format { .. })
        ));

        let net = CombinedNetwork {
            perception: p,
            control: c,
        };
        let npath = dir.path().join("net.ckpt");
        net.save(&npath).unwrap();
        let loaded = CombinedNetwork::load(&npath).unwrap();
        assert_eq!(
            loaded.perception.params.checksum(),
            net.perception.params.checksum()
        );
        assert_eq!(loaded.control.params.checksum(), net.control.params.checksum());
    }

    #[test]
    fn xavier_init_respects_bound_and_zero_biases() {
        let p = PerceptionModule::new(&ArchProfile::desk(), "p", &mut rng()).unwrap();
        let bound = (6.0 / (9 * 3 + 9 * 8) as f64).sqrt();
        let w = p.params.get("p.enc.conv0.w").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > bound * 0.5));
        let b = p.params.get("p.enc.conv0.b").unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
    }
}
