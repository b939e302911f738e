use indexmap::IndexMap;

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    map: IndexMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn count_values(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Bitwise content digest, used by tests to assert frozen modules.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in &self.map {
            for b in name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x1000_0000_01b3);
            }
            for v in t.data() {
                for b in v.to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        h
    }
}

/// RMSProp: `E <- rho*E + (1-rho)*g^2; p <- p - lr*g/sqrt(E+eps)`.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    state: IndexMap<String, Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            rho: 0.9,
            eps: 1e-8,
            state: IndexMap::new(),
        }
    }

    /// Apply one update. A NaN anywhere in the gradients aborts the whole
    /// step, leaving parameters and state untouched.
    pub fn step(&mut self, params: &mut Params, grads: &Gradients) -> Result<()> {
        for (name, g) in grads {
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(name.clone()));
            }
        }
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::NanGradient(format!("unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "rmsprop_step",
                    details: format!(
                        "param {name}: {:?} vs grad {:?}",
                        p.shape(),
                        g.shape()
                    ),
                });
            }
            let e = self
                .state
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.numel()]);
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gv = g.data()[i];
                e[i] = self.rho * e[i] + (1.0 - self.rho) * gv * gv;
                pd[i] -= self.lr * gv / (e[i] + self.eps).sqrt();
            }
        }
        Ok(())
    }

    pub fn running_mean(&self, name: &str) -> Option<&[f64]> {
        self.state.get(name).map(Vec::as_slice)
    }
}
