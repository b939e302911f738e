use indexmap::IndexMap;

use super::tensor::Tensor;
use crate::{Error, Result};

/// Inputs to `log` are clamped to this floor so adversarial losses stay
/// finite when a discriminator saturates.
pub const LOG_CLAMP: f64 = 1e-12;

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// 3x3 stride-1 same-padding convolution, x:[N,H,W,Cin] w:[3,3,Cin,Cout] b:[Cout].
    Conv2d,
    /// 2x2 max pooling, ties resolve to the first maximal element in row-major order.
    MaxPool2,
    Relu,
    Sigmoid,
    /// Row softmax over the last dimension of a [N,K] tensor.
    Softmax,
    /// Fully connected layer, x:[N,Din] w:[Din,Dout] b:[Dout].
    Linear,
    Add,
    Sub,
    Mul,
    /// y = a*x + b elementwise with constants.
    Affine { a: f64 },
    /// ln(max(x, LOG_CLAMP)) elementwise.
    Log,
    SumAll,
    MeanAll,
    /// Column `col` of a [N,K] tensor as [N].
    SelectCol { col: usize },
    /// Negative log likelihood of one class over a [N,K] probability tensor.
    Nll { class: usize },
    /// Concatenate two [N,A] and [N,B] tensors into [N,A+B].
    Concat,
    Reshape,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    param: Option<String>,
}

/// Gradients per named parameter, as produced by [`Graph::backward`].
pub type Gradients = IndexMap<String, Tensor>;

/// Eager tape: every operation computes its output immediately and records
/// itself so `backward` can replay the tape in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, details: String) -> Error {
    Error::ShapeMismatch { op, details }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, param: Option<String>) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            param,
        });
        self.nodes.len() - 1
    }

    /// Non-trainable leaf (inputs, labels, frozen features).
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t, None)
    }

    /// Trainable leaf; `backward` reports a gradient under `name`.
    pub fn param(&mut self, name: &str, t: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t, Some(name.to_string()))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.nodes[x].value.shape().to_vec(),
            self.nodes[w].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        if xs.len() != 4 || ws.len() != 4 || ws[0] != 3 || ws[1] != 3 || ws[2] != xs[3] {
            return Err(mismatch(
                "conv2d",
                format!("x {xs:?} w {ws:?} (want x [N,H,W,Cin], w [3,3,Cin,Cout])"),
            ));
        }
        let cout = ws[3];
        if bs != [cout] {
            return Err(mismatch("conv2d", format!("bias {bs:?}, want [{cout}]")));
        }
        let (n, h, wid, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let xd = self.nodes[x].value.data();
        let wd = self.nodes[w].value.data();
        let bd = self.nodes[b].value.data();
        let mut out = vec![0.0; n * h * wid * cout];
        for ni in 0..n {
            for y in 0..h {
                for xx in 0..wid {
                    let o = ((ni * h + y) * wid + xx) * cout;
                    let acc = &mut out[o..o + cout];
                    acc.copy_from_slice(bd);
                    for ky in 0..3usize {
                        let iy = (y + ky).wrapping_sub(1);
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (xx + kx).wrapping_sub(1);
                            if ix >= wid {
                                continue;
                            }
                            let xoff = ((ni * h + iy) * wid + ix) * cin;
                            let woff = (ky * 3 + kx) * cin * cout;
                            for ci in 0..cin {
                                let xv = xd[xoff + ci];
                                if xv == 0.0 {
                                    continue;
                                }
                                let wrow = &wd[woff + ci * cout..woff + (ci + 1) * cout];
                                for (a, wv) in acc.iter_mut().zip(wrow) {
                                    *a += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, h, wid, cout], out)?;
        Ok(self.push(Op::Conv2d, vec![x, w, b], t, None))
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 4 || xs[1] % 2 != 0 || xs[2] % 2 != 0 {
            return Err(mismatch(
                "maxpool2x2",
                format!("x {xs:?}, want [N,H,W,C] with even H and W"),
            ));
        }
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.nodes[x].value.data();
        let mut out = vec![0.0; n * oh * ow * c];
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = xd[((ni * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ci];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        out[((ni * oh + oy) * ow + ox) * c + ci] = best;
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, oh, ow, c], out)?;
        Ok(self.push(Op::MaxPool2, vec![x], t, None))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x]
            .value
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let t = Tensor::new(self.nodes[x].value.shape().to_vec(), data).unwrap();
        self.push(Op::Relu, vec![x], t, None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x]
            .value
            .data()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let t = Tensor::new(self.nodes[x].value.shape().to_vec(), data).unwrap();
        self.push(Op::Sigmoid, vec![x], t, None)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 2 {
            return Err(mismatch("softmax", format!("x {xs:?}, want [N,K]")));
        }
        let (n, k) = (xs[0], xs[1]);
        let xd = self.nodes[x].value.data();
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = &xd[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..k {
                let e = (row[j] - m).exp();
                out[i * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                out[i * k + j] /= sum;
            }
        }
        let t = Tensor::new(xs, out)?;
        Ok(self.push(Op::Softmax, vec![x], t, None))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.nodes[x].value.shape().to_vec(),
            self.nodes[w].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(mismatch(
                "linear",
                format!("x {xs:?} w {ws:?} b {bs:?}, want x [N,Din], w [Din,Dout], b [Dout]"),
            ));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let xd = self.nodes[x].value.data();
        let wd = self.nodes[w].value.data();
        let bd = self.nodes[b].value.data();
        let mut out = vec![0.0; n * dout];
        for i in 0..n {
            let orow = &mut out[i * dout..(i + 1) * dout];
            orow.copy_from_slice(bd);
            let xrow = &xd[i * din..(i + 1) * din];
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[ci * dout..(ci + 1) * dout];
                for (a, wv) in orow.iter_mut().zip(wrow) {
                    *a += xv * wv;
                }
            }
        }
        let t = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(Op::Linear, vec![x, w, b], t, None))
    }

    fn binary(&mut self, op: Op, name: &'static str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (
            self.nodes[a].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        if sa != sb {
            return Err(mismatch(name, format!("{sa:?} vs {sb:?}")));
        }
        let ad = self.nodes[a].value.data();
        let bd = self.nodes[b].value.data();
        let data: Vec<f64> = match op {
            Op::Add => ad.iter().zip(bd).map(|(x, y)| x + y).collect(),
            Op::Sub => ad.iter().zip(bd).map(|(x, y)| x - y).collect(),
            Op::Mul => ad.iter().zip(bd).map(|(x, y)| x * y).collect(),
            _ => unreachable!(),
        };
        let t = Tensor::new(sa, data)?;
        Ok(self.push(op, vec![a, b], t, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, "mul", a, b)
    }

    /// Elementwise `a*x + b` with scalar constants.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> NodeId {
        let data = self.nodes[x].value.data().iter().map(|&v| a * v + b).collect();
        let t = Tensor::new(self.nodes[x].value.shape().to_vec(), data).unwrap();
        self.push(Op::Affine { a }, vec![x], t, None)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x]
            .value
            .data()
            .iter()
            .map(|&v| v.max(LOG_CLAMP).ln())
            .collect();
        let t = Tensor::new(self.nodes[x].value.shape().to_vec(), data).unwrap();
        self.push(Op::Log, vec![x], t, None)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].value.data().iter().sum();
        self.push(Op::SumAll, vec![x], Tensor::scalar(s), None)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].value.numel() as f64;
        let s: f64 = self.nodes[x].value.data().iter().sum();
        self.push(Op::MeanAll, vec![x], Tensor::scalar(s / n), None)
    }

    pub fn select_col(&mut self, x: NodeId, col: usize) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 2 || col >= xs[1] {
            return Err(mismatch(
                "select_col",
                format!("x {xs:?}, column {col}"),
            ));
        }
        let (n, k) = (xs[0], xs[1]);
        let xd = self.nodes[x].value.data();
        let data = (0..n).map(|i| xd[i * k + col]).collect();
        let t = Tensor::new(vec![n], data)?;
        Ok(self.push(Op::SelectCol { col }, vec![x], t, None))
    }

    /// Negative log likelihood of `class` over row probabilities [N,K].
    pub fn nll(&mut self, probs: NodeId, class: usize) -> Result<NodeId> {
        let xs = self.nodes[probs].value.shape().to_vec();
        if xs.len() != 2 || class >= xs[1] {
            return Err(mismatch("nll", format!("probs {xs:?}, class {class}")));
        }
        let (n, k) = (xs[0], xs[1]);
        let xd = self.nodes[probs].value.data();
        let mut s = 0.0;
        for i in 0..n {
            s += xd[i * k + class].max(LOG_CLAMP).ln();
        }
        let t = Tensor::scalar(-s / n as f64);
        Ok(self.push(Op::Nll { class }, vec![probs], t, None))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (
            self.nodes[a].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(mismatch("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (n, ka, kb) = (sa[0], sa[1], sb[1]);
        let ad = self.nodes[a].value.data();
        let bd = self.nodes[b].value.data();
        let mut data = Vec::with_capacity(n * (ka + kb));
        for i in 0..n {
            data.extend_from_slice(&ad[i * ka..(i + 1) * ka]);
            data.extend_from_slice(&bd[i * kb..(i + 1) * kb]);
        }
        let t = Tensor::new(vec![n, ka + kb], data)?;
        Ok(self.push(Op::Concat, vec![a, b], t, None))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x].value.numel() {
            return Err(mismatch(
                "reshape",
                format!("{:?} -> {shape:?}", self.nodes[x].value.shape()),
            ));
        }
        let t = Tensor::new(shape, self.nodes[x].value.data().to_vec())?;
        Ok(self.push(Op::Reshape, vec![x], t, None))
    }

    /// Half mean squared error `sum((pred-target)^2) / (2m)` where `m` is the
    /// number of rows of `pred`.
    pub fn half_mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let m = self.nodes[pred].value.shape()[0] as f64;
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        let s = self.sum_all(sq);
        Ok(self.affine(s, 1.0 / (2.0 * m), 0.0))
    }

    /// Reverse-mode sweep from a scalar loss node. Returns one gradient per
    /// reachable named parameter; non-parameter leaves are skipped.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::NonScalarLoss(
                self.nodes[loss].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // a parameter registered under one name several times (e.g. a module
        // forwarded twice in one graph) accumulates across occurrences
        let mut out = Gradients::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.param, &grads[id]) {
                match out.get_mut(name) {
                    Some(t) => {
                        for (a, b) in t.data_mut().iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                    None => {
                        out.insert(
                            name.clone(),
                            Tensor::new(node.value.shape().to_vec(), g.clone())?,
                        );
                    }
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let ensure = |grads: &mut [Option<Vec<f64>>], nid: NodeId, len: usize| {
            if grads[nid].is_none() {
                grads[nid] = Some(vec![0.0; len]);
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::Conv2d => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xs = self.nodes[x].value.shape();
                let (n, h, wid, cin) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = self.nodes[w].value.shape()[3];
                let xd = self.nodes[x].value.data();
                let wd = self.nodes[w].value.data();
                ensure(grads, x, xd.len());
                ensure(grads, w, wd.len());
                ensure(grads, b, cout);
                // bias
                {
                    let gb = grads[b].as_mut().unwrap();
                    for chunk in g.chunks_exact(cout) {
                        for (a, v) in gb.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                }
                // weights and input; two passes keep the borrows simple
                {
                    let gw = grads[w].as_mut().unwrap();
                    for ni in 0..n {
                        for y in 0..h {
                            for xx in 0..wid {
                                let grow = &g[((ni * h + y) * wid + xx) * cout..][..cout];
                                for ky in 0..3usize {
                                    let iy = (y + ky).wrapping_sub(1);
                                    if iy >= h {
                                        continue;
                                    }
                                    for kx in 0..3usize {
                                        let ix = (xx + kx).wrapping_sub(1);
                                        if ix >= wid {
                                            continue;
                                        }
                                        let xoff = ((ni * h + iy) * wid + ix) * cin;
                                        let woff = (ky * 3 + kx) * cin * cout;
                                        for ci in 0..cin {
                                            let xv = xd[xoff + ci];
                                            if xv == 0.0 {
                                                continue;
                                            }
                                            let wrow =
                                                &mut gw[woff + ci * cout..woff + (ci + 1) * cout];
                                            for (a, gv) in wrow.iter_mut().zip(grow) {
                                                *a += xv * gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let gx = grads[x].as_mut().unwrap();
                    for ni in 0..n {
                        for y in 0..h {
                            for xx in 0..wid {
                                let grow = &g[((ni * h + y) * wid + xx) * cout..][..cout];
                                for ky in 0..3usize {
                                    let iy = (y + ky).wrapping_sub(1);
                                    if iy >= h {
                                        continue;
                                    }
                                    for kx in 0..3usize {
                                        let ix = (xx + kx).wrapping_sub(1);
                                        if ix >= wid {
                                            continue;
                                        }
                                        let xoff = ((ni * h + iy) * wid + ix) * cin;
                                        let woff = (ky * 3 + kx) * cin * cout;
                                        for ci in 0..cin {
                                            let wrow =
                                                &wd[woff + ci * cout..woff + (ci + 1) * cout];
                                            let mut acc = 0.0;
                                            for (wv, gv) in wrow.iter().zip(grow) {
                                                acc += wv * gv;
                                            }
                                            gx[xoff + ci] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool2 => {
                let x = node.inputs[0];
                let xs = self.nodes[x].value.shape();
                let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
                let (oh, ow) = (h / 2, w / 2);
                let xd = self.nodes[x].value.data();
                ensure(grads, x, xd.len());
                let gx = grads[x].as_mut().unwrap();
                for ni in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ci in 0..c {
                                // first maximal element in row-major order wins
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let idx =
                                            ((ni * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ci;
                                        if xd[idx] > best {
                                            best = xd[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                gx[best_idx] += g[((ni * oh + oy) * ow + ox) * c + ci];
                            }
                        }
                    }
                }
            }
            Op::Relu => {
                let x = node.inputs[0];
                let xd = self.nodes[x].value.data();
                ensure(grads, x, xd.len());
                let gx = grads[x].as_mut().unwrap();
                for i in 0..xd.len() {
                    // subgradient at exactly 0 is 0
                    if xd[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Sigmoid => {
                let x = node.inputs[0];
                let yd = node.value.data();
                ensure(grads, x, yd.len());
                let gx = grads[x].as_mut().unwrap();
                for i in 0..yd.len() {
                    gx[i] += g[i] * yd[i] * (1.0 - yd[i]);
                }
            }
            Op::Softmax => {
                let x = node.inputs[0];
                let yd = node.value.data();
                let k = node.value.shape()[1];
                ensure(grads, x, yd.len());
                let gx = grads[x].as_mut().unwrap();
                for (i, (row, grow)) in yd.chunks_exact(k).zip(g.chunks_exact(k)).enumerate() {
                    let dot: f64 = row.iter().zip(grow).map(|(p, gv)| p * gv).sum();
                    for j in 0..k {
                        gx[i * k + j] += row[j] * (grow[j] - dot);
                    }
                }
            }
            Op::Linear => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xs = self.nodes[x].value.shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = self.nodes[w].value.shape()[1];
                let xd = self.nodes[x].value.data();
                let wd = self.nodes[w].value.data();
                ensure(grads, x, xd.len());
                ensure(grads, w, wd.len());
                ensure(grads, b, dout);
                {
                    let gb = grads[b].as_mut().unwrap();
                    for chunk in g.chunks_exact(dout) {
                        for (a, v) in gb.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                }
                {
                    let gw = grads[w].as_mut().unwrap();
                    for i in 0..n {
                        let grow = &g[i * dout..(i + 1) * dout];
                        let xrow = &xd[i * din..(i + 1) * din];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &mut gw[ci * dout..(ci + 1) * dout];
                            for (a, gv) in wrow.iter_mut().zip(grow) {
                                *a += xv * gv;
                            }
                        }
                    }
                }
                {
                    let gx = grads[x].as_mut().unwrap();
                    for i in 0..n {
                        let grow = &g[i * dout..(i + 1) * dout];
                        let xrow = &mut gx[i * din..(i + 1) * din];
                        for (ci, a) in xrow.iter_mut().enumerate() {
                            let wrow = &wd[ci * dout..(ci + 1) * dout];
                            let mut acc = 0.0;
                            for (wv, gv) in wrow.iter().zip(grow) {
                                acc += wv * gv;
                            }
                            *a += acc;
                        }
                    }
                }
            }
            Op::Add => {
                for &inp in &node.inputs {
                    ensure(grads, inp, g.len());
                }
                for &inp in &node.inputs {
                    let gi = grads[inp].as_mut().unwrap();
                    for (a, v) in gi.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            Op::Sub => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                ensure(grads, a, g.len());
                ensure(grads, b, g.len());
                {
                    let ga = grads[a].as_mut().unwrap();
                    for (x, v) in ga.iter_mut().zip(g) {
                        *x += v;
                    }
                }
                {
                    let gb = grads[b].as_mut().unwrap();
                    for (x, v) in gb.iter_mut().zip(g) {
                        *x -= v;
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let ad = self.nodes[a].value.data().to_vec();
                let bd = self.nodes[b].value.data().to_vec();
                ensure(grads, a, g.len());
                ensure(grads, b, g.len());
                {
                    let ga = grads[a].as_mut().unwrap();
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                }
                {
                    let gb = grads[b].as_mut().unwrap();
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
            }
            Op::Affine { a } => {
                let x = node.inputs[0];
                ensure(grads, x, g.len());
                let gx = grads[x].as_mut().unwrap();
                for i in 0..g.len() {
                    gx[i] += a * g[i];
                }
            }
            Op::Log => {
                let x = node.inputs[0];
                let xd = self.nodes[x].value.data();
                ensure(grads, x, xd.len());
                let gx = grads[x].as_mut().unwrap();
                for i in 0..xd.len() {
                    gx[i] += g[i] / xd[i].max(LOG_CLAMP);
                }
            }
            Op::SumAll => {
                let x = node.inputs[0];
                let len = self.nodes[x].value.numel();
                ensure(grads, x, len);
                let gx = grads[x].as_mut().unwrap();
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
            Op::MeanAll => {
                let x = node.inputs[0];
                let len = self.nodes[x].value.numel();
                ensure(grads, x, len);
                let gx = grads[x].as_mut().unwrap();
                let s = g[0] / len as f64;
                for v in gx.iter_mut() {
                    *v += s;
                }
            }
            Op::SelectCol { col } => {
                let x = node.inputs[0];
                let k = self.nodes[x].value.shape()[1];
                ensure(grads, x, self.nodes[x].value.numel());
                let gx = grads[x].as_mut().unwrap();
                for (i, gv) in g.iter().enumerate() {
                    gx[i * k + col] += gv;
                }
            }
            Op::Nll { class } => {
                let x = node.inputs[0];
                let xs = self.nodes[x].value.shape();
                let (n, k) = (xs[0], xs[1]);
                let xd = self.nodes[x].value.data();
                ensure(grads, x, xd.len());
                let gx = grads[x].as_mut().unwrap();
                for i in 0..n {
                    let p = xd[i * k + class].max(LOG_CLAMP);
                    gx[i * k + class] -= g[0] / (n as f64 * p);
                }
            }
            Op::Concat => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let ka = self.nodes[a].value.shape()[1];
                let kb = self.nodes[b].value.shape()[1];
                let n = self.nodes[a].value.shape()[0];
                ensure(grads, a, n * ka);
                ensure(grads, b, n * kb);
                {
                    let ga = grads[a].as_mut().unwrap();
                    for i in 0..n {
                        for j in 0..ka {
                            ga[i * ka + j] += g[i * (ka + kb) + j];
                        }
                    }
                }
                {
                    let gb = grads[b].as_mut().unwrap();
                    for i in 0..n {
                        for j in 0..kb {
                            gb[i * kb + j] += g[i * (ka + kb) + ka + j];
                        }
                    }
                }
            }
            Op::Reshape => {
                let x = node.inputs[0];
                ensure(grads, x, g.len());
                let gx = grads[x].as_mut().unwrap();
                for (a, v) in gx.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
    }
}
