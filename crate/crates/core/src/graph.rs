//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is declared once (inputs, parameters, layers) and then run
//! repeatedly: [`Graph::forward`] binds parameter and input tensors by name,
//! [`Graph::backprop`] walks the nodes in reverse and returns gradients for
//! every trainable parameter. Nodes are appended in construction order, which
//! is a topological order by construction.

use std::collections::BTreeMap;

use crate::conv::{ConvGeom, ConvShape};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input { requires_grad: bool },
    Param { trainable: bool },
    /// `x [n, in] · w [in, out] + b [out]`
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, conv: ConvShape },
    ConvTranspose2d { x: NodeId, w: NodeId, b: NodeId, conv: ConvShape },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Reshape(NodeId),
    /// Feature-axis concatenation of two `[n, _]` tensors.
    Concat(NodeId, NodeId),
    /// `[n, c, h, w] -> [n, c]`
    GlobalAvgPool(NodeId),
    /// `a + alpha * b`
    Axpy { a: NodeId, b: NodeId, alpha: f64 },
    /// `1/(2n) Σ ||pred_i - target_i||²`
    QuadraticLoss { pred: NodeId, target: NodeId },
    /// `-1/n Σ q ln p + (1-q) ln(1-p)`
    BinaryCrossEntropy { probs: NodeId, labels: NodeId },
}

impl Op {
    fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Param { .. } => vec![],
            Op::Dense { x, w, b } => vec![x, w, b],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => vec![x, w, b],
            Op::Relu(x) | Op::Tanh(x) | Op::Sigmoid(x) | Op::Reshape(x) | Op::GlobalAvgPool(x) => {
                vec![x]
            }
            Op::Concat(a, b) => vec![a, b],
            Op::Axpy { a, b, .. } => vec![a, b],
            Op::QuadraticLoss { pred, target } => vec![pred, target],
            Op::BinaryCrossEntropy { probs, labels } => vec![probs, labels],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub shape: Vec<usize>,
}

/// Named parameter tensors, ordered by name.
pub type ParamSet<T = f32> = BTreeMap<String, Tensor<T>>;

/// Gradients keyed by parameter (or differentiable input) name.
pub type Gradients<T = f32> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor<T>>>,
    caches: Vec<Option<Vec<T>>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            values: Vec::new(),
            caches: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    /// Names and shapes of all parameter nodes.
    pub fn params(&self) -> impl Iterator<Item = (&str, &[usize], bool)> {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Param { trainable } => Some((n.name.as_str(), n.shape.as_slice(), trainable)),
            _ => None,
        })
    }

    fn push(&mut self, name: impl Into<String>, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            op,
            shape,
        });
        self.values.push(None);
        self.caches.push(None);
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(&self, name: &str, detail: String) -> Error {
        Error::NodeShape {
            node: name.to_string(),
            detail,
        }
    }

    pub fn input(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> NodeId {
        self.push(name, Op::Input { requires_grad }, shape.to_vec())
    }

    pub fn param(&mut self, name: &str, shape: &[usize], trainable: bool) -> NodeId {
        self.push(name, Op::Param { trainable }, shape.to_vec())
    }

    pub fn dense(&mut self, name: &str, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(self.shape_err(
                name,
                format!("dense expects x [n,in], w [in,out], b [out]; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        let shape = vec![xs[0], ws[1]];
        Ok(self.push(name, Op::Dense { x, w, b }, shape))
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != kernel || ws[3] != kernel {
            return Err(self.shape_err(
                name,
                format!("conv expects x [n,c,h,w] and w [out,c,{kernel},{kernel}]; got {xs:?}, {ws:?}"),
            ));
        }
        if self.shape(b) != [ws[0]] {
            return Err(self.shape_err(name, format!("bias must be [{}]", ws[0])));
        }
        let geom = ConvGeom::same(xs[2], xs[3], kernel, stride)?;
        let conv = ConvShape {
            geom,
            wide_channels: xs[1],
            narrow_channels: ws[0],
        };
        let shape = vec![xs[0], ws[0], geom.narrow_h, geom.narrow_w];
        Ok(self.push(name, Op::Conv2d { x, w, b, conv }, shape))
    }

    /// Transposed convolution upsampling `[n, c, h, w]` to
    /// `[n, out, h*stride, w*stride]`; weight layout `[c, out, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        name: &str,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != kernel || ws[3] != kernel {
            return Err(self.shape_err(
                name,
                format!("transposed conv expects x [n,c,h,w] and w [c,out,{kernel},{kernel}]; got {xs:?}, {ws:?}"),
            ));
        }
        if self.shape(b) != [ws[1]] {
            return Err(self.shape_err(name, format!("bias must be [{}]", ws[1])));
        }
        let geom = ConvGeom::same(xs[2] * stride, xs[3] * stride, kernel, stride)?;
        let conv = ConvShape {
            geom,
            wide_channels: ws[1],
            narrow_channels: xs[1],
        };
        let shape = vec![xs[0], ws[1], geom.wide_h, geom.wide_w];
        Ok(self.push(name, Op::ConvTranspose2d { x, w, b, conv }, shape))
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(name, Op::Relu(x), shape)
    }

    pub fn tanh(&mut self, name: &str, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(name, Op::Tanh(x), shape)
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(name, Op::Sigmoid(x), shape)
    }

    pub fn reshape(&mut self, name: &str, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let from: usize = self.shape(x).iter().product();
        if from != shape.iter().product::<usize>() {
            return Err(self.shape_err(
                name,
                format!("cannot reshape {:?} into {shape:?}", self.shape(x)),
            ));
        }
        Ok(self.push(name, Op::Reshape(x), shape.to_vec()))
    }

    pub fn concat(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(self.shape_err(name, format!("cannot concat {sa:?} and {sb:?}")));
        }
        let shape = vec![sa[0], sa[1] + sb[1]];
        Ok(self.push(name, Op::Concat(a, b), shape))
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(self.shape_err(name, format!("pooling expects [n,c,h,w], got {s:?}")));
        }
        let shape = vec![s[0], s[1]];
        Ok(self.push(name, Op::GlobalAvgPool(x), shape))
    }

    pub fn axpy(&mut self, name: &str, a: NodeId, b: NodeId, alpha: f64) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(
                name,
                format!("axpy operands differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(name, Op::Axpy { a, b, alpha }, shape))
    }

    pub fn quadratic_loss(&mut self, name: &str, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.shape(pred) != self.shape(target) || self.shape(pred).len() != 2 {
            return Err(self.shape_err(
                name,
                format!(
                    "quadratic loss expects equal [n,m] shapes, got {:?} and {:?}",
                    self.shape(pred),
                    self.shape(target)
                ),
            ));
        }
        Ok(self.push(name, Op::QuadraticLoss { pred, target }, vec![1]))
    }

    pub fn binary_cross_entropy(&mut self, name: &str, probs: NodeId, labels: NodeId) -> Result<NodeId> {
        if self.shape(probs) != self.shape(labels) {
            return Err(self.shape_err(
                name,
                format!(
                    "cross entropy expects equal shapes, got {:?} and {:?}",
                    self.shape(probs),
                    self.shape(labels)
                ),
            ));
        }
        Ok(self.push(name, Op::BinaryCrossEntropy { probs, labels }, vec![1]))
    }

    /// Run the whole graph. Parameters are looked up by node name in `params`
    /// (first match wins), inputs by name in `inputs`.
    pub fn forward(&mut self, params: &[&ParamSet<T>], inputs: &[(&str, &Tensor<T>)]) -> Result<()> {
        for g in self.grads.iter_mut() {
            *g = None;
        }
        for i in 0..self.nodes.len() {
            let value = self.eval_node(i, params, inputs)?;
            self.values[i] = Some(value);
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.values[id.0].as_ref().expect("operands evaluated before consumers")
    }

    fn eval_node(
        &mut self,
        i: usize,
        params: &[&ParamSet<T>],
        inputs: &[(&str, &Tensor<T>)],
    ) -> Result<Tensor<T>> {
        let node = &self.nodes[i];
        let shape = node.shape.clone();
        let out = match node.op.clone() {
            Op::Input { .. } => {
                let t = inputs
                    .iter()
                    .find(|(n, _)| *n == node.name)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| Error::UnknownName(format!("input {}", node.name)))?;
                if t.shape() != shape.as_slice() {
                    return Err(self.shape_err(
                        &node.name,
                        format!("input declared {shape:?}, fed {:?}", t.shape()),
                    ));
                }
                if !t.all_finite() {
                    return Err(Error::NonFinite(format!("input `{}`", node.name)));
                }
                t.clone()
            }
            Op::Param { .. } => {
                let t = params
                    .iter()
                    .find_map(|p| p.get(&node.name))
                    .ok_or_else(|| Error::UnknownName(format!("parameter {}", node.name)))?;
                if t.shape() != shape.as_slice() {
                    return Err(self.shape_err(
                        &node.name,
                        format!("parameter declared {shape:?}, bound {:?}", t.shape()),
                    ));
                }
                t.clone()
            }
            Op::Dense { x, w, b } => {
                let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
                let (n, k, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                let mut out = Tensor::zeros(&shape);
                for row in out.data_mut().chunks_mut(m) {
                    row.copy_from_slice(bv.data());
                }
                T::gemm(n, k, m, xv.data(), k as isize, 1, wv.data(), m as isize, 1, T::one(), out.data_mut(), m as isize, 1);
                out
            }
            Op::Conv2d { x, w, b, conv } => {
                let mut out = Tensor::zeros(&shape);
                let cols = conv.conv_forward(
                    shape[0],
                    self.val(x).data(),
                    self.val(w).data(),
                    self.val(b).data(),
                    out.data_mut(),
                );
                self.caches[i] = Some(cols);
                out
            }
            Op::ConvTranspose2d { x, w, b, conv } => {
                let mut out = Tensor::zeros(&shape);
                conv.transpose_forward(
                    shape[0],
                    self.val(x).data(),
                    self.val(w).data(),
                    self.val(b).data(),
                    out.data_mut(),
                );
                out
            }
            Op::Relu(x) => self.val(x).map(|v| if v > T::zero() { v } else { T::zero() }),
            Op::Tanh(x) => self.val(x).map(|v| v.tanh()),
            Op::Sigmoid(x) => self.val(x).map(sigmoid),
            Op::Reshape(x) => self.val(x).clone().reshape(&shape)?,
            Op::Concat(a, b) => {
                let (av, bv) = (self.val(a), self.val(b));
                let (wa, wb) = (av.shape()[1], bv.shape()[1]);
                let mut data = Vec::with_capacity(av.numel() + bv.numel());
                for r in 0..shape[0] {
                    data.extend_from_slice(&av.data()[r * wa..(r + 1) * wa]);
                    data.extend_from_slice(&bv.data()[r * wb..(r + 1) * wb]);
                }
                Tensor::new(shape, data)?
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.val(x);
                let plane = xv.shape()[2] * xv.shape()[3];
                let inv = T::of(1.0 / plane as f64);
                let data = xv
                    .data()
                    .chunks(plane)
                    .map(|c| c.iter().copied().sum::<T>() * inv)
                    .collect();
                Tensor::new(shape, data)?
            }
            Op::Axpy { a, b, alpha } => {
                let alpha = T::of(alpha);
                let data = self
                    .val(a)
                    .data()
                    .iter()
                    .zip(self.val(b).data())
                    .map(|(&u, &v)| u + alpha * v)
                    .collect();
                Tensor::new(shape, data)?
            }
            Op::QuadraticLoss { pred, target } => {
                let (p, t) = (self.val(pred), self.val(target));
                let n = p.shape()[0] as f64;
                let ss: f64 = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| (a - b).as_f64().powi(2))
                    .sum();
                Tensor::scalar(T::of(ss / (2.0 * n)))
            }
            Op::BinaryCrossEntropy { probs, labels } => {
                let (p, q) = (self.val(probs), self.val(labels));
                if let Some(bad) = p.data().iter().position(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0)) {
                    return Err(Error::InvalidArgument(format!(
                        "node `{}`: probability {:?} at index {bad} outside [0, 1]",
                        node.name,
                        p.data()[bad]
                    )));
                }
                let n = p.numel() as f64;
                let total: f64 = p
                    .data()
                    .iter()
                    .zip(q.data())
                    .map(|(&pi, &qi)| {
                        let pc = clamp_prob(pi.as_f64());
                        let q = qi.as_f64();
                        q * pc.ln() + (1.0 - q) * (1.0 - pc).ln()
                    })
                    .sum();
                Tensor::scalar(T::of(-total / n))
            }
        };
        if !out.all_finite() {
            return Err(Error::NonFinite(format!("output of node `{}`", node.name)));
        }
        Ok(out)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.values[id.0]
            .as_ref()
            .ok_or_else(|| Error::Graph(format!("node `{}` has not been evaluated", self.nodes[id.0].name)))
    }

    pub fn output(&self, name: &str) -> Result<&Tensor<T>> {
        let id = self.find(name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
        self.value(id)
    }

    /// Gradient of the last backprop's loss with respect to node `id`, if the
    /// node lies on a differentiable path.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    fn needs_grad(&self) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            needs[i] = match n.op {
                Op::Input { requires_grad } => requires_grad,
                Op::Param { trainable } => trainable,
                Op::BinaryCrossEntropy { probs, .. } => needs[probs.0],
                ref op => op.operands().iter().any(|o| needs[o.0]),
            };
        }
        needs
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for trainable
    /// parameters and differentiable inputs; frozen parameters still pass
    /// gradients through to their consumers' inputs.
    pub fn backprop(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss)?;
        if !lv.is_scalar() {
            return Err(Error::Graph(format!(
                "loss node `{}` is not scalar (shape {:?})",
                self.nodes[loss.0].name,
                lv.shape()
            )));
        }
        let needs = self.needs_grad();
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if needs[i] {
                self.backward_node(i, &g, &needs)?;
            }
            self.grads[i] = Some(g);
        }
        let mut out = Gradients::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let wanted = matches!(n.op, Op::Param { trainable: true } | Op::Input { requires_grad: true });
            if wanted {
                let g = self.grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(&n.shape));
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of `{}`", n.name)));
                }
                out.insert(n.name.clone(), g);
            }
        }
        Ok(out)
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(&mut self, id: NodeId, f: impl FnOnce(&mut [T])) {
        let shape = self.nodes[id.0].shape.clone();
        let slot = self.grads[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
        f(slot.data_mut());
    }

    fn backward_node(&mut self, i: usize, g: &Tensor<T>, needs: &[bool]) -> Result<()> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Input { .. } | Op::Param { .. } => {}
            Op::Dense { x, w, b } => {
                let (n, k, m) = (self.shape(x)[0], self.shape(x)[1], self.shape(w)[1]);
                if needs[w.0] {
                    let xv = self.val(x).data().to_vec();
                    self.accumulate_with(w, |dw| {
                        T::gemm(k, n, m, &xv, 1, k as isize, g.data(), m as isize, 1, T::one(), dw, m as isize, 1)
                    });
                }
                if needs[b.0] {
                    self.accumulate_with(b, |db| {
                        for row in g.data().chunks(m) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
                if needs[x.0] {
                    let wv = self.val(w).data().to_vec();
                    self.accumulate_with(x, |dx| {
                        T::gemm(n, m, k, g.data(), m as isize, 1, &wv, 1, m as isize, T::one(), dx, k as isize, 1)
                    });
                }
            }
            Op::Conv2d { x, w, b, conv } => {
                let batch = self.shape(x)[0];
                let cols = self.caches[i].take().expect("conv forward cached its columns");
                let wv = self.val(w).clone();
                let mut dw = needs[w.0].then(|| Tensor::zeros(self.shape(w)));
                let mut db = needs[b.0].then(|| Tensor::zeros(self.shape(b)));
                let mut dx = needs[x.0].then(|| Tensor::zeros(self.shape(x)));
                conv.conv_backward(
                    batch,
                    &cols,
                    wv.data(),
                    g.data(),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                    dx.as_mut().map(|t| t.data_mut()),
                );
                self.caches[i] = Some(cols);
                if let Some(d) = dw {
                    self.accumulate(w, d);
                }
                if let Some(d) = db {
                    self.accumulate(b, d);
                }
                if let Some(d) = dx {
                    self.accumulate(x, d);
                }
            }
            Op::ConvTranspose2d { x, w, b, conv } => {
                let batch = self.shape(x)[0];
                let xv = self.val(x).clone();
                let wv = self.val(w).clone();
                let mut dw = needs[w.0].then(|| Tensor::zeros(self.shape(w)));
                let mut db = needs[b.0].then(|| Tensor::zeros(self.shape(b)));
                let mut dx = needs[x.0].then(|| Tensor::zeros(self.shape(x)));
                conv.transpose_backward(
                    batch,
                    xv.data(),
                    wv.data(),
                    g.data(),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                    dx.as_mut().map(|t| t.data_mut()),
                );
                if let Some(d) = dw {
                    self.accumulate(w, d);
                }
                if let Some(d) = db {
                    self.accumulate(b, d);
                }
                if let Some(d) = dx {
                    self.accumulate(x, d);
                }
            }
            Op::Relu(x) => {
                let xv = self.val(x);
                let d = Tensor::from_fn(xv.shape(), |j| {
                    if xv.data()[j] > T::zero() {
                        g.data()[j]
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(x, d);
            }
            Op::Tanh(x) => {
                let y = self.values[i].as_ref().expect("evaluated");
                let d = Tensor::from_fn(y.shape(), |j| {
                    let t = y.data()[j];
                    g.data()[j] * (T::one() - t * t)
                });
                self.accumulate(x, d);
            }
            Op::Sigmoid(x) => {
                let y = self.values[i].as_ref().expect("evaluated");
                let d = Tensor::from_fn(y.shape(), |j| {
                    let s = y.data()[j];
                    g.data()[j] * s * (T::one() - s)
                });
                self.accumulate(x, d);
            }
            Op::Reshape(x) => {
                let d = g.clone().reshape(self.shape(x))?;
                self.accumulate(x, d);
            }
            Op::Concat(a, b) => {
                let (wa, wb) = (self.shape(a)[1], self.shape(b)[1]);
                let rows = self.shape(a)[0];
                let mut da = Vec::with_capacity(rows * wa);
                let mut dbv = Vec::with_capacity(rows * wb);
                for r in g.data().chunks(wa + wb) {
                    da.extend_from_slice(&r[..wa]);
                    dbv.extend_from_slice(&r[wa..]);
                }
                if needs[a.0] {
                    self.accumulate(a, Tensor::new(vec![rows, wa], da)?);
                }
                if needs[b.0] {
                    self.accumulate(b, Tensor::new(vec![rows, wb], dbv)?);
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(x).to_vec();
                let plane = s[2] * s[3];
                let inv = T::of(1.0 / plane as f64);
                let d = Tensor::from_fn(&s, |j| g.data()[j / plane] * inv);
                self.accumulate(x, d);
            }
            Op::Axpy { a, b, alpha } => {
                if needs[a.0] {
                    self.accumulate(a, g.clone());
                }
                if needs[b.0] {
                    let alpha = T::of(alpha);
                    self.accumulate(b, g.map(|v| v * alpha));
                }
            }
            Op::QuadraticLoss { pred, target } => {
                let upstream = g.item();
                let (p, t) = (self.val(pred), self.val(target));
                let scale = upstream / T::of(p.shape()[0] as f64);
                let d = Tensor::from_fn(p.shape(), |j| (p.data()[j] - t.data()[j]) * scale);
                if needs[target.0] {
                    self.accumulate(target, d.map(|v| -v));
                }
                if needs[pred.0] {
                    self.accumulate(pred, d);
                }
            }
            Op::BinaryCrossEntropy { probs, labels } => {
                // The clamp is treated as identity in the reverse pass so a
                // saturated discriminator still yields a learning signal.
                let upstream = g.item().as_f64();
                let (p, q) = (self.val(probs), self.val(labels));
                let n = p.numel() as f64;
                let d = Tensor::from_fn(p.shape(), |j| {
                    let pc = clamp_prob(p.data()[j].as_f64());
                    let qj = q.data()[j].as_f64();
                    T::of(-upstream / n * (qj / pc - (1.0 - qj) / (1.0 - pc)))
                });
                self.accumulate(probs, d);
            }
        }
        Ok(())
    }
}

/// Clamp a probability to `[1e-7, 1 - 1e-7]` before taking logs.
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
