//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every forward computation appends nodes to a [`Tape`]; node ids are
//! handed out in topological order, so the backward pass is a single
//! reverse sweep. A fresh tape is recorded per forward pass.
//!
//! Elementwise primitives live here; the convolution/pooling/normalization
//! kernels live in [`crate::nn`] and push their own nodes through
//! [`Tape::push`].

use crate::error::{Error, Result};
use crate::nn::{kernels, BnCtx, ConvSpec};

use super::tensor::{Element, Tensor};

/// Index of a node on a [`Tape`]. Ids are topologically ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a binary elementwise op pairs its operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    /// Identical shapes.
    None,
    /// Left operand is N×C×H×W, right is a per-channel vector of length C.
    RightChannel,
    /// Right operand is N×C×H×W, left is a per-channel vector of length C.
    LeftChannel,
}

/// Recorded operation kind plus whatever forward context backward needs.
/// Parent values are read back from the tape, so most variants are small.
#[derive(Debug, Clone)]
pub(crate) enum Op<E: Element> {
    Leaf,
    Add(Broadcast),
    Sub(Broadcast),
    Mul(Broadcast),
    Neg,
    Log,
    Exp,
    PowScalar(E),
    Relu,
    Clamp { lo: E, hi: E },
    MulScalar(E),
    Sum,
    Sigmoid,
    /// N×C×H×W -> N×H×W, picking one channel.
    SelectChannel(usize),
    /// Channel-axis concatenation; sizes are per-input channel counts.
    Concat { channels: Vec<usize> },
    Conv2d { spec: ConvSpec },
    ConvTranspose2d { spec: ConvSpec },
    AvgPool { kernel: (usize, usize), stride: (usize, usize) },
    AdaptiveAvgPool { out: (usize, usize) },
    MaxPool { argmax: Vec<usize> },
    BatchNorm(BnCtx<E>),
    BilinearUpsample,
}

struct Node<E: Element> {
    op: Op<E>,
    parents: Vec<NodeId>,
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
pub struct Gradients<E: Element> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Raw gradient buffer for a node, if any gradient reached it.
    pub fn get(&self, id: NodeId) -> Option<&[E]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<E>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// The spec-level elementwise operation kinds.
#[derive(Debug, Clone, Copy)]
pub enum ElemKind<E: Element> {
    Add,
    Sub,
    Mul,
    Neg,
    Log,
    Exp,
    Pow(E),
    Relu,
    Clamp(E, E),
}

/// Operation tape: append-only node arena recorded during a forward pass.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a leaf node, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<E>) -> NodeId {
        self.push(
            Op::Leaf,
            vec![],
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
        )
    }

    /// Register a constant leaf that never receives gradient.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<E>) -> NodeId {
        let shape = shape.into();
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(Op::Leaf, vec![], shape, data, false)
    }

    pub fn value(&self, id: NodeId) -> &[E] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor<E> {
        let n = &self.nodes[id.0];
        Tensor::from_vec(n.shape.clone(), n.data.clone()).expect("tape node is well-formed")
    }

    pub(crate) fn push(
        &mut self,
        op: Op<E>,
        parents: Vec<NodeId>,
        shape: Vec<usize>,
        data: Vec<E>,
        requires_grad: bool,
    ) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = NodeId(self.nodes.len());
        // Append-only arena: every parent precedes its child, so ids are
        // already topologically ordered and the graph is acyclic.
        debug_assert!(parents.iter().all(|p| p.0 < id.0));
        self.nodes.push(Node { op, parents, shape, data, requires_grad });
        id
    }

    pub(crate) fn any_requires_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- elementwise primitives ----

    /// Dispatcher matching the elementwise operation family.
    pub fn elementwise(&mut self, kind: ElemKind<E>, a: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let need = |b: Option<NodeId>| {
            b.ok_or_else(|| Error::shape("binary elementwise kind needs a second operand"))
        };
        match kind {
            ElemKind::Add => self.add(a, need(b)?),
            ElemKind::Sub => self.sub(a, need(b)?),
            ElemKind::Mul => self.mul(a, need(b)?),
            ElemKind::Neg => Ok(self.neg(a)),
            ElemKind::Log => self.log(a),
            ElemKind::Exp => Ok(self.exp(a)),
            ElemKind::Pow(p) => Ok(self.pow_scalar(a, p)),
            ElemKind::Relu => Ok(self.relu(a)),
            ElemKind::Clamp(lo, hi) => Ok(self.clamp(a, lo, hi)),
        }
    }

    fn broadcast_of(&self, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::None);
        }
        // Per-channel vector against N×C×H×W.
        if sa.len() == 4 && sb.len() == 1 && sb[0] == sa[1] {
            return Ok(Broadcast::RightChannel);
        }
        if sb.len() == 4 && sa.len() == 1 && sa[0] == sb[1] {
            return Ok(Broadcast::LeftChannel);
        }
        Err(Error::shape(format!("elementwise operands {sa:?} vs {sb:?}")))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(E, E) -> E,
        mk: impl Fn(Broadcast) -> Op<E>,
    ) -> Result<NodeId> {
        let bc = self.broadcast_of(a, b)?;
        let (full, vec_side, out_shape) = match bc {
            Broadcast::None => (a, b, self.shape(a).to_vec()),
            Broadcast::RightChannel => (a, b, self.shape(a).to_vec()),
            Broadcast::LeftChannel => (b, a, self.shape(b).to_vec()),
        };
        let data = if bc == Broadcast::None {
            let (da, db) = (self.value(a), self.value(b));
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let shape = self.shape(full);
            let (c, hw) = (shape[1], shape[2] * shape[3]);
            let dfull = self.value(full);
            let dvec = self.value(vec_side);
            let mut out = Vec::with_capacity(dfull.len());
            for (i, &x) in dfull.iter().enumerate() {
                let ch = (i / hw) % c;
                let y = dvec[ch];
                out.push(if bc == Broadcast::LeftChannel { f(y, x) } else { f(x, y) });
            }
            out
        };
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(mk(bc), vec![a, b], out_shape, data, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: NodeId, op: Op<E>, f: impl Fn(E) -> E) -> NodeId {
        let data = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(op, vec![a], shape, data, rg)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Neg, |x| -x)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).iter().find(|v| **v <= E::zero()) {
            return Err(Error::DomainError {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, Op::Log, |x| x.ln()))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp, |x| x.exp())
    }

    pub fn pow_scalar(&mut self, a: NodeId, p: E) -> NodeId {
        self.unary(a, Op::PowScalar(p), |x| x.powf(p))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu, |x| if x > E::zero() { x } else { E::zero() })
    }

    pub fn clamp(&mut self, a: NodeId, lo: E, hi: E) -> NodeId {
        self.unary(a, Op::Clamp { lo, hi }, |x| x.max(lo).min(hi))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: E) -> NodeId {
        self.unary(a, Op::MulScalar(c), |x| x * c)
    }

    /// Full reduction to a scalar node of shape `[1]`.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let mut acc = E::zero();
        for &v in self.value(a) {
            acc = acc + v;
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::Sum, vec![a], vec![1], vec![acc], rg)
    }

    /// Mean over all elements: `sum(a) / len`.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.mul_scalar(s, E::from_f64(1.0 / n as f64))
    }

    /// Numerically stable logistic function.
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid, |x| {
            if x >= E::zero() {
                E::one() / (E::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (E::one() + e)
            }
        })
    }

    /// Pick channel `c` from an N×C×H×W tensor, yielding N×H×W.
    pub fn select_channel(&mut self, a: NodeId, c: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape(format!("select_channel needs N×C×H×W, got {shape:?}")));
        }
        let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if c >= ch {
            return Err(Error::shape(format!("channel {c} out of {ch}")));
        }
        let data = self.value(a);
        let mut out = Vec::with_capacity(n * h * w);
        for ni in 0..n {
            let base = (ni * ch + c) * h * w;
            out.extend_from_slice(&data[base..base + h * w]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::SelectChannel(c), vec![a], vec![n, h, w], out, rg))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar node; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar { elements: self.value(loss).len() });
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![E::one()]);

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let gout = grads[id].take().expect("checked above");
            self.backward_node(NodeId(id), &gout, &mut grads);
            grads[id] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    /// Gradient of a node as a tensor; zeros when no gradient flowed to it.
    pub fn grad_tensor(&self, grads: &Gradients<E>, id: NodeId) -> Tensor<E> {
        match grads.get(id) {
            Some(g) => Tensor::from_vec(self.shape(id).to_vec(), g.to_vec())
                .expect("gradient matches node shape"),
            None => Tensor::zeros(self.shape(id).to_vec()),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<E>>], id: NodeId, delta: &[E]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                debug_assert_eq!(g.len(), delta.len());
                g.iter_mut().zip(delta).for_each(|(a, b)| *a = *a + *b);
            }
            None => grads[id.0] = Some(delta.to_vec()),
        }
    }

    /// Reduce a full-shape gradient onto a per-channel vector operand.
    fn reduce_channel(&self, full_shape: &[usize], g: &[E]) -> Vec<E> {
        let (c, hw) = (full_shape[1], full_shape[2] * full_shape[3]);
        let mut out = vec![E::zero(); c];
        for (i, &v) in g.iter().enumerate() {
            let ch = (i / hw) % c;
            out[ch] = out[ch] + v;
        }
        out
    }

    fn backward_node(&self, id: NodeId, gout: &[E], grads: &mut [Option<Vec<E>>]) {
        let node = &self.nodes[id.0];
        let p = &node.parents;
        match &node.op {
            Op::Leaf => {}
            Op::Add(bc) => {
                let (a, b) = (p[0], p[1]);
                match bc {
                    Broadcast::None => {
                        self.accumulate(grads, a, gout);
                        self.accumulate(grads, b, gout);
                    }
                    Broadcast::RightChannel => {
                        self.accumulate(grads, a, gout);
                        let gb = self.reduce_channel(self.shape(a), gout);
                        self.accumulate(grads, b, &gb);
                    }
                    Broadcast::LeftChannel => {
                        let ga = self.reduce_channel(self.shape(b), gout);
                        self.accumulate(grads, a, &ga);
                        self.accumulate(grads, b, gout);
                    }
                }
            }
            Op::Sub(bc) => {
                let (a, b) = (p[0], p[1]);
                let neg: Vec<E> = gout.iter().map(|&g| -g).collect();
                match bc {
                    Broadcast::None => {
                        self.accumulate(grads, a, gout);
                        self.accumulate(grads, b, &neg);
                    }
                    Broadcast::RightChannel => {
                        self.accumulate(grads, a, gout);
                        let gb = self.reduce_channel(self.shape(a), &neg);
                        self.accumulate(grads, b, &gb);
                    }
                    Broadcast::LeftChannel => {
                        let ga = self.reduce_channel(self.shape(b), gout);
                        self.accumulate(grads, a, &ga);
                        self.accumulate(grads, b, &neg);
                    }
                }
            }
            Op::Mul(bc) => {
                let (a, b) = (p[0], p[1]);
                let (da, db) = (self.value(a), self.value(b));
                match bc {
                    Broadcast::None => {
                        let ga: Vec<E> = gout.iter().zip(db).map(|(&g, &y)| g * y).collect();
                        let gb: Vec<E> = gout.iter().zip(da).map(|(&g, &x)| g * x).collect();
                        self.accumulate(grads, a, &ga);
                        self.accumulate(grads, b, &gb);
                    }
                    Broadcast::RightChannel | Broadcast::LeftChannel => {
                        let (full, vecs) = if matches!(bc, Broadcast::RightChannel) {
                            (a, b)
                        } else {
                            (b, a)
                        };
                        let fshape = self.shape(full);
                        let (c, hw) = (fshape[1], fshape[2] * fshape[3]);
                        let dfull = self.value(full);
                        let dvec = self.value(vecs);
                        let gfull: Vec<E> = gout
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| g * dvec[(i / hw) % c])
                            .collect();
                        let mut gvec = vec![E::zero(); c];
                        for (i, &g) in gout.iter().enumerate() {
                            let ch = (i / hw) % c;
                            gvec[ch] = gvec[ch] + g * dfull[i];
                        }
                        self.accumulate(grads, full, &gfull);
                        self.accumulate(grads, vecs, &gvec);
                    }
                }
            }
            Op::Neg => {
                let g: Vec<E> = gout.iter().map(|&g| -g).collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::Log => {
                let x = self.value(p[0]);
                let g: Vec<E> = gout.iter().zip(x).map(|(&g, &x)| g / x).collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::Exp => {
                let y = &node.data;
                let g: Vec<E> = gout.iter().zip(y).map(|(&g, &y)| g * y).collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::PowScalar(c) => {
                let c = *c;
                let x = self.value(p[0]);
                let g: Vec<E> = gout
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| g * c * x.powf(c - E::one()))
                    .collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::Relu => {
                let x = self.value(p[0]);
                let g: Vec<E> = gout
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > E::zero() { g } else { E::zero() })
                    .collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let x = self.value(p[0]);
                let g: Vec<E> = gout
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x >= lo && x <= hi { g } else { E::zero() })
                    .collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::MulScalar(c) => {
                let c = *c;
                let g: Vec<E> = gout.iter().map(|&g| g * c).collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::Sum => {
                let n = self.value(p[0]).len();
                let g = vec![gout[0]; n];
                self.accumulate(grads, p[0], &g);
            }
            Op::Sigmoid => {
                let y = &node.data;
                let g: Vec<E> = gout
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| g * y * (E::one() - y))
                    .collect();
                self.accumulate(grads, p[0], &g);
            }
            Op::SelectChannel(c) => {
                let shape = self.shape(p[0]);
                let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let mut g = vec![E::zero(); n * ch * h * w];
                for ni in 0..n {
                    let base = (ni * ch + c) * h * w;
                    let src = &gout[ni * h * w..(ni + 1) * h * w];
                    g[base..base + h * w].copy_from_slice(src);
                }
                self.accumulate(grads, p[0], &g);
            }
            Op::Concat { channels } => {
                let out_shape = &node.shape;
                let (n, h, w) = (out_shape[0], out_shape[2], out_shape[3]);
                let total_c: usize = channels.iter().sum();
                let mut offset = 0;
                for (pi, &ci) in channels.iter().enumerate() {
                    let mut g = vec![E::zero(); n * ci * h * w];
                    for ni in 0..n {
                        let src = (ni * total_c + offset) * h * w;
                        let dst = ni * ci * h * w;
                        g[dst..dst + ci * h * w]
                            .copy_from_slice(&gout[src..src + ci * h * w]);
                    }
                    self.accumulate(grads, p[pi], &g);
                    offset += ci;
                }
            }
            Op::Conv2d { spec } => {
                let (x, w) = (p[0], p[1]);
                if self.nodes[x.0].requires_grad {
                    let gx = kernels::conv2d_backward_input(
                        gout,
                        self.shape(x),
                        self.value(w),
                        self.shape(w),
                        &node.shape,
                        spec,
                    );
                    self.accumulate(grads, x, &gx);
                }
                if self.nodes[w.0].requires_grad {
                    let gw = kernels::conv2d_backward_weight(
                        gout,
                        self.value(x),
                        self.shape(x),
                        self.shape(w),
                        &node.shape,
                        spec,
                    );
                    self.accumulate(grads, w, &gw);
                }
                if let Some(&b) = p.get(2) {
                    if self.nodes[b.0].requires_grad {
                        let gb = kernels::bias_backward(gout, &node.shape);
                        self.accumulate(grads, b, &gb);
                    }
                }
            }
            Op::ConvTranspose2d { spec } => {
                let (x, w) = (p[0], p[1]);
                if self.nodes[x.0].requires_grad {
                    let gx = kernels::conv_transpose2d_backward_input(
                        gout,
                        self.shape(x),
                        self.value(w),
                        self.shape(w),
                        &node.shape,
                        spec,
                    );
                    self.accumulate(grads, x, &gx);
                }
                if self.nodes[w.0].requires_grad {
                    let gw = kernels::conv_transpose2d_backward_weight(
                        gout,
                        self.value(x),
                        self.shape(x),
                        self.shape(w),
                        &node.shape,
                        spec,
                    );
                    self.accumulate(grads, w, &gw);
                }
                if let Some(&b) = p.get(2) {
                    if self.nodes[b.0].requires_grad {
                        let gb = kernels::bias_backward(gout, &node.shape);
                        self.accumulate(grads, b, &gb);
                    }
                }
            }
            Op::AvgPool { kernel, stride } => {
                let gx =
                    kernels::avg_pool_backward(gout, self.shape(p[0]), &node.shape, *kernel, *stride);
                self.accumulate(grads, p[0], &gx);
            }
            Op::AdaptiveAvgPool { out } => {
                let gx = kernels::adaptive_avg_pool_backward(gout, self.shape(p[0]), *out);
                self.accumulate(grads, p[0], &gx);
            }
            Op::MaxPool { argmax } => {
                let mut gx = vec![E::zero(); self.value(p[0]).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] = gx[src] + gout[o];
                }
                self.accumulate(grads, p[0], &gx);
            }
            Op::BatchNorm(ctx) => {
                let (x, scale, shift) = (p[0], p[1], p[2]);
                let (gx, gscale, gshift) = kernels::batch_norm_backward(
                    gout,
                    self.value(x),
                    self.shape(x),
                    self.value(scale),
                    ctx,
                );
                if self.nodes[x.0].requires_grad {
                    self.accumulate(grads, x, &gx);
                }
                self.accumulate(grads, scale, &gscale);
                self.accumulate(grads, shift, &gshift);
            }
            Op::BilinearUpsample => {
                let gx = kernels::bilinear_backward(gout, self.shape(p[0]), &node.shape);
                self.accumulate(grads, p[0], &gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape<f64>, vals: &[f64]) -> NodeId {
        let t = Tensor::from_f64s([vals.len()], vals).unwrap().with_requires_grad();
        tape.leaf(&t)
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[-1.0, 0.0, 2.0]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn log_exp_inverse_pair() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[0.5]);
        let e = tape.exp(x);
        let y = tape.log(e).unwrap();
        assert!((tape.value(y)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pow_evaluates_directly() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2.0, 3.0]);
        let y = tape.pow_scalar(x, 2.0);
        assert_eq!(tape.value(y), &[4.0, 9.0]);
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[0.0]);
        assert!(matches!(tape.log(x), Err(Error::DomainError { .. })));
    }

    #[test]
    fn square_gradient_is_two_x() {
        // y = x^2 at x = 3 -> dy/dx = 6
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[3.0]);
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn dead_relu_gradient_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[-1.0]);
        let y = tape.relu(x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0]);
    }

    #[test]
    fn log_gradient_is_reciprocal() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[0.5]);
        let y = tape.log(x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!((grads.get(x).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1.0, 2.0]);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::NotScalar { elements: 2 })));
    }

    #[test]
    fn disconnected_leaf_yields_zero_tensor() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1.0, 2.0]);
        let unused = leaf(&mut tape, &[5.0]);
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(tape.grad_tensor(&grads, unused).data(), &[0.0]);
    }

    #[test]
    fn channel_broadcast_add_and_mul() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_f64s([1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_requires_grad();
        let x = tape.leaf(&x);
        let b = Tensor::from_f64s([2], &[10.0, 20.0]).unwrap().with_requires_grad();
        let b = tape.leaf(&b);
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y), &[11.0, 12.0, 23.0, 24.0]);

        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        // Each channel has two spatial positions.
        assert_eq!(grads.get(b).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn select_channel_picks_and_scatters() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_f64s([1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_requires_grad();
        let x = tape.leaf(&x);
        let c1 = tape.select_channel(x, 1).unwrap();
        assert_eq!(tape.value(c1), &[3.0, 4.0]);
        let s = tape.sum(c1);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn elementwise_dispatcher_covers_every_kind() {
        let mut tape = Tape::<f64>::new();
        let a = leaf(&mut tape, &[0.5, 1.5]);
        let b = leaf(&mut tape, &[2.0, 4.0]);
        let cases: Vec<(ElemKind<f64>, Option<NodeId>, [f64; 2])> = vec![
            (ElemKind::Add, Some(b), [2.5, 5.5]),
            (ElemKind::Sub, Some(b), [-1.5, -2.5]),
            (ElemKind::Mul, Some(b), [1.0, 6.0]),
            (ElemKind::Neg, None, [-0.5, -1.5]),
            (ElemKind::Exp, None, [0.5f64.exp(), 1.5f64.exp()]),
            (ElemKind::Log, None, [0.5f64.ln(), 1.5f64.ln()]),
            (ElemKind::Pow(2.0), None, [0.25, 2.25]),
            (ElemKind::Relu, None, [0.5, 1.5]),
            (ElemKind::Clamp(0.6, 1.0), None, [0.6, 1.0]),
        ];
        for (kind, other, want) in cases {
            let y = tape.elementwise(kind, a, other).unwrap();
            assert_eq!(tape.value(y), &want, "{kind:?}");
        }
        // Binary kinds require a second operand.
        assert!(tape.elementwise(ElemKind::Add, a, None).is_err());
    }

    #[test]
    fn sigmoid_matches_closed_form() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[-50.0, -1.0, 0.0, 1.0, 50.0]);
        let y = tape.sigmoid(x);
        for (&got, &xi) in tape.value(y).iter().zip(&[-50.0, -1.0, 0.0f64, 1.0, 50.0]) {
            let want = 1.0 / (1.0 + (-xi).exp());
            assert!((got - want).abs() < 1e-15);
            assert!(got.is_finite());
        }
    }
}
