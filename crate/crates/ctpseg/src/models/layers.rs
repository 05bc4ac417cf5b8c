//! Parameterized layers shared by both architectures.
//!
//! A [`Param`] carries its dotted name, so checkpoint manifests, trainable
//! masks, and gradient lookups all agree on one identifier. Layers bind
//! their parameters onto the caller's tape through a [`Bound`] recorder.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Element, NodeId, Tape, Tensor};
use crate::error::Result;
use crate::nn::{self, BnMode, ConvSpec};

/// Forward-pass mode: training updates batch-norm running statistics,
/// evaluation uses them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
}

impl<E: Element> Param<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        Param { name: name.into(), value, trainable: true }
    }
}

/// Records which tape node each parameter was bound to during a forward
/// pass, for routing gradients back after `backward`.
#[derive(Debug, Default)]
pub struct Bound {
    entries: Vec<(String, NodeId)>,
}

impl Bound {
    pub fn new() -> Self {
        Bound::default()
    }

    pub fn bind<E: Element>(&mut self, tape: &mut Tape<E>, param: &Param<E>) -> NodeId {
        let mut t = param.value.clone();
        t.set_requires_grad(param.trainable);
        let id = tape.leaf(&t);
        self.entries.push((param.name.clone(), id));
        id
    }

    pub fn entries(&self) -> &[(String, NodeId)] {
        &self.entries
    }
}

pub(crate) fn init_conv_weight<E: Element>(
    name: &str,
    cout: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    rng: &mut impl Rng,
) -> Param<E> {
    // Fan-in-scaled normal.
    let std = (2.0 / (cin * kh * kw) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data: Vec<E> =
        (0..cout * cin * kh * kw).map(|_| E::from_f64(normal.sample(rng))).collect();
    Param::new(name, Tensor::from_vec(vec![cout, cin, kh, kw], data).expect("sized"))
}

/// Convolution layer; `transposed` flips the weight interpretation to
/// `Cin×Cout×kh×kw` and runs the adjoint op.
#[derive(Debug, Clone)]
pub struct ConvLayer<E: Element> {
    pub weight: Param<E>,
    pub bias: Option<Param<E>>,
    pub spec: ConvSpec,
    pub transposed: bool,
}

impl<E: Element> ConvLayer<E> {
    pub fn init(
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        let weight = init_conv_weight(&format!("{name}.weight"), cout, cin, kh, kw, rng);
        let bias = with_bias
            .then(|| Param::new(format!("{name}.bias"), Tensor::zeros(vec![cout])));
        ConvLayer { weight, bias, spec, transposed: false }
    }

    pub fn init_transposed(
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        // Transposed layout: input channels lead.
        let weight = init_conv_weight(&format!("{name}.weight"), cin, cout, kh, kw, rng);
        let bias = with_bias
            .then(|| Param::new(format!("{name}.bias"), Tensor::zeros(vec![cout])));
        ConvLayer { weight, bias, spec, transposed: true }
    }

    pub fn forward(&self, tape: &mut Tape<E>, bound: &mut Bound, x: NodeId) -> Result<NodeId> {
        let w = bound.bind(tape, &self.weight);
        let b = self.bias.as_ref().map(|b| bound.bind(tape, b));
        if self.transposed {
            nn::conv_transpose2d(tape, x, w, b, &self.spec)
        } else {
            nn::conv2d(tape, x, w, b, &self.spec)
        }
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}

/// Batch normalization layer owning its running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<E: Element> {
    pub scale: Param<E>,
    pub shift: Param<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    mean_name: String,
    var_name: String,
    pub momentum: f64,
    pub eps: f64,
}

/// Unstated in the source material; common defaults, recorded in config.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

impl<E: Element> BatchNorm<E> {
    pub fn init(name: &str, channels: usize) -> Self {
        BatchNorm {
            scale: Param::new(format!("{name}.scale"), Tensor::full(vec![channels], E::one())),
            shift: Param::new(format!("{name}.shift"), Tensor::zeros(vec![channels])),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], E::one()),
            mean_name: format!("{name}.running_mean"),
            var_name: format!("{name}.running_var"),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let s = bound.bind(tape, &self.scale);
        let b = bound.bind(tape, &self.shift);
        let eps = E::from_f64(self.eps);
        match mode {
            Mode::Train => {
                let xs = tape.shape(x).to_vec();
                let out = nn::batch_norm2d(tape, x, s, b, BnMode::Train, eps)?;
                let mean = out.batch_mean.expect("train mode returns stats");
                let var = out.batch_var.expect("train mode returns stats");
                // Running variance uses the unbiased estimate.
                let m = (xs[0] * xs[2] * xs[3]) as f64;
                let unbias = E::from_f64(m / (m - 1.0));
                let mom = E::from_f64(self.momentum);
                let keep = E::one() - mom;
                for (r, &bm) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = keep * *r + mom * bm;
                }
                for (r, &bv) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = keep * *r + mom * bv * unbias;
                }
                Ok(out.out)
            }
            Mode::Eval => {
                let out = nn::batch_norm2d(
                    tape,
                    x,
                    s,
                    b,
                    BnMode::Eval {
                        running_mean: self.running_mean.data(),
                        running_var: self.running_var.data(),
                    },
                    eps,
                )?;
                Ok(out.out)
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        vec![&self.scale, &self.shift]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.scale, &mut self.shift]
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        vec![
            (self.mean_name.clone(), &self.running_mean),
            (self.var_name.clone(), &self.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        vec![
            (self.mean_name.clone(), &mut self.running_mean),
            (self.var_name.clone(), &mut self.running_var),
        ]
    }
}

/// conv → bn → relu.
#[derive(Debug, Clone)]
pub struct ConvBnRelu<E: Element> {
    pub conv: ConvLayer<E>,
    pub bn: BatchNorm<E>,
}

impl<E: Element> ConvBnRelu<E> {
    pub fn init(name: &str, cin: usize, cout: usize, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        ConvBnRelu {
            conv: ConvLayer::init(&format!("{name}.conv"), cin, cout, spec, false, rng),
            bn: BatchNorm::init(&format!("{name}.bn"), cout),
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let y = self.conv.forward(tape, bound, x)?;
        let y = self.bn.forward(tape, bound, y, mode)?;
        Ok(tape.relu(y))
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut v = self.conv.params();
        v.extend(self.bn.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        self.bn.buffers()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        self.bn.buffers_mut()
    }
}

/// Standard two-conv residual block. The first conv carries the stride and
/// dilation; a 1×1 projection aligns the skip when shape changes.
#[derive(Debug, Clone)]
pub struct ResidualBlock<E: Element> {
    pub conv1: ConvLayer<E>,
    pub bn1: BatchNorm<E>,
    pub conv2: ConvLayer<E>,
    pub bn2: BatchNorm<E>,
    pub proj: Option<(ConvLayer<E>, BatchNorm<E>)>,
}

impl<E: Element> ResidualBlock<E> {
    pub fn init(
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let spec1 = ConvSpec::new(3, 3)
            .stride(stride, stride)
            .padding(dilation, dilation)
            .dilation(dilation, dilation);
        let spec2 =
            ConvSpec::new(3, 3).padding(dilation, dilation).dilation(dilation, dilation);
        let proj = (stride != 1 || cin != cout).then(|| {
            (
                ConvLayer::init(
                    &format!("{name}.proj.conv"),
                    cin,
                    cout,
                    ConvSpec::new(1, 1).stride(stride, stride),
                    false,
                    rng,
                ),
                BatchNorm::init(&format!("{name}.proj.bn"), cout),
            )
        });
        ResidualBlock {
            conv1: ConvLayer::init(&format!("{name}.conv1"), cin, cout, spec1, false, rng),
            bn1: BatchNorm::init(&format!("{name}.bn1"), cout),
            conv2: ConvLayer::init(&format!("{name}.conv2"), cout, cout, spec2, false, rng),
            bn2: BatchNorm::init(&format!("{name}.bn2"), cout),
            proj,
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let y = self.conv1.forward(tape, bound, x)?;
        let y = self.bn1.forward(tape, bound, y, mode)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, bound, y)?;
        let y = self.bn2.forward(tape, bound, y, mode)?;
        let skip = match &mut self.proj {
            Some((conv, bn)) => {
                let s = conv.forward(tape, bound, x)?;
                bn.forward(tape, bound, s, mode)?
            }
            None => x,
        };
        let sum = tape.add(y, skip)?;
        Ok(tape.relu(sum))
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        if let Some((c, b)) = &self.proj {
            v.extend(c.params());
            v.extend(b.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some((c, b)) = &mut self.proj {
            v.extend(c.params_mut());
            v.extend(b.params_mut());
        }
        v
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        let mut v = self.bn1.buffers();
        v.extend(self.bn2.buffers());
        if let Some((_, b)) = &self.proj {
            v.extend(b.buffers());
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut v = self.bn1.buffers_mut();
        v.extend(self.bn2.buffers_mut());
        if let Some((_, b)) = &mut self.proj {
            v.extend(b.buffers_mut());
        }
        v
    }
}
