//! Differentiable neural operators: dilated convolution, transposed
//! convolution, pooling, batch normalization, bilinear upsampling, and
//! channel concatenation.
//!
//! Each operator validates shapes, runs its forward kernel, and records a
//! node on the caller's [`Tape`]; the backward definitions live with the
//! kernels in [`kernels`].

pub(crate) mod kernels;

use crate::autodiff::{Element, NodeId, Op, Tape};
use crate::error::{Error, Result};

/// Convolution geometry: kernel, stride, zero padding, dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    /// Square kernel, unit stride, no padding, no dilation.
    pub fn new(kh: usize, kw: usize) -> Self {
        ConvSpec { kernel: (kh, kw), stride: (1, 1), padding: (0, 0), dilation: (1, 1) }
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = self.kernel.0 > 0
            && self.kernel.1 > 0
            && self.stride.0 > 0
            && self.stride.1 > 0
            && self.dilation.0 > 0
            && self.dilation.1 > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::EmptyOutput(format!("degenerate conv spec {self:?}")))
        }
    }

    /// `floor((H + 2p - d*(k-1) - 1) / s) + 1`, per axis.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |inp: usize, k: usize, s: usize, p: usize, d: usize| -> Result<usize> {
            let num = inp as isize + 2 * p as isize - (d * (k - 1)) as isize - 1;
            if num < 0 {
                return Err(Error::EmptyOutput(format!(
                    "input {inp} too small for kernel {k} dilation {d} padding {p}"
                )));
            }
            Ok(num as usize / s + 1)
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0)?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }

    /// Transposed-convolution size: `(H-1)*s - 2p + d*(k-1) + 1`, per axis.
    pub fn transpose_out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |inp: usize, k: usize, s: usize, p: usize, d: usize| -> Result<usize> {
            let out =
                ((inp - 1) * s) as isize - 2 * p as isize + (d * (k - 1)) as isize + 1;
            if out < 1 {
                return Err(Error::EmptyOutput(format!(
                    "transposed output collapses for input {inp} padding {p}"
                )));
            }
            Ok(out as usize)
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0)?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }
}

/// Forward context a batch-norm node saves for its backward pass.
#[derive(Debug, Clone)]
pub struct BnCtx<E: Element> {
    pub(crate) train: bool,
    pub(crate) eps: E,
    pub(crate) mean: Vec<E>,
    pub(crate) var: Vec<E>,
}

/// Statistics source for [`batch_norm2d`].
pub enum BnMode<'a, E: Element> {
    /// Normalize by batch statistics (training).
    Train,
    /// Normalize by the stored running statistics (inference).
    Eval { running_mean: &'a [E], running_var: &'a [E] },
}

/// Result of a batch-norm application. In train mode the biased batch
/// statistics come back so the owning layer can update its running stats.
pub struct BnOut<E: Element> {
    pub out: NodeId,
    pub batch_mean: Option<Vec<E>>,
    pub batch_var: Option<Vec<E>>,
}

fn expect_4d<E: Element>(tape: &Tape<E>, id: NodeId, what: &str) -> Result<[usize; 4]> {
    let s = tape.shape(id);
    if s.len() != 4 {
        return Err(Error::shape(format!("{what} must be N×C×H×W, got {s:?}")));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Dilated 2-d cross-correlation with zero padding.
pub fn conv2d<E: Element>(
    tape: &mut Tape<E>,
    x: NodeId,
    weight: NodeId,
    bias: Option<NodeId>,
    spec: &ConvSpec,
) -> Result<NodeId> {
    spec.validate()?;
    let xs = expect_4d(tape, x, "conv2d input")?;
    let ws = expect_4d(tape, weight, "conv2d weight")?;
    if ws[1] != xs[1] {
        return Err(Error::shape(format!(
            "conv2d weight expects {} input channels, input has {}",
            ws[1], xs[1]
        )));
    }
    if ws[2] != spec.kernel.0 || ws[3] != spec.kernel.1 {
        return Err(Error::shape(format!(
            "conv2d weight kernel {:?} disagrees with spec {:?}",
            (ws[2], ws[3]),
            spec.kernel
        )));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [ws[0]] {
            return Err(Error::shape(format!(
                "conv2d bias must have {} elements, got {:?}",
                ws[0],
                tape.shape(b)
            )));
        }
    }
    spec.out_hw(xs[2], xs[3])?;

    let (shape, data) = kernels::conv2d_forward(
        tape.value(x),
        &xs,
        tape.value(weight),
        &ws,
        bias.map(|b| tape.value(b).to_vec()).as_deref(),
        spec,
    );
    let mut parents = vec![x, weight];
    parents.extend(bias);
    let rg = tape.any_requires_grad(&parents);
    Ok(tape.push(Op::Conv2d { spec: *spec }, parents, shape, data, rg))
}

/// Adjoint of [`conv2d`]: weight layout is `Cin×Cout×kh×kw` relative to
/// this op's own input/output channels.
pub fn conv_transpose2d<E: Element>(
    tape: &mut Tape<E>,
    x: NodeId,
    weight: NodeId,
    bias: Option<NodeId>,
    spec: &ConvSpec,
) -> Result<NodeId> {
    spec.validate()?;
    let xs = expect_4d(tape, x, "conv_transpose2d input")?;
    let ws = expect_4d(tape, weight, "conv_transpose2d weight")?;
    if ws[0] != xs[1] {
        return Err(Error::shape(format!(
            "conv_transpose2d weight expects {} input channels, input has {}",
            ws[0], xs[1]
        )));
    }
    if ws[2] != spec.kernel.0 || ws[3] != spec.kernel.1 {
        return Err(Error::shape(format!(
            "conv_transpose2d weight kernel {:?} disagrees with spec {:?}",
            (ws[2], ws[3]),
            spec.kernel
        )));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [ws[1]] {
            return Err(Error::shape(format!(
                "conv_transpose2d bias must have {} elements, got {:?}",
                ws[1],
                tape.shape(b)
            )));
        }
    }
    spec.transpose_out_hw(xs[2], xs[3])?;

    let (shape, data) = kernels::conv_transpose2d_forward(
        tape.value(x),
        &xs,
        tape.value(weight),
        &ws,
        bias.map(|b| tape.value(b).to_vec()).as_deref(),
        spec,
    );
    let mut parents = vec![x, weight];
    parents.extend(bias);
    let rg = tape.any_requires_grad(&parents);
    Ok(tape.push(Op::ConvTranspose2d { spec: *spec }, parents, shape, data, rg))
}

fn check_pool<E: Element>(
    tape: &Tape<E>,
    x: NodeId,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<[usize; 4]> {
    let xs = expect_4d(tape, x, "pool input")?;
    if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::EmptyOutput("pool kernel/stride must be positive".into()));
    }
    if xs[2] < kernel.0 || xs[3] < kernel.1 {
        return Err(Error::EmptyOutput(format!(
            "pool kernel {kernel:?} larger than input {}×{}",
            xs[2], xs[3]
        )));
    }
    Ok(xs)
}

/// Window mean; gradient spreads uniformly over each window.
pub fn avg_pool2d<E: Element>(
    tape: &mut Tape<E>,
    x: NodeId,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<NodeId> {
    let xs = check_pool(tape, x, kernel, stride)?;
    let (shape, data) = kernels::avg_pool_forward(tape.value(x), &xs, kernel, stride);
    let rg = tape.any_requires_grad(&[x]);
    Ok(tape.push(Op::AvgPool { kernel, stride }, vec![x], shape, data, rg))
}

/// Average pool onto a fixed `k×k` output grid with contiguous bins
/// `floor(i*H/k) .. floor((i+1)*H/k)`.
pub fn adaptive_avg_pool2d<E: Element>(
    tape: &mut Tape<E>,
    x: NodeId,
    out: (usize, usize),
) -> Result<NodeId> {
    let xs = expect_4d(tape, x, "adaptive pool input")?;
    if out.0 == 0 || out.1 == 0 {
        return Err(Error::EmptyOutput("adaptive pool output must be positive".into()));
    }
    if out.0 > xs[2] || out.1 > xs[3] {
        let (bin, extent) =
            if out.0 > xs[2] { (out.0, xs[2]) } else { (out.1, xs[3]) };
        return Err(Error::BinTooSmall { bin, extent });
    }
    let (shape, data) = kernels::adaptive_avg_pool_forward(tape.value(x), &xs, out);
    let rg = tape.any_requires_grad(&[x]);
    Ok(tape.push(Op::AdaptiveAvgPool { out }, vec![x], shape, data, rg))
}

/// Window maximum; gradient routes to the first-occurring maximum.
pub fn max_pool2d<E: Element>(
    tape: &mut Tape<E>,
    x: NodeId,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<NodeId> {
    let xs = check_pool(tape, x, kernel, stride)?;
    let (shape, data, argmax) = kernels::max_pool_forward(tape.value(x), &xs, kernel, stride);
    let rg = tape.any_requires_grad(&[x]);
    Ok(tape.push(Op::MaxPool { argmax }, vec![x], shape, data, rg))
}

/// Batch normalization over the channel axis of an N×C×H×W tensor.
pub fn batch_norm2d<E: Element>(
    tape: &mut Tape<E>,
    x: NodeId,
    scale: NodeId,
    shift: NodeId,
    mode: BnMode<'_, E>,
    eps: E,
) -> Result<BnOut<E>> {
    let xs = expect_4d(tape, x, "batch norm input")?;
    let c = xs[1];
    for (id, what) in [(scale, "scale"), (shift, "shift")] {
        if tape.shape(id) != [c] {
            return Err(Error::shape(format!(
                "batch norm {what} must have {c} elements, got {:?}",
                tape.shape(id)
            )));
        }
    }

    let (ctx, batch_stats) = match mode {
        BnMode::Train => {
            let samples = xs[0] * xs[2] * xs[3];
            if samples < 2 {
                return Err(Error::DegenerateBatch { samples });
            }
            let (mean, var) = kernels::batch_stats(tape.value(x), &xs);
            (
                BnCtx { train: true, eps, mean: mean.clone(), var: var.clone() },
                Some((mean, var)),
            )
        }
        BnMode::Eval { running_mean, running_var } => (
            BnCtx {
                train: false,
                eps,
                mean: running_mean.to_vec(),
                var: running_var.to_vec(),
            },
            None,
        ),
    };

    let data = kernels::batch_norm_apply(
        tape.value(x),
        &xs,
        &ctx.mean,
        &ctx.var,
        tape.value(scale),
        tape.value(shift),
        eps,
    );
    let rg = tape.any_requires_grad(&[x, scale, shift]);
    let out = tape.push(Op::BatchNorm(ctx), vec![x, scale, shift], xs.to_vec(), data, rg);
    let (batch_mean, batch_var) = match batch_stats {
        Some((m, v)) => (Some(m), Some(v)),
        None => (None, None),
    };
    Ok(BnOut { out, batch_mean, batch_var })
}

/// Bilinear resize with the half-pixel convention.
pub fn bilinear_upsample<E: Element>(
    tape: &mut Tape<E>,
    x: NodeId,
    out_h: usize,
    out_w: usize,
) -> Result<NodeId> {
    let xs = expect_4d(tape, x, "bilinear input")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::EmptyOutput("bilinear output must be positive".into()));
    }
    let (shape, data) = kernels::bilinear_forward(tape.value(x), &xs, (out_h, out_w));
    let rg = tape.any_requires_grad(&[x]);
    Ok(tape.push(Op::BilinearUpsample, vec![x], shape, data, rg))
}

/// Concatenate along the channel axis; all other dims must match.
pub fn concat<E: Element>(tape: &mut Tape<E>, inputs: &[NodeId]) -> Result<NodeId> {
    if inputs.is_empty() {
        return Err(Error::shape("concat of zero tensors"));
    }
    let first = expect_4d(tape, inputs[0], "concat input")?;
    let mut channels = Vec::with_capacity(inputs.len());
    for &id in inputs {
        let s = expect_4d(tape, id, "concat input")?;
        if s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
            return Err(Error::shape(format!(
                "concat non-channel dims differ: {s:?} vs {first:?}"
            )));
        }
        channels.push(s[1]);
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let total_c: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(n * total_c * h * w);
    for ni in 0..n {
        for (i, &id) in inputs.iter().enumerate() {
            let ci = channels[i];
            let src = tape.value(id);
            data.extend_from_slice(&src[ni * ci * h * w..(ni + 1) * ci * h * w]);
        }
    }
    let rg = tape.any_requires_grad(inputs);
    Ok(tape.push(
        Op::Concat { channels },
        inputs.to_vec(),
        vec![n, total_c, h, w],
        data,
        rg,
    ))
}
