//! PSPNet: initializer layer, mini dilated residual backbone, pyramid
//! pooling, and conv head, upsampled back to the input resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Element, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec};

use super::config::PspConfig;
use super::layers::{BatchNorm, Bound, ConvBnRelu, ConvLayer, Mode, Param, ResidualBlock};

/// Batch normalization over the 5 stacked perfusion channels followed by a
/// 1×1 convolution reducing them to the 3 channels the backbone expects.
#[derive(Debug, Clone)]
pub struct InitializerLayer<E: Element> {
    pub bn: BatchNorm<E>,
    /// 3×5×1×1 kernel; no bias term.
    pub conv: ConvLayer<E>,
}

impl<E: Element> InitializerLayer<E> {
    pub fn init(name: &str, rng: &mut impl Rng) -> Self {
        InitializerLayer {
            bn: BatchNorm::init(&format!("{name}.bn"), 5),
            conv: ConvLayer::init(&format!("{name}.conv"), 5, 3, ConvSpec::new(1, 1), false, rng),
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != 5 {
            return Err(Error::WrongChannelCount {
                expected: 5,
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        let y = self.bn.forward(tape, bound, x, mode)?;
        self.conv.forward(tape, bound, y)
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut v = self.bn.params();
        v.extend(self.conv.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut v = self.bn.params_mut();
        v.extend(self.conv.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        self.bn.buffers()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        self.bn.buffers_mut()
    }
}

/// One pyramid level: adaptive pool to `bin×bin`, 1×1 conv, bn+relu,
/// bilinear upsample back to the feature-map size.
#[derive(Debug, Clone)]
pub struct PyramidLevel<E: Element> {
    pub bin: usize,
    pub reduce: ConvBnRelu<E>,
}

/// Pyramid pooling over the final feature map. Output channel count is
/// `C + n_psp * |bins|`.
#[derive(Debug, Clone)]
pub struct PyramidPooling<E: Element> {
    pub levels: Vec<PyramidLevel<E>>,
}

impl<E: Element> PyramidPooling<E> {
    pub fn init(
        name: &str,
        in_channels: usize,
        bins: &[usize],
        n_psp: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let levels = bins
            .iter()
            .map(|&bin| PyramidLevel {
                bin,
                reduce: ConvBnRelu::init(
                    &format!("{name}.bin{bin}"),
                    in_channels,
                    n_psp,
                    ConvSpec::new(1, 1),
                    rng,
                ),
            })
            .collect();
        PyramidPooling { levels }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        features: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let shape = tape.shape(features).to_vec();
        let (h, w) = (shape[2], shape[3]);
        let mut pieces = vec![features];
        for level in &mut self.levels {
            let pooled = nn::adaptive_avg_pool2d(tape, features, (level.bin, level.bin))?;
            let reduced = level.reduce.forward(tape, bound, pooled, mode)?;
            let up = nn::bilinear_upsample(tape, reduced, h, w)?;
            pieces.push(up);
        }
        nn::concat(tape, &pieces)
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        self.levels.iter().flat_map(|l| l.reduce.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        self.levels.iter_mut().flat_map(|l| l.reduce.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        self.levels.iter().flat_map(|l| l.reduce.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        self.levels.iter_mut().flat_map(|l| l.reduce.buffers_mut()).collect()
    }
}

/// 3×3 conv + bn + relu, then a 1×1 conv to the class logits.
#[derive(Debug, Clone)]
pub struct PspHead<E: Element> {
    pub conv: ConvBnRelu<E>,
    pub classifier: ConvLayer<E>,
}

impl<E: Element> PspHead<E> {
    fn init(name: &str, cin: usize, mid: usize, classes: usize, rng: &mut impl Rng) -> Self {
        PspHead {
            conv: ConvBnRelu::init(
                &format!("{name}.conv"),
                cin,
                mid,
                ConvSpec::new(3, 3).padding(1, 1),
                rng,
            ),
            classifier: ConvLayer::init(
                &format!("{name}.classifier"),
                mid,
                classes,
                ConvSpec::new(1, 1),
                true,
                rng,
            ),
        }
    }

    fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let y = self.conv.forward(tape, bound, x, mode)?;
        self.classifier.forward(tape, bound, y)
    }
}

#[derive(Debug, Clone)]
pub struct PspNet<E: Element> {
    pub cfg: PspConfig,
    pub init: InitializerLayer<E>,
    pub stem: ConvBnRelu<E>,
    pub stages: Vec<Vec<ResidualBlock<E>>>,
    pub pyramid: PyramidPooling<E>,
    pub head: PspHead<E>,
}

impl<E: Element> PspNet<E> {
    pub fn build(cfg: &PspConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = &cfg.backbone_channels;
        let init = InitializerLayer::init("init", &mut rng);
        let stem = ConvBnRelu::init(
            "backbone.stem",
            3,
            ch[0],
            ConvSpec::new(3, 3).padding(1, 1),
            &mut rng,
        );

        // Three stages: stride 2, stride 2, dilation 2 — output stride 4.
        let stage_geom = [(2usize, 1usize), (2, 1), (1, 2)];
        let mut stages = Vec::new();
        let mut cin = ch[0];
        for (si, &(stride, dilation)) in stage_geom.iter().enumerate() {
            let cout = ch[si];
            let mut blocks = Vec::new();
            for bi in 0..cfg.blocks_per_stage {
                let (s, ci) = if bi == 0 { (stride, cin) } else { (1, cout) };
                blocks.push(ResidualBlock::init(
                    &format!("backbone.stage{}.block{}", si + 1, bi),
                    ci,
                    cout,
                    s,
                    dilation,
                    &mut rng,
                ));
            }
            stages.push(blocks);
            cin = cout;
        }

        let n_psp = cfg.n_psp();
        let pyramid =
            PyramidPooling::init("psp", cfg.final_channels(), &cfg.bins, n_psp, &mut rng);
        let head_in = cfg.final_channels() + n_psp * cfg.bins.len();
        let head =
            PspHead::init("head", head_in, cfg.head_channels(), cfg.num_classes, &mut rng);

        Ok(PspNet { cfg: cfg.clone(), init, stem, stages, pyramid, head })
    }

    /// Full forward pass to per-class logits at the input resolution.
    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let in_shape = tape.shape(x).to_vec();
        let (h, w) = (in_shape[2], in_shape[3]);
        let y = self.init.forward(tape, bound, x, mode)?;
        let y = self.stem.forward(tape, bound, y, mode)?;
        let mut y = y;
        for stage in &mut self.stages {
            for block in stage {
                y = block.forward(tape, bound, y, mode)?;
            }
        }
        let y = self.pyramid.forward(tape, bound, y, mode)?;
        let y = self.head.forward(tape, bound, y, mode)?;
        nn::bilinear_upsample(tape, y, h, w)
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut v = self.init.params();
        v.extend(self.stem.params());
        for stage in &self.stages {
            for b in stage {
                v.extend(b.params());
            }
        }
        v.extend(self.pyramid.params());
        v.extend(self.head.conv.params());
        v.extend(self.head.classifier.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut v = self.init.params_mut();
        v.extend(self.stem.params_mut());
        for stage in &mut self.stages {
            for b in stage {
                v.extend(b.params_mut());
            }
        }
        v.extend(self.pyramid.params_mut());
        v.extend(self.head.conv.params_mut());
        v.extend(self.head.classifier.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        let mut v = self.init.buffers();
        v.extend(self.stem.buffers());
        for stage in &self.stages {
            for b in stage {
                v.extend(b.buffers());
            }
        }
        v.extend(self.pyramid.buffers());
        v.extend(self.head.conv.buffers());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut v = self.init.buffers_mut();
        v.extend(self.stem.buffers_mut());
        for stage in &mut self.stages {
            for b in stage {
                v.extend(b.buffers_mut());
            }
        }
        v.extend(self.pyramid.buffers_mut());
        v.extend(self.head.conv.buffers_mut());
        v
    }
}
