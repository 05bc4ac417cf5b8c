//! 2D U-Net: contracting double-conv/maxpool path and expanding
//! transposed-conv path with skip concatenations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Element, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{self, ConvSpec};

use super::config::UnetConfig;
use super::layers::{Bound, ConvLayer, Mode, Param};

/// Two 3×3 same-padding convolutions, each followed by relu.
#[derive(Debug, Clone)]
pub struct DoubleConv<E: Element> {
    pub conv1: ConvLayer<E>,
    pub conv2: ConvLayer<E>,
}

impl<E: Element> DoubleConv<E> {
    fn init(name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let spec = ConvSpec::new(3, 3).padding(1, 1);
        DoubleConv {
            conv1: ConvLayer::init(&format!("{name}.conv1"), cin, cout, spec, true, rng),
            conv2: ConvLayer::init(&format!("{name}.conv2"), cout, cout, spec, true, rng),
        }
    }

    fn forward(&self, tape: &mut Tape<E>, bound: &mut Bound, x: NodeId) -> Result<NodeId> {
        let y = self.conv1.forward(tape, bound, x)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, bound, y)?;
        Ok(tape.relu(y))
    }

    fn params(&self) -> Vec<&Param<E>> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct UNet2d<E: Element> {
    pub cfg: UnetConfig,
    encoders: Vec<DoubleConv<E>>,
    bottleneck: DoubleConv<E>,
    /// Transposed-conv upsampler plus the post-concat double conv, ordered
    /// from the deepest level outward.
    decoders: Vec<(ConvLayer<E>, DoubleConv<E>)>,
    final_conv: ConvLayer<E>,
}

impl<E: Element> UNet2d<E> {
    pub fn build(cfg: &UnetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = |level: usize| cfg.base_channels << level;

        let mut encoders = Vec::new();
        let mut cin = cfg.in_channels;
        for l in 0..cfg.levels {
            encoders.push(DoubleConv::init(&format!("enc{l}"), cin, width(l), &mut rng));
            cin = width(l);
        }
        let bottleneck =
            DoubleConv::init("bottleneck", cin, width(cfg.levels), &mut rng);

        let mut decoders = Vec::new();
        for l in (0..cfg.levels).rev() {
            let deep = width(l + 1);
            let skip = width(l);
            let up = ConvLayer::init_transposed(
                &format!("dec{l}.up"),
                deep,
                skip,
                ConvSpec::new(2, 2).stride(2, 2),
                true,
                &mut rng,
            );
            let fuse =
                DoubleConv::init(&format!("dec{l}.fuse"), skip + skip, skip, &mut rng);
            decoders.push((up, fuse));
        }

        let final_conv = ConvLayer::init(
            "final",
            cfg.base_channels,
            cfg.num_classes,
            ConvSpec::new(1, 1),
            true,
            &mut rng,
        );

        Ok(UNet2d { cfg: cfg.clone(), encoders, bottleneck, decoders, final_conv })
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        _mode: Mode,
    ) -> Result<NodeId> {
        let shape = tape.shape(x).to_vec();
        if shape[1] != self.cfg.in_channels {
            return Err(Error::WrongChannelCount {
                expected: self.cfg.in_channels,
                got: shape[1],
            });
        }
        let div = 1usize << self.cfg.levels;
        if !shape[2].is_multiple_of(div) || !shape[3].is_multiple_of(div) {
            return Err(Error::ConfigInvalid(format!(
                "input {}×{} not divisible by 2^{}",
                shape[2], shape[3], self.cfg.levels
            )));
        }

        let mut skips = Vec::new();
        let mut y = x;
        for enc in &self.encoders {
            y = enc.forward(tape, bound, y)?;
            skips.push(y);
            y = nn::max_pool2d(tape, y, (2, 2), (2, 2))?;
        }
        y = self.bottleneck.forward(tape, bound, y)?;
        for (up, fuse) in &self.decoders {
            let skip = skips.pop().expect("one skip per decoder");
            y = up.forward(tape, bound, y)?;
            let cat = nn::concat(tape, &[skip, y])?;
            y = fuse.forward(tape, bound, cat)?;
        }
        self.final_conv.forward(tape, bound, y)
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        let mut v: Vec<&Param<E>> =
            self.encoders.iter().flat_map(|e| e.params()).collect();
        v.extend(self.bottleneck.params());
        for (up, fuse) in &self.decoders {
            v.extend(up.params());
            v.extend(fuse.params());
        }
        v.extend(self.final_conv.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut v: Vec<&mut Param<E>> =
            self.encoders.iter_mut().flat_map(|e| e.params_mut()).collect();
        v.extend(self.bottleneck.params_mut());
        for (up, fuse) in &mut self.decoders {
            v.extend(up.params_mut());
            v.extend(fuse.params_mut());
        }
        v.extend(self.final_conv.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        Vec::new()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        Vec::new()
    }
}
