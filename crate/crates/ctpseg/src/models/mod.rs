//! Model construction, forward execution, trainable masks, and
//! checkpointing for the two architectures.

mod checkpoint;
mod config;
pub mod layers;
mod pspnet;
mod unet;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointMeta, OptimizerMeta,
    MAGIC, VERSION,
};
pub use config::{ModelConfig, PspConfig, UnetConfig};
pub use layers::{BatchNorm, Bound, ConvLayer, Mode, Param};
pub use pspnet::{InitializerLayer, PspNet, PyramidPooling};
pub use unet::UNet2d;

use crate::autodiff::{Element, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// A built network: named parameters plus the architecture tag.
// A handful of models exist at a time; boxing the variants would only
// complicate the API.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Model<E: Element> {
    Pspnet(PspNet<E>),
    Unet2d(UNet2d<E>),
}

impl<E: Element> Model<E> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let model = match cfg {
            ModelConfig::Pspnet(c) => Model::Pspnet(PspNet::build(c, seed)?),
            ModelConfig::Unet2d(c) => Model::Unet2d(UNet2d::build(c, seed)?),
        };
        debug_assert!(model.names_are_unique(), "duplicate parameter name");
        Ok(model)
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Pspnet(m) => ModelConfig::Pspnet(m.cfg.clone()),
            Model::Unet2d(m) => ModelConfig::Unet2d(m.cfg.clone()),
        }
    }

    pub fn arch_tag(&self) -> &'static str {
        match self {
            Model::Pspnet(_) => "pspnet",
            Model::Unet2d(_) => "unet2d",
        }
    }

    pub fn input_size(&self) -> (usize, usize) {
        match self {
            Model::Pspnet(m) => m.cfg.input_size,
            Model::Unet2d(m) => m.cfg.input_size,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Pspnet(m) => m.cfg.num_classes,
            Model::Unet2d(m) => m.cfg.num_classes,
        }
    }

    /// Forward to N×classes×H×W logits, binding parameters on `bound`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        match self {
            Model::Pspnet(m) => m.forward(tape, bound, x, mode),
            Model::Unet2d(m) => m.forward(tape, bound, x, mode),
        }
    }

    pub fn params(&self) -> Vec<&Param<E>> {
        match self {
            Model::Pspnet(m) => m.params(),
            Model::Unet2d(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        match self {
            Model::Pspnet(m) => m.params_mut(),
            Model::Unet2d(m) => m.params_mut(),
        }
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        match self {
            Model::Pspnet(m) => m.buffers(),
            Model::Unet2d(m) => m.buffers(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        match self {
            Model::Pspnet(m) => m.buffers_mut(),
            Model::Unet2d(m) => m.buffers_mut(),
        }
    }

    /// Parameters followed by buffers, in deterministic construction order:
    /// the checkpoint manifest order.
    pub fn state_entries(&self) -> Vec<(String, &Tensor<E>)> {
        let mut v: Vec<(String, &Tensor<E>)> =
            self.params().into_iter().map(|p| (p.name.clone(), &p.value)).collect();
        v.extend(self.buffers());
        v
    }

    pub fn param_element_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    fn names_are_unique(&self) -> bool {
        let mut names: Vec<String> =
            self.state_entries().iter().map(|(n, _)| n.clone()).collect();
        let before = names.len();
        names.sort();
        names.dedup();
        names.len() == before
    }

    /// Set the trainable flag on every parameter matching `pattern`:
    /// `*` for all, a trailing `*` for a prefix, otherwise an exact name.
    pub fn set_trainable(&mut self, pattern: &str, trainable: bool) -> Result<usize> {
        let matches = |name: &str| -> bool {
            if pattern == "*" {
                true
            } else if let Some(prefix) = pattern.strip_suffix('*') {
                name.starts_with(prefix)
            } else {
                name == pattern
            }
        };
        let mut n = 0;
        for p in self.params_mut() {
            if matches(&p.name) {
                p.trainable = trainable;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::NoMatch { pattern: pattern.to_string() });
        }
        Ok(n)
    }

    /// Convert the element type, preserving values and trainable flags.
    pub fn cast<T: Element>(&self) -> Model<T> {
        let cfg = self.config();
        let mut out = Model::<T>::build(&cfg, 0).expect("config was already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            debug_assert_eq!(dst.name, src.name);
            dst.value = src.value.cast();
            dst.trainable = src.trainable;
        }
        let src_buffers = self.buffers();
        for ((dname, dst), (sname, src)) in out.buffers_mut().into_iter().zip(src_buffers) {
            debug_assert_eq!(dname, sname);
            *dst = src.cast();
        }
        out
    }
}
