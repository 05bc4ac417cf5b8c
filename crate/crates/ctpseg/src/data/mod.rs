//! Dataset representation, on-disk stack format, subject-disjoint folds,
//! augmentation, synthetic phantom generation, and batch streams.

mod augment;
mod batch;
mod folds;
mod stack;
mod synth;

pub use augment::{
    apply_augment, augment, sample_augment, AugmentOp, AugmentParams, SampledAugment,
};
pub use batch::{
    make_batches, split_scans, split_slices, stack_slices, Batch, SliceSample, Split,
    TrainStream,
};
pub use folds::{make_folds, FoldPlan};
pub use stack::{
    load_dataset, read_manifest, read_stack, write_manifest, write_stack, ManifestEntry,
    Mask3, ScanStack, Volume, CHANNEL_NAMES, STACK_FORMAT_VERSION,
};
pub use synth::{synth_generate, SynthConfig};
