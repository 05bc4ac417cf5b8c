//! Per-slice samples and batch streams over a fold split.
//!
//! The train split covers all slices of subjects outside the held-out
//! fold, reshuffled and re-augmented each epoch; the val split covers the
//! fold's slices, unshuffled and unaugmented. The final partial batch is
//! retained.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Element, Tensor};
use crate::error::{Error, Result};

use super::augment::{augment, AugmentParams};
use super::folds::FoldPlan;
use super::stack::ScanStack;

/// One axial slice: the five channels stacked (CT, CBF, CBV, MTT, Tmax)
/// plus its binary label plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    /// `5*H*W` floats, channel-major.
    pub input: Vec<f32>,
    /// `H*W` bytes, 0/1.
    pub label: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

/// Split a scan stack into per-slice samples, channel order preserved.
pub fn stack_slices(stack: &ScanStack) -> Vec<SliceSample> {
    let (d, h, w) = stack.dims();
    (0..d)
        .map(|z| {
            let mut input = Vec::with_capacity(5 * h * w);
            for c in &stack.channels {
                input.extend_from_slice(c.slice(z));
            }
            SliceSample { input, label: stack.mask.slice(z).to_vec(), height: h, width: w }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Slices of the requested split for one fold.
pub fn split_slices(
    dataset: &[ScanStack],
    plan: &FoldPlan,
    fold: usize,
    split: Split,
) -> Result<Vec<SliceSample>> {
    let mut out = Vec::new();
    for stack in dataset {
        let in_fold = plan.fold_of(&stack.subject_id) == Some(fold);
        let wanted = match split {
            Split::Train => !in_fold,
            Split::Val => in_fold,
        };
        if wanted {
            out.extend(stack_slices(stack));
        }
    }
    if out.is_empty() {
        let name = match split {
            Split::Train => "train",
            Split::Val => "val",
        };
        return Err(Error::EmptySplit { split: name, fold });
    }
    Ok(out)
}

/// Scans of the requested split (for per-scan validation metrics).
pub fn split_scans<'a>(
    dataset: &'a [ScanStack],
    plan: &FoldPlan,
    fold: usize,
    split: Split,
) -> Vec<&'a ScanStack> {
    dataset
        .iter()
        .filter(|s| {
            let in_fold = plan.fold_of(&s.subject_id) == Some(fold);
            match split {
                Split::Train => !in_fold,
                Split::Val => in_fold,
            }
        })
        .collect()
}

/// A stacked mini-batch: inputs `B×5×H×W`, labels `B×H×W` in {0,1}.
#[derive(Debug, Clone)]
pub struct Batch<E: Element> {
    pub input: Tensor<E>,
    pub label: Tensor<E>,
    pub len: usize,
}

fn to_batch<E: Element>(samples: &[&SliceSample]) -> Batch<E> {
    let (h, w) = (samples[0].height, samples[0].width);
    let b = samples.len();
    let mut input = Vec::with_capacity(b * 5 * h * w);
    let mut label = Vec::with_capacity(b * h * w);
    for s in samples {
        input.extend(s.input.iter().map(|&v| E::from_f32(v)));
        label.extend(s.label.iter().map(|&v| E::from_f64(v as f64)));
    }
    Batch {
        input: Tensor::from_vec(vec![b, 5, h, w], input).expect("sized"),
        label: Tensor::from_vec(vec![b, h, w], label).expect("sized"),
        len: b,
    }
}

/// Chunk samples into batches in order, keeping the final partial batch.
pub fn make_batches<E: Element>(samples: &[SliceSample], batch_size: usize) -> Vec<Batch<E>> {
    assert!(batch_size > 0);
    samples
        .chunks(batch_size)
        .map(|c| to_batch(&c.iter().collect::<Vec<_>>()))
        .collect()
}

/// Reshuffled, re-augmented training batches, deterministic per
/// `(seed, epoch)`.
pub struct TrainStream {
    pub samples: Vec<SliceSample>,
    pub batch_size: usize,
    pub augment: AugmentParams,
    pub seed: u64,
}

impl TrainStream {
    pub fn epoch_batches<E: Element>(&self, epoch: usize) -> Vec<Batch<E>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let augmented: Vec<SliceSample> = order
            .iter()
            .map(|&i| augment(&self.samples[i], &self.augment, &mut rng))
            .collect();
        make_batches(&augmented, self.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use crate::data::folds::make_folds;
    use crate::data::synth::{synth_generate, SynthConfig};

    use super::*;

    fn tiny_dataset() -> Vec<ScanStack> {
        synth_generate(&SynthConfig {
            n_subjects: 8,
            size: (16, 16),
            seed: 3,
            ..Default::default()
        })
    }

    #[test]
    fn batch_partition_keeps_partial() {
        let samples: Vec<SliceSample> = (0..19)
            .map(|i| SliceSample {
                input: vec![i as f32; 5 * 4 * 4],
                label: vec![0; 16],
                height: 4,
                width: 4,
            })
            .collect();
        let batches = make_batches::<f32>(&samples, 8);
        let sizes: Vec<usize> = batches.iter().map(|b| b.len).collect();
        assert_eq!(sizes, vec![8, 8, 3]);
    }

    #[test]
    fn val_stream_is_identical_across_iterations() {
        let ds = tiny_dataset();
        let subjects: Vec<String> =
            ds.iter().map(|s| s.subject_id.clone()).collect();
        let plan = make_folds(&subjects, 4, 9).unwrap();
        let val = split_slices(&ds, &plan, 0, Split::Val).unwrap();
        let a = make_batches::<f32>(&val, 8);
        let b = make_batches::<f32>(&val, 8);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.input.data(), y.input.data());
            assert_eq!(x.label.data(), y.label.data());
        }
    }

    #[test]
    fn train_and_val_subjects_partition_dataset() {
        let ds = tiny_dataset();
        let subjects: Vec<String> =
            ds.iter().map(|s| s.subject_id.clone()).collect();
        let plan = make_folds(&subjects, 3, 5).unwrap();
        for fold in 0..3 {
            let train: BTreeSet<String> = split_scans(&ds, &plan, fold, Split::Train)
                .iter()
                .map(|s| s.subject_id.clone())
                .collect();
            let val: BTreeSet<String> = split_scans(&ds, &plan, fold, Split::Val)
                .iter()
                .map(|s| s.subject_id.clone())
                .collect();
            assert!(train.is_disjoint(&val));
            let all: BTreeSet<String> = subjects.iter().cloned().collect();
            let union: BTreeSet<String> = train.union(&val).cloned().collect();
            assert_eq!(union, all);
        }
    }

    #[test]
    fn empty_split_is_an_error() {
        let ds = tiny_dataset();
        let subjects: Vec<String> =
            ds.iter().map(|s| s.subject_id.clone()).collect();
        // k equal to subject count leaves fold 0 with one subject and the
        // train split of a one-subject dataset empty.
        let plan = make_folds(&subjects[..1], 1, 0).unwrap();
        let one = &ds[..1];
        assert!(matches!(
            split_slices(one, &plan, 0, Split::Train),
            Err(Error::EmptySplit { split: "train", fold: 0 })
        ));
    }

    #[test]
    fn train_stream_is_deterministic_per_seed_and_epoch() {
        let ds = tiny_dataset();
        let subjects: Vec<String> =
            ds.iter().map(|s| s.subject_id.clone()).collect();
        let plan = make_folds(&subjects, 4, 9).unwrap();
        let train = split_slices(&ds, &plan, 0, Split::Train).unwrap();
        let stream = TrainStream {
            samples: train.clone(),
            batch_size: 8,
            augment: AugmentParams::default(),
            seed: 77,
        };
        let a = stream.epoch_batches::<f32>(3);
        let b = stream.epoch_batches::<f32>(3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.input.data(), y.input.data());
        }
        let c = stream.epoch_batches::<f32>(4);
        let changed = a
            .iter()
            .zip(&c)
            .any(|(x, y)| x.input.data() != y.input.data());
        assert!(changed, "different epochs should reshuffle/re-augment");
    }
}
