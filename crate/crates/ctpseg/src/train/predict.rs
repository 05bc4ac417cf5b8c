//! Inference: per-slice forward passes, argmax masks, and model
//! ensembling over averaged foreground probabilities.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, NodeId, Tape, Tensor};
use crate::data::{Mask3, ScanStack};
use crate::error::{Error, Result};
use crate::models::{Bound, Mode, Model};

/// Foreground probability of two-class logits: `sigmoid(z1 - z0)`, the
/// class-axis softmax evaluated stably.
pub fn foreground_prob<E: Element>(tape: &mut Tape<E>, logits: NodeId) -> Result<NodeId> {
    let z1 = tape.select_channel(logits, 1)?;
    let z0 = tape.select_channel(logits, 0)?;
    let d = tape.sub(z1, z0)?;
    Ok(tape.sigmoid(d))
}

fn scan_batch<E: Element>(scan: &ScanStack) -> Tensor<E> {
    let (d, h, w) = scan.dims();
    let mut data = Vec::with_capacity(d * 5 * h * w);
    for z in 0..d {
        for c in &scan.channels {
            data.extend(c.slice(z).iter().map(|&v| E::from_f32(v)));
        }
    }
    Tensor::from_vec(vec![d, 5, h, w], data).expect("sized")
}

fn check_scan_size<E: Element>(model: &Model<E>, scan: &ScanStack) -> Result<()> {
    let (_, h, w) = scan.dims();
    if (h, w) != model.input_size() {
        return Err(Error::shape(format!(
            "scan slices are {h}×{w}, model expects {}×{}",
            model.input_size().0,
            model.input_size().1
        )));
    }
    Ok(())
}

/// Per-slice foreground probabilities for a whole scan, eval mode.
pub fn predict_probabilities<E: Element>(
    model: &mut Model<E>,
    scan: &ScanStack,
) -> Result<Vec<E>> {
    check_scan_size(model, scan)?;
    let mut tape = Tape::new();
    let mut bound = Bound::new();
    let input = scan_batch::<E>(scan);
    let x = tape.leaf(&input);
    let logits = model.forward(&mut tape, &mut bound, x, Mode::Eval)?;
    let p = foreground_prob(&mut tape, logits)?;
    Ok(tape.value(p).to_vec())
}

/// Class-axis argmax as a binary mask volume of the scan's shape.
pub fn predict_mask<E: Element>(model: &mut Model<E>, scan: &ScanStack) -> Result<Mask3> {
    check_scan_size(model, scan)?;
    let (d, h, w) = scan.dims();
    let mut tape = Tape::new();
    let mut bound = Bound::new();
    let input = scan_batch::<E>(scan);
    let x = tape.leaf(&input);
    let logits = model.forward(&mut tape, &mut bound, x, Mode::Eval)?;
    let vals = tape.value(logits);
    // argmax over the class axis; ties resolve to class 0 (background).
    let mut mask = Mask3::zeros(d, h, w);
    let hw = h * w;
    for z in 0..d {
        for s in 0..hw {
            let z0 = vals[(z * 2) * hw + s];
            let z1 = vals[(z * 2 + 1) * hw + s];
            mask.data[z * hw + s] = u8::from(z1 > z0);
        }
    }
    Ok(mask)
}

/// How ensemble members combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleRule {
    /// Mean foreground probability thresholded at 0.5 (ties → background).
    #[default]
    MeanProbability,
    /// Per-model binary votes; strict majority wins (ties → background).
    MajorityVote,
}

/// Combine predictions from several models on one scan.
pub fn ensemble_predict<E: Element>(
    models: &mut [Model<E>],
    scan: &ScanStack,
    rule: EnsembleRule,
) -> Result<Mask3> {
    if models.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let contract = (models[0].input_size(), models[0].num_classes());
    for m in models.iter() {
        if (m.input_size(), m.num_classes()) != contract {
            return Err(Error::HeterogeneousInputs(format!(
                "{:?} vs {:?}",
                (m.input_size(), m.num_classes()),
                contract
            )));
        }
    }
    let (d, h, w) = scan.dims();
    let voxels = d * h * w;
    let mut mask = Mask3::zeros(d, h, w);
    match rule {
        EnsembleRule::MeanProbability => {
            let mut sum = vec![0.0f64; voxels];
            for model in models.iter_mut() {
                let p = predict_probabilities(model, scan)?;
                for (s, v) in sum.iter_mut().zip(&p) {
                    *s += v.as_f64();
                }
            }
            let n = models.len() as f64;
            for (m, s) in mask.data.iter_mut().zip(&sum) {
                *m = u8::from(s / n > 0.5);
            }
        }
        EnsembleRule::MajorityVote => {
            let mut votes = vec![0usize; voxels];
            for model in models.iter_mut() {
                let p = predict_mask(model, scan)?;
                for (v, &b) in votes.iter_mut().zip(&p.data) {
                    *v += b as usize;
                }
            }
            for (m, &v) in mask.data.iter_mut().zip(&votes) {
                *m = u8::from(2 * v > models.len());
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use crate::data::{synth_generate, SynthConfig};
    use crate::models::{ModelConfig, PspConfig};

    use super::*;

    fn tiny_model(seed: u64) -> Model<f32> {
        let cfg = PspConfig {
            bins: vec![1, 2],
            backbone_channels: vec![4, 4, 4],
            n_psp: Some(2),
            head_channels: Some(4),
            input_size: (16, 16),
            ..PspConfig::default()
        };
        Model::build(&ModelConfig::Pspnet(cfg), seed).unwrap()
    }

    fn tiny_scans() -> Vec<ScanStack> {
        synth_generate(&SynthConfig {
            n_subjects: 2,
            size: (16, 16),
            seed: 1,
            ..Default::default()
        })
    }

    #[test]
    fn mask_shape_matches_scan_and_is_binary() {
        let mut model = tiny_model(3);
        for scan in tiny_scans() {
            let mask = predict_mask(&mut model, &scan).unwrap();
            assert_eq!(
                (mask.depth, mask.height, mask.width),
                scan.dims(),
                "shape contract"
            );
            assert!(mask.is_binary());
        }
    }

    #[test]
    fn wrong_slice_size_rejected() {
        let mut model = tiny_model(3);
        let other = synth_generate(&SynthConfig {
            n_subjects: 1,
            size: (32, 32),
            seed: 2,
            ..Default::default()
        });
        assert!(matches!(
            predict_mask(&mut model, &other[0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn eval_predictions_are_deterministic() {
        let mut model = tiny_model(5);
        let scan = &tiny_scans()[0];
        let a = predict_mask(&mut model, scan).unwrap();
        let b = predict_mask(&mut model, scan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_model_ensemble_equals_plain_prediction() {
        let scan = &tiny_scans()[0];
        let mut model = tiny_model(7);
        let plain = predict_mask(&mut model, scan).unwrap();
        let mut solo = [tiny_model(7)];
        let ens =
            ensemble_predict(&mut solo, scan, EnsembleRule::MeanProbability).unwrap();
        assert_eq!(plain, ens);
    }

    #[test]
    fn ten_copies_match_one() {
        let scan = &tiny_scans()[0];
        let mut one = [tiny_model(9)];
        let a = ensemble_predict(&mut one, scan, EnsembleRule::MeanProbability).unwrap();
        let mut ten: Vec<Model<f32>> = (0..10).map(|_| tiny_model(9)).collect();
        let b = ensemble_predict(&mut ten, scan, EnsembleRule::MeanProbability).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_probability_threshold_rule() {
        // Foreground probabilities 0.6 and 0.3 average to 0.45 → background.
        let probs = std::hint::black_box([0.6f64, 0.3]);
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        assert!(mean <= 0.5, "0.45 must threshold to background");
        // And 0.6/0.6 → foreground.
        let both = std::hint::black_box([0.6f64, 0.6]);
        assert!(both.iter().sum::<f64>() / 2.0 > 0.5);
    }

    #[test]
    fn empty_and_heterogeneous_ensembles_rejected() {
        let scan = &tiny_scans()[0];
        let mut none: Vec<Model<f32>> = vec![];
        assert!(matches!(
            ensemble_predict(&mut none, scan, EnsembleRule::MeanProbability),
            Err(Error::EmptyEnsemble)
        ));

        let other_cfg = PspConfig {
            bins: vec![1, 2],
            backbone_channels: vec![4, 4, 4],
            n_psp: Some(2),
            head_channels: Some(4),
            input_size: (32, 32),
            ..PspConfig::default()
        };
        let mut mixed = vec![
            tiny_model(1),
            Model::build(&ModelConfig::Pspnet(other_cfg), 1).unwrap(),
        ];
        assert!(matches!(
            ensemble_predict(&mut mixed, scan, EnsembleRule::MeanProbability),
            Err(Error::HeterogeneousInputs(_))
        ));
    }
}
