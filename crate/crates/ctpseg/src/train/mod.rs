//! RMSProp optimization with plateau learning-rate scheduling and early
//! stopping, two-phase fine-tuning, prediction, and ensembling.

mod predict;
mod rmsprop;
mod schedule;
mod trainer;

pub use predict::{
    ensemble_predict, foreground_prob, predict_mask, predict_probabilities, EnsembleRule,
};
pub use rmsprop::{RmsProp, RMSPROP_ALPHA, RMSPROP_EPS};
pub use schedule::{ScheduleAction, ScheduleConfig, ScheduleState};
pub use trainer::{
    fine_tune_two_phase, new_layer_prefixes, train, validation_dsc, EpochRecord,
    FineTuneConfig, TrainConfig, TrainData, TrainOutcome,
};
