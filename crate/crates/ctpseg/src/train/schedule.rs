//! Plateau learning-rate schedule with early stopping, driven by the
//! validation DSC after every epoch.

/// Schedule thresholds: reduce the learning rate after `plateau_epochs`
/// stagnant epochs (and again at every further multiple), stop after
/// `early_stop_patience`.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleConfig {
    pub plateau_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_reduce_factor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { plateau_epochs: 20, early_stop_patience: 50, lr_reduce_factor: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue { improved: bool },
    ReduceLr,
    Stop,
}

/// Monitoring state across epochs.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    pub best_dsc: f64,
    pub epochs_since_improvement: usize,
    pub stopped: bool,
    pub lr_history: Vec<f64>,
}

impl Default for ScheduleState {
    fn default() -> Self {
        Self::new()
    }
}

impl ScheduleState {
    pub fn new() -> Self {
        ScheduleState {
            best_dsc: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            stopped: false,
            lr_history: Vec::new(),
        }
    }

    /// Strict improvement resets the stagnation counter; the counter keeps
    /// running across reductions, so reductions fire at every multiple of
    /// `plateau_epochs` until the patience threshold stops the run.
    pub fn update(&mut self, val_dsc: f64, cfg: &ScheduleConfig) -> ScheduleAction {
        if val_dsc > self.best_dsc {
            self.best_dsc = val_dsc;
            self.epochs_since_improvement = 0;
            return ScheduleAction::Continue { improved: true };
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= cfg.early_stop_patience {
            self.stopped = true;
            ScheduleAction::Stop
        } else if self.epochs_since_improvement.is_multiple_of(cfg.plateau_epochs) {
            ScheduleAction::ReduceLr
        } else {
            ScheduleAction::Continue { improved: false }
        }
    }
}
