//! Learning rate that halves whenever validation stops improving.

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    bad_evals: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: None,
            bad_evals: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one validation loss; returns whether it improved on the best so far.
    /// After `patience` consecutive non-improving evaluations the rate is scaled by `factor`.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.bad_evals = 0;
            return true;
        }
        self.bad_evals += 1;
        if self.bad_evals >= self.patience {
            self.lr *= self.factor;
            self.bad_evals = 0;
        }
        false
    }
}
