use serde::{Deserialize, Serialize};

/// Mini-batch sizes `min(round(n0 * gamma^(t-1)), n_train)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub n0: usize,
    pub gamma: f64,
    pub n_train: usize,
}

impl BatchSchedule {
    pub fn size(&self, t: usize) -> usize {
        let exponent = t.saturating_sub(1) as i32;
        let raw = (self.n0 as f64 * self.gamma.powi(exponent)).round();
        if raw >= self.n_train as f64 {
            self.n_train
        } else {
            (raw as usize).max(1)
        }
    }
}

/// When query rounds fire during polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySchedule {
    pub t1: usize,
    pub t2: usize,
    pub ta: usize,
}

impl QuerySchedule {
    /// Steps between rounds, also the ensemble window length.
    pub fn interval(&self) -> usize {
        self.t2 / self.ta
    }

    /// Round number (from 1) that fires before the update at step `t`, if any.
    pub fn round_at(&self, t: usize) -> Option<usize> {
        let te = self.interval();
        if te == 0 || t <= self.t1 || t > self.t1 + self.t2 {
            return None;
        }
        let offset = t - self.t1;
        offset.is_multiple_of(te).then_some(offset / te)
    }

    pub fn query_steps(&self) -> Vec<usize> {
        (self.t1 + 1..=self.t1 + self.t2)
            .filter(|&t| self.round_at(t).is_some())
            .collect()
    }
}
