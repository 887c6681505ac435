use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub losses: Vec<f64>,
}

/// The most recent full-training-set loss vectors, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBuffer {
    capacity: usize,
    items: VecDeque<Snapshot>,
}

impl SnapshotBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: usize, losses: Vec<f64>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(Snapshot { t, losses });
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.items.iter().map(|s| s.t).collect()
    }

    pub fn latest(&self) -> Option<&Snapshot> {
        self.items.back()
    }

    /// Elementwise mean of the buffered snapshots.
    pub fn ensemble(&self) -> Result<Vec<f64>> {
        let first = self.items.front().ok_or(Error::Empty("snapshot buffer"))?;
        let mut acc = vec![0.0; first.losses.len()];
        for s in &self.items {
            for (a, l) in acc.iter_mut().zip(&s.losses) {
                *a += l;
            }
        }
        let n = self.items.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub t: usize,
    /// Mean loss over ground-truth inliers; absent when there are none.
    pub inlier: Option<f64>,
    pub outlier: Option<f64>,
}

/// Mean per-class training loss over iterations, for diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub points: Vec<RiskPoint>,
}

impl RiskTrace {
    pub fn record(&mut self, t: usize, losses: &[f64], is_outlier: &[bool]) {
        let mean_of = |want: bool| {
            let v: Vec<f64> = losses
                .iter()
                .zip(is_outlier)
                .filter(|(_, o)| **o == want)
                .map(|(l, _)| *l)
                .collect();
            crate::losses::mean(&v)
        };
        self.points.push(RiskPoint {
            t,
            inlier: mean_of(false),
            outlier: mean_of(true),
        });
    }

    pub fn at(&self, t: usize) -> Option<&RiskPoint> {
        self.points.iter().rev().find(|p| p.t == t)
    }
}
