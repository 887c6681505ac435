//! Labeled inlier/outlier sets and per-round query budgets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inlier,
    Outlier,
}

impl Label {
    pub fn from_is_outlier(is_outlier: bool) -> Self {
        if is_outlier {
            Label::Outlier
        } else {
            Label::Inlier
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub index: usize,
    pub label: Label,
}

/// Disjoint sets of labeled training indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStore {
    inliers: BTreeSet<usize>,
    outliers: BTreeSet<usize>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inliers(&self) -> Vec<usize> {
        self.inliers.iter().copied().collect()
    }

    pub fn outliers(&self) -> Vec<usize> {
        self.outliers.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.inliers.len() + self.outliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> Option<Label> {
        if self.inliers.contains(&index) {
            Some(Label::Inlier)
        } else if self.outliers.contains(&index) {
            Some(Label::Outlier)
        } else {
            None
        }
    }

    /// Add a batch of answers atomically: either all are applied or none.
    /// Labeling an already labeled index or repeating an index is a conflict.
    pub fn apply(&mut self, answers: &[Answer]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for a in answers {
            if let Some(existing) = self.get(a.index) {
                return Err(Error::LabelConflict {
                    index: a.index,
                    reason: format!("already labeled {existing:?}"),
                });
            }
            if !seen.insert(a.index) {
                return Err(Error::LabelConflict {
                    index: a.index,
                    reason: "answered twice in one batch".into(),
                });
            }
        }
        for a in answers {
            match a.label {
                Label::Inlier => self.inliers.insert(a.index),
                Label::Outlier => self.outliers.insert(a.index),
            };
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// `ceil(0.01 n)` queries in every round.
    #[default]
    PerRound,
    /// `ceil(0.01 n)` queries split evenly over all rounds.
    Total,
}

/// Number of queries issued per round for a training set of `n_train` rows.
/// Sets smaller than 500 rows get a fixed 6 per round.
pub fn per_round_budget(n_train: usize, rounds: usize, mode: BudgetMode) -> usize {
    if n_train < 500 {
        return 6;
    }
    let base = n_train.div_ceil(100);
    match mode {
        BudgetMode::PerRound => base,
        BudgetMode::Total => base.div_ceil(rounds.max(1)).max(1),
    }
}
