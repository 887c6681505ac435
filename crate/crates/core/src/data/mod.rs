//! Datasets: CSV ingestion, seeded train/test splitting with min-max scaling,
//! and a synthetic inlier/outlier mixture.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, read_csv, write_scores_csv, ScoreRow, Split};
pub use synthetic::{make_synthetic, InlierKind, OutlierKind, SyntheticSpec};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Lower and upper bounds applied after scaling held-out rows.
pub const CLAMP_LOW: f64 = -0.5;
pub const CLAMP_HIGH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Feature matrix, min-max scaled once the dataset has been split.
    pub features: Array2<f64>,
    /// Unscaled features, kept so humans can judge original values.
    pub raw: Option<Array2<f64>>,
    /// `true` marks an outlier.
    pub labels: Option<Vec<bool>>,
    pub feature_names: Option<Vec<String>>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub norm: Option<NormStats>,
}

impl Dataset {
    /// Unsplit dataset: every row is a training row.
    pub fn new(features: Array2<f64>, labels: Option<Vec<bool>>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let n = features.nrows();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(shape_err("labels", n, l.len()));
            }
        }
        if let Some(names) = &feature_names {
            if names.len() != features.ncols() {
                return Err(shape_err("feature names", features.ncols(), names.len()));
            }
        }
        Ok(Self {
            features,
            raw: None,
            labels,
            feature_names,
            train_idx: (0..n).collect(),
            test_idx: Vec::new(),
            norm: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn train_features(&self) -> Array2<f64> {
        self.features.select(Axis(0), &self.train_idx)
    }

    pub fn test_features(&self) -> Array2<f64> {
        self.features.select(Axis(0), &self.test_idx)
    }

    pub fn train_labels(&self) -> Option<Vec<bool>> {
        self.labels
            .as_ref()
            .map(|l| self.train_idx.iter().map(|&i| l[i]).collect())
    }

    pub fn test_labels(&self) -> Option<Vec<bool>> {
        self.labels
            .as_ref()
            .map(|l| self.test_idx.iter().map(|&i| l[i]).collect())
    }
}

/// Per-feature minimum and maximum of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("normalization rows"));
        }
        let min = x
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let max = x
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self { min, max })
    }

    /// `(x - min) / (max - min)` per feature; constant features map to 0.
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.min.len() {
            return Err(shape_err("normalization", self.min.len(), x.ncols()));
        }
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[j], self.max[j]);
            let range = hi - lo;
            col.mapv_inplace(|v| {
                if range > 0.0 {
                    ((v - lo) / range).clamp(CLAMP_LOW, CLAMP_HIGH)
                } else {
                    0.0
                }
            });
        }
        Ok(out)
    }
}

/// Seeded uniform shuffle, the first `ceil((1 - test_fraction) n)` rows go to
/// training, then min-max scaling fitted on training rows only. Index lists are
/// returned in ascending order.
pub fn split_and_normalize(dataset: Dataset, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let n = dataset.n_rows();
    if n < 4 {
        return Err(Error::Config(format!("need at least 4 rows to split, got {n}")));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let n_train = (((1.0 - test_fraction) * n as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let raw = dataset.raw.unwrap_or_else(|| dataset.features.clone());
    let stats = NormStats::fit(&raw.select(Axis(0), &train_idx))?;
    let features = stats.transform(&raw)?;
    Ok(Dataset {
        features,
        raw: Some(raw),
        labels: dataset.labels,
        feature_names: dataset.feature_names,
        train_idx,
        test_idx,
        norm: Some(stats),
    })
}
