//! Synthetic inlier/outlier mixtures in two dimensions.
//!
//! Inliers are drawn from unit-variance Gaussian clusters. Outliers are uniform
//! on the inlier bounding box scaled by 1.5 about its center, rejecting any point
//! closer than `4 (1 - overlap)` standard deviations to a cluster center. With
//! `overlap = 0` outliers stay out of the dense core; with `overlap = 1` they may
//! fall anywhere, including inside the clusters.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

const CLUSTER_STD: f64 = 1.0;
const BOX_SCALE: f64 = 1.5;
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InlierKind {
    /// Two equally weighted clusters centered at (-2.5, 0) and (2.5, 0).
    GaussianPair,
    /// One cluster at the origin.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierKind {
    UniformBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p_o: f64,
    pub inlier_kind: InlierKind,
    pub outlier_kind: OutlierKind,
    /// In `[0, 1]`; higher values let outliers approach the inlier clusters.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            p_o: 0.05,
            inlier_kind: InlierKind::GaussianPair,
            outlier_kind: OutlierKind::UniformBox,
            overlap: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Outliers allowed well inside the cluster tails, so a loss-based ranking is
    /// genuinely ambiguous near the boundary.
    pub fn ambiguous(seed: u64) -> Self {
        Self {
            overlap: 0.85,
            seed,
            ..Self::default()
        }
    }

    pub fn n_outliers(&self) -> usize {
        ((self.p_o * self.n as f64) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        match self.inlier_kind {
            InlierKind::GaussianPair => vec![[-2.5, 0.0], [2.5, 0.0]],
            InlierKind::Gaussian => vec![[0.0, 0.0]],
        }
    }

    /// Minimum distance between an outlier and any cluster center.
    pub fn exclusion_radius(&self) -> f64 {
        4.0 * (1.0 - self.overlap) * CLUSTER_STD
    }
}

/// Generate a labeled dataset. Rows are shuffled so labels are interleaved, and
/// exactly `ceil(p_o n)` rows are outliers.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if !(spec.p_o > 0.0 && spec.p_o < 0.5) {
        return Err(Error::Config(format!("p_o {} outside (0, 0.5)", spec.p_o)));
    }
    if !(0.0..=1.0).contains(&spec.overlap) {
        return Err(Error::Config(format!("overlap {} outside [0, 1]", spec.overlap)));
    }
    let n_out = spec.n_outliers();
    let n_in = spec.n.saturating_sub(n_out);
    if n_in < 2 {
        return Err(Error::Config(format!("n = {} too small", spec.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = spec.centers();

    let mut points: Vec<([f64; 2], bool)> = Vec::with_capacity(spec.n);
    for i in 0..n_in {
        let c = centers[i % centers.len()];
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        points.push(([c[0] + CLUSTER_STD * dx, c[1] + CLUSTER_STD * dy], false));
    }

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (p, _) in &points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let (mid, half): (Vec<f64>, Vec<f64>) = (0..2)
        .map(|d| ((lo[d] + hi[d]) / 2.0, BOX_SCALE * (hi[d] - lo[d]) / 2.0))
        .unzip();

    let radius = spec.exclusion_radius();
    let mut rejections = 0;
    while points.len() < n_in + n_out {
        let OutlierKind::UniformBox = spec.outlier_kind;
        let p = [
            rng.random_range(mid[0] - half[0]..mid[0] + half[0]),
            rng.random_range(mid[1] - half[1]..mid[1] + half[1]),
        ];
        let near = centers
            .iter()
            .any(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() < radius);
        if near {
            rejections += 1;
            if rejections > MAX_REJECTIONS {
                return Err(Error::Degenerate("outlier region is empty".into()));
            }
            continue;
        }
        points.push((p, true));
    }
    points.shuffle(&mut rng);

    let features = Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i].0[j]);
    let labels = points.iter().map(|(_, o)| *o).collect();
    Dataset::new(features, Some(labels), Some(vec!["x0".into(), "x1".into()]))
}
