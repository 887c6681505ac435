//! Two-component univariate Gaussian mixture fitted by EM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{logsumexp, quantile};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE: f64 = 1e-8;

/// Components are ordered by mean, so component 0 is always the inlier cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm1d {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub loglik: f64,
    pub iterations: usize,
    /// Log-likelihood before each EM step and after the last one.
    #[serde(default)]
    pub loglik_trace: Vec<f64>,
    variance_floor: f64,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

impl Gmm1d {
    /// Deterministic start: means at the 25th and 75th percentiles, equal weights,
    /// both variances equal to the pooled data variance.
    pub fn initial(values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "gmm input".into() });
        }
        let sorted = sorted_copy(values);
        if sorted.len() < 2 || sorted.first() == sorted.last() {
            return Err(Error::Degenerate("need at least two distinct values".into()));
        }
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let floor = 1e-12 * (var + 1e-12);
        let mut lo = quantile(&sorted, 0.25)?;
        let mut hi = quantile(&sorted, 0.75)?;
        if lo == hi {
            lo = sorted[0];
            hi = sorted[sorted.len() - 1];
        }
        let mut gmm = Self {
            weights: [0.5, 0.5],
            means: [lo, hi],
            variances: [var.max(floor); 2],
            loglik: f64::NEG_INFINITY,
            iterations: 0,
            loglik_trace: Vec::new(),
            variance_floor: floor,
        };
        gmm.loglik = gmm.log_likelihood(&sorted);
        Ok(gmm)
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| logsumexp(self.log_joint(x)))
            .sum()
    }

    fn log_joint(&self, x: f64) -> [f64; 2] {
        [0, 1].map(|c| self.weights[c].ln() + log_normal(x, self.means[c], self.variances[c]))
    }

    /// Responsibilities of both components at `x`.
    pub fn responsibilities(&self, x: f64) -> [f64; 2] {
        let lj = self.log_joint(x);
        let norm = logsumexp(lj);
        lj.map(|l| (l - norm).exp())
    }

    /// One E step followed by one M step. Returns the updated mixture (with its
    /// log-likelihood evaluated at the new parameters) and the responsibilities
    /// computed in the E step.
    pub fn em_step(&self, values: &[f64]) -> (Self, Vec<[f64; 2]>) {
        let resp: Vec<[f64; 2]> = values.iter().map(|&x| self.responsibilities(x)).collect();
        let n = values.len() as f64;
        let mut next = self.clone();
        for c in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= 0.0 {
                continue;
            }
            let mean = resp.iter().zip(values).map(|(r, x)| r[c] * x).sum::<f64>() / nk;
            let var = resp
                .iter()
                .zip(values)
                .map(|(r, x)| r[c] * (x - mean).powi(2))
                .sum::<f64>()
                / nk;
            next.weights[c] = (nk / n).clamp(1e-300, 1.0);
            next.means[c] = mean;
            next.variances[c] = var.max(self.variance_floor);
        }
        next.loglik = next.log_likelihood(values);
        (next, resp)
    }

    /// Index of the component with the smaller mean.
    pub fn inlier_component(&self) -> usize {
        if self.means[0] <= self.means[1] {
            0
        } else {
            1
        }
    }

    fn canonical(mut self) -> Self {
        if self.means[0] > self.means[1] {
            self.weights.swap(0, 1);
            self.means.swap(0, 1);
            self.variances.swap(0, 1);
        }
        self
    }
}

/// Fit a two-component mixture by EM until the log-likelihood changes by less
/// than [`TOLERANCE`] or [`MAX_ITERATIONS`] steps have run. The input is sorted
/// internally so the result does not depend on its order.
pub fn fit_gmm2(values: &[f64]) -> Result<Gmm1d> {
    let sorted = sorted_copy(values);
    let mut gmm = Gmm1d::initial(&sorted)?;
    let mut trace = vec![gmm.loglik];
    for it in 1..=MAX_ITERATIONS {
        let (next, _) = gmm.em_step(&sorted);
        let delta = next.loglik - gmm.loglik;
        trace.push(next.loglik);
        gmm = next;
        gmm.iterations = it;
        if delta.abs() < TOLERANCE {
            break;
        }
    }
    gmm.loglik_trace = trace;
    Ok(gmm.canonical())
}

/// Posterior probability that `value` belongs to the smaller-mean component.
pub fn posterior_inlier(gmm: &Gmm1d, value: f64) -> f64 {
    gmm.responsibilities(value)[gmm.inlier_component()]
}
