//! Per-sample Monte-Carlo objectives and the batch-level composites built on them.
//!
//! The inlier loss is the negative importance-weighted lower bound
//! `l_i(x) = -(logsumexp_k log w_k - log K)` and the outlier loss is the negative
//! chi upper bound with power 2, `l_o(x) = -(logsumexp_k 2 log w_k - log K) / 2`.
//! Both are computed from the same log-weights, so for any fixed noise draw
//! `l_o(x) <= l_i(x)` by the power-mean inequality.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_weights, Noise, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Importance samples per evaluation.
    pub k: usize,
    /// Chi upper bound power.
    pub v: u32,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
    pub xi: f64,
    /// Scale both lambdas by `gamma^-(t - T1 - 1)` during polarization instead of
    /// holding them constant.
    #[serde(default)]
    pub decay_lambdas: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            k: 2,
            v: 2,
            lambda1: 2.0,
            lambda2: 1.0,
            rho: 0.92,
            xi: 0.4,
            decay_lambdas: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.v != 2 {
            return Err(Error::Config("only v = 2 is supported".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambdas must be non-negative".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::Config(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau: f64,
    pub q_rho: f64,
    pub r_hat_i: Option<f64>,
}

impl ThresholdState {
    pub fn new(q_rho: f64, r_hat_i: Option<f64>, xi: f64) -> Self {
        Self {
            tau: adaptive_threshold(q_rho, r_hat_i, xi),
            q_rho,
            r_hat_i,
        }
    }
}

pub fn logsumexp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Negative importance-weighted bound from one sample's log-weights.
pub fn iwae_from_log_weights(log_w: &[f64]) -> f64 {
    -(logsumexp(log_w.iter().copied()) - (log_w.len() as f64).ln())
}

/// Negative chi upper bound (power 2) from one sample's log-weights.
pub fn cubo_from_log_weights(log_w: &[f64]) -> f64 {
    -0.5 * (logsumexp(log_w.iter().map(|w| 2.0 * w)) - (log_w.len() as f64).ln())
}

fn single_log_weights(params: &ParamStore, x: &[f64], noise: &Noise) -> Result<Vec<f64>> {
    if noise.n_samples() != 1 {
        return Err(crate::error::shape_err("noise", "one sample", noise.n_samples()));
    }
    let x = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| crate::error::shape_err("input", "row vector", e))?;
    let lw = log_weights(params, x, noise)?;
    Ok(lw.row(0).to_vec())
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.into() })
    }
}

pub fn iwae_loss(params: &ParamStore, x: &[f64], noise: &Noise) -> Result<f64> {
    finite("iwae loss", iwae_from_log_weights(&single_log_weights(params, x, noise)?))
}

pub fn cubo_loss(params: &ParamStore, x: &[f64], noise: &Noise) -> Result<f64> {
    finite("cubo loss", cubo_from_log_weights(&single_log_weights(params, x, noise)?))
}

/// Nearest-rank quantile: the element at 1-based rank `ceil(rho * n)` of the
/// ascending order.
pub fn quantile(values: &[f64], rho: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty set"));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("quantile level must lie in (0, 1), got {rho}")));
    }
    let n = values.len();
    // guard against rho * n landing a hair above an integer
    let rank = ((rho * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = values.to_vec();
    let (_, nth, _) = sorted.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*nth)
}

/// `(1 - xi) * q_rho + xi * r_hat_i`, or `q_rho` when no labeled inliers exist.
pub fn adaptive_threshold(q_rho: f64, r_hat_i: Option<f64>, xi: f64) -> f64 {
    match r_hat_i {
        Some(r) => (1.0 - xi) * q_rho + xi * r,
        None => q_rho,
    }
}

/// Mean of the losses that do not exceed `tau`. Returns 0 with an all-false mask
/// when nothing survives.
pub fn trimmed_loss(losses: &[f64], tau: f64) -> (f64, Vec<bool>) {
    let mask: Vec<bool> = losses.iter().map(|&l| l <= tau).collect();
    let (sum, count) = losses
        .iter()
        .zip(&mask)
        .filter(|(_, &keep)| keep)
        .fold((0.0, 0usize), |(s, c), (&l, _)| (s + l, c + 1));
    let value = if count == 0 { 0.0 } else { sum / count as f64 };
    (value, mask)
}

/// `trimmed + lambda1 * r_hat_i - lambda2 * r_hat_o`; absent terms contribute 0.
pub fn polarization_loss(
    trimmed: f64,
    r_hat_i: Option<f64>,
    r_hat_o: Option<f64>,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    trimmed + r_hat_i.map_or(0.0, |r| lambda1 * r) - r_hat_o.map_or(0.0, |r| lambda2 * r)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
