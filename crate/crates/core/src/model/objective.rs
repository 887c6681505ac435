//! Composite training objectives and their exact gradients under fixed noise.
//!
//! One forward pass covers the mini-batch and both labeled sets; the threshold is
//! computed from that pass, and the reverse pass then weights each sample's
//! log-weights by its coefficient in the composite.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::network::{joint_backward, joint_forward};
use super::{Noise, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::losses::{
    cubo_from_log_weights, iwae_from_log_weights, mean, polarization_loss, quantile, trimmed_loss,
    LossConfig, ThresholdState,
};

/// How the mini-batch term is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trim {
    /// Plain mean over the batch.
    None,
    /// Mean over samples with loss at most the given threshold.
    Fixed(f64),
    /// Threshold `(1 - xi) * q_rho(batch) + xi * mean inlier loss`, evaluated at the
    /// current parameters.
    Adaptive { rho: f64, xi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub trim: Trim,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossSpec {
    /// Plain mean loss used at the start of warm-up.
    pub fn mean() -> Self {
        Self {
            trim: Trim::None,
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    /// Trimmed loss with a pure quantile threshold.
    pub fn trimmed(rho: f64) -> Self {
        Self {
            trim: Trim::Adaptive { rho, xi: 0.0 },
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn polarization(config: &LossConfig, lambda1: f64, lambda2: f64) -> Self {
        Self {
            trim: Trim::Adaptive {
                rho: config.rho,
                xi: config.xi,
            },
            lambda1,
            lambda2,
        }
    }
}

/// Data rows with their importance-sampling noise.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub x: ArrayView2<'a, f64>,
    pub noise: &'a Noise,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveBatch<'a> {
    pub batch: Rows<'a>,
    pub inliers: Option<Rows<'a>>,
    pub outliers: Option<Rows<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// Inlier (IWAE) loss of each mini-batch row.
    pub batch_losses: Vec<f64>,
    pub kept: Vec<bool>,
    pub trimmed: f64,
    pub threshold: Option<ThresholdState>,
    pub inlier_losses: Vec<f64>,
    /// Outlier (CUBO) loss of each labeled outlier.
    pub outlier_losses: Vec<f64>,
    pub r_hat_i: Option<f64>,
    pub r_hat_o: Option<f64>,
    pub grad: Vec<f64>,
}

fn softmax_scaled(row: &[f64], scale: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(scale * v));
    let e: Vec<f64> = row.iter().map(|&v| (scale * v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Composite objective value, per-sample losses, and the exact parameter gradient
/// with the noise held fixed.
pub fn loss_and_grad(params: &ParamStore, input: &ObjectiveBatch<'_>, spec: &LossSpec) -> Result<Evaluation> {
    let parts: Vec<Rows<'_>> = std::iter::once(input.batch)
        .chain(input.inliers)
        .chain(input.outliers)
        .collect();
    let k = input.batch.noise.k();
    for part in &parts {
        if part.noise.k() != k {
            return Err(shape_err("noise", format!("K={k}"), part.noise.k()));
        }
        if part.noise.n_samples() != part.x.nrows() {
            return Err(shape_err("noise rows", part.x.nrows(), part.noise.n_samples()));
        }
    }
    let n_batch = input.batch.x.nrows();
    let n_in = input.inliers.map_or(0, |r| r.x.nrows());
    let n_out = input.outliers.map_or(0, |r| r.x.nrows());

    let x: Array2<f64> = concatenate(Axis(0), &parts.iter().map(|p| p.x).collect::<Vec<_>>())
        .map_err(|e| shape_err("objective rows", "equal feature counts", e))?;
    let noise = Noise::concat(&parts.iter().map(|p| p.noise).collect::<Vec<_>>())?;
    let fwd = joint_forward(params, x.view(), &noise)?;
    let log_w = fwd.log_w.as_standard_layout();
    let row = |i: usize| log_w.row(i).to_vec();

    let batch_losses: Vec<f64> = (0..n_batch).map(|i| iwae_from_log_weights(&row(i))).collect();
    let inlier_losses: Vec<f64> = (n_batch..n_batch + n_in)
        .map(|i| iwae_from_log_weights(&row(i)))
        .collect();
    let outlier_losses: Vec<f64> = (n_batch + n_in..n_batch + n_in + n_out)
        .map(|i| cubo_from_log_weights(&row(i)))
        .collect();
    if let Some(bad) = batch_losses
        .iter()
        .chain(&inlier_losses)
        .chain(&outlier_losses)
        .position(|v| !v.is_finite())
    {
        return Err(Error::NonFinite {
            term: format!("per-sample loss of row {bad}"),
        });
    }

    let r_hat_i = mean(&inlier_losses);
    let r_hat_o = mean(&outlier_losses);
    let (trimmed, kept, threshold) = match spec.trim {
        Trim::None => {
            let kept = vec![true; n_batch];
            (mean(&batch_losses).unwrap_or(0.0), kept, None)
        }
        Trim::Fixed(tau) => {
            let (v, kept) = trimmed_loss(&batch_losses, tau);
            (
                v,
                kept,
                Some(ThresholdState {
                    tau,
                    q_rho: tau,
                    r_hat_i: None,
                }),
            )
        }
        Trim::Adaptive { rho, xi } => {
            if batch_losses.is_empty() {
                (0.0, Vec::new(), None)
            } else {
                let state = ThresholdState::new(quantile(&batch_losses, rho)?, r_hat_i, xi);
                let (v, kept) = trimmed_loss(&batch_losses, state.tau);
                (v, kept, Some(state))
            }
        }
    };
    let lambda1 = spec.lambda1;
    let lambda2 = spec.lambda2;
    let objective = polarization_loss(trimmed, r_hat_i, r_hat_o, lambda1, lambda2);

    let n_kept = kept.iter().filter(|k| **k).count();
    let mut coeff = vec![0.0; n_batch + n_in + n_out];
    for (c, &keep) in coeff.iter_mut().zip(&kept) {
        if keep {
            *c = 1.0 / n_kept as f64;
        }
    }
    for c in &mut coeff[n_batch..n_batch + n_in] {
        *c = lambda1 / n_in as f64;
    }
    for c in &mut coeff[n_batch + n_in..] {
        *c = -lambda2 / n_out as f64;
    }

    let mut grad = vec![0.0; params.values.len()];
    if coeff.iter().any(|&c| c != 0.0) {
        let mut g = Array2::zeros((coeff.len(), k));
        for (i, &c) in coeff.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            // d(-log mean w)/d log w = -softmax(log w); the chi bound uses softmax(2 log w)
            let scale = if i >= n_batch + n_in { 2.0 } else { 1.0 };
            for (kk, s) in softmax_scaled(&row(i), scale).into_iter().enumerate() {
                g[[i, kk]] = -c * s;
            }
        }
        joint_backward(params, &fwd, &g, &mut grad);
    }

    Ok(Evaluation {
        objective,
        batch_losses,
        kept,
        trimmed,
        threshold,
        inlier_losses,
        outlier_losses,
        r_hat_i,
        r_hat_o,
        grad,
    })
}
