use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Standard-normal draws used by the reparameterization `z = mu + exp(log_var / 2) * eps`.
///
/// Rows are grouped per sample: rows `i*K .. (i+1)*K` belong to sample `i`. Supplying
/// the noise explicitly makes every loss a deterministic function of
/// `(params, x, noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    k: usize,
    eps: Array2<f64>,
}

impl Noise {
    pub fn new(k: usize, eps: Array2<f64>) -> Result<Self> {
        if k == 0 || !eps.nrows().is_multiple_of(k) {
            return Err(shape_err("noise", format!("rows divisible by K={k}"), eps.nrows()));
        }
        Ok(Self { k, eps })
    }

    pub fn zeros(n: usize, k: usize, latent_dim: usize) -> Self {
        Self {
            k,
            eps: Array2::zeros((n * k, latent_dim)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, latent_dim: usize) -> Self {
        let eps = Array2::from_shape_simple_fn((n * k, latent_dim), || rng.sample(StandardNormal));
        Self { k, eps }
    }

    /// Noise for a single sample from a `K x d` matrix.
    pub fn single(eps: Array2<f64>) -> Self {
        Self { k: eps.nrows(), eps }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_samples(&self) -> usize {
        self.eps.nrows() / self.k
    }

    pub fn latent_dim(&self) -> usize {
        self.eps.ncols()
    }

    pub fn eps(&self) -> ArrayView2<'_, f64> {
        self.eps.view()
    }

    /// The `K x d` block of sample `i`.
    pub fn sample_block(&self, i: usize) -> ArrayView2<'_, f64> {
        self.eps.slice(s![i * self.k..(i + 1) * self.k, ..])
    }

    /// Stack several noise blocks with the same `K` and latent size.
    pub fn concat(parts: &[&Noise]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Ok(Self::zeros(0, 1, 0));
        };
        let views: Vec<_> = parts.iter().map(|p| p.eps.view()).collect();
        if parts.iter().any(|p| p.k != first.k || p.latent_dim() != first.latent_dim()) {
            return Err(shape_err("noise concat", "matching K and latent size", "mismatch"));
        }
        let eps = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| shape_err("noise concat", "compatible blocks", e))?;
        Ok(Self { k: first.k, eps })
    }
}
