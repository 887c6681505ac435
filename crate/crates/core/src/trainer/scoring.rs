use ndarray::{s, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::iwae_from_log_weights;
use crate::model::{log_weights, Noise, ParamStore};

const CHUNK_ROWS: usize = 4096;

/// Independent random streams derived from one seed, keyed by purpose and index.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Warmup = 1,
    Batch = 2,
    Snapshot = 3,
    Query = 4,
    Risk = 5,
    Score = 6,
}

pub(crate) fn stream_rng(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}

/// Inlier loss of every row under explicit noise, evaluated in fixed-size chunks.
pub fn per_sample_losses(params: &ParamStore, x: ArrayView2<f64>, noise: &Noise) -> Result<Vec<f64>> {
    if noise.n_samples() != x.nrows() {
        return Err(crate::error::shape_err("noise rows", x.nrows(), noise.n_samples()));
    }
    let k = noise.k();
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(CHUNK_ROWS) {
        let end = (start + CHUNK_ROWS).min(x.nrows());
        let chunk_noise = Noise::new(k, noise.eps().slice(s![start * k..end * k, ..]).to_owned())?;
        let lw = log_weights(params, x.slice(s![start..end, ..]), &chunk_noise)?;
        for row in lw.rows() {
            let l = iwae_from_log_weights(&row.to_vec());
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    term: format!("loss of row {}", out.len()),
                });
            }
            out.push(l);
        }
    }
    Ok(out)
}

/// Inlier loss averaged over `score_mc` seeded noise draws. Each draw shares one
/// `K x d` noise block across all rows, so a row's score depends only on the row
/// itself and identical rows score identically.
pub fn final_scores(params: &ParamStore, x: ArrayView2<f64>, score_mc: usize, seed: u64) -> Result<Vec<f64>> {
    if score_mc == 0 {
        return Err(Error::Config("score_mc must be at least 1".into()));
    }
    let spec = params.spec();
    let mut acc = vec![0.0; x.nrows()];
    for draw in 0..score_mc {
        let mut rng = stream_rng(seed, Stream::Score, draw as u64);
        let block = Noise::sample(&mut rng, 1, spec.iwae_samples, spec.latent_dim);
        let noise = Noise::concat(&vec![&block; x.nrows()])?;
        for (a, l) in acc.iter_mut().zip(per_sample_losses(params, x, &noise)?) {
            *a += l;
        }
    }
    Ok(acc.into_iter().map(|a| a / score_mc as f64).collect())
}
