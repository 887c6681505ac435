//! Query selection rules over per-sample ensemble losses.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm2, posterior_inlier};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStrategy {
    /// Uniformly random unlabeled samples.
    Rd,
    /// Half from the lowest losses, half from the highest.
    Cp,
    /// Samples whose two-component mixture inlier posterior is closest to `alpha`.
    Mm,
}

impl fmt::Display for QueryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryStrategy::Rd => "rd",
            QueryStrategy::Cp => "cp",
            QueryStrategy::Mm => "mm",
        })
    }
}

impl FromStr for QueryStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rd" | "random" => Ok(Self::Rd),
            "cp" => Ok(Self::Cp),
            "mm" => Ok(Self::Mm),
            other => Err(Error::Config(format!("unknown query strategy '{other}'"))),
        }
    }
}

/// Result of one selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    /// Inlier posterior of every sample, when a mixture was fitted.
    pub posteriors: Option<Vec<f64>>,
    /// Strategy actually applied; MM degrades to RD when the mixture is degenerate.
    pub applied: QueryStrategy,
}

fn available(reserved: &[bool]) -> Vec<usize> {
    reserved
        .iter()
        .enumerate()
        .filter(|(_, r)| !**r)
        .map(|(i, _)| i)
        .collect()
}

pub fn select_random<R: Rng + ?Sized>(reserved: &[bool], budget: usize, rng: &mut R) -> Vec<usize> {
    let pool = available(reserved);
    let b = budget.min(pool.len());
    sample(rng, pool.len(), b).into_iter().map(|i| pool[i]).collect()
}

/// `ceil(b/2)` lowest scores (ascending) followed by `floor(b/2)` highest
/// (descending), both among unreserved samples. Ties go to the lower index.
pub fn select_confidence_poles(scores: &[f64], reserved: &[bool], budget: usize) -> Vec<usize> {
    let mut pool = available(reserved);
    pool.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    if budget >= pool.len() {
        return pool;
    }
    let n_low = budget.div_ceil(2);
    let n_high = budget / 2;
    let mut out: Vec<usize> = pool[..n_low].to_vec();
    let mut high: Vec<usize> = pool[n_low..].to_vec();
    high.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    out.extend(high.into_iter().take(n_high));
    out
}

/// The `b` unreserved samples with posterior closest to `alpha`, closest first,
/// ties broken by lower index.
pub fn select_mixture_boundary(posteriors: &[f64], reserved: &[bool], budget: usize, alpha: f64) -> Vec<usize> {
    let mut pool = available(reserved);
    pool.sort_by(|&a, &b| {
        (posteriors[a] - alpha)
            .abs()
            .total_cmp(&(posteriors[b] - alpha).abs())
            .then(a.cmp(&b))
    });
    pool.truncate(budget);
    pool
}

/// Apply `strategy` to ensemble scores, skipping reserved (already queried) samples.
pub fn select_queries<R: Rng + ?Sized>(
    strategy: QueryStrategy,
    scores: &[f64],
    reserved: &[bool],
    budget: usize,
    alpha: f64,
    rng: &mut R,
) -> Selection {
    debug_assert_eq!(scores.len(), reserved.len());
    match strategy {
        QueryStrategy::Rd => Selection {
            indices: select_random(reserved, budget, rng),
            posteriors: None,
            applied: QueryStrategy::Rd,
        },
        QueryStrategy::Cp => Selection {
            indices: select_confidence_poles(scores, reserved, budget),
            posteriors: None,
            applied: QueryStrategy::Cp,
        },
        QueryStrategy::Mm => match fit_gmm2(scores) {
            Ok(gmm) => {
                let post: Vec<f64> = scores.iter().map(|&s| posterior_inlier(&gmm, s)).collect();
                Selection {
                    indices: select_mixture_boundary(&post, reserved, budget, alpha),
                    posteriors: Some(post),
                    applied: QueryStrategy::Mm,
                }
            }
            Err(err) => {
                log::warn!("mixture fit failed ({err}); falling back to random queries");
                Selection {
                    indices: select_random(reserved, budget, rng),
                    posteriors: None,
                    applied: QueryStrategy::Rd,
                }
            }
        },
    }
}
