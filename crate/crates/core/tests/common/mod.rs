#![allow(dead_code)]

use imboost::model::{loss_and_grad, LossSpec, ModelSpec, Noise, ObjectiveBatch, ParamStore, Rows, Trim};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Components smaller than this are compared in absolute terms. Central
/// differences with a 1e-5 step carry roundoff near 1e-10 for objectives of
/// order one, which is already 1e-4 of a 1e-6 gradient.
pub const GRAD_FLOOR: f64 = 1e-5;

/// Outcome of one central-difference comparison.
pub struct GradCheck {
    pub max_rel_err: f64,
    pub n_params: usize,
}

/// Compare the analytic gradient of a random polarization composite against
/// central differences with step `h`. The trimming threshold is frozen halfway
/// between the last kept loss and the first dropped one, so the mask cannot flip
/// under the perturbation.
pub fn random_composite_grad_check(seed: u64, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=4);
    let d = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let spec = ModelSpec {
        input_dim: p,
        latent_dim: d,
        encoder_hidden: vec![rng.random_range(2..=6), rng.random_range(2..=6)],
        decoder_hidden: vec![rng.random_range(2..=6), rng.random_range(2..=6)],
        iwae_samples: k,
        ..ModelSpec::for_input_dim(p)
    };
    let params = ParamStore::init(spec, seed.wrapping_mul(31) + 7).unwrap();
    let n = rng.random_range(3..=8);
    let n_in = rng.random_range(0..=3);
    let n_out = rng.random_range(0..=3);
    let rows = |m: usize, rng: &mut ChaCha8Rng| {
        let x = Array2::from_shape_fn((m, p), |_| rng.random_range(-0.2..1.2));
        let noise = Noise::sample(rng, m, k, d);
        (x, noise)
    };
    let (xb, nb) = rows(n, &mut rng);
    let (xi, ni) = rows(n_in, &mut rng);
    let (xo, no) = rows(n_out, &mut rng);
    let lambda1 = rng.random_range(0.0..3.0);
    let lambda2 = rng.random_range(0.0..3.0);
    let input = ObjectiveBatch {
        batch: Rows { x: xb.view(), noise: &nb },
        inliers: (n_in > 0).then(|| Rows { x: xi.view(), noise: &ni }),
        outliers: (n_out > 0).then(|| Rows { x: xo.view(), noise: &no }),
    };
    let adaptive = LossSpec {
        trim: Trim::Adaptive { rho: 0.7, xi: 0.4 },
        lambda1,
        lambda2,
    };
    let base = loss_and_grad(&params, &input, &adaptive).unwrap();
    let tau = base.threshold.unwrap().tau;
    let mut sorted = base.batch_losses.clone();
    sorted.sort_by(f64::total_cmp);
    let above = sorted.iter().copied().find(|&l| l > tau);
    let frozen = match above {
        Some(a) => 0.5 * (tau + a),
        None => tau + 1.0,
    };
    let spec = LossSpec {
        trim: Trim::Fixed(frozen),
        lambda1,
        lambda2,
    };
    let eval = loss_and_grad(&params, &input, &spec).unwrap();
    assert_eq!(eval.kept, base.kept);

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for i in 0..params.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let plus = loss_and_grad(&probe, &input, &spec).unwrap().objective;
        probe.values[i] = orig - h;
        let minus = loss_and_grad(&probe, &input, &spec).unwrap().objective;
        probe.values[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let an = eval.grad[i];
        let denom = an.abs().max(fd.abs()).max(GRAD_FLOOR);
        worst = worst.max((an - fd).abs() / denom);
    }
    GradCheck {
        max_rel_err: worst,
        n_params: params.values.len(),
    }
}
