//! Fixtures shared by unit, integration, and acceptance tests.

use crate::model::{ModelSpec, ParamStore};

/// Linear-Gaussian model `p(z) = N(0, 1)`, `p(x|z) = N(z, 1)` with the encoder set to
/// the exact posterior `q(z|x) = N(x / 2, 1 / 2)`. Every importance weight equals the
/// marginal `p(x) = N(x; 0, 2)`, so both bounds are exact for any noise.
pub fn exact_posterior_model() -> ParamStore {
    let spec = ModelSpec {
        input_dim: 1,
        latent_dim: 1,
        encoder_hidden: vec![],
        decoder_hidden: vec![],
        ..ModelSpec::for_input_dim(1)
    };
    let mut params = ParamStore::zeros(spec).expect("valid spec");
    params.slice_mut("encoder.mu.weight").unwrap()[0] = 0.5;
    params.slice_mut("encoder.log_var.bias").unwrap()[0] = 0.5f64.ln();
    params.slice_mut("decoder.mu.weight").unwrap()[0] = 1.0;
    params
}

/// `-log N(x; 0, 2)`, the exact negative log marginal of [`exact_posterior_model`].
pub fn exact_posterior_neg_log_marginal(x: f64) -> f64 {
    0.5 * (4.0 * std::f64::consts::PI).ln() + x * x / 4.0
}
