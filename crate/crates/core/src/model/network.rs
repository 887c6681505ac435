//! Batched forward and reverse passes. Rows of every matrix are samples; the
//! decoder runs on `n * K` rows, one per (sample, importance draw) pair.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

use super::{Activation, DenseSlot, NetLayout, Noise, ParamStore, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{shape_err, Error, Result};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn weight<'a>(values: &'a [f64], slot: &DenseSlot) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((slot.out_dim, slot.in_dim), &values[slot.weight..slot.bias])
        .expect("layout slot matches its shape")
}

fn bias<'a>(values: &'a [f64], slot: &DenseSlot) -> ArrayView1<'a, f64> {
    ArrayView1::from(&values[slot.bias..slot.bias + slot.out_dim])
}

fn affine(values: &[f64], slot: &DenseSlot, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut y = x.dot(&weight(values, slot).t());
    y += &bias(values, slot);
    y
}

fn accumulate_dense(grad: &mut [f64], slot: &DenseSlot, d_out: &Array2<f64>, input: &ArrayView2<f64>) {
    let (w_part, rest) = grad[slot.weight..].split_at_mut(slot.bias - slot.weight);
    let mut gw = ArrayViewMut2::from_shape((slot.out_dim, slot.in_dim), w_part)
        .expect("layout slot matches its shape");
    general_mat_mul(1.0, &d_out.t(), input, 1.0, &mut gw);
    let mut gb = ArrayViewMut1::from(&mut rest[..slot.out_dim]);
    gb += &d_out.sum_axis(Axis(0));
}

pub(crate) struct MlpCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    pub(crate) mu: Array2<f64>,
    raw_log_var: Array2<f64>,
    pub(crate) log_var: Array2<f64>,
}

impl MlpCache {
    fn last_hidden(&self) -> ArrayView2<'_, f64> {
        self.post.last().unwrap_or(&self.input).view()
    }
}

fn mlp_forward(values: &[f64], net: &NetLayout, input: Array2<f64>, act: Activation) -> MlpCache {
    let mut pre = Vec::with_capacity(net.hidden.len());
    let mut post = Vec::with_capacity(net.hidden.len());
    for slot in &net.hidden {
        let h_in = post.last().unwrap_or(&input).view();
        let a = affine(values, slot, &h_in);
        let h = a.mapv(|v| act.apply(v));
        pre.push(a);
        post.push(h);
    }
    let last = post.last().unwrap_or(&input).view();
    let mu = affine(values, &net.mu, &last);
    let raw_log_var = affine(values, &net.log_var, &last);
    let log_var = raw_log_var.mapv(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
    MlpCache {
        input,
        pre,
        post,
        mu,
        raw_log_var,
        log_var,
    }
}

/// Reverse pass through one network. `d_log_var` is the derivative with respect to
/// the clamped log-variance; the clamp mask is applied here.
#[allow(clippy::too_many_arguments)]
fn mlp_backward(
    values: &[f64],
    net: &NetLayout,
    cache: &MlpCache,
    d_mu: &Array2<f64>,
    mut d_log_var: Array2<f64>,
    act: Activation,
    grad: &mut [f64],
    want_input_grad: bool,
) -> Option<Array2<f64>> {
    Zip::from(&mut d_log_var)
        .and(&cache.raw_log_var)
        .for_each(|d, &raw| {
            if !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) {
                *d = 0.0;
            }
        });
    let last = cache.last_hidden();
    accumulate_dense(grad, &net.mu, d_mu, &last);
    accumulate_dense(grad, &net.log_var, &d_log_var, &last);
    let mut d_h = d_mu.dot(&weight(values, &net.mu));
    general_mat_mul(1.0, &d_log_var, &weight(values, &net.log_var), 1.0, &mut d_h);

    for (i, slot) in net.hidden.iter().enumerate().rev() {
        Zip::from(&mut d_h)
            .and(&cache.pre[i])
            .for_each(|d, &a| *d *= act.derivative(a));
        let h_in = if i == 0 { cache.input.view() } else { cache.post[i - 1].view() };
        accumulate_dense(grad, slot, &d_h, &h_in);
        if i > 0 || want_input_grad {
            d_h = d_h.dot(&weight(values, slot));
        }
    }
    want_input_grad.then_some(d_h)
}

fn check_input(params: &ParamStore, cols: usize, expected: usize, context: &'static str) -> Result<()> {
    if cols != expected {
        return Err(shape_err(context, expected, cols));
    }
    if params.values.len() != params.layout.total {
        return Err(shape_err("parameter vector", params.layout.total, params.values.len()));
    }
    Ok(())
}

/// Encoder forward pass for a batch: returns `(mu, log_var)`, each `n x d`.
pub fn encode_batch(params: &ParamStore, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let spec = params.spec();
    check_input(params, x.ncols(), spec.input_dim, "encoder input")?;
    let cache = mlp_forward(&params.values, &params.layout.encoder, x.to_owned(), spec.activation);
    Ok((cache.mu, cache.log_var))
}

/// Decoder forward pass for a batch: returns `(mu_x, log_var_x)`, each `n x p`.
pub fn decode_batch(params: &ParamStore, z: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let spec = params.spec();
    check_input(params, z.ncols(), spec.latent_dim, "decoder input")?;
    let cache = mlp_forward(&params.values, &params.layout.decoder, z.to_owned(), spec.activation);
    Ok((cache.mu, cache.log_var))
}

fn row_input(v: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, v.len()), v).expect("single row")
}

pub fn encode(params: &ParamStore, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mu, lv) = encode_batch(params, row_input(x))?;
    Ok((mu.into_raw_vec_and_offset().0, lv.into_raw_vec_and_offset().0))
}

pub fn decode(params: &ParamStore, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mu, lv) = decode_batch(params, row_input(z))?;
    Ok((mu.into_raw_vec_and_offset().0, lv.into_raw_vec_and_offset().0))
}

fn gaussian_log_density(x: f64, mean: f64, log_var: f64) -> f64 {
    let diff = x - mean;
    -HALF_LN_2PI - 0.5 * log_var - 0.5 * diff * diff * (-log_var).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTerms {
    pub log_p_x_given_z: f64,
    pub log_p_z: f64,
    pub log_q_z_given_x: f64,
}

impl JointTerms {
    pub fn log_weight(&self) -> f64 {
        self.log_p_x_given_z + self.log_p_z - self.log_q_z_given_x
    }
}

/// The three densities entering one importance weight, evaluated at an explicit `z`.
pub fn log_joint_terms(params: &ParamStore, x: &[f64], z: &[f64]) -> Result<JointTerms> {
    let (mu, lv) = encode(params, x)?;
    if z.len() != mu.len() {
        return Err(shape_err("latent sample", mu.len(), z.len()));
    }
    let (mu_x, lv_x) = decode(params, z)?;
    let terms = JointTerms {
        log_p_x_given_z: x
            .iter()
            .zip(mu_x.iter().zip(&lv_x))
            .map(|(&xi, (&m, &l))| gaussian_log_density(xi, m, l))
            .sum(),
        log_p_z: z.iter().map(|&zj| -HALF_LN_2PI - 0.5 * zj * zj).sum(),
        log_q_z_given_x: z
            .iter()
            .zip(mu.iter().zip(&lv))
            .map(|(&zj, (&m, &l))| gaussian_log_density(zj, m, l))
            .sum(),
    };
    for (name, v) in [
        ("log p(x|z)", terms.log_p_x_given_z),
        ("log p(z)", terms.log_p_z),
        ("log q(z|x)", terms.log_q_z_given_x),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    Ok(terms)
}

/// Cached forward pass of the full joint model over a batch.
pub(crate) struct JointForward {
    enc: MlpCache,
    dec: MlpCache,
    x: Array2<f64>,
    z: Array2<f64>,
    eps: Array2<f64>,
    /// `n x K` matrix of `log p(x, z_k) - log q(z_k | x)`.
    pub(crate) log_w: Array2<f64>,
}

pub(crate) fn joint_forward(params: &ParamStore, x: ArrayView2<f64>, noise: &Noise) -> Result<JointForward> {
    let spec = params.spec();
    check_input(params, x.ncols(), spec.input_dim, "encoder input")?;
    let n = x.nrows();
    let k = noise.k();
    if noise.n_samples() != n || noise.latent_dim() != spec.latent_dim {
        return Err(shape_err(
            "noise",
            format!("{n} samples x {k} draws x {}", spec.latent_dim),
            format!("{} x {} x {}", noise.n_samples(), k, noise.latent_dim()),
        ));
    }
    let enc = mlp_forward(&params.values, &params.layout.encoder, x.to_owned(), spec.activation);
    let eps = noise.eps().to_owned();
    let d = spec.latent_dim;
    let mut z = Array2::zeros((n * k, d));
    for i in 0..n {
        for kk in 0..k {
            let r = i * k + kk;
            for j in 0..d {
                z[[r, j]] = enc.mu[[i, j]] + (0.5 * enc.log_var[[i, j]]).exp() * eps[[r, j]];
            }
        }
    }
    let dec = mlp_forward(&params.values, &params.layout.decoder, z.clone(), spec.activation);

    let mut log_w = Array2::zeros((n, k));
    let mut bad = None;
    for i in 0..n {
        let lv_sum: f64 = enc.log_var.row(i).sum();
        for kk in 0..k {
            let r = i * k + kk;
            let log_px: f64 = (0..spec.input_dim)
                .map(|c| gaussian_log_density(x[[i, c]], dec.mu[[r, c]], dec.log_var[[r, c]]))
                .sum();
            let log_pz: f64 = z.row(r).iter().map(|&v| -HALF_LN_2PI - 0.5 * v * v).sum();
            let log_q: f64 = -HALF_LN_2PI * d as f64 - 0.5 * lv_sum
                - 0.5 * eps.row(r).iter().map(|e| e * e).sum::<f64>();
            if bad.is_none() {
                if !log_px.is_finite() {
                    bad = Some("log p(x|z)");
                } else if !log_pz.is_finite() {
                    bad = Some("log p(z)");
                } else if !log_q.is_finite() {
                    bad = Some("log q(z|x)");
                }
            }
            log_w[[i, kk]] = log_px + log_pz - log_q;
        }
    }
    if let Some(term) = bad {
        return Err(Error::NonFinite { term: term.into() });
    }
    Ok(JointForward {
        enc,
        dec,
        x: x.to_owned(),
        z,
        eps,
        log_w,
    })
}

/// Accumulate into `grad` the parameter gradient of `sum_{i,k} g[i,k] * log_w[i,k]`.
pub(crate) fn joint_backward(params: &ParamStore, fwd: &JointForward, g: &Array2<f64>, grad: &mut [f64]) {
    let spec = params.spec();
    let act = spec.activation;
    let (n, k) = g.dim();
    let p = spec.input_dim;
    let d = spec.latent_dim;

    let mut d_mu_x = Array2::zeros((n * k, p));
    let mut d_lv_x = Array2::zeros((n * k, p));
    for i in 0..n {
        for kk in 0..k {
            let r = i * k + kk;
            let gr = g[[i, kk]];
            if gr == 0.0 {
                continue;
            }
            for c in 0..p {
                let diff = fwd.x[[i, c]] - fwd.dec.mu[[r, c]];
                let prec = (-fwd.dec.log_var[[r, c]]).exp();
                d_mu_x[[r, c]] = gr * diff * prec;
                d_lv_x[[r, c]] = gr * (-0.5 + 0.5 * diff * diff * prec);
            }
        }
    }
    let mut d_z = mlp_backward(
        &params.values,
        &params.layout.decoder,
        &fwd.dec,
        &d_mu_x,
        d_lv_x,
        act,
        grad,
        true,
    )
    .expect("input gradient requested");

    let mut d_mu = Array2::zeros((n, d));
    let mut d_lv = Array2::zeros((n, d));
    for i in 0..n {
        for kk in 0..k {
            let r = i * k + kk;
            let gr = g[[i, kk]];
            for j in 0..d {
                // prior term
                d_z[[r, j]] -= gr * fwd.z[[r, j]];
                let dz = d_z[[r, j]];
                let sigma = (0.5 * fwd.enc.log_var[[i, j]]).exp();
                d_mu[[i, j]] += dz;
                // reparameterization path plus the entropy term of -log q
                d_lv[[i, j]] += dz * fwd.eps[[r, j]] * 0.5 * sigma + 0.5 * gr;
            }
        }
    }
    mlp_backward(
        &params.values,
        &params.layout.encoder,
        &fwd.enc,
        &d_mu,
        d_lv,
        act,
        grad,
        false,
    );
}

/// Log importance weights `log w[i, k]` for a batch under the given noise.
pub fn log_weights(params: &ParamStore, x: ArrayView2<f64>, noise: &Noise) -> Result<Array2<f64>> {
    Ok(joint_forward(params, x, noise)?.log_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec(p: usize, d: usize, hidden: Vec<usize>) -> ModelSpec {
        ModelSpec {
            input_dim: p,
            latent_dim: d,
            encoder_hidden: hidden.clone(),
            decoder_hidden: hidden,
            ..ModelSpec::for_input_dim(p)
        }
    }

    /// Plain nested-loop forward pass used as an independent oracle.
    fn naive_net(values: &[f64], net: &NetLayout, x: &[f64], slope: f64) -> (Vec<f64>, Vec<f64>) {
        let dense = |slot: &DenseSlot, h: &[f64]| -> Vec<f64> {
            (0..slot.out_dim)
                .map(|o| {
                    let mut acc = values[slot.bias + o];
                    for (i, hv) in h.iter().enumerate() {
                        acc += values[slot.weight + o * slot.in_dim + i] * hv;
                    }
                    acc
                })
                .collect()
        };
        let mut h = x.to_vec();
        for slot in &net.hidden {
            h = dense(slot, &h).into_iter().map(|v| if v > 0.0 { v } else { slope * v }).collect();
        }
        let mu = dense(&net.mu, &h);
        let lv = dense(&net.log_var, &h).into_iter().map(|v| v.clamp(-8.0, 8.0)).collect();
        (mu, lv)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let params = ParamStore::zeros(tiny_spec(3, 2, vec![4, 4])).unwrap();
        let (mu, lv) = encode(&params, &[0.3, -1.0, 7.0]).unwrap();
        assert_eq!(mu, vec![0.0; 2]);
        assert_eq!(lv, vec![0.0; 2]);
        let (mx, lx) = decode(&params, &[1.5, -2.0]).unwrap();
        assert_eq!(mx, vec![0.0; 3]);
        assert_eq!(lx, vec![0.0; 3]);
    }

    #[test]
    fn identity_encoder_passes_input_through() {
        let mut params = ParamStore::zeros(tiny_spec(2, 2, vec![2])).unwrap();
        params.slice_mut("encoder.hidden0.weight").unwrap().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        params.slice_mut("encoder.mu.weight").unwrap().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let (mu, lv) = encode(&params, &[1.0, 2.0]).unwrap();
        assert_eq!(mu, vec![1.0, 2.0]);
        assert_eq!(lv, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_decoder_passes_latent_through() {
        let mut params = ParamStore::zeros(tiny_spec(1, 1, vec![])).unwrap();
        params.slice_mut("decoder.mu.weight").unwrap()[0] = 1.0;
        let (mu_x, lv_x) = decode(&params, &[0.5]).unwrap();
        assert_eq!(mu_x, vec![0.5]);
        assert_eq!(lv_x, vec![0.0]);
    }

    #[test]
    fn batched_forward_matches_naive_oracle() {
        let spec = tiny_spec(5, 3, vec![7, 6]);
        let params = ParamStore::init(spec, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (mu, lv) = encode(&params, &x).unwrap();
            let (mu_o, lv_o) = naive_net(&params.values, &params.layout.encoder, &x, 0.01);
            for (a, b) in mu.iter().zip(&mu_o).chain(lv.iter().zip(&lv_o)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (mx, lx) = decode(&params, &z).unwrap();
            let (mx_o, lx_o) = naive_net(&params.values, &params.layout.decoder, &z, 0.01);
            for (a, b) in mx.iter().zip(&mx_o).chain(lx.iter().zip(&lx_o)) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn log_variances_are_clamped() {
        let mut params = ParamStore::zeros(tiny_spec(2, 2, vec![3])).unwrap();
        params.slice_mut("encoder.log_var.bias").unwrap().copy_from_slice(&[50.0, -50.0]);
        params.slice_mut("decoder.log_var.bias").unwrap().copy_from_slice(&[-9.0, 9.0]);
        let (_, lv) = encode(&params, &[0.1, 0.2]).unwrap();
        assert_eq!(lv, vec![8.0, -8.0]);
        let (_, lx) = decode(&params, &[0.0, 0.0]).unwrap();
        assert_eq!(lx, vec![-8.0, 8.0]);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let params = ParamStore::zeros(tiny_spec(3, 2, vec![4])).unwrap();
        assert!(matches!(encode(&params, &[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(decode(&params, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn joint_terms_at_standard_normal_origin() {
        // all-zero model: q = N(0, 1), p(x|z) = N(0, 1)
        let params = ParamStore::zeros(tiny_spec(1, 1, vec![])).unwrap();
        let t = log_joint_terms(&params, &[0.0], &[0.0]).unwrap();
        for v in [t.log_p_z, t.log_q_z_given_x, t.log_p_x_given_z] {
            assert!((v + 0.918_938_5).abs() < 1e-7);
        }
    }

    #[test]
    fn batched_log_weights_agree_with_explicit_terms() {
        let spec = tiny_spec(3, 2, vec![4, 4]);
        let params = ParamStore::init(spec, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..1.0));
        let noise = Noise::sample(&mut rng, 4, 3, 2);
        let lw = log_weights(&params, x.view(), &noise).unwrap();
        for i in 0..4 {
            let (mu, lv) = encode(&params, x.row(i).as_slice().unwrap()).unwrap();
            for k in 0..3 {
                let eps = noise.sample_block(i).row(k).to_vec();
                let z: Vec<f64> = (0..2).map(|j| mu[j] + (0.5 * lv[j]).exp() * eps[j]).collect();
                let t = log_joint_terms(&params, x.row(i).as_slice().unwrap(), &z).unwrap();
                assert!((t.log_weight() - lw[[i, k]]).abs() < 1e-10);
            }
        }
    }
}
