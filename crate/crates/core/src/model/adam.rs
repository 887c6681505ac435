//! Adam with bias correction over the flat parameter vector.

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
        }
    }

    /// One bias-corrected update. A gradient with a non-finite entry is rejected and
    /// neither the state nor the parameters change.
    pub fn step(&mut self, params: &mut ParamStore, grad: &[f64]) -> Result<()> {
        self.update(&mut params.values, grad)
    }

    /// Same as [`AdamState::step`] on a bare slice.
    pub fn update(&mut self, values: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != values.len() || self.m.len() != grad.len() {
            return Err(shape_err("adam gradient", values.len(), grad.len()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: format!("gradient[{i}]"),
            });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, &g), (m, v)) in values
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn scalar_store(value: f64) -> ParamStore {
        let mut store = ParamStore::zeros(ModelSpec {
            input_dim: 1,
            latent_dim: 1,
            encoder_hidden: vec![],
            decoder_hidden: vec![],
            ..ModelSpec::for_input_dim(1)
        })
        .unwrap();
        store.values[0] = value;
        store
    }

    /// Scripted recursion written out per step, independent of the loop above.
    fn scripted_adam(grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut theta) = (0.0, 0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        theta
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(0.0);
        let n = p.len();
        let mut g = vec![0.0; n];
        g[0] = 1.0;
        let mut adam = AdamState::new(AdamConfig::default(), n);
        adam.step(&mut p, &g).unwrap();
        assert!((p.values[0] - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((p.values[0] + 9.999_999_9e-4).abs() < 1e-12);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(0.25);
        let before = p.values.clone();
        let mut adam = AdamState::new(AdamConfig::default(), p.len());
        adam.step(&mut p, &vec![0.0; before.len()]).unwrap();
        assert_eq!(p.values, before);
    }

    #[test]
    fn two_steps_match_scripted_recursion() {
        let mut p = scalar_store(0.0);
        let n = p.len();
        let mut g = vec![0.0; n];
        g[0] = 1.0;
        let mut adam = AdamState::new(AdamConfig::default(), n);
        adam.step(&mut p, &g).unwrap();
        adam.step(&mut p, &g).unwrap();
        assert!((p.values[0] - scripted_adam(&[1.0, 1.0], 1e-3)).abs() < 1e-12);
    }

    #[test]
    fn flat_update_equals_per_slice_updates() {
        let grads: Vec<Vec<f64>> = (0..5)
            .map(|s| (0..12).map(|i| ((i * 7 + s * 3) as f64).sin()).collect())
            .collect();
        let mut flat = vec![0.5; 12];
        let mut whole = AdamState::new(AdamConfig::default(), 12);
        let (mut left, mut right) = (vec![0.5; 5], vec![0.5; 7]);
        let mut a = AdamState::new(AdamConfig::default(), 5);
        let mut b = AdamState::new(AdamConfig::default(), 7);
        for g in &grads {
            whole.update(&mut flat, g).unwrap();
            a.update(&mut left, &g[..5]).unwrap();
            b.update(&mut right, &g[5..]).unwrap();
        }
        assert_eq!(&flat[..5], left.as_slice());
        assert_eq!(&flat[5..], right.as_slice());
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut p = scalar_store(0.5);
        let n = p.len();
        let mut adam = AdamState::new(AdamConfig::default(), n);
        let mut g = vec![0.1; n];
        g[1] = f64::NAN;
        let before = (p.clone(), adam.clone());
        assert!(adam.step(&mut p, &g).is_err());
        assert_eq!(p, before.0);
        assert_eq!(adam, before.1);
    }
}
