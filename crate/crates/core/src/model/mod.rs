//! Dense encoder/decoder machinery for the importance-weighted generative scorer.
//!
//! The encoder maps `x` to a diagonal Gaussian `q(z|x)`, the decoder maps `z` to a
//! diagonal Gaussian `p(x|z)`, and the prior is `N(0, I)`. All parameters of both
//! networks live in one flat [`ParamStore`] so the optimizer and checkpoints only
//! ever see a single vector.

mod adam;
mod network;
mod noise;
mod objective;

pub use adam::{AdamConfig, AdamState};
pub use network::{decode, decode_batch, encode, encode_batch, log_joint_terms, log_weights, JointTerms};
pub use noise::Noise;
pub use objective::{loss_and_grad, Evaluation, Rows, LossSpec, ObjectiveBatch, Trim};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-variance heads of both networks are clamped to this range.
pub const LOG_VAR_MIN: f64 = -8.0;
pub const LOG_VAR_MAX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.01)
    }
}

/// Architecture of the encoder/decoder pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    /// Number of importance samples `K` per evaluation.
    pub iwae_samples: usize,
    /// Power `v` of the chi upper bound. Only 2 is supported.
    pub cubo_power: u32,
}

impl ModelSpec {
    /// Default architecture for `input_dim` features: two hidden layers of 64 units
    /// in each network and latent size `max(2, min(32, ceil(p / 4)))`.
    pub fn for_input_dim(input_dim: usize) -> Self {
        Self {
            input_dim,
            latent_dim: default_latent_dim(input_dim),
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            activation: Activation::default(),
            iwae_samples: 2,
            cubo_power: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("input and latent dimensions must be positive".into()));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.iwae_samples == 0 {
            return Err(Error::Config("iwae_samples must be at least 1".into()));
        }
        if self.cubo_power != 2 {
            return Err(Error::Config(format!(
                "cubo_power {} unsupported, only 2 is implemented",
                self.cubo_power
            )));
        }
        Ok(())
    }
}

pub fn default_latent_dim(input_dim: usize) -> usize {
    input_dim.div_ceil(4).clamp(2, 32)
}

/// One affine layer inside the flat parameter vector. Weights are stored row-major
/// with shape `(out_dim, in_dim)`, followed by the bias block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSlot {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseSlot {
    pub fn len(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetLayout {
    pub hidden: Vec<DenseSlot>,
    pub mu: DenseSlot,
    pub log_var: DenseSlot,
}

/// Named slices of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub spec: ModelSpec,
    pub encoder: NetLayout,
    pub decoder: NetLayout,
    /// layer name -> (offset, shape)
    pub slices: BTreeMap<String, (usize, Vec<usize>)>,
    pub total: usize,
}

impl Layout {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut slices = BTreeMap::new();
        let mut offset = 0;
        let encoder = build_net(
            "encoder",
            spec.input_dim,
            &spec.encoder_hidden,
            spec.latent_dim,
            &mut offset,
            &mut slices,
        );
        let decoder = build_net(
            "decoder",
            spec.latent_dim,
            &spec.decoder_hidden,
            spec.input_dim,
            &mut offset,
            &mut slices,
        );
        Ok(Self {
            spec,
            encoder,
            decoder,
            slices,
            total: offset,
        })
    }

    pub fn slice(&self, name: &str) -> Option<(usize, &[usize])> {
        self.slices.get(name).map(|(o, s)| (*o, s.as_slice()))
    }
}

fn build_net(
    prefix: &str,
    in_dim: usize,
    hidden: &[usize],
    out_dim: usize,
    offset: &mut usize,
    slices: &mut BTreeMap<String, (usize, Vec<usize>)>,
) -> NetLayout {
    let mut push = |name: String, inp: usize, out: usize| {
        let weight = *offset;
        let bias = weight + inp * out;
        slices.insert(format!("{name}.weight"), (weight, vec![out, inp]));
        slices.insert(format!("{name}.bias"), (bias, vec![out]));
        *offset = bias + out;
        DenseSlot {
            weight,
            bias,
            in_dim: inp,
            out_dim: out,
        }
    };
    let mut layers = Vec::with_capacity(hidden.len());
    let mut width = in_dim;
    for (i, &h) in hidden.iter().enumerate() {
        layers.push(push(format!("{prefix}.hidden{i}"), width, h));
        width = h;
    }
    let mu = push(format!("{prefix}.mu"), width, out_dim);
    let log_var = push(format!("{prefix}.log_var"), width, out_dim);
    NetLayout {
        hidden: layers,
        mu,
        log_var,
    }
}

/// Flat vector of encoder and decoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let layout = Layout::new(spec)?;
        let values = vec![0.0; layout.total];
        Ok(Self { layout, values })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights and biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut store = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots: Vec<DenseSlot> = [&store.layout.encoder, &store.layout.decoder]
            .into_iter()
            .flat_map(|net| net.hidden.iter().copied().chain([net.mu, net.log_var]))
            .collect();
        for slot in slots {
            let bound = 1.0 / (slot.in_dim as f64).sqrt();
            for v in &mut store.values[slot.weight..slot.bias + slot.out_dim] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(store)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.layout.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        let (offset, shape) = self.layout.slice(name)?;
        let n: usize = shape.iter().product();
        Some(&self.values[offset..offset + n])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (offset, shape) = self.layout.slice(name)?;
        let n: usize = shape.iter().product();
        Some(&mut self.values[offset..offset + n])
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let name = self
                    .layout
                    .slices
                    .iter()
                    .find(|(_, (o, s))| i >= *o && i < o + s.iter().product::<usize>())
                    .map(|(n, _)| n.clone())
                    .unwrap_or_default();
                Err(Error::NonFinite {
                    term: format!("parameter {name}[{i}]"),
                })
            }
        }
    }
}
