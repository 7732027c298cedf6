//! MLP encoder `E` and projection head `f_v` with exact backpropagation.
//!
//! `v = E(x)` uses ReLU hidden layers and a linear output; the head is
//! `z = W2·relu(W1·v + b1) + b2`. Only `v` is used after pretraining.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgvError};
use crate::io::{read_f64_block, read_u32, read_u64, write_f64_block};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TGVW";
pub const CHECKPOINT_VERSION: u32 = 1;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub encoder_hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub projection_hidden_dim: usize,
    pub projection_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: `d = 64`, `p = 32`, one hidden layer of 128.
    pub fn desk(input_dim: usize, seed: u64) -> Self {
        EncoderConfig {
            input_dim,
            encoder_hidden_dims: vec![128],
            embedding_dim: 64,
            projection_hidden_dim: 64,
            projection_dim: 32,
            seed,
        }
    }

    /// Published dimensions: `d = 2048`, `p = 128`.
    pub fn reference_scale(input_dim: usize, seed: u64) -> Self {
        EncoderConfig {
            input_dim,
            encoder_hidden_dims: vec![2048],
            embedding_dim: 2048,
            projection_hidden_dim: 2048,
            projection_dim: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("input_dim", self.input_dim),
            ("embedding_dim", self.embedding_dim),
            ("projection_hidden_dim", self.projection_hidden_dim),
            ("projection_dim", self.projection_dim),
        ];
        for (name, d) in named {
            if d == 0 {
                return Err(TgvError::InvalidDim(format!("{name} must be >= 1")));
            }
        }
        if self.encoder_hidden_dims.contains(&0) {
            return Err(TgvError::InvalidDim("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, encoder first.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.encoder_hidden_dims);
        dims.push(self.embedding_dim);
        let mut shapes: Vec<_> = dims.windows(2).map(|w| (w[0], w[1])).collect();
        shapes.push((self.embedding_dim, self.projection_hidden_dim));
        shapes.push((self.projection_hidden_dim, self.projection_dim));
        shapes
    }
}

/// Affine layer `y = x·W + b` with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-bound..bound)));
        Dense { weight, bias: Array1::zeros(fan_out) }
    }

    pub fn apply(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        Dense::zeros(self.weight.nrows(), self.weight.ncols())
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// Weights row-major, then bias.
    pub fn flat_iter(&self) -> impl Iterator<Item = &T> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn flat_iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }

    /// Backward through `y = x·W + b` given `dL/dy`: returns the layer
    /// gradient and `dL/dx`.
    pub fn backward(&self, input: ArrayView2<T>, grad_out: ArrayView2<T>) -> (Dense<T>, Array2<T>) {
        let grad = Dense { weight: input.t().dot(&grad_out), bias: grad_out.sum_axis(Axis(0)) };
        (grad, grad_out.dot(&self.weight.t()))
    }
}

/// Parameters of the encoder and projection head (`EncoderState`).
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    config: EncoderConfig,
    layers: Vec<Dense<T>>,
    stamp: u64,
}

impl<T: Scalar> PartialEq for Encoder<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.layers == other.layers
    }
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input to every layer, `inputs[0]` is `x`.
    inputs: Vec<Array2<T>>,
    /// Pre-activation output of every layer.
    pre: Vec<Array2<T>>,
    stamp: u64,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderGrads<T> {
    /// Aligned with [`Encoder::layers`].
    pub layers: Vec<Dense<T>>,
    pub input: Array2<T>,
}

impl<T: Scalar> EncoderGrads<T> {
    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.flat_iter().copied()).collect()
    }

    pub fn max_abs(&self) -> T {
        self.layers.iter().flat_map(|l| l.flat_iter()).fold(T::zero(), |acc, v| acc.max(v.abs()))
    }
}

pub struct ForwardOutput<T> {
    pub embedding: Array2<T>,
    pub projection: Array2<T>,
    pub cache: ForwardCache<T>,
}

fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

impl<T: Scalar> Encoder<T> {
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config.layer_shapes().into_iter().map(|(i, o)| Dense::init(i, o, &mut rng)).collect();
        Ok(Encoder { config, layers, stamp: fresh_stamp() })
    }

    /// Builds an encoder from explicit layers; shapes must match `config`.
    pub fn from_layers(config: EncoderConfig, layers: Vec<Dense<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(TgvError::ShapeMismatch(format!("config needs {} layers, got {}", shapes.len(), layers.len())));
        }
        for (k, ((i, o), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.weight.dim() != (*i, *o) || l.bias.len() != *o {
                return Err(TgvError::ShapeMismatch(format!("layer {k} should be {i}x{o}")));
            }
        }
        Ok(Encoder { config, layers, stamp: fresh_stamp() })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Mutable parameters. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    /// Layers of `E`; the remaining two form the projection head.
    pub fn encoder_layer_count(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.flat_iter().copied()).collect()
    }

    pub fn set_params_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(TgvError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            for p in l.flat_iter_mut() {
                *p = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    fn check_input(&self, x: ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(TgvError::ShapeMismatch(format!(
                "input has {} features, encoder expects {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TgvError::NonFiniteInput);
        }
        Ok(())
    }

    fn relu_after(&self, layer: usize) -> bool {
        let last_encoder = self.encoder_layer_count() - 1;
        layer != last_encoder && layer != self.layers.len() - 1
    }

    /// Encoder embeddings `v` only.
    pub fn embed(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        for k in 0..self.encoder_layer_count() {
            let pre = self.layers[k].apply(a.view());
            a = if self.relu_after(k) { relu(&pre) } else { pre };
        }
        Ok(a)
    }

    /// `(v, z, cache)`. `z` is not normalized.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<ForwardOutput<T>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let mut embedding = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.apply(a.view());
            let out = if self.relu_after(k) { relu(&pre) } else { pre.clone() };
            inputs.push(a);
            pre_acts.push(pre);
            if k + 1 == self.encoder_layer_count() {
                embedding = Some(out.clone());
            }
            a = out;
        }
        Ok(ForwardOutput {
            embedding: embedding.expect("encoder has at least one layer"),
            projection: a,
            cache: ForwardCache { inputs, pre: pre_acts, stamp: self.stamp },
        })
    }

    fn check_cache(&self, cache: &ForwardCache<T>) -> Result<()> {
        if cache.stamp != self.stamp || cache.pre.len() != self.layers.len() {
            return Err(TgvError::StaleCache);
        }
        Ok(())
    }

    fn backprop_from(&self, cache: &ForwardCache<T>, top: usize, grad: ArrayView2<T>) -> Result<EncoderGrads<T>> {
        self.check_cache(cache)?;
        let expected = cache.pre[top].dim();
        if grad.dim() != expected {
            return Err(TgvError::ShapeMismatch(format!(
                "gradient is {:?}, layer output is {:?}",
                grad.dim(),
                expected
            )));
        }
        let mut grads: Vec<Dense<T>> = self.layers.iter().map(Dense::zeros_like).collect();
        let mut g = grad.to_owned();
        for k in (0..=top).rev() {
            if self.relu_after(k) {
                g.zip_mut_with(&cache.pre[k], |gv, &p| {
                    if p <= T::zero() {
                        *gv = T::zero();
                    }
                });
            }
            let (layer_grad, below) = self.layers[k].backward(cache.inputs[k].view(), g.view());
            grads[k] = layer_grad;
            g = below;
        }
        Ok(EncoderGrads { layers: grads, input: g })
    }

    /// Gradients of a scalar loss whose derivative w.r.t. `z` is `grad_z`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_z: ArrayView2<T>) -> Result<EncoderGrads<T>> {
        self.backprop_from(cache, self.layers.len() - 1, grad_z)
    }

    /// Gradients of a loss defined on `v`; projection-head gradients are zero.
    pub fn backward_embedding(&self, cache: &ForwardCache<T>, grad_v: ArrayView2<T>) -> Result<EncoderGrads<T>> {
        self.backprop_from(cache, self.encoder_layer_count() - 1, grad_v)
    }

    /// `TGVW` checkpoint: magic, version, config block, then all parameters
    /// as little-endian `f64` in layer order (weights row-major, then bias).
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mut header = vec![c.input_dim as u64, c.encoder_hidden_dims.len() as u64];
        header.extend(c.encoder_hidden_dims.iter().map(|&d| d as u64));
        header.extend([c.embedding_dim as u64, c.projection_hidden_dim as u64, c.projection_dim as u64, c.seed]);
        for v in header {
            out.write_all(&v.to_le_bytes())?;
        }
        let params: Vec<f64> = self.params_flat().into_iter().map(Scalar::f64).collect();
        write_f64_block(&mut out, &params)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TgvError::Format("not a TGVW checkpoint".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(TgvError::Format(format!("unsupported checkpoint version {version}")));
        }
        let dim = |input: &mut R| -> Result<usize> {
            usize::try_from(read_u64(input)?).map_err(|_| TgvError::Format("dimension overflow".into()))
        };
        let input_dim = dim(&mut input)?;
        let n_hidden = dim(&mut input)?;
        if n_hidden > 1024 {
            return Err(TgvError::Format(format!("implausible hidden layer count {n_hidden}")));
        }
        let encoder_hidden_dims = (0..n_hidden).map(|_| dim(&mut input)).collect::<Result<Vec<_>>>()?;
        let config = EncoderConfig {
            input_dim,
            encoder_hidden_dims,
            embedding_dim: dim(&mut input)?,
            projection_hidden_dim: dim(&mut input)?,
            projection_dim: dim(&mut input)?,
            seed: read_u64(&mut input)?,
        };
        config.validate().map_err(|e| TgvError::Format(e.to_string()))?;
        let layers: Vec<Dense<T>> = config.layer_shapes().iter().map(|&(i, o)| Dense::zeros(i, o)).collect();
        let mut enc = Encoder { config, layers, stamp: fresh_stamp() };
        let params = read_f64_block(&mut input, enc.param_count())?;
        let params: Vec<T> = params.into_iter().map(T::of).collect();
        enc.set_params_flat(&params)?;
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(TgvError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(enc)
    }
}
