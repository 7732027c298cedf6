//! Contrastive pretraining loop.
//!
//! Each step takes a shuffled batch, derives positive sets (from tabular
//! similarity, or from augmented twins for the baseline), runs the encoder
//! and projection head, evaluates the contrastive loss and applies one
//! optimizer update.

use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Result, TgvError};
use crate::loss::{tgv_loss, LossConfig};
use crate::optim::{Optimizer, OptimizerKind};
use crate::pairing::{assign_pairs, PairAssignment};
use crate::scalar::Scalar;
use crate::synthdata::augment_with;
use crate::tabular::TabularBatch;
use crate::zeroshot::shuffle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingMode {
    /// Positives from thresholded tabular similarity.
    Tabular,
    /// Two augmented views per image, each the other's only positive.
    Augmentation,
}

/// Network widths; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub projection_dim: usize,
}

impl Default for EncoderShape {
    fn default() -> Self {
        EncoderShape { hidden_dims: vec![128], embedding_dim: 64, projection_dim: 32 }
    }
}

impl EncoderShape {
    pub fn config(&self, input_dim: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            encoder_hidden_dims: self.hidden_dims.clone(),
            embedding_dim: self.embedding_dim,
            projection_hidden_dim: self.embedding_dim,
            projection_dim: self.projection_dim,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub threshold: f64,
    pub tau: f64,
    pub include_self_in_denominator: bool,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub pairing_mode: PairingMode,
    pub augment_sigma: f64,
    pub augment_mask_rate: f64,
    pub encoder: EncoderShape,
}

impl Default for TrainConfig {
    /// Desk-scale defaults (batch 128); see [`TrainConfig::reference`].
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-3,
            epochs: 10,
            lambda: 0.5,
            threshold: 0.05,
            tau: 0.1,
            include_self_in_denominator: false,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            pairing_mode: PairingMode::Tabular,
            augment_sigma: 0.3,
            augment_mask_rate: 0.2,
            encoder: EncoderShape::default(),
        }
    }
}

impl TrainConfig {
    /// Published batch size of 512; the other defaults already match.
    pub fn reference() -> Self {
        TrainConfig { batch_size: 512, ..Self::default() }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { tau: self.tau, include_self_in_denominator: self.include_self_in_denominator }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TgvError::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TgvError::LambdaOutOfRange(self.lambda));
        }
        if !(self.threshold >= 0.0) {
            return Err(TgvError::NegativeThreshold(self.threshold));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.augment_mask_rate) {
            return Err(TgvError::InvalidRate(self.augment_mask_rate));
        }
        if !(self.augment_sigma >= 0.0) {
            return bad(format!("augment_sigma must be >= 0, got {}", self.augment_sigma));
        }
        Ok(())
    }
}

/// Images plus, for tabular pairing, their encoded attributes (row-aligned).
#[derive(Debug, Clone, Copy)]
pub struct PretrainData<'a, T> {
    pub images: ArrayView2<'a, T>,
    pub tabular: Option<&'a TabularBatch<T>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport<T> {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    #[serde(skip)]
    pub encoder: Encoder<T>,
    /// Excluded from the serialized report so reruns are byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
    pub config: TrainConfig,
}

/// One forward/backward/update. Returns the batch loss.
pub fn train_step<T: Scalar>(
    encoder: &mut Encoder<T>,
    optimizer: &mut Optimizer<T>,
    x: ArrayView2<T>,
    pairs: &PairAssignment<T>,
    loss: &LossConfig,
) -> Result<T> {
    let out = encoder.forward(x)?;
    let l = tgv_loss(out.projection.view(), pairs, loss)?;
    let grads = encoder.backward(&out.cache, l.grad_z.view())?;
    optimizer.step(encoder.layers_mut(), &grads.layers)?;
    Ok(l.value)
}

/// Positive sets for a tabular batch.
pub fn tabular_pairs<T: Scalar>(tabular: &TabularBatch<T>, lambda: f64, threshold: f64) -> Result<PairAssignment<T>> {
    let s = tabular.similarity(lambda)?;
    assign_pairs(&s, T::of(threshold))
}

/// Pretrains a freshly initialized encoder (seeded by `config.seed`).
pub fn train<T: Scalar>(data: PretrainData<'_, T>, config: &TrainConfig) -> Result<TrainReport<T>> {
    config.validate()?;
    let encoder = Encoder::init(config.encoder.config(data.images.ncols(), config.seed))?;
    train_from(encoder, data, config)
}

/// Pretrains starting from `encoder`.
pub fn train_from<T: Scalar>(
    mut encoder: Encoder<T>,
    data: PretrainData<'_, T>,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    config.validate()?;
    let started = Instant::now();
    let n = data.images.nrows();
    if n < config.batch_size {
        return Err(TgvError::InsufficientData { needed: config.batch_size, got: n });
    }
    if config.pairing_mode == PairingMode::Tabular {
        match data.tabular {
            Some(t) if t.len() == n => {}
            Some(t) => return Err(TgvError::ShapeMismatch(format!("{} tabular rows for {n} images", t.len()))),
            None => return Err(TgvError::InvalidConfig("tabular pairing needs tabular data".into())),
        }
    }
    let loss_cfg = config.loss_config();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, encoder.layers());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;

    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut shuffle_rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let images = data.images.select(Axis(0), batch);
            let (x, pairs) = match config.pairing_mode {
                PairingMode::Tabular => {
                    let tab = data.tabular.expect("checked above").select(batch);
                    (images, tabular_pairs(&tab, config.lambda, config.threshold)?)
                }
                PairingMode::Augmentation => {
                    let view = |rng: &mut ChaCha8Rng| -> Result<Array2<T>> {
                        let rows = images
                            .rows()
                            .into_iter()
                            .map(|r| augment_with(r, config.augment_sigma, config.augment_mask_rate, rng))
                            .collect::<Result<Vec<_>>>()?;
                        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
                        concatenate(Axis(0), &views).map_err(|e| TgvError::ShapeMismatch(e.to_string()))
                    };
                    let a = view(&mut augment_rng)?;
                    let b = view(&mut augment_rng)?;
                    let x = concatenate(Axis(0), &[a.view(), b.view()])
                        .map_err(|e| TgvError::ShapeMismatch(e.to_string()))?;
                    (x, PairAssignment::twins(batch.len()))
                }
            };
            let loss = train_step(&mut encoder, &mut optimizer, x.view(), &pairs, &loss_cfg).map_err(|e| match e {
                TgvError::NonFiniteValue(_) => TgvError::NonFiniteLoss { epoch, step },
                other => other,
            })?;
            if !loss.is_finite() || !encoder.is_finite() {
                return Err(TgvError::NonFiniteLoss { epoch, step });
            }
            sum += loss.f64();
            count += 1;
            steps += 1;
        }
        epoch_losses.push(sum / count.max(1) as f64);
    }
    Ok(TrainReport {
        epoch_losses,
        steps,
        encoder,
        wall_seconds: started.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}
