//! Downstream metrics and heads: AUC, MAE, accuracy, the mean-guess
//! baseline, linear probing on frozen embeddings and full fine-tuning.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Dense, Encoder};
use crate::error::{Result, TgvError};
use crate::optim::{Optimizer, OptimizerKind};
use crate::scalar::Scalar;
use crate::zeroshot::shuffle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    ZS,
    LP,
    FT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub task: String,
    pub regime: Regime,
    pub data_fraction: f64,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, n: usize, task: &str, regime: Regime) -> Self {
        MetricReport { metric: metric.into(), value, n, task: task.into(), regime, data_fraction: 1.0 }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(TgvError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(TgvError::InsufficientData { needed: 1, got: 0 });
    }
    Ok(())
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Labels are 0/1.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TgvError::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TgvError::NonFiniteValue("AUC scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        rank_sum += midrank * order[start..end].iter().filter(|&&i| labels[i] > 0.5).count() as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Independent AUC per label column, averaged.
pub fn macro_auc(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let aucs = scores.iter().zip(labels).map(|(s, y)| auc(s, y)).collect::<Result<Vec<_>>>()?;
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), targets.len())?;
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / predictions.len() as f64)
}

pub fn accuracy(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(predicted.len(), actual.len())?;
    Ok(predicted.iter().zip(actual).filter(|(p, a)| p == a).count() as f64 / predicted.len() as f64)
}

/// Coefficient of determination.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), targets.len())?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Constant predictor returning the training mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanGuess {
    pub mean: f64,
}

impl MeanGuess {
    pub fn predict(&self, n: usize) -> Vec<f64> {
        vec![self.mean; n]
    }
}

pub fn mean_guess(train_targets: &[f64]) -> Result<MeanGuess> {
    if train_targets.is_empty() {
        return Err(TgvError::EmptyTrain);
    }
    Ok(MeanGuess { mean: train_targets.iter().sum::<f64>() / train_targets.len() as f64 })
}

/// `y = x·w + b`; binary heads emit the logistic of that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub task: Task,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LinearHead {
    pub fn linear(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let w = Array1::from(self.weights.clone());
        x.dot(&w).iter().map(|v| v + self.bias).collect()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let lin = self.linear(x);
        match self.task {
            Task::Regression => lin,
            Task::Binary => lin.into_iter().map(sigmoid).collect(),
        }
    }
}

/// Ridge regularizer relative to the mean diagonal of the centered Gram matrix.
pub const RIDGE_SCALE: f64 = 1e-4;
pub const LOGISTIC_TOLERANCE: f64 = 1e-6;
pub const LOGISTIC_MAX_ITERS: usize = 10_000;

fn to_nalgebra(x: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}

/// Ridge regression with an unpenalized intercept, solved in closed form on
/// centered data with `alpha = ridge_scale * trace(XcᵀXc) / d`.
pub fn ridge_fit(x: ArrayView2<f64>, y: &[f64], ridge_scale: f64) -> Result<LinearHead> {
    check_lengths(x.nrows(), y.len())?;
    let n = x.nrows() as f64;
    let x_mean = x.mean_axis(Axis(0)).ok_or(TgvError::EmptyTrain)?;
    let y_mean = y.iter().sum::<f64>() / n;
    let xc = &x - &x_mean;
    let xm = to_nalgebra(xc.view());
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let mut gram = xm.transpose() * &xm;
    let d = gram.nrows();
    let alpha = ridge_scale * gram.trace() / d.max(1) as f64;
    for i in 0..d {
        gram[(i, i)] += alpha;
    }
    let rhs = xm.transpose() * yc;
    let chol = gram.cholesky().ok_or(TgvError::DegenerateDesign)?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(TgvError::DegenerateDesign);
    }
    let weights: Vec<f64> = w.iter().copied().collect();
    let bias = y_mean - x_mean.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
    Ok(LinearHead { weights, bias, task: Task::Regression })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { tolerance: LOGISTIC_TOLERANCE, max_iters: LOGISTIC_MAX_ITERS }
    }
}

/// Step size `1/L` for the mean logistic loss, `L = λ_max([X 1]ᵀ[X 1]) / (4n)`.
pub fn logistic_step_size(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    let d = x.ncols();
    let aug = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[[i, j]] } else { 1.0 });
    let gram = aug.transpose() * &aug;
    let lambda_max = gram.symmetric_eigenvalues().iter().fold(0.0f64, |m, &v| m.max(v));
    4.0 * n as f64 / lambda_max
}

/// Full-batch gradient descent on the mean logistic loss, starting from `init`
/// (zeros when `None`). Stops when every gradient entry is below tolerance.
pub fn logistic_fit(
    x: ArrayView2<f64>,
    y: &[f64],
    config: &LogisticConfig,
    init: Option<LinearHead>,
) -> Result<(LinearHead, usize)> {
    check_lengths(x.nrows(), y.len())?;
    let n = x.nrows() as f64;
    let step = logistic_step_size(x);
    let mut head = init.unwrap_or(LinearHead { weights: vec![0.0; x.ncols()], bias: 0.0, task: Task::Binary });
    head.task = Task::Binary;
    let yv = Array1::from(y.to_vec());
    for iter in 0..config.max_iters {
        let p = Array1::from(head.predict(x));
        let resid = (&p - &yv) / n;
        let gw = x.t().dot(&resid);
        let gb = resid.sum();
        let max_grad = gw.iter().fold(gb.abs(), |m, v| m.max(v.abs()));
        if max_grad < config.tolerance {
            return Ok((head, iter));
        }
        for (w, g) in head.weights.iter_mut().zip(gw.iter()) {
            *w -= step * g;
        }
        head.bias -= step * gb;
    }
    Ok((head, config.max_iters))
}

/// Linear probe on frozen embeddings with its training-set metric.
pub fn linear_probe(embeddings: ArrayView2<f64>, targets: &[f64], task: Task) -> Result<(LinearHead, MetricReport)> {
    if embeddings.nrows() < 2 {
        return Err(TgvError::InsufficientData { needed: 2, got: embeddings.nrows() });
    }
    match task {
        Task::Regression => {
            let head = ridge_fit(embeddings, targets, RIDGE_SCALE)?;
            let value = mae(&head.predict(embeddings), targets)?;
            Ok((head, MetricReport::new("mae", value, targets.len(), "regression", Regime::LP)))
        }
        Task::Binary => {
            let (head, _) = logistic_fit(embeddings, targets, &LogisticConfig::default(), None)?;
            let value = auc(&head.predict(embeddings), targets)?;
            Ok((head, MetricReport::new("auc", value, targets.len(), "binary", Regime::LP)))
        }
    }
}

/// Scores a head's predictions with the metric that fits its task.
pub fn score(task: Task, predictions: &[f64], targets: &[f64]) -> Result<(&'static str, f64)> {
    match task {
        Task::Regression => Ok(("mae", mae(predictions, targets)?)),
        Task::Binary => Ok(("auc", auc(predictions, targets)?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub task: Task,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Train only the head; equivalent to a gradient-descent linear probe.
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn new(task: Task) -> Self {
        FinetuneConfig {
            task,
            epochs: 35,
            learning_rate: 1e-3,
            batch_size: 128,
            optimizer: OptimizerKind::adam(),
            freeze_encoder: false,
            seed: 0,
        }
    }
}

/// Encoder plus a one-output linear head on `v`.
#[derive(Debug, Clone)]
pub struct FinetunedModel<T> {
    pub encoder: Encoder<T>,
    pub head: Dense<T>,
    pub task: Task,
}

impl<T: Scalar> FinetunedModel<T> {
    /// Regression outputs, or positive-class probabilities.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Vec<f64>> {
        let v = self.encoder.embed(x)?;
        let out = self.head.apply(v.view());
        Ok(out
            .column(0)
            .iter()
            .map(|s| match self.task {
                Task::Regression => s.f64(),
                Task::Binary => sigmoid(s.f64()),
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T> {
    pub model: FinetunedModel<T>,
    pub epoch_losses: Vec<f64>,
    /// Metric of the tuned model on its training data.
    pub report: MetricReport,
}

/// Default head: zero weights and a bias at the target mean (regression)
/// or the base-rate log-odds (binary).
pub fn default_head<T: Scalar>(embedding_dim: usize, targets: &[f64], task: Task) -> Result<Dense<T>> {
    let mean = mean_guess(targets)?.mean;
    let bias = match task {
        Task::Regression => mean,
        Task::Binary => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };
    let mut head = Dense::zeros(embedding_dim, 1);
    head.bias[0] = T::of(bias);
    Ok(head)
}

/// Per-sample loss on head output `s` and its derivative: L1 for
/// regression, logistic for binary targets.
fn task_loss(task: Task, s: f64, y: f64) -> (f64, f64) {
    match task {
        Task::Regression => {
            let r = s - y;
            (
                r.abs(),
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                },
            )
        }
        Task::Binary => {
            let softplus = if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
            (softplus - y * s, sigmoid(s) - y)
        }
    }
}

/// Joint training of encoder and head on labeled data.
pub fn finetune<T: Scalar>(
    encoder: &Encoder<T>,
    head: Option<Dense<T>>,
    x: ArrayView2<T>,
    targets: &[f64],
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome<T>> {
    check_lengths(x.nrows(), targets.len())?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(TgvError::InvalidConfig("epochs and batch_size must be >= 1".into()));
    }
    let d = encoder.config().embedding_dim;
    let mut head = match head {
        Some(h) => h,
        None => default_head(d, targets, config.task)?,
    };
    if head.weight.dim() != (d, 1) {
        return Err(TgvError::ShapeMismatch(format!("head must be {d}x1")));
    }
    let mut encoder = encoder.clone();
    let mut head_opt = Optimizer::new(config.optimizer, config.learning_rate, std::slice::from_ref(&head));
    let mut enc_opt = Optimizer::new(config.optimizer, config.learning_rate, encoder.layers());
    let frozen_v = if config.freeze_encoder { Some(encoder.embed(x)?) } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select(Axis(0), batch);
            let (v, cache) = match &frozen_v {
                Some(v) => (v.select(Axis(0), batch), None),
                None => {
                    let out = encoder.forward(xb.view())?;
                    (out.embedding, Some(out.cache))
                }
            };
            let s = head.apply(v.view());
            let m = batch.len() as f64;
            let mut grad_s = Array2::<T>::zeros((batch.len(), 1));
            for (r, &i) in batch.iter().enumerate() {
                let (l, g) = task_loss(config.task, s[[r, 0]].f64(), targets[i]);
                loss_sum += l;
                grad_s[[r, 0]] = T::of(g / m);
            }
            if !loss_sum.is_finite() {
                return Err(TgvError::NonFiniteLoss { epoch, step });
            }
            let (head_grad, grad_v) = head.backward(v.view(), grad_s.view());
            if let Some(cache) = cache {
                let grads = encoder.backward_embedding(&cache, grad_v.view())?;
                enc_opt.step(encoder.layers_mut(), &grads.layers)?;
            }
            head_opt.step(std::slice::from_mut(&mut head), std::slice::from_ref(&head_grad))?;
        }
        epoch_losses.push(loss_sum / n as f64);
    }

    let model = FinetunedModel { encoder, head, task: config.task };
    let preds = model.predict(x)?;
    let (metric, value) = score(config.task, &preds, targets)?;
    let task = match config.task {
        Task::Regression => "regression",
        Task::Binary => "binary",
    };
    Ok(FinetuneOutcome { model, epoch_losses, report: MetricReport::new(metric, value, n, task, Regime::FT) })
}
