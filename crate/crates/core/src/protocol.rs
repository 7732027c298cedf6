//! End-to-end experiment protocol shared by the ablation harness and the
//! acceptance suite: pretrain on a training split, then score zero-shot
//! k-NN predictions on a test split against several disjoint reference
//! sets drawn from the training split.

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Result, TgvError};
use crate::eval::{self, FinetuneConfig, Task};
use crate::io::{Dataset, DatasetSchema, TargetKind};
use crate::scalar::Scalar;
use crate::tabular::{AttrValue, AttributeKind, AttributeSchema};
use crate::trainer::{train, PretrainData, TrainConfig, TrainReport};
use crate::zeroshot::{
    disjoint_balanced_sets, disjoint_sets, robustness_sweep, LabelTable, Metric, ReferenceSet, SweepReport,
    ZeroShotConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotProtocol {
    /// Number of disjoint reference sets.
    pub n_sets: usize,
    /// Reference-set size for continuous targets.
    pub regression_size: usize,
    /// Per-class count of each balanced reference set for binary targets.
    pub per_class: usize,
    pub regression: ZeroShotConfig,
    pub classification: ZeroShotConfig,
    pub seed: u64,
}

impl Default for ZeroShotProtocol {
    fn default() -> Self {
        ZeroShotProtocol {
            n_sets: 3,
            regression_size: 1000,
            per_class: 60,
            regression: ZeroShotConfig::regression(),
            classification: ZeroShotConfig::classification(),
            seed: 0,
        }
    }
}

/// Encodes the training split's attributes and pretrains on it.
pub fn pretrain_split<T: Scalar>(
    train_set: &Dataset,
    schema: &DatasetSchema,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    let attrs = AttributeSchema::fit_declared(&schema.attributes, &train_set.records)?;
    let tab = attrs.encode::<T>(&train_set.records)?;
    let images: Array2<T> = train_set.features.mapv(T::of);
    train(PretrainData { images: images.view(), tabular: Some(&tab) }, config)
}

/// Reference sets of training rows for `target`, as row-index lists.
pub fn reference_indices(
    train_set: &Dataset,
    kind: TargetKind,
    target: &str,
    p: &ZeroShotProtocol,
) -> Result<Vec<Vec<usize>>> {
    match kind {
        TargetKind::Continuous => disjoint_sets(train_set.len(), p.n_sets, p.regression_size, p.seed),
        TargetKind::Binary => disjoint_balanced_sets(train_set.target(target)?, p.n_sets, p.per_class, p.seed),
    }
}

/// Label columns usable for zero-shot prediction: every target present in
/// the data, then every continuous attribute.
pub fn label_columns(ds: &Dataset, schema: &DatasetSchema) -> IndexMap<String, Vec<f64>> {
    let mut columns = ds.targets.clone();
    for decl in &schema.attributes {
        if decl.kind == AttributeKind::Continuous && !columns.contains_key(&decl.name) {
            let values = ds
                .records
                .iter()
                .map(|r| match r.get(&decl.name) {
                    Some(AttrValue::Continuous(v)) => *v,
                    _ => f64::NAN,
                })
                .collect();
            columns.insert(decl.name.clone(), values);
        }
    }
    columns
}

/// Task kind of a target or continuous attribute.
pub fn label_kind(schema: &DatasetSchema, name: &str) -> Result<TargetKind> {
    if let Some(kind) = schema.target_kind(name) {
        return Ok(kind);
    }
    match schema.attributes.iter().find(|a| a.name == name) {
        Some(a) if a.kind == AttributeKind::Continuous => Ok(TargetKind::Continuous),
        _ => Err(TgvError::UnknownAttribute(name.to_string())),
    }
}

/// Embeds rows `indices` of `train_set` into a reference set labeled with
/// its targets.
pub fn reference_set<T: Scalar>(
    encoder: &Encoder<T>,
    train_set: &Dataset,
    indices: &[usize],
) -> Result<ReferenceSet<T>> {
    let part = train_set.subset(indices);
    let v = encoder.embed(part.features.mapv(T::of).view())?;
    ReferenceSet::new(v, LabelTable::from_columns(part.targets.clone())?, part.ids)
}

/// Zero-shot metric on `test_set` for each reference set; MAE for
/// continuous targets, AUC for binary ones.
pub fn zero_shot<T: Scalar>(
    encoder: &Encoder<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    target: &str,
    kind: TargetKind,
    p: &ZeroShotProtocol,
) -> Result<SweepReport> {
    let sets = reference_indices(train_set, kind, target, p)?;
    zero_shot_with_sets(encoder, train_set, test_set, target, kind, p, &sets)
}

pub fn zero_shot_with_sets<T: Scalar>(
    encoder: &Encoder<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    target: &str,
    kind: TargetKind,
    p: &ZeroShotProtocol,
    sets: &[Vec<usize>],
) -> Result<SweepReport> {
    let refs = sets.iter().map(|s| reference_set(encoder, train_set, s)).collect::<Result<Vec<_>>>()?;
    let queries = encoder.embed(test_set.features.mapv(T::of).view())?;
    let (cfg, metric) = match kind {
        TargetKind::Continuous => (p.regression, Metric::Mae),
        TargetKind::Binary => (p.classification, Metric::Auc),
    };
    if refs.len() < 2 {
        let r = refs.first().ok_or(TgvError::EmptyReference)?;
        let preds = crate::zeroshot::predict_all(r, queries.view(), target, &cfg)?;
        return Ok(SweepReport::from_values(metric, vec![metric.score(&preds, test_set.target(target)?)?]));
    }
    robustness_sweep(&refs, queries.view(), test_set.target(target)?, target, &cfg, metric)
}

/// MAE of predicting the training mean on the test split.
pub fn mean_guess_mae(train_set: &Dataset, test_set: &Dataset, target: &str) -> Result<f64> {
    let guess = eval::mean_guess(train_set.target(target)?)?;
    let truth = test_set.target(target)?;
    eval::mae(&guess.predict(truth.len()), truth)
}

/// Fine-tunes on the training split and scores on the test split.
pub fn finetune_metric<T: Scalar>(
    encoder: &Encoder<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    target: &str,
    kind: TargetKind,
    config: &FinetuneConfig,
) -> Result<f64> {
    let task = match kind {
        TargetKind::Continuous => Task::Regression,
        TargetKind::Binary => Task::Binary,
    };
    let cfg = FinetuneConfig { task, ..config.clone() };
    let x = train_set.features.mapv(T::of);
    let out = eval::finetune(encoder, None, x.view(), train_set.target(target)?, &cfg)?;
    let preds = out.model.predict(test_set.features.mapv(T::of).view())?;
    Ok(eval::score(task, &preds, test_set.target(target)?)?.1)
}

/// Rows whose binary `target` is positive plus an equal number of
/// negatives, seeded.
pub fn balanced_subset(ds: &Dataset, target: &str, seed: u64) -> Result<Dataset> {
    let labels = ds.target(target)?;
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    let sets = disjoint_balanced_sets(labels, 1, positives, seed)?;
    Ok(ds.subset(&sets[0]))
}

/// Metric per target, keyed by target name.
pub type TargetMetrics = IndexMap<String, SweepReport>;

pub fn zero_shot_all<T: Scalar>(
    encoder: &Encoder<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    schema: &DatasetSchema,
    p: &ZeroShotProtocol,
) -> Result<TargetMetrics> {
    schema
        .targets
        .iter()
        .map(|t| Ok((t.name.clone(), zero_shot(encoder, train_set, test_set, &t.name, t.kind, p)?)))
        .collect()
}
