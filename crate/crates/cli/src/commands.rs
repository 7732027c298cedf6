use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use tgv::encoder::Encoder;
use tgv::eval::{self, FinetuneConfig, MetricReport, Regime, Task};
use tgv::io::{self, Dataset, DatasetSchema, TargetKind};
use tgv::pairing::assign_pairs;
use tgv::protocol::{self, ZeroShotProtocol};
use tgv::synthdata;
use tgv::tabular::AttributeSchema;
use tgv::trainer::TrainConfig;
use tgv::zeroshot::{self, build_reference, LabelTable, Metric, ReferenceSet, SweepReport, ZeroShotConfig};

use crate::args::*;

pub const CHECKPOINT_FILE: &str = "encoder.tgvw";
pub const H_GRID: [f64; 4] = [0.0, 0.05, 0.1, 0.2];
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// What a command read and wrote, for its manifest.
pub struct Outcome {
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    /// Relative to the output directory.
    pub outputs: Vec<String>,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_data(args: &DataArgs) -> Result<(DatasetSchema, Dataset)> {
    let schema = DatasetSchema::load(&args.schema).with_context(|| format!("loading {}", args.schema.display()))?;
    let data = Dataset::load(&args.data, &schema).with_context(|| format!("loading {}", args.data.display()))?;
    Ok((schema, data))
}

fn load_with(schema: &DatasetSchema, path: &Path) -> Result<Dataset> {
    Dataset::load(path, schema).with_context(|| format!("loading {}", path.display()))
}

fn load_encoder(path: &Path) -> Result<Encoder<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Encoder::read_checkpoint(std::io::BufReader::new(file))?)
}

fn task_of(kind: TargetKind) -> Task {
    match kind {
        TargetKind::Continuous => Task::Regression,
        TargetKind::Binary => Task::Binary,
    }
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Regression => "regression",
        Task::Binary => "binary",
    }
}

fn zs_config(kind: TargetKind, k_fraction: Option<f64>) -> ZeroShotConfig {
    let default = match kind {
        TargetKind::Continuous => ZeroShotConfig::regression(),
        TargetKind::Binary => ZeroShotConfig::classification(),
    };
    ZeroShotConfig { k_fraction: k_fraction.unwrap_or(default.k_fraction) }
}

fn truth<'a>(ds: &'a Dataset, columns: &'a indexmap::IndexMap<String, Vec<f64>>, name: &str) -> Option<&'a [f64]> {
    ds.targets.get(name).or_else(|| columns.get(name)).map(Vec::as_slice)
}

/// Zero-shot predictions for every query row, in row order.
fn predict_rows(
    reference: &ReferenceSet<f64>,
    queries: &Array2<f64>,
    attribute: &str,
    cfg: &ZeroShotConfig,
) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..queries.nrows()).collect();
    let preds = rows
        .par_iter()
        .map(|&i| zeroshot::predict_mean(reference, queries.row(i), attribute, cfg))
        .collect::<tgv::Result<Vec<_>>>()?;
    Ok(preds)
}

/// Metric of `preds` when it is defined (AUC needs both classes).
fn metric_report(task: Task, preds: &[f64], truth: &[f64], regime: Regime) -> Option<MetricReport> {
    eval::score(task, preds, truth)
        .ok()
        .map(|(metric, value)| MetricReport::new(metric, value, truth.len(), task_name(task), regime))
}

fn write_predictions(path: &Path, ids: &[String], columns: &[(&str, &[f64])]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<&str> = std::iter::once("id").chain(columns.iter().map(|(n, _)| *n)).collect();
    writeln!(w, "{}", header.join(","))?;
    for (row, id) in ids.iter().enumerate() {
        write!(w, "{id}")?;
        for (_, values) in columns {
            write!(w, ",{}", values[row])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<Outcome> {
    let cfg = args.config();
    let ds = synthdata::generate(&cfg)?;
    let (train, test) = ds.split(args.test_fraction, args.split_seed)?;
    train.write(&args.out, "train")?;
    test.write(&args.out, "test")?;
    ds.schema.save(&args.out.join("schema.json"))?;
    let config = json!({ "synth": cfg, "test_fraction": args.test_fraction, "split_seed": args.split_seed });
    write_json(&args.out.join("synth_config.json"), &config)?;
    Ok(Outcome {
        config,
        seed: Some(cfg.seed),
        inputs: vec![],
        outputs: ["train.csv", "train.latents.csv", "test.csv", "test.latents.csv", "schema.json", "synth_config.json"]
            .map(String::from)
            .to_vec(),
    })
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    precision: &'a str,
    rows: usize,
    epoch_losses: &'a [f64],
    steps: usize,
    config: &'a TrainConfig,
}

pub fn pretrain(args: &PretrainArgs) -> Result<Outcome> {
    let (schema, data) = load_data(&args.data)?;
    let cfg = args.train.config();
    cfg.validate()?;
    let ckpt = BufWriter::new(File::create(args.out.join(CHECKPOINT_FILE))?);
    let (losses, steps, precision) = match args.train.precision {
        Precision::F64 => {
            let r = protocol::pretrain_split::<f64>(&data, &schema, &cfg)?;
            r.encoder.write_checkpoint(ckpt)?;
            (r.epoch_losses, r.steps, "f64")
        }
        Precision::F32 => {
            let r = protocol::pretrain_split::<f32>(&data, &schema, &cfg)?;
            r.encoder.write_checkpoint(ckpt)?;
            (r.epoch_losses, r.steps, "f32")
        }
    };
    let summary = PretrainSummary { precision, rows: data.len(), epoch_losses: &losses, steps, config: &cfg };
    write_json(&args.out.join("train_report.json"), &summary)?;
    Ok(Outcome {
        config: json!({ "train": cfg, "precision": precision }),
        seed: Some(cfg.seed),
        inputs: vec![args.data.data.clone(), args.data.schema.clone()],
        outputs: vec![CHECKPOINT_FILE.into(), "train_report.json".into()],
    })
}

pub fn embed(args: &EmbedArgs) -> Result<Outcome> {
    let encoder = load_encoder(&args.checkpoint)?;
    let (_, data) = load_data(&args.data)?;
    let v = encoder.embed(data.features.view())?;
    io::write_embeddings(BufWriter::new(File::create(args.out.join("embeddings.tgve"))?), &v)?;
    let mut outputs = vec!["embeddings.tgve".to_string()];
    if args.csv {
        let names: Vec<String> = (0..v.ncols()).map(|k| format!("v{k}")).collect();
        let cols: Vec<Vec<f64>> = v.columns().into_iter().map(|c| c.to_vec()).collect();
        let pairs: Vec<(&str, &[f64])> = names.iter().map(String::as_str).zip(cols.iter().map(Vec::as_slice)).collect();
        write_predictions(&args.out.join("embeddings.csv"), &data.ids, &pairs)?;
        outputs.push("embeddings.csv".into());
    }
    Ok(Outcome {
        config: json!({ "rows": data.len(), "embedding_dim": v.ncols(), "csv": args.csv }),
        seed: None,
        inputs: vec![args.checkpoint.clone(), args.data.data.clone(), args.data.schema.clone()],
        outputs,
    })
}

pub fn zeroshot(args: &ZeroshotArgs) -> Result<Outcome> {
    let encoder = load_encoder(&args.checkpoint)?;
    let (schema, queries) = load_data(&args.data)?;
    let reference_data = load_with(&schema, &args.reference)?;
    let kind = protocol::label_kind(&schema, &args.attribute)?;
    let cfg = zs_config(kind, args.k_fraction);
    cfg.validate()?;
    let labels = LabelTable::from_columns(protocol::label_columns(&reference_data, &schema))?;
    labels.column(&args.attribute)?;
    let reference = build_reference(&encoder, reference_data.features.view(), labels, reference_data.ids.clone())?;
    reference.write_to(BufWriter::new(File::create(args.out.join("reference.tgvr"))?))?;
    let q = encoder.embed(queries.features.view())?;
    let preds = predict_rows(&reference, &q, &args.attribute, &cfg)?;

    let query_columns = protocol::label_columns(&queries, &schema);
    let actual = truth(&queries, &query_columns, &args.attribute);
    let mut cols: Vec<(&str, &[f64])> = vec![("prediction", &preds)];
    if let Some(t) = actual {
        cols.push(("truth", t));
    }
    write_predictions(&args.out.join("predictions.csv"), &queries.ids, &cols)?;
    let report = json!({
        "attribute": args.attribute,
        "task": task_name(task_of(kind)),
        "k_fraction": cfg.k_fraction,
        "k": cfg.k_for(reference.len()),
        "reference_rows": reference.len(),
        "query_rows": queries.len(),
        "metric": actual.and_then(|t| metric_report(task_of(kind), &preds, t, Regime::ZS)),
    });
    write_json(&args.out.join("zeroshot_report.json"), &report)?;
    Ok(Outcome {
        config: json!({ "attribute": args.attribute, "zeroshot": cfg }),
        seed: None,
        inputs: vec![args.checkpoint.clone(), args.reference.clone(), args.data.data.clone(), args.data.schema.clone()],
        outputs: vec!["reference.tgvr".into(), "predictions.csv".into(), "zeroshot_report.json".into()],
    })
}

fn require_truth<'a>(
    ds: &'a Dataset,
    columns: &'a indexmap::IndexMap<String, Vec<f64>>,
    name: &str,
    role: &str,
) -> Result<&'a [f64]> {
    match truth(ds, columns, name) {
        Some(t) => Ok(t),
        None => bail!("{role} data has no column `{name}`"),
    }
}

pub fn probe(args: &ProbeArgs) -> Result<Outcome> {
    let encoder = load_encoder(&args.checkpoint)?;
    let (schema, train) = load_data(&args.data)?;
    let test = load_with(&schema, &args.test)?;
    let task = task_of(protocol::label_kind(&schema, &args.attribute)?);
    let train_cols = protocol::label_columns(&train, &schema);
    let test_cols = protocol::label_columns(&test, &schema);
    let y_train = require_truth(&train, &train_cols, &args.attribute, "training")?;
    let y_test = require_truth(&test, &test_cols, &args.attribute, "test")?;
    let v_train = encoder.embed(train.features.view())?;
    let v_test = encoder.embed(test.features.view())?;
    let (head, train_report) = eval::linear_probe(v_train.view(), y_train, task)?;
    let preds = head.predict(v_test.view());
    let test_report = metric_report(task, &preds, y_test, Regime::LP);
    write_predictions(&args.out.join("predictions.csv"), &test.ids, &[("prediction", &preds), ("truth", y_test)])?;
    write_json(
        &args.out.join("probe.json"),
        &json!({ "attribute": args.attribute, "head": head, "train": train_report, "test": test_report }),
    )?;
    Ok(Outcome {
        config: json!({ "attribute": args.attribute, "task": task, "ridge_scale": eval::RIDGE_SCALE,
                        "logistic": eval::LogisticConfig::default() }),
        seed: None,
        inputs: vec![args.checkpoint.clone(), args.data.data.clone(), args.data.schema.clone(), args.test.clone()],
        outputs: vec!["probe.json".into(), "predictions.csv".into()],
    })
}

fn finetune_config(args: &FinetuneArgs, task: Task, seed: u64) -> FinetuneConfig {
    FinetuneConfig {
        epochs: args.ft_epochs,
        learning_rate: args.ft_lr,
        batch_size: args.ft_batch_size,
        seed,
        ..FinetuneConfig::new(task)
    }
}

/// Fine-tunes on `train` (balanced for binary targets if asked) and
/// predicts `test`.
fn finetune_predict(
    encoder: &Encoder<f64>,
    train: &Dataset,
    y: &[f64],
    test: &Dataset,
    cfg: &FinetuneConfig,
    balanced: bool,
) -> Result<Vec<f64>> {
    let (x, y) = if balanced && cfg.task == Task::Binary {
        let positives = y.iter().filter(|&&v| v > 0.5).count();
        let rows = &zeroshot::disjoint_balanced_sets(y, 1, positives, cfg.seed)?[0];
        let x = train.features.select(ndarray::Axis(0), rows);
        (x, rows.iter().map(|&i| y[i]).collect::<Vec<_>>())
    } else {
        (train.features.clone(), y.to_vec())
    };
    let out = eval::finetune(encoder, None, x.view(), &y, cfg)?;
    Ok(out.model.predict(test.features.view())?)
}

pub fn eval_cmd(args: &EvalArgs) -> Result<Outcome> {
    let encoder = load_encoder(&args.checkpoint)?;
    let (schema, train) = load_data(&args.data)?;
    let test = load_with(&schema, &args.test)?;
    let kind = protocol::label_kind(&schema, &args.attribute)?;
    let task = task_of(kind);
    let train_cols = protocol::label_columns(&train, &schema);
    let test_cols = protocol::label_columns(&test, &schema);
    let y_train = require_truth(&train, &train_cols, &args.attribute, "training")?;
    let y_test = require_truth(&test, &test_cols, &args.attribute, "test")?;
    let zs_cfg = zs_config(kind, args.k_fraction);
    let ft_cfg = finetune_config(&args.finetune, task, args.seed);

    let mut reports = Vec::new();
    let mut columns: Vec<(&str, Vec<f64>)> = Vec::new();
    for regime in &args.regimes {
        let (name, preds, regime) = match regime {
            RegimeArg::Zs => {
                zs_cfg.validate()?;
                let rows: Vec<usize> = match args.refset_size {
                    Some(size) => match kind {
                        TargetKind::Continuous => zeroshot::disjoint_sets(train.len(), 1, size, args.seed)?.remove(0),
                        TargetKind::Binary => {
                            zeroshot::disjoint_balanced_sets(y_train, 1, size / 2, args.seed)?.remove(0)
                        }
                    },
                    None => (0..train.len()).collect(),
                };
                let part = train.subset(&rows);
                let labels = LabelTable::from_columns(protocol::label_columns(&part, &schema))?;
                let reference = build_reference(&encoder, part.features.view(), labels, part.ids.clone())?;
                let q = encoder.embed(test.features.view())?;
                ("zs", predict_rows(&reference, &q, &args.attribute, &zs_cfg)?, Regime::ZS)
            }
            RegimeArg::Lp => {
                let v_train = encoder.embed(train.features.view())?;
                let (head, _) = eval::linear_probe(v_train.view(), y_train, task)?;
                ("lp", head.predict(encoder.embed(test.features.view())?.view()), Regime::LP)
            }
            RegimeArg::Ft => {
                let preds = finetune_predict(&encoder, &train, y_train, &test, &ft_cfg, args.finetune.balanced_ft)?;
                ("ft", preds, Regime::FT)
            }
        };
        if let Some(r) = metric_report(task, &preds, y_test, regime) {
            reports.push(r);
        }
        columns.push((name, preds));
    }
    let mut cols: Vec<(&str, &[f64])> = vec![("truth", y_test)];
    cols.extend(columns.iter().map(|(n, p)| (*n, p.as_slice())));
    write_predictions(&args.out.join("predictions.csv"), &test.ids, &cols)?;
    let baseline = match task {
        Task::Regression => Some(json!({
            "metric": "mae",
            "value": eval::mae(&eval::mean_guess(y_train)?.predict(y_test.len()), y_test)?,
        })),
        Task::Binary => None,
    };
    write_json(
        &args.out.join("metrics.json"),
        &json!({ "attribute": args.attribute, "reports": reports, "mean_guess": baseline }),
    )?;
    Ok(Outcome {
        config: json!({
            "attribute": args.attribute,
            "regimes": args.regimes.iter().map(|r| format!("{r:?}").to_lowercase()).collect::<Vec<_>>(),
            "zeroshot": zs_cfg,
            "refset_size": args.refset_size,
            "finetune": ft_cfg,
            "balanced_ft": args.finetune.balanced_ft,
        }),
        seed: Some(args.seed),
        inputs: vec![args.checkpoint.clone(), args.data.data.clone(), args.data.schema.clone(), args.test.clone()],
        outputs: vec!["metrics.json".into(), "predictions.csv".into()],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: f64,
    pub metric: Metric,
    pub zs: f64,
    pub zs_std: f64,
    pub zs_per_set: Vec<f64>,
    pub ft: Option<f64>,
}

fn ablation_protocol(args: &AblateArgs, train: &Dataset, kind: TargetKind) -> Result<ZeroShotProtocol> {
    let zs = zs_config(kind, args.k_fraction);
    zs.validate()?;
    let n_sets = args.refsets.max(1);
    let (regression_size, per_class) = match kind {
        TargetKind::Continuous => (args.refset_size.unwrap_or(train.len() / n_sets), 0),
        TargetKind::Binary => {
            let positives = train.target(&args.attribute)?.iter().filter(|&&y| y > 0.5).count();
            let negatives = train.len() - positives;
            (0, args.refset_size.unwrap_or(positives.min(negatives) / n_sets))
        }
    };
    Ok(ZeroShotProtocol {
        n_sets,
        regression_size,
        per_class,
        regression: zs,
        classification: zs,
        seed: args.train.seed,
    })
}

pub fn ablate(args: &AblateArgs) -> Result<Outcome> {
    let (schema, train) = load_data(&args.data)?;
    let test = load_with(&schema, &args.test)?;
    let kind =
        schema.target_kind(&args.attribute).ok_or_else(|| tgv::TgvError::UnknownAttribute(args.attribute.clone()))?;
    let base = args.train.config();
    base.validate()?;
    let zs = ablation_protocol(args, &train, kind)?;
    let ft_cfg = finetune_config(&args.finetune, task_of(kind), args.train.seed);

    let run_point = |cfg: &TrainConfig, p: &ZeroShotProtocol, with_ft: bool| -> Result<(SweepReport, Option<f64>)> {
        let report = protocol::pretrain_split::<f64>(&train, &schema, cfg)?;
        let sweep = protocol::zero_shot(&report.encoder, &train, &test, &args.attribute, kind, p)?;
        let ft = if with_ft {
            let y = train.target(&args.attribute)?;
            let preds = finetune_predict(&report.encoder, &train, y, &test, &ft_cfg, args.finetune.balanced_ft)?;
            Some(eval::score(task_of(kind), &preds, test.target(&args.attribute)?)?.1)
        } else {
            None
        };
        Ok((sweep, ft))
    };

    let (axis, rows): (&str, Vec<AblationRow>) = match args.sweep {
        SweepAxis::H | SweepAxis::Lambda => {
            let (axis, grid): (&str, &[f64]) = match args.sweep {
                SweepAxis::H => ("h", &H_GRID),
                _ => ("lambda", &LAMBDA_GRID),
            };
            let rows = grid
                .par_iter()
                .map(|&value| {
                    let cfg = match args.sweep {
                        SweepAxis::H => TrainConfig { threshold: value, ..base.clone() },
                        _ => TrainConfig { lambda: value, ..base.clone() },
                    };
                    let (sweep, ft) = run_point(&cfg, &zs, !args.no_ft)?;
                    Ok(AblationRow {
                        axis: axis.into(),
                        value,
                        metric: sweep.metric,
                        zs: sweep.mean,
                        zs_std: sweep.std,
                        zs_per_set: sweep.per_set,
                        ft,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (axis, rows)
        }
        SweepAxis::RefsetSize => {
            let report = protocol::pretrain_split::<f64>(&train, &schema, &base)?;
            let ladder = zeroshot::size_ladder(args.scale);
            let rows = ladder
                .par_iter()
                .map(|&size| {
                    let p = match kind {
                        TargetKind::Continuous => ZeroShotProtocol { regression_size: size, ..zs.clone() },
                        TargetKind::Binary => ZeroShotProtocol { per_class: (size / 2).max(1), ..zs.clone() },
                    };
                    let sweep = protocol::zero_shot(&report.encoder, &train, &test, &args.attribute, kind, &p)
                        .with_context(|| format!("reference-set size {size} (try a smaller --scale)"))?;
                    Ok(AblationRow {
                        axis: "refset_size".into(),
                        value: size as f64,
                        metric: sweep.metric,
                        zs: sweep.mean,
                        zs_std: sweep.std,
                        zs_per_set: sweep.per_set,
                        ft: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ("refset_size", rows)
        }
    };

    let mut w = BufWriter::new(File::create(args.out.join("ablation.csv"))?);
    writeln!(w, "axis,value,metric,zs,zs_std,ft")?;
    for r in &rows {
        let metric = match r.metric {
            Metric::Mae => "mae",
            Metric::Auc => "auc",
        };
        let ft = r.ft.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{}", r.axis, r.value, metric, r.zs, r.zs_std, ft)?;
    }
    w.flush()?;
    write_json(&args.out.join("ablation.json"), &json!({ "attribute": args.attribute, "axis": axis, "rows": rows }))?;
    Ok(Outcome {
        config: json!({
            "attribute": args.attribute,
            "axis": axis,
            "scale": args.scale,
            "train": base,
            "zeroshot": zs,
            "finetune": if args.no_ft { Value::Null } else { serde_json::to_value(&ft_cfg)? },
            "balanced_ft": args.finetune.balanced_ft,
        }),
        seed: Some(args.train.seed),
        inputs: vec![args.data.data.clone(), args.data.schema.clone(), args.test.clone()],
        outputs: vec!["ablation.csv".into(), "ablation.json".into()],
    })
}

pub fn pairs(args: &PairsArgs) -> Result<Outcome> {
    let (schema, data) = load_data(&args.data)?;
    let end = args.offset.checked_add(args.batch_size).filter(|&e| e <= data.len());
    let Some(end) = end else {
        bail!("rows {}..{} exceed the {} rows of the data", args.offset, args.offset + args.batch_size, data.len());
    };
    let attrs = AttributeSchema::fit_declared(&schema.attributes, &data.records)?;
    let tab = attrs.encode::<f64>(&data.records)?;
    let rows: Vec<usize> = (args.offset..end).collect();
    let s = tab.select(&rows).similarity(args.lambda)?;
    let assignment = assign_pairs(&s, args.threshold)?;
    assignment.write_csv(&s, BufWriter::new(File::create(args.out.join("pairs.csv"))?))?;
    Ok(Outcome {
        config: json!({ "lambda": args.lambda, "threshold": args.threshold, "batch_size": args.batch_size,
                        "offset": args.offset }),
        seed: None,
        inputs: vec![args.data.data.clone(), args.data.schema.clone()],
        outputs: vec!["pairs.csv".into()],
    })
}
