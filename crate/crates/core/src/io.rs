//! Dataset CSV + schema sidecar, and little-endian binary helpers shared
//! by the checkpoint, embedding and reference-set formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgvError};
use crate::tabular::{AttrValue, AttributeDecl, AttributeKind, TabularRecord};

pub const SCHEMA_VERSION: u32 = 1;
pub const EMBEDDING_MAGIC: &[u8; 4] = b"TGVE";
pub const EMBEDDING_VERSION: u32 = 1;

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_f64_block<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64_block<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDecl {
    pub name: String,
    pub kind: TargetKind,
}

/// Sidecar describing the role of every CSV column. Targets are held out
/// of the pretraining similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub version: u32,
    pub id_column: String,
    pub feature_columns: Vec<String>,
    pub attributes: Vec<AttributeDecl>,
    #[serde(default)]
    pub targets: Vec<TargetDecl>,
}

impl DatasetSchema {
    pub fn load(path: &Path) -> Result<Self> {
        let schema: DatasetSchema = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if schema.version != SCHEMA_VERSION {
            return Err(TgvError::Format(format!("unsupported schema version {}", schema.version)));
        }
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn target_kind(&self, name: &str) -> Option<TargetKind> {
        self.targets.iter().find(|t| t.name == name).map(|t| t.kind)
    }
}

/// Parsed dataset: image features, tabular records and held-out targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub features: Array2<f64>,
    pub records: Vec<TabularRecord>,
    /// Target name to per-row value; binary targets are 0/1.
    pub targets: IndexMap<String, Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn target(&self, name: &str) -> Result<&[f64]> {
        self.targets.get(name).map(Vec::as_slice).ok_or_else(|| TgvError::UnknownAttribute(name.to_string()))
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select(ndarray::Axis(0), indices),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            targets: self.targets.iter().map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect())).collect(),
        }
    }

    pub fn read_csv<R: Read>(input: R, schema: &DatasetSchema) -> Result<Dataset> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| TgvError::UnknownShape(format!("CSV lacks column `{name}`")))
        };
        let id_col = col(&schema.id_column)?;
        let feature_cols = schema.feature_columns.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
        let attr_cols = schema.attributes.iter().map(|a| col(&a.name)).collect::<Result<Vec<_>>>()?;
        // Targets are optional: query files may omit them.
        let target_cols: Vec<(String, usize)> = schema
            .targets
            .iter()
            .filter_map(|t| headers.iter().position(|h| h == t.name).map(|i| (t.name.clone(), i)))
            .collect();

        let mut ids = Vec::new();
        let mut flat = Vec::new();
        let mut records = Vec::new();
        let mut targets: IndexMap<String, Vec<f64>> =
            target_cols.iter().map(|(n, _)| (n.clone(), Vec::new())).collect();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |i: usize, name: &str| -> Result<&str> {
                match rec.get(i).map(str::trim) {
                    Some(s) if !s.is_empty() => Ok(s),
                    _ => Err(TgvError::NonFiniteValue(format!("missing `{name}` at row {row}"))),
                }
            };
            let number = |i: usize, name: &str| -> Result<f64> {
                let s = field(i, name)?;
                let v: f64 =
                    s.parse().map_err(|_| TgvError::NonFiniteValue(format!("`{name}` = `{s}` at row {row}")))?;
                if !v.is_finite() {
                    return Err(TgvError::NonFiniteValue(format!("`{name}` at row {row}")));
                }
                Ok(v)
            };
            ids.push(field(id_col, &schema.id_column)?.to_string());
            for (&i, name) in feature_cols.iter().zip(&schema.feature_columns) {
                flat.push(number(i, name)?);
            }
            let mut record = TabularRecord::new();
            for (&i, decl) in attr_cols.iter().zip(&schema.attributes) {
                let value = match decl.kind {
                    AttributeKind::Continuous => AttrValue::Continuous(number(i, &decl.name)?),
                    AttributeKind::Categorical { .. } => AttrValue::Categorical(field(i, &decl.name)?.to_string()),
                };
                record.insert(decl.name.clone(), value);
            }
            records.push(record);
            for (name, i) in &target_cols {
                let v = number(*i, name)?;
                targets.get_mut(name).expect("initialized").push(v);
            }
        }
        let features = Array2::from_shape_vec((ids.len(), feature_cols.len()), flat)
            .map_err(|e| TgvError::ShapeMismatch(e.to_string()))?;
        Ok(Dataset { ids, features, records, targets })
    }

    pub fn load(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
        Self::read_csv(BufReader::new(File::open(path)?), schema)
    }

    pub fn write_csv<W: Write>(&self, out: W, schema: &DatasetSchema) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![schema.id_column.clone()];
        header.extend(schema.feature_columns.iter().cloned());
        header.extend(schema.attributes.iter().map(|a| a.name.clone()));
        let target_names: Vec<&String> =
            schema.targets.iter().map(|t| &t.name).filter(|n| self.targets.contains_key(*n)).collect();
        header.extend(target_names.iter().map(|n| n.to_string()));
        w.write_record(&header)?;
        for (row, id) in self.ids.iter().enumerate() {
            let mut fields = vec![id.clone()];
            fields.extend(self.features.row(row).iter().map(|v| format!("{v}")));
            for decl in &schema.attributes {
                fields.push(match self.records[row].get(&decl.name) {
                    Some(AttrValue::Continuous(v)) => format!("{v}"),
                    Some(AttrValue::Categorical(s)) => s.clone(),
                    None => return Err(TgvError::UnknownShape(format!("row {row} lacks `{}`", decl.name))),
                });
            }
            for name in &target_names {
                fields.push(format!("{}", self.targets[*name][row]));
            }
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path, schema: &DatasetSchema) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?), schema)
    }
}

/// `TGVE` embedding file: magic, version, rows, dim, row-major `f64` block.
pub fn write_embeddings<W: Write>(mut out: W, embeddings: &Array2<f64>) -> Result<()> {
    out.write_all(EMBEDDING_MAGIC)?;
    out.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    out.write_all(&(embeddings.nrows() as u64).to_le_bytes())?;
    out.write_all(&(embeddings.ncols() as u64).to_le_bytes())?;
    let flat: Vec<f64> = embeddings.iter().copied().collect();
    write_f64_block(&mut out, &flat)
}

pub fn read_embeddings<R: Read>(mut input: R) -> Result<Array2<f64>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(TgvError::Format("not a TGVE embedding file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != EMBEDDING_VERSION {
        return Err(TgvError::Format(format!("unsupported embedding version {version}")));
    }
    let rows = read_u64(&mut input)? as usize;
    let cols = read_u64(&mut input)? as usize;
    let flat =
        read_f64_block(&mut input, rows.checked_mul(cols).ok_or_else(|| TgvError::Format("size overflow".into()))?)?;
    Array2::from_shape_vec((rows, cols), flat).map_err(|e| TgvError::Format(e.to_string()))
}
