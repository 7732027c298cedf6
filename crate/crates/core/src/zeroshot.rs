//! Zero-shot attribute prediction by k-NN over encoder embeddings.
//!
//! A query is compared by cosine similarity against every embedding of a
//! labeled reference set; the prediction is the mean label of the `K`
//! most similar references. For binary labels that mean is a score in
//! `[0, 1]`.

use std::io::{Read, Write};

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Result, TgvError};
use crate::eval;
use crate::io::{read_f64_block, read_u32, read_u64, write_f64_block};
use crate::scalar::Scalar;
use crate::tabular::population_stats;

pub const REFERENCE_MAGIC: &[u8; 4] = b"TGVR";
pub const REFERENCE_VERSION: u32 = 1;

/// Named label columns of equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelTable {
    columns: IndexMap<String, Vec<f64>>,
    rows: usize,
}

impl LabelTable {
    pub fn new(rows: usize) -> Self {
        LabelTable { columns: IndexMap::new(), rows }
    }

    pub fn from_columns(columns: IndexMap<String, Vec<f64>>) -> Result<Self> {
        let rows = columns.values().next().map_or(0, Vec::len);
        for v in columns.values() {
            if v.len() != rows {
                return Err(TgvError::LengthMismatch(v.len(), rows));
            }
        }
        Ok(LabelTable { columns, rows })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns.get(name).map(Vec::as_slice).ok_or_else(|| TgvError::UnknownAttribute(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotConfig {
    pub k_fraction: f64,
}

impl ZeroShotConfig {
    pub fn classification() -> Self {
        ZeroShotConfig { k_fraction: 0.20 }
    }

    pub fn regression() -> Self {
        ZeroShotConfig { k_fraction: 0.025 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(TgvError::InvalidConfig(format!("k_fraction {} is outside (0, 1]", self.k_fraction)));
        }
        Ok(())
    }

    /// `K = max(1, round_half_up(k_fraction * R))`, capped at `R`.
    pub fn k_for(&self, r: usize) -> usize {
        let k = (self.k_fraction * r as f64 + 0.5).floor() as usize;
        k.clamp(1, r.max(1))
    }
}

/// Labeled bank of unnormalized encoder embeddings `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet<T> {
    embeddings: Array2<T>,
    labels: LabelTable,
    ids: Vec<String>,
    norms: Vec<T>,
}

impl<T: Scalar> ReferenceSet<T> {
    pub fn new(embeddings: Array2<T>, labels: LabelTable, ids: Vec<String>) -> Result<Self> {
        let r = embeddings.nrows();
        if r == 0 {
            return Err(TgvError::EmptyReference);
        }
        if labels.rows() != r {
            return Err(TgvError::ShapeMismatch(format!("{} label rows for {r} embeddings", labels.rows())));
        }
        if ids.len() != r {
            return Err(TgvError::ShapeMismatch(format!("{} ids for {r} embeddings", ids.len())));
        }
        let norms: Vec<T> = embeddings.rows().into_iter().map(|row| row.dot(&row).sqrt()).collect();
        if let Some(i) = norms.iter().position(|&n| !(n > T::zero())) {
            return Err(TgvError::ZeroNormRow(i));
        }
        Ok(ReferenceSet { embeddings, labels, ids, norms })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn embeddings(&self) -> &Array2<T> {
        &self.embeddings
    }

    pub fn labels(&self) -> &LabelTable {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Cosine similarity of `query` to every reference.
    pub fn similarities(&self, query: ArrayView1<T>) -> Result<Vec<T>> {
        if query.len() != self.embeddings.ncols() {
            return Err(TgvError::ShapeMismatch(format!(
                "query has dim {}, references have {}",
                query.len(),
                self.embeddings.ncols()
            )));
        }
        let qn = query.dot(&query).sqrt();
        if !(qn > T::zero()) {
            return Err(TgvError::ZeroNormQuery);
        }
        Ok(self.embeddings.rows().into_iter().zip(&self.norms).map(|(row, &rn)| row.dot(&query) / (rn * qn)).collect())
    }

    /// `TGVR` file: magic, version, `R`, `d`, row-major `f64` embeddings,
    /// then the label table as CSV with a leading `id` column.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(REFERENCE_MAGIC)?;
        out.write_all(&REFERENCE_VERSION.to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        out.write_all(&(self.embeddings.ncols() as u64).to_le_bytes())?;
        let flat: Vec<f64> = self.embeddings.iter().map(|v| v.f64()).collect();
        write_f64_block(&mut out, &flat)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend(self.labels.names().map(str::to_string));
        w.write_record(&header)?;
        for (row, id) in self.ids.iter().enumerate() {
            let mut fields = vec![id.clone()];
            fields.extend(self.labels.columns.values().map(|c| format!("{}", c[row])));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != REFERENCE_MAGIC {
            return Err(TgvError::Format("not a TGVR reference file".into()));
        }
        let version = read_u32(&mut input)?;
        if version != REFERENCE_VERSION {
            return Err(TgvError::Format(format!("unsupported reference version {version}")));
        }
        let r = read_u64(&mut input)? as usize;
        let d = read_u64(&mut input)? as usize;
        let count = r.checked_mul(d).ok_or_else(|| TgvError::Format("size overflow".into()))?;
        let flat = read_f64_block(&mut input, count)?;
        let embeddings = Array2::from_shape_vec((r, d), flat.into_iter().map(T::of).collect())
            .map_err(|e| TgvError::Format(e.to_string()))?;
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("id") {
            return Err(TgvError::Format("label table must start with `id`".into()));
        }
        let mut ids = Vec::with_capacity(r);
        let mut columns: IndexMap<String, Vec<f64>> =
            headers.iter().skip(1).map(|h| (h.to_string(), Vec::with_capacity(r))).collect();
        for rec in reader.records() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            for (k, col) in columns.values_mut().enumerate() {
                let s = rec.get(k + 1).unwrap_or_default();
                col.push(s.parse().map_err(|_| TgvError::Format(format!("bad label `{s}`")))?);
            }
        }
        let labels = if columns.is_empty() { LabelTable::new(ids.len()) } else { LabelTable::from_columns(columns)? };
        ReferenceSet::new(embeddings, labels, ids)
    }
}

/// Embeds `samples` with `E` (not the projection head).
pub fn build_reference<T: Scalar>(
    encoder: &Encoder<T>,
    samples: ArrayView2<T>,
    labels: LabelTable,
    ids: Vec<String>,
) -> Result<ReferenceSet<T>> {
    if samples.nrows() == 0 {
        return Err(TgvError::EmptyReference);
    }
    let v = encoder.embed(samples)?;
    ReferenceSet::new(v, labels, ids)
}

/// Indices of the `k` most similar references, most similar first; ties go
/// to the lower index.
pub fn neighbors<T: Scalar>(reference: &ReferenceSet<T>, query: ArrayView1<T>, k: usize) -> Result<Vec<usize>> {
    let r = reference.len();
    if k == 0 || k > r {
        return Err(TgvError::KOutOfRange { k, r });
    }
    let sims = reference.similarities(query)?;
    let mut idx: Vec<usize> = (0..r).collect();
    let by_sim = |a: &usize, b: &usize| sims[*b].partial_cmp(&sims[*a]).expect("finite").then(a.cmp(b));
    if k < r {
        idx.select_nth_unstable_by(k - 1, by_sim);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_sim);
    Ok(idx)
}

/// Mean of `attribute` over the `K` nearest references.
pub fn predict_mean<T: Scalar>(
    reference: &ReferenceSet<T>,
    query: ArrayView1<T>,
    attribute: &str,
    config: &ZeroShotConfig,
) -> Result<f64> {
    config.validate()?;
    let labels = reference.labels.column(attribute)?;
    let k = config.k_for(reference.len());
    let mut nn = neighbors(reference, query, k)?;
    // Index order, so K = R sums exactly like the mean-guess baseline.
    nn.sort_unstable();
    Ok(nn.iter().map(|&j| labels[j]).sum::<f64>() / k as f64)
}

pub fn predict_all<T: Scalar>(
    reference: &ReferenceSet<T>,
    queries: ArrayView2<T>,
    attribute: &str,
    config: &ZeroShotConfig,
) -> Result<Vec<f64>> {
    queries.rows().into_iter().map(|q| predict_mean(reference, q, attribute, config)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Auc,
}

impl Metric {
    pub fn score(&self, predictions: &[f64], targets: &[f64]) -> Result<f64> {
        match self {
            Metric::Mae => eval::mae(predictions, targets),
            Metric::Auc => eval::auc(predictions, targets),
        }
    }
}

/// Per-set metric with its mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric: Metric,
    pub per_set: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SweepReport {
    pub fn from_values(metric: Metric, per_set: Vec<f64>) -> Self {
        let (mean, std) = population_stats(&per_set);
        SweepReport { metric, per_set, mean, std }
    }
}

pub fn robustness_sweep<T: Scalar>(
    refsets: &[ReferenceSet<T>],
    queries: ArrayView2<T>,
    targets: &[f64],
    attribute: &str,
    config: &ZeroShotConfig,
    metric: Metric,
) -> Result<SweepReport> {
    if refsets.len() < 2 {
        return Err(TgvError::InsufficientData { needed: 2, got: refsets.len() });
    }
    let per_set = refsets
        .iter()
        .map(|r| metric.score(&predict_all(r, queries, attribute, config)?, targets))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport::from_values(metric, per_set))
}

/// Reference-set sizes `{2000, 1000, 500, 100}` scaled and floored at 1.
pub fn size_ladder(scale: f64) -> Vec<usize> {
    [2000.0, 1000.0, 500.0, 100.0].iter().map(|s| ((s * scale).round() as usize).max(1)).collect()
}

pub fn shuffle<R: Rng>(items: &mut [usize], rng: &mut R) {
    items.shuffle(rng);
}

/// `n_sets` disjoint draws of `size` indices from `0..n`, seeded.
pub fn disjoint_sets(n: usize, n_sets: usize, size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_sets * size > n {
        return Err(TgvError::InsufficientData { needed: n_sets * size, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx.chunks(size).take(n_sets).map(|c| c.to_vec()).collect())
}

/// `n_sets` disjoint label-balanced draws, `per_class` indices of each
/// binary class per set, without replacement.
pub fn disjoint_balanced_sets(labels: &[f64], n_sets: usize, per_class: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0.5).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] <= 0.5).collect();
    let needed = n_sets * per_class;
    if pos.len() < needed || neg.len() < needed {
        return Err(TgvError::InsufficientData { needed, got: pos.len().min(neg.len()) });
    }
    shuffle(&mut pos, &mut rng);
    shuffle(&mut neg, &mut rng);
    Ok((0..n_sets)
        .map(|s| {
            let mut set: Vec<usize> = pos[s * per_class..(s + 1) * per_class]
                .iter()
                .chain(&neg[s * per_class..(s + 1) * per_class])
                .copied()
                .collect();
            set.sort_unstable();
            set
        })
        .collect())
}
