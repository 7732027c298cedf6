//! Tabular attribute encoding and batch similarity.
//!
//! Categorical attributes are bipolar-encoded (`±1`) and compared with
//! cosine similarity. Continuous attributes are z-scored, compared by
//! Euclidean distance and mapped affinely onto `[-1, 1]` with the batch
//! maximum distance. The two are blended with a weight `lambda`.

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgvError};
use crate::scalar::Scalar;

/// Guard for batches whose continuous rows are all identical.
pub const DISTANCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttrValue {
    Continuous(f64),
    Categorical(String),
}

/// One raw record: attribute name to value, in column order.
pub type TabularRecord = IndexMap<String, AttrValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    pub categories: Vec<String>,
}

impl CategoricalSpec {
    /// Encoded column count: one column for binary (and single-level)
    /// attributes, one per category otherwise.
    pub fn width(&self) -> usize {
        match self.categories.len() {
            0..=2 => 1,
            k => k,
        }
    }

    fn index_of(&self, value: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == value)
            .ok_or_else(|| TgvError::UnknownCategory { attribute: self.name.clone(), value: value.to_string() })
    }
}

/// Declared kind of an attribute, before statistics are fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    Continuous,
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

/// Fitted attribute layout: continuous normalization statistics and
/// ordered categorical vocabularies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub continuous: Vec<ContinuousStats>,
    pub categorical: Vec<CategoricalSpec>,
}

impl AttributeSchema {
    /// Number of continuous columns `M`.
    pub fn continuous_width(&self) -> usize {
        self.continuous.len()
    }

    /// Number of encoded categorical columns `B`.
    pub fn categorical_width(&self) -> usize {
        self.categorical.iter().map(CategoricalSpec::width).sum()
    }

    /// Infers attribute kinds from the records themselves. Vocabularies
    /// keep first-appearance order.
    pub fn fit(records: &[TabularRecord]) -> Result<Self> {
        let first = check_min_records(records)?;
        let decls = first
            .iter()
            .map(|(name, value)| AttributeDecl {
                name: name.clone(),
                kind: match value {
                    AttrValue::Continuous(_) => AttributeKind::Continuous,
                    AttrValue::Categorical(_) => AttributeKind::Categorical { categories: vec![] },
                },
            })
            .collect::<Vec<_>>();
        for (row, record) in records.iter().enumerate() {
            if record.len() != first.len() {
                return Err(TgvError::UnknownShape(format!(
                    "record {row} has {} attributes, record 0 has {}",
                    record.len(),
                    first.len()
                )));
            }
        }
        Self::fit_declared(&decls, records)
    }

    /// Fits statistics for declared attributes. A declared vocabulary is
    /// kept as is; an empty one is collected from the records.
    pub fn fit_declared(decls: &[AttributeDecl], records: &[TabularRecord]) -> Result<Self> {
        check_min_records(records)?;
        let mut schema = AttributeSchema::default();
        for decl in decls {
            match &decl.kind {
                AttributeKind::Continuous => {
                    let mut values = Vec::with_capacity(records.len());
                    for (row, record) in records.iter().enumerate() {
                        match record.get(&decl.name) {
                            Some(AttrValue::Continuous(v)) if v.is_finite() => values.push(*v),
                            Some(AttrValue::Continuous(_)) => {
                                return Err(TgvError::NonFiniteValue(format!(
                                    "attribute `{}` at record {row}",
                                    decl.name
                                )))
                            }
                            _ => {
                                return Err(TgvError::UnknownShape(format!(
                                    "record {row} lacks continuous attribute `{}`",
                                    decl.name
                                )))
                            }
                        }
                    }
                    let (mean, std) = population_stats(&values);
                    if std <= 0.0 {
                        return Err(TgvError::ConstantAttribute(decl.name.clone()));
                    }
                    schema.continuous.push(ContinuousStats { name: decl.name.clone(), mean, std });
                }
                AttributeKind::Categorical { categories } => {
                    let mut vocab = categories.clone();
                    let declared = !vocab.is_empty();
                    for (row, record) in records.iter().enumerate() {
                        let value = match record.get(&decl.name) {
                            Some(AttrValue::Categorical(v)) => v,
                            _ => {
                                return Err(TgvError::UnknownShape(format!(
                                    "record {row} lacks categorical attribute `{}`",
                                    decl.name
                                )))
                            }
                        };
                        if !vocab.contains(value) {
                            if declared {
                                return Err(TgvError::UnknownCategory {
                                    attribute: decl.name.clone(),
                                    value: value.clone(),
                                });
                            }
                            vocab.push(value.clone());
                        }
                    }
                    check_vocab(&decl.name, &vocab)?;
                    schema.categorical.push(CategoricalSpec { name: decl.name.clone(), categories: vocab });
                }
            }
        }
        Ok(schema)
    }

    /// Bipolar-encodes categoricals and z-scores continuous values.
    pub fn encode<T: Scalar>(&self, records: &[TabularRecord]) -> Result<TabularBatch<T>> {
        let n = records.len();
        let mut con = Array2::<T>::zeros((n, self.continuous_width()));
        let mut cat = Array2::<T>::from_elem((n, self.categorical_width()), -T::one());
        for (row, record) in records.iter().enumerate() {
            for (col, stats) in self.continuous.iter().enumerate() {
                let v = match record.get(&stats.name) {
                    Some(AttrValue::Continuous(v)) => *v,
                    _ => {
                        return Err(TgvError::UnknownShape(format!(
                            "record {row} lacks continuous attribute `{}`",
                            stats.name
                        )))
                    }
                };
                if !v.is_finite() {
                    return Err(TgvError::NonFiniteValue(format!("attribute `{}` at record {row}", stats.name)));
                }
                con[[row, col]] = T::of((v - stats.mean) / stats.std);
            }
            let mut offset = 0;
            for spec in &self.categorical {
                let value = match record.get(&spec.name) {
                    Some(AttrValue::Categorical(v)) => v,
                    _ => {
                        return Err(TgvError::UnknownShape(format!(
                            "record {row} lacks categorical attribute `{}`",
                            spec.name
                        )))
                    }
                };
                let active = spec.index_of(value)?;
                if spec.width() == 1 {
                    if active == 0 {
                        cat[[row, offset]] = T::one();
                    }
                } else {
                    cat[[row, offset + active]] = T::one();
                }
                offset += spec.width();
            }
        }
        Ok(TabularBatch { cat, con })
    }
}

fn check_min_records(records: &[TabularRecord]) -> Result<&TabularRecord> {
    if records.len() < 2 {
        return Err(TgvError::InsufficientData { needed: 2, got: records.len() });
    }
    Ok(&records[0])
}

fn check_vocab(name: &str, vocab: &[String]) -> Result<()> {
    if vocab.is_empty() {
        return Err(TgvError::InvalidConfig(format!("attribute `{name}` has no categories")));
    }
    for (i, c) in vocab.iter().enumerate() {
        if vocab[..i].contains(c) {
            return Err(TgvError::InvalidConfig(format!("attribute `{name}` repeats category `{c}`")));
        }
    }
    Ok(())
}

/// Mean and population standard deviation.
pub(crate) fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Encoded attributes of `N` records: `cat` is `N×B` with entries `±1`,
/// `con` is `N×M` z-scored.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBatch<T> {
    pub cat: Array2<T>,
    pub con: Array2<T>,
}

impl<T: Scalar> TabularBatch<T> {
    pub fn len(&self) -> usize {
        self.cat.nrows().max(self.con.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        TabularBatch { cat: self.cat.select(Axis(0), indices), con: self.con.select(Axis(0), indices) }
    }

    /// Combined similarity. When one attribute family is absent the
    /// weight must put all mass on the other one.
    pub fn similarity(&self, lambda: f64) -> Result<SimilarityMatrix<T>> {
        let (m, b) = (self.con.ncols(), self.cat.ncols());
        if m == 0 && b == 0 {
            return Err(TgvError::InvalidDim("batch has no attributes".into()));
        }
        if m == 0 {
            if lambda != 0.0 {
                return Err(TgvError::InvalidConfig("no continuous attributes: lambda must be 0".into()));
            }
            let s = categorical_similarity(self.cat.view())?;
            return combine_similarity(&s, &s, lambda);
        }
        if b == 0 {
            if lambda != 1.0 {
                return Err(TgvError::InvalidConfig("no categorical attributes: lambda must be 1".into()));
            }
            let s = continuous_similarity(self.con.view())?;
            return combine_similarity(&s, &s, lambda);
        }
        let s_con = continuous_similarity(self.con.view())?;
        let s_cat = categorical_similarity(self.cat.view())?;
        combine_similarity(&s_con, &s_cat, lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Categorical,
    Continuous,
    Combined,
}

/// Square `N×N` similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    pub values: Array2<T>,
    pub kind: SimilarityKind,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn new(values: Array2<T>, kind: SimilarityKind) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(TgvError::ShapeMismatch(format!("similarity matrix is {r}x{c}")));
        }
        if r < 2 {
            return Err(TgvError::InsufficientData { needed: 2, got: r });
        }
        Ok(SimilarityMatrix { values, kind })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[[i, j]]
    }
}

/// Cosine similarity between bipolar-encoded rows.
pub fn categorical_similarity<T: Scalar>(cat: ArrayView2<T>) -> Result<SimilarityMatrix<T>> {
    let (n, b) = cat.dim();
    if n < 2 {
        return Err(TgvError::InsufficientData { needed: 2, got: n });
    }
    if b == 0 {
        return Err(TgvError::InvalidDim("categorical matrix has no columns".into()));
    }
    for ((row, col), &v) in cat.indexed_iter() {
        if v != T::one() && v != -T::one() {
            return Err(TgvError::InvalidEncoding { row, col });
        }
    }
    // Squared norms of ±1 rows are exact integers, so identical rows give exactly 1.
    let sq_norms: Vec<T> = cat.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut values = Array2::<T>::zeros((n, n));
    for i in 0..n {
        values[[i, i]] = T::one();
        for j in (i + 1)..n {
            let c = cat.row(i).dot(&cat.row(j)) / (sq_norms[i] * sq_norms[j]).sqrt();
            values[[i, j]] = c;
            values[[j, i]] = c;
        }
    }
    Ok(SimilarityMatrix { values, kind: SimilarityKind::Categorical })
}

/// Pairwise Euclidean distances between rows.
pub fn pairwise_distances<T: Scalar>(con: ArrayView2<T>) -> Array2<T> {
    let n = con.nrows();
    let mut d = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = T::zero();
            for (a, b) in con.row(i).iter().zip(con.row(j).iter()) {
                let diff = *a - *b;
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    d
}

/// `1 - 2·D/(max D + eps)`, so the farthest pair in the batch lands at -1.
pub fn continuous_similarity<T: Scalar>(con: ArrayView2<T>) -> Result<SimilarityMatrix<T>> {
    let (n, m) = con.dim();
    if n < 2 {
        return Err(TgvError::InsufficientData { needed: 2, got: n });
    }
    if m == 0 {
        return Err(TgvError::InvalidDim("continuous matrix has no columns".into()));
    }
    if con.iter().any(|v| !v.is_finite()) {
        return Err(TgvError::NonFiniteValue("continuous matrix".into()));
    }
    let d = pairwise_distances(con);
    let max = d.iter().fold(T::zero(), |acc, &v| acc.max(v));
    let scale = T::of(2.0) / (max + T::of(DISTANCE_EPS));
    let values = d.mapv(|v| T::one() - v * scale);
    Ok(SimilarityMatrix { values, kind: SimilarityKind::Continuous })
}

/// `lambda·S_con + (1 - lambda)·S_cat`.
pub fn combine_similarity<T: Scalar>(
    s_con: &SimilarityMatrix<T>,
    s_cat: &SimilarityMatrix<T>,
    lambda: f64,
) -> Result<SimilarityMatrix<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TgvError::LambdaOutOfRange(lambda));
    }
    if s_con.values.dim() != s_cat.values.dim() {
        return Err(TgvError::ShapeMismatch(format!(
            "S_con is {:?}, S_cat is {:?}",
            s_con.values.dim(),
            s_cat.values.dim()
        )));
    }
    let w = T::of(lambda);
    let w_cat = T::one() - w;
    let mut values = s_con.values.clone();
    values.zip_mut_with(&s_cat.values, |c, &k| *c = w * *c + w_cat * k);
    Ok(SimilarityMatrix { values, kind: SimilarityKind::Combined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rec(pairs: &[(&str, AttrValue)]) -> TabularRecord {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn cat(v: &str) -> AttrValue {
        AttrValue::Categorical(v.into())
    }

    #[test]
    fn two_point_population_stats() {
        let records =
            vec![rec(&[("height", AttrValue::Continuous(160.0))]), rec(&[("height", AttrValue::Continuous(180.0))])];
        let schema = AttributeSchema::fit(&records).unwrap();
        assert_eq!(schema.continuous[0].mean, 170.0);
        assert_eq!(schema.continuous[0].std, 10.0);
    }

    #[test]
    fn single_record_is_rejected() {
        let records = vec![rec(&[("height", AttrValue::Continuous(160.0))])];
        assert!(matches!(AttributeSchema::fit(&records), Err(TgvError::InsufficientData { .. })));
    }

    #[test]
    fn constant_attribute_is_rejected() {
        let records =
            vec![rec(&[("height", AttrValue::Continuous(160.0))]), rec(&[("height", AttrValue::Continuous(160.0))])];
        assert!(matches!(
            AttributeSchema::fit(&records),
            Err(TgvError::ConstantAttribute(name)) if name == "height"
        ));
    }

    #[test]
    fn disagreeing_records_are_rejected() {
        let records =
            vec![rec(&[("height", AttrValue::Continuous(160.0))]), rec(&[("weight", AttrValue::Continuous(60.0))])];
        assert!(matches!(AttributeSchema::fit(&records), Err(TgvError::UnknownShape(_))));
    }

    #[test]
    fn vocabulary_is_the_union() {
        let records =
            vec![rec(&[("g", cat("A"))]), rec(&[("g", cat("B"))]), rec(&[("g", cat("B"))]), rec(&[("g", cat("C"))])];
        let schema = AttributeSchema::fit(&records).unwrap();
        assert_eq!(schema.categorical[0].categories, vec!["A", "B", "C"]);
    }

    #[test]
    fn bipolar_encoding() {
        let schema = AttributeSchema {
            continuous: vec![ContinuousStats { name: "height".into(), mean: 170.0, std: 10.0 }],
            categorical: vec![
                CategoricalSpec { name: "sex".into(), categories: vec!["male".into(), "female".into()] },
                CategoricalSpec {
                    name: "smoking".into(),
                    categories: vec!["never".into(), "former".into(), "current".into()],
                },
            ],
        };
        let records = vec![
            rec(&[("height", AttrValue::Continuous(180.0)), ("sex", cat("male")), ("smoking", cat("never"))]),
            rec(&[("height", AttrValue::Continuous(165.0)), ("sex", cat("female")), ("smoking", cat("current"))]),
        ];
        let batch: TabularBatch<f64> = schema.encode(&records).unwrap();
        assert_eq!(batch.con, array![[1.0], [-0.5]]);
        assert_eq!(batch.cat, array![[1.0, 1.0, -1.0, -1.0], [-1.0, -1.0, -1.0, 1.0]]);
    }

    #[test]
    fn unknown_category_and_non_finite() {
        let schema = AttributeSchema {
            continuous: vec![ContinuousStats { name: "h".into(), mean: 0.0, std: 1.0 }],
            categorical: vec![CategoricalSpec { name: "s".into(), categories: vec!["a".into(), "b".into()] }],
        };
        let bad_cat = vec![rec(&[("h", AttrValue::Continuous(1.0)), ("s", cat("z"))])];
        assert!(matches!(schema.encode::<f64>(&bad_cat), Err(TgvError::UnknownCategory { .. })));
        let bad_num = vec![rec(&[("h", AttrValue::Continuous(f64::NAN)), ("s", cat("a"))])];
        assert!(matches!(schema.encode::<f64>(&bad_num), Err(TgvError::NonFiniteValue(_))));
    }

    #[test]
    fn categorical_cosine_examples() {
        let s =
            categorical_similarity(array![[1.0f64, -1.0, 1.0], [1.0, -1.0, -1.0], [1.0, -1.0, 1.0]].view()).unwrap();
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.get(0, 2), 1.0);
        let s = categorical_similarity(array![[1.0, -1.0], [-1.0, 1.0]].view()).unwrap();
        assert_eq!(s.get(0, 1), -1.0);
    }

    #[test]
    fn categorical_rejects_non_bipolar() {
        let r = categorical_similarity(array![[1.0, 0.5], [-1.0, 1.0]].view());
        assert!(matches!(r, Err(TgvError::InvalidEncoding { row: 0, col: 1 })));
    }

    #[test]
    fn continuous_mapping_examples() {
        let s = continuous_similarity(array![[0.0f64], [1.0], [2.0]].view()).unwrap();
        assert!(s.get(0, 1).abs() < 1e-12);
        assert!((s.get(0, 2) + 1.0).abs() < 1e-11);
        assert_eq!(s.get(1, 1), 1.0);

        let same = continuous_similarity(array![[3.0, 1.0], [3.0, 1.0], [3.0, 1.0]].view()).unwrap();
        assert!(same.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn combine_examples() {
        let con = SimilarityMatrix::new(array![[1.0f64, 0.6], [0.6, 1.0]], SimilarityKind::Continuous).unwrap();
        let cat = SimilarityMatrix::new(array![[1.0, 0.2], [0.2, 1.0]], SimilarityKind::Categorical).unwrap();
        assert_eq!(combine_similarity(&con, &cat, 1.0).unwrap().values, con.values);
        assert_eq!(combine_similarity(&con, &cat, 0.0).unwrap().values, cat.values);
        let mixed = combine_similarity(&con, &cat, 0.5).unwrap();
        assert!((mixed.get(0, 1) - 0.4).abs() < 1e-15);
        assert!(matches!(combine_similarity(&con, &cat, 1.5), Err(TgvError::LambdaOutOfRange(_))));
        let big = SimilarityMatrix::new(Array2::<f64>::eye(3), SimilarityKind::Categorical).unwrap();
        assert!(matches!(combine_similarity(&con, &big, 0.5), Err(TgvError::ShapeMismatch(_))));
    }

    #[test]
    fn single_family_batches_require_matching_lambda() {
        let batch = TabularBatch::<f64> { cat: Array2::zeros((3, 0)), con: array![[0.0], [1.0], [2.0]] };
        assert!(batch.similarity(0.5).is_err());
        let s = batch.similarity(1.0).unwrap();
        assert!((s.get(0, 2) + 1.0).abs() < 1e-11);
    }

    #[test]
    fn works_in_single_precision() {
        let s = continuous_similarity(array![[0.0f32], [1.0], [2.0]].view()).unwrap();
        assert!(s.get(0, 1).abs() < 1e-6);
    }
}
