//! Latent-factor generator for paired "image" features and tabular records.
//!
//! Each sample draws a shared latent `u` and a nuisance latent `w`. Tabular
//! attributes and held-out targets see only `u`; the image features are a
//! fixed random ReLU network of `[u, w]` plus noise. Tabular guidance
//! therefore has something to teach that augmentation alone cannot: which
//! image variation matters.

use std::path::Path;

use indexmap::IndexMap;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgvError};
use crate::io::{Dataset, DatasetSchema, TargetDecl, TargetKind, SCHEMA_VERSION};
use crate::scalar::Scalar;
use crate::tabular::{AttrValue, AttributeDecl, AttributeKind, TabularRecord};

pub const PHENOTYPE: &str = "phenotype";
pub const STATURE: &str = "stature";
pub const DISEASE: &str = "disease";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Shared latent dimension `L`.
    pub latent_dim: usize,
    /// Image-only latent dimension.
    pub nuisance_dim: usize,
    pub nuisance_scale: f64,
    pub feature_dim: usize,
    pub n_continuous: usize,
    pub n_binary: usize,
    pub noise_sigma_image: f64,
    pub noise_sigma_tabular: f64,
    /// Noise on the held-out continuous targets, in latent units.
    pub noise_sigma_target: f64,
    pub nonlinearity_depth: usize,
    pub disease_prevalence: f64,
    /// Minimum held-out R² of a ridge map from images to each continuous
    /// attribute under this config.
    pub r2_floor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 4000,
            latent_dim: 3,
            nuisance_dim: 8,
            nuisance_scale: 1.5,
            feature_dim: 32,
            n_continuous: 6,
            n_binary: 4,
            noise_sigma_image: 0.1,
            noise_sigma_tabular: 0.3,
            noise_sigma_target: 0.2,
            nonlinearity_depth: 1,
            disease_prevalence: 0.08,
            r2_floor: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TgvError::InvalidConfig(msg.to_string()));
        if self.n_samples < 2 {
            return bad("n_samples must be >= 2");
        }
        if self.latent_dim == 0 || self.feature_dim == 0 {
            return bad("latent_dim and feature_dim must be >= 1");
        }
        if self.n_continuous + self.n_binary == 0 {
            return bad("need at least one tabular attribute");
        }
        let sigmas = [self.noise_sigma_image, self.noise_sigma_tabular, self.noise_sigma_target, self.nuisance_scale];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise scales must be finite and >= 0");
        }
        if !(self.disease_prevalence > 0.0 && self.disease_prevalence < 1.0) {
            return bad("disease_prevalence must be in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub schema: DatasetSchema,
    /// Ground-truth shared latents. Never written to the training CSV.
    pub latents: Array2<f64>,
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Array1<f64> {
    let v = Array1::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal));
    let n = v.dot(&v).sqrt();
    v / n
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, l, nu, f) = (config.n_samples, config.latent_dim, config.nuisance_dim, config.feature_dim);

    // Fixed maps first, so the sample stream does not shift them.
    let con_map = normal_matrix(&mut rng, l, config.n_continuous, 1.0 / (l as f64).sqrt());
    let con_offsets: Vec<f64> = (0..config.n_continuous).map(|_| rng.random_range(20.0..80.0)).collect();
    let con_scales: Vec<f64> = (0..config.n_continuous).map(|_| rng.random_range(2.0..15.0)).collect();
    let bin_map = normal_matrix(&mut rng, l, config.n_binary, 1.0);
    let disease_dir = unit_vector(&mut rng, l);
    let phenotype_dir = unit_vector(&mut rng, l);
    let stature_dir = unit_vector(&mut rng, l);
    let width = f.max(l + nu);
    let mut image_layers = Vec::with_capacity(config.nonlinearity_depth);
    let mut fan_in = l + nu;
    for _ in 0..config.nonlinearity_depth {
        image_layers.push(normal_matrix(&mut rng, fan_in, width, (2.0 / fan_in as f64).sqrt()));
        fan_in = width;
    }
    let image_out = normal_matrix(&mut rng, fan_in, f, 1.0 / (fan_in as f64).sqrt());

    let latents = normal_matrix(&mut rng, n, l, 1.0);
    let nuisance = normal_matrix(&mut rng, n, nu, config.nuisance_scale);
    let mut h = ndarray::concatenate(Axis(1), &[latents.view(), nuisance.view()])
        .map_err(|e| TgvError::ShapeMismatch(e.to_string()))?;
    for w in &image_layers {
        h = h.dot(w).mapv(|v| v.max(0.0));
    }
    let mut images = h.dot(&image_out);
    let image_noise = normal_matrix(&mut rng, n, f, config.noise_sigma_image);
    images += &image_noise;

    let con_noise = normal_matrix(&mut rng, n, config.n_continuous, config.noise_sigma_tabular);
    let con = latents.dot(&con_map) + &con_noise;
    let bin_noise = normal_matrix(&mut rng, n, config.n_binary, config.noise_sigma_tabular);
    let bin = latents.dot(&bin_map) + &bin_noise;
    let target_noise = normal_matrix(&mut rng, n, 2, config.noise_sigma_target);

    let disease_score = latents.dot(&disease_dir);
    let positives = ((config.disease_prevalence * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| disease_score[b].total_cmp(&disease_score[a]).then(a.cmp(&b)));
    let mut disease = vec![0.0; n];
    for &i in &order[..positives] {
        disease[i] = 1.0;
    }
    let phenotype: Vec<f64> =
        (0..n).map(|i| 55.0 + 8.0 * (latents.row(i).dot(&phenotype_dir) + target_noise[[i, 0]])).collect();
    let stature: Vec<f64> =
        (0..n).map(|i| 170.0 + 9.0 * (latents.row(i).dot(&stature_dir) + target_noise[[i, 1]])).collect();

    let con_names: Vec<String> = (0..config.n_continuous).map(|k| format!("con{k}")).collect();
    let bin_names: Vec<String> = (0..config.n_binary).map(|k| format!("cat{k}")).collect();
    let records: Vec<TabularRecord> = (0..n)
        .map(|i| {
            let mut r = TabularRecord::new();
            for (k, name) in con_names.iter().enumerate() {
                r.insert(name.clone(), AttrValue::Continuous(con_offsets[k] + con_scales[k] * con[[i, k]]));
            }
            for (k, name) in bin_names.iter().enumerate() {
                let v = if bin[[i, k]] > 0.0 { "yes" } else { "no" };
                r.insert(name.clone(), AttrValue::Categorical(v.into()));
            }
            r
        })
        .collect();

    let mut attributes: Vec<AttributeDecl> =
        con_names.iter().map(|name| AttributeDecl { name: name.clone(), kind: AttributeKind::Continuous }).collect();
    attributes.extend(bin_names.iter().map(|name| AttributeDecl {
        name: name.clone(),
        kind: AttributeKind::Categorical { categories: vec!["yes".into(), "no".into()] },
    }));
    let schema = DatasetSchema {
        version: SCHEMA_VERSION,
        id_column: "id".into(),
        feature_columns: (0..f).map(|k| format!("x{k}")).collect(),
        attributes,
        targets: vec![
            TargetDecl { name: PHENOTYPE.into(), kind: TargetKind::Continuous },
            TargetDecl { name: STATURE.into(), kind: TargetKind::Continuous },
            TargetDecl { name: DISEASE.into(), kind: TargetKind::Binary },
        ],
    };
    let mut targets = IndexMap::new();
    targets.insert(PHENOTYPE.to_string(), phenotype);
    targets.insert(STATURE.to_string(), stature);
    targets.insert(DISEASE.to_string(), disease);
    let dataset = Dataset { ids: (0..n).map(|i| format!("s{i:05}")).collect(), features: images, records, targets };
    Ok(SynthDataset { dataset, schema, latents })
}

impl SynthDataset {
    /// Deterministic split into `(train, test)` by a seeded shuffle.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(SynthDataset, SynthDataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(TgvError::InvalidRate(test_fraction));
        }
        let n = self.dataset.len();
        let mut idx: Vec<usize> = (0..n).collect();
        crate::zeroshot::shuffle(&mut idx, &mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (test_fraction * n as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        let part = |rows: &[usize]| SynthDataset {
            dataset: self.dataset.subset(rows),
            schema: self.schema.clone(),
            latents: self.latents.select(Axis(0), rows),
        };
        Ok((part(&train), part(&test)))
    }

    /// Writes `<stem>.csv`, `<stem>.latents.csv`; the schema goes to `schema_path`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        self.dataset.save(&dir.join(format!("{stem}.csv")), &self.schema)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.latents.csv")))?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.latents.ncols()).map(|k| format!("u{k}")));
        w.write_record(&header)?;
        for (id, row) in self.dataset.ids.iter().zip(self.latents.rows()) {
            let mut fields = vec![id.clone()];
            fields.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Additive Gaussian noise, then independent zero-masking of coordinates.
pub fn augment_with<T: Scalar, R: Rng>(x: ArrayView1<T>, sigma: f64, mask_rate: f64, rng: &mut R) -> Result<Array1<T>> {
    if !(0.0..1.0).contains(&mask_rate) {
        return Err(TgvError::InvalidRate(mask_rate));
    }
    if !(sigma >= 0.0) {
        return Err(TgvError::InvalidConfig(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut out = x.to_owned();
    if sigma > 0.0 {
        for v in out.iter_mut() {
            *v += T::of(sigma * rng.sample::<f64, _>(StandardNormal));
        }
    }
    if mask_rate > 0.0 {
        for v in out.iter_mut() {
            if rng.random::<f64>() < mask_rate {
                *v = T::zero();
            }
        }
    }
    Ok(out)
}

pub fn augment<T: Scalar>(x: ArrayView1<T>, sigma: f64, mask_rate: f64, seed: u64) -> Result<Array1<T>> {
    augment_with(x, sigma, mask_rate, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Rows `[start, end)` of the features as scalar type `T`.
pub fn features_as<T: Scalar>(ds: &Dataset, start: usize, end: usize) -> Array2<T> {
    ds.features.slice(s![start..end, ..]).mapv(T::of)
}
