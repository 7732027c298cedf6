use indexmap::IndexMap;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgv::eval::{mae, mean_guess};
use tgv::zeroshot::{neighbors, predict_all, LabelTable, ReferenceSet, ZeroShotConfig};

fn reference(emb: Array2<f64>, labels: Vec<f64>) -> ReferenceSet<f64> {
    let ids = (0..emb.nrows()).map(|i| format!("r{i}")).collect();
    let mut cols = IndexMap::new();
    cols.insert("y".to_string(), labels);
    ReferenceSet::new(emb, LabelTable::from_columns(cols).unwrap(), ids).unwrap()
}

/// Entries on a coarse grid half the time, so ties in similarity occur.
fn random_rows(rng: &mut ChaCha8Rng, r: usize, d: usize) -> Array2<f64> {
    let coarse = rng.random_bool(0.5);
    let mut m = Array2::from_shape_simple_fn((r, d), || {
        if coarse {
            rng.random_range(-2..=2) as f64
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    for mut row in m.rows_mut() {
        if row.iter().all(|&v| v == 0.0) {
            row[0] = 1.0;
        }
    }
    m
}

/// Full sort by (similarity desc, index asc) with naive cosine.
fn oracle(emb: &Array2<f64>, q: &Array1<f64>, k: usize) -> Vec<usize> {
    let qn = q.dot(q).sqrt();
    let sims: Vec<f64> = emb.rows().into_iter().map(|r| r.dot(q) / (r.dot(&r).sqrt() * qn)).collect();
    let mut idx: Vec<usize> = (0..emb.nrows()).collect();
    idx.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn neighbors_match_full_sort(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, d) = (rng.random_range(1..=60), rng.random_range(1..=8));
        let emb = random_rows(&mut rng, r, d);
        let q = random_rows(&mut rng, 1, d).row(0).to_owned();
        let k = rng.random_range(1..=r);
        let set = reference(emb.clone(), vec![0.0; r]);
        prop_assert_eq!(neighbors(&set, q.view(), k).unwrap(), oracle(&emb, &q, k));
    }

    #[test]
    fn exact_match_is_top_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, d) = (rng.random_range(2..=40), rng.random_range(2..=8));
        let emb = Array2::from_shape_simple_fn((r, d), || rng.random_range(-1.0..1.0));
        let j = rng.random_range(0..r);
        let set = reference(emb.clone(), vec![0.0; r]);
        prop_assert_eq!(neighbors(&set, emb.row(j), 1).unwrap(), vec![j]);
    }

    #[test]
    fn predictions_invariant_to_power_of_two_scaling(seed in any::<u64>(), e in -8i32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, d) = (rng.random_range(2..=40), rng.random_range(1..=6));
        let emb = random_rows(&mut rng, r, d);
        let queries = random_rows(&mut rng, 5, d);
        let labels: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..10.0)).collect();
        let cfg = ZeroShotConfig { k_fraction: rng.random_range(0.01..=1.0) };
        let c = 2f64.powi(e);
        let a = predict_all(&reference(emb.clone(), labels.clone()), queries.view(), "y", &cfg).unwrap();
        let b = predict_all(&reference(&emb * c, labels), (&queries * c).view(), "y", &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn full_k_is_mean_guess(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, d) = (rng.random_range(1..=40), rng.random_range(1..=6));
        let emb = random_rows(&mut rng, r, d);
        let queries = random_rows(&mut rng, 7, d);
        let labels: Vec<f64> = (0..r).map(|_| rng.random_range(-5.0..5.0)).collect();
        let truth: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
        let cfg = ZeroShotConfig { k_fraction: 1.0 };
        let preds = predict_all(&reference(emb, labels.clone()), queries.view(), "y", &cfg).unwrap();
        let guess = mean_guess(&labels).unwrap().predict(7);
        prop_assert_eq!(mae(&preds, &truth).unwrap(), mae(&guess, &truth).unwrap());
    }
}
