use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgv::pairing::{assign_pairs, best_match};
use tgv::tabular::{SimilarityKind, SimilarityMatrix};

/// Random symmetric matrix. Entries are drawn from a coarse grid half the
/// time so that exact ties and boundary hits are common.
fn random_similarity(seed: u64) -> SimilarityMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=32);
    let coarse = rng.random_bool(0.5);
    let mut s = Array2::<f64>::ones((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = if coarse { rng.random_range(-4..=4) as f64 / 4.0 } else { rng.random_range(-1.0..1.0) };
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    SimilarityMatrix::new(s, SimilarityKind::Combined).unwrap()
}

fn brute_force(s: &SimilarityMatrix<f64>, h: f64) -> Vec<Vec<usize>> {
    let n = s.len();
    (0..n)
        .map(|i| {
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                if j != i && s.get(i, j) > m {
                    m = s.get(i, j);
                }
            }
            (0..n).filter(|&j| j != i && s.get(i, j) >= m - h).collect()
        })
        .collect()
}

const GRID: [f64; 6] = [0.0, 0.05, 0.1, 0.2, 0.25, 0.5];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force_and_is_monotone(seed in any::<u64>()) {
        let s = random_similarity(seed);
        let mut previous: Option<Vec<Vec<usize>>> = None;
        for h in GRID {
            let got = assign_pairs(&s, h).unwrap();
            prop_assert_eq!(&got.positives, &brute_force(&s, h));
            if let Some(prev) = &previous {
                for (small, large) in prev.iter().zip(&got.positives) {
                    prop_assert!(small.iter().all(|j| large.contains(j)));
                }
            }
            previous = Some(got.positives);
        }
    }

    #[test]
    fn best_match_is_in_every_positive_set(seed in any::<u64>()) {
        let s = random_similarity(seed);
        let pairs = assign_pairs(&s, 0.0).unwrap();
        for i in 0..s.len() {
            let (j, m) = best_match(&s, i).unwrap();
            prop_assert_eq!(pairs.positives[i][0], j);
            prop_assert_eq!(pairs.maxima[i], m);
        }
    }

    #[test]
    fn wide_threshold_pairs_everyone(seed in any::<u64>()) {
        let s = random_similarity(seed);
        let pairs = assign_pairs(&s, 2.0).unwrap();
        let n = s.len();
        for (i, set) in pairs.positives.iter().enumerate() {
            prop_assert_eq!(set, &(0..n).filter(|&j| j != i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn permuting_rows_permutes_pairs(seed in any::<u64>(), h in 0.0..0.3f64) {
        let s = random_similarity(seed);
        let n = s.len();
        let mut perm: Vec<usize> = (0..n).collect();
        tgv::zeroshot::shuffle(&mut perm, &mut ChaCha8Rng::seed_from_u64(seed ^ 7));
        let permuted = Array2::from_shape_fn((n, n), |(a, b)| s.get(perm[a], perm[b]));
        let permuted = SimilarityMatrix::new(permuted, SimilarityKind::Combined).unwrap();
        let direct = assign_pairs(&permuted, h).unwrap();
        let mapped = assign_pairs(&s, h).unwrap().permuted(&perm);
        prop_assert_eq!(direct.positives, mapped.positives);
    }
}
