//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use indexmap::IndexMap;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgv::encoder::{Encoder, EncoderConfig};
use tgv::eval::{mae, mean_guess};
use tgv::io::TargetKind;
use tgv::loss::{tgv_loss, LossConfig};
use tgv::pairing::{assign_pairs, PairAssignment};
use tgv::protocol::{self, ZeroShotProtocol};
use tgv::synthdata::{self, SynthConfig, SynthDataset, DISEASE, PHENOTYPE, STATURE};
use tgv::tabular::{
    categorical_similarity, combine_similarity, continuous_similarity, SimilarityKind, SimilarityMatrix,
};
use tgv::trainer::{PairingMode, TrainConfig};
use tgv::zeroshot::{neighbors, predict_all, LabelTable, ReferenceSet, ZeroShotConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// Gradient check -------------------------------------------------------------

const FD_STEP: f64 = 1e-5;

fn gradient_instance(seed: u64) -> (Encoder<f64>, Array2<f64>, PairAssignment<f64>, LossConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let f = rng.random_range(1..=16);
    let d = rng.random_range(1..=16);
    let p = rng.random_range(1..=16);
    let config = EncoderConfig {
        input_dim: f,
        encoder_hidden_dims: vec![rng.random_range(1..=16)],
        embedding_dim: d,
        projection_hidden_dim: d,
        projection_dim: p,
        seed,
    };
    let mut encoder = Encoder::init(config).unwrap();
    // Nonzero biases keep ReLU units away from exact zeros.
    for layer in encoder.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let x = Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0));
    let s = Array2::from_shape_simple_fn((n, n), || rng.random_range(-1.0..1.0));
    let s = SimilarityMatrix::new((&s + &s.t()) / 2.0, SimilarityKind::Combined).unwrap();
    let pairs = assign_pairs(&s, rng.random_range(0.0..0.5)).unwrap();
    let loss = LossConfig { tau: rng.random_range(0.1..1.0), include_self_in_denominator: rng.random_bool(0.3) };
    (encoder, x, pairs, loss)
}

fn gradient_correctness() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let (encoder, x, pairs, loss) = gradient_instance(seed);
        let out = encoder.forward(x.view()).unwrap();
        let l = tgv_loss(out.projection.view(), &pairs, &loss).unwrap();
        let analytic = encoder.backward(&out.cache, l.grad_z.view()).unwrap().flat();
        let base = encoder.params_flat();
        let loss_at = |params: &[f64]| {
            let mut e = encoder.clone();
            e.set_params_flat(params).unwrap();
            tgv_loss(e.forward(x.view()).unwrap().projection.view(), &pairs, &loss).unwrap().value
        };
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + FD_STEP;
            let up = loss_at(&p);
            p[k] = base[k] - FD_STEP;
            let numeric = (up - loss_at(&p)) / (2.0 * FD_STEP);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[k] - numeric).abs() / scale);
        }
    }
    verdict(worst < 1e-4, format!("50 instances, max relative error {worst:.2e} (< 1e-4)"))
}

// Pairing oracle -------------------------------------------------------------

/// Symmetric matrix, on a coarse grid half the time so ties are common.
fn random_similarity(rng: &mut ChaCha8Rng) -> SimilarityMatrix<f64> {
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

fn brute_force_pairs(s: &SimilarityMatrix<f64>, h: f64) -> Vec<Vec<usize>> {
    let n = s.len();
    (0..n)
        .map(|i| {
            let m = (0..n).filter(|&j| j != i).map(|j| s.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            (0..n).filter(|&j| j != i && s.get(i, j) >= m - h).collect()
        })
        .collect()
}

fn pairing_oracle() -> Verdict {
    const GRID: [f64; 6] = [0.0, 0.05, 0.1, 0.2, 0.25, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mismatches, mut violations, mut boundary_hits) = (0, 0, 0usize);
    for _ in 0..1000 {
        let s = random_similarity(&mut rng);
        let mut previous: Option<Vec<Vec<usize>>> = None;
        for h in GRID {
            let got = assign_pairs(&s, h).unwrap().positives;
            let want = brute_force_pairs(&s, h);
            mismatches += usize::from(got != want);
            for (i, set) in want.iter().enumerate() {
                let m = (0..s.len()).filter(|&j| j != i).map(|j| s.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
                boundary_hits += set.iter().filter(|&&j| s.get(i, j) == m - h).count();
            }
            if let Some(prev) = &previous {
                violations += prev.iter().zip(&got).filter(|(a, b)| !a.iter().all(|j| b.contains(j))).count();
            }
            previous = Some(got);
        }
    }
    verdict(
        mismatches == 0 && violations == 0,
        format!(
            "1000 matrices x 6 thresholds: {mismatches} mismatches, {violations} monotonicity violations, \
             {boundary_hits} exact boundary ties exercised"
        ),
    )
}

// Similarity properties ------------------------------------------------------

fn similarity_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut failures, mut worst_combine, mut worst_range) = (0usize, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..1000 {
        let n = rng.random_range(2..=24);
        let (b, m) = (rng.random_range(1..=12), rng.random_range(1..=8));
        let cat: Array2<f64> = Array2::from_shape_simple_fn((n, b), || if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let con: Array2<f64> = Array2::from_shape_simple_fn((n, m), || rng.random_range(-3.0..3.0));
        let s_cat = categorical_similarity(cat.view()).unwrap();
        let s_con = continuous_similarity(con.view()).unwrap();
        let lambda = rng.random_range(0.0..=1.0);
        let s = combine_similarity(&s_con, &s_cat, lambda).unwrap();
        for matrix in [&s_cat, &s_con, &s] {
            for i in 0..n {
                failures += usize::from((matrix.get(i, i) - 1.0).abs() > 1e-12);
                for j in 0..n {
                    let v = matrix.get(i, j);
                    failures += usize::from(v != matrix.get(j, i) || !(-1.0..=1.0 + 1e-9).contains(&v));
                    worst_range = worst_range.max(v - 1.0);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let naive = lambda * s_con.get(i, j) + (1.0 - lambda) * s_cat.get(i, j);
                worst_combine = worst_combine.max((s.get(i, j) - naive).abs());
            }
        }
    }
    verdict(
        failures == 0 && worst_combine <= 1e-12,
        format!(
            "1000 batches: {failures} symmetry/diagonal/range failures, max overshoot above 1 {worst_range:.1e}, \
             max combine error {worst_combine:.1e} (<= 1e-12)"
        ),
    )
}

// Loss identities ------------------------------------------------------------

fn loss_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_zero, mut worst_scale) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let p = rng.random_range(1..=8);
        let z: Array2<f64> = Array2::from_shape_simple_fn((n, p), || rng.random_range(-1.0..1.0));
        let cfg = LossConfig { tau: rng.random_range(0.05..1.0), include_self_in_denominator: false };
        let everyone =
            PairAssignment::from_sets((0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect()).unwrap();
        worst_zero = worst_zero.max(tgv_loss(z.view(), &everyone, &cfg).unwrap().value.abs());

        let s = Array2::from_shape_simple_fn((n, n), || rng.random_range(-1.0..1.0));
        let s = SimilarityMatrix::new((&s + &s.t()) / 2.0, SimilarityKind::Combined).unwrap();
        let pairs = assign_pairs(&s, rng.random_range(0.0..0.4)).unwrap();
        let c = 10f64.powf(rng.random_range(-2.0..2.0));
        let a = tgv_loss(z.view(), &pairs, &cfg).unwrap().value;
        let b = tgv_loss((&z * c).view(), &pairs, &cfg).unwrap().value;
        worst_scale = worst_scale.max((a - b).abs());
    }
    let z: Array2<f64> = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
    let pairs = PairAssignment::from_sets(vec![vec![2], vec![0], vec![0]]).unwrap();
    let worked =
        tgv_loss(z.view(), &pairs, &LossConfig { tau: 0.1, include_self_in_denominator: false }).unwrap().value;
    // Per-anchor terms: anchors 0 and 2 see log(1 + e^-10), anchor 1 sees log 2.
    let oracle = (2.0 * (-10.0f64).exp().ln_1p() + 2.0f64.ln()) / 3.0;
    verdict(
        worst_zero <= 1e-12
            && (worked - 0.23107).abs() <= 1e-4
            && (worked - oracle).abs() <= 1e-12
            && worst_scale <= 1e-9,
        format!(
            "all-positive loss max {worst_zero:.1e} (<= 1e-12), worked instance {worked:.6} (0.23107 +- 1e-4), \
             scaling drift max {worst_scale:.1e} (<= 1e-9)"
        ),
    )
}

// Zero-shot identities -------------------------------------------------------

fn reference(emb: Array2<f64>, labels: Vec<f64>) -> ReferenceSet<f64> {
    let ids = (0..emb.nrows()).map(|i| format!("r{i}")).collect();
    let mut cols = IndexMap::new();
    cols.insert("y".to_string(), labels);
    ReferenceSet::new(emb, LabelTable::from_columns(cols).unwrap(), ids).unwrap()
}

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

fn full_sort(emb: &Array2<f64>, q: &Array1<f64>, k: usize) -> Vec<usize> {
    let qn = q.dot(q).sqrt();
    let sims: Vec<f64> = emb.rows().into_iter().map(|r| r.dot(q) / (r.dot(&r).sqrt() * qn)).collect();
    let mut idx: Vec<usize> = (0..emb.nrows()).collect();
    idx.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn zero_shot_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sort_mismatch, mut top1_miss, mut mean_diff) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let (r, d) = (rng.random_range(1..=60), rng.random_range(1..=8));
        let emb = random_rows(&mut rng, r, d);
        let q = random_rows(&mut rng, 1, d).row(0).to_owned();
        let k = rng.random_range(1..=r);
        let labels: Vec<f64> = (0..r).map(|_| rng.random_range(-5.0..5.0)).collect();
        let set = reference(emb.clone(), labels.clone());
        sort_mismatch += usize::from(neighbors(&set, q.view(), k).unwrap() != full_sort(&emb, &q, k));

        let queries = random_rows(&mut rng, 5, d);
        let truth: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
        let preds = predict_all(&set, queries.view(), "y", &ZeroShotConfig { k_fraction: 1.0 }).unwrap();
        let guess = mean_guess(&labels).unwrap().predict(5);
        mean_diff += usize::from(mae(&preds, &truth).unwrap() != mae(&guess, &truth).unwrap());

        // Continuous rows, so no duplicates compete with the exact match.
        let emb = Array2::from_shape_simple_fn((r.max(2), d.max(2)), || rng.random_range(-1.0..1.0));
        let j = rng.random_range(0..emb.nrows());
        let set = reference(emb.clone(), vec![0.0; emb.nrows()]);
        top1_miss += usize::from(neighbors(&set, emb.row(j), 1).unwrap() != vec![j]);
    }
    verdict(
        sort_mismatch + top1_miss + mean_diff == 0,
        format!(
            "1000 cases: {sort_mismatch} full-sort mismatches, {top1_miss} exact-match misses, \
             {mean_diff} k_fraction=1 vs mean-guess differences"
        ),
    )
}

// Synthetic-data experiments -------------------------------------------------

struct Experiment {
    data: SynthDataset,
    train: SynthDataset,
    test: SynthDataset,
}

impl Experiment {
    fn new() -> Self {
        let data = synthdata::generate(&SynthConfig::default()).unwrap();
        let (train, test) = data.split(0.25, 0).unwrap();
        Experiment { data, train, test }
    }

    fn pretrain(&self, config: &TrainConfig) -> Encoder<f64> {
        protocol::pretrain_split::<f64>(&self.train.dataset, &self.data.schema, config).unwrap().encoder
    }

    fn zero_shot(&self, encoder: &Encoder<f64>, target: &str, kind: TargetKind, p: &ZeroShotProtocol) -> (f64, f64) {
        let r = protocol::zero_shot(encoder, &self.train.dataset, &self.test.dataset, target, kind, p).unwrap();
        (r.mean, r.std)
    }

    fn mean_guess(&self, target: &str) -> f64 {
        protocol::mean_guess_mae(&self.train.dataset, &self.test.dataset, target).unwrap()
    }
}

fn threshold_ordering(x: &Experiment, h0: &Encoder<f64>, h05: &Encoder<f64>) -> Verdict {
    let p = ZeroShotProtocol::default();
    let (a, _) = x.zero_shot(h0, PHENOTYPE, TargetKind::Continuous, &p);
    let (b, _) = x.zero_shot(h05, PHENOTYPE, TargetKind::Continuous, &p);
    let guess = x.mean_guess(PHENOTYPE);
    let (ra, rb) = (1.0 - a / guess, 1.0 - b / guess);
    verdict(
        b < a && ra >= 0.2 && rb >= 0.2,
        format!(
            "phenotype MAE h=0 {a:.4}, h=0.05 {b:.4} (must be lower), mean-guess {guess:.4}; \
             reductions {:.1}% and {:.1}% (>= 20%)",
            100.0 * ra,
            100.0 * rb
        ),
    )
}

fn baseline_ordering(x: &Experiment, tgv: &Encoder<f64>) -> Verdict {
    let aug = x.pretrain(&TrainConfig { pairing_mode: PairingMode::Augmentation, ..TrainConfig::default() });
    let p = ZeroShotProtocol::default();
    let (a, _) = x.zero_shot(tgv, DISEASE, TargetKind::Binary, &p);
    let (b, _) = x.zero_shot(&aug, DISEASE, TargetKind::Binary, &p);
    verdict(
        a >= 0.85 && a - b >= 0.03,
        format!("disease AUC tabular {a:.4} (>= 0.85), augmentation {b:.4}, margin {:.4} (>= 0.03)", a - b),
    )
}

fn reference_robustness(x: &Experiment) -> Verdict {
    const FRACTIONS: [f64; 4] = [1.0, 0.5, 0.25, 0.05];
    const FULL: usize = 1000;
    let seeds = 3;
    let mut means = [0.0; 4];
    let mut stds = [0.0; 4];
    for seed in 0..seeds {
        let encoder = x.pretrain(&TrainConfig { seed, ..TrainConfig::default() });
        for (k, f) in FRACTIONS.iter().enumerate() {
            let size = (FULL as f64 * f).round() as usize;
            let p = ZeroShotProtocol { regression_size: size, seed, ..ZeroShotProtocol::default() };
            let (m, s) = x.zero_shot(&encoder, PHENOTYPE, TargetKind::Continuous, &p);
            means[k] += m / seeds as f64;
            stds[k] += s / seeds as f64;
        }
    }
    let monotone = means.windows(2).all(|w| w[0] < w[1]);
    let cells: Vec<String> = FRACTIONS
        .iter()
        .zip(means.iter().zip(&stds))
        .map(|(f, (m, s))| format!("{:.0}%: {m:.4} +- {s:.4}", 100.0 * f))
        .collect();
    verdict(monotone, format!("phenotype MAE over 3 seeds (std across 3 disjoint sets) {}", cells.join(", ")))
}

fn held_out_attribute(x: &Experiment, tgv: &Encoder<f64>) -> Verdict {
    let (m, _) = x.zero_shot(tgv, STATURE, TargetKind::Continuous, &ZeroShotProtocol::default());
    let guess = x.mean_guess(STATURE);
    let reduction = 1.0 - m / guess;
    verdict(
        reduction >= 0.1,
        format!("stature MAE {m:.4} vs mean-guess {guess:.4}, reduction {:.1}% (>= 10%)", 100.0 * reduction),
    )
}

// Determinism ----------------------------------------------------------------

fn tgv_cli(args: &[&str], cwd: &Path, threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tgv"))
        .args(args)
        .current_dir(cwd)
        .env("TGV_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn replay_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let ckpt = "pretrain/encoder.tgvw";
    let data = ["--data", "synth/train.csv", "--schema", "synth/schema.json"];
    let with_data = |head: &[&'static str], tail: &[&'static str]| -> Vec<&'static str> {
        head.iter().chain(data.iter()).chain(tail).copied().collect()
    };
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--out", "synth"]),
        ("pretrain", with_data(&["pretrain"], &["--out", "pretrain"])),
        ("embed", with_data(&["embed", "--checkpoint", ckpt], &["--csv", "--out", "embed"])),
        (
            "zeroshot",
            vec![
                "zeroshot",
                "--checkpoint",
                ckpt,
                "--reference",
                "synth/train.csv",
                "--data",
                "synth/test.csv",
                "--schema",
                "synth/schema.json",
                "--attribute",
                "phenotype",
                "--out",
                "zeroshot",
            ],
        ),
        (
            "probe",
            with_data(
                &["probe", "--checkpoint", ckpt],
                &["--test", "synth/test.csv", "--attribute", "disease", "--out", "probe"],
            ),
        ),
        (
            "eval",
            with_data(
                &["eval", "--checkpoint", ckpt],
                &["--test", "synth/test.csv", "--attribute", "stature", "--out", "eval"],
            ),
        ),
        (
            "ablate",
            with_data(
                &["ablate"],
                &["--test", "synth/test.csv", "--sweep", "h", "--attribute", "phenotype", "--out", "ablate"],
            ),
        ),
        ("pairs", with_data(&["pairs"], &["--out", "pairs"])),
    ];
    let mut compared = 0;
    let mut failures = Vec::new();
    for (name, args) in &runs {
        if let Err(e) = tgv_cli(args, cwd, "2") {
            return verdict(false, format!("{name} failed: {e}"));
        }
        let rerun = format!("{name}.replay");
        let manifest = format!("{name}/manifest.json");
        if let Err(e) = tgv_cli(&["replay", "--manifest", &manifest, "--out", &rerun], cwd, "1") {
            failures.push(format!("{name}: {e}"));
            continue;
        }
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(cwd.join(&manifest)).unwrap()).unwrap();
        for output in m["outputs"].as_array().unwrap() {
            let rel = output["path"].as_str().unwrap();
            let a = std::fs::read(cwd.join(name).join(rel)).unwrap();
            let b = std::fs::read(cwd.join(&rerun).join(rel)).unwrap();
            compared += 1;
            if a != b {
                failures.push(format!("{name}/{rel}"));
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{} subcommands replayed from manifests (2 threads then 1), {compared} artifacts compared byte-for-byte{}",
            runs.len(),
            if failures.is_empty() { String::new() } else { format!("; differing: {}", failures.join(", ")) }
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |id: usize, name: &'static str, run: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = run();
        println!(
            "{} C{id:<2} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((id, name, v));
    };

    record(1, "gradient correctness", &gradient_correctness);
    record(2, "pairing oracle", &pairing_oracle);
    record(3, "similarity properties", &similarity_properties);
    record(4, "loss identities", &loss_identities);
    record(5, "zero-shot identities", &zero_shot_identities);

    let x = Experiment::new();
    let tgv = x.pretrain(&TrainConfig::default());
    let h0 = x.pretrain(&TrainConfig { threshold: 0.0, ..TrainConfig::default() });
    record(6, "threshold ordering", &|| threshold_ordering(&x, &h0, &tgv));
    record(7, "tabular vs augmentation pairing", &|| baseline_ordering(&x, &tgv));
    record(8, "reference-set robustness", &|| reference_robustness(&x));
    record(9, "replay determinism", &replay_determinism);
    record(10, "held-out attribute", &|| held_out_attribute(&x, &tgv));

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("C{}", r.0)).collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(" "));
        std::process::exit(1);
    }
}
