use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgv::encoder::{Encoder, EncoderConfig};
use tgv::loss::{tgv_loss, LossConfig};
use tgv::pairing::{assign_pairs, PairAssignment};
use tgv::tabular::{SimilarityKind, SimilarityMatrix};

const STEP: f64 = 1e-5;

struct Instance {
    encoder: Encoder<f64>,
    x: Array2<f64>,
    pairs: PairAssignment<f64>,
    loss: LossConfig,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let f = rng.random_range(1..=16);
    let d = rng.random_range(1..=16);
    let p = rng.random_range(1..=16);
    let hidden = rng.random_range(1..=16);
    let config = EncoderConfig {
        input_dim: f,
        encoder_hidden_dims: vec![hidden],
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
    let sims = Array2::from_shape_simple_fn((n, n), || rng.random_range(-1.0..1.0));
    let sims = SimilarityMatrix::new(&sims + &sims.t(), SimilarityKind::Combined).unwrap();
    let pairs = assign_pairs(&sims, rng.random_range(0.0..0.5)).unwrap();
    let loss = LossConfig { tau: rng.random_range(0.1..1.0), include_self_in_denominator: rng.random_bool(0.3) };
    Instance { encoder, x, pairs, loss }
}

fn loss_at(inst: &Instance, params: &[f64]) -> f64 {
    let mut e = inst.encoder.clone();
    e.set_params_flat(params).unwrap();
    let z = e.forward(inst.x.view()).unwrap().projection;
    tgv_loss(z.view(), &inst.pairs, &inst.loss).unwrap().value
}

/// Largest entrywise relative error between analytic and central-difference
/// parameter gradients.
fn max_relative_error(inst: &Instance) -> f64 {
    let out = inst.encoder.forward(inst.x.view()).unwrap();
    let l = tgv_loss(out.projection.view(), &inst.pairs, &inst.loss).unwrap();
    let analytic = inst.encoder.backward(&out.cache, l.grad_z.view()).unwrap().flat();
    let base = inst.encoder.params_flat();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + STEP;
        let up = loss_at(inst, &p);
        p[k] = base[k] - STEP;
        let down = loss_at(inst, &p);
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn loss_through_encoder_matches_finite_differences(seed in any::<u64>()) {
        let inst = instance(seed);
        let err = max_relative_error(&inst);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn loss_gradient_in_z_matches_finite_differences(seed in any::<u64>()) {
        let inst = instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (n, p) = (inst.pairs.len(), rng.random_range(1..=16));
        let z = Array2::from_shape_simple_fn((n, p), || rng.random_range(-1.0..1.0));
        let grad = tgv_loss(z.view(), &inst.pairs, &inst.loss).unwrap().grad_z;
        for ((i, j), &g) in grad.indexed_iter() {
            let mut zp = z.clone();
            zp[[i, j]] += STEP;
            let up = tgv_loss(zp.view(), &inst.pairs, &inst.loss).unwrap().value;
            zp[[i, j]] -= 2.0 * STEP;
            let down = tgv_loss(zp.view(), &inst.pairs, &inst.loss).unwrap().value;
            let numeric = (up - down) / (2.0 * STEP);
            prop_assert!((g - numeric).abs() <= 1e-6 * g.abs().max(numeric.abs()).max(1.0));
        }
    }
}

#[test]
fn embedding_backward_matches_finite_differences() {
    let inst = instance(11);
    let out = inst.encoder.forward(inst.x.view()).unwrap();
    // Loss = sum of v weighted by a fixed matrix.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Array2::from_shape_simple_fn(out.embedding.dim(), || rng.random_range(-1.0..1.0));
    let grads = inst.encoder.backward_embedding(&out.cache, w.view()).unwrap();
    let analytic = grads.flat();
    let base = inst.encoder.params_flat();
    let value = |params: &[f64]| {
        let mut e = inst.encoder.clone();
        e.set_params_flat(params).unwrap();
        (e.embed(inst.x.view()).unwrap() * &w).sum()
    };
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] += STEP;
        let up = value(&p);
        p[k] -= 2.0 * STEP;
        let numeric = (up - value(&p)) / (2.0 * STEP);
        assert!((analytic[k] - numeric).abs() < 1e-6, "param {k}: {} vs {numeric}", analytic[k]);
    }
}
