//! Finite-difference and structural checks of the hand-written backward pass.

use featleak_core::nn::{sgd_step, Activation, DropoutMode, LayerSpec, ModelSpec, Network, PropertyHead};
use featleak_core::rng::rng_from_seed;
use featleak_core::{Input, LabeledBatch, ParamVector, Record};
use proptest::prelude::*;
use rand::Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn dense(input: usize, output: usize, act: Activation) -> LayerSpec {
    LayerSpec::Dense { input, output, act }
}

fn random_dense_batch(seed: u64, n: usize, width: usize, classes: usize) -> LabeledBatch {
    let mut rng = rng_from_seed(seed);
    let recs = (0..n)
        .map(|_| Record {
            input: Input::Dense((0..width).map(|_| rng.random_range(-2.0..2.0)).collect()),
            label: rng.random_range(0..classes),
            property: rng.random_bool(0.5),
        })
        .collect();
    LabeledBatch::new(recs, 0).unwrap()
}

fn random_token_batch(seed: u64, n: usize, vocab: u32) -> LabeledBatch {
    let mut rng = rng_from_seed(seed);
    let recs = (0..n)
        .map(|_| {
            let k = rng.random_range(1..5);
            Record {
                input: Input::tokens((0..k).map(|_| rng.random_range(0..vocab)).collect()),
                label: rng.random_range(0..2),
                property: rng.random_bool(0.5),
            }
        })
        .collect();
    LabeledBatch::new(recs, 0).unwrap()
}

/// Central-difference gradient of the batch loss, one coordinate at a time.
fn numeric_grad(loss: impl Fn(&ParamVector) -> f64, params: &ParamVector) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += STEP;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= STEP;
            (loss(&plus) - loss(&minus)) / (2.0 * STEP)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        assert!(rel <= REL_TOL, "{what}: coordinate {i} analytic {a} numeric {n} rel {rel}");
    }
}

fn check_model(spec: ModelSpec, batch: &LabeledBatch, init_seed: u64, mode: DropoutMode) {
    let net = Network::new(&spec).unwrap();
    let params = net.init_params(init_seed).unwrap();
    let (_, grads) = net.forward_backward(&params, batch, mode).unwrap();
    let numeric = numeric_grad(|p| net.forward_backward(p, batch, mode).unwrap().0, &params);
    assert_close(grads.as_slice(), &numeric, &format!("{:?}", spec.layers));
}

#[test]
fn two_layer_relu_seed_7() {
    let spec = ModelSpec {
        layers: vec![dense(3, 4, Activation::Relu), dense(4, 2, Activation::Identity)],
        seed: 7,
    };
    check_model(spec, &random_dense_batch(7, 4, 3, 2), 7, DropoutMode::Off);
}

#[test]
fn every_layer_type_over_five_seeds() {
    for seed in 0..5 {
        let dense_stack = ModelSpec {
            layers: vec![
                dense(5, 6, Activation::Relu),
                LayerSpec::Dropout { p: 0.3 },
                dense(6, 4, Activation::Identity),
                dense(4, 3, Activation::Identity),
            ],
            seed,
        };
        check_model(dense_stack, &random_dense_batch(100 + seed, 6, 5, 3), seed, DropoutMode::Train { seed: 9 + seed });

        let bag = ModelSpec {
            layers: vec![
                LayerSpec::EmbedBag { vocab: 12, dim: 4 },
                dense(4, 5, Activation::Relu),
                LayerSpec::Dropout { p: 0.2 },
                dense(5, 2, Activation::Identity),
            ],
            seed,
        };
        check_model(bag, &random_token_batch(200 + seed, 5, 12), seed, DropoutMode::Train { seed: 31 + seed });
    }
}

#[test]
fn multitask_gradient_matches_finite_differences() {
    let spec = ModelSpec {
        layers: vec![dense(4, 5, Activation::Relu), dense(5, 2, Activation::Identity)],
        seed: 0,
    };
    let net = Network::new(&spec).unwrap();
    let batch = random_dense_batch(77, 6, 4, 2);
    for seed in 0..5 {
        let params = net.init_params(seed).unwrap();
        let head = PropertyHead::init(5, seed + 50);
        let alpha = 0.7;
        let mt = net.multitask_forward_backward(&params, &head, &batch, alpha, DropoutMode::Off).unwrap();
        let numeric = numeric_grad(
            |p| {
                let r = net.multitask_forward_backward(p, &head, &batch, alpha, DropoutMode::Off).unwrap();
                alpha * r.main_loss + (1.0 - alpha) * r.property_loss
            },
            &params,
        );
        assert_close(mt.grads.as_slice(), &numeric, "multi-task shared gradient");
    }
}

#[test]
fn dropout_masks_are_deterministic() {
    let spec = ModelSpec {
        layers: vec![dense(5, 8, Activation::Relu), LayerSpec::Dropout { p: 0.5 }, dense(8, 2, Activation::Identity)],
        seed: 0,
    };
    let net = Network::new(&spec).unwrap();
    let params = net.init_params(1).unwrap();
    let batch = random_dense_batch(3, 8, 5, 2);
    let a = net.forward_backward(&params, &batch, DropoutMode::Train { seed: 12 }).unwrap();
    let b = net.forward_backward(&params, &batch, DropoutMode::Train { seed: 12 }).unwrap();
    let c = net.forward_backward(&params, &batch, DropoutMode::Train { seed: 13 }).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_ne!(a.1, c.1);
}

#[test]
fn fifty_steps_halve_the_loss_on_separable_data() {
    let spec = ModelSpec {
        layers: vec![dense(2, 8, Activation::Relu), dense(8, 2, Activation::Identity)],
        seed: 0,
    };
    let net = Network::new(&spec).unwrap();
    let mut rng = rng_from_seed(5);
    let recs = (0..32)
        .map(|i| {
            let label = i % 2;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            Record {
                input: Input::Dense(vec![sign * 2.0 + rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)]),
                label,
                property: false,
            }
        })
        .collect();
    let batch = LabeledBatch::new(recs, 0).unwrap();
    let mut params = net.init_params(2).unwrap();
    let (initial, _) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
    for _ in 0..50 {
        let (_, g) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
        params = sgd_step(&params, &g, 0.1).unwrap();
    }
    let (last, _) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
    assert!(last <= 0.5 * initial, "loss {initial} -> {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// A token's embedding row is all-zero exactly when the token is absent.
    #[test]
    fn embedding_sparsity_is_exact(seed in 0u64..10_000, n in 1usize..8) {
        let spec = ModelSpec {
            layers: vec![LayerSpec::EmbedBag { vocab: 40, dim: 6 }, dense(6, 2, Activation::Identity)],
            seed: 0,
        };
        let net = Network::new(&spec).unwrap();
        let params = net.init_params(seed).unwrap();
        let batch = random_token_batch(seed ^ 0xABCD, n, 40);
        let present = batch.token_set();
        let (_, g) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
        let emb = g.segment("0.embedding").unwrap();
        for tok in 0..40u32 {
            let row = &emb[tok as usize * 6..(tok as usize + 1) * 6];
            prop_assert_eq!(row.iter().any(|&v| v != 0.0), present.contains(&tok));
        }
    }

    /// Batch gradient equals the mean of per-example gradients.
    #[test]
    fn batch_gradient_is_mean_of_examples(seed in 0u64..10_000, n in 1usize..10) {
        let spec = ModelSpec {
            layers: vec![dense(4, 6, Activation::Relu), dense(6, 3, Activation::Identity)],
            seed: 0,
        };
        let net = Network::new(&spec).unwrap();
        let params = net.init_params(seed).unwrap();
        let batch = random_dense_batch(seed + 1, n, 4, 3);
        let (_, g) = net.forward_backward(&params, &batch, DropoutMode::Off).unwrap();
        let each = net.per_example_grads(&params, &batch).unwrap();
        let mut mean = g.zeros_like();
        for e in &each {
            mean.axpy(1.0 / n as f64, e).unwrap();
        }
        prop_assert!(mean.max_abs_diff(&g).unwrap() < 1e-10);
    }
}
