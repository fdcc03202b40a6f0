//! Fixtures shared by the benchmarks.

use featleak_core::nn::{Activation, LayerSpec, ModelSpec, Network};
use featleak_core::rng::rng_from_seed;
use featleak_core::{Input, LabeledBatch, Record};
use rand::Rng;

/// The dense model used by the bundled property scenarios.
pub fn dense_net() -> Network {
    Network::new(&ModelSpec {
        layers: vec![
            LayerSpec::Dense { input: 20, output: 16, act: Activation::Relu },
            LayerSpec::Dense { input: 16, output: 2, act: Activation::Identity },
        ],
        seed: 0,
    })
    .expect("valid model")
}

/// The embedding-bag model used by the membership scenario.
pub fn bag_net(vocab: usize) -> Network {
    Network::new(&ModelSpec {
        layers: vec![
            LayerSpec::EmbedBag { vocab, dim: 16 },
            LayerSpec::Dense { input: 16, output: 2, act: Activation::Identity },
        ],
        seed: 0,
    })
    .expect("valid model")
}

pub fn dense_batch(n: usize, seed: u64) -> LabeledBatch {
    let mut rng = rng_from_seed(seed);
    let recs = (0..n)
        .map(|_| Record {
            input: Input::Dense((0..20).map(|_| rng.random_range(-2.0..2.0)).collect()),
            label: rng.random_range(0..2),
            property: false,
        })
        .collect();
    LabeledBatch::new(recs, 0).expect("non-empty")
}

pub fn token_batch(n: usize, vocab: u32, seed: u64) -> LabeledBatch {
    let mut rng = rng_from_seed(seed);
    let recs = (0..n)
        .map(|_| {
            let k = rng.random_range(4..13);
            Record {
                input: Input::tokens((0..k).map(|_| rng.random_range(0..vocab)).collect()),
                label: rng.random_range(0..2),
                property: false,
            }
        })
        .collect();
    LabeledBatch::new(recs, 0).expect("non-empty")
}
