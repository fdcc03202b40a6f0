use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use featleak_bench::{bag_net, dense_batch, dense_net, token_batch};
use featleak_core::attack::{attack_features, pool_features};
use featleak_core::harness::auc;
use featleak_core::nn::DropoutMode;
use featleak_core::rng::rng_from_seed;
use rand::Rng;

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_backward");
    let net = dense_net();
    let params = net.init_params(1).unwrap();
    for n in [16, 64] {
        let batch = dense_batch(n, 2);
        g.bench_with_input(BenchmarkId::new("dense", n), &batch, |b, batch| {
            b.iter(|| net.forward_backward(&params, black_box(batch), DropoutMode::Off).unwrap())
        });
    }
    let bag = bag_net(1000);
    let params = bag.init_params(1).unwrap();
    let batch = token_batch(8, 1000, 3);
    g.bench_function("embed_bag/8", |b| b.iter(|| bag.forward_backward(&params, black_box(&batch), DropoutMode::Off).unwrap()));
    g.finish();
}

fn pooling(c: &mut Criterion) {
    let bag = bag_net(1000);
    let grads = bag.forward_backward(&bag.init_params(1).unwrap(), &token_batch(8, 1000, 3), DropoutMode::Off).unwrap().1;
    c.bench_function("pool_features/16k", |b| b.iter(|| pool_features(black_box(&grads), 10).unwrap()));
    c.bench_function("attack_features/16k", |b| b.iter(|| attack_features(black_box(&grads), 10).unwrap()));
}

fn auc_bench(c: &mut Criterion) {
    let mut rng = rng_from_seed(4);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|i| i % 3 == 0).collect();
    c.bench_function("auc/10k", |b| b.iter(|| auc(black_box(&scores), &labels).unwrap()));
}

criterion_group!(benches, forward_backward, pooling, auc_bench);
criterion_main!(benches);
