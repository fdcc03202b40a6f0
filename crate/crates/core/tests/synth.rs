//! Generator and schedule properties checked from the outside.

use featleak_core::synth::{
    encode_records, generate, property_quota, read_datasets, restrict_vocab, schedule_batches, write_datasets,
    BatchSchedule, SynthMode, SynthSpec,
};
use featleak_core::{Input, Record};
use proptest::prelude::*;

fn dense(effect: f64, sizes: Vec<usize>) -> SynthSpec {
    SynthSpec {
        mode: SynthMode::Dense { dim: 10, class_dims: 3, property_dims: 3, class_sep: 1.5 },
        num_classes: 2,
        property_effect: effect,
        target_corr: 0.0,
        sizes,
        base_rates: vec![0.5],
        seed: 7,
    }
}

fn sparse(sizes: Vec<usize>) -> SynthSpec {
    SynthSpec {
        mode: SynthMode::Sparse {
            vocab: 500,
            min_tokens: 3,
            max_tokens: 8,
            zipf_exponent: 1.0,
            class_bias: 2.0,
            property_tokens: 10,
        },
        num_classes: 2,
        property_effect: 1.0,
        target_corr: 0.0,
        sizes,
        base_rates: vec![0.3],
        seed: 3,
    }
}

fn block_moments(records: &[Record], property: bool) -> (f64, f64) {
    let xs: Vec<f64> = records
        .iter()
        .filter(|r| r.property == property)
        .flat_map(|r| match &r.input {
            Input::Dense(x) => x[3..6].to_vec(),
            _ => unreachable!(),
        })
        .collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

#[test]
fn zero_effect_leaves_property_block_unchanged() {
    let data = generate(&dense(0.0, vec![4000])).unwrap();
    let (mp, vp) = block_moments(&data[0], true);
    let (mn, vn) = block_moments(&data[0], false);
    assert!((mp - mn).abs() < 0.1, "means {mp} {mn}");
    assert!((vp - vn).abs() < 0.1, "variances {vp} {vn}");

    let shifted = generate(&dense(3.0, vec![4000])).unwrap();
    let (mp, _) = block_moments(&shifted[0], true);
    let (mn, _) = block_moments(&shifted[0], false);
    assert!((mp - mn - 3.0).abs() < 0.1, "shift {}", mp - mn);
}

#[test]
fn datasets_survive_disk_and_regenerate_identically() {
    let spec = sparse(vec![120, 80]);
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(encode_records(&a[0]), encode_records(&b[0]));
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_datasets(dir.path(), &spec, &a).unwrap();
    let (read_manifest, read) = read_datasets(dir.path()).unwrap();
    assert_eq!(read, a);
    assert_eq!(read_manifest, manifest);
}

#[test]
fn retained_examples_shrink_with_the_vocabulary() {
    let data = generate(&sparse(vec![2000])).unwrap();
    let total = data[0].len();
    let mut last = total + 1;
    for top_n in [500, 200, 100, 50, 20, 10, 5, 2, 1] {
        let (kept, removed) = restrict_vocab(&data, top_n).unwrap();
        assert_eq!(kept[0].len() + removed, total);
        assert!(kept[0].len() <= last, "top_n {top_n}");
        last = kept[0].len();
    }
    assert!(last < total);
}

fn pool(n_prop: usize, n_non: usize) -> Vec<Record> {
    (0..n_prop + n_non)
        .map(|i| Record { input: Input::Dense(vec![i as f64]), label: i % 2, property: i < n_prop })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Property-batch count and per-batch composition follow the schedule exactly.
    #[test]
    fn schedules_are_exact(
        m in 1u32..6,
        frac_tenths in 1u32..=10,
        batch in 1usize..24,
        rounds in 1u64..120,
        window in proptest::option::of((1u64..60, 1u64..60)),
        seed in 0u64..1000,
    ) {
        let window = window.map(|(a, len)| (a, a + len));
        let s = BatchSchedule { m, fraction: frac_tenths as f64 / 10.0, active_window: window };
        let batches = schedule_batches(&pool(40, 60), &s, batch, rounds, seed).unwrap();
        prop_assert_eq!(batches.len() as u64, rounds);
        let eligible = (1..=rounds).filter(|t| window.is_none_or(|(a, b)| (a..b).contains(t))).count();
        let quota = property_quota(s.fraction, batch);
        let mut prop_batches = 0;
        for (i, b) in batches.iter().enumerate() {
            let t = i as u64 + 1;
            prop_assert_eq!(b.len(), batch);
            prop_assert_eq!(b.batch_id, t);
            if b.has_property() {
                prop_batches += 1;
                prop_assert_eq!(b.property_count(), quota);
                prop_assert!(window.is_none_or(|(a, e)| (a..e).contains(&t)));
            }
        }
        prop_assert_eq!(prop_batches, eligible / m as usize);
    }
}
