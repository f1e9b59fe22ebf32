use std::collections::BTreeSet;

use proptest::prelude::*;
use unsir_core::data::{batches, partition, sample_retain_subset, LabeledDataset};
use unsir_core::eval::{accuracy, layer_weight_distance};
use unsir_core::models::{build_model, ModelSpec};
use unsir_core::{SplitMix64, Tape, Tensor};

fn dataset(labels: Vec<usize>, num_classes: usize, seed: u64) -> LabeledDataset {
    let mut rng = SplitMix64::new(seed);
    let features = (0..labels.len() * 4).map(|_| rng.normal() as f32).collect();
    LabeledDataset::new("prop", vec![4], num_classes, features, labels).unwrap()
}

fn labels_strategy() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (2usize..7).prop_flat_map(|k| (Just(k), prop::collection::vec(0..k, 1..60)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_output_shape(m in 1usize..6, k in 1usize..6, n in 1usize..6) {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[m, k])).unwrap();
        let b = tape.leaf(Tensor::zeros(&[k, n])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        prop_assert_eq!(tape.value(c).shape(), &[m, n][..]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch(m in 1usize..6, k in 1usize..6, j in 1usize..6, n in 1usize..6) {
        prop_assume!(k != j);
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[m, k])).unwrap();
        let b = tape.leaf(Tensor::zeros(&[j, n])).unwrap();
        prop_assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn conv2d_output_shape(
        n in 1usize..3, c in 1usize..3, o in 1usize..4,
        h in 3usize..9, w in 3usize..9, kh in 1usize..4, stride in 1usize..3, pad in 0usize..2,
    ) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[n, c, h, w])).unwrap();
        let k = tape.leaf(Tensor::zeros(&[o, c, kh, kh])).unwrap();
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let tiles = (ph - kh) % stride == 0 && (pw - kh) % stride == 0;
        match tape.conv2d(x, k, stride, pad) {
            Ok(y) => {
                prop_assert!(tiles);
                let shape = [n, o, (ph - kh) / stride + 1, (pw - kh) / stride + 1];
                prop_assert_eq!(tape.value(y).shape(), &shape[..]);
            }
            Err(_) => prop_assert!(!tiles),
        }
    }

    #[test]
    fn reshape_preserves_element_count(a in 1usize..8, b in 1usize..8) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[a, b])).unwrap();
        let y = tape.reshape(x, vec![b * a]).unwrap();
        prop_assert_eq!(tape.value(y).len(), a * b);
        prop_assert!(tape.reshape(x, vec![a * b + 1]).is_err());
    }

    #[test]
    fn cross_entropy_is_non_negative(
        rows in 1usize..6, cols in 2usize..6, seed in any::<u64>(), scale in 0.1f32..50.0,
    ) {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f32> = (0..rows * cols).map(|_| rng.normal() as f32 * scale).collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.below(cols)).collect();
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::new(vec![rows, cols], data).unwrap()).unwrap();
        let ce = tape.softmax_cross_entropy(z, &labels).unwrap();
        let v = tape.value(ce).data()[0];
        prop_assert!(v.is_finite());
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn partition_is_complete_and_disjoint((k, labels) in labels_strategy(), pick in any::<u64>()) {
        let ds = dataset(labels.clone(), k, pick);
        let mut rng = SplitMix64::new(pick);
        let forget: Vec<usize> = (0..1 + rng.below(k - 1)).map(|_| rng.below(k)).collect();
        let set: BTreeSet<usize> = forget.iter().copied().collect();
        let p = partition(&ds, &forget).unwrap();
        prop_assert_eq!(p.forget_set().len() + p.retain_set().len(), ds.len());
        prop_assert!(p.forget_set().labels().iter().all(|l| set.contains(l)));
        prop_assert!(p.retain_set().labels().iter().all(|l| !set.contains(l)));
        let expected_forget = labels.iter().filter(|l| set.contains(l)).count();
        prop_assert_eq!(p.forget_set().len(), expected_forget);
    }

    #[test]
    fn retain_subset_never_contains_forget_classes(
        (k, labels) in labels_strategy(), per_class in 1usize..10, seed in any::<u64>(),
    ) {
        let ds = dataset(labels, k, seed);
        let p = partition(&ds, &[0]).unwrap();
        let sub = sample_retain_subset(&p, per_class, seed).unwrap();
        let counts = sub.subset.class_counts();
        prop_assert_eq!(counts[0], 0);
        let available = p.retain_set().class_counts();
        for c in 1..k {
            prop_assert_eq!(counts[c], available[c].min(per_class));
        }
    }

    #[test]
    fn batches_cover_every_sample_once(n in 1usize..80, bs in 1usize..17, seed in any::<u64>()) {
        let ds = dataset(vec![0; n], 1, seed);
        let mut seen: Vec<usize> = batches(&ds, bs, Some(seed))
            .unwrap()
            .flat_map(|b| b.indices)
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn accuracy_composes_over_disjoint_parts((k, labels) in labels_strategy(), seed in any::<u64>()) {
        let ds = dataset(labels, k, seed);
        let model = build_model(&ModelSpec::mlp(vec![4], vec![5], k, seed)).unwrap();
        let p = partition(&ds, &[0]).unwrap();
        let whole = accuracy(&model, &ds).unwrap() * ds.len() as f64;
        let parts = [p.forget_set(), p.retain_set()]
            .iter()
            .filter(|d| !d.is_empty())
            .map(|d| accuracy(&model, d).unwrap() * d.len() as f64)
            .sum::<f64>();
        prop_assert!((whole - parts).abs() < 1e-9 * ds.len() as f64);
    }

    #[test]
    fn weight_distance_is_symmetric_and_zero_on_self(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = build_model(&ModelSpec::mlp(vec![4], vec![6], 3, s1)).unwrap();
        let b = build_model(&ModelSpec::mlp(vec![4], vec![6], 3, s2)).unwrap();
        let ab = layer_weight_distance(&a, &b).unwrap();
        let ba = layer_weight_distance(&b, &a).unwrap();
        prop_assert_eq!(ab.total, ba.total);
        prop_assert_eq!(layer_weight_distance(&a, &a).unwrap().total, 0.0);
        let sq: f64 = ab.per_layer.iter().map(|(_, d)| d * d).sum();
        prop_assert!((ab.total * ab.total - sq).abs() <= 1e-9 * sq.max(1.0));
    }
}
