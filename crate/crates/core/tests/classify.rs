use std::collections::BTreeMap;

use lodpatch::classify::{
    balance, evaluate_kfold, patch_labels, precision_boost, spectral_layout, train_forest, BalanceStrategy, Dataset,
    FeatureSet, ForestParams,
};
use lodpatch::midoc::OrderOptions;
use lodpatch::store::Store;
use lodpatch::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(per_class: usize, seed: u64) -> (Store, BTreeMap<u64, String>) {
    let (r, s, g) = synth::class_corpus(per_class, seed);
    let (store, _) = Store::ingest(r, g, s);
    store.order_all(OrderOptions { levels: 6, ..Default::default() }, 2).unwrap();
    let labels = patch_labels(&store)
        .unwrap()
        .into_iter()
        .map(|(id, l)| (id, synth::Shape::from_class_value(l.class).unwrap().name().to_string()))
        .collect();
    (store, labels)
}

fn precision_of(preds: &[lodpatch::classify::Prediction], class: usize, labels: &BTreeMap<u64, usize>) -> (f64, usize) {
    let hits: Vec<_> = preds.iter().filter(|p| p.class == class).collect();
    let good = hits.iter().filter(|p| labels[&p.patch_id] == class).count();
    (good as f64 / hits.len().max(1) as f64, hits.len())
}

/// A weak "plane" class: almost half of the line patches carry the plane
/// label. Confident plane predictions are much cleaner than all of them.
#[test]
fn raising_confidence_cleans_a_weak_class() {
    let (store, mut labels) = corpus(60, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for class in labels.values_mut() {
        if class == "line" && rng.gen_bool(0.45) {
            *class = "plane".into();
        }
    }
    let set = FeatureSet::default();
    let ds = Dataset::from_store(&store, &labels, &set).unwrap();
    let plane = ds.class_names.iter().position(|c| c == "plane").unwrap();
    let train: Vec<usize> = (0..ds.len()).filter(|i| i % 2 == 0).collect();
    let model = train_forest(&ds.subset(&train), &ForestParams { seed: 3, ..Default::default() }).unwrap();
    let test_ids: Vec<u64> = (0..ds.len()).filter(|i| i % 2 == 1).map(|i| ds.ids[i]).collect();
    let truth: BTreeMap<u64, usize> = ds.ids.iter().copied().zip(ds.labels.iter().copied()).collect();
    let preds = model.predict_patches(&store, &set, &test_ids).unwrap();

    let (all, n_all) = precision_of(&preds, plane, &truth);
    let (kept, n_kept) = precision_of(&precision_boost(&preds, 0.7), plane, &truth);
    assert!(n_kept > 0 && n_kept < n_all);
    assert!(kept > all, "precision {all:.3} on {n_all} -> {kept:.3} on {n_kept}");
    let mut previous = usize::MAX;
    for t in (0..=20).map(|t| f64::from(t) / 20.0) {
        let n = precision_boost(&preds, t).len();
        assert!(n <= previous);
        previous = n;
    }
}

#[test]
fn balancing_invariants() {
    let (store, labels) = corpus(30, 5);
    let ds = Dataset::from_store(&store, &labels, &FeatureSet::default()).unwrap();
    let skewed: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] != 0 || i % 6 == 0).collect();
    let ds = ds.subset(&skewed);
    let min = *ds.supports().iter().min().unwrap();
    let under = balance(&ds, BalanceStrategy::Undersample { ratio: 1.5, seed: 4 }).unwrap();
    for (c, &s) in under.supports().iter().enumerate() {
        assert!(s <= ((1.5 * min as f64).floor() as usize).max(min), "class {c} keeps {s}");
        assert!(s >= min.min(ds.supports()[c]));
    }
    assert!(under.ids.iter().all(|id| ds.ids.contains(id)));
    let weighted = balance(&ds, BalanceStrategy::Weights).unwrap();
    for c in 0..ds.n_classes() {
        let mass: f64 = (0..ds.len()).filter(|&i| weighted.labels[i] == c).map(|i| weighted.weights[i]).sum();
        assert!((mass - ds.len() as f64 / ds.n_classes() as f64).abs() < 1e-9);
    }
}

#[test]
fn evaluation_layout_and_determinism() {
    let (store, labels) = corpus(20, 8);
    let ds = Dataset::from_store(&store, &labels, &FeatureSet::default()).unwrap();
    let params = ForestParams { n_trees: 30, seed: 12, ..Default::default() };
    let a = evaluate_kfold(&ds, 3, &params).unwrap();
    let b = evaluate_kfold(&ds, 3, &params).unwrap();
    assert_eq!(a, b);
    for c in 0..ds.n_classes() {
        assert_eq!(a.confusion.support(c) as usize, ds.supports()[c]);
    }
    let layout = spectral_layout(&a.confusion).unwrap();
    assert_eq!(layout.coords.len(), 3);
    assert!(layout.coords.iter().flatten().all(|v| v.is_finite()));
}
