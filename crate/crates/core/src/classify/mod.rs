//! Patch classification: features, a random forest, fold evaluation, class
//! affinity layout and confidence or proximity based result filtering.

mod boost;
mod eval;
mod features;
mod forest;
mod layout;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use boost::{precision_boost, recall_boost, Prediction};
pub use eval::{evaluate_kfold, point_estimate, stratified_folds, ClassScore, ConfusionMatrix, EvalReport};
pub use features::{extract_features, patch_labels, Feature, FeatureSet, FeatureVector, PatchLabel};
pub use forest::{train_forest, ForestModel, ForestParams, Node, Tree};
pub use layout::{spectral_layout, Layout};

use crate::error::{Error, Result};
use crate::store::Store;

/// Labeled observations, one per patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Index into `class_names`.
    pub labels: Vec<usize>,
    /// Per-observation statistical weight.
    pub weights: Vec<f64>,
    pub ids: Vec<u64>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        class_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        ids: Vec<u64>,
    ) -> Result<Self> {
        let n = rows.len();
        let ds = Self { feature_names, class_names, rows, labels, weights: vec![1.0; n], ids };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if self.labels.len() != n || self.weights.len() != n || self.ids.len() != n {
            return Err(Error::InvalidParameter("dataset columns have different lengths".into()));
        }
        if let Some(r) = self.rows.iter().find(|r| r.len() != self.feature_names.len()) {
            return Err(Error::InvalidParameter(format!(
                "row has {} features, expected {}",
                r.len(),
                self.feature_names.len()
            )));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite feature value".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::InvalidParameter(format!("label {l} has no class name")));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn supports(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_classes()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Observations at `indices`, in that order. Class names are kept.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Builds a dataset from ordered patches and a patch id to class table.
    /// Class names are sorted; patches without a label are skipped.
    pub fn from_store(store: &Store, labels: &BTreeMap<u64, String>, set: &FeatureSet) -> Result<Self> {
        let class_names: Vec<String> = {
            let mut v: Vec<String> = labels.values().cloned().collect();
            v.sort();
            v.dedup();
            v
        };
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut ids = Vec::new();
        for (&id, class) in labels {
            let meta = store.meta(id)?;
            rows.push(extract_features(&meta, store.schema(), set)?.values);
            ys.push(class_names.binary_search(class).expect("collected above"));
            ids.push(id);
        }
        Self::new(set.names(), class_names, rows, ys, ids)
    }

    /// Merges classes through `map`; classes absent from the map keep their
    /// name. The new class list is sorted.
    pub fn relabel(&self, map: &LabelMap) -> Self {
        let mapped: Vec<String> = self.class_names.iter().map(|c| map.apply(c).to_owned()).collect();
        let mut names = mapped.clone();
        names.sort();
        names.dedup();
        let labels = self.labels.iter().map(|&l| names.binary_search(&mapped[l]).expect("present")).collect();
        Self { class_names: names, labels, ..self.clone() }
    }
}

/// Class to coarser class table, used to evaluate at a chosen level of the
/// class hierarchy.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap(pub BTreeMap<String, String>);

impl LabelMap {
    pub fn apply<'a>(&'a self, class: &'a str) -> &'a str {
        self.0.get(class).map_or(class, String::as_str)
    }

    /// Parses `from,to` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse { line: n + 1, msg: "expected `from,to`".into() })?;
            map.insert(from.trim().to_owned(), to.trim().to_owned());
        }
        Ok(Self(map))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum BalanceStrategy {
    /// Keep at most `ratio` times the smallest support per class.
    Undersample { ratio: f64, seed: u64 },
    /// Weight each observation by `total / (n_classes * support)`.
    Weights,
}

pub fn balance(ds: &Dataset, strategy: BalanceStrategy) -> Result<Dataset> {
    let supports = ds.supports();
    if let Some(c) = supports.iter().position(|&s| s == 0) {
        return Err(Error::ClassTooSmall { class: ds.class_names[c].clone(), support: 0, needed: 1 });
    }
    match strategy {
        BalanceStrategy::Weights => {
            let total = ds.len() as f64;
            let k = ds.n_classes() as f64;
            let mut out = ds.clone();
            out.weights = ds.labels.iter().map(|&l| total / (k * supports[l] as f64)).collect();
            Ok(out)
        }
        BalanceStrategy::Undersample { ratio, seed } => {
            if !(ratio.is_finite() && ratio >= 1.0) {
                return Err(Error::InvalidParameter(format!("undersampling ratio must be at least 1, got {ratio}")));
            }
            let smallest = *supports.iter().min().expect("non-empty");
            let cap = ((ratio * smallest as f64).floor() as usize).max(smallest);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = Vec::with_capacity(ds.len());
            for class in 0..ds.n_classes() {
                let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
                if members.len() > cap {
                    members.shuffle(&mut rng);
                    members.truncate(cap);
                }
                keep.extend(members);
            }
            keep.sort_unstable();
            Ok(ds.subset(&keep))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(a: usize, b: usize) -> Dataset {
        let n = a + b;
        Dataset::new(
            vec!["f".into()],
            vec!["a".into(), "b".into()],
            (0..n).map(|i| vec![i as f64]).collect(),
            (0..n).map(|i| usize::from(i >= a)).collect(),
            (0..n as u64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn inverse_frequency_weights() {
        let ds = balance(&two_class(900, 100), BalanceStrategy::Weights).unwrap();
        assert!((ds.weights[0] - 1000.0 / 1800.0).abs() < 1e-12);
        assert_eq!(ds.weights[950], 5.0);
        assert_eq!(ds.rows, two_class(900, 100).rows);
    }

    #[test]
    fn undersample_caps_majority() {
        let src = two_class(900, 100);
        let ds = balance(&src, BalanceStrategy::Undersample { ratio: 2.0, seed: 7 }).unwrap();
        assert_eq!(ds.supports(), vec![200, 100]);
        let minority: Vec<u64> = ds.ids.iter().copied().filter(|&id| id >= 900).collect();
        assert_eq!(minority, (900..1000).collect::<Vec<_>>());
        let again = balance(&src, BalanceStrategy::Undersample { ratio: 2.0, seed: 7 }).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let src = two_class(50, 50);
        assert_eq!(balance(&src, BalanceStrategy::Undersample { ratio: 1.0, seed: 1 }).unwrap(), src);
    }

    #[test]
    fn empty_class_is_an_error() {
        let mut ds = two_class(5, 5);
        ds.class_names.push("c".into());
        assert!(matches!(balance(&ds, BalanceStrategy::Weights), Err(Error::ClassTooSmall { support: 0, .. })));
    }

    #[test]
    fn relabel_merges() {
        let mut ds = two_class(2, 2);
        ds.class_names = vec!["car".into(), "truck".into()];
        let map = LabelMap::parse("# vehicles\ncar, vehicle\ntruck,vehicle\n").unwrap();
        let merged = ds.relabel(&map);
        assert_eq!(merged.class_names, vec!["vehicle".to_string()]);
        assert_eq!(merged.labels, vec![0; 4]);
    }
}
