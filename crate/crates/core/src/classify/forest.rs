//! Random forest of CART trees with weighted Gini impurity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    /// Candidate features per node; `None` means `round(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    pub min_samples_split: usize,
    /// Draw a bootstrap sample of the training size for each tree.
    pub bootstrap: bool,
    /// Extra weight per class, multiplied with the observation weights.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            features_per_split: None,
            min_samples_split: 2,
            bootstrap: true,
            class_weights: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    /// Weighted class histogram of the training samples that reached the leaf.
    Leaf { hist: Vec<f64> },
    /// Samples with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_hist(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { hist } => return hist,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Mean impurity decrease per feature, normalized to sum to 1.
    pub importance: Vec<f64>,
}

impl ForestModel {
    /// Class probabilities: the mean over trees of each leaf's normalized
    /// histogram.
    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.class_names.len()];
        for t in &self.trees {
            let hist = t.leaf_hist(row);
            let total: f64 = hist.iter().sum();
            for (acc, h) in p.iter_mut().zip(hist) {
                *acc += h / total;
            }
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    /// Most probable class; ties go to the lower class index.
    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(&self.predict_proba(row))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn gini(hist: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - hist.iter().map(|h| (h / total).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    ds: &'a Dataset,
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn hist(&self, samples: &[(usize, f64)]) -> Vec<f64> {
        let mut h = vec![0.0; self.ds.n_classes()];
        for &(i, w) in samples {
            h[self.ds.labels[i]] += w;
        }
        h
    }

    fn best_for_feature(&self, samples: &[(usize, f64)], feature: usize, parent: &[f64], total: f64) -> Option<BestSplit> {
        let mut sorted: Vec<(f64, usize, f64)> =
            samples.iter().map(|&(i, w)| (self.ds.rows[i][feature], self.ds.labels[i], w)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted.first()?.0 == sorted.last()?.0 {
            return None;
        }
        let parent_impurity = total * gini(parent, total);
        let mut left = vec![0.0; parent.len()];
        let mut wl = 0.0;
        let mut best: Option<BestSplit> = None;
        for k in 0..sorted.len() - 1 {
            let (v, label, w) = sorted[k];
            left[label] += w;
            wl += w;
            let next = sorted[k + 1].0;
            if next == v {
                continue;
            }
            let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let wr = total - wl;
            let gain = parent_impurity - wl * gini(&left, wl) - wr * gini(&right, wr);
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mid = 0.5 * (v + next);
                let threshold = if mid < next { mid } else { v };
                best = Some(BestSplit { feature, threshold, gain });
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<(usize, f64)>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let hist = self.hist(&samples);
        let total: f64 = hist.iter().sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { hist: hist.clone() });
        let pure = hist.iter().filter(|&&h| h > 0.0).count() <= 1;
        if pure || samples.len() < self.params.min_samples_split || self.params.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        // Visit features in random order; stop after `mtry` of them unless none
        // of those could split the node.
        let nf = self.ds.n_features();
        let mut features: Vec<usize> = (0..nf).collect();
        let mut best: Option<BestSplit> = None;
        for k in 0..nf {
            let j = rng.gen_range(k..nf);
            features.swap(k, j);
            if k >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.best_for_feature(&samples, features[k], &hist, total) {
                if best.as_ref().is_none_or(|b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return id };
        self.importance[split.feature] += split.gain.max(0.0);
        let (l, r): (Vec<_>, Vec<_>) =
            samples.into_iter().partition(|&(i, _)| self.ds.rows[i][split.feature] <= split.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

fn train_tree(ds: &Dataset, params: &ForestParams, weights: &[f64], mtry: usize, index: usize) -> (Tree, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);
    let n = ds.len();
    let samples: Vec<(usize, f64)> = if params.bootstrap {
        let mut mult = vec![0u32; n];
        for _ in 0..n {
            mult[rng.gen_range(0..n)] += 1;
        }
        (0..n).filter(|&i| mult[i] > 0).map(|i| (i, f64::from(mult[i]) * weights[i])).collect()
    } else {
        (0..n).map(|i| (i, weights[i])).collect()
    };
    let mut b = Builder { ds, params, mtry, nodes: Vec::new(), importance: vec![0.0; ds.n_features()] };
    b.grow(samples, 0, &mut rng);
    (Tree { nodes: b.nodes }, b.importance)
}

pub(crate) fn normalize_importance(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    if s > 0.0 {
        raw.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

pub fn train_forest(ds: &Dataset, params: &ForestParams) -> Result<ForestModel> {
    ds.validate()?;
    let present = ds.supports().iter().filter(|&&s| s > 0).count();
    if present < 2 {
        return Err(Error::SingleClass);
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    if ds.n_features() == 0 {
        return Err(Error::InvalidParameter("dataset has no feature".into()));
    }
    let weights: Vec<f64> = match &params.class_weights {
        None => ds.weights.clone(),
        Some(cw) => {
            if cw.len() != ds.n_classes() || cw.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::InvalidParameter("class weights must be positive, one per class".into()));
            }
            ds.weights.iter().zip(&ds.labels).map(|(w, &l)| w * cw[l]).collect()
        }
    };
    let nf = ds.n_features();
    let mtry = params
        .features_per_split
        .unwrap_or_else(|| ((nf as f64).sqrt().round() as usize).max(1))
        .clamp(1, nf);

    let build = |t: usize| train_tree(ds, params, &weights, mtry, t);
    #[cfg(feature = "parallel")]
    let built: Vec<(Tree, Vec<f64>)> = {
        use rayon::prelude::*;
        (0..params.n_trees).into_par_iter().map(build).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let built: Vec<(Tree, Vec<f64>)> = (0..params.n_trees).map(build).collect();

    let mut importance = vec![0.0; nf];
    let mut trees = Vec::with_capacity(built.len());
    for (tree, imp) in built {
        if imp.iter().sum::<f64>() > 0.0 {
            for (acc, v) in importance.iter_mut().zip(normalize_importance(&imp)) {
                *acc += v;
            }
        }
        trees.push(tree);
    }
    Ok(ForestModel {
        params: params.clone(),
        feature_names: ds.feature_names.clone(),
        class_names: ds.class_names.clone(),
        trees,
        importance: normalize_importance(&importance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(i), f64::from(i % 7)]).collect();
        let labels = (0..40).map(|i| usize::from(i >= 17)).collect();
        Dataset::new(vec!["a".into(), "b".into()], vec!["lo".into(), "hi".into()], rows, labels, (0..40).collect())
            .unwrap()
    }

    fn leaf_sum(t: &Tree, i: usize) -> f64 {
        match &t.nodes[i] {
            Node::Leaf { hist } => hist.iter().sum(),
            Node::Split { left, right, .. } => leaf_sum(t, *left) + leaf_sum(t, *right),
        }
    }

    #[test]
    fn single_tree_fits_training_set() {
        let ds = separable();
        let params = ForestParams { n_trees: 1, bootstrap: false, ..Default::default() };
        let m = train_forest(&ds, &params).unwrap();
        for (row, &y) in ds.rows.iter().zip(&ds.labels) {
            assert_eq!(m.predict(row), y);
        }
    }

    #[test]
    fn leaf_histograms_hold_the_training_weight() {
        let mut ds = separable();
        ds.weights = (0..40).map(|i| 1.0 + f64::from(i % 3)).collect();
        let params = ForestParams { n_trees: 5, seed: 3, ..Default::default() };
        let m = train_forest(&ds, &params).unwrap();
        for (t, tree) in m.trees.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            rng.set_stream(t as u64);
            let mut mult = [0u32; 40];
            for _ in 0..40 {
                mult[rng.gen_range(0..40)] += 1;
            }
            let expected: f64 = (0..40).map(|i| f64::from(mult[i]) * ds.weights[i]).sum();
            assert!((leaf_sum(tree, 0) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_features_predict_majority() {
        let rows = vec![vec![1.0, 2.0]; 30];
        let labels = (0..30).map(|i| usize::from(i < 8)).collect();
        let ds = Dataset::new(vec!["a".into(), "b".into()], vec!["x".into(), "y".into()], rows, labels, (0..30).collect())
            .unwrap();
        let m = train_forest(&ds, &ForestParams::default()).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.predict(&[1.0, 2.0]), 0);
        assert_eq!(m.predict(&[9.0, -4.0]), 0);
    }

    #[test]
    fn deterministic_and_normalized() {
        let ds = separable();
        let p = ForestParams { n_trees: 20, seed: 11, ..Default::default() };
        let a = train_forest(&ds, &p).unwrap();
        let b = train_forest(&ds, &p).unwrap();
        assert_eq!(a, b);
        let s: f64 = a.importance.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let pr = a.predict_proba(&[3.0, 3.0]);
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.importance[0] > a.importance[1]);
    }

    #[test]
    fn max_depth_is_respected() {
        let ds = separable();
        let p = ForestParams { n_trees: 3, max_depth: Some(1), ..Default::default() };
        assert!(train_forest(&ds, &p).unwrap().trees.iter().all(|t| t.depth() <= 1));
    }

    #[test]
    fn single_class_rejected() {
        let mut ds = separable();
        ds.labels = vec![1; 40];
        assert!(matches!(train_forest(&ds, &ForestParams::default()), Err(Error::SingleClass)));
    }
}
