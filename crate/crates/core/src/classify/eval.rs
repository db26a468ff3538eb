use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{normalize_importance, train_forest, ForestParams};
use super::Dataset;
use crate::error::{Error, Result};

/// `counts[truth][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        Self { classes, counts: vec![vec![0; n]; n] }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(Error::InvalidParameter("confusion matrix must be square, one row per class".into()));
        }
        Ok(Self { classes, counts })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Zero when the class was never predicted.
    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.predicted(class))
    }

    /// Zero when the class has no support.
    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    pub fn accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().flatten().sum();
        ratio((0..self.len()).map(|c| self.counts[c][c]).sum(), total)
    }

    pub fn scores(&self) -> Vec<ClassScore> {
        (0..self.len())
            .map(|c| ClassScore {
                class: self.classes[c].clone(),
                precision: self.precision(c),
                recall: self.recall(c),
                support: self.support(c),
            })
            .collect()
    }

    /// Header row of predicted classes, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\predicted");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-point estimate of a patch-level precision or recall, given the
/// majority fraction of the patches.
pub fn point_estimate(patch_metric: f64, mix: f64) -> f64 {
    patch_metric * mix
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub scores: Vec<ClassScore>,
    pub accuracy: f64,
    pub feature_names: Vec<String>,
    /// Mean over folds of the forest importance, normalized to sum to 1.
    pub importance: Vec<f64>,
}

/// Fold index per observation. Each class is shuffled with `seed` and dealt
/// round robin, so fold sizes within a class differ by at most one.
pub fn stratified_folds(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    fold
}

pub fn evaluate_kfold(ds: &Dataset, k: usize, params: &ForestParams) -> Result<EvalReport> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    ds.validate()?;
    for (c, &s) in ds.supports().iter().enumerate() {
        if s < k {
            return Err(Error::ClassTooSmall { class: ds.class_names[c].clone(), support: s, needed: k });
        }
    }
    let folds = stratified_folds(&ds.labels, ds.n_classes(), k, params.seed);
    let mut confusion = ConfusionMatrix::new(ds.class_names.clone());
    let mut importance = vec![0.0; ds.n_features()];
    for f in 0..k {
        let train: Vec<usize> = (0..ds.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..ds.len()).filter(|&i| folds[i] == f).collect();
        let model = train_forest(&ds.subset(&train), params)?;
        for &i in &test {
            confusion.add(ds.labels[i], model.predict(&ds.rows[i]));
        }
        for (acc, v) in importance.iter_mut().zip(&model.importance) {
            *acc += v;
        }
    }
    Ok(EvalReport {
        scores: confusion.scores(),
        accuracy: confusion.accuracy(),
        confusion,
        feature_names: ds.feature_names.clone(),
        importance: normalize_importance(&importance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..31).map(|i| usize::from(i % 3 == 0)).collect();
        let folds = stratified_folds(&labels, 2, 3, 5);
        for class in 0..2 {
            let mut sizes = [0; 3];
            for i in 0..labels.len() {
                if labels[i] == class {
                    sizes[folds[i]] += 1;
                }
            }
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn perfect_separation_gives_diagonal() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![f64::from(i / 10) + 0.01 * f64::from(i % 10)]).collect();
        let labels = (0..30).map(|i| i / 10).collect();
        let ds = Dataset::new(
            vec!["a".into()],
            vec!["x".into(), "y".into(), "z".into()],
            rows,
            labels,
            (0..30).collect(),
        )
        .unwrap();
        let r = evaluate_kfold(&ds, 3, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
        for c in 0..3 {
            assert_eq!(r.confusion.support(c), 10);
            assert_eq!(r.scores[c].precision, 1.0);
            assert_eq!(r.scores[c].recall, 1.0);
        }
        assert!((r.importance.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_class_rejected() {
        let ds = Dataset::new(
            vec!["a".into()],
            vec!["x".into(), "y".into()],
            vec![vec![0.0]; 6],
            vec![0, 0, 0, 0, 1, 1],
            (0..6).collect(),
        )
        .unwrap();
        assert!(matches!(
            evaluate_kfold(&ds, 3, &ForestParams::default()),
            Err(Error::ClassTooSmall { support: 2, needed: 3, .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix::from_counts(vec!["a".into(), "b".into()], vec![vec![3, 1], vec![0, 2]]).unwrap();
        assert_eq!(m.to_csv(), "truth\\predicted,a,b\na,3,1\nb,0,2\n");
        assert_eq!(m.precision(0), 1.0);
        assert_eq!(m.recall(0), 0.75);
        assert!((point_estimate(0.8, 0.9) - 0.72).abs() < 1e-12);
    }
}
