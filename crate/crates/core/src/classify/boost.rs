use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::forest::{argmax, ForestModel};
use super::{extract_features, FeatureSet};
use crate::error::{Error, Result};
use crate::store::Store;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub patch_id: u64,
    pub class: usize,
    /// Probability of `class`.
    pub confidence: f64,
    /// Probability per class, summing to 1.
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn from_probabilities(patch_id: u64, probabilities: Vec<f64>) -> Self {
        let class = argmax(&probabilities);
        Self { patch_id, class, confidence: probabilities[class], probabilities }
    }
}

impl ForestModel {
    /// Predicts the given patches from their metadata.
    pub fn predict_patches(&self, store: &Store, set: &FeatureSet, ids: &[u64]) -> Result<Vec<Prediction>> {
        if set.names() != self.feature_names {
            return Err(Error::InvalidParameter("feature set differs from the one used for training".into()));
        }
        ids.iter()
            .map(|&id| {
                let fv = extract_features(&store.meta(id)?, store.schema(), set)?;
                Ok(Prediction::from_probabilities(id, self.predict_proba(&fv.values)))
            })
            .collect()
    }
}

/// Keeps predictions whose confidence is at least `min_confidence`.
pub fn precision_boost(predictions: &[Prediction], min_confidence: f64) -> Vec<Prediction> {
    predictions.iter().filter(|p| p.confidence >= min_confidence).cloned().collect()
}

/// Adds every patch whose grid cell overlaps the cell of an input patch
/// grown by `dxy` horizontally and `dz` vertically. Boxes are compared as
/// open sets, so face-adjacent cells only join when a dilation is positive.
/// Returns sorted ids.
pub fn recall_boost(store: &Store, ids: &[u64], dxy: f64, dz: f64) -> Result<Vec<u64>> {
    for d in [dxy, dz] {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::InvalidParameter(format!("dilation must be finite and non-negative, got {d}")));
        }
    }
    let mut by_cell: HashMap<[i64; 3], Vec<u64>> = HashMap::new();
    for (key, &id) in store.index().keys() {
        by_cell.entry(key.cell).or_default().push(id);
    }
    let g = store.grid().size;
    let reach = [(dxy / g).ceil() as i64, (dxy / g).ceil() as i64, (dz / g).ceil() as i64];
    let window = reach.iter().fold(1i128, |acc, r| acc.saturating_mul(2 * i128::from(*r) + 1));
    let mut out: BTreeSet<u64> = BTreeSet::new();
    for &id in ids {
        let cell = store.meta(id)?.key.cell;
        out.insert(id);
        let near = |c: &[i64; 3]| (0..3).all(|k| (c[k] - cell[k]).abs() <= reach[k]);
        if window > by_cell.len() as i128 {
            for (c, members) in &by_cell {
                if near(c) {
                    out.extend(members);
                }
            }
        } else {
            for x in -reach[0]..=reach[0] {
                for y in -reach[1]..=reach[1] {
                    for z in -reach[2]..=reach[2] {
                        if let Some(members) = by_cell.get(&[cell[0] + x, cell[1] + y, cell[2] + z]) {
                            out.extend(members);
                        }
                    }
                }
            }
        }
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{GridSpec, PointRecord, Schema};

    fn grid_store() -> Store {
        let mut recs = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                recs.push(PointRecord::new([f64::from(x) + 0.5, f64::from(y) + 0.5, 0.5]));
            }
        }
        Store::ingest(recs, GridSpec::new(1.0).unwrap(), Schema::default()).0
    }

    fn cell_of(s: &Store, id: u64) -> [i64; 3] {
        s.meta(id).unwrap().key.cell
    }

    #[test]
    fn zero_dilation_is_identity() {
        let s = grid_store();
        assert_eq!(recall_boost(&s, &[7, 3], 0.0, 0.0).unwrap(), vec![3, 7]);
    }

    #[test]
    fn half_cell_reaches_neighbours() {
        let s = grid_store();
        let center = (0..25).find(|&id| cell_of(&s, id) == [2, 2, 0]).unwrap();
        let got = recall_boost(&s, &[center], 0.5, 0.0).unwrap();
        assert_eq!(got.len(), 9);
        assert!(got.iter().all(|&id| cell_of(&s, id).iter().zip([2, 2, 0]).all(|(a, b)| (a - b).abs() <= 1)));
    }

    #[test]
    fn huge_dilation_saturates() {
        let s = grid_store();
        assert_eq!(recall_boost(&s, &[0], 1e6, 1e6).unwrap(), (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn thresholds_nest() {
        let preds: Vec<Prediction> = (0u32..10)
            .map(|i| {
                let c = f64::from(i) / 10.0;
                Prediction::from_probabilities(u64::from(i), vec![c, 1.0 - c])
            })
            .collect();
        assert_eq!(precision_boost(&preds, 0.0).len(), 10);
        assert!(precision_boost(&preds, 1.0 + 1e-9).is_empty());
        let hi = precision_boost(&preds, 0.7);
        let lo = precision_boost(&preds, 0.6);
        assert!(hi.iter().all(|p| lo.contains(p)));
    }
}
