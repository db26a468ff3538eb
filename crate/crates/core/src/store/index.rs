use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GridKey, OrderingState, PatchMeta, Schema};
use crate::error::{Error, Result};

/// Closed axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    /// Box containing everything.
    pub fn everything() -> Self {
        Self { min: [f64::NEG_INFINITY; 3], max: [f64::INFINITY; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..3 {
            if self.min[d].is_nan() || self.max[d].is_nan() || self.min[d] > self.max[d] {
                return Err(Error::InvalidFilter(format!("malformed bbox {:?} .. {:?}", self.min, self.max)));
            }
        }
        Ok(())
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|d| self.min[d] <= other.max[d] && other.min[d] <= self.max[d])
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|d| self.min[d] <= p[d] && p[d] <= self.max[d])
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|d| 0.5 * (self.min[d] + self.max[d]))
    }

    /// Parses `minx,miny,minz,maxx,maxy,maxz`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidFilter(format!("bbox {s:?} is not six numbers")))?;
        if v.len() != 6 {
            return Err(Error::InvalidFilter(format!("bbox {s:?} is not six numbers")));
        }
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

/// Inclusive point-count range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u64,
    pub max: u64,
}

impl CountRange {
    pub fn at_least(min: u64) -> Self {
        Self { min, max: u64::MAX }
    }
}

/// Inclusive range on the mean of a named attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingFilter {
    Unordered,
    Ordered,
}

impl OrderingFilter {
    pub fn matches(&self, state: &OrderingState) -> bool {
        matches!(
            (self, state),
            (OrderingFilter::Unordered, OrderingState::Unordered) | (OrderingFilter::Ordered, OrderingState::Midoc { .. })
        )
    }
}

/// Conjunction of optional filters; the empty filter matches every patch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub bbox: Option<Aabb>,
    pub count: Option<CountRange>,
    pub attributes: Vec<AttrRange>,
    pub ordering: Option<OrderingFilter>,
}

impl QueryFilter {
    /// Reference evaluation against one patch's metadata.
    pub fn matches(&self, meta: &PatchMeta, schema: &Schema) -> Result<bool> {
        self.validate(schema)?;
        if let Some(b) = &self.bbox {
            if !b.intersects(&meta.stats.bbox) {
                return Ok(false);
            }
        }
        if let Some(c) = &self.count {
            if meta.stats.count < c.min || meta.stats.count > c.max {
                return Ok(false);
            }
        }
        for r in &self.attributes {
            let col = schema.index_of(&r.name).expect("validated");
            let mean = meta.stats.attributes[col].mean;
            if mean < r.min || mean > r.max {
                return Ok(false);
            }
        }
        Ok(self.ordering.is_none_or(|o| o.matches(&meta.ordering)))
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if let Some(b) = &self.bbox {
            b.validate()?;
        }
        if let Some(c) = &self.count {
            if c.min > c.max {
                return Err(Error::InvalidFilter(format!("count range {}..={} is empty", c.min, c.max)));
            }
        }
        for r in &self.attributes {
            if schema.index_of(&r.name).is_none() {
                return Err(Error::InvalidFilter(format!("unknown attribute {:?}", r.name)));
            }
            if r.min.is_nan() || r.max.is_nan() || r.min > r.max {
                return Err(Error::InvalidFilter(format!("bad range for {:?}", r.name)));
            }
        }
        Ok(())
    }
}

/// Secondary indexes over immutable patch statistics.
#[derive(Clone, Debug, Default)]
pub struct GridIndex {
    by_key: BTreeMap<GridKey, u64>,
    /// (count, id), sorted.
    by_count: Vec<(u64, u64)>,
    /// Per attribute: (mean, id), sorted.
    by_mean: Vec<Vec<(f64, u64)>>,
    bboxes: Vec<Aabb>,
    total: u64,
}

impl GridIndex {
    pub fn build<'a>(metas: impl Iterator<Item = &'a PatchMeta>) -> Self {
        let mut idx = Self::default();
        for m in metas {
            idx.by_key.insert(m.key, m.id);
            idx.by_count.push((m.stats.count, m.id));
            if idx.by_mean.len() < m.stats.attributes.len() {
                idx.by_mean.resize(m.stats.attributes.len(), Vec::new());
            }
            for (col, a) in m.stats.attributes.iter().enumerate() {
                idx.by_mean[col].push((a.mean, m.id));
            }
            debug_assert_eq!(idx.bboxes.len() as u64, m.id);
            idx.bboxes.push(m.stats.bbox);
            idx.total += m.stats.count;
        }
        idx.by_count.sort_unstable();
        for col in &mut idx.by_mean {
            col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        idx
    }

    pub fn get(&self, key: &GridKey) -> Option<u64> {
        self.by_key.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = (&GridKey, &u64)> {
        self.by_key.iter()
    }

    pub fn total_points(&self) -> u64 {
        self.total
    }

    pub fn count_at_least(&self, threshold: u64) -> Vec<u64> {
        self.count_range(CountRange::at_least(threshold))
    }

    fn count_range(&self, r: CountRange) -> Vec<u64> {
        let lo = self.by_count.partition_point(|&(c, _)| c < r.min);
        let hi = self.by_count.partition_point(|&(c, _)| c <= r.max);
        let mut ids: Vec<u64> = self.by_count[lo..hi].iter().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids
    }

    fn mean_range(&self, col: usize, min: f64, max: f64) -> Vec<u64> {
        let v = &self.by_mean[col];
        let lo = v.partition_point(|&(m, _)| m < min);
        let hi = v.partition_point(|&(m, _)| m <= max);
        let mut ids: Vec<u64> = v[lo..hi].iter().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids
    }

    /// Statistics-only part of a query (everything but the ordering state).
    pub fn query(&self, filter: &QueryFilter, schema: &Schema) -> Result<Vec<u64>> {
        filter.validate(schema)?;
        let mut ids: Vec<u64> = match filter.count {
            Some(r) => self.count_range(r),
            None => (0..self.bboxes.len() as u64).collect(),
        };
        for r in &filter.attributes {
            let col = schema.index_of(&r.name).expect("validated");
            let hits = self.mean_range(col, r.min, r.max);
            ids = intersect_sorted(&ids, &hits);
        }
        if let Some(b) = &filter.bbox {
            ids.retain(|&id| b.intersects(&self.bboxes[id as usize]));
        }
        Ok(ids)
    }
}

fn intersect_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{GridSpec, PointRecord, Store};

    fn store() -> Store {
        let schema = Schema::new(["intensity"]);
        let mut recs = Vec::new();
        for cell in 0..5 {
            for k in 0..=cell {
                recs.push(PointRecord {
                    position: [f64::from(cell) + 0.5, 0.5, 0.5],
                    attributes: vec![f64::from(cell * 10 + k)],
                });
            }
        }
        Store::ingest(recs, GridSpec::new(1.0).unwrap(), schema).0
    }

    #[test]
    fn empty_filter_matches_all() {
        let s = store();
        assert_eq!(s.query(&QueryFilter::default()).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn bbox_outside_matches_nothing() {
        let s = store();
        let f = QueryFilter { bbox: Some(Aabb::new([100.0; 3], [101.0; 3]).unwrap()), ..Default::default() };
        assert!(s.query(&f).unwrap().is_empty());
    }

    #[test]
    fn combined_filters() {
        let s = store();
        let f = QueryFilter {
            count: Some(CountRange { min: 2, max: 4 }),
            attributes: vec![AttrRange { name: "intensity".into(), min: 20.0, max: 100.0 }],
            bbox: Some(Aabb::new([0.0; 3], [3.6, 1.0, 1.0]).unwrap()),
            ordering: Some(OrderingFilter::Unordered),
        };
        assert_eq!(s.query(&f).unwrap(), vec![2, 3]);
    }

    #[test]
    fn malformed_filters() {
        let s = store();
        let bad = [
            QueryFilter { count: Some(CountRange { min: 5, max: 1 }), ..Default::default() },
            QueryFilter {
                attributes: vec![AttrRange { name: "nope".into(), min: 0.0, max: 1.0 }],
                ..Default::default()
            },
            QueryFilter { bbox: Some(Aabb { min: [1.0; 3], max: [0.0; 3] }), ..Default::default() },
        ];
        for f in bad {
            assert!(matches!(s.query(&f), Err(Error::InvalidFilter(_))));
        }
        assert!(Aabb::parse("0,0,0,1,1").is_err());
        assert!(Aabb::parse("0,0,0,1,1,x").is_err());
        assert_eq!(Aabb::parse("0, 0,0,1,2,3").unwrap().max, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn dense_detection_is_stats_only() {
        let s = store();
        assert_eq!(s.detect_dense(4), vec![3, 4]);
        assert!(s.detect_dense(100).is_empty());
        assert_eq!(s.payload_reads(), 0);
    }
}
