//! Per-patch feature vectors built from metadata only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{PatchMeta, Schema, Store, ATTR_CLASS, ATTR_ECHO, ATTR_INTENSITY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// `ppl[L] / 8^L`.
    Ppl(u8),
    MeanIntensity,
    MeanEcho,
    /// Extent of the bounding box along z.
    Height,
    /// Area of the bounding box projected on the xy plane.
    Footprint,
    /// Mean z of the points.
    MeanAltitude,
}

impl Feature {
    pub fn is_ppl(&self) -> bool {
        matches!(self, Feature::Ppl(_))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Ppl(l) => write!(f, "ppl{l}"),
            Feature::MeanIntensity => f.write_str("mean_intensity"),
            Feature::MeanEcho => f.write_str("mean_echo"),
            Feature::Height => f.write_str("height"),
            Feature::Footprint => f.write_str("footprint"),
            Feature::MeanAltitude => f.write_str("mean_altitude"),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean_intensity" => Feature::MeanIntensity,
            "mean_echo" => Feature::MeanEcho,
            "height" => Feature::Height,
            "footprint" => Feature::Footprint,
            "mean_altitude" => Feature::MeanAltitude,
            _ => {
                let level = s
                    .strip_prefix("ppl")
                    .and_then(|l| l.parse::<u8>().ok())
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown feature {s:?}")))?;
                Feature::Ppl(level)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub features: Vec<Feature>,
    /// Value used when a feature's source attribute is absent.
    pub default_value: f64,
}

impl Default for FeatureSet {
    fn default() -> Self {
        let mut features: Vec<Feature> = (1..=4).map(Feature::Ppl).collect();
        features.extend([
            Feature::MeanIntensity,
            Feature::MeanEcho,
            Feature::Height,
            Feature::Footprint,
            Feature::MeanAltitude,
        ]);
        Self { features, default_value: 0.0 }
    }
}

impl FeatureSet {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(ToString::to_string).collect()
    }

    /// Parses a comma separated list such as `ppl1,ppl2,height`.
    pub fn parse(list: &str) -> Result<Self> {
        let features = list.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<_>>>()?;
        if features.is_empty() {
            return Err(Error::InvalidParameter("empty feature list".into()));
        }
        Ok(Self { features, default_value: 0.0 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// True where the default value was substituted.
    pub missing: Vec<bool>,
}

fn attribute_mean(meta: &PatchMeta, schema: &Schema, name: &str) -> Option<f64> {
    let col = schema.index_of(name)?;
    meta.stats.attributes.get(col).map(|a| a.mean).filter(|m| m.is_finite())
}

pub fn extract_features(meta: &PatchMeta, schema: &Schema, set: &FeatureSet) -> Result<FeatureVector> {
    let ppl = meta.ordered_ppl()?;
    let b = &meta.stats.bbox;
    let mut values = Vec::with_capacity(set.features.len());
    let mut missing = Vec::with_capacity(set.features.len());
    for f in &set.features {
        let v = match *f {
            Feature::Ppl(level) => ppl.get(usize::from(level)).map(|&n| n as f64 / 8f64.powi(i32::from(level))),
            Feature::MeanIntensity => attribute_mean(meta, schema, ATTR_INTENSITY),
            Feature::MeanEcho => attribute_mean(meta, schema, ATTR_ECHO),
            Feature::Height => Some(b.max[2] - b.min[2]),
            Feature::Footprint => Some((b.max[0] - b.min[0]) * (b.max[1] - b.min[1])),
            Feature::MeanAltitude => Some(meta.stats.centroid[2]),
        };
        missing.push(v.is_none());
        values.push(v.unwrap_or(set.default_value));
    }
    Ok(FeatureVector { values, missing })
}

/// Majority point class of a patch and the fraction of points carrying it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchLabel {
    pub class: i64,
    pub mix: f64,
}

/// Labels every patch from its `class` attribute. Ties go to the smaller
/// class value. Reads every payload.
pub fn patch_labels(store: &Store) -> Result<Vec<(u64, PatchLabel)>> {
    let col = store
        .schema()
        .index_of(ATTR_CLASS)
        .ok_or_else(|| Error::InvalidParameter(format!("store has no {ATTR_CLASS:?} attribute")))?;
    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let patch = store.patch(id)?;
        let mut counts = std::collections::BTreeMap::<i64, usize>::new();
        for &c in &patch.points.attributes[col] {
            *counts.entry(c.round() as i64).or_default() += 1;
        }
        let n = patch.points.len();
        if let Some((&class, &k)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
            out.push((id, PatchLabel { class, mix: k as f64 / n as f64 }));
        }
    }
    Ok(out)
}
