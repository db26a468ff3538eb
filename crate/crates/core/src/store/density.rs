//! Density estimation and correction from ppl.
//!
//! `ppl[L]` approximates the number of occupied level-L cells, so multiplying
//! it by the cell volume (or face area for surfaces) gives the occupied
//! volume. Correction never touches the payload: it only picks how many
//! leading points of the MidOc order to serve.

use serde::{Deserialize, Serialize};

use super::PatchMeta;
use crate::error::{Error, Result};
use crate::midoc;

/// Level used when the caller does not pick one.
pub const DEFAULT_DENSITY_LEVEL: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// Points per cubic unit.
    Volume,
    /// Points per square unit.
    Surface,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum DensityTarget {
    /// Serve nothing finer than this level.
    MaxLevel { level: u8 },
    /// Serve at most `density` points per unit volume or area, with the
    /// occupied extent estimated at `level`.
    MaxDensity { density: f64, level: u8, mode: DensityMode },
}

fn occupied_extent(meta: &PatchMeta, side: f64, level: u8, mode: DensityMode) -> Result<f64> {
    let ppl = meta.ordered_ppl()?;
    let picks = *ppl.get(usize::from(level)).ok_or(Error::LevelOutOfRange {
        level: level.into(),
        max: ppl.len().saturating_sub(1) as u32,
    })?;
    if picks == 0 {
        return Err(Error::InvalidParameter(format!("patch {} has no point at level {level}", meta.id)));
    }
    let cell = side / f64::from(1u32 << level);
    Ok(picks as f64
        * match mode {
            DensityMode::Volume => cell.powi(3),
            DensityMode::Surface => cell.powi(2),
        })
}

/// Points per unit volume or area of an ordered patch.
pub fn estimate_density(meta: &PatchMeta, side: f64, level: u8, mode: DensityMode) -> Result<f64> {
    Ok(meta.stats.count as f64 / occupied_extent(meta, side, level, mode)?)
}

/// Number of leading points to keep for `target`.
pub fn correct_density(meta: &PatchMeta, side: f64, target: DensityTarget) -> Result<usize> {
    let count = meta.stats.count as usize;
    match target {
        DensityTarget::MaxLevel { level } => {
            let ppl = meta.ordered_ppl()?;
            // Asking for a level deeper than what was ordered keeps everything picked.
            let level = level.min((ppl.len() - 1) as u8);
            midoc::prefix_len(ppl, level)
        }
        DensityTarget::MaxDensity { density, level, mode } => {
            if !(density.is_finite() && density > 0.0) {
                return Err(Error::InvalidParameter(format!("density must be positive, got {density}")));
            }
            let extent = occupied_extent(meta, side, level, mode)?;
            Ok(count.min((density * extent).ceil() as usize))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intralevel::IntraOrderKind;
    use crate::store::{Aabb, GridKey, OrderingState, PatchStats};

    fn meta(ppl: Vec<u64>, count: u64) -> PatchMeta {
        PatchMeta {
            id: 0,
            key: GridKey { cell: [0; 3], source: 0, time_window: None },
            ordering: OrderingState::Midoc { max_level: (ppl.len() - 1) as u8, intra: IntraOrderKind::default() },
            ppl: Some(ppl),
            stats: PatchStats { count, bbox: Aabb { min: [0.0; 3], max: [1.0; 3] }, centroid: [0.5; 3], attributes: vec![] },
            density_cap: None,
        }
    }

    #[test]
    fn surface_formula() {
        let m = meta(vec![1, 4, 16, 64, 200], 10_000);
        let d = estimate_density(&m, 1.0, 4, DensityMode::Surface).unwrap();
        assert!((d - 12_800.0).abs() < 1e-9);
    }

    #[test]
    fn saturated_volume() {
        let m = meta(vec![1, 7, 56], 5000);
        let mut m2 = m.clone();
        m2.ppl = Some(vec![1, 8, 64]);
        let d = estimate_density(&m2, 2.0, 2, DensityMode::Volume).unwrap();
        assert!((d - 5000.0 / 8.0).abs() < 1e-9);
        assert!(estimate_density(&m, 1.0, 3, DensityMode::Volume).is_err());
    }

    #[test]
    fn unordered_patch_rejected() {
        let mut m = meta(vec![1, 2], 10);
        m.ordering = OrderingState::Unordered;
        assert!(matches!(estimate_density(&m, 1.0, 1, DensityMode::Volume), Err(Error::Unordered(0))));
        assert!(correct_density(&m, 1.0, DensityTarget::MaxLevel { level: 1 }).is_err());
    }

    #[test]
    fn level_target() {
        let m = meta(vec![1, 2, 4, 8], 15);
        assert_eq!(correct_density(&m, 1.0, DensityTarget::MaxLevel { level: 3 }).unwrap(), 15);
        assert_eq!(correct_density(&m, 1.0, DensityTarget::MaxLevel { level: 1 }).unwrap(), 3);
    }

    #[test]
    fn density_cap() {
        let m = meta(vec![1, 8, 64], 20_000);
        let t = DensityTarget::MaxDensity { density: 1000.0, level: 2, mode: DensityMode::Volume };
        assert_eq!(correct_density(&m, 1.0, t).unwrap(), 1000);
        let bad = DensityTarget::MaxDensity { density: 0.0, level: 2, mode: DensityMode::Volume };
        assert!(correct_density(&m, 1.0, bad).is_err());
    }
}
