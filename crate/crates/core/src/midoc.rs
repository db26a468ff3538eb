//! MidOc ordering: coarse-to-fine ordering of a patch's points.
//!
//! The octree is walked breadth first. Every non-empty cell contributes the
//! still-available point closest to its center, tagged with the cell level.
//! Reading the ordered points from the start therefore yields progressively
//! finer approximations of the patch, and the number of picks per level
//! (`ppl`) comes for free.
//!
//! Two implementations are provided: a recursive cell split and a linear
//! octree scan over Morton-sorted points. Both produce the same result bit
//! for bit; ties are broken by leaf Morton code, then by input index.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::intralevel::{self, IntraOrderKind};
use crate::quant::{bit_reverse, CellAddress, QuantDomain};

/// Level tag of points left over after the deepest processed level.
pub const LEVEL_INF: u8 = u8::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MidocResult {
    /// Input indices in output order.
    pub order: Vec<usize>,
    /// Level tag per input index (`LEVEL_INF` for leftovers).
    pub level_of: Vec<u8>,
    /// Picks per level, index 0 through the deepest processed level.
    pub ppl: Vec<u64>,
}

/// How much of an ordered patch to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LodTarget {
    /// Every point picked at this level or coarser.
    Level(u8),
    /// The first `n` points.
    Points(usize),
    /// The whole patch, leftovers included.
    Full,
}

impl MidocResult {
    /// Number of leftover (`LEVEL_INF`) points.
    pub fn inf_count(&self) -> usize {
        self.order.len() - self.ppl.iter().sum::<u64>() as usize
    }

    /// Level tags in output order.
    pub fn levels_in_order(&self) -> Vec<u8> {
        self.order.iter().map(|&i| self.level_of[i]).collect()
    }

    /// Deepest processed level.
    pub fn max_level(&self) -> u8 {
        (self.ppl.len() - 1) as u8
    }
}

/// Number of points in the prefix covering levels `0..=level`.
pub fn prefix_len(ppl: &[u64], level: u8) -> Result<usize> {
    if usize::from(level) >= ppl.len() {
        return Err(Error::LevelOutOfRange {
            level: level.into(),
            max: ppl.len().saturating_sub(1) as u32,
        });
    }
    Ok(ppl[..=usize::from(level)].iter().sum::<u64>() as usize)
}

/// Resolves `target` to a point count for a patch of `len` points.
pub fn target_len(ppl: &[u64], len: usize, target: LodTarget) -> Result<usize> {
    match target {
        LodTarget::Level(l) => prefix_len(ppl, l),
        LodTarget::Points(k) if k > len => Err(Error::PrefixTooLong { requested: k, available: len }),
        LodTarget::Points(k) => Ok(k),
        LodTarget::Full => Ok(len),
    }
}

/// The LOD prefix of an ordered point sequence. Pure slicing.
pub fn lod_prefix<'a, T>(ordered: &'a [T], ppl: &[u64], target: LodTarget) -> Result<&'a [T]> {
    let k = target_len(ppl, ordered.len(), target)?;
    Ok(&ordered[..k])
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Candidate ordering for picks: distance, then leaf code, then index.
#[inline]
fn better(d: f64, code: u64, idx: usize, best: (f64, u64, usize)) -> bool {
    match d.total_cmp(&best.0) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (code, idx) < (best.1, best.2),
    }
}

fn check_inputs(points: &[[f64; 3]], domain: &QuantDomain, max_level: u8) -> Result<Vec<u64>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("patch has no points"));
    }
    if max_level > domain.max_level() {
        return Err(Error::LevelOutOfRange {
            level: max_level.into(),
            max: domain.max_level().into(),
        });
    }
    let mut codes = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        codes.push(domain.morton(domain.quantize_point(p, i)?));
    }
    Ok(codes)
}

/// Leftovers go last, sorted by reversed leaf code then index.
fn finish(
    picks: Vec<usize>,
    mut level_of: Vec<u8>,
    ppl: Vec<u64>,
    codes: &[u64],
    domain: &QuantDomain,
) -> MidocResult {
    let nbits = 3 * u32::from(domain.max_level());
    let mut rest: Vec<usize> = (0..codes.len()).filter(|&i| level_of[i] == LEVEL_INF).collect();
    rest.sort_by_key(|&i| (bit_reverse(codes[i], nbits), i));
    let mut order = picks;
    order.extend_from_slice(&rest);
    for &i in &rest {
        level_of[i] = LEVEL_INF;
    }
    MidocResult { order, level_of, ppl }
}

struct Recursion<'a> {
    points: &'a [[f64; 3]],
    codes: &'a [u64],
    domain: &'a QuantDomain,
    max_level: u8,
    /// (level, cell code, point index)
    picks: Vec<(u8, u64, usize)>,
}

impl Recursion<'_> {
    fn visit(&mut self, cell: CellAddress, mut members: Vec<usize>) {
        if members.is_empty() {
            return;
        }
        let center = self.domain.cell_center(&cell);
        let mut best_pos = 0;
        let first = members[0];
        let mut best = (dist2(&self.points[first], &center), self.codes[first], first);
        for (pos, &i) in members.iter().enumerate().skip(1) {
            let d = dist2(&self.points[i], &center);
            if better(d, self.codes[i], i, best) {
                best = (d, self.codes[i], i);
                best_pos = pos;
            }
        }
        self.picks.push((cell.level(), cell.code(), best.2));
        if cell.level() == self.max_level {
            return;
        }
        members.swap_remove(best_pos);
        let shift = 3 * u32::from(self.domain.max_level() - cell.level() - 1);
        let mut children: [Vec<usize>; 8] = Default::default();
        for i in members {
            children[((self.codes[i] >> shift) & 7) as usize].push(i);
        }
        for (octant, child) in children.into_iter().enumerate() {
            let code = (cell.code() << 3) | octant as u64;
            let child_cell = CellAddress::from_code(cell.level() + 1, code)
                .expect("child of a valid cell is valid");
            self.visit(child_cell, child);
        }
    }
}

/// MidOc by recursive subdivision of the cube, down to `max_level`.
pub fn midoc_recursive(points: &[[f64; 3]], domain: &QuantDomain, max_level: u8) -> Result<MidocResult> {
    let codes = check_inputs(points, domain, max_level)?;
    let mut rec = Recursion {
        points,
        codes: &codes,
        domain,
        max_level,
        picks: Vec::new(),
    };
    rec.visit(CellAddress::root(), (0..points.len()).collect());
    let mut picks = rec.picks;
    picks.sort_unstable_by_key(|&(level, code, _)| (level, code));

    let mut ppl = vec![0u64; usize::from(max_level) + 1];
    let mut level_of = vec![LEVEL_INF; points.len()];
    for &(level, _, i) in &picks {
        ppl[usize::from(level)] += 1;
        level_of[i] = level;
    }
    let order = picks.into_iter().map(|(_, _, i)| i).collect();
    Ok(finish(order, level_of, ppl, &codes, domain))
}

/// MidOc over a linear octree: points are sorted by Morton code once, then
/// every level is a scan over contiguous cell runs of the remaining points.
pub fn midoc_linear(points: &[[f64; 3]], domain: &QuantDomain, max_level: u8) -> Result<MidocResult> {
    let codes = check_inputs(points, domain, max_level)?;
    let mut alive: Vec<usize> = (0..points.len()).collect();
    alive.sort_unstable_by_key(|&i| (codes[i], i));

    let mut ppl = vec![0u64; usize::from(max_level) + 1];
    let mut level_of = vec![LEVEL_INF; points.len()];
    let mut order = Vec::with_capacity(points.len());
    let mut picked = vec![false; points.len()];

    for level in 0..=max_level {
        if alive.is_empty() {
            break;
        }
        let shift = 3 * u32::from(domain.max_level() - level);
        let mut start = 0;
        while start < alive.len() {
            let prefix = codes[alive[start]] >> shift;
            let mut end = start + 1;
            while end < alive.len() && codes[alive[end]] >> shift == prefix {
                end += 1;
            }
            let cell = CellAddress::from_code(level, prefix).expect("prefix of a valid code");
            let center = domain.cell_center(&cell);
            let first = alive[start];
            let mut best = (dist2(&points[first], &center), codes[first], first);
            for &i in &alive[start + 1..end] {
                let d = dist2(&points[i], &center);
                if better(d, codes[i], i, best) {
                    best = (d, codes[i], i);
                }
            }
            picked[best.2] = true;
            level_of[best.2] = level;
            order.push(best.2);
            ppl[usize::from(level)] += 1;
            start = end;
        }
        alive.retain(|&i| !picked[i]);
    }
    Ok(finish(order, level_of, ppl, &codes, domain))
}

/// Options for [`order_points`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderOptions {
    /// Deepest level to pick; deeper points are leftovers.
    pub levels: u8,
    pub intra: IntraOrderKind,
}

impl Default for OrderOptions {
    fn default() -> Self {
        Self {
            levels: 8,
            intra: IntraOrderKind::default(),
        }
    }
}

/// Full ordering pipeline: linear MidOc, then intra-level reordering of each
/// picked level. Leftovers keep their reverse-Morton order.
pub fn order_points(points: &[[f64; 3]], domain: &QuantDomain, opts: OrderOptions) -> Result<MidocResult> {
    let mut res = midoc_linear(points, domain, opts.levels)?;
    let mut start = 0;
    for &n in &res.ppl {
        let n = n as usize;
        if n > 1 {
            let slice = &res.order[start..start + n];
            let pts: Vec<[f64; 3]> = slice.iter().map(|&i| points[i]).collect();
            let perm = intralevel::order_level(&pts, domain, opts.intra)?;
            let reordered: Vec<usize> = perm.iter().map(|&k| slice[k]).collect();
            res.order[start..start + n].copy_from_slice(&reordered);
        }
        start += n;
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(level: u8) -> QuantDomain {
        QuantDomain::new([0.0; 3], 1.0, level).unwrap()
    }

    /// Segment of 64 evenly spaced points along x through level-4 cell centers.
    fn segment() -> Vec<[f64; 3]> {
        (0..64).map(|i| [(f64::from(i) + 0.5) / 64.0, 7.5 / 16.0, 7.5 / 16.0]).collect()
    }

    #[test]
    fn single_point() {
        let pts = [[0.3, 0.2, 0.9]];
        for f in [midoc_recursive, midoc_linear] {
            let r = f(&pts, &unit(4), 4).unwrap();
            assert_eq!(r.order, vec![0]);
            assert_eq!(r.level_of, vec![0]);
            assert_eq!(r.ppl, vec![1, 0, 0, 0, 0]);
        }
    }

    #[test]
    fn octant_centers() {
        let mut pts = Vec::new();
        for o in 0..8u8 {
            let c = unit(2).cell_center(&CellAddress::from_path(&[o]).unwrap());
            pts.push(c);
        }
        let r = midoc_linear(&pts, &unit(2), 2).unwrap();
        assert_eq!(r.ppl, vec![1, 7, 0]);
        assert_eq!(r.inf_count(), 0);
        // All eight are equidistant from the root center: the smallest code wins.
        assert_eq!(r.level_of[0], 0);
        assert_eq!(r, midoc_recursive(&pts, &unit(2), 2).unwrap());
    }

    #[test]
    fn segment_is_a_power_of_two() {
        let pts = segment();
        let r = midoc_linear(&pts, &unit(4), 4).unwrap();
        assert_eq!(r.ppl, vec![1, 2, 4, 8, 16]);
        assert_eq!(r.inf_count(), 33);
        assert_eq!(r, midoc_recursive(&pts, &unit(4), 4).unwrap());
        let levels = r.levels_in_order();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn prefixes() {
        let pts = segment();
        let r = midoc_linear(&pts, &unit(4), 4).unwrap();
        let ordered: Vec<[f64; 3]> = r.order.iter().map(|&i| pts[i]).collect();
        assert_eq!(lod_prefix(&ordered, &r.ppl, LodTarget::Level(2)).unwrap().len(), 7);
        assert_eq!(lod_prefix(&ordered, &r.ppl, LodTarget::Level(3)).unwrap().len(), 15);
        assert_eq!(lod_prefix(&ordered, &r.ppl, LodTarget::Full).unwrap().len(), 64);
        assert!(lod_prefix(&ordered, &r.ppl, LodTarget::Level(5)).is_err());
        assert!(lod_prefix(&ordered, &r.ppl, LodTarget::Points(65)).is_err());
    }

    #[test]
    fn full_level_is_identity_without_leftovers() {
        let pts: Vec<[f64; 3]> = (0..8).map(|i| [(f64::from(i) + 0.5) / 8.0, 0.1, 0.1]).collect();
        let r = midoc_linear(&pts, &unit(3), 3).unwrap();
        assert_eq!(r.inf_count(), 0);
        let ordered: Vec<[f64; 3]> = r.order.iter().map(|&i| pts[i]).collect();
        assert_eq!(lod_prefix(&ordered, &r.ppl, LodTarget::Level(3)).unwrap().len(), 8);
    }

    #[test]
    fn duplicates_sink() {
        let pts = [[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]];
        let r = midoc_linear(&pts, &unit(3), 3).unwrap();
        assert_eq!(r.level_of[0], 0);
        assert_ne!(r.level_of[1], 0);
        let mut o = r.order.clone();
        o.sort_unstable();
        assert_eq!(o, vec![0, 1]);
        assert_eq!(r, midoc_recursive(&pts, &unit(3), 3).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(midoc_linear(&[], &unit(3), 3), Err(Error::EmptyInput(_))));
        assert!(matches!(
            midoc_recursive(&[[2.0, 0.0, 0.0]], &unit(3), 3),
            Err(Error::DomainViolation { index: 0 })
        ));
        assert!(midoc_linear(&[[0.1; 3]], &unit(3), 4).is_err());
    }

    #[test]
    fn early_stop_leaves_leftovers() {
        let pts = segment();
        let r = midoc_linear(&pts, &unit(6), 2).unwrap();
        assert_eq!(r.ppl, vec![1, 2, 4]);
        assert_eq!(r.inf_count(), 57);
        assert_eq!(r, midoc_recursive(&pts, &unit(6), 2).unwrap());
    }

    #[test]
    fn intra_order_keeps_levels() {
        let pts = segment();
        for kind in [
            IntraOrderKind::AxisY,
            IntraOrderKind::Halton,
            IntraOrderKind::Random { seed: 3 },
            IntraOrderKind::ReverseHilbert { offset: 5 },
        ] {
            let r = order_points(&pts, &unit(4), OrderOptions { levels: 4, intra: kind }).unwrap();
            assert_eq!(r.ppl, vec![1, 2, 4, 8, 16]);
            let levels = r.levels_in_order();
            assert!(levels.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
