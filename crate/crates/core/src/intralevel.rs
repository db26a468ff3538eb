//! Ordering of points inside one MidOc level.
//!
//! When only part of a level is read, the prefix should cover the level's
//! spatial extent. Low-discrepancy orders (Halton, reversed space-filling
//! curve codes) do this much better than axis sweeps or random shuffles.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{bit_reverse, hilbert_index, interleave, QuantDomain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntraOrderKind {
    /// Lexicographic on (y, x, z).
    AxisY,
    Random { seed: u64 },
    /// Greedy nearest match to a Halton sequence (bases 2, 3, 5).
    Halton,
    ReverseMorton { offset: u64 },
    ReverseHilbert { offset: u64 },
}

impl Default for IntraOrderKind {
    fn default() -> Self {
        IntraOrderKind::ReverseMorton { offset: 0 }
    }
}

impl IntraOrderKind {
    /// Compact (tag, parameter) form used in the binary store format.
    pub fn to_raw(self) -> (u8, u64) {
        match self {
            IntraOrderKind::AxisY => (0, 0),
            IntraOrderKind::Random { seed } => (1, seed),
            IntraOrderKind::Halton => (2, 0),
            IntraOrderKind::ReverseMorton { offset } => (3, offset),
            IntraOrderKind::ReverseHilbert { offset } => (4, offset),
        }
    }

    pub fn from_raw(tag: u8, param: u64) -> Result<Self> {
        Ok(match tag {
            0 => IntraOrderKind::AxisY,
            1 => IntraOrderKind::Random { seed: param },
            2 => IntraOrderKind::Halton,
            3 => IntraOrderKind::ReverseMorton { offset: param },
            4 => IntraOrderKind::ReverseHilbert { offset: param },
            _ => return Err(Error::InvalidParameter(format!("unknown intra-level order tag {tag}"))),
        })
    }
}

impl fmt::Display for IntraOrderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntraOrderKind::AxisY => write!(f, "axis-y"),
            IntraOrderKind::Random { seed } => write!(f, "random:{seed}"),
            IntraOrderKind::Halton => write!(f, "halton"),
            IntraOrderKind::ReverseMorton { offset } => write!(f, "reverse-morton:{offset}"),
            IntraOrderKind::ReverseHilbert { offset } => write!(f, "reverse-hilbert:{offset}"),
        }
    }
}

impl FromStr for IntraOrderKind {
    type Err = Error;

    /// Accepts `axis-y`, `halton`, `random[:seed]`, `reverse-morton[:offset]`
    /// and `reverse-hilbert[:offset]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let param = param
            .map(|p| p.parse::<u64>().map_err(|_| Error::InvalidParameter(format!("bad parameter in {s:?}"))))
            .transpose()?
            .unwrap_or(0);
        Ok(match name.replace('_', "-").as_str() {
            "axis-y" => IntraOrderKind::AxisY,
            "halton" => IntraOrderKind::Halton,
            "random" => IntraOrderKind::Random { seed: param },
            "reverse-morton" => IntraOrderKind::ReverseMorton { offset: param },
            "reverse-hilbert" => IntraOrderKind::ReverseHilbert { offset: param },
            _ => return Err(Error::InvalidParameter(format!("unknown intra-level order {s:?}"))),
        })
    }
}

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    out
}

const PRIMES: [u64; 3] = [2, 3, 5];

/// `n`-th element (starting at 1) of the Halton sequence in `N` dimensions.
pub fn halton<const N: usize>(n: u64) -> [f64; N] {
    std::array::from_fn(|d| radical_inverse(n, PRIMES[d]))
}

/// Permutation of a level's points (indices into `points`).
pub fn order_level(points: &[[f64; 3]], domain: &QuantDomain, kind: IntraOrderKind) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("level has no points"));
    }
    let bits = domain.max_level();
    match kind {
        IntraOrderKind::AxisY => Ok(axis_order(points, [1, 0, 2])),
        IntraOrderKind::Random { seed } => Ok(shuffled(points.len(), seed)),
        IntraOrderKind::Halton => {
            let o = domain.origin();
            let s = domain.side();
            let unit: Vec<[f64; 3]> = points
                .iter()
                .map(|p| std::array::from_fn(|d| (p[d] - o[d]) / s))
                .collect();
            Ok(halton_order(&unit))
        }
        IntraOrderKind::ReverseMorton { offset } | IntraOrderKind::ReverseHilbert { offset } => {
            let coords = domain.quantize(points)?;
            let hilbert = matches!(kind, IntraOrderKind::ReverseHilbert { .. });
            let codes: Vec<u64> = coords
                .iter()
                .map(|&q| if hilbert { domain.hilbert(q) } else { domain.morton(q) })
                .collect();
            Ok(reversed_code_order(&codes, 3 * u32::from(bits), offset))
        }
    }
}

/// Planar variant on points of the unit square, quantized to `bits` per axis.
/// Used to study coverage on 2D grids.
pub fn order_plane(points: &[[f64; 2]], bits: u8, kind: IntraOrderKind) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("level has no points"));
    }
    let res = 1u32 << bits;
    let quant = |p: &[f64; 2]| -> [u32; 2] {
        std::array::from_fn(|d| ((p[d] * f64::from(res)).floor().max(0.0) as u32).min(res - 1))
    };
    match kind {
        IntraOrderKind::AxisY => Ok(axis_order(points, [1, 0])),
        IntraOrderKind::Random { seed } => Ok(shuffled(points.len(), seed)),
        IntraOrderKind::Halton => Ok(halton_order(points)),
        IntraOrderKind::ReverseMorton { offset } => {
            let codes: Vec<u64> = points.iter().map(|p| interleave(quant(p), bits)).collect();
            Ok(reversed_code_order(&codes, 2 * u32::from(bits), offset))
        }
        IntraOrderKind::ReverseHilbert { offset } => {
            let codes: Vec<u64> = points.iter().map(|p| hilbert_index(quant(p), bits)).collect();
            Ok(reversed_code_order(&codes, 2 * u32::from(bits), offset))
        }
    }
}

fn axis_order<const N: usize>(points: &[[f64; N]], axes: [usize; N]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        axes.iter()
            .map(|&d| points[a][d].total_cmp(&points[b][d]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

fn reversed_code_order(codes: &[u64], nbits: u32, offset: u64) -> Vec<usize> {
    let mask = if nbits >= 64 { u64::MAX } else { (1u64 << nbits) - 1 };
    let mut idx: Vec<usize> = (0..codes.len()).collect();
    idx.sort_by_key(|&i| (bit_reverse(codes[i].wrapping_add(offset) & mask, nbits), i));
    idx
}

/// Greedily matches each Halton element to the nearest unused point.
/// `points` are expected in the unit cube; ties go to the smaller index.
fn halton_order<const N: usize>(points: &[[f64; N]]) -> Vec<usize> {
    let mut picker = NearestPicker::new(points);
    let mut out = Vec::with_capacity(points.len());
    let mut n = 1;
    while out.len() < points.len() {
        let target = halton::<N>(n);
        n += 1;
        if let Some(i) = picker.take_nearest(&target) {
            out.push(i);
        }
    }
    out
}

/// Uniform bucket grid over the unit cube supporting nearest-with-removal.
struct NearestPicker<'a, const N: usize> {
    points: &'a [[f64; N]],
    res: usize,
    buckets: Vec<Vec<usize>>,
    remaining: usize,
}

impl<'a, const N: usize> NearestPicker<'a, N> {
    fn new(points: &'a [[f64; N]]) -> Self {
        let res = ((points.len() as f64).powf(1.0 / N as f64).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); res.pow(N as u32)];
        let mut picker = Self { points, res, buckets: Vec::new(), remaining: points.len() };
        for (i, p) in points.iter().enumerate() {
            buckets[picker.flat(picker.cell_of(p))].push(i);
        }
        picker.buckets = buckets;
        picker
    }

    fn cell_of(&self, p: &[f64; N]) -> [usize; N] {
        std::array::from_fn(|d| ((p[d] * self.res as f64).floor().max(0.0) as usize).min(self.res - 1))
    }

    fn flat(&self, c: [usize; N]) -> usize {
        c.iter().fold(0, |acc, &v| acc * self.res + v)
    }

    fn take_nearest(&mut self, q: &[f64; N]) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        let center = self.cell_of(q);
        let cell = 1.0 / self.res as f64;
        let mut best: Option<(f64, usize, usize, usize)> = None; // (d2, idx, bucket, slot)
        for r in 0..=self.res {
            self.for_ring(center, r, |this, b| {
                for (slot, &i) in this.buckets[b].iter().enumerate() {
                    let d2: f64 = (0..N).map(|d| (this.points[i][d] - q[d]).powi(2)).sum();
                    let wins = match best {
                        None => true,
                        Some((bd, bi, _, _)) => d2 < bd || (d2 == bd && i < bi),
                    };
                    if wins {
                        best = Some((d2, i, b, slot));
                    }
                }
            });
            // Points beyond ring r are at least r cells away from q.
            if let Some((bd, ..)) = best {
                let reach = r as f64 * cell;
                if bd < reach * reach {
                    break;
                }
            }
        }
        let (_, i, b, slot) = best?;
        self.buckets[b].swap_remove(slot);
        self.remaining -= 1;
        Some(i)
    }

    /// Calls `f` on every bucket at Chebyshev distance exactly `r` from `c`.
    fn for_ring(&self, c: [usize; N], r: usize, mut f: impl FnMut(&Self, usize)) {
        let lo: [usize; N] = std::array::from_fn(|d| c[d].saturating_sub(r));
        let hi: [usize; N] = std::array::from_fn(|d| (c[d] + r).min(self.res - 1));
        let mut cur = lo;
        loop {
            let on_ring = (0..N).any(|d| cur[d].abs_diff(c[d]) == r);
            if on_ring {
                f(self, self.flat(cur));
            }
            let mut d = N;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                if cur[d] < hi[d] {
                    cur[d] += 1;
                    break;
                }
                cur[d] = lo[d];
            }
        }
    }
}

/// Estimates the star discrepancy of `points` (unit cube) as the largest
/// local discrepancy over `n_boxes` random anchored boxes `[0, u)`.
pub fn star_discrepancy_estimate<const N: usize>(points: &[[f64; N]], n_boxes: usize, seed: u64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len() as f64;
    let mut worst = 0.0f64;
    for _ in 0..n_boxes {
        let u: [f64; N] = std::array::from_fn(|_| rng.gen::<f64>());
        let volume: f64 = u.iter().product();
        let inside = points.iter().filter(|p| (0..N).all(|d| p[d] < u[d])).count();
        worst = worst.max((inside as f64 / n - volume).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_permutation(p: &[usize], n: usize) -> bool {
        let mut s = p.to_vec();
        s.sort_unstable();
        s == (0..n).collect::<Vec<_>>()
    }

    fn grid16() -> Vec<[f64; 2]> {
        let mut g = Vec::new();
        for y in 0..16 {
            for x in 0..16 {
                g.push([(f64::from(x) + 0.5) / 16.0, (f64::from(y) + 0.5) / 16.0]);
            }
        }
        g
    }

    const KINDS: [IntraOrderKind; 5] = [
        IntraOrderKind::AxisY,
        IntraOrderKind::Random { seed: 7 },
        IntraOrderKind::Halton,
        IntraOrderKind::ReverseMorton { offset: 0 },
        IntraOrderKind::ReverseHilbert { offset: 3 },
    ];

    #[test]
    fn halton_2d_prefix() {
        let expect = [[0.5, 1.0 / 3.0], [0.25, 2.0 / 3.0], [0.75, 1.0 / 9.0]];
        for (n, e) in (1..=3).zip(expect) {
            let h = halton::<2>(n);
            assert!((h[0] - e[0]).abs() < 1e-15 && (h[1] - e[1]).abs() < 1e-15);
        }
        assert!((halton::<3>(1)[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn one_point_is_identity() {
        let d = QuantDomain::new([0.0; 3], 1.0, 4).unwrap();
        for kind in KINDS {
            assert_eq!(order_level(&[[0.2, 0.3, 0.4]], &d, kind).unwrap(), vec![0]);
            assert_eq!(order_plane(&[[0.2, 0.3]], 4, kind).unwrap(), vec![0]);
        }
    }

    #[test]
    fn every_kind_is_a_deterministic_permutation() {
        let d = QuantDomain::new([0.0; 3], 2.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> = (0..300).map(|_| std::array::from_fn(|_| rng.gen::<f64>() * 2.0)).collect();
        for kind in KINDS {
            let a = order_level(&pts, &d, kind).unwrap();
            assert!(is_permutation(&a, pts.len()), "{kind}");
            assert_eq!(a, order_level(&pts, &d, kind).unwrap());
        }
        let g = grid16();
        for kind in KINDS {
            assert!(is_permutation(&order_plane(&g, 4, kind).unwrap(), g.len()));
        }
    }

    #[test]
    fn halton_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 3]> = (0..200).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect();
        let fast = halton_order(&pts);
        let mut used = vec![false; pts.len()];
        let mut slow = Vec::new();
        let mut n = 1;
        while slow.len() < pts.len() {
            let h = halton::<3>(n);
            n += 1;
            let best = (0..pts.len())
                .filter(|&i| !used[i])
                .min_by(|&a, &b| {
                    let da: f64 = (0..3).map(|d| (pts[a][d] - h[d]).powi(2)).sum();
                    let db: f64 = (0..3).map(|d| (pts[b][d] - h[d]).powi(2)).sum();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap();
            used[best] = true;
            slow.push(best);
        }
        assert_eq!(fast, slow);
    }

    #[test]
    fn axis_y_sweeps_rows() {
        let g = grid16();
        let o = order_plane(&g, 4, IntraOrderKind::AxisY).unwrap();
        assert_eq!(&o[..16], &(0..16).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn parse_and_display() {
        for kind in KINDS {
            assert_eq!(kind.to_string().parse::<IntraOrderKind>().unwrap(), kind);
            let (t, p) = kind.to_raw();
            assert_eq!(IntraOrderKind::from_raw(t, p).unwrap(), kind);
        }
        assert_eq!("reverse-morton".parse::<IntraOrderKind>().unwrap(), IntraOrderKind::default());
        assert!("zigzag".parse::<IntraOrderKind>().is_err());
        assert!(IntraOrderKind::from_raw(9, 0).is_err());
    }

    #[test]
    fn discrepancy_bounds() {
        let d = star_discrepancy_estimate(&[[0.0, 0.0, 0.0]], 1000, 1).unwrap();
        assert!(d > 0.5 && d <= 1.0);
        assert!(star_discrepancy_estimate::<3>(&[], 10, 1).is_err());
    }

    #[test]
    fn empty_level_rejected() {
        let d = QuantDomain::new([0.0; 3], 1.0, 4).unwrap();
        assert!(order_level(&[], &d, IntraOrderKind::Halton).is_err());
    }
}
