//! Cubic quantization frame of a patch and bitwise octree addressing.
//!
//! Points are mapped to an integer lattice `[0, 2^L)^3` over the patch cube.
//! Reading the integer coordinates bit by bit, most significant first, gives
//! the octant path of the point in an implicit octree, so no tree needs to be
//! built. Octant indices and Morton codes use the x-most-significant
//! convention: octant = `x_bit << 2 | y_bit << 1 | z_bit`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deepest supported octree level (3 * 21 bits fit in one `u64`).
pub const MAX_LEVEL: u8 = 21;

/// Relative tolerance (in units of the cube side) for points sitting on a
/// cube face because of floating point grid assignment.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

/// Cubic domain a patch is quantized in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantDomain {
    origin: [f64; 3],
    side: f64,
    max_level: u8,
}

/// Integer lattice coordinates, each component below `2^max_level`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantCoord {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

/// An octree cell, stored as its level and the Morton prefix of its path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellAddress {
    level: u8,
    code: u64,
}

impl QuantCoord {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }
}

impl QuantDomain {
    pub fn new(origin: [f64; 3], side: f64, max_level: u8) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidDomain(format!("side must be positive, got {side}")));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDomain("origin must be finite".into()));
        }
        if !(1..=MAX_LEVEL).contains(&max_level) {
            return Err(Error::InvalidDomain(format!(
                "max level must be in [1, {MAX_LEVEL}], got {max_level}"
            )));
        }
        Ok(Self { origin, side, max_level })
    }

    /// Smallest cube with the given origin-aligned bounding box.
    pub fn bounding(points: &[[f64; 3]], max_level: u8) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyInput("points"))?;
        let mut lo = *first;
        let mut hi = *first;
        for p in points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
        // Widen slightly so the max corner falls strictly inside.
        let side = if extent > 0.0 { extent * (1.0 + 1e-6) } else { 1.0 };
        Self::new(lo, side, max_level)
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn max_level(&self) -> u8 {
        self.max_level
    }

    /// Same cube, different depth.
    pub fn with_max_level(&self, max_level: u8) -> Result<Self> {
        Self::new(self.origin, self.side, max_level)
    }

    /// Number of lattice steps per axis, `2^max_level`.
    pub fn resolution(&self) -> u32 {
        1u32 << self.max_level
    }

    /// Edge length of a cell at `level`.
    pub fn cell_side(&self, level: u8) -> f64 {
        self.side / f64::from(1u32 << level)
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|d| p[d] >= self.origin[d] && p[d] < self.origin[d] + self.side)
    }

    /// Quantizes one point; `index` is only used to name the point in errors.
    pub fn quantize_point(&self, p: &[f64; 3], index: usize) -> Result<QuantCoord> {
        let res = self.resolution();
        let top = res - 1;
        let tol = CLAMP_TOLERANCE * self.side;
        let mut q = [0u32; 3];
        for d in 0..3 {
            let rel = p[d] - self.origin[d];
            if !(rel >= -tol && rel <= self.side + tol) {
                return Err(Error::DomainViolation { index });
            }
            let scaled = (rel / self.side * f64::from(res)).floor();
            q[d] = if scaled <= 0.0 {
                0
            } else if scaled >= f64::from(top) {
                top
            } else {
                scaled as u32
            };
        }
        Ok(QuantCoord::new(q[0], q[1], q[2]))
    }

    /// Quantizes every point, preserving input order.
    pub fn quantize(&self, points: &[[f64; 3]]) -> Result<Vec<QuantCoord>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| self.quantize_point(p, i))
            .collect()
    }

    /// Cell containing `q` at `level`.
    pub fn cell_of(&self, q: QuantCoord, level: u8) -> Result<CellAddress> {
        if level > self.max_level {
            return Err(Error::LevelOutOfRange {
                level: level.into(),
                max: self.max_level.into(),
            });
        }
        let code = morton_encode(q, self.max_level) >> (3 * u32::from(self.max_level - level));
        Ok(CellAddress { level, code })
    }

    /// Continuous center of `cell`.
    pub fn cell_center(&self, cell: &CellAddress) -> [f64; 3] {
        let k = cell.indices();
        let n = f64::from(1u32 << cell.level);
        let mut c = [0.0; 3];
        for d in 0..3 {
            c[d] = self.origin[d] + self.side * (f64::from(k[d]) + 0.5) / n;
        }
        c
    }

    /// Leaf Morton code of `q` at this domain's depth.
    pub fn morton(&self, q: QuantCoord) -> u64 {
        morton_encode(q, self.max_level)
    }

    pub fn hilbert(&self, q: QuantCoord) -> u64 {
        hilbert_encode(q, self.max_level)
    }
}

impl CellAddress {
    pub fn root() -> Self {
        Self { level: 0, code: 0 }
    }

    /// Cell from its level and Morton prefix.
    pub fn from_code(level: u8, code: u64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::LevelOutOfRange { level: level.into(), max: MAX_LEVEL.into() });
        }
        check_code(code, level)?;
        Ok(Self { level, code })
    }

    pub fn from_path(path: &[u8]) -> Result<Self> {
        if path.len() > usize::from(MAX_LEVEL) {
            return Err(Error::LevelOutOfRange {
                level: path.len() as u32,
                max: MAX_LEVEL.into(),
            });
        }
        let mut code = 0u64;
        for &o in path {
            if o > 7 {
                return Err(Error::InvalidParameter(format!("octant {o} not in [0, 7]")));
            }
            code = (code << 3) | u64::from(o);
        }
        Ok(Self { level: path.len() as u8, code })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Morton prefix of the cell (`3 * level` bits).
    pub fn code(&self) -> u64 {
        self.code
    }

    /// Octant indices from the root down.
    pub fn path(&self) -> Vec<u8> {
        (0..self.level)
            .map(|i| ((self.code >> (3 * u32::from(self.level - 1 - i))) & 7) as u8)
            .collect()
    }

    /// Integer cell indices along x, y, z at this level.
    pub fn indices(&self) -> [u32; 3] {
        let q = morton_decode_unchecked(self.code, self.level);
        q.to_array()
    }

    pub fn parent(&self) -> Option<Self> {
        (self.level > 0).then(|| Self { level: self.level - 1, code: self.code >> 3 })
    }
}

#[inline]
fn spread3(v: u32) -> u64 {
    let mut x = u64::from(v) & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact3(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | x >> 2) & 0x10c3_0c30_c30c_30c3;
    x = (x | x >> 4) & 0x100f_00f0_0f00_f00f;
    x = (x | x >> 8) & 0x001f_0000_ff00_00ff;
    x = (x | x >> 16) & 0x001f_0000_0000_ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x as u32
}

/// Interleaves the low `bits` bits of each component, x most significant.
/// The top three bits of the result are the level-1 octant.
#[inline]
pub fn morton_encode(q: QuantCoord, bits: u8) -> u64 {
    debug_assert!(bits <= MAX_LEVEL);
    debug_assert!(u64::from(q.x.max(q.y).max(q.z)) < (1u64 << bits));
    (spread3(q.x) << 2) | (spread3(q.y) << 1) | spread3(q.z)
}

pub fn morton_decode(code: u64, bits: u8) -> Result<QuantCoord> {
    check_code(code, bits)?;
    Ok(morton_decode_unchecked(code, bits))
}

fn morton_decode_unchecked(code: u64, _bits: u8) -> QuantCoord {
    QuantCoord::new(compact3(code >> 2), compact3(code >> 1), compact3(code))
}

fn check_code(code: u64, bits: u8) -> Result<()> {
    let nbits = 3 * u32::from(bits);
    if bits > MAX_LEVEL || (nbits < 64 && code >> nbits != 0) {
        return Err(Error::CodeOutOfRange { code, bits: nbits });
    }
    Ok(())
}

/// Position of `q` along the 3D Hilbert curve of order `bits`.
pub fn hilbert_encode(q: QuantCoord, bits: u8) -> u64 {
    hilbert_index(q.to_array(), bits)
}

pub fn hilbert_decode(code: u64, bits: u8) -> Result<QuantCoord> {
    check_code(code, bits)?;
    let [x, y, z] = hilbert_point::<3>(code, bits);
    Ok(QuantCoord::new(x, y, z))
}

/// Hilbert index in `N` dimensions (Skilling's transpose formulation).
pub fn hilbert_index<const N: usize>(coords: [u32; N], bits: u8) -> u64 {
    if bits == 0 {
        return 0;
    }
    let mut x = coords;
    let m = 1u32 << (bits - 1);
    // Inverse undo excess work.
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..N {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode.
    for i in 1..N {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[N - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
    interleave(x, bits)
}

pub fn hilbert_point<const N: usize>(code: u64, bits: u8) -> [u32; N] {
    if bits == 0 {
        return [0; N];
    }
    let mut x = deinterleave::<N>(code, bits);
    let n = 2u32 << (bits - 1);
    // Gray decode.
    let t = x[N - 1] >> 1;
    for i in (1..N).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    // Undo excess work.
    let mut q = 2u32;
    while q != n {
        let p = q - 1;
        for i in (0..N).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
    x
}

/// Generic bit interleave, first component most significant.
pub fn interleave<const N: usize>(coords: [u32; N], bits: u8) -> u64 {
    let mut code = 0u64;
    for b in (0..u32::from(bits)).rev() {
        for c in coords {
            code = (code << 1) | u64::from((c >> b) & 1);
        }
    }
    code
}

pub fn deinterleave<const N: usize>(code: u64, bits: u8) -> [u32; N] {
    let mut out = [0u32; N];
    let total = N as u32 * u32::from(bits);
    for k in 0..total {
        let bit = (code >> (total - 1 - k)) & 1;
        let d = (k as usize) % N;
        out[d] = (out[d] << 1) | bit as u32;
    }
    out
}

/// Reverses the low `nbits` bits of `code`.
#[inline]
pub fn bit_reverse(code: u64, nbits: u32) -> u64 {
    if nbits == 0 {
        0
    } else {
        code.reverse_bits() >> (64 - nbits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(level: u8) -> QuantDomain {
        QuantDomain::new([0.0; 3], 1.0, level).unwrap()
    }

    #[test]
    fn quantize_floor() {
        let d = QuantDomain::new([0.0; 3], 10.0, 3).unwrap();
        let q = d.quantize(&[[5.0, 2.5, 0.0]]).unwrap();
        assert_eq!(q[0], QuantCoord::new(4, 2, 0));
    }

    #[test]
    fn quantize_clamps_top_face() {
        let d = QuantDomain::new([0.0; 3], 10.0, 3).unwrap();
        let q = d.quantize_point(&[10.0 - 1e-12, 10.0, 0.0], 0).unwrap();
        assert_eq!(q, QuantCoord::new(7, 7, 0));
    }

    #[test]
    fn quantize_rejects_far_points() {
        let d = QuantDomain::new([0.0; 3], 10.0, 3).unwrap();
        let err = d.quantize(&[[1.0, 1.0, 1.0], [1.0, 10.1, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::DomainViolation { index: 1 }));
        assert!(d.quantize_point(&[-0.001, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn domain_validation() {
        assert!(QuantDomain::new([0.0; 3], 0.0, 3).is_err());
        assert!(QuantDomain::new([0.0; 3], 1.0, 0).is_err());
        assert!(QuantDomain::new([0.0; 3], 1.0, 22).is_err());
        assert!(QuantDomain::new([0.0; 3], 1.0, 21).is_ok());
    }

    #[test]
    fn binary_coordinates_in_2d() {
        // (5, 2) at three bits reads (101, 010).
        assert_eq!(format!("{:03b}", 5), "101");
        assert_eq!(format!("{:03b}", 2), "010");
        assert_eq!(interleave([5u32, 2], 3), 0b10_01_10);
    }

    #[test]
    fn cell_paths() {
        let d = unit(3);
        let q = QuantCoord::new(0b101, 0b010, 0b000);
        assert!(d.cell_of(q, 0).unwrap().path().is_empty());
        assert_eq!(d.cell_of(q, 1).unwrap().path(), vec![4]);
        assert_eq!(d.cell_of(q, 2).unwrap().path(), vec![4, 2]);
        assert_eq!(d.cell_of(q, 3).unwrap().path(), vec![4, 2, 4]);
        assert!(d.cell_of(q, 4).is_err());
    }

    #[test]
    fn cell_centers() {
        let d = unit(3);
        assert_eq!(d.cell_center(&CellAddress::root()), [0.5; 3]);
        let c = CellAddress::from_path(&[7]).unwrap();
        assert_eq!(d.cell_center(&c), [0.75; 3]);
        let d8 = QuantDomain::new([0.0; 3], 8.0, 3).unwrap();
        let c = CellAddress::from_path(&[4, 2]).unwrap();
        assert_eq!(d8.cell_center(&c), [5.0, 3.0, 1.0]);
    }

    #[test]
    fn morton_examples() {
        assert_eq!(morton_encode(QuantCoord::new(0, 0, 0), 3), 0);
        assert_eq!(morton_encode(QuantCoord::new(1, 1, 1), 1), 7);
        assert_eq!(morton_encode(QuantCoord::new(5, 2, 0), 3), 0b100_010_100);
        assert!(morton_decode(1 << 9, 3).is_err());
        assert_eq!(morton_decode(u64::MAX >> 1, 21).unwrap(), QuantCoord::new(0x1f_ffff, 0x1f_ffff, 0x1f_ffff));
    }

    #[test]
    fn hilbert_origin_is_start() {
        for bits in 1..=8 {
            assert_eq!(hilbert_encode(QuantCoord::default(), bits), 0);
        }
    }

    #[test]
    fn bit_reverse_examples() {
        assert_eq!(bit_reverse(0b000001, 6), 0b100000);
        assert_eq!(bit_reverse(0b1001, 4), 0b1001);
        assert_eq!(bit_reverse(0, 0), 0);
        assert_eq!(bit_reverse(1, 64), 1 << 63);
    }

    #[test]
    fn parent_drops_last_octant() {
        let c = CellAddress::from_path(&[4, 2, 7]).unwrap();
        assert_eq!(c.parent().unwrap().path(), vec![4, 2]);
        assert!(CellAddress::root().parent().is_none());
        assert!(CellAddress::from_path(&[8]).is_err());
    }
}
