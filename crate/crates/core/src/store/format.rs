//! Binary store container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header   magic "LODPATCH" | version u16 | grid size f64 | grid offset 3*f64
//!          | attribute count u16 | per attribute: name length u16, UTF-8 name
//!          | patch count u64
//! patch    id u64 | cell 3*i64 | source u32 | has window u8 | window i64
//!          | ordering u8 (0 unordered, 1 midoc) | max level u8
//!          | intra-order tag u8 | intra-order parameter u64
//!          | ppl length u8 | ppl u64 * length
//!          | has density cap u8 | density cap u64
//!          | count u64 | bbox min 3*f64 | bbox max 3*f64 | centroid 3*f64
//!          | per attribute: min f64, max f64, mean f64
//!          | x f64 * count | y f64 * count | z f64 * count
//!          | per attribute: value f64 * count
//! trailer  CRC-32 (IEEE) of every preceding byte, u32
//! ```
//!
//! Points are stored in patch order, so a MidOc-ordered patch keeps its
//! level-of-detail structure with no extra field beyond ppl.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Aabb, AttrStats, GridKey, GridSpec, OrderingState, Patch, PatchMeta, PatchStats, PointBlock, Schema, Store};
use crate::error::{Error, Result};
use crate::intralevel::IntraOrderKind;

pub const MAGIC: &[u8; 8] = b"LODPATCH";
pub const FORMAT_VERSION: u16 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: impl IntoIterator<Item = f64>) {
        for x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f64x3(&mut self) -> Result<[f64; 3]> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
    fn f64_column(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("column too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl Store {
    /// Serializes the whole store.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u16(FORMAT_VERSION);
        w.f64(self.grid.size);
        w.f64s(self.grid.offset);
        w.u16(self.schema.len() as u16);
        for name in &self.schema.names {
            w.u16(name.len() as u16);
            w.buf.extend_from_slice(name.as_bytes());
        }
        w.u64(self.len() as u64);
        for id in self.ids() {
            let p = self.snapshot(id).expect("id in range");
            write_patch(&mut w, &p);
        }
        let crc = crc32fast::hash(&w.buf);
        w.u32(crc);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 + 4 {
            return Err(Error::Corrupt("file too short".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let size = r.f64()?;
        let offset = r.f64x3()?;
        let grid = GridSpec::with_offset(size, offset).map_err(|e| Error::Corrupt(e.to_string()))?;
        let n_attrs = usize::from(r.u16()?);
        let mut names = Vec::with_capacity(n_attrs);
        for _ in 0..n_attrs {
            let len = usize::from(r.u16()?);
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Corrupt("attribute name is not UTF-8".into()))?;
            names.push(name.to_owned());
        }
        let schema = Schema { names };
        let n_patches = r.u64()?;
        let mut patches = Vec::new();
        for expected_id in 0..n_patches {
            let p = read_patch(&mut r, n_attrs)?;
            if p.meta.id != expected_id {
                return Err(Error::Corrupt(format!("patch id {} out of sequence", p.meta.id)));
            }
            patches.push(p);
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes after last patch".into()));
        }
        Ok(Store::from_patches(grid, schema, patches))
    }

    /// Writes the store atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_patch(w: &mut Writer, p: &Patch) {
    let m = &p.meta;
    w.u64(m.id);
    for c in m.key.cell {
        w.i64(c);
    }
    w.u32(m.key.source);
    w.u8(u8::from(m.key.time_window.is_some()));
    w.i64(m.key.time_window.unwrap_or(0));
    match m.ordering {
        OrderingState::Unordered => {
            w.u8(0);
            w.u8(0);
            w.u8(0);
            w.u64(0);
        }
        OrderingState::Midoc { max_level, intra } => {
            let (tag, param) = intra.to_raw();
            w.u8(1);
            w.u8(max_level);
            w.u8(tag);
            w.u64(param);
        }
    }
    let ppl = m.ppl.as_deref().unwrap_or(&[]);
    w.u8(ppl.len() as u8);
    for &n in ppl {
        w.u64(n);
    }
    w.u8(u8::from(m.density_cap.is_some()));
    w.u64(m.density_cap.unwrap_or(0));
    w.u64(m.stats.count);
    w.f64s(m.stats.bbox.min);
    w.f64s(m.stats.bbox.max);
    w.f64s(m.stats.centroid);
    for a in &m.stats.attributes {
        w.f64s([a.min, a.max, a.mean]);
    }
    for d in 0..3 {
        w.f64s(p.points.positions.iter().map(|q| q[d]));
    }
    for col in &p.points.attributes {
        w.f64s(col.iter().copied());
    }
}

fn flag(v: u8, what: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Corrupt(format!("bad {what} flag {v}"))),
    }
}

fn read_patch(r: &mut Reader<'_>, n_attrs: usize) -> Result<Patch> {
    let id = r.u64()?;
    let cell = [r.i64()?, r.i64()?, r.i64()?];
    let source = r.u32()?;
    let has_window = flag(r.u8()?, "window")?;
    let window = r.i64()?;
    let ordered = flag(r.u8()?, "ordering")?;
    let max_level = r.u8()?;
    let tag = r.u8()?;
    let param = r.u64()?;
    let ordering = if ordered {
        let intra = IntraOrderKind::from_raw(tag, param).map_err(|e| Error::Corrupt(e.to_string()))?;
        OrderingState::Midoc { max_level, intra }
    } else {
        OrderingState::Unordered
    };
    let ppl_len = usize::from(r.u8()?);
    let ppl: Vec<u64> = (0..ppl_len).map(|_| r.u64()).collect::<Result<_>>()?;
    let has_cap = flag(r.u8()?, "density cap")?;
    let cap = r.u64()?;
    let count = r.u64()?;
    let bbox = Aabb { min: r.f64x3()?, max: r.f64x3()? };
    let centroid = r.f64x3()?;
    let attributes = (0..n_attrs)
        .map(|_| Ok(AttrStats { min: r.f64()?, max: r.f64()?, mean: r.f64()? }))
        .collect::<Result<Vec<_>>>()?;
    let n = usize::try_from(count).map_err(|_| Error::Corrupt("point count too large".into()))?;
    let xs = r.f64_column(n)?;
    let ys = r.f64_column(n)?;
    let zs = r.f64_column(n)?;
    let positions = (0..n).map(|i| [xs[i], ys[i], zs[i]]).collect();
    let columns = (0..n_attrs).map(|_| r.f64_column(n)).collect::<Result<Vec<_>>>()?;
    if ordered && ppl.iter().sum::<u64>() > count {
        return Err(Error::Corrupt(format!("patch {id}: ppl exceeds point count")));
    }
    Ok(Patch {
        meta: PatchMeta {
            id,
            key: GridKey { cell, source, time_window: has_window.then_some(window) },
            ordering,
            ppl: (ppl_len > 0 || ordered).then_some(ppl),
            stats: PatchStats { count, bbox, centroid, attributes },
            density_cap: has_cap.then_some(cap),
        },
        points: PointBlock { positions, attributes: columns },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midoc::OrderOptions;
    use crate::store::PointRecord;

    fn sample() -> Store {
        let schema = Schema::new(["intensity", "time"]);
        let recs = (0..300).map(|i| {
            let t = f64::from(i);
            PointRecord {
                position: [(t * 0.37).sin() * 3.0, (t * 0.11).cos() * 2.0, t * 0.003],
                attributes: vec![t * 0.5, t * 0.2],
            }
        });
        Store::ingest(recs, GridSpec::with_offset(1.0, [0.25, 0.0, 0.0]).unwrap(), schema).0
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = sample();
        s.order_all(OrderOptions { levels: 5, ..Default::default() }, 2).unwrap();
        s.apply_density_target(0, crate::store::DensityTarget::MaxLevel { level: 1 }).unwrap();
        let bytes = s.to_bytes();
        let back = Store::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for id in s.ids() {
            assert_eq!(*back.patch(id).unwrap(), *s.patch(id).unwrap());
        }
    }

    #[test]
    fn truncation_fails_checksum() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 17];
        assert!(matches!(Store::from_bytes(cut), Err(Error::Checksum { .. })));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Store::from_bytes(&flipped), Err(Error::Checksum { .. })));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(Store::from_bytes(&bytes), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.lod");
        let s = sample();
        s.save(&path).unwrap();
        assert_eq!(Store::load(&path).unwrap().to_bytes(), s.to_bytes());
    }
}
