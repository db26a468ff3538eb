//! Serving LOD prefixes of stored patches.
//!
//! Packed binary responses start with a header:
//!
//! ```text
//! magic "LODB" | version u16 | origin 3*f64 | attribute count u16
//! | per attribute: name length u16, UTF-8 name
//! ```
//!
//! followed by frames, one per patch and level:
//!
//! ```text
//! patch id u64 | point count u32 | (x, y, z) f32 * count | per attribute: f32 * count
//! ```
//!
//! Coordinates are relative to the header origin. Frames of one patch come in
//! level order, so the response for level `L` is a byte prefix of the
//! response for level `L + 1` and a client can fetch only the frames it is
//! missing with `from_level`.

#[cfg(feature = "server")]
mod http;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[cfg(feature = "server")]
pub use http::{router, serve};

use crate::descriptor::{dim_lod, FusionMethod};
use crate::error::{Error, Result};
use crate::midoc::LodTarget;
use crate::store::{Aabb, AttrStats, Patch, PatchMeta, QueryFilter, Store};

pub const PACKED_MAGIC: &[u8; 4] = b"LODB";
pub const PACKED_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RingLevel {
    Full,
    Level(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    /// Exclusive upper bound on the camera distance.
    pub max_distance: f64,
    pub level: RingLevel,
}

/// Camera distance bands, nearest first. Patches beyond the last band get
/// its level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingTable(pub Vec<Ring>);

impl Default for RingTable {
    fn default() -> Self {
        let ring = |d: f64, level| Ring { max_distance: d, level };
        Self(vec![
            ring(10.0, RingLevel::Full),
            ring(20.0, RingLevel::Level(4)),
            ring(40.0, RingLevel::Level(3)),
            ring(80.0, RingLevel::Level(2)),
            ring(160.0, RingLevel::Level(1)),
            ring(f64::INFINITY, RingLevel::Level(0)),
        ])
    }
}

impl RingTable {
    pub fn new(rings: Vec<Ring>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::InvalidParameter("ring table is empty".into()));
        }
        for w in rings.windows(2) {
            if w[0].max_distance.partial_cmp(&w[1].max_distance) != Some(std::cmp::Ordering::Less) {
                return Err(Error::InvalidParameter("ring distances must be strictly increasing".into()));
            }
        }
        if rings.iter().any(|r| r.max_distance.is_nan() || r.max_distance <= 0.0) {
            return Err(Error::InvalidParameter("ring distances must be positive".into()));
        }
        Ok(Self(rings))
    }

    pub fn level_at(&self, distance: f64) -> RingLevel {
        self.0
            .iter()
            .find(|r| distance < r.max_distance)
            .unwrap_or_else(|| self.0.last().expect("non-empty"))
            .level
    }

    /// Parses `10:full,20:4,...,inf:0`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad ring table {s:?}"));
        let rings = s
            .split(',')
            .map(|item| {
                let (d, l) = item.trim().split_once(':').ok_or_else(bad)?;
                let max_distance = if d == "inf" { f64::INFINITY } else { d.parse().map_err(|_| bad())? };
                let level = if l == "full" { RingLevel::Full } else { RingLevel::Level(l.parse().map_err(|_| bad())?) };
                Ok(Ring { max_distance, level })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rings)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LodSpec {
    Level { level: u8 },
    /// At most this many points per patch.
    MaxPoints { max_points: usize },
    Camera { position: [f64; 3], rings: RingTable },
    Full,
}

impl LodSpec {
    /// Target for one patch.
    pub fn target_for(&self, meta: &PatchMeta) -> Result<LodTarget> {
        Ok(match self {
            LodSpec::Level { level } => LodTarget::Level(*level),
            LodSpec::MaxPoints { max_points } => LodTarget::Points((*max_points).min(meta.stats.count as usize)),
            LodSpec::Full => LodTarget::Full,
            LodSpec::Camera { position, rings } => {
                let c = meta.stats.bbox.center();
                let d = (0..3).map(|k| (c[k] - position[k]).powi(2)).sum::<f64>().sqrt();
                match rings.level_at(d) {
                    RingLevel::Full => LodTarget::Full,
                    RingLevel::Level(l) => {
                        let depth = meta.ordered_ppl()?.len() - 1;
                        LodTarget::Level(l.min(depth as u8))
                    }
                }
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Packed,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LodRequest {
    pub bbox: Option<Aabb>,
    pub lod: LodSpec,
    pub format: Format,
    /// Attribute columns to include.
    pub attributes: Vec<String>,
    /// Skip frames of coarser levels (delta fetch).
    pub from_level: u8,
}

impl Default for LodRequest {
    fn default() -> Self {
        Self { bbox: None, lod: LodSpec::Full, format: Format::Packed, attributes: Vec::new(), from_level: 0 }
    }
}

impl LodRequest {
    pub fn level(level: u8) -> Self {
        Self { lod: LodSpec::Level { level }, ..Default::default() }
    }

    /// Builds a request from URL query parameters: `bbox`, one of `level`,
    /// `maxpoints` or `camera` (with optional `rings`), `format`, `attrs`
    /// and `from_level`.
    pub fn from_query(q: &BTreeMap<String, String>) -> Result<Self> {
        let bad = |k: &str, v: &str| Error::InvalidParameter(format!("bad value {v:?} for {k}"));
        let mut req = Self::default();
        if let Some(b) = q.get("bbox") {
            req.bbox = Some(Aabb::parse(b)?);
        }
        let targets = ["level", "maxpoints", "camera"].iter().filter(|k| q.contains_key(**k)).count();
        if targets > 1 {
            return Err(Error::InvalidParameter("give at most one of level, maxpoints, camera".into()));
        }
        if let Some(v) = q.get("level") {
            req.lod = if v == "full" {
                LodSpec::Full
            } else {
                LodSpec::Level { level: v.parse().map_err(|_| bad("level", v))? }
            };
        }
        if let Some(v) = q.get("maxpoints") {
            let max_points: usize = v.parse().map_err(|_| bad("maxpoints", v))?;
            if max_points == 0 {
                return Err(bad("maxpoints", v));
            }
            req.lod = LodSpec::MaxPoints { max_points };
        }
        if let Some(v) = q.get("camera") {
            let c: Vec<f64> = v.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("camera", v))?;
            if c.len() != 3 || c.iter().any(|x| x.is_nan()) {
                return Err(bad("camera", v));
            }
            let rings = match q.get("rings") {
                Some(r) => RingTable::parse(r)?,
                None => RingTable::default(),
            };
            req.lod = LodSpec::Camera { position: [c[0], c[1], c[2]], rings };
        }
        if let Some(v) = q.get("format") {
            req.format = match v.as_str() {
                "packed" => Format::Packed,
                "json" => Format::Json,
                _ => return Err(bad("format", v)),
            };
        }
        if let Some(v) = q.get("attrs") {
            req.attributes = v.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
        }
        if let Some(v) = q.get("from_level") {
            req.from_level = v.parse().map_err(|_| bad("from_level", v))?;
        }
        Ok(req)
    }
}

/// Error with an HTTP-like status.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceError {
    pub status: u16,
    pub error: String,
    /// Offending patch ids, if any.
    pub ids: Vec<u64>,
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Unordered(_) => 409,
            Error::UnknownPatch(_) => 404,
            Error::InvalidFilter(_)
            | Error::InvalidParameter(_)
            | Error::LevelOutOfRange { .. }
            | Error::PrefixTooLong { .. }
            | Error::Parse { .. } => 400,
            _ => 500,
        };
        let ids = match e {
            Error::Unordered(id) | Error::UnknownPatch(id) => vec![id],
            _ => vec![],
        };
        Self { status, error: e.to_string(), ids }
    }
}

/// Patches of a request with their resolved point counts, checked up front
/// so that no partial response is produced for an invalid request.
#[derive(Clone, Debug, PartialEq)]
pub struct ServePlan {
    pub ids: Vec<u64>,
    pub counts: Vec<usize>,
    pub attributes: Vec<usize>,
    pub origin: [f64; 3],
}

pub fn plan(store: &Store, req: &LodRequest) -> std::result::Result<ServePlan, ServiceError> {
    let filter = QueryFilter { bbox: req.bbox, ..Default::default() };
    let ids = store.query(&filter)?;
    let unordered: Vec<u64> = ids.iter().copied().filter(|&id| !store.meta(id).map(|m| m.is_ordered()).unwrap_or(false)).collect();
    if !unordered.is_empty() {
        return Err(ServiceError {
            status: 409,
            error: format!("{} patch(es) in range are not ordered", unordered.len()),
            ids: unordered,
        });
    }
    let mut counts = Vec::with_capacity(ids.len());
    for &id in &ids {
        let meta = store.meta(id)?;
        counts.push(meta.served_len(req.lod.target_for(&meta)?)?);
    }
    let attributes = req
        .attributes
        .iter()
        .map(|name| {
            store
                .schema()
                .index_of(name)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown attribute {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ServePlan { ids, counts, attributes, origin: store.grid().offset })
}

pub fn packed_header(origin: [f64; 3], names: &[&str]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&PACKED_VERSION.to_le_bytes());
    for v in origin {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(names.len() as u16).to_le_bytes());
    for n in names {
        out.extend_from_slice(&(n.len() as u16).to_le_bytes());
        out.extend_from_slice(n.as_bytes());
    }
    out
}

/// Point ranges of the frames covering the first `n` points: one per level,
/// then one for the leftovers.
pub fn frame_ranges(ppl: &[u64], n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for &k in ppl.iter().chain(std::iter::once(&u64::MAX)) {
        if start >= n {
            break;
        }
        let end = start.saturating_add(k as usize).min(n);
        out.push((start, end));
        start = end;
    }
    out
}

/// Appends the frames of one patch.
pub fn encode_patch(patch: &Patch, n: usize, attributes: &[usize], origin: [f64; 3], from_level: u8, out: &mut Vec<u8>) {
    let ppl = patch.meta.ppl.as_deref().unwrap_or(&[]);
    for (level, (start, end)) in frame_ranges(ppl, n).into_iter().enumerate() {
        if level < usize::from(from_level) {
            continue;
        }
        out.extend_from_slice(&patch.meta.id.to_le_bytes());
        out.extend_from_slice(&((end - start) as u32).to_le_bytes());
        for p in &patch.points.positions[start..end] {
            for k in 0..3 {
                out.extend_from_slice(&((p[k] - origin[k]) as f32).to_le_bytes());
            }
        }
        for &col in attributes {
            for v in &patch.points.attributes[col][start..end] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
}

/// Packed response as a sequence of chunks: the header, then one chunk per
/// patch.
pub struct PackedStream {
    store: Arc<Store>,
    plan: ServePlan,
    from_level: u8,
    header: Option<Vec<u8>>,
    next: usize,
}

impl Iterator for PackedStream {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(h) = self.header.take() {
            return Some(Ok(h));
        }
        let i = self.next;
        let id = *self.plan.ids.get(i)?;
        self.next += 1;
        Some(self.store.patch(id).map(|patch| {
            let mut out = Vec::new();
            encode_patch(&patch, self.plan.counts[i], &self.plan.attributes, self.plan.origin, self.from_level, &mut out);
            out
        }))
    }
}

pub fn packed_stream(store: Arc<Store>, req: &LodRequest) -> std::result::Result<PackedStream, ServiceError> {
    let plan = plan(&store, req)?;
    let names: Vec<&str> = req.attributes.iter().map(String::as_str).collect();
    let header = packed_header(plan.origin, &names);
    Ok(PackedStream { store, plan, from_level: req.from_level, header: Some(header), next: 0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonPatch {
    pub id: u64,
    /// Points per frame, as in the packed layout.
    pub frame_counts: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    pub attributes: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonResponse {
    pub patches: Vec<JsonPatch>,
}

pub fn serve_json(store: &Store, req: &LodRequest) -> std::result::Result<JsonResponse, ServiceError> {
    let plan = plan(store, req)?;
    let mut patches = Vec::with_capacity(plan.ids.len());
    for (&id, &n) in plan.ids.iter().zip(&plan.counts) {
        let patch = store.patch(id)?;
        let ranges = frame_ranges(patch.meta.ppl.as_deref().unwrap_or(&[]), n);
        let skip = usize::from(req.from_level).min(ranges.len());
        let start = ranges.get(skip).map_or(n, |r| r.0);
        let attributes = req
            .attributes
            .iter()
            .zip(&plan.attributes)
            .map(|(name, &col)| (name.clone(), patch.points.attributes[col][start..n].to_vec()))
            .collect();
        patches.push(JsonPatch {
            id,
            frame_counts: ranges[skip..].iter().map(|(a, b)| b - a).collect(),
            positions: patch.points.positions[start..n].to_vec(),
            attributes,
        });
    }
    Ok(JsonResponse { patches })
}

/// Collects a whole packed response.
pub fn serve_packed(store: Arc<Store>, req: &LodRequest) -> std::result::Result<Vec<u8>, ServiceError> {
    let mut out = Vec::new();
    for chunk in packed_stream(store, req)? {
        out.extend(chunk?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub patch_id: u64,
    pub positions: Vec<[f32; 3]>,
    pub attributes: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackedResponse {
    pub origin: [f64; 3],
    pub attributes: Vec<String>,
    pub frames: Vec<Frame>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| Error::Corrupt("truncated packed response".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

/// Parses a packed response.
pub fn decode_packed(bytes: &[u8]) -> Result<PackedResponse> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != PACKED_MAGIC {
        return Err(Error::Corrupt("bad packed magic".into()));
    }
    let version = c.u16()?;
    if version != PACKED_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: PACKED_VERSION });
    }
    let mut origin = [0.0; 3];
    for o in &mut origin {
        *o = f64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
    }
    let n_attr = c.u16()?;
    let mut attributes = Vec::new();
    for _ in 0..n_attr {
        let len = c.u16()?;
        let name = std::str::from_utf8(c.take(len.into())?).map_err(|_| Error::Corrupt("attribute name is not UTF-8".into()))?;
        attributes.push(name.to_owned());
    }
    let mut frames = Vec::new();
    while c.pos < bytes.len() {
        let patch_id = u64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
        let count = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes")) as usize;
        let positions = c.f32s(count * 3)?.chunks_exact(3).map(|v| [v[0], v[1], v[2]]).collect();
        let cols = (0..n_attr).map(|_| c.f32s(count)).collect::<Result<Vec<_>>>()?;
        frames.push(Frame { patch_id, positions, attributes: cols });
    }
    Ok(PackedResponse { origin, attributes, frames })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSummary {
    pub id: u64,
    pub cell: [i64; 3],
    pub source: u32,
    pub time_window: Option<i64>,
    pub count: u64,
    pub bbox: Aabb,
    pub centroid: [f64; 3],
    pub ordered: bool,
    pub ppl: Option<Vec<u64>>,
    /// Fused Dim_LOD, when ordered and defined.
    pub dim_lod: Option<f64>,
    pub density_cap: Option<u64>,
    pub attributes: BTreeMap<String, AttrStats>,
}

/// Metadata of the patches intersecting `bbox`. Reads no payload.
pub fn serve_stats(store: &Store, bbox: Option<Aabb>) -> std::result::Result<Vec<PatchSummary>, ServiceError> {
    let ids = store.query(&QueryFilter { bbox, ..Default::default() })?;
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let m = store.meta(id)?;
        let dim = m.ppl.as_deref().filter(|_| m.is_ordered()).and_then(|p| dim_lod(p, FusionMethod::Ransac).ok());
        out.push(PatchSummary {
            id,
            cell: m.key.cell,
            source: m.key.source,
            time_window: m.key.time_window,
            count: m.stats.count,
            bbox: m.stats.bbox,
            centroid: m.stats.centroid,
            ordered: m.is_ordered(),
            dim_lod: dim.map(|d| d.fused),
            ppl: m.ppl,
            density_cap: m.density_cap,
            attributes: store.schema().names.iter().cloned().zip(m.stats.attributes.iter().copied()).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midoc::OrderOptions;
    use crate::store::{GridSpec, PointRecord, Schema};

    fn segment_store() -> Arc<Store> {
        let recs = (0..64).map(|i| PointRecord {
            position: [(f64::from(i) + 0.5) / 64.0, 7.5 / 16.0, 7.5 / 16.0],
            attributes: vec![f64::from(i)],
        });
        let (s, _) = Store::ingest(recs, GridSpec::new(1.0).unwrap(), Schema::new(["intensity"]));
        s.order_all(OrderOptions { levels: 4, ..Default::default() }, 1).unwrap();
        Arc::new(s)
    }

    fn frames_points(bytes: &[u8]) -> usize {
        decode_packed(bytes).unwrap().frames.iter().map(|f| f.positions.len()).sum()
    }

    #[test]
    fn level_three_is_fifteen_points() {
        let s = segment_store();
        assert_eq!(frames_points(&serve_packed(s, &LodRequest::level(3)).unwrap()), 15);
    }

    #[test]
    fn levels_are_byte_prefixes() {
        let s = segment_store();
        let mut prev = serve_packed(s.clone(), &LodRequest::level(0)).unwrap();
        for l in 1..=4 {
            let cur = serve_packed(s.clone(), &LodRequest::level(l)).unwrap();
            assert!(cur.starts_with(&prev));
            prev = cur;
        }
        let full = serve_packed(s, &LodRequest::default()).unwrap();
        assert!(full.starts_with(&prev));
        assert_eq!(frames_points(&full), 64);
    }

    #[test]
    fn delta_fetch_appends() {
        let s = segment_store();
        let base = serve_packed(s.clone(), &LodRequest::level(2)).unwrap();
        let delta = serve_packed(s.clone(), &LodRequest { from_level: 3, ..LodRequest::level(3) }).unwrap();
        let header_len = packed_header(s.grid().offset, &[]).len();
        let mut joined = base.clone();
        joined.extend_from_slice(&delta[header_len..]);
        assert_eq!(joined, serve_packed(s, &LodRequest::level(3)).unwrap());
    }

    #[test]
    fn camera_far_away_gives_one_point() {
        let s = segment_store();
        let req = LodRequest {
            lod: LodSpec::Camera { position: [1e9, 0.0, 0.0], rings: RingTable::default() },
            ..Default::default()
        };
        assert_eq!(frames_points(&serve_packed(s, &req).unwrap()), 1);
    }

    #[test]
    fn unordered_is_conflict() {
        let (s, _) = Store::ingest(
            vec![PointRecord::new([0.5; 3]), PointRecord::new([1.5, 0.5, 0.5])],
            GridSpec::new(1.0).unwrap(),
            Schema::default(),
        );
        let err = serve_packed(Arc::new(s), &LodRequest::level(0)).unwrap_err();
        assert_eq!(err.status, 409);
        assert_eq!(err.ids, vec![0, 1]);
    }

    #[test]
    fn query_parsing() {
        let q: BTreeMap<String, String> =
            [("camera", "1,2,3"), ("rings", "5:full,inf:1"), ("attrs", "intensity")].into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        let r = LodRequest::from_query(&q).unwrap();
        match r.lod {
            LodSpec::Camera { position, rings } => {
                assert_eq!(position, [1.0, 2.0, 3.0]);
                assert_eq!(rings.level_at(4.0), RingLevel::Full);
                assert_eq!(rings.level_at(1e300), RingLevel::Level(1));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad: BTreeMap<String, String> = [("level".into(), "2".into()), ("maxpoints".into(), "3".into())].into();
        assert!(LodRequest::from_query(&bad).is_err());
        assert!(RingTable::parse("5:1,4:2").is_err());
        let bbox: BTreeMap<String, String> = [("bbox".into(), "1,1,1,0,0,0".into())].into();
        assert_eq!(ServiceError::from(LodRequest::from_query(&bbox).unwrap_err()).status, 400);
    }

    #[test]
    fn stats_read_no_payload() {
        let s = segment_store();
        let before = s.payload_reads();
        let st = serve_stats(&s, None).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].count, 64);
        assert_eq!(st[0].ppl.as_deref(), Some(&[1, 2, 4, 8, 16][..]));
        assert_eq!(s.payload_reads(), before);
        let empty = serve_stats(&s, Some(Aabb::new([5.0; 3], [6.0; 3]).unwrap())).unwrap();
        assert!(empty.is_empty());
    }
}
