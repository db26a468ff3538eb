//! Patch store: grid ingestion, metadata index, ordering jobs and density
//! correction.
//!
//! Patch metadata (stats, ppl, ordering state) is kept apart from point
//! payloads. Index queries and dense-patch detection only read metadata;
//! every payload access goes through [`Store::patch`] and is counted.

mod ascii;
mod density;
mod format;
mod index;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intralevel::IntraOrderKind;
use crate::midoc::{self, LodTarget, OrderOptions};
use crate::quant::QuantDomain;

pub use ascii::{export_ascii, read_ascii, write_ascii_points};
pub use density::{correct_density, estimate_density, DensityMode, DensityTarget, DEFAULT_DENSITY_LEVEL};
pub use format::{FORMAT_VERSION, MAGIC};
pub use index::{Aabb, AttrRange, CountRange, GridIndex, OrderingFilter, QueryFilter};

pub const ATTR_INTENSITY: &str = "intensity";
pub const ATTR_ECHO: &str = "echo";
pub const ATTR_CLASS: &str = "class";
pub const ATTR_TIME: &str = "time";

/// Maximum acquisition-time span of one patch, in seconds.
pub const TIME_WINDOW: f64 = 30.0;

/// Names of the per-point attribute columns, in storage order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub names: Vec<String>,
}

impl Schema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self { names: names.into_iter().map(Into::into).collect() }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One input point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub position: [f64; 3],
    pub attributes: Vec<f64>,
}

impl PointRecord {
    pub fn new(position: [f64; 3]) -> Self {
        Self { position, attributes: Vec::new() }
    }
}

/// Regular cubic grid anchored at `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub size: f64,
    pub offset: [f64; 3],
}

impl GridSpec {
    pub fn new(size: f64) -> Result<Self> {
        Self::with_offset(size, [0.0; 3])
    }

    pub fn with_offset(size: f64, offset: [f64; 3]) -> Result<Self> {
        if !(size.is_finite() && size > 0.0) {
            return Err(Error::InvalidParameter(format!("grid size must be positive, got {size}")));
        }
        Ok(Self { size, offset })
    }

    /// Cell of a point (`floor`): a point on a shared face belongs to the cell
    /// whose lower face it lies on.
    pub fn cell_of(&self, p: &[f64; 3]) -> [i64; 3] {
        std::array::from_fn(|d| ((p[d] - self.offset[d]) / self.size).floor() as i64)
    }

    pub fn cell_origin(&self, cell: [i64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| self.offset[d] + cell[d] as f64 * self.size)
    }

    pub fn cell_box(&self, cell: [i64; 3]) -> Aabb {
        let min = self.cell_origin(cell);
        Aabb { min, max: std::array::from_fn(|d| min[d] + self.size) }
    }

    pub fn domain(&self, cell: [i64; 3], max_level: u8) -> Result<QuantDomain> {
        QuantDomain::new(self.cell_origin(cell), self.size, max_level)
    }
}

/// Identity of a patch: grid cell, source file and acquisition window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridKey {
    pub cell: [i64; 3],
    pub source: u32,
    pub time_window: Option<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchStats {
    pub count: u64,
    pub bbox: Aabb,
    /// Mean position.
    pub centroid: [f64; 3],
    pub attributes: Vec<AttrStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum OrderingState {
    Unordered,
    Midoc { max_level: u8, intra: IntraOrderKind },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub id: u64,
    pub key: GridKey,
    pub ordering: OrderingState,
    pub ppl: Option<Vec<u64>>,
    pub stats: PatchStats,
    /// Served point cap set by density correction; the payload is untouched.
    pub density_cap: Option<u64>,
}

impl PatchMeta {
    pub fn is_ordered(&self) -> bool {
        matches!(self.ordering, OrderingState::Midoc { .. })
    }

    /// ppl of an ordered patch.
    pub fn ordered_ppl(&self) -> Result<&[u64]> {
        match (&self.ordering, &self.ppl) {
            (OrderingState::Midoc { .. }, Some(ppl)) => Ok(ppl),
            _ => Err(Error::Unordered(self.id)),
        }
    }

    /// Number of points read for `target`, honoring the density cap.
    pub fn served_len(&self, target: LodTarget) -> Result<usize> {
        let ppl = self.ordered_ppl()?;
        let k = midoc::target_len(ppl, self.stats.count as usize, target)?;
        Ok(match self.density_cap {
            Some(cap) => k.min(cap as usize),
            None => k,
        })
    }
}

/// Point payload stored column-wise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointBlock {
    pub positions: Vec<[f64; 3]>,
    /// One column per schema attribute.
    pub attributes: Vec<Vec<f64>>,
}

impl PointBlock {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            positions: order.iter().map(|&i| self.positions[i]).collect(),
            attributes: self
                .attributes
                .iter()
                .map(|col| order.iter().map(|&i| col[i]).collect())
                .collect(),
        }
    }

    /// First `k` points, borrowed.
    pub fn prefix(&self, k: usize) -> PointsView<'_> {
        PointsView {
            positions: &self.positions[..k],
            attributes: self.attributes.iter().map(|c| &c[..k]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointsView<'a> {
    pub positions: &'a [[f64; 3]],
    pub attributes: Vec<&'a [f64]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub meta: PatchMeta,
    pub points: PointBlock,
}

impl Patch {
    /// LOD prefix of an ordered patch.
    pub fn lod_prefix(&self, target: LodTarget) -> Result<PointsView<'_>> {
        let ppl = self.meta.ordered_ppl()?;
        let k = midoc::target_len(ppl, self.points.len(), target)?;
        Ok(self.points.prefix(k))
    }

    /// Prefix honoring the density cap, as served to clients.
    pub fn served_prefix(&self, target: LodTarget) -> Result<PointsView<'_>> {
        Ok(self.points.prefix(self.meta.served_len(target)?))
    }
}

fn compute_stats(points: &PointBlock) -> PatchStats {
    let n = points.len();
    let mut min = points.positions[0];
    let mut max = points.positions[0];
    let mut sum = [0.0; 3];
    for p in &points.positions {
        for d in 0..3 {
            min[d] = min[d].min(p[d]);
            max[d] = max[d].max(p[d]);
            sum[d] += p[d];
        }
    }
    let centroid = std::array::from_fn(|d| (sum[d] / n as f64).clamp(min[d], max[d]));
    let attributes = points
        .attributes
        .iter()
        .map(|col| {
            let (lo, hi, sum) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &v| (lo.min(v), hi.max(v), s + v));
            // Clamp guards against rounding pushing the mean outside [min, max].
            AttrStats { min: lo, max: hi, mean: (sum / n as f64).clamp(lo, hi) }
        })
        .collect();
    PatchStats { count: n as u64, bbox: Aabb { min, max }, centroid, attributes }
}

/// Counts from one ingestion run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub points_read: u64,
    pub points_stored: u64,
    pub skipped_non_finite: u64,
    pub skipped_bad_arity: u64,
    pub patches: u64,
}

/// Accumulates points from one or more sources into grid patches.
pub struct Ingestor {
    grid: GridSpec,
    schema: Schema,
    time_col: Option<usize>,
    groups: BTreeMap<GridKey, PointBlock>,
    report: IngestReport,
}

impl Ingestor {
    pub fn new(grid: GridSpec, schema: Schema) -> Self {
        let time_col = schema.index_of(ATTR_TIME);
        Self { grid, schema, time_col, groups: BTreeMap::new(), report: IngestReport::default() }
    }

    pub fn push(&mut self, source: u32, record: PointRecord) {
        self.report.points_read += 1;
        if record.attributes.len() != self.schema.len() {
            self.report.skipped_bad_arity += 1;
            return;
        }
        if record.position.iter().any(|v| !v.is_finite()) {
            self.report.skipped_non_finite += 1;
            return;
        }
        let time_window = self
            .time_col
            .map(|c| (record.attributes[c] / TIME_WINDOW).floor() as i64);
        let key = GridKey { cell: self.grid.cell_of(&record.position), source, time_window };
        let block = self.groups.entry(key).or_insert_with(|| PointBlock {
            positions: Vec::new(),
            attributes: vec![Vec::new(); self.schema.len()],
        });
        block.positions.push(record.position);
        for (col, v) in block.attributes.iter_mut().zip(record.attributes) {
            col.push(v);
        }
        self.report.points_stored += 1;
    }

    pub fn extend(&mut self, source: u32, records: impl IntoIterator<Item = PointRecord>) {
        for r in records {
            self.push(source, r);
        }
    }

    pub fn finish(mut self) -> (Store, IngestReport) {
        let patches: Vec<Patch> = std::mem::take(&mut self.groups)
            .into_iter()
            .enumerate()
            .map(|(id, (key, points))| Patch {
                meta: PatchMeta {
                    id: id as u64,
                    key,
                    ordering: OrderingState::Unordered,
                    ppl: None,
                    stats: compute_stats(&points),
                    density_cap: None,
                },
                points,
            })
            .collect();
        self.report.patches = patches.len() as u64;
        (Store::from_patches(self.grid, self.schema, patches), self.report)
    }
}

/// Report of an ordering run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub ordered: u64,
    pub skipped: u64,
    pub points: u64,
    pub seconds: f64,
    pub workers: usize,
}

impl OrderReport {
    pub fn points_per_hour(&self) -> f64 {
        if self.seconds > 0.0 {
            self.points as f64 / self.seconds * 3600.0
        } else {
            0.0
        }
    }
}

pub struct Store {
    grid: GridSpec,
    schema: Schema,
    patches: Vec<RwLock<Arc<Patch>>>,
    index: GridIndex,
    payload_reads: AtomicU64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("grid", &self.grid)
            .field("schema", &self.schema)
            .field("patches", &self.patches.len())
            .finish()
    }
}

impl Store {
    /// Groups `records` (single source) into patches.
    pub fn ingest(records: impl IntoIterator<Item = PointRecord>, grid: GridSpec, schema: Schema) -> (Self, IngestReport) {
        let mut ing = Ingestor::new(grid, schema);
        ing.extend(0, records);
        ing.finish()
    }

    pub(crate) fn from_patches(grid: GridSpec, schema: Schema, patches: Vec<Patch>) -> Self {
        let index = GridIndex::build(patches.iter().map(|p| &p.meta));
        Self {
            grid,
            schema,
            patches: patches.into_iter().map(|p| RwLock::new(Arc::new(p))).collect(),
            index,
            payload_reads: AtomicU64::new(0),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> {
        0..self.patches.len() as u64
    }

    pub fn index(&self) -> &GridIndex {
        &self.index
    }

    pub fn total_points(&self) -> u64 {
        self.index.total_points()
    }

    fn slot(&self, id: u64) -> Result<&RwLock<Arc<Patch>>> {
        self.patches.get(id as usize).ok_or(Error::UnknownPatch(id))
    }

    fn snapshot(&self, id: u64) -> Result<Arc<Patch>> {
        Ok(self.slot(id)?.read().expect("patch lock poisoned").clone())
    }

    /// Patch metadata. Does not count as a payload read.
    pub fn meta(&self, id: u64) -> Result<PatchMeta> {
        Ok(self.snapshot(id)?.meta.clone())
    }

    pub fn metas(&self) -> Vec<PatchMeta> {
        self.ids().map(|id| self.meta(id).expect("id in range")).collect()
    }

    /// Full patch, payload included.
    pub fn patch(&self, id: u64) -> Result<Arc<Patch>> {
        let p = self.snapshot(id)?;
        self.payload_reads.fetch_add(1, Ordering::Relaxed);
        Ok(p)
    }

    /// Number of payload reads since the store was opened.
    pub fn payload_reads(&self) -> u64 {
        self.payload_reads.load(Ordering::Relaxed)
    }

    /// Commits a new version of a patch. Readers see the old or the new
    /// version, never a mix.
    fn commit(&self, patch: Patch) -> Result<()> {
        let slot = self.slot(patch.meta.id)?;
        *slot.write().expect("patch lock poisoned") = Arc::new(patch);
        Ok(())
    }

    /// Quantization domain of a patch.
    pub fn domain(&self, meta: &PatchMeta, max_level: u8) -> Result<QuantDomain> {
        self.grid.domain(meta.key.cell, max_level)
    }

    /// MidOc-orders one patch. Returns `false` when it was already ordered
    /// with the same options.
    pub fn order_patch(&self, id: u64, opts: OrderOptions) -> Result<bool> {
        let current = self.patch(id)?;
        let wanted = OrderingState::Midoc { max_level: opts.levels, intra: opts.intra };
        if current.meta.ordering == wanted {
            return Ok(false);
        }
        let domain = self.domain(&current.meta, opts.levels.max(1))?;
        let res = midoc::order_points(&current.points.positions, &domain, opts)?;
        let mut meta = current.meta.clone();
        meta.ordering = wanted;
        meta.ppl = Some(res.ppl);
        self.commit(Patch { meta, points: current.points.permuted(&res.order) })?;
        Ok(true)
    }

    /// Orders every patch with `workers` threads, one patch per task.
    pub fn order_all(&self, opts: OrderOptions, workers: usize) -> Result<OrderReport> {
        let start = Instant::now();
        let ids: Vec<u64> = self.ids().collect();
        let job = |id: u64| -> Result<(bool, u64)> {
            let done = self.order_patch(id, opts)?;
            let n = if done { self.meta(id)?.stats.count } else { 0 };
            Ok((done, n))
        };
        let results: Vec<Result<(bool, u64)>> = run_parallel(&ids, workers, job)?;
        let mut report = OrderReport { workers: workers.max(1), ..Default::default() };
        for r in results {
            let (done, n) = r?;
            if done {
                report.ordered += 1;
                report.points += n;
            } else {
                report.skipped += 1;
            }
        }
        report.seconds = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Patch ids satisfying every filter, ascending.
    pub fn query(&self, filter: &QueryFilter) -> Result<Vec<u64>> {
        let candidates = self.index.query(filter, &self.schema)?;
        let Some(want) = filter.ordering else {
            return Ok(candidates);
        };
        let mut out = Vec::with_capacity(candidates.len());
        for id in candidates {
            if want.matches(&self.meta(id)?.ordering) {
                out.push(id);
            }
        }
        Ok(out)
    }

    /// Patches with at least `count_threshold` points. Reads statistics only.
    pub fn detect_dense(&self, count_threshold: u64) -> Vec<u64> {
        self.index.count_at_least(count_threshold)
    }

    /// Stores a served-point cap on a patch from a density target.
    pub fn apply_density_target(&self, id: u64, target: DensityTarget) -> Result<usize> {
        let current = self.snapshot(id)?;
        let k = correct_density(&current.meta, self.grid.size, target)?;
        let mut patch = (*current).clone();
        patch.meta.density_cap = Some(k as u64);
        self.commit(patch)?;
        Ok(k)
    }

    pub fn clear_density_cap(&self, id: u64) -> Result<()> {
        let current = self.snapshot(id)?;
        let mut patch = (*current).clone();
        patch.meta.density_cap = None;
        self.commit(patch)
    }
}

#[cfg(feature = "parallel")]
fn run_parallel<T, F>(ids: &[u64], workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    Ok(pool.install(|| ids.par_iter().map(|&id| job(id)).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<T, F>(ids: &[u64], _workers: usize, job: F) -> Result<Vec<T>>
where
    F: Fn(u64) -> T,
{
    Ok(ids.iter().map(|&id| job(id)).collect())
}
