//! Command-line entry point. Every command prints one JSON report on stdout
//! and exits with status 0 exactly when the report lists no error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::classify::{
    balance, evaluate_kfold, patch_labels, precision_boost, recall_boost, spectral_layout, train_forest, BalanceStrategy,
    Dataset, FeatureSet, ForestModel, ForestParams, LabelMap,
};
use crate::descriptor::{dim_cov, dim_lod, FusionMethod};
use crate::intralevel::IntraOrderKind;
use crate::midoc::{LodTarget, OrderOptions};
use crate::store::{
    export_ascii, read_ascii, Aabb, DensityMode, DensityTarget, GridSpec, Ingestor, QueryFilter, Schema, Store,
    DEFAULT_DENSITY_LEVEL,
};
use crate::synth;

#[derive(Parser, Debug)]
#[command(name = "lodpatch", version, about = "Patch point cloud store with implicit level of detail")]
pub struct Cli {
    /// TOML file whose keys are long flag names; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read ASCII point files (`x y z [attributes]`) into a new store.
    Ingest {
        #[arg(long)]
        store: PathBuf,
        /// One or more input files; each becomes its own source.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Patch side length.
        #[arg(long, default_value_t = 1.0)]
        grid_size: f64,
        /// Grid origin `x,y,z`, for data far from the coordinate origin.
        #[arg(long)]
        grid_offset: Option<String>,
    },
    /// MidOc-order every patch (already ordered patches are skipped).
    Order {
        #[arg(long)]
        store: PathBuf,
        /// Deepest octree level.
        #[arg(long, default_value_t = 8)]
        levels: u8,
        /// Within-level order: axis-y, random:SEED, halton, reverse-morton[:OFF], reverse-hilbert[:OFF].
        #[arg(long, default_value = "reverse-morton")]
        intra: String,
    },
    /// Write patches as ASCII, optionally only a LOD prefix of each.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, conflicts_with = "points")]
        level: Option<u8>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        bbox: Option<String>,
    },
    /// Store summary and optional per-patch descriptor table.
    Stats {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        bbox: Option<String>,
        /// Write `id,count,ppl,dim_lod,...` rows to this CSV file.
        #[arg(long)]
        descriptors: Option<PathBuf>,
        /// Also compute the covariance dimension (reads every payload).
        #[arg(long)]
        cov: bool,
        /// Patches with at least this many points are listed as dense.
        #[arg(long)]
        dense: Option<u64>,
    },
    /// Cap the served points of ordered patches.
    Density {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, conflicts_with_all = ["max_density", "clear"])]
        max_level: Option<u8>,
        /// Points per cubic (or square) unit.
        #[arg(long, conflicts_with = "clear")]
        max_density: Option<f64>,
        /// Level at which the occupied extent is estimated.
        #[arg(long, default_value_t = DEFAULT_DENSITY_LEVEL)]
        level: u8,
        #[arg(long)]
        surface: bool,
        /// Remove existing caps.
        #[arg(long)]
        clear: bool,
    },
    /// Train, evaluate and apply the patch classifier.
    Classify {
        #[command(subcommand)]
        command: ClassifyCommand,
    },
    /// Serve `GET /patches` and `GET /stats`.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write a synthetic ASCII point file.
    Synth {
        /// segment, lattice:DIM:LEVEL, classes, ground or dense.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Patches per class for `classes`.
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Patch count for `dense`.
        #[arg(long, default_value_t = 10)]
        patches: usize,
        /// Points per patch for `dense`.
        #[arg(long, default_value_t = 100_000)]
        points: usize,
    },
}

#[derive(clap::Args, Debug)]
pub struct LabelArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// `patch_id,class` CSV; without it labels come from the majority `class` attribute.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// `from,to` CSV renaming or merging classes.
    #[arg(long)]
    pub label_map: Option<PathBuf>,
    /// Comma separated features, e.g. `ppl1,ppl2,ppl3,ppl4,height`.
    #[arg(long)]
    pub features: Option<String>,
}

#[derive(clap::Args, Debug)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// none, weights or undersample:RATIO.
    #[arg(long, default_value = "none")]
    pub balance: String,
}

#[derive(Subcommand, Debug)]
pub enum ClassifyCommand {
    Train {
        #[command(flatten)]
        labels: LabelArgs,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        model: PathBuf,
    },
    Eval {
        #[command(flatten)]
        labels: LabelArgs,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        /// Confusion matrix CSV output.
        #[arg(long)]
        confusion: Option<PathBuf>,
        /// Spectral layout CSV output.
        #[arg(long)]
        layout: Option<PathBuf>,
    },
    Predict {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Prediction CSV output.
        #[arg(long)]
        output: PathBuf,
        /// Drop predictions below this confidence.
        #[arg(long)]
        min_confidence: Option<f64>,
        /// Grow the predictions of `--target-class` by `DXY,DZ`.
        #[arg(long, requires = "target_class")]
        recall_boost: Option<String>,
        #[arg(long)]
        target_class: Option<String>,
    },
}

#[derive(Debug, Default, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Default, Serialize)]
pub struct Report {
    pub command: String,
    pub ok: bool,
    pub errors: Vec<String>,
    pub stages: Vec<Stage>,
    pub result: Value,
}

impl Report {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(Stage { name: name.to_owned(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}

fn with_override_self(cmd: clap::Command) -> clap::Command {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_owned()).collect();
    let mut cmd = cmd.args_override_self(true);
    for n in names {
        cmd = cmd.mut_subcommand(n, with_override_self);
    }
    cmd
}

fn deepest(m: &ArgMatches) -> &ArgMatches {
    match m.subcommand() {
        Some((_, sub)) => deepest(sub),
        None => m,
    }
}

fn toml_flags(key: &str, value: &toml::Value, out: &mut Vec<OsString>) -> anyhow::Result<()> {
    let flag = format!("--{}", key.replace('_', "-"));
    match value {
        toml::Value::Boolean(true) => out.push(flag.into()),
        toml::Value::Boolean(false) => {}
        toml::Value::String(s) => out.extend([flag.into(), s.into()]),
        toml::Value::Integer(i) => out.extend([flag.into(), i.to_string().into()]),
        toml::Value::Float(f) => out.extend([flag.into(), f.to_string().into()]),
        toml::Value::Array(items) => {
            for v in items {
                toml_flags(key, v, out)?;
            }
        }
        other => bail!("config key {key:?} has unsupported value {other}"),
    }
    Ok(())
}

/// Parses arguments, then fills flags missing from the command line from the
/// `--config` file.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cmd = with_override_self(Cli::command());
    let matches = cmd.clone().try_get_matches_from(&argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let Some(path) = &cli.config else { return Ok(cli) };
    let text = fs::read_to_string(path).map_err(|e| {
        Cli::command().error(clap::error::ErrorKind::Io, format!("cannot read config {}: {e}", path.display()))
    })?;
    let table: toml::Table = text.parse().map_err(|e| {
        Cli::command().error(clap::error::ErrorKind::InvalidValue, format!("bad config {}: {e}", path.display()))
    })?;
    let leaf = deepest(&matches);
    let mut extra = Vec::new();
    for (key, value) in &table {
        let id = key.replace('-', "_");
        let given = leaf.try_contains_id(&id).unwrap_or(false) && leaf.value_source(&id) == Some(ValueSource::CommandLine);
        if !given {
            toml_flags(key, value, &mut extra)
                .map_err(|e| Cli::command().error(clap::error::ErrorKind::InvalidValue, e.to_string()))?;
        }
    }
    let mut full = argv;
    full.extend(extra);
    let matches = cmd.try_get_matches_from(full)?;
    Cli::from_arg_matches(&matches)
}

/// Runs the command line and prints the report. Returns the exit status.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match parse(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let report = Report { command: "parse".into(), ok: false, errors: vec![e.to_string()], ..Default::default() };
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            return 2;
        }
    };
    let mut report = Report { command: command_name(&cli.command).into(), ..Default::default() };
    match execute(&cli, &mut report) {
        Ok(v) => report.result = v,
        Err(e) => report.errors.push(format!("{e:#}")),
    }
    report.ok = report.errors.is_empty();
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    if report.ok {
        0
    } else {
        1
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest { .. } => "ingest",
        Command::Order { .. } => "order",
        Command::Export { .. } => "export",
        Command::Stats { .. } => "stats",
        Command::Density { .. } => "density",
        Command::Classify { command } => match command {
            ClassifyCommand::Train { .. } => "classify train",
            ClassifyCommand::Eval { .. } => "classify eval",
            ClassifyCommand::Predict { .. } => "classify predict",
        },
        Command::Serve { .. } => "serve",
        Command::Synth { .. } => "synth",
    }
}

fn workers(cli: &Cli) -> anyhow::Result<usize> {
    match cli.workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load(report: &mut Report, path: &Path) -> anyhow::Result<Store> {
    report.time("load", || Store::load(path)).with_context(|| format!("loading {}", path.display()))
}

fn save(report: &mut Report, store: &Store, path: &Path) -> anyhow::Result<()> {
    report.time("save", || store.save(path)).with_context(|| format!("saving {}", path.display()))
}

fn parse_xyz(s: &str) -> anyhow::Result<[f64; 3]> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok([x, y, z]),
        _ => bail!("expected x,y,z, got {s:?}"),
    }
}

fn execute(cli: &Cli, report: &mut Report) -> anyhow::Result<Value> {
    match &cli.command {
        Command::Ingest { store, inputs, grid_size, grid_offset } => {
            let offset = grid_offset.as_deref().map(parse_xyz).transpose()?.unwrap_or([0.0; 3]);
            let grid = GridSpec::with_offset(*grid_size, offset)?;
            let mut ingestor: Option<Ingestor> = None;
            let mut schema: Option<Schema> = None;
            for (source, path) in inputs.iter().enumerate() {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let (s, records) = report.time("read", || read_ascii(BufReader::new(file)))?;
                match &schema {
                    Some(prev) if *prev != s => bail!("{} has columns {:?}, expected {:?}", path.display(), s.names, prev.names),
                    _ => schema = Some(s.clone()),
                }
                let ing = ingestor.get_or_insert_with(|| Ingestor::new(grid, s));
                report.time("group", || ing.extend(source as u32, records));
            }
            let (st, ingest) = ingestor.expect("at least one input").finish();
            save(report, &st, store)?;
            Ok(json!({ "ingest": ingest, "attributes": st.schema().names }))
        }
        Command::Order { store, levels, intra } => {
            let intra: IntraOrderKind = intra.parse()?;
            let workers = workers(cli)?;
            let st = load(report, store)?;
            let r = report.time("order", || st.order_all(OrderOptions { levels: *levels, intra }, workers))?;
            save(report, &st, store)?;
            let per_worker_minute = if r.seconds > 0.0 { r.points as f64 / r.seconds * 60.0 / workers as f64 } else { 0.0 };
            Ok(json!({
                "ordered": r.ordered,
                "skipped": r.skipped,
                "points": r.points,
                "seconds": r.seconds,
                "workers": r.workers,
                "points_per_hour": r.points_per_hour(),
                "points_per_minute_per_worker": per_worker_minute,
            }))
        }
        Command::Export { store, output, level, points, bbox } => {
            let st = load(report, store)?;
            let filter = QueryFilter { bbox: bbox.as_deref().map(Aabb::parse).transpose()?, ..Default::default() };
            let ids = st.query(&filter)?;
            let target = level.map(LodTarget::Level).or(points.map(LodTarget::Points));
            let mut w = BufWriter::new(fs::File::create(output)?);
            let n = report.time("export", || export_ascii(&st, &mut w, Some(&ids), target))?;
            w.flush()?;
            Ok(json!({ "patches": ids.len(), "points": n }))
        }
        Command::Stats { store, bbox, descriptors, cov, dense } => {
            let st = load(report, store)?;
            let filter = QueryFilter { bbox: bbox.as_deref().map(Aabb::parse).transpose()?, ..Default::default() };
            let ids = st.query(&filter)?;
            let metas: Vec<_> = ids.iter().map(|&id| st.meta(id)).collect::<Result<_, _>>()?;
            let ordered = metas.iter().filter(|m| m.is_ordered()).count();
            if let Some(path) = descriptors {
                let mut w = BufWriter::new(fs::File::create(path)?);
                writeln!(w, "id,count,ppl,dim_lod_ransac,dim_lod_median,low_confidence,dim_cov")?;
                report.time("descriptors", || -> anyhow::Result<()> {
                    for m in &metas {
                        let (ppl, ransac, median, low) = match m.ppl.as_deref().filter(|_| m.is_ordered()) {
                            Some(p) => {
                                let r = dim_lod(p, FusionMethod::Ransac).ok();
                                let md = dim_lod(p, FusionMethod::Median).ok();
                                let join = p.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
                                let low = r.as_ref().is_some_and(|r| r.low_confidence);
                                (join, r.map(|r| r.fused.to_string()), md.map(|m| m.fused.to_string()), low)
                            }
                            None => (String::new(), None, None, false),
                        };
                        let dc = if *cov { dim_cov(&st.patch(m.id)?.points.positions).ok().map(|d| d.dim.to_string()) } else { None };
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{}",
                            m.id,
                            m.stats.count,
                            ppl,
                            ransac.unwrap_or_default(),
                            median.unwrap_or_default(),
                            low,
                            dc.unwrap_or_default()
                        )?;
                    }
                    Ok(())
                })?;
                w.flush()?;
            }
            let dense_ids = dense.map(|t| {
                let all = st.detect_dense(t);
                all.into_iter().filter(|id| ids.binary_search(id).is_ok()).collect::<Vec<_>>()
            });
            Ok(json!({
                "patches": ids.len(),
                "ordered": ordered,
                "points": metas.iter().map(|m| m.stats.count).sum::<u64>(),
                "attributes": st.schema().names,
                "grid_size": st.grid().size,
                "dense": dense_ids,
                "payload_reads": st.payload_reads(),
            }))
        }
        Command::Density { store, max_level, max_density, level, surface, clear } => {
            let st = load(report, store)?;
            let target = match (max_level, max_density) {
                (Some(l), _) => Some(DensityTarget::MaxLevel { level: *l }),
                (None, Some(d)) => Some(DensityTarget::MaxDensity {
                    density: *d,
                    level: *level,
                    mode: if *surface { DensityMode::Surface } else { DensityMode::Volume },
                }),
                (None, None) if *clear => None,
                (None, None) => bail!("give --max-level, --max-density or --clear"),
            };
            let (mut capped, mut skipped, mut served, mut total) = (0u64, Vec::new(), 0u64, 0u64);
            report.time("density", || -> anyhow::Result<()> {
                for id in st.ids() {
                    let m = st.meta(id)?;
                    total += m.stats.count;
                    match target {
                        None => {
                            st.clear_density_cap(id)?;
                            served += m.stats.count;
                        }
                        Some(_) if !m.is_ordered() => {
                            skipped.push(id);
                            served += m.stats.count;
                        }
                        Some(t) => {
                            served += st.apply_density_target(id, t)? as u64;
                            capped += 1;
                        }
                    }
                }
                Ok(())
            })?;
            save(report, &st, store)?;
            Ok(json!({ "capped": capped, "skipped_unordered": skipped, "points": total, "served_points": served }))
        }
        Command::Classify { command } => classify(cli, command, report),
        Command::Serve { store, port, host } => {
            let st = Arc::new(load(report, store)?);
            let addr: std::net::SocketAddr = format!("{host}:{port}").parse().context("bad host or port")?;
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(workers(cli)?).enable_all().build()?;
            eprintln!("serving {} patches on http://{addr}", st.len());
            rt.block_on(crate::service::serve(st, addr))?;
            Ok(json!({ "stopped": true }))
        }
        Command::Synth { kind, output, seed, per_class, patches, points } => {
            let (records, schema) = match kind.as_str() {
                "segment" => (synth::segment().into_iter().map(crate::store::PointRecord::new).collect(), Schema::default()),
                "classes" => {
                    let (r, s, _) = synth::class_corpus(*per_class, *seed);
                    (r, s)
                }
                "ground" => {
                    let (r, s, _) = synth::ground_scenario(*seed);
                    (r, s)
                }
                "dense" => {
                    let (r, s, _) = synth::dense_corpus(*patches, *points, *seed);
                    (r, s)
                }
                other => {
                    let parts: Vec<&str> = other.split(':').collect();
                    match parts[..] {
                        ["lattice", dim, level] => {
                            let pts = synth::lattice(dim.parse()?, level.parse()?);
                            (pts.into_iter().map(crate::store::PointRecord::new).collect(), Schema::default())
                        }
                        _ => bail!("unknown synthetic kind {other:?}"),
                    }
                }
            };
            let mut w = BufWriter::new(fs::File::create(output)?);
            write!(w, "# x y z")?;
            for n in &schema.names {
                write!(w, " {n}")?;
            }
            writeln!(w)?;
            for r in &records {
                write!(w, "{} {} {}", r.position[0], r.position[1], r.position[2])?;
                for a in &r.attributes {
                    write!(w, " {a}")?;
                }
                writeln!(w)?;
            }
            w.flush()?;
            Ok(json!({ "points": records.len(), "attributes": schema.names }))
        }
    }
}

fn read_labels(st: &Store, args: &LabelArgs) -> anyhow::Result<BTreeMap<u64, String>> {
    let mut labels = BTreeMap::new();
    match &args.labels {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (id, class) = line.split_once(',').ok_or_else(|| anyhow!("line {}: expected `patch_id,class`", n + 1))?;
                match id.trim().parse::<u64>() {
                    Ok(id) => {
                        labels.insert(id, class.trim().to_owned());
                    }
                    Err(_) if n == 0 => {}
                    Err(_) => bail!("line {}: bad patch id {id:?}", n + 1),
                }
            }
        }
        None => {
            for (id, l) in patch_labels(st)? {
                labels.insert(id, l.class.to_string());
            }
        }
    }
    Ok(labels)
}

fn dataset(report: &mut Report, st: &Store, args: &LabelArgs) -> anyhow::Result<(Dataset, FeatureSet)> {
    let set = match &args.features {
        Some(f) => FeatureSet::parse(f)?,
        None => FeatureSet::default(),
    };
    let labels = read_labels(st, args)?;
    let ds = report.time("features", || Dataset::from_store(st, &labels, &set))?;
    let ds = match &args.label_map {
        Some(p) => ds.relabel(&LabelMap::parse(&fs::read_to_string(p)?)?),
        None => ds,
    };
    Ok((ds, set))
}

fn forest_params(f: &ForestArgs) -> ForestParams {
    ForestParams { n_trees: f.trees, max_depth: f.max_depth, seed: f.seed, ..Default::default() }
}

fn apply_balance(ds: Dataset, f: &ForestArgs) -> anyhow::Result<Dataset> {
    Ok(match f.balance.as_str() {
        "none" => ds,
        "weights" => balance(&ds, BalanceStrategy::Weights)?,
        other => match other.strip_prefix("undersample:") {
            Some(r) => balance(&ds, BalanceStrategy::Undersample { ratio: r.parse()?, seed: f.seed })?,
            None => bail!("unknown balance strategy {other:?}"),
        },
    })
}

#[derive(Serialize, serde::Deserialize)]
struct ModelFile {
    features: FeatureSet,
    model: ForestModel,
}

fn classify(cli: &Cli, command: &ClassifyCommand, report: &mut Report) -> anyhow::Result<Value> {
    let _ = workers(cli)?;
    match command {
        ClassifyCommand::Train { labels, forest, model } => {
            let st = load(report, &labels.store)?;
            let (ds, features) = dataset(report, &st, labels)?;
            let ds = apply_balance(ds, forest)?;
            let m = report.time("train", || train_forest(&ds, &forest_params(forest)))?;
            let importance: BTreeMap<&String, f64> = m.feature_names.iter().zip(m.importance.iter().copied()).collect();
            let out = json!({ "observations": ds.len(), "classes": m.class_names, "importance": importance });
            fs::write(model, serde_json::to_vec(&ModelFile { features, model: m })?)?;
            Ok(out)
        }
        ClassifyCommand::Eval { labels, forest, folds, confusion, layout } => {
            let st = load(report, &labels.store)?;
            let (ds, _) = dataset(report, &st, labels)?;
            let ds = apply_balance(ds, forest)?;
            let r = report.time("evaluate", || evaluate_kfold(&ds, *folds, &forest_params(forest)))?;
            if let Some(p) = confusion {
                fs::write(p, r.confusion.to_csv())?;
            }
            let lay = if r.confusion.len() >= 3 { Some(spectral_layout(&r.confusion)?) } else { None };
            if let Some(p) = layout {
                let l = lay.as_ref().ok_or_else(|| anyhow!("spectral layout needs at least 3 classes"))?;
                fs::write(p, l.to_csv())?;
            }
            let importance: BTreeMap<&String, f64> = r.feature_names.iter().zip(r.importance.iter().copied()).collect();
            Ok(json!({
                "accuracy": r.accuracy,
                "scores": r.scores,
                "importance": importance,
                "disconnected_layout": lay.map(|l| l.disconnected),
            }))
        }
        ClassifyCommand::Predict { store, model, output, min_confidence, recall_boost: boost, target_class } => {
            let st = load(report, store)?;
            let mf: ModelFile = serde_json::from_slice(&fs::read(model)?)?;
            let ids: Vec<u64> = st.ids().filter(|&id| st.meta(id).is_ok_and(|m| m.is_ordered())).collect();
            let mut preds = report.time("predict", || mf.model.predict_patches(&st, &mf.features, &ids))?;
            if let Some(c) = min_confidence {
                preds = precision_boost(&preds, *c);
            }
            let mut w = BufWriter::new(fs::File::create(output)?);
            write!(w, "patch_id,class,confidence")?;
            for c in &mf.model.class_names {
                write!(w, ",p_{c}")?;
            }
            writeln!(w)?;
            for p in &preds {
                write!(w, "{},{},{}", p.patch_id, mf.model.class_names[p.class], p.confidence)?;
                for v in &p.probabilities {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
            w.flush()?;
            let boosted = match (boost, target_class) {
                (Some(d), Some(class)) => {
                    let c = mf
                        .model
                        .class_names
                        .iter()
                        .position(|n| n == class)
                        .ok_or_else(|| anyhow!("unknown class {class:?}"))?;
                    let (dxy, dz) = d.split_once(',').ok_or_else(|| anyhow!("--recall-boost expects DXY,DZ"))?;
                    let hits: Vec<u64> = preds.iter().filter(|p| p.class == c).map(|p| p.patch_id).collect();
                    Some(recall_boost(&st, &hits, dxy.trim().parse()?, dz.trim().parse()?)?)
                }
                _ => None,
            };
            Ok(json!({ "predictions": preds.len(), "skipped_unordered": st.len() - ids.len(), "boosted": boosted }))
        }
    }
}
