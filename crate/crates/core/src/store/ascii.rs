//! Whitespace separated text interchange: `x y z [attributes...]`, one point
//! per line, order significant. An optional first line `# x y z name...`
//! names the attribute columns.

use std::io::{BufRead, Write};

use super::{PointRecord, PointsView, Schema, Store};
use crate::error::{Error, Result};
use crate::midoc::LodTarget;

pub fn read_ascii(reader: impl BufRead) -> Result<(Schema, Vec<PointRecord>)> {
    let mut schema: Option<Schema> = None;
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let cols: Vec<&str> = rest.split_whitespace().collect();
            if schema.is_none() && records.is_empty() && cols.len() >= 3 && cols[..3] == ["x", "y", "z"] {
                schema = Some(Schema::new(cols[3..].iter().copied()));
            }
            continue;
        }
        let values: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: n + 1, msg: e.to_string() })?;
        if values.len() < 3 {
            return Err(Error::Parse { line: n + 1, msg: format!("expected at least 3 columns, got {}", values.len()) });
        }
        let schema = schema.get_or_insert_with(|| Schema::new((0..values.len() - 3).map(|i| format!("attr{i}"))));
        if values.len() != 3 + schema.len() {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("expected {} columns, got {}", 3 + schema.len(), values.len()),
            });
        }
        records.push(PointRecord { position: [values[0], values[1], values[2]], attributes: values[3..].to_vec() });
    }
    Ok((schema.unwrap_or_default(), records))
}

fn write_header(w: &mut impl Write, schema: &Schema) -> Result<()> {
    write!(w, "# x y z")?;
    for name in &schema.names {
        write!(w, " {name}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Writes points using the shortest representation that parses back to the
/// same `f64`.
pub fn write_ascii_points(w: &mut impl Write, view: &PointsView<'_>) -> Result<()> {
    for (i, p) in view.positions.iter().enumerate() {
        write!(w, "{} {} {}", p[0], p[1], p[2])?;
        for col in &view.attributes {
            write!(w, " {}", col[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Exports patches in id order (all patches when `ids` is `None`). With a
/// target, only that LOD prefix of each (ordered) patch is written.
pub fn export_ascii(store: &Store, w: &mut impl Write, ids: Option<&[u64]>, target: Option<LodTarget>) -> Result<u64> {
    write_header(w, store.schema())?;
    let all: Vec<u64>;
    let ids = match ids {
        Some(ids) => ids,
        None => {
            all = store.ids().collect();
            &all
        }
    };
    let mut written = 0;
    for &id in ids {
        let patch = store.patch(id)?;
        let view = match target {
            Some(t) => patch.lod_prefix(t)?,
            None => patch.points.prefix(patch.points.len()),
        };
        write_ascii_points(w, &view)?;
        written += view.positions.len() as u64;
    }
    Ok(written)
}
