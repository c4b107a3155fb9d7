//! CSV loaders for flow pools, event logs and position traces.
//!
//! Flow files carry numeric feature columns and a mandatory `label` column.
//! Event files carry `device_id`, `timestamp`, features and `label`.
//! Position files carry `step`, `device_id`, `x` and `y`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::anticipator::{Event, EventSequence};
use crate::flengine::DeviceShard;
use crate::netmodel::Point;
use crate::{Error, Result};

struct Table {
    header: Vec<String>,
    /// `(line, fields)`.
    rows: Vec<(usize, Vec<String>)>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::parse(path, line as u64, msg)
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 1, format!("{other:?}")),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        log::warn!("{} has a header but no rows", path.display());
    }
    Ok(Table { header, rows })
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| parse_err(path, 1, format!("missing `{name}` column")))
}

fn number(path: &Path, line: usize, col: &str, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            parse_err(
                path,
                line,
                format!("column `{col}`: {field:?} is not a finite number"),
            )
        })
}

fn count(path: &Path, line: usize, col: &str, field: &str) -> Result<usize> {
    field.parse::<usize>().map_err(|_| {
        parse_err(
            path,
            line,
            format!("column `{col}`: {field:?} is not a non-negative integer"),
        )
    })
}

/// Loads a labeled flow pool. Every non-label column is a feature.
pub fn load_flows_csv(path: &Path) -> Result<DeviceShard> {
    let t = read_table(path)?;
    let label = column(path, &t.header, "label")?;
    let width = t.header.len() - 1;
    if width == 0 {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    let mut shard = DeviceShard::empty(0, width);
    let mut x = Vec::with_capacity(width);
    for (line, row) in &t.rows {
        x.clear();
        for (k, field) in row.iter().enumerate() {
            if k != label {
                x.push(number(path, *line, &t.header[k], field)?);
            }
        }
        shard.push(&x, count(path, *line, "label", &row[label])?);
    }
    Ok(shard)
}

/// Loads event logs, one per device id, ordered by timestamp.
pub fn load_events_csv(path: &Path) -> Result<Vec<EventSequence>> {
    let t = read_table(path)?;
    let dev = column(path, &t.header, "device_id")?;
    let ts = column(path, &t.header, "timestamp")?;
    let label = column(path, &t.header, "label")?;
    let feature_cols: Vec<usize> = (0..t.header.len())
        .filter(|k| ![dev, ts, label].contains(k))
        .collect();
    if feature_cols.is_empty() {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    let mut by_device: BTreeMap<usize, Vec<(f64, usize, Event)>> = BTreeMap::new();
    for (line, row) in &t.rows {
        let device = count(path, *line, "device_id", &row[dev])?;
        let stamp = number(path, *line, "timestamp", &row[ts])?;
        let features = feature_cols
            .iter()
            .map(|&k| number(path, *line, &t.header[k], &row[k]))
            .collect::<Result<Vec<f64>>>()?;
        let attack = match row[label].as_str() {
            "0" | "false" | "benign" => false,
            "1" | "true" | "attack" => true,
            other => {
                return Err(parse_err(
                    path,
                    *line,
                    format!("label {other:?} is not 0 or 1"),
                ));
            }
        };
        by_device
            .entry(device)
            .or_default()
            .push((stamp, *line, Event { features, attack }));
    }
    by_device
        .into_iter()
        .map(|(device, mut events)| {
            events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            EventSequence::from_events(
                device,
                feature_cols.len(),
                events.into_iter().map(|(_, _, e)| e).collect(),
            )
        })
        .collect()
}

/// Loads a position trace as `positions[step][device]`. Every step must
/// list devices `0..n` exactly once.
pub fn load_positions_csv(path: &Path) -> Result<Vec<Vec<Point>>> {
    let t = read_table(path)?;
    let step = column(path, &t.header, "step")?;
    let dev = column(path, &t.header, "device_id")?;
    let xc = column(path, &t.header, "x")?;
    let yc = column(path, &t.header, "y")?;
    let mut steps: BTreeMap<usize, BTreeMap<usize, Point>> = BTreeMap::new();
    for (line, row) in &t.rows {
        let s = count(path, *line, "step", &row[step])?;
        let d = count(path, *line, "device_id", &row[dev])?;
        let p = Point::new(
            number(path, *line, "x", &row[xc])?,
            number(path, *line, "y", &row[yc])?,
        );
        if steps.entry(s).or_default().insert(d, p).is_some() {
            return Err(parse_err(
                path,
                *line,
                format!("device {d} listed twice in step {s}"),
            ));
        }
    }
    let mut out = Vec::with_capacity(steps.len());
    let mut width = None;
    for (s, devices) in steps {
        let n = devices.len();
        if devices.keys().copied().ne(0..n) || width.is_some_and(|w| w != n) {
            return Err(parse_err(
                path,
                0,
                format!("step {s} does not list the same contiguous device ids as the others"),
            ));
        }
        width = Some(n);
        out.push(devices.into_values().collect());
    }
    Ok(out)
}
