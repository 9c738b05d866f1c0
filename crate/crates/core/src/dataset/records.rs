//! Tab-separated activity records.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Which columns hold the square id, the timestamp and each channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub square_id: usize,
    pub timestamp: usize,
    pub channels: Vec<usize>,
    /// Aggregation step; timestamps are floored to a multiple of it.
    pub step_ms: u64,
}

impl ColumnMap {
    /// Layout of the Milan and Trentino dumps: id, time, country code,
    /// then sms-in, sms-out, call-in, call-out, internet.
    pub fn telecom() -> Self {
        Self {
            square_id: 0,
            timestamp: 1,
            channels: vec![3, 4, 5, 6, 7],
            step_ms: 600_000,
        }
    }
}

/// One (square, step) cell. A channel is `None` when no line carried it.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub square_id: u64,
    pub timestamp_ms: u64,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    /// Sorted by `(square_id, timestamp_ms)`, duplicates merged.
    pub records: Vec<Record>,
    pub lines: usize,
    pub malformed: usize,
}

fn parse_line(line: &str, map: &ColumnMap) -> Option<(u64, u64, Vec<Option<f64>>)> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    let square = fields.get(map.square_id)?.parse::<u64>().ok()?;
    let ts = fields.get(map.timestamp)?.parse::<u64>().ok()?;
    let mut values = Vec::with_capacity(map.channels.len());
    for &col in &map.channels {
        let v = match fields.get(col).copied() {
            None | Some("") => None,
            Some(s) => {
                let v = s.parse::<f64>().ok()?;
                if !v.is_finite() || v < 0.0 {
                    return None;
                }
                Some(v)
            }
        };
        values.push(v);
    }
    Some((square, ts - ts % map.step_ms, values))
}

type Cells = BTreeMap<(u64, u64), Vec<Option<f64>>>;

#[derive(Default)]
struct Accumulator {
    cells: Cells,
    lines: usize,
    malformed: usize,
}

impl Accumulator {
    fn feed(&mut self, reader: impl BufRead, map: &ColumnMap, source: &Path) -> Result<()> {
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            self.lines += 1;
            let Some((square, ts, values)) = parse_line(&line, map) else {
                self.malformed += 1;
                continue;
            };
            let slot = self
                .cells
                .entry((square, ts))
                .or_insert_with(|| vec![None; values.len()]);
            for (acc, v) in slot.iter_mut().zip(values) {
                if let Some(v) = v {
                    *acc = Some(acc.unwrap_or(0.0) + v);
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<LoadReport> {
        let (lines, malformed) = (self.lines, self.malformed);
        if malformed > 0 {
            warn!("{malformed} of {lines} lines malformed and skipped");
        }
        if self.cells.is_empty() {
            return Err(Error::EmptyDataset(format!("no valid records in {lines} lines")));
        }
        let records = self
            .cells
            .into_iter()
            .map(|((square_id, timestamp_ms), values)| Record {
                square_id,
                timestamp_ms,
                values,
            })
            .collect();
        Ok(LoadReport {
            records,
            lines,
            malformed,
        })
    }
}

/// Parses records from any line source. Blank lines are skipped; lines
/// that do not parse are counted as malformed.
pub fn parse_records(reader: impl BufRead, map: &ColumnMap) -> Result<LoadReport> {
    let mut acc = Accumulator::default();
    acc.feed(reader, map, Path::new("<input>"))?;
    acc.finish()
}

/// Loads one or more files; duplicate cells across files are summed too.
pub fn load_records(paths: &[&Path], map: &ColumnMap) -> Result<LoadReport> {
    let mut acc = Accumulator::default();
    for path in paths {
        let file = File::open(path).map_err(|e| Error::io(*path, e))?;
        acc.feed(BufReader::new(file), map, path)?;
    }
    acc.finish()
}
