//! Telecom grid ingestion: parse records, cluster squares into nodes,
//! fill gaps, normalise by training medians, window, split and mask.

pub mod cache;
pub mod cluster;
pub mod mask;
pub mod prep;
pub mod records;
pub mod synth;
pub mod window;

use std::path::Path;

use log::info;

use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::numerics::{Array, Real};

pub use cluster::{cluster_nodes, Clustering};
pub use mask::gen_mask;
pub use prep::{aggregate, denormalize, interpolate, interpolate_missing, median, median_normalize};
pub use records::{load_records, parse_records, ColumnMap, LoadReport, Record};
pub use window::{make_batch, split_bounds, windows, Batch, Segment, SplitBounds};

/// Dense `[T, N, C]` node traffic with per-entry provenance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSeries {
    pub len: usize,
    pub nodes: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    /// Entry carried a value in the raw records.
    pub observed: Vec<bool>,
    /// Entry was filled by interpolation and never counts toward a metric.
    pub interp: Vec<bool>,
    /// Per `(node, channel)` divisor; all ones until normalised.
    pub medians: Vec<f64>,
    /// Global step index (milliseconds since epoch over `step_ms`) of row 0.
    pub start_step: u64,
    pub step_ms: u64,
}

impl NodeSeries {
    pub fn new(len: usize, nodes: usize, channels: usize, start_step: u64, step_ms: u64) -> Self {
        let n = len * nodes * channels;
        Self {
            len,
            nodes,
            channels,
            values: vec![0.0; n],
            observed: vec![false; n],
            interp: vec![false; n],
            medians: vec![1.0; nodes * channels],
            start_step,
            step_ms,
        }
    }

    /// Fully observed series from a dense `[T, N, C]` buffer.
    pub fn from_values(
        len: usize,
        nodes: usize,
        channels: usize,
        values: Vec<f64>,
        start_step: u64,
        step_ms: u64,
    ) -> Result<Self> {
        if values.len() != len * nodes * channels {
            return Err(Error::shape("node series", &[values.len()], &[len, nodes, channels]));
        }
        let mut s = Self::new(len, nodes, channels, start_step, step_ms);
        s.values = values;
        s.observed.fill(true);
        Ok(s)
    }

    #[inline]
    pub fn index(&self, t: usize, n: usize, c: usize) -> usize {
        (t * self.nodes + n) * self.channels + c
    }

    /// Global step index of every row.
    pub fn times(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len as u64).map(move |t| self.start_step + t)
    }

    /// Rows `range` as an `[len, N, C]` array.
    pub fn slice<T: Real>(&self, range: std::ops::Range<usize>) -> Result<Array<T>> {
        if range.end > self.len || range.start > range.end {
            return Err(Error::Contract(format!(
                "row range {range:?} outside series of length {}",
                self.len
            )));
        }
        let row = self.nodes * self.channels;
        let data = self.values[range.start * row..range.end * row]
            .iter()
            .map(|&v| T::lit(v))
            .collect();
        Array::new(&[range.len(), self.nodes, self.channels], data)
    }

    /// Replaces the medians, rescaling values so the raw traffic is unchanged.
    pub fn renormalize(&mut self, medians: &[f64]) -> Result<()> {
        if medians.len() != self.medians.len() {
            return Err(Error::shape("medians", &[medians.len()], &[self.nodes, self.channels]));
        }
        let row = self.nodes * self.channels;
        for (i, v) in self.values.iter_mut().enumerate() {
            let j = i % row;
            *v = *v * self.medians[j] / medians[j];
        }
        self.medians = medians.to_vec();
        Ok(())
    }
}

/// Everything `prepare` derives from raw files.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: NodeSeries,
    pub clustering: Clustering,
    pub report: LoadReport,
    /// Nodes whose every observation is zero; their median is pinned to 1.
    pub degenerate: Vec<usize>,
}

impl DataConfig {
    pub fn column_map(&self) -> ColumnMap {
        ColumnMap {
            square_id: self.col_square_id,
            timestamp: self.col_timestamp,
            channels: self.channel_cols.clone(),
            step_ms: self.step_ms,
        }
    }
}

/// Full text-to-series pipeline. Medians come from the training range.
pub fn prepare(paths: &[&Path], cfg: &DataConfig) -> Result<Prepared> {
    let report = load_records(paths, &cfg.column_map())?;
    info!(
        "parsed {} cells from {} lines ({} malformed)",
        report.records.len(),
        report.lines,
        report.malformed
    );
    let mut squares: Vec<u64> = report.records.iter().map(|r| r.square_id).collect();
    squares.dedup();
    let clustering = cluster_nodes(
        &squares,
        cfg.clusters,
        cfg.grid_width,
        cfg.id_base,
        cfg.kmeans_iters,
        cfg.seed,
    )?;
    let mut series = aggregate(&report.records, &clustering, cfg.channel_cols.len(), cfg.step_ms)?;
    interpolate_missing(&mut series)?;
    let bounds = split_bounds(series.len, cfg.train_ratio, cfg.val_ratio)?;
    let degenerate = median_normalize(&mut series, bounds.train.clone())?;
    Ok(Prepared {
        series,
        clustering,
        report,
        degenerate,
    })
}
