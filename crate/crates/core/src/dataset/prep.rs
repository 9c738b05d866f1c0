//! Node aggregation, gap filling and median normalisation.

use std::ops::Range;

use log::warn;

use super::cluster::Clustering;
use super::records::Record;
use super::NodeSeries;
use crate::error::{Error, Result};

/// Sums member squares into node series covering every step from the first
/// to the last timestamp. An entry is observed when any member carried it.
pub fn aggregate(records: &[Record], clustering: &Clustering, channels: usize, step_ms: u64) -> Result<NodeSeries> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no records to aggregate".into()));
    }
    if step_ms == 0 {
        return Err(Error::Config("step_ms must be positive".into()));
    }
    let first = records.iter().map(|r| r.timestamp_ms).min().expect("non-empty") / step_ms;
    let last = records.iter().map(|r| r.timestamp_ms).max().expect("non-empty") / step_ms;
    let len = (last - first + 1) as usize;
    let mut s = NodeSeries::new(len, clustering.nodes(), channels, first, step_ms);
    for r in records {
        let n = clustering
            .node_of(r.square_id)
            .ok_or_else(|| Error::Contract(format!("square {} missing from clustering", r.square_id)))?;
        if r.values.len() != channels {
            return Err(Error::shape("record channels", &[r.values.len()], &[channels]));
        }
        let t = (r.timestamp_ms / step_ms - first) as usize;
        for (c, v) in r.values.iter().enumerate() {
            if let Some(v) = v {
                let i = s.index(t, n, c);
                s.values[i] += v;
                s.observed[i] = true;
            }
        }
    }
    Ok(s)
}

/// Fills gaps in one sequence: interior runs linearly, edges with the
/// nearest observation. Returns the filled values and which were filled,
/// or `None` when nothing is observed.
pub fn interpolate(seq: &[Option<f64>]) -> Option<(Vec<f64>, Vec<bool>)> {
    let known: Vec<usize> = (0..seq.len()).filter(|&i| seq[i].is_some()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut out = vec![0.0; seq.len()];
    let mut filled = vec![false; seq.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = match seq[i] {
            Some(v) => v,
            None => {
                filled[i] = true;
                if i < first {
                    seq[first].expect("known")
                } else if i > last {
                    seq[last].expect("known")
                } else {
                    let right = known.partition_point(|&k| k < i);
                    let (lo, hi) = (known[right - 1], known[right]);
                    let (a, b) = (seq[lo].expect("known"), seq[hi].expect("known"));
                    a + (b - a) * (i - lo) as f64 / (hi - lo) as f64
                }
            }
        };
    }
    Some((out, filled))
}

/// Interpolates every unobserved entry in place and flags it.
pub fn interpolate_missing(s: &mut NodeSeries) -> Result<()> {
    let mut empty = Vec::new();
    for n in 0..s.nodes {
        for c in 0..s.channels {
            let seq: Vec<Option<f64>> = (0..s.len)
                .map(|t| {
                    let i = s.index(t, n, c);
                    s.observed[i].then_some(s.values[i])
                })
                .collect();
            match interpolate(&seq) {
                Some((vals, filled)) => {
                    for t in 0..s.len {
                        let i = s.index(t, n, c);
                        s.values[i] = vals[t];
                        s.interp[i] = filled[t];
                    }
                }
                None => empty.push(n),
            }
        }
    }
    if empty.is_empty() {
        Ok(())
    } else {
        empty.dedup();
        Err(Error::DegenerateNode(empty))
    }
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    })
}

/// Divides each raw `(node, channel)` series by the median of its observed entries in
/// `train`. A zero median falls back to the smallest positive observation;
/// a series with none is degenerate and keeps a median of 1. Returns the
/// degenerate nodes.
pub fn median_normalize(s: &mut NodeSeries, train: Range<usize>) -> Result<Vec<usize>> {
    if train.is_empty() || train.end > s.len {
        return Err(Error::Contract(format!(
            "training range {train:?} invalid for length {}",
            s.len
        )));
    }
    s.renormalize(&vec![1.0; s.nodes * s.channels])?;
    let mut medians = vec![1.0; s.nodes * s.channels];
    let mut degenerate = Vec::new();
    for n in 0..s.nodes {
        for c in 0..s.channels {
            let mut obs: Vec<f64> = train
                .clone()
                .map(|t| s.index(t, n, c))
                .filter(|&i| s.observed[i])
                .map(|i| s.values[i])
                .collect();
            if obs.is_empty() {
                obs = train.clone().map(|t| s.values[s.index(t, n, c)]).collect();
            }
            let smallest_positive = obs.iter().copied().filter(|&v| v > 0.0).min_by(f64::total_cmp);
            let m = median(&mut obs).unwrap_or(0.0);
            medians[n * s.channels + c] = if m > 0.0 {
                m
            } else if let Some(p) = smallest_positive {
                warn!("node {n} channel {c}: zero median, using smallest positive value {p}");
                p
            } else {
                warn!("node {n} channel {c}: all-zero series, flagged degenerate");
                if degenerate.last() != Some(&n) {
                    degenerate.push(n);
                }
                1.0
            };
        }
    }
    s.renormalize(&medians)?;
    Ok(degenerate)
}

/// Restores raw scale for `[.., N, C]` values.
pub fn denormalize(values: &[f64], medians: &[f64]) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| v * medians[i % medians.len()])
        .collect()
}
