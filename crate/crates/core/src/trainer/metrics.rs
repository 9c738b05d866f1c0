//! Per-channel MAE and RMSE with compensated sums.

use crate::error::{Error, Result};
use crate::fusion::Task;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }

    pub fn merge(&mut self, other: &Kahan) {
        self.add(other.sum);
        self.add(other.carry);
    }
}

#[derive(Debug, Clone, Default)]
struct Sums {
    abs: Kahan,
    sq: Kahan,
    abs_raw: Kahan,
    sq_raw: Kahan,
    count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMetrics {
    pub name: String,
    pub mae: f64,
    pub rmse: f64,
    /// Same errors after undoing median normalisation.
    pub mae_raw: f64,
    pub rmse_raw: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: Task,
    pub channels: Vec<ChannelMetrics>,
    pub macro_mae: f64,
    pub macro_rmse: f64,
    /// Mean squared error over every counted entry.
    pub mse: f64,
    /// Entries that entered the metrics.
    pub counted: usize,
    /// Entries skipped because they were interpolated.
    pub excluded_interp: usize,
    pub wall_time_s: f64,
    pub params_total: usize,
    pub params_trainable: usize,
}

/// Collects residuals for `[.., N, C]` layouts.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    nodes: usize,
    channels: usize,
    medians: Vec<f64>,
    sums: Vec<Sums>,
    excluded_interp: usize,
}

impl MetricAccumulator {
    pub fn new(nodes: usize, channels: usize, medians: &[f64]) -> Result<Self> {
        if medians.len() != nodes * channels {
            return Err(Error::shape("metric medians", &[medians.len()], &[nodes, channels]));
        }
        Ok(Self {
            nodes,
            channels,
            medians: medians.to_vec(),
            sums: vec![Sums::default(); channels],
            excluded_interp: 0,
        })
    }

    /// Adds residuals where `selected` holds; of those, interpolated
    /// entries are counted as excluded and skipped.
    pub fn add(&mut self, pred: &[f64], target: &[f64], selected: &[bool], interp: &[bool]) -> Result<()> {
        let n = pred.len();
        if target.len() != n
            || selected.len() != n
            || interp.len() != n
            || !n.is_multiple_of(self.nodes * self.channels)
        {
            return Err(Error::shape(
                "metric inputs",
                &[n],
                &[target.len(), selected.len(), interp.len()],
            ));
        }
        for i in 0..n {
            if !selected[i] {
                continue;
            }
            if interp[i] {
                self.excluded_interp += 1;
                continue;
            }
            let j = i % (self.nodes * self.channels);
            let e = pred[i] - target[i];
            let raw = e * self.medians[j];
            let s = &mut self.sums[j % self.channels];
            s.abs.add(e.abs());
            s.sq.add(e * e);
            s.abs_raw.add(raw.abs());
            s.sq_raw.add(raw * raw);
            s.count += 1;
        }
        Ok(())
    }

    pub fn finish(&self, task: Task, names: &[String]) -> Result<MetricReport> {
        let counted: usize = self.sums.iter().map(|s| s.count).sum();
        if counted == 0 {
            return Err(Error::EmptyDataset(format!("no {task} entries to evaluate")));
        }
        let channels: Vec<ChannelMetrics> = self
            .sums
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let k = s.count.max(1) as f64;
                ChannelMetrics {
                    name: names.get(c).cloned().unwrap_or_else(|| format!("ch{c}")),
                    mae: s.abs.value() / k,
                    rmse: (s.sq.value() / k).sqrt(),
                    mae_raw: s.abs_raw.value() / k,
                    rmse_raw: (s.sq_raw.value() / k).sqrt(),
                    count: s.count,
                }
            })
            .collect();
        let mut sq = Kahan::default();
        for s in &self.sums {
            sq.merge(&s.sq);
        }
        let live: Vec<&ChannelMetrics> = channels.iter().filter(|c| c.count > 0).collect();
        let m = live.len() as f64;
        Ok(MetricReport {
            task,
            macro_mae: live.iter().map(|c| c.mae).sum::<f64>() / m,
            macro_rmse: live.iter().map(|c| c.rmse).sum::<f64>() / m,
            mse: sq.value() / counted as f64,
            channels,
            counted,
            excluded_interp: self.excluded_interp,
            wall_time_s: 0.0,
            params_total: 0,
            params_trainable: 0,
        })
    }
}
