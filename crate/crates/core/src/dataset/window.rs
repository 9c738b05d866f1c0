//! Chronological split and sliding windows.

use std::fmt;
use std::ops::Range;

use super::NodeSeries;
use crate::error::{Error, Result};
use crate::numerics::{Array, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Train => "train",
            Segment::Val => "val",
            Segment::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    pub fn get(&self, seg: Segment) -> Range<usize> {
        match seg {
            Segment::Train => self.train.clone(),
            Segment::Val => self.val.clone(),
            Segment::Test => self.test.clone(),
        }
    }
}

/// Cuts `[0, len)` at `floor(train·len)` and `floor((train+val)·len)`.
pub fn split_bounds(len: usize, train_ratio: f64, val_ratio: f64) -> Result<SplitBounds> {
    let ok = |r: f64| r.is_finite() && r > 0.0;
    if !ok(train_ratio) || !(val_ratio.is_finite() && val_ratio >= 0.0) || train_ratio + val_ratio > 1.0 {
        return Err(Error::Config(format!("invalid split ratios {train_ratio}/{val_ratio}")));
    }
    let a = (train_ratio * len as f64).floor() as usize;
    let b = (((train_ratio + val_ratio) * len as f64).floor() as usize).max(a);
    Ok(SplitBounds {
        train: 0..a,
        val: a..b,
        test: b..len,
    })
}

/// Window start offsets inside `range`, stepping by `stride`, such that
/// history and horizon both stay inside the segment.
pub fn windows(range: Range<usize>, seg: Segment, hist: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Config("window stride must be positive".into()));
    }
    let need = hist + horizon;
    if range.len() < need {
        return Err(Error::EmptyDataset(format!(
            "{seg} segment has {} steps, needs at least {need}",
            range.len()
        )));
    }
    Ok((range.start..=range.end - need).step_by(stride).collect())
}

/// Stacked windows. Interpolation flags are 1 where the entry was filled.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[B, L, N, C]`
    pub x: Array<T>,
    /// `[B, S, N, C]`
    pub y: Array<T>,
    pub x_interp: Array<T>,
    pub y_interp: Array<T>,
    /// Global step of every history row, `[B, L]` row-major.
    pub times: Vec<u64>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn make_batch<T: Real>(s: &NodeSeries, starts: &[usize], hist: usize, horizon: usize) -> Result<Batch<T>> {
    let row = s.nodes * s.channels;
    let mut x = Vec::with_capacity(starts.len() * hist * row);
    let mut y = Vec::with_capacity(starts.len() * horizon * row);
    let mut xi = Vec::with_capacity(x.capacity());
    let mut yi = Vec::with_capacity(y.capacity());
    let mut times = Vec::with_capacity(starts.len() * hist);
    let flag = |b: bool| if b { T::one() } else { T::zero() };
    for &st in starts {
        if st + hist + horizon > s.len {
            return Err(Error::Contract(format!(
                "window at {st} runs past series end {}",
                s.len
            )));
        }
        let (h, f) = (
            st * row..(st + hist) * row,
            (st + hist) * row..(st + hist + horizon) * row,
        );
        x.extend(s.values[h.clone()].iter().map(|&v| T::lit(v)));
        xi.extend(s.interp[h].iter().map(|&b| flag(b)));
        y.extend(s.values[f.clone()].iter().map(|&v| T::lit(v)));
        yi.extend(s.interp[f].iter().map(|&b| flag(b)));
        times.extend((st..st + hist).map(|t| s.start_step + t as u64));
    }
    let b = starts.len();
    Ok(Batch {
        x: Array::new(&[b, hist, s.nodes, s.channels], x)?,
        y: Array::new(&[b, horizon, s.nodes, s.channels], y)?,
        x_interp: Array::new(&[b, hist, s.nodes, s.channels], xi)?,
        y_interp: Array::new(&[b, horizon, s.nodes, s.channels], yi)?,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_boundaries() {
        let b = split_bounds(100, 0.8, 0.1).unwrap();
        assert_eq!((b.train, b.val, b.test), (0..80, 80..90, 90..100));
    }

    #[test]
    fn window_count() {
        let (l, s) = (288, 144);
        assert_eq!(windows(0..l + s + 2, Segment::Val, l, s, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(windows(10..10 + l + s, Segment::Val, l, s, s).unwrap(), vec![10]);
        let err = windows(0..l + s - 1, Segment::Test, l, s, s).unwrap_err();
        assert!(err.to_string().contains("test segment"));
        assert!(err.to_string().contains("432"));
    }

    #[test]
    fn batch_contiguous() {
        let vals: Vec<f64> = (0..10).map(f64::from).collect();
        let mut s = NodeSeries::from_values(10, 1, 1, vals, 100, 1).unwrap();
        s.interp[4] = true;
        let b = make_batch::<f64>(&s, &[2, 3], 2, 3).unwrap();
        assert_eq!(b.x.to_f64_vec(), vec![2.0, 3.0, 3.0, 4.0]);
        assert_eq!(b.y.to_f64_vec(), vec![4.0, 5.0, 6.0, 5.0, 6.0, 7.0]);
        assert_eq!(b.y_interp.to_f64_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.x_interp.to_f64_vec(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(b.times, vec![102, 103, 103, 104]);
    }
}
