//! CSV and key=value writers.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use usts::trainer::{MetricReport, StepLog};
use usts::{Error, Result};

/// Streams rows under one header row, RFC 4180 quoting.
pub struct CsvOut {
    path: std::path::PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create<S: AsRef<str>>(path: &Path, header: &[S]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = Self {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(BufWriter::new(file)),
        };
        out.row(header.iter().map(AsRef::as_ref))?;
        Ok(out)
    }

    pub fn row<I>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator,
        I::Item: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| self.err(e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn err(&self, e: csv::Error) -> Error {
        Error::io(&self.path, std::io::Error::other(e))
    }
}

/// Shortest round-trip rendering, so equal values give equal bytes.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// One row per channel and metric, plus macro rows. Timing stays out so
/// identical runs give identical files.
pub fn write_metrics(path: &Path, report: &MetricReport) -> Result<()> {
    let mut out = CsvOut::create(path, &["task", "channel", "metric", "value", "count"])?;
    let task = report.task.as_str();
    for c in &report.channels {
        let count = c.count.to_string();
        for (metric, v) in [
            ("mae", c.mae),
            ("rmse", c.rmse),
            ("mae_raw", c.mae_raw),
            ("rmse_raw", c.rmse_raw),
        ] {
            out.row([task, &c.name, metric, &num(v), &count])?;
        }
    }
    let count = report.counted.to_string();
    out.row([task, "macro", "mae", &num(report.macro_mae), &count])?;
    out.row([task, "macro", "rmse", &num(report.macro_rmse), &count])?;
    out.finish()
}

pub fn write_losses(path: &Path, steps: &[StepLog]) -> Result<()> {
    let mut out = CsvOut::create(path, &["step", "epoch", "lr", "loss", "loss_pred", "loss_imp"])?;
    for s in steps {
        out.row([
            s.step.to_string(),
            s.epoch.to_string(),
            num(s.lr),
            num(s.loss),
            opt(s.pred),
            opt(s.imp),
        ])?;
    }
    out.finish()
}

/// Ordered `key=value` lines.
#[derive(Debug, Default)]
pub struct Summary(Vec<(String, String)>);

impl Summary {
    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn report(&mut self, prefix: &str, r: &MetricReport) -> &mut Self {
        self.set(&format!("{prefix}_macro_mae"), num(r.macro_mae))
            .set(&format!("{prefix}_macro_rmse"), num(r.macro_rmse))
            .set(&format!("{prefix}_counted"), r.counted)
            .set(&format!("{prefix}_excluded_interp"), r.excluded_interp)
            .set(&format!("{prefix}_wall_time_s"), num(r.wall_time_s))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (k, v) in &self.0 {
            writeln!(w, "{k}={v}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
