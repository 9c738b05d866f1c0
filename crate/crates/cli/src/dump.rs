//! CSV exports of model internals for offline inspection and plotting.

use std::path::Path;

use usts::backbone::Trace;
use usts::dataset::Segment;
use usts::embeddings::Calendar;
use usts::numerics::{Array, Tape};
use usts::trainer::Dataset;
use usts::{Error, Input, Model, RunConfig, Task};

use crate::args::{DumpArgs, DumpWhat};
use crate::commands::{load_config, load_model, open_dataset, Float, CONFIG_FILE};
use crate::output::{num, CsvOut};
use crate::{CliError, Result};

pub fn dump(args: &DumpArgs, env: Vec<(String, String)>) -> Result<()> {
    let fallback = args.ckpt.parent().map(|p| p.join(CONFIG_FILE));
    let mut cfg = load_config(&args.config, env, fallback)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if args.what == DumpWhat::Adjacency {
        let model = load_model(&cfg, &args.ckpt)?;
        return adjacency(&model, &args.out);
    }
    let path = args
        .data
        .as_deref()
        .ok_or_else(|| CliError::Usage("--data is required for this dump".into()))?;
    let data = open_dataset(path, &mut cfg, false)?;
    let model = load_model(&cfg, &args.ckpt)?;
    match args.what {
        DumpWhat::Attention => attention(&model, &data, args.sample, &args.out),
        DumpWhat::Bias => bias(&model, &data, args.sample, &args.out),
        DumpWhat::Features => features(&model, &data, &cfg, &args.out),
        DumpWhat::Adjacency => unreachable!("handled above"),
    }
}

fn matrix_header(prefix: &str, lead: &[&str], n: usize) -> Vec<String> {
    lead.iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|j| format!("{prefix}{j}")))
        .collect()
}

pub fn adjacency(model: &Model<Float>, out: &Path) -> Result<()> {
    let a = model.adjacency();
    let n = a.shape()[0];
    let vals = a.to_f64_vec();
    let mut w = CsvOut::create(out, &matrix_header("n", &["node"], n))?;
    for i in 0..n {
        w.row(std::iter::once(i.to_string()).chain(vals[i * n..(i + 1) * n].iter().map(|&v| num(v))))?;
    }
    Ok(w.finish()?)
}

/// One evaluation-mode forecast pass over test window `sample`.
fn run_sample(
    model: &Model<Float>,
    data: &Dataset,
    sample: usize,
    trace: Option<&mut Trace<Float>>,
) -> Result<Option<Array<Float>>> {
    let starts = data.starts(Segment::Test, &model.cfg)?;
    let start = *starts.get(sample).ok_or_else(|| {
        Error::Config(format!(
            "sample {sample} out of range; the test split has {} windows",
            starts.len()
        ))
    })?;
    let batch = data.batch::<Float>(&[start], &model.cfg)?;
    let tape = Tape::new();
    let input = Input {
        x: &batch.x,
        mask: None,
        times: &batch.times,
    };
    let out = model.forward(&tape, input, Task::Predict, None, None, trace)?;
    Ok(out.bias.map(|b| (*b.value()).clone()))
}

fn write_square_rows(w: &mut CsvOut, lead: &[String], m: &[f64], l: usize) -> Result<()> {
    for i in 0..l {
        let row = lead
            .iter()
            .cloned()
            .chain([i.to_string()])
            .chain(m[i * l..(i + 1) * l].iter().map(|&v| num(v)));
        w.row(row)?;
    }
    Ok(())
}

/// Head-averaged attention weights, `L` rows per block.
pub fn attention(model: &Model<Float>, data: &Dataset, sample: usize, out: &Path) -> Result<()> {
    let mut trace = Trace::default();
    run_sample(model, data, sample, Some(&mut trace))?;
    let l = model.cfg.hist_len;
    let mut w = CsvOut::create(out, &matrix_header("k", &["layer", "query"], l))?;
    for (layer, att) in trace.attention.iter().enumerate() {
        let heads = att.shape()[1];
        let vals = att.to_f64_vec();
        let mut mean = vec![0.0; l * l];
        for h in 0..heads {
            for (m, v) in mean.iter_mut().zip(&vals[h * l * l..(h + 1) * l * l]) {
                *m += v / heads as f64;
            }
        }
        write_square_rows(&mut w, &[layer.to_string()], &mean, l)?;
    }
    Ok(w.finish()?)
}

pub fn bias(model: &Model<Float>, data: &Dataset, sample: usize, out: &Path) -> Result<()> {
    let b = run_sample(model, data, sample, None)?
        .ok_or_else(|| Error::Config("bias injection is disabled in this model".into()))?;
    let l = model.cfg.hist_len;
    let mut w = CsvOut::create(out, &matrix_header("k", &["query"], l))?;
    write_square_rows(&mut w, &[], &b.to_f64_vec(), l)?;
    Ok(w.finish()?)
}

/// First-block hidden states for every test step, one row per step,
/// labelled with its hour of the week. Windows are taken back to back so
/// each step appears at most once.
pub fn features(model: &Model<Float>, data: &Dataset, cfg: &RunConfig, out: &Path) -> Result<()> {
    let mcfg = &model.cfg;
    let (l, d) = (mcfg.hist_len, mcfg.d_model);
    let range = data.bounds.get(Segment::Test);
    let span = l + mcfg.horizon;
    let starts: Vec<usize> = (range.start..(range.end + 1).saturating_sub(span)).step_by(l).collect();
    if starts.is_empty() {
        return Err(Error::EmptyDataset(format!("test split shorter than one window of {span} steps")).into());
    }
    let step_minutes = data.series.step_ms / 60_000;
    let mut w = CsvOut::create(out, &matrix_header("f", &["hour_of_week"], d))?;
    for chunk in starts.chunks(cfg.train.batch_size.max(1)) {
        let batch = data.batch::<Float>(chunk, mcfg)?;
        let tape = Tape::new();
        let mut trace = Trace::default();
        let input = Input {
            x: &batch.x,
            mask: None,
            times: &batch.times,
        };
        model.forward(&tape, input, Task::Predict, None, None, Some(&mut trace))?;
        let hidden = trace
            .hidden
            .first()
            .ok_or_else(|| Error::Config("model has no blocks".into()))?;
        let vals = hidden.to_f64_vec();
        for (r, &t) in batch.times.iter().enumerate() {
            let label = Calendar::hour_of_week(t, step_minutes);
            w.row(std::iter::once(label.to_string()).chain(vals[r * d..(r + 1) * d].iter().map(|&v| num(v))))?;
        }
    }
    Ok(w.finish()?)
}
