//! The pipeline commands. Outputs land inside each command's `--out`
//! directory under fixed names, next to the effective `config.toml`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use usts::dataset::{self, cache, synth, Segment};
use usts::trainer::{self, Ablation, Dataset, MetricReport, TrainState};
use usts::{checkpoint, Error, Model, RunConfig, Task};

use crate::args::{AblateArgs, ConfigArgs, EvalArgs, PrepareArgs, SynthArgs, TrainArgs, WhichArg, ZeroshotArgs};
use crate::config;
use crate::output::{self, num, CsvOut, Summary};
use crate::Result;

/// Working precision of every command.
pub type Float = f32;

pub const CACHE_FILE: &str = "data.usts";
pub const CONFIG_FILE: &str = "config.toml";
pub const CKPT_FILE: &str = "model.ckpt";
pub const LOSSES_FILE: &str = "losses.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn metrics_file(task: Task) -> String {
    format!("metrics_{}.csv", task.as_str())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

pub fn load_config(args: &ConfigArgs, env: Vec<(String, String)>, fallback: Option<PathBuf>) -> Result<RunConfig> {
    let path = args.config.clone().or(fallback.filter(|p| p.exists()));
    Ok(config::load(path.as_deref(), &args.sets, env)?)
}

/// The config saved next to a checkpoint.
fn sibling_config(ckpt: &Path) -> Option<PathBuf> {
    Some(ckpt.parent()?.join(CONFIG_FILE))
}

/// Loads a cache. With `adopt_dims` the model takes its node and channel
/// counts from the data; otherwise a mismatch is a config error.
pub fn open_dataset(path: &Path, cfg: &mut RunConfig, adopt_dims: bool) -> Result<Dataset> {
    let series = cache::load(path)?;
    if adopt_dims {
        cfg.model.nodes = series.nodes;
        cfg.model.channels = series.channels;
        cfg.validate()?;
    }
    Ok(Dataset::new(series, &cfg.data, &cfg.model)?)
}

pub fn load_model(cfg: &RunConfig, ckpt: &Path) -> Result<Model<Float>> {
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    checkpoint::load(ckpt, &mut model.store, |_| false)?;
    Ok(model)
}

/// Fits a fresh model on `data` with the graph taken from its training range.
pub fn train_model(cfg: &RunConfig, data: &Dataset) -> Result<(Model<Float>, TrainState)> {
    // Fail on short splits before spending an epoch.
    for seg in [Segment::Val, Segment::Test] {
        data.starts(seg, &cfg.model)?;
    }
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    trainer::install_adjacency(&mut model, data)?;
    let state = trainer::fit(&mut model, data, &cfg.train)?;
    Ok((model, state))
}

/// Test metrics for both tasks.
pub fn score(model: &Model<Float>, data: &Dataset, cfg: &RunConfig) -> Result<[MetricReport; 2]> {
    let p = trainer::evaluate(model, data, Segment::Test, Task::Predict, &cfg.train)?;
    let i = trainer::evaluate(model, data, Segment::Test, Task::Impute, &cfg.train)?;
    Ok([p, i])
}

fn base_summary(command: &str, cfg: &RunConfig) -> Summary {
    let mut s = Summary::default();
    s.set("command", command)
        .set("seed", cfg.train.seed)
        .set("config_hash", config::hash(cfg));
    s
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let spec = synth::SynthSpec {
        nodes: args.nodes,
        channels: args.channels,
        len: args.len,
        period: args.period,
        seed: args.seed,
        step_ms: 86_400_000 / args.period.max(1) as u64,
        ..Default::default()
    };
    if args.channels > 5 {
        return Err(Error::Config("the telecom layout holds at most 5 channels".into()).into());
    }
    let series = synth::generate(&spec)?;
    let path = args.out.join("data.tsv");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    synth::write_tsv(&mut w, &series, args.drop_rate, args.seed ^ 0x5eed)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;

    let mut cfg = RunConfig::default();
    cfg.data.grid_width = synth::grid_width(args.nodes);
    cfg.data.clusters = args.nodes;
    cfg.data.step_ms = spec.step_ms;
    cfg.data.channel_cols = (3..3 + args.channels).collect();
    cfg.data.channel_names.truncate(args.channels);
    cfg.data.stride = Some(1);
    let m = &mut cfg.model;
    m.nodes = args.nodes;
    m.channels = args.channels;
    m.intervals_per_day = args.period as u64;
    m.hist_len = 2 * args.period;
    m.horizon = args.period / 2;
    m.d_model = 32;
    m.n_layers = 4;
    m.frozen_layers = 2;
    m.adapted_layers = 2;
    m.embed_dim = 8;
    m.perception_hidden = 16;
    m.guidance_hidden = 16;
    cfg.train.lr = 3e-3;
    cfg.train.warmup_steps = 25;
    cfg.train.total_steps = 500;
    cfg.validate()?;
    config::save(&args.out.join(CONFIG_FILE), &cfg)?;
    info!("wrote {} steps × {} nodes to {}", args.len, args.nodes, path.display());
    Ok(())
}

pub fn prepare(args: &PrepareArgs, env: Vec<(String, String)>) -> Result<()> {
    let mut cfg = load_config(&args.config, env, None)?;
    if let Some(w) = args.grid_width {
        cfg.data.grid_width = w;
    }
    if let Some(k) = args.clusters {
        cfg.data.clusters = k;
    }
    cfg.model.nodes = cfg.data.clusters;
    cfg.model.channels = cfg.data.channel_cols.len();
    cfg.validate()?;
    ensure_dir(&args.out)?;
    let paths: Vec<&Path> = args.input.iter().map(PathBuf::as_path).collect();
    let prepared = dataset::prepare(&paths, &cfg.data)?;
    let s = &prepared.series;
    cache::save(&args.out.join(CACHE_FILE), s)?;

    let mut out = CsvOut::create(&args.out.join("clusters.csv"), &["square_id", "node", "row", "col"])?;
    for (sq, node) in prepared.clustering.squares.iter().zip(&prepared.clustering.labels) {
        let [row, col] = dataset::cluster::grid_coords(*sq, cfg.data.id_base, cfg.data.grid_width)?;
        out.row([sq.to_string(), node.to_string(), row.to_string(), col.to_string()])?;
    }
    out.finish()?;

    let mut sum = base_summary("prepare", &cfg);
    sum.set("lines", prepared.report.lines)
        .set("malformed", prepared.report.malformed)
        .set("cells", prepared.report.records.len())
        .set("steps", s.len)
        .set("nodes", s.nodes)
        .set("channels", s.channels)
        .set("interpolated", s.interp.iter().filter(|&&f| f).count())
        .set("degenerate_nodes", format!("{:?}", prepared.degenerate));
    sum.save(&args.out.join(SUMMARY_FILE))?;
    config::save(&args.out.join(CONFIG_FILE), &cfg)?;
    info!("cached {} steps × {} nodes × {} channels", s.len, s.nodes, s.channels);
    Ok(())
}

/// Trains, checkpoints and scores one configuration into `dir`.
fn train_into(cfg: &RunConfig, data: &Dataset, data_path: &Path, dir: &Path) -> Result<[MetricReport; 2]> {
    ensure_dir(dir)?;
    config::save(&dir.join(CONFIG_FILE), cfg)?;
    let timer = Instant::now();
    let (model, state) = train_model(cfg, data)?;
    let train_time = timer.elapsed().as_secs_f64();
    checkpoint::save(&dir.join(CKPT_FILE), &model.store)?;
    output::write_losses(&dir.join(LOSSES_FILE), &state.steps)?;
    let mut val = CsvOut::create(&dir.join("val_losses.csv"), &["epoch", "val_loss"])?;
    for (e, v) in state.val_losses.iter().enumerate() {
        val.row([e.to_string(), num(*v)])?;
    }
    val.finish()?;
    let reports = score(&model, data, cfg)?;
    for r in &reports {
        output::write_metrics(&dir.join(metrics_file(r.task)), r)?;
    }
    let (total, trainable) = model.param_counts();
    let mut sum = base_summary("train", cfg);
    sum.set("data", data_path.display())
        .set("params_total", total)
        .set("params_trainable", trainable)
        .set("steps", state.steps.len())
        .set("epochs", state.val_losses.len())
        .set("best_epoch", state.best_epoch)
        .set("best_val", num(state.best_val))
        .set("stopped_early", state.stopped_early)
        .set("train_wall_time_s", num(train_time))
        .set(
            "final_loss",
            state.steps.last().map(|s| num(s.loss)).unwrap_or_default(),
        );
    for r in &reports {
        sum.report(r.task.as_str(), r);
    }
    sum.save(&dir.join(SUMMARY_FILE))?;
    Ok(reports)
}

pub fn train(args: &TrainArgs, env: Vec<(String, String)>) -> Result<()> {
    let mut cfg = load_config(&args.config, env, None)?;
    let data = open_dataset(&args.data, &mut cfg, true)?;
    let [p, i] = train_into(&cfg, &data, &args.data, &args.out)?;
    info!("test predict MAE {:.4}, impute MAE {:.4}", p.macro_mae, i.macro_mae);
    Ok(())
}

fn write_report(dir: &Path, command: &str, cfg: &RunConfig, report: &MetricReport) -> Result<()> {
    ensure_dir(dir)?;
    output::write_metrics(&dir.join(metrics_file(report.task)), report)?;
    let mut sum = base_summary(command, cfg);
    sum.set("params_total", report.params_total)
        .set("params_trainable", report.params_trainable)
        .report(report.task.as_str(), report);
    sum.save(&dir.join(format!("{command}_{}.txt", report.task.as_str())))?;
    config::save(&dir.join(CONFIG_FILE), cfg)?;
    Ok(())
}

pub fn eval(args: &EvalArgs, env: Vec<(String, String)>) -> Result<()> {
    let mut cfg = load_config(&args.config, env, sibling_config(&args.ckpt))?;
    let data = open_dataset(&args.data, &mut cfg, false)?;
    let model = load_model(&cfg, &args.ckpt)?;
    let report = trainer::evaluate(&model, &data, args.split.into(), args.task.into(), &cfg.train)?;
    info!(
        "{} MAE {:.4} RMSE {:.4}",
        report.task, report.macro_mae, report.macro_rmse
    );
    write_report(&args.out, "eval", &cfg, &report)
}

pub fn zeroshot(args: &ZeroshotArgs, env: Vec<(String, String)>) -> Result<()> {
    let mut cfg = load_config(&args.config, env, sibling_config(&args.source_ckpt))?;
    let target = open_dataset(&args.target_data, &mut cfg, false)?;
    let model = load_model(&cfg, &args.source_ckpt)?;
    let medians = match (cfg.data.reuse_source_medians, &args.source_data) {
        (false, _) => None,
        (true, Some(p)) => Some(cache::load(p)?.medians),
        (true, None) => {
            return Err(Error::Config("data.reuse_source_medians needs --source-data".into()).into());
        }
    };
    let report = trainer::zero_shot(
        &model,
        &target,
        medians.as_deref(),
        cfg.data.reuse_source_adjacency,
        args.task.into(),
        &cfg.train,
    )?;
    info!("zero-shot {} MAE {:.4}", report.task, report.macro_mae);
    write_report(&args.out, "zeroshot", &cfg, &report)
}

pub fn ablate(args: &AblateArgs, env: Vec<(String, String)>) -> Result<()> {
    let mut cfg = load_config(&args.config, env, None)?;
    let data = open_dataset(&args.data, &mut cfg, true)?;
    let mut variants: Vec<Option<Ablation>> = Vec::new();
    for w in &args.which {
        let add: &[Option<Ablation>] = match w {
            WhichArg::Ste => &[Some(Ablation::Ste)],
            WhichArg::Gs => &[Some(Ablation::Gs)],
            WhichArg::Ge => &[Some(Ablation::Ge)],
            WhichArg::All => &[None, Some(Ablation::Ste), Some(Ablation::Gs), Some(Ablation::Ge)],
        };
        for v in add {
            if !variants.contains(v) {
                variants.push(*v);
            }
        }
    }
    ensure_dir(&args.out)?;
    let mut table = CsvOut::create(
        &args.out.join("ablation.csv"),
        &["variant", "seed", "task", "macro_mae", "macro_rmse"],
    )?;
    for v in variants {
        let name = v.map_or("full".to_string(), |a| format!("no_{a}"));
        for k in 0..args.seeds {
            let mut run = cfg.clone();
            if let Some(a) = v {
                run.model = trainer::ablate(&cfg.model, a);
            }
            run.train.seed = cfg.train.seed + k;
            info!("training {name} with seed {}", run.train.seed);
            let dir = args.out.join(format!("{name}_seed{}", run.train.seed));
            for r in train_into(&run, &data, &args.data, &dir)? {
                table.row([
                    name.clone(),
                    run.train.seed.to_string(),
                    r.task.to_string(),
                    num(r.macro_mae),
                    num(r.macro_rmse),
                ])?;
            }
        }
    }
    table.finish()?;
    Ok(())
}
