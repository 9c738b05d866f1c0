//! Joint forecasting and imputation training, evaluation, ablation
//! variants and cross-dataset transfer.

pub mod loss;
pub mod metrics;
pub mod optim;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bias::build_adjacency;
use crate::config::{DataConfig, ModelConfig, TrainConfig};
use crate::dataset::{gen_mask, make_batch, split_bounds, windows, Batch, NodeSeries, Segment, SplitBounds};
use crate::error::{Error, Result};
use crate::fusion::Task;
use crate::model::{Input, Model};
use crate::numerics::{Array, Real, Tape, Var};

pub use loss::{loss_imp, loss_pred, masked_mse, total_loss};
pub use metrics::{ChannelMetrics, MetricAccumulator, MetricReport};
pub use optim::{lr_at, AdamW};

/// A prepared series with its split and windowing policy.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: NodeSeries,
    pub bounds: SplitBounds,
    pub stride: usize,
    pub channel_names: Vec<String>,
}

impl Dataset {
    pub fn new(series: NodeSeries, data: &DataConfig, model: &ModelConfig) -> Result<Self> {
        if series.nodes != model.nodes || series.channels != model.channels {
            return Err(Error::Config(format!(
                "series has {} nodes × {} channels, model expects {} × {}",
                series.nodes, series.channels, model.nodes, model.channels
            )));
        }
        let bounds = split_bounds(series.len, data.train_ratio, data.val_ratio)?;
        let mut channel_names = data.channel_names.clone();
        channel_names.resize_with(series.channels, String::new);
        for (c, n) in channel_names.iter_mut().enumerate() {
            if n.is_empty() {
                *n = format!("ch{c}");
            }
        }
        Ok(Self {
            series,
            bounds,
            stride: data.stride.unwrap_or(model.horizon),
            channel_names,
        })
    }

    pub fn starts(&self, seg: Segment, cfg: &ModelConfig) -> Result<Vec<usize>> {
        windows(self.bounds.get(seg), seg, cfg.hist_len, cfg.horizon, self.stride)
    }

    pub fn batch<T: Real>(&self, starts: &[usize], cfg: &ModelConfig) -> Result<Batch<T>> {
        make_batch(&self.series, starts, cfg.hist_len, cfg.horizon)
    }
}

/// Sets the model's functional graph from the training range only.
pub fn install_adjacency<T: Real>(model: &mut Model<T>, data: &Dataset) -> Result<()> {
    let a = build_adjacency::<T>(&data.series.slice(data.bounds.train.clone())?)?;
    model.set_adjacency(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub pred: Option<f64>,
    pub imp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub steps: Vec<StepLog>,
    /// Validation loss after each completed epoch.
    pub val_losses: Vec<f64>,
    /// Epoch (0-based) whose weights were restored.
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

/// The joint objective on one batch with its branch terms.
pub struct JointLoss<'t, T> {
    pub total: Var<'t, T>,
    pub pred: Option<Var<'t, T>>,
    pub imp: Option<Var<'t, T>>,
}

/// Records a forecasting view and a masked view of the same windows on
/// `tape` and combines them by `alpha`. Branches with zero weight are
/// skipped and draw no randomness.
pub fn joint_loss<'t, T: Real>(
    model: &Model<T>,
    tape: &'t Tape<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<JointLoss<'t, T>> {
    let b = batch.len();
    let input = Input {
        x: &batch.x,
        mask: None,
        times: &batch.times,
    };
    let pred = if cfg.alpha > 0.0 {
        let u: Vec<f64> = (0..b).map(|_| rng.random()).collect();
        let out = model.forward(tape, input, Task::Predict, Some(&u), None, None)?;
        Some(loss_pred(out.y, &batch.y, &batch.y_interp)?)
    } else {
        None
    };
    let imp = if cfg.alpha < 1.0 {
        let block = cfg.block_mask.then_some(cfg.block_mean_len);
        let (mask, _) = gen_mask::<T>(batch.x.shape(), cfg.mask_min, cfg.mask_max, block, rng)?;
        let u: Vec<f64> = (0..b).map(|_| rng.random()).collect();
        let out = model.forward(
            tape,
            Input {
                mask: Some(&mask),
                ..input
            },
            Task::Impute,
            Some(&u),
            None,
            None,
        )?;
        Some(loss_imp(out.y, &batch.x, &mask, &batch.x_interp)?)
    } else {
        None
    };
    Ok(JointLoss {
        total: total_loss(pred, imp, cfg.alpha)?,
        pred,
        imp,
    })
}

/// One optimisation step on `batch`. Returns the total loss and the two
/// branch losses; a non-finite total is reported before any update.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<(f64, Option<f64>, Option<f64>)> {
    let tape = Tape::new();
    let loss = joint_loss(model, &tape, batch, cfg, rng)?;
    let scalar = |v: Var<'_, T>| v.value().item().to_f64_lossy();
    let value = scalar(loss.total);
    let parts = (loss.pred.map(scalar), loss.imp.map(scalar));
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let grads = tape.backward(loss.total)?;
    model.store.zero_grads();
    grads.store_into(&mut model.store);
    opt.step(&mut model.store, lr);
    Ok((value, parts.0, parts.1))
}

/// Trains with validation-loss early stopping; see [`fit_with`].
pub fn fit<T: Real>(model: &mut Model<T>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    fit_with(model, data, cfg, |m| validation_loss(m, data, cfg))
}

/// Shuffled epochs over the training windows, stopping at `total_steps`,
/// at `max_epochs`, or after `patience` epochs without a validation gain.
/// The best-validation weights are restored before returning. Update `k`
/// (counting from 1) uses the learning rate `lr_at(k)`.
pub fn fit_with<T: Real>(
    model: &mut Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut validate: impl FnMut(&Model<T>) -> Result<f64>,
) -> Result<TrainState> {
    cfg.validate()?;
    let mut starts = data.starts(Segment::Train, &model.cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg);
    let mut state = TrainState {
        steps: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: 0,
        best_val: f64::INFINITY,
        stopped_early: false,
    };
    let mut best = model.store.snapshot();
    let mut last_finite = f64::NAN;
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        if state.steps.len() >= cfg.total_steps {
            break;
        }
        starts.shuffle(&mut rng);
        for chunk in starts.chunks(cfg.batch_size) {
            let step = state.steps.len();
            if step >= cfg.total_steps {
                break;
            }
            let batch = data.batch::<T>(chunk, &model.cfg)?;
            let lr = lr_at(step + 1, cfg);
            let (loss, pred, imp) = match train_step(model, &mut opt, &batch, cfg, lr, &mut rng) {
                Err(Error::NonFinite(_)) => return Err(Error::NonFiniteLoss { step, last_finite }),
                r => r?,
            };
            last_finite = loss;
            debug!("step {step} lr {lr:.3e} loss {loss:.6}");
            state.steps.push(StepLog {
                step,
                epoch,
                lr,
                loss,
                pred,
                imp,
            });
        }
        let val = validate(model)?;
        info!("epoch {epoch}: validation loss {val:.6}");
        state.val_losses.push(val);
        if val < state.best_val {
            state.best_val = val;
            state.best_epoch = epoch;
            best = model.store.snapshot();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                state.stopped_early = true;
                break;
            }
        }
    }
    if !state.val_losses.is_empty() {
        model.store.restore(&best);
    }
    Ok(state)
}

/// Masked metrics over one split. Forecasts are scored on every
/// non-interpolated target; imputations on masked, non-interpolated
/// entries under masks drawn from `eval_seed`. Runs in evaluation mode.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    data: &Dataset,
    seg: Segment,
    task: Task,
    cfg: &TrainConfig,
) -> Result<MetricReport> {
    let timer = Instant::now();
    let mcfg = &model.cfg;
    let starts = data.starts(seg, mcfg)?;
    let s = &data.series;
    let mut acc = MetricAccumulator::new(s.nodes, s.channels, &s.medians)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    let block = cfg.block_mask.then_some(cfg.block_mean_len);
    for chunk in starts.chunks(cfg.batch_size.max(1)) {
        let batch = data.batch::<T>(chunk, mcfg)?;
        let tape = Tape::new();
        let input = Input {
            x: &batch.x,
            mask: None,
            times: &batch.times,
        };
        let flags = |a: &Array<T>| a.data().iter().map(|&v| v == T::one()).collect::<Vec<bool>>();
        match task {
            Task::Predict => {
                let out = model.forward(&tape, input, task, None, None, None)?;
                let n = batch.y.numel();
                acc.add(
                    &out.y.value().to_f64_vec(),
                    &batch.y.to_f64_vec(),
                    &vec![true; n],
                    &flags(&batch.y_interp),
                )?;
            }
            Task::Impute => {
                let (mask, _) = gen_mask::<T>(batch.x.shape(), cfg.mask_min, cfg.mask_max, block, &mut rng)?;
                let out = model.forward(
                    &tape,
                    Input {
                        mask: Some(&mask),
                        ..input
                    },
                    task,
                    None,
                    None,
                    None,
                )?;
                let masked: Vec<bool> = mask.data().iter().map(|&m| m == T::zero()).collect();
                acc.add(
                    &out.y.value().to_f64_vec(),
                    &batch.x.to_f64_vec(),
                    &masked,
                    &flags(&batch.x_interp),
                )?;
            }
        }
    }
    let mut report = acc.finish(task, &data.channel_names)?;
    report.wall_time_s = timer.elapsed().as_secs_f64();
    (report.params_total, report.params_trainable) = model.param_counts();
    Ok(report)
}

/// The training objective measured on the validation split.
pub fn validation_loss<T: Real>(model: &Model<T>, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    if cfg.alpha > 0.0 {
        total += cfg.alpha * evaluate(model, data, Segment::Val, Task::Predict, cfg)?.mse;
    }
    if cfg.alpha < 1.0 {
        total += (1.0 - cfg.alpha) * evaluate(model, data, Segment::Val, Task::Impute, cfg)?.mse;
    }
    Ok(total)
}

/// Evaluates a trained model on another dataset's test split without
/// touching its parameters. The graph is rebuilt from the target's
/// training range unless `reuse_adjacency`; `source_medians` replaces the
/// target's own normalisation when given.
pub fn zero_shot<T: Real>(
    model: &Model<T>,
    target: &Dataset,
    source_medians: Option<&[f64]>,
    reuse_adjacency: bool,
    task: Task,
    cfg: &TrainConfig,
) -> Result<MetricReport> {
    let s = &target.series;
    if s.nodes != model.cfg.nodes || s.channels != model.cfg.channels {
        return Err(Error::Config(format!(
            "target has {} nodes × {} channels, model was trained on {} × {}",
            s.nodes, s.channels, model.cfg.nodes, model.cfg.channels
        )));
    }
    let mut target = target.clone();
    if let Some(m) = source_medians {
        target.series.renormalize(m)?;
    }
    let mut m = model.clone();
    if !reuse_adjacency {
        install_adjacency(&mut m, &target)?;
    }
    evaluate(&m, &target, Segment::Test, task, cfg)
}

/// Components that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Temporal embedding replaced by zeros.
    Ste,
    /// Guidance blend removed.
    Gs,
    /// Graph replaced by the identity.
    Ge,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Ste, Ablation::Gs, Ablation::Ge];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Ste => "ste",
            Ablation::Gs => "gs",
            Ablation::Ge => "ge",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ste" => Ok(Ablation::Ste),
            "gs" => Ok(Ablation::Gs),
            "ge" => Ok(Ablation::Ge),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected ste, gs or ge)"
            ))),
        }
    }
}

pub fn ablate(cfg: &ModelConfig, which: Ablation) -> ModelConfig {
    let mut out = cfg.clone();
    match which {
        Ablation::Ste => out.use_ste = false,
        Ablation::Gs => out.use_guidance = false,
        Ablation::Ge => out.use_graph = false,
    }
    out
}
