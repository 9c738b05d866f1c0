//! Task heads mapping backbone features to the target space and the gated
//! blend with the guidance estimate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Array, Conv1d, ParamId, ParamStore, Real, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Predict,
    Impute,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Predict => "predict",
            Task::Impute => "impute",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predict" => Ok(Task::Predict),
            "impute" => Ok(Task::Impute),
            other => Err(Error::Contract(format!("unknown task {other:?}"))),
        }
    }
}

/// Temporal convolution `d → N·C` followed by a learned `L → S` map over
/// the time axis (skipped when `S = L`), reshaped to `[B, S, N, C]`.
#[derive(Debug, Clone)]
pub struct RegressionHead {
    pub conv: Conv1d,
    /// `([L, S] weight, [S] bias)`.
    pub resample: Option<(ParamId, ParamId)>,
    pub nodes: usize,
    pub channels: usize,
    pub out_len: usize,
}

impl RegressionHead {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        out_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let width = cfg.nodes * cfg.channels;
        let conv = Conv1d::new(
            store,
            &format!("{name}.conv"),
            cfg.d_model,
            width,
            cfg.regress_kernel,
            rng,
        )?;
        let resample = if out_len == cfg.hist_len {
            None
        } else {
            let bound = 1.0 / (cfg.hist_len as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("positive bound");
            let w = Array::from_fn(&[cfg.hist_len, out_len], |_| T::lit(dist.sample(rng)));
            let b = Array::from_fn(&[out_len], |_| T::lit(dist.sample(rng)));
            Some((
                store.add(format!("{name}.resample.weight"), w, true)?,
                store.add(format!("{name}.resample.bias"), b, true)?,
            ))
        };
        Ok(Self {
            conv,
            resample,
            nodes: cfg.nodes,
            channels: cfg.channels,
            out_len,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = h.shape()[0];
        let mut y = self.conv.forward(tape, store, h)?;
        if let Some((w, bias)) = self.resample {
            y = y
                .permute(&[0, 2, 1])?
                .matmul(tape.param(store, w))?
                .add(tape.param(store, bias))?
                .permute(&[0, 2, 1])?;
        }
        y.reshape(&[b, self.out_len, self.nodes, self.channels])
    }
}

/// `(1 − λ)·H_out + λ·G` with `λ = σ(λ_raw)`.
pub fn gated_fuse<'t, T: Real>(head: Var<'t, T>, guide: Var<'t, T>, gate_raw: Var<'t, T>) -> Result<Var<'t, T>> {
    if head.shape() != guide.shape() {
        return Err(Error::shape("gated_fuse", &head.shape(), &guide.shape()));
    }
    let lambda = gate_raw.sigmoid();
    // H + λ·(G − H) is the same blend with one fewer rounding step.
    head.add(guide.sub(head)?.mul(lambda)?)
}

#[derive(Debug, Clone)]
pub struct Fusion {
    pub predict_head: RegressionHead,
    pub impute_head: RegressionHead,
    pub predict_gate: ParamId,
    pub impute_gate: ParamId,
}

impl Fusion {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let raw = T::lit((cfg.gate_init / (1.0 - cfg.gate_init)).ln());
        Ok(Self {
            predict_head: RegressionHead::new(store, "fusion.predict", cfg, cfg.horizon, rng)?,
            impute_head: RegressionHead::new(store, "fusion.impute", cfg, cfg.hist_len, rng)?,
            predict_gate: store.add("fusion.predict.gate", Array::scalar(raw), true)?,
            impute_gate: store.add("fusion.impute.gate", Array::scalar(raw), true)?,
        })
    }

    pub fn head(&self, task: Task) -> &RegressionHead {
        match task {
            Task::Predict => &self.predict_head,
            Task::Impute => &self.impute_head,
        }
    }

    pub fn gate(&self, task: Task) -> ParamId {
        match task {
            Task::Predict => self.predict_gate,
            Task::Impute => self.impute_gate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn task_tags() {
        assert_eq!("predict".parse::<Task>().unwrap(), Task::Predict);
        assert_eq!("forecast".parse::<Task>().unwrap_err().code(), "E_CONTRACT");
    }

    #[test]
    fn blend_by_hand() {
        let tape = Tape::<f64>::new();
        let h = tape.constant(Array::full(&[1, 1, 1, 1], 4.0));
        let g = tape.constant(Array::full(&[1, 1, 1, 1], 8.0));
        let raw = tape.constant(Array::scalar((0.25f64 / 0.75).ln()));
        let y = gated_fuse(h, g, raw).unwrap();
        assert!((y.value().item() - 5.0).abs() < 1e-12);

        let hi = gated_fuse(h, g, tape.constant(Array::scalar(60.0))).unwrap();
        assert!((hi.value().item() - 8.0).abs() < 1e-12);
        let lo = gated_fuse(h, g, tape.constant(Array::scalar(-60.0))).unwrap();
        assert!((lo.value().item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn head_by_hand() {
        // d = 2, N = C = 1, L = 2, S = 1, kernel 1.
        let cfg = ModelConfig {
            nodes: 1,
            channels: 1,
            hist_len: 2,
            horizon: 1,
            d_model: 2,
            regress_kernel: 1,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let head = RegressionHead::new(&mut store, "h", &cfg, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store
            .assign(head.conv.weight, Array::from_f64(&[1, 2, 1], &[1., 2.]).unwrap())
            .unwrap();
        store
            .assign(head.conv.bias, Array::from_f64(&[1], &[0.5]).unwrap())
            .unwrap();
        let (w, b) = head.resample.unwrap();
        store
            .assign(w, Array::from_f64(&[2, 1], &[0.25, 0.75]).unwrap())
            .unwrap();
        store.assign(b, Array::from_f64(&[1], &[-1.]).unwrap()).unwrap();
        let tape = Tape::new();
        // conv: step0 = 1 + 2·2 + 0.5 = 5.5, step1 = 3 + 2·(−1) + 0.5 = 1.5
        // resample: 0.25·5.5 + 0.75·1.5 − 1 = 1.5
        let h = tape.constant(Array::from_f64(&[1, 2, 2], &[1., 2., 3., -1.]).unwrap());
        let y = head.forward(&tape, &store, h).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert!((y.value().item() - 1.5).abs() < 1e-12);

        let imp = RegressionHead::new(&mut store, "i", &cfg, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(imp.resample.is_none());
        assert_eq!(imp.forward(&tape, &store, h).unwrap().shape(), vec![1, 2, 1, 1]);
    }
}
