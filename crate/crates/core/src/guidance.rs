//! Per-node preliminary estimates: a GRU forecaster for prediction and a
//! bidirectional auto-regressive GRU for imputation.
//!
//! Both treat every node's `[L, C]` sequence as an independent row of a
//! `[B·N, L, C]` batch (sample-major, node-minor).

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{stack, Array, Gru, Linear, ParamStore, Real, Tape, Var};

/// `[B, L, N, C] → [B·N, L, C]`.
pub fn to_rows<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("to_rows", &s, &[]));
    }
    x.permute(&[0, 2, 1, 3])?.reshape(&[s[0] * s[2], s[1], s[3]])
}

/// Inverse of [`to_rows`] for `batch` samples.
pub fn from_rows<'t, T: Real>(rows: Var<'t, T>, batch: usize) -> Result<Var<'t, T>> {
    let s = rows.shape();
    if s.len() != 3 || batch == 0 || !s[0].is_multiple_of(batch) {
        return Err(Error::shape("from_rows", &s, &[batch]));
    }
    rows.reshape(&[batch, s[0] / batch, s[1], s[2]])?.permute(&[0, 2, 1, 3])
}

/// Array form of [`to_rows`], used for masks.
pub fn array_to_rows<T: Real>(x: &Array<T>) -> Result<Array<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("to_rows", s, &[]));
    }
    x.permute(&[0, 2, 1, 3])?.into_reshape(&[s[0] * s[2], s[1], s[3]])
}

#[derive(Debug, Clone)]
pub struct Guidance {
    pub predict_gru: Gru,
    pub predict_head: Linear,
    pub forward_gru: Gru,
    pub forward_head: Linear,
    pub backward_gru: Gru,
    pub backward_head: Linear,
}

impl Guidance {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (c, h) = (cfg.channels, cfg.guidance_hidden);
        Ok(Self {
            predict_gru: Gru::new(store, "guide.predict.gru", c, h, rng)?,
            predict_head: Linear::new(store, "guide.predict.head", h, c, true, true, rng)?,
            forward_gru: Gru::new(store, "guide.forward.gru", c, h, rng)?,
            forward_head: Linear::new(store, "guide.forward.head", h, c, true, true, rng)?,
            backward_gru: Gru::new(store, "guide.backward.gru", c, h, rng)?,
            backward_head: Linear::new(store, "guide.backward.head", h, c, true, true, rng)?,
        })
    }

    /// Forecast `[B, S, N, C]` from `x: [B, L, N, C]`: a GRU plus linear
    /// head over all `L` steps, keeping the last `horizon`.
    pub fn predict<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        horizon: usize,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let (b, l) = (shape[0], shape[1]);
        if horizon > l {
            return Err(Error::Config(format!(
                "guidance horizon {horizon} exceeds history length {l}"
            )));
        }
        let rows = to_rows(x)?;
        let hidden = self.predict_gru.forward(tape, store, rows, false)?;
        let est = self
            .predict_head
            .forward(tape, store, hidden.slice_axis(1, l - horizon, horizon)?)?;
        from_rows(est, b)
    }

    /// Reconstruction `[B, L, N, C]` of `x` where `mask` is 1 at observed
    /// entries. Observed entries pass through bitwise; masked ones take the
    /// estimate of a forward sweep, refined by a backward sweep that reads
    /// the forward result.
    pub fn impute<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        mask: &Array<T>,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if mask.shape() != shape.as_slice() {
            return Err(Error::shape("guide_impute", &shape, mask.shape()));
        }
        let (b, l, c) = (shape[0], shape[1], shape[3]);
        let rows = to_rows(x)?;
        let mrows = array_to_rows(mask)?;
        let r = rows.shape()[0];
        let step_mask: Vec<Array<T>> = (0..l)
            .map(|t| {
                Array::from_fn(&[r, c], |i| {
                    let (row, ch) = (i / c, i % c);
                    mrows.data()[(row * l + t) * c + ch]
                })
            })
            .collect();
        let obs: Vec<Var<'t, T>> = (0..l)
            .map(|t| rows.slice_axis(1, t, 1)?.reshape(&[r, c]))
            .collect::<Result<_>>()?;

        let mut h = self.forward_gru.initial(tape, r);
        let mut refined = Vec::with_capacity(l);
        for t in 0..l {
            let est = self.forward_head.forward(tape, store, h)?;
            let xt = obs[t].select(&step_mask[t], est)?;
            h = self.forward_gru.cell(tape, store, xt, h)?;
            refined.push(xt);
        }

        let mut h = self.backward_gru.initial(tape, r);
        let mut out = vec![None; l];
        for t in (0..l).rev() {
            h = self.backward_gru.cell(tape, store, refined[t], h)?;
            let est = self.backward_head.forward(tape, store, h)?;
            out[t] = Some(obs[t].select(&step_mask[t], est)?);
        }
        let out: Vec<Var<'t, T>> = out.into_iter().map(|v| v.expect("every step visited")).collect();
        from_rows(stack(&out, 1)?, b)
    }
}
