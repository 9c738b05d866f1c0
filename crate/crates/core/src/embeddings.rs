//! Calendar embedding and the spatio-temporal perception pathway that turns
//! a traffic tensor into the backbone's input sequence.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Array, Conv2d1x1, GroupedConv1d, Gru, Linear, ParamId, ParamStore, Real, Tape, Var};

/// Step-index arithmetic for the intra-day and day-of-week indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calendar {
    /// Data steps per embedding interval.
    pub steps_per_interval: u64,
    pub intervals_per_day: u64,
    pub week_cycle: u64,
}

impl Calendar {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            steps_per_interval: cfg.steps_per_interval,
            intervals_per_day: cfg.intervals_per_day,
            week_cycle: cfg.week_cycle,
        }
    }

    /// `(⌊t/f⌋ mod Q, ⌊t/(Q·f)⌋ mod P)`.
    pub fn indices(&self, t: u64) -> (usize, usize) {
        let day = (t / self.steps_per_interval) % self.intervals_per_day;
        let week = (t / (self.intervals_per_day * self.steps_per_interval)) % self.week_cycle;
        (day as usize, week as usize)
    }

    /// Steps after which both indices repeat.
    pub fn period(&self) -> u64 {
        self.steps_per_interval * self.intervals_per_day * self.week_cycle
    }

    /// Hour-of-week label for a step of `step_minutes` minutes.
    pub fn hour_of_week(t: u64, step_minutes: u64) -> u64 {
        (t * step_minutes / 60) % (24 * 7)
    }
}

#[derive(Debug, Clone)]
pub struct TemporalEmbedding {
    pub calendar: Calendar,
    /// Intra-day table `[Q, D]`.
    pub daily: ParamId,
    /// Day-of-week table `[P, D]`.
    pub weekly: ParamId,
    pub dim: usize,
}

impl TemporalEmbedding {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let calendar = Calendar::from_config(cfg);
        let d = cfg.embed_dim;
        Ok(Self {
            calendar,
            daily: store.add(
                "embed.daily",
                Array::randn(&[cfg.intervals_per_day as usize, d], cfg.init_std, rng),
                true,
            )?,
            weekly: store.add(
                "embed.weekly",
                Array::randn(&[cfg.week_cycle as usize, d], cfg.init_std, rng),
                true,
            )?,
            dim: d,
        })
    }

    /// `E_t = W_d[h_d] + W_w[h_w]` for `times` laid out `[B, L]`
    /// row-major; the result is `[B, L, D]`.
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        times: &[u64],
        batch: usize,
    ) -> Result<Var<'t, T>> {
        if batch == 0 || !times.len().is_multiple_of(batch) {
            return Err(Error::shape("temporal_embedding", &[times.len()], &[batch]));
        }
        let (day, week): (Vec<usize>, Vec<usize>) = times.iter().map(|&t| self.calendar.indices(t)).unzip();
        let e = tape
            .param(store, self.daily)
            .gather_rows(&day)?
            .add(tape.param(store, self.weekly).gather_rows(&week)?)?;
        e.reshape(&[batch, times.len() / batch, self.dim])
    }
}

/// Channel mixing, grouped node convolution, recurrence and projection:
/// `[B, L, N, C] → [B, L, N] → [B, L, D] → [B, L, d_h] → [B, L, d]`.
#[derive(Debug, Clone)]
pub struct Perception {
    pub channel_mix: Conv2d1x1,
    pub node_groups: GroupedConv1d,
    pub gru: Gru,
    pub proj: Linear,
    pub nodes: usize,
    pub channels: usize,
    pub embed_dim: usize,
}

impl Perception {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            channel_mix: Conv2d1x1::new(store, "percept.channel_mix", cfg.channels, rng)?,
            node_groups: GroupedConv1d::new(
                store,
                "percept.node_groups",
                cfg.nodes,
                cfg.embed_dim,
                cfg.group_kernel,
                rng,
            )?,
            gru: Gru::new(store, "percept.gru", cfg.embed_dim, cfg.perception_hidden, rng)?,
            proj: Linear::new(
                store,
                "percept.proj",
                cfg.perception_hidden,
                cfg.d_model,
                true,
                true,
                rng,
            )?,
            nodes: cfg.nodes,
            channels: cfg.channels,
            embed_dim: cfg.embed_dim,
        })
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        time_embed: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[2] != self.nodes || xs[3] != self.channels {
            return Err(Error::shape("perception input", &xs, &[self.nodes, self.channels]));
        }
        let es = time_embed.shape();
        if es != [xs[0], xs[1], self.embed_dim] {
            return Err(Error::shape(
                "perception temporal embedding",
                &es,
                &[xs[0], xs[1], self.embed_dim],
            ));
        }
        let mixed = self.channel_mix.forward(tape, store, x)?.gelu();
        let grouped = self.node_groups.forward(tape, store, mixed)?.gelu();
        let hidden = self.gru.forward(tape, store, grouped.add(time_embed.tanh())?, false)?;
        self.proj.forward(tape, store, hidden)
    }
}
