//! Parameterised building blocks composed from tape operations.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{concat, stack, Array, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Array<T> {
    if bound <= 0.0 {
        return Array::zeros(shape);
    }
    let dist = Uniform::new(-bound, bound).expect("bound > 0");
    Array::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

/// Dense layer `x·W + b` over the last axis; `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Kaiming-uniform style init, `U(±1/√in)`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&[in_dim, out_dim], bound, rng),
            trainable,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), uniform(&[out_dim], bound, rng), trainable)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Linear layer with `N(0, std²)` weights and zero bias.
    pub fn new_normal<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            Array::randn(&[in_dim, out_dim], std, rng),
            trainable,
        )?;
        let bias = Some(store.add(format!("{name}.bias"), Array::zeros(&[out_dim]), trainable)?);
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(tape.param(store, self.weight))?;
        match self.bias {
            Some(b) => y.add(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

/// 1×1 convolution collapsing the channel axis: `[B, L, N, C] → [B, L, N]`.
/// Activation is left to the caller.
#[derive(Debug, Clone)]
pub struct Conv2d1x1 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl Conv2d1x1 {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (channels.max(1) as f64).sqrt();
        Ok(Self {
            weight: store.add(format!("{name}.weight"), uniform(&[channels, 1], bound, rng), true)?,
            bias: store.add(format!("{name}.bias"), uniform(&[1], bound, rng), true)?,
            channels,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[3] != self.channels {
            return Err(Error::shape("conv2d_1x1", &shape, &[self.channels]));
        }
        let y = x
            .matmul(tape.param(store, self.weight))?
            .add(tape.param(store, self.bias))?;
        y.reshape(&shape[..3])
    }
}

/// Grouped temporal convolution over the node axis: `[B, L, N] → [B, L, D]`.
///
/// Nodes are split into `D` contiguous blocks of `ceil(N/D)` nodes (the node
/// axis is zero-padded when `N` is not a multiple of `D`). Each block has one
/// length-`K` kernel tied across its nodes, so a block's output is invariant
/// to reordering nodes inside it.
#[derive(Debug, Clone)]
pub struct GroupedConv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub groups: usize,
    pub kernel: usize,
    pub nodes: usize,
    /// Zero nodes appended so the node count divides evenly.
    pub node_padding: usize,
}

impl GroupedConv1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        nodes: usize,
        groups: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if groups == 0 || kernel == 0 {
            return Err(Error::Config(format!(
                "grouped conv needs groups ≥ 1 and kernel ≥ 1 (got {groups}, {kernel})"
            )));
        }
        let per_group = nodes.div_ceil(groups);
        let node_padding = per_group * groups - nodes;
        let bound = 1.0 / ((per_group * kernel).max(1) as f64).sqrt();
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                uniform(&[groups, 1, kernel], bound, rng),
                true,
            )?,
            bias: store.add(format!("{name}.bias"), uniform(&[groups], bound, rng), true)?,
            groups,
            kernel,
            nodes,
            node_padding,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.nodes {
            return Err(Error::shape("grouped_conv1d", &shape, &[self.nodes]));
        }
        let (b, l) = (shape[0], shape[1]);
        let per_group = (self.nodes + self.node_padding) / self.groups;
        // Tied weights: convolving each node then summing equals summing first.
        x.pad_axis(2, self.node_padding)?
            .reshape(&[b, l, self.groups, per_group])?
            .sum_axis(3)?
            .conv1d(
                tape.param(store, self.weight),
                tape.param(store, self.bias),
                self.groups,
            )
    }
}

/// Plain temporal convolution `[B, L, C_in] → [B, L, C_out]`, "same" padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / ((cin * kernel).max(1) as f64).sqrt();
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                uniform(&[cout, cin, kernel], bound, rng),
                true,
            )?,
            bias: store.add(format!("{name}.bias"), uniform(&[cout], bound, rng), true)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv1d(tape.param(store, self.weight), tape.param(store, self.bias), 1)
    }
}

/// Gated recurrent unit (reset/update/candidate gates in that order).
///
/// ```text
/// r  = σ(x·W_ir + b_ir + h·W_hr + b_hr)
/// z  = σ(x·W_iz + b_iz + h·W_hz + b_hz)
/// n  = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub w_ih: ParamId,
    pub b_ih: ParamId,
    pub w_hh: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        Ok(Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(&[input, 3 * hidden], bound, rng), true)?,
            b_ih: store.add(format!("{name}.b_ih"), uniform(&[3 * hidden], bound, rng), true)?,
            w_hh: store.add(format!("{name}.w_hh"), uniform(&[hidden, 3 * hidden], bound, rng), true)?,
            b_hh: store.add(format!("{name}.b_hh"), uniform(&[3 * hidden], bound, rng), true)?,
            input,
            hidden,
        })
    }

    /// Zero initial hidden state for a batch.
    pub fn initial<'t, T: Real>(&self, tape: &'t Tape<T>, batch: usize) -> Var<'t, T> {
        tape.constant(Array::zeros(&[batch, self.hidden]))
    }

    /// Input-side gate pre-activations `x·W_ih + b_ih` for any leading shape.
    pub fn input_gates<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        x.matmul(tape.param(store, self.w_ih))?
            .add(tape.param(store, self.b_ih))
    }

    /// One recurrence step from precomputed input gates `gi: [B, 3H]`.
    pub fn step_gates<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        gi: Var<'t, T>,
        h: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let hd = self.hidden;
        let gh = h
            .matmul(tape.param(store, self.w_hh))?
            .add(tape.param(store, self.b_hh))?;
        let r = gi.slice_axis(1, 0, hd)?.add(gh.slice_axis(1, 0, hd)?)?.sigmoid();
        let z = gi.slice_axis(1, hd, hd)?.add(gh.slice_axis(1, hd, hd)?)?.sigmoid();
        let n = gi
            .slice_axis(1, 2 * hd, hd)?
            .add(r.mul(gh.slice_axis(1, 2 * hd, hd)?)?)?
            .tanh();
        // (1 − z)·n + z·h  ==  n + z·(h − n)
        n.add(z.mul(h.sub(n)?)?)
    }

    /// One recurrence step on a raw input `x: [B, C_in]`.
    pub fn cell<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        h: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let gi = self.input_gates(tape, store, x)?;
        self.step_gates(tape, store, gi, h)
    }

    /// Runs the recurrence over `x: [B, T, C_in]`, returning `[B, T, H]`.
    /// With `reverse`, time is traversed from the end and outputs are
    /// written back in original order.
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        reverse: bool,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.input || shape[1] == 0 {
            return Err(Error::shape("gru", &shape, &[self.input]));
        }
        let (b, steps) = (shape[0], shape[1]);
        let gates = self.input_gates(tape, store, x)?;
        let mut h = self.initial(tape, b);
        let mut outs = vec![None; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let gi = gates.slice_axis(1, t, 1)?.reshape(&[b, 3 * self.hidden])?;
            h = self.step_gates(tape, store, gi, h)?;
            outs[t] = Some(h);
        }
        let outs: Vec<Var<'t, T>> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        stack(&outs, 1)
    }
}

/// GRU over `[B, T, C_in]`; the bidirectional form concatenates forward and
/// backward hidden sequences into `[B, T, 2H]`.
pub fn gru_forward<'t, T: Real>(
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    x: Var<'t, T>,
    forward: &Gru,
    backward: Option<&Gru>,
) -> Result<Var<'t, T>> {
    let f = forward.forward(tape, store, x, false)?;
    match backward {
        Some(bwd) => {
            let b = bwd.forward(tape, store, x, true)?;
            concat(&[f, b], 2)
        }
        None => Ok(f),
    }
}
