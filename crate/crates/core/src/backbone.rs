//! Partially frozen pre-norm transformer.
//!
//! The lower `frozen_layers` blocks are fully frozen. The top
//! `adapted_layers` blocks keep frozen base weights but carry low-rank
//! adapters on selected attention projections, trainable attention
//! LayerNorms, and receive the dynamic attention bias. Blocks in between
//! are frozen and unbiased.

use rand::Rng;

use crate::config::{LoraTarget, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Array, Linear, ParamId, ParamStore, Real, Tape, Var};

const LN_EPS: f64 = 1e-5;

/// Low-rank update `x·B·A·scale` with `B: [d, r]` (zero init) and
/// `A: [r, d]` (Gaussian init, variance `1/r`).
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    pub down: ParamId,
    pub up: ParamId,
    pub scale: f64,
}

impl LoraAdapter {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            down: store.add(format!("{name}.lora_b"), Array::zeros(&[d_in, rank]), true)?,
            up: store.add(format!("{name}.lora_a"), lora_a_init(rank, d_out, rng), true)?,
            scale,
        })
    }
}

/// Fresh `A` factor for a rank-`rank` adapter.
pub fn lora_a_init<T: Real>(rank: usize, d_out: usize, rng: &mut impl Rng) -> Array<T> {
    Array::randn(&[rank, d_out], 1.0 / (rank as f64).sqrt(), rng)
}

/// Whether a parameter name belongs to a low-rank adapter.
pub fn is_lora(name: &str) -> bool {
    name.ends_with(".lora_a") || name.ends_with(".lora_b")
}

/// `x·W₀ + scale·((x·B)·A)`; the dense update is never formed.
pub fn apply_lora<'t, T: Real>(
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    x: Var<'t, T>,
    base: Var<'t, T>,
    adapter: &LoraAdapter,
) -> Result<Var<'t, T>> {
    let delta = x
        .matmul(tape.param(store, adapter.down))?
        .matmul(tape.param(store, adapter.up))?
        .scale(T::lit(adapter.scale));
    base.add(delta)
}

/// Frozen dense projection with an optional adapter.
#[derive(Debug, Clone)]
pub struct Projection {
    pub base: Linear,
    pub lora: Option<LoraAdapter>,
}

impl Projection {
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        adapters: bool,
    ) -> Result<Var<'t, T>> {
        let base = self.base.forward(tape, store, x)?;
        match (&self.lora, adapters) {
            (Some(lora), true) => apply_lora(tape, store, x, base, lora),
            _ => Ok(base),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Array::ones(&[d]), trainable)?,
            beta: store.add(format!("{name}.beta"), Array::zeros(&[d]), trainable)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(tape.param(store, self.gamma), tape.param(store, self.beta), LN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub ln_attn: LayerNorm,
    pub q: Projection,
    pub k: Projection,
    pub v: Projection,
    pub o: Projection,
    pub ln_mlp: LayerNorm,
    pub fc: Linear,
    pub fc_out: Linear,
    /// Top block: adapters, trainable attention norm, receives the bias.
    pub adapted: bool,
    pub n_heads: usize,
}

/// Per-forward switches.
#[derive(Debug, Clone, Copy)]
pub struct PassOptions {
    pub causal: bool,
    /// Route through the adapters; off gives the pure frozen forward.
    pub adapters: bool,
}

/// Intermediate values captured for inspection.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    /// Attention weights `[B, H, L, L]` per block.
    pub attention: Vec<Array<T>>,
    /// Output `[B, L, d]` of each block.
    pub hidden: Vec<Array<T>>,
}

/// `softmax(Q·Kᵀ/√d_k + B̃ [+ causal]) · V` for `[B, H, L, d_k]` inputs.
/// The bias `[B, L, L]` is shared by all heads. Returns the output and the
/// attention weights.
pub fn biased_attention<'t, T: Real>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    causal: bool,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let qs = q.shape();
    if qs.len() != 4 {
        return Err(Error::shape("attention", &qs, &k.shape()));
    }
    let (b, l, dk) = (qs[0], qs[2], qs[3]);
    let tape = q.tape();
    let mut logits = q
        .matmul(k.permute(&[0, 1, 3, 2])?)?
        .scale(T::one() / T::lit(dk as f64).sqrt());
    if let Some(bias) = bias {
        if bias.shape() != [b, l, l] {
            return Err(Error::shape("attention bias", &bias.shape(), &[b, l, l]));
        }
        if !bias.value().is_finite() {
            return Err(Error::NonFinite("attention bias from the bias generator".into()));
        }
        logits = logits.add(bias.reshape(&[b, 1, l, l])?)?;
    }
    if causal {
        logits = logits.add(tape.constant(causal_mask(l)))?;
    }
    let weights = logits.softmax_last();
    Ok((weights.matmul(v)?, weights))
}

/// `[L, L]` additive mask with `−∞` above the diagonal.
pub fn causal_mask<T: Real>(l: usize) -> Array<T> {
    Array::from_fn(&[l, l], |i| if i % l > i / l { T::neg_infinity() } else { T::zero() })
}

impl Block {
    /// Block `index` with frozen `N(0, init_std²)` weights. Configuration
    /// invariants are checked by [`Backbone::new`], not here.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        index: usize,
        cfg: &ModelConfig,
        adapted: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let name = format!("backbone.block{index}");
        let mut projection = |store: &mut ParamStore<T>, which: &str, target: LoraTarget| -> Result<Projection> {
            let pname = format!("{name}.attn.{which}");
            let base = Linear::new_normal(store, &pname, d, d, cfg.init_std, false, rng)?;
            let lora = if adapted && cfg.lora_targets.contains(&target) {
                Some(LoraAdapter::new(
                    store,
                    &pname,
                    d,
                    d,
                    cfg.lora_rank,
                    cfg.lora_scale,
                    rng,
                )?)
            } else {
                None
            };
            Ok(Projection { base, lora })
        };
        let q = projection(store, "q", LoraTarget::Q)?;
        let k = projection(store, "k", LoraTarget::K)?;
        let v = projection(store, "v", LoraTarget::V)?;
        let o = projection(store, "o", LoraTarget::O)?;
        Ok(Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d, adapted)?,
            q,
            k,
            v,
            o,
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln_mlp"), d, false)?,
            fc: Linear::new_normal(store, &format!("{name}.mlp.fc"), d, 4 * d, cfg.init_std, false, rng)?,
            fc_out: Linear::new_normal(store, &format!("{name}.mlp.out"), 4 * d, d, cfg.init_std, false, rng)?,
            adapted,
            n_heads: cfg.n_heads,
        })
    }

    /// `Z = MHA(LN(h)) + h; out = FFN(LN(Z)) + Z`.
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        h: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        opts: PassOptions,
        trace: Option<&mut Trace<T>>,
    ) -> Result<Var<'t, T>> {
        if bias.is_some() && !self.adapted {
            return Err(Error::Contract(
                "attention bias passed to a block outside the adapted top".into(),
            ));
        }
        let s = h.shape();
        if s.len() != 3 {
            return Err(Error::shape("block", &s, &[]));
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        let heads = self.n_heads;
        let dk = d / heads;
        let x = self.ln_attn.forward(tape, store, h)?;
        let split = |p: Var<'t, T>| p.reshape(&[b, l, heads, dk])?.permute(&[0, 2, 1, 3]);
        let q = split(self.q.forward(tape, store, x, opts.adapters)?)?;
        let k = split(self.k.forward(tape, store, x, opts.adapters)?)?;
        let v = split(self.v.forward(tape, store, x, opts.adapters)?)?;
        let (att, weights) = biased_attention(q, k, v, bias, opts.causal)?;
        let merged = att.permute(&[0, 2, 1, 3])?.reshape(&[b, l, d])?;
        let z = self.o.forward(tape, store, merged, opts.adapters)?.add(h)?;
        let m = self.ln_mlp.forward(tape, store, z)?;
        let ff = self
            .fc_out
            .forward(tape, store, self.fc.forward(tape, store, m)?.gelu())?;
        let out = ff.add(z)?;
        if let Some(trace) = trace {
            trace.attention.push((*weights.value()).clone());
            trace.hidden.push((*out.value()).clone());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub blocks: Vec<Block>,
    /// Frozen learned absolute positions `[L, d]`.
    pub positional: Option<ParamId>,
    pub ln_final: LayerNorm,
    pub d_model: usize,
}

impl Backbone {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let first_adapted = cfg.n_layers - cfg.adapted_layers;
        let blocks = (0..cfg.n_layers)
            .map(|i| Block::new(store, i, cfg, i >= first_adapted, rng))
            .collect::<Result<Vec<_>>>()?;
        let positional = if cfg.positional_embedding {
            Some(store.add(
                "backbone.positional",
                Array::randn(&[cfg.hist_len, cfg.d_model], cfg.init_std, rng),
                false,
            )?)
        } else {
            None
        };
        Ok(Self {
            blocks,
            positional,
            ln_final: LayerNorm::new(store, "backbone.ln_final", cfg.d_model, false)?,
            d_model: cfg.d_model,
        })
    }

    /// `[B, L, d] → [B, L, d]`; the bias reaches the adapted blocks only.
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        h: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        opts: PassOptions,
        mut trace: Option<&mut Trace<T>>,
    ) -> Result<Var<'t, T>> {
        let s = h.shape();
        if s.len() != 3 || s[2] != self.d_model {
            return Err(Error::shape("backbone input", &s, &[self.d_model]));
        }
        let mut x = match self.positional {
            Some(pos) => {
                let table = tape.param(store, pos);
                let max_len = table.shape()[0];
                if s[1] > max_len {
                    return Err(Error::shape("positional embedding", &s, &[max_len, self.d_model]));
                }
                h.add(table.slice_axis(0, 0, s[1])?)?
            }
            None => h,
        };
        for block in &self.blocks {
            let block_bias = if block.adapted { bias } else { None };
            x = block.forward(tape, store, x, block_bias, opts, trace.as_deref_mut())?;
        }
        self.ln_final.forward(tape, store, x)
    }

    pub fn adapters(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.q, &b.k, &b.v, &b.o])
            .filter_map(|p| p.lora.as_ref())
    }
}
