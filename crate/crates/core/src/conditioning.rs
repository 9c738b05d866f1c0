//! Conditional input scaling.
//!
//! A small network reads a summary of the input and predicts the bounds of a
//! uniform distribution; a per-sample scale `s` is drawn from it with the
//! reparameterisation `s = a + u·(b − a)`, applied to the input and inverted
//! on the output.

use log::warn;
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Array, Linear, ParamId, ParamStore, Real, Tape, Var};

/// Smallest admissible scale magnitude; keeps the output inversion finite.
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Conditioning {
    pub hidden: Linear,
    pub out: Linear,
    /// Base centre `c`.
    pub center: ParamId,
    /// Fluctuation radius `δ`.
    pub radius: ParamId,
}

impl Conditioning {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let features = cfg.nodes * cfg.channels;
        Ok(Self {
            hidden: Linear::new(store, "cond.hidden", features, cfg.cond_hidden, true, true, rng)?,
            out: Linear::new(store, "cond.out", cfg.cond_hidden, 2, true, true, rng)?,
            center: store.add("cond.center", Array::scalar(T::lit(cfg.cond_center_init)), true)?,
            radius: store.add("cond.radius", Array::scalar(T::lit(cfg.cond_radius_init)), true)?,
        })
    }

    /// Bounds `(a, b)`, each `[B]`, ordered so that `a ≤ b` elementwise.
    pub fn predict_bounds<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        summary: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let batch = summary.shape()[0];
        let hidden = self.hidden.forward(tape, store, summary)?.tanh();
        let delta = self.out.forward(tape, store, hidden)?;
        let c = tape.param(store, self.center);
        let radius = tape.param(store, self.radius);
        let lo = c.add(delta.slice_axis(1, 0, 1)?.reshape(&[batch])?.mul(radius)?)?;
        let hi = c.add(delta.slice_axis(1, 1, 1)?.reshape(&[batch])?.mul(radius)?)?;
        let (lv, hv) = (lo.value(), hi.value());
        let ordered = Array::from_fn(&[batch], |i| {
            if lv.data()[i] <= hv.data()[i] {
                T::one()
            } else {
                T::zero()
            }
        });
        Ok((lo.select(&ordered, hi)?, hi.select(&ordered, lo)?))
    }
}

/// Summary statistic fed to the bound predictor: the `[B, N·C]` feature
/// vector at the last time step whose mask row is not entirely zero. Without
/// a mask this is the last step.
pub fn summarize<T: Real>(x: &Array<T>, mask: Option<&Array<T>>) -> Result<Array<T>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] == 0 {
        return Err(Error::shape("summarize", shape, &[]));
    }
    let (b, l) = (shape[0], shape[1]);
    let width = shape[2] * shape[3];
    if let Some(m) = mask {
        if m.shape() != shape {
            return Err(Error::shape("summarize", shape, m.shape()));
        }
    }
    let mut out = Vec::with_capacity(b * width);
    for bi in 0..b {
        let step = |t: usize| &x.data()[(bi * l + t) * width..(bi * l + t + 1) * width];
        let Some(m) = mask else {
            out.extend_from_slice(step(l - 1));
            continue;
        };
        let mrow = |t: usize| &m.data()[(bi * l + t) * width..(bi * l + t + 1) * width];
        if let Some(t) = (0..l).rev().find(|&t| mrow(t).iter().any(|&v| v != T::zero())) {
            out.extend_from_slice(step(t));
            continue;
        }
        // Every row fully masked; unreachable for a nonempty observed set
        // but kept for masks supplied from outside.
        let mut sum = vec![T::zero(); width];
        let mut count = vec![0usize; width];
        for t in 0..l {
            for (j, (&v, &mv)) in step(t).iter().zip(mrow(t)).enumerate() {
                if mv != T::zero() {
                    sum[j] += v;
                    count[j] += 1;
                }
            }
        }
        if count.iter().all(|&c| c == 0) {
            warn!("sample {bi}: no observed entries, summary set to zero");
        }
        out.extend(
            sum.iter()
                .zip(&count)
                .map(|(&s, &c)| if c == 0 { T::zero() } else { s / T::lit(c as f64) }),
        );
    }
    Array::new(&[b, width], out)
}

/// Reparameterised draw `s = a + u·(b − a)` with one `u` per sample.
/// Magnitudes below [`MIN_SCALE`] are clamped away from zero.
pub fn sample_scale<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>, u: &[f64]) -> Result<Var<'t, T>> {
    let shape = a.shape();
    if shape != [u.len()] || b.shape() != shape {
        return Err(Error::shape("sample_scale", &shape, &[u.len()]));
    }
    let u = a.tape().constant(Array::from_f64(&[u.len()], u)?);
    let s = a.add(u.mul(b.sub(a)?)?)?;
    let eps = T::lit(MIN_SCALE);
    if s.value().data().iter().any(|v| v.abs() < eps) {
        warn!("scale magnitude below {MIN_SCALE:e}, clamped");
    }
    Ok(s.clamp_abs_min(eps))
}

fn per_sample<'t, T: Real>(s: Var<'t, T>, rank: usize) -> Result<Var<'t, T>> {
    let mut shape = vec![1; rank];
    shape[0] = s.numel();
    s.reshape(&shape)
}

/// `x·s` with one scale per leading-axis sample.
pub fn apply<'t, T: Real>(x: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
    let rank = x.shape().len();
    x.mul(per_sample(s, rank)?)
}

/// `y / s`, the inverse of [`apply`].
pub fn invert<'t, T: Real>(y: Var<'t, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
    let rank = y.shape().len();
    y.div(per_sample(s, rank)?)
}
