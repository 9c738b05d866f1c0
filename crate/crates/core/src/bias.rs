//! Dynamic attention bias: a static functional graph contracted onto the
//! time axis and modulated per sample by a differential-signal gate.

use log::warn;
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Array, Conv1d, Linear, ParamId, ParamStore, Real, Tape, Var};

/// Standard-deviation floor of the differential signal's z-normalisation.
pub const STD_FLOOR: f64 = 1e-6;

/// Cosine similarity of node profiles. `series` is `[T, N, C]`; node `i`'s
/// profile is its `[T, C]` slice flattened. Zero-norm profiles get a
/// one-hot self-loop row.
pub fn cosine_similarity<T: Real>(series: &Array<T>) -> Result<Array<f64>> {
    let s = series.shape();
    if s.len() != 3 {
        return Err(Error::shape("build_adjacency", s, &[]));
    }
    let (t, n, c) = (s[0], s[1], s[2]);
    let profile =
        |i: usize| (0..t).flat_map(move |ti| (0..c).map(move |ci| series.data()[(ti * n + i) * c + ci].to_f64_lossy()));
    let norms: Vec<f64> = (0..n).map(|i| profile(i).map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut a = Array::<f64>::zeros(&[n, n]);
    let degenerate: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    if !degenerate.is_empty() {
        warn!("zero-norm profiles for nodes {degenerate:?}; using self-loops");
    }
    for i in 0..n {
        for j in i..n {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else if i == j {
                1.0
            } else {
                profile(i).zip(profile(j)).map(|(x, y)| x * y).sum::<f64>() / (norms[i] * norms[j])
            };
            a.set(&[i, j], v);
            a.set(&[j, i], v);
        }
    }
    Ok(a)
}

/// Symmetric degree normalisation `D^{-1/2} A D^{-1/2}`. Rows with a
/// non-positive degree are left unscaled.
pub fn normalize_symmetric(a: &Array<f64>) -> Array<f64> {
    let n = a.shape()[0];
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.data()[i * n..(i + 1) * n].iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    Array::from_fn(&[n, n], |k| a.data()[k] * inv_sqrt[k / n] * inv_sqrt[k % n])
}

/// Functional adjacency from the training range of a `[T, N, C]` series.
pub fn build_adjacency<T: Real>(series: &Array<T>) -> Result<Array<T>> {
    let a = normalize_symmetric(&cosine_similarity(series)?);
    if !a.is_finite() {
        return Err(Error::NonFinite("functional adjacency".into()));
    }
    Ok(a.cast())
}

/// Node-averaged first difference, z-normalised per (sample, channel):
/// `[B, L, N, C] → [B, L, C]`. The first step's difference is 0.
pub fn differential_signal<T: Real>(x: &Array<T>) -> Result<Array<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("differential_signal", s, &[]));
    }
    let (b, l, n, c) = (s[0], s[1], s[2], s[3]);
    let mut out = Array::<T>::zeros(&[b, l, c]);
    if l < 2 {
        warn!("differential signal needs at least two steps; using zeros");
        return Ok(out);
    }
    for bi in 0..b {
        for ci in 0..c {
            let mean_at = |t: usize| {
                (0..n)
                    .map(|ni| x.data()[((bi * l + t) * n + ni) * c + ci].to_f64_lossy())
                    .sum::<f64>()
                    / n as f64
            };
            let means: Vec<f64> = (0..l).map(mean_at).collect();
            let mut diffs = vec![0.0; l];
            for t in 1..l {
                diffs[t] = means[t] - means[t - 1];
            }
            let mu = diffs.iter().sum::<f64>() / l as f64;
            let var = diffs.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / l as f64;
            let sd = var.sqrt().max(STD_FLOOR);
            for (t, d) in diffs.iter().enumerate() {
                out.set(&[bi, t, ci], T::lit((d - mu) / sd));
            }
        }
    }
    Ok(out)
}

/// `B_s = P'·A·P'ᵀ` with `P' = tanh(P ⊙ k)`: `[L, N]`, `[L, N]`, `[N, N]`
/// to `[L, L]`.
pub fn static_bias<'t, T: Real>(projection: Var<'t, T>, k: Var<'t, T>, adjacency: Var<'t, T>) -> Result<Var<'t, T>> {
    let p = projection.mul(k)?.tanh();
    p.matmul(adjacency)?.matmul_t(p)
}

/// `B̃_b = μ·(g_b g_bᵀ) ⊙ B_s` for `g: [B, L]`, giving `[B, L, L]`.
pub fn dynamic_bias<'t, T: Real>(static_bias: Var<'t, T>, g: Var<'t, T>, intensity: Var<'t, T>) -> Result<Var<'t, T>> {
    let gs = g.shape();
    if gs.len() != 2 {
        return Err(Error::shape("dynamic_bias", &gs, &static_bias.shape()));
    }
    let (b, l) = (gs[0], gs[1]);
    // Scaling the length-L gate first saves a pass over the L×L product.
    let scaled = g.mul(intensity)?.reshape(&[b, l, 1])?;
    scaled.matmul(g.reshape(&[b, 1, l])?)?.mul(static_bias)
}

#[derive(Debug, Clone)]
pub struct BiasGenerator {
    /// Learnable `[L, N]` projection onto the time axis.
    pub projection: ParamId,
    /// Scalar intensity `μ`.
    pub intensity: ParamId,
    pub gate_in: Conv1d,
    pub gate_out: Conv1d,
    pub head_k: Linear,
    pub head_g: Linear,
    /// Fixed functional adjacency; persisted with the model.
    pub adjacency: ParamId,
    pub nodes: usize,
}

impl BiasGenerator {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (l, n, h) = (cfg.hist_len, cfg.nodes, cfg.gate_hidden);
        // Variance 1/√N.
        let std = (n as f64).powf(-0.25);
        Ok(Self {
            projection: store.add("bias.projection", Array::randn(&[l, n], std, rng), true)?,
            intensity: store.add("bias.intensity", Array::scalar(T::lit(cfg.bias_intensity_init)), true)?,
            gate_in: Conv1d::new(store, "bias.gate_in", cfg.channels, h, cfg.gate_kernel, rng)?,
            gate_out: Conv1d::new(store, "bias.gate_out", h, h, cfg.gate_kernel, rng)?,
            head_k: Linear::new(store, "bias.head_k", h, n, true, true, rng)?,
            head_g: Linear::new(store, "bias.head_g", h, 1, true, true, rng)?,
            adjacency: store.add("bias.adjacency", identity(n), false)?,
            nodes: n,
        })
    }

    /// Temporal modulation `k: [L, N]` (batch-averaged) and the bounded
    /// gate `g: [B, L]` from a `[B, L, C]` differential signal.
    pub fn gate<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        signal: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = signal.shape();
        let features = self
            .gate_out
            .forward(tape, store, self.gate_in.forward(tape, store, signal)?.gelu())?;
        let k = self.head_k.forward(tape, store, features)?.mean_axis(0)?;
        let g = self
            .head_g
            .forward(tape, store, features)?
            .reshape(&[s[0], s[1]])?
            .tanh();
        Ok((k, g))
    }

    /// `[B, L, L]` bias for a scaled input `[B, L, N, C]`. The differential
    /// signal is computed from values only; it is scale invariant and
    /// carries no gradient. With `use_graph` off the identity replaces `A`.
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: &Array<T>,
        use_graph: bool,
    ) -> Result<Var<'t, T>> {
        let signal = tape.constant(differential_signal(x)?);
        let (k, g) = self.gate(tape, store, signal)?;
        let adjacency = if use_graph {
            tape.param(store, self.adjacency)
        } else {
            tape.constant(identity(self.nodes))
        };
        let bs = static_bias(tape.param(store, self.projection), k, adjacency)?;
        dynamic_bias(bs, g, tape.param(store, self.intensity))
    }
}

fn identity<T: Real>(n: usize) -> Array<T> {
    Array::from_fn(&[n, n], |k| if k / n == k % n { T::one() } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(profiles: &[&[f64]]) -> Array<f64> {
        // profiles[i] is node i's series over T steps, C = 1.
        let (n, t) = (profiles.len(), profiles[0].len());
        Array::from_fn(&[t, n, 1], |k| profiles[k % n][k / n])
    }

    #[test]
    fn identical_profiles_give_uniform_graph() {
        let a = build_adjacency(&series(&[&[1., 2.], &[1., 2.], &[1., 2.]])).unwrap();
        for &v in a.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_profiles_give_identity() {
        let s = series(&[&[1., 0., 0.], &[0., 2., 0.], &[0., 0., 3.]]);
        assert_eq!(cosine_similarity(&s).unwrap(), identity(3));
        assert_eq!(build_adjacency(&s).unwrap(), identity(3));
    }

    #[test]
    fn cosine_matrix_by_hand() {
        // p0 = [1,0], p1 = [1,1], p2 = [0,2]
        let a = cosine_similarity(&series(&[&[1., 0.], &[1., 1.], &[0., 2.]])).unwrap();
        let r = 0.5f64.sqrt();
        let expect = [1., r, 0., r, 1., r, 0., r, 1.];
        for (x, y) in a.data().iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_profile_gets_self_loop() {
        let a = cosine_similarity(&series(&[&[0., 0.], &[1., 1.]])).unwrap();
        assert_eq!(a.data(), &[1., 0., 0., 1.]);
    }

    #[test]
    fn differential_signal_by_hand() {
        // Node means over two nodes: [1, 3, 2].
        let x = Array::<f64>::from_f64(&[1, 3, 2, 1], &[0., 2., 3., 3., 1., 3.]).unwrap();
        let s = differential_signal(&x).unwrap();
        let expect = [-0.267261, 1.336306, -1.069045];
        for (v, e) in s.data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-6, "{v} vs {e}");
        }
        let flat = differential_signal(&Array::<f64>::full(&[2, 4, 3, 2], 5.0)).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.0));
        let single = differential_signal(&Array::<f64>::ones(&[1, 1, 2, 1])).unwrap();
        assert_eq!(single.data(), &[0.0]);
    }

    #[test]
    fn bias_by_hand() {
        let tape = Tape::<f64>::new();
        let bs = tape.constant(Array::from_f64(&[2, 2], &[1., 0.5, 0.5, 1.]).unwrap());
        let g = tape.constant(Array::from_f64(&[1, 2], &[1., -1.]).unwrap());
        let mu = tape.constant(Array::scalar(2.0));
        let b = dynamic_bias(bs, g, mu).unwrap();
        assert_eq!(b.value().data(), &[2., -1., -1., 2.]);

        // P ⊙ k = [[atanh 0.6, 0], [0, atanh 0.8]] → P' = diag(0.6, 0.8).
        let p = tape.constant(Array::from_f64(&[2, 2], &[0.6f64.atanh(), 0., 0., 0.8f64.atanh()]).unwrap());
        let k = tape.constant(Array::ones(&[2, 2]));
        let a = tape.constant(Array::from_f64(&[2, 2], &[1., 0.5, 0.5, 1.]).unwrap());
        let bs = static_bias(p, k, a).unwrap();
        let expect = [0.36, 0.24, 0.24, 0.64];
        for (v, e) in bs.value().data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
        let zero_k = tape.constant(Array::zeros(&[2, 2]));
        assert!(static_bias(p, zero_k, a)
            .unwrap()
            .value()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
