#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usts::numerics::{Array, ParamStore, Real};
use usts::ModelConfig;

/// Small configuration exercising every block regime.
pub fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        nodes: 4,
        channels: 2,
        hist_len: 8,
        horizon: 4,
        d_model: 16,
        n_heads: 2,
        n_layers: 3,
        frozen_layers: 1,
        adapted_layers: 1,
        lora_rank: 2,
        embed_dim: 2,
        perception_hidden: 8,
        guidance_hidden: 4,
        intervals_per_day: 24,
        cond_hidden: 6,
        gate_hidden: 4,
        ..ModelConfig::default()
    }
}

pub fn times(batch: usize, len: usize, start: u64) -> Vec<u64> {
    (0..batch)
        .flat_map(|b| (0..len as u64).map(move |t| start + 7 * b as u64 + t))
        .collect()
}

pub fn randn(shape: &[usize], seed: u64) -> Array<f64> {
    Array::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn bernoulli(shape: &[usize], p_one: f64, seed: u64) -> Array<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| if rng.random::<f64>() < p_one { 1.0 } else { 0.0 })
}

pub fn set<T: Real>(store: &mut ParamStore<T>, name: &str, shape: &[usize], vals: &[f64]) {
    let id = store.lookup(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.assign(id, Array::from_f64(shape, vals).unwrap()).unwrap();
}

pub fn set_array<T: Real>(store: &mut ParamStore<T>, name: &str, value: Array<f64>) {
    let id = store.lookup(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.assign(id, value.cast()).unwrap();
}

/// `scale·(((i·7 + off) mod 11) − 5)` for `i` in `0..n`.
pub fn pattern(n: usize, scale: f64, off: usize) -> Vec<f64> {
    (0..n).map(|i| scale * ((((i * 7 + off) % 11) as f64) - 5.0)).collect()
}

pub fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "index {i}: {g} vs {w}");
    }
}
