//! AdamW with a warm-up plus cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::config::TrainConfig;
use crate::numerics::{Array, ParamStore, Real};

/// Linear ramp to `lr` over the warm-up, then cosine decay to zero at
/// `total_steps`, and zero afterwards.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr * step as f64 / cfg.warmup_steps as f64;
    }
    let span = cfg.total_steps.saturating_sub(cfg.warmup_steps).max(1) as f64;
    let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
    (cfg.lr * 0.5 * (1.0 + (PI * progress).cos())).max(0.0)
}

/// Adam moments plus decoupled weight decay. Decay applies to matrices and
/// higher-rank weights only; vectors such as biases and norm gains are left
/// alone. Only trainable parameters carrying a gradient are touched.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: i32,
    moments: Vec<Option<(Array<T>, Array<T>)>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.steps += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.steps));
        let c2 = T::lit(1.0 - self.beta2.powi(self.steps));
        let (eps, lr_t) = (T::lit(self.eps), T::lit(lr));
        let decay = T::lit(lr * self.weight_decay);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let Some(grad) = p.grad.take() else { continue };
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Array::zeros(grad.shape()), Array::zeros(grad.shape())));
            let decays = p.value.rank() >= 2 && self.weight_decay != 0.0;
            let moments = m.data_mut().iter_mut().zip(v.data_mut());
            for ((w, &g), (mi, vi)) in p.value.data_mut().iter_mut().zip(grad.data()).zip(moments) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                if decays {
                    *w -= decay * *w;
                }
                *w -= lr_t * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
            p.grad = Some(grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            warmup_steps: 10,
            total_steps: 110,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_points() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 0.0);
        assert_eq!(lr_at(5, &c), 5e-4);
        assert_eq!(lr_at(10, &c), 1e-3);
        assert!((lr_at(60, &c) - 5e-4).abs() < 1e-15);
        assert_eq!(lr_at(110, &c), 0.0);
        assert_eq!(lr_at(10_000, &c), 0.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add("w", Array::from_f64(&[2], &[1.0, -1.0]).unwrap(), true)
            .unwrap();
        let frozen = store
            .add("f", Array::from_f64(&[1, 1], &[3.0]).unwrap(), false)
            .unwrap();
        store.get_mut(id).grad = Some(Array::from_f64(&[2], &[0.5, -2.0]).unwrap());
        let mut opt = AdamW::new(&TrainConfig::default());
        opt.step(&mut store, 0.1);
        let w = store.value(id).to_f64_vec();
        // Bias-corrected first Adam step is lr·sign(g) up to eps.
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
        assert_eq!(store.value(frozen).to_f64_vec(), vec![3.0]);
    }

    #[test]
    fn decay_only_on_matrices() {
        let mut store = ParamStore::<f64>::new();
        let v = store.add("v", Array::from_f64(&[1], &[2.0]).unwrap(), true).unwrap();
        let m = store.add("m", Array::from_f64(&[1, 1], &[2.0]).unwrap(), true).unwrap();
        for id in [v, m] {
            store.get_mut(id).grad = Some(Array::zeros(&[1]).reshape(store.value(id).shape()).unwrap());
        }
        let mut opt = AdamW::new(&TrainConfig {
            weight_decay: 0.5,
            ..Default::default()
        });
        opt.step(&mut store, 0.1);
        assert_eq!(store.value(v).item(), 2.0);
        assert!((store.value(m).item() - 1.9).abs() < 1e-12);
    }
}
