//! Run configuration: every tunable default in one serialisable tree.
//!
//! Unknown keys are rejected at deserialisation time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which attention projections carry low-rank adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub nodes: usize,
    pub channels: usize,
    pub hist_len: usize,
    pub horizon: usize,

    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub frozen_layers: usize,
    pub adapted_layers: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub lora_targets: Vec<LoraTarget>,
    pub positional_embedding: bool,
    pub causal_predict: bool,
    pub causal_impute: bool,
    pub init_std: f64,

    /// Temporal-embedding width, also the grouped-conv group count.
    pub embed_dim: usize,
    pub group_kernel: usize,
    pub perception_hidden: usize,
    pub guidance_hidden: usize,

    pub steps_per_interval: u64,
    pub intervals_per_day: u64,
    pub week_cycle: u64,

    pub conditioning: bool,
    pub cond_hidden: usize,
    pub cond_center_init: f64,
    pub cond_radius_init: f64,

    pub bias_injection: bool,
    pub bias_intensity_init: f64,
    pub gate_hidden: usize,
    pub gate_kernel: usize,

    pub regress_kernel: usize,
    pub gate_init: f64,

    /// Ablation switches: temporal embedding, guidance signal, graph prior.
    pub use_ste: bool,
    pub use_guidance: bool,
    pub use_graph: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            channels: 5,
            hist_len: 288,
            horizon: 144,
            d_model: 64,
            n_heads: 4,
            n_layers: 6,
            frozen_layers: 3,
            adapted_layers: 3,
            lora_rank: 4,
            lora_scale: 1.0,
            lora_targets: vec![LoraTarget::Q, LoraTarget::K],
            positional_embedding: true,
            causal_predict: true,
            causal_impute: false,
            init_std: 0.02,
            embed_dim: 16,
            group_kernel: 3,
            perception_hidden: 32,
            guidance_hidden: 32,
            steps_per_interval: 1,
            intervals_per_day: 144,
            week_cycle: 7,
            conditioning: true,
            cond_hidden: 16,
            cond_center_init: 1.0,
            cond_radius_init: 0.1,
            bias_injection: true,
            bias_intensity_init: 0.1,
            gate_hidden: 16,
            gate_kernel: 3,
            regress_kernel: 3,
            gate_init: 0.5,
            use_ste: true,
            use_guidance: true,
            use_graph: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.nodes == 0 || self.channels == 0 || self.hist_len == 0 || self.horizon == 0 {
            return fail("nodes, channels, hist_len and horizon must be positive".into());
        }
        if self.horizon > self.hist_len {
            return fail(format!(
                "horizon {} exceeds history length {}; the guidance head keeps the last S of L steps",
                self.horizon, self.hist_len
            ));
        }
        if self.frozen_layers + self.adapted_layers > self.n_layers {
            return fail(format!(
                "frozen_layers {} + adapted_layers {} exceeds n_layers {}",
                self.frozen_layers, self.adapted_layers, self.n_layers
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.lora_rank == 0 || self.lora_rank > self.d_model / 4 {
            return fail(format!(
                "lora_rank {} must satisfy 1 ≤ r ≤ d_model/4 = {}",
                self.lora_rank,
                self.d_model / 4
            ));
        }
        if self.embed_dim == 0 || self.perception_hidden == 0 || self.guidance_hidden == 0 {
            return fail("embed_dim, perception_hidden and guidance_hidden must be positive".into());
        }
        for (name, k) in [
            ("group_kernel", self.group_kernel),
            ("gate_kernel", self.gate_kernel),
            ("regress_kernel", self.regress_kernel),
        ] {
            if k == 0 || k > self.hist_len {
                return fail(format!("{name} {k} must be in 1..={}", self.hist_len));
            }
        }
        if self.steps_per_interval == 0 || self.intervals_per_day == 0 || self.week_cycle == 0 {
            return fail("calendar factors must be positive".into());
        }
        if !(self.gate_init > 0.0 && self.gate_init < 1.0) {
            return fail(format!("gate_init {} must lie in (0, 1)", self.gate_init));
        }
        Ok(())
    }
}

/// Optimisation and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Task mix: `α·L_pred + (1−α)·L_imp`.
    pub alpha: f64,
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub mask_min: f64,
    pub mask_max: f64,
    /// Contiguous temporal-run masking instead of elementwise masking.
    pub block_mask: bool,
    pub block_mean_len: f64,
    pub seed: u64,
    /// Mask seed for evaluation, fixed so metrics are reproducible.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lr: 3e-4,
            warmup_steps: 100,
            total_steps: 5000,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            mask_min: 0.70,
            mask_max: 0.80,
            block_mask: false,
            block_mean_len: 6.0,
            seed: 0,
            eval_seed: 12345,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.warmup_steps >= self.total_steps {
            return fail(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return fail(format!("invalid learning rate {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_min)
            || !(0.0..=1.0).contains(&self.mask_max)
            || self.mask_min > self.mask_max
        {
            return fail(format!("invalid mask range [{}, {}]", self.mask_min, self.mask_max));
        }
        Ok(())
    }
}

/// Dataset preparation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub grid_width: u64,
    /// Square id of the grid's first cell (Milan numbers squares from 1).
    pub id_base: u64,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub step_ms: u64,
    pub col_square_id: usize,
    pub col_timestamp: usize,
    /// Column index per channel, in channel order.
    pub channel_cols: Vec<usize>,
    pub channel_names: Vec<String>,
    pub stride: Option<usize>,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub seed: u64,
    /// Zero-shot: reuse the source medians instead of the target's own.
    pub reuse_source_medians: bool,
    /// Zero-shot: reuse the source adjacency instead of recomputing it.
    pub reuse_source_adjacency: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            grid_width: 100,
            id_base: 1,
            clusters: 200,
            kmeans_iters: 100,
            step_ms: 600_000,
            col_square_id: 0,
            col_timestamp: 1,
            channel_cols: vec![3, 4, 5, 6, 7],
            channel_names: ["sms_in", "sms_out", "call_in", "call_out", "internet"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            stride: None,
            train_ratio: 0.8,
            val_ratio: 0.1,
            seed: 0,
            reuse_source_medians: false,
            reuse_source_adjacency: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.channel_cols.len() != self.data.channel_names.len() {
            return Err(Error::Config(
                "data.channel_cols and data.channel_names differ in length".into(),
            ));
        }
        Ok(())
    }
}
