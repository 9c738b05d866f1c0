//! The assembled network: conditioning → perception → biased backbone →
//! task head, blended with the guidance estimate and rescaled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, PassOptions, Trace};
use crate::bias::BiasGenerator;
use crate::conditioning::{self, Conditioning};
use crate::config::ModelConfig;
use crate::embeddings::{Perception, TemporalEmbedding};
use crate::error::{Error, Result};
use crate::fusion::{gated_fuse, Fusion, Task};
use crate::guidance::Guidance;
use crate::numerics::{Array, ParamStore, Real, Tape, Var};

/// One forward pass's inputs. `x` is `[B, L, N, C]`; for imputation `mask`
/// marks observed entries with 1 and masked entries are zeroed before use.
/// `times` holds each step's global index, `[B, L]` row-major.
#[derive(Debug, Clone, Copy)]
pub struct Input<'a, T> {
    pub x: &'a Array<T>,
    pub mask: Option<&'a Array<T>>,
    pub times: &'a [u64],
}

/// Named intermediate results of a forward pass.
pub struct Output<'t, T> {
    /// Final output after inverse scaling.
    pub y: Var<'t, T>,
    /// Blended output before inverse scaling.
    pub fused: Var<'t, T>,
    pub head: Var<'t, T>,
    pub guide: Option<Var<'t, T>>,
    /// Per-sample scale `[B]`.
    pub scale: Var<'t, T>,
    pub bias: Option<Var<'t, T>>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub conditioning: Conditioning,
    pub temporal: TemporalEmbedding,
    pub perception: Perception,
    pub guidance: Guidance,
    pub bias: BiasGenerator,
    pub backbone: Backbone,
    pub fusion: Fusion,
}

impl<T: Real> Model<T> {
    /// Builds every component with seeded initialisation. The adjacency
    /// starts as the identity; install a computed one with
    /// [`Model::set_adjacency`].
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let conditioning = Conditioning::new(&mut store, &cfg, &mut rng)?;
        let temporal = TemporalEmbedding::new(&mut store, &cfg, &mut rng)?;
        let perception = Perception::new(&mut store, &cfg, &mut rng)?;
        let guidance = Guidance::new(&mut store, &cfg, &mut rng)?;
        let bias = BiasGenerator::new(&mut store, &cfg, &mut rng)?;
        let backbone = Backbone::new(&mut store, &cfg, &mut rng)?;
        let fusion = Fusion::new(&mut store, &cfg, &mut rng)?;
        Ok(Self {
            cfg,
            store,
            conditioning,
            temporal,
            perception,
            guidance,
            bias,
            backbone,
            fusion,
        })
    }

    pub fn set_adjacency(&mut self, a: Array<T>) -> Result<()> {
        self.store.assign(self.bias.adjacency, a)
    }

    pub fn adjacency(&self) -> &Array<T> {
        self.store.value(self.bias.adjacency)
    }

    pub fn out_len(&self, task: Task) -> usize {
        match task {
            Task::Predict => self.cfg.horizon,
            Task::Impute => self.cfg.hist_len,
        }
    }

    /// Runs one pass. `u` holds the per-sample uniform draws for the scale;
    /// `None` selects the deterministic midpoint used for evaluation.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        input: Input<'_, T>,
        task: Task,
        u: Option<&[f64]>,
        opts: Option<PassOptions>,
        trace: Option<&mut Trace<T>>,
    ) -> Result<Output<'t, T>> {
        let cfg = &self.cfg;
        let store = &self.store;
        let shape = input.x.shape();
        if shape.len() != 4 || shape[1..] != [cfg.hist_len, cfg.nodes, cfg.channels] {
            return Err(Error::shape(
                "model input",
                shape,
                &[cfg.hist_len, cfg.nodes, cfg.channels],
            ));
        }
        let batch = shape[0];
        if input.times.len() != batch * cfg.hist_len {
            return Err(Error::shape(
                "model times",
                &[input.times.len()],
                &[batch, cfg.hist_len],
            ));
        }
        let mask = match task {
            Task::Predict => None,
            Task::Impute => Some(
                input
                    .mask
                    .ok_or_else(|| Error::Contract("imputation requires a mask".into()))?,
            ),
        };
        let observed = match mask {
            Some(m) => input.x.zip_map(m, |v, m| if m == T::one() { v } else { T::zero() })?,
            None => input.x.clone(),
        };

        let scale = if cfg.conditioning {
            let summary = tape.constant(conditioning::summarize(&observed, mask)?);
            let (a, b) = self.conditioning.predict_bounds(tape, store, summary)?;
            let midpoint = vec![0.5; batch];
            conditioning::sample_scale(a, b, u.unwrap_or(&midpoint))?
        } else {
            tape.constant(Array::ones(&[batch]))
        };
        let x = conditioning::apply(tape.constant(observed), scale)?;

        let time_embed = if cfg.use_ste {
            self.temporal.forward(tape, store, input.times, batch)?
        } else {
            tape.constant(Array::zeros(&[batch, cfg.hist_len, cfg.embed_dim]))
        };
        let features = self.perception.forward(tape, store, x, time_embed)?;

        let bias = if cfg.bias_injection {
            Some(self.bias.forward(tape, store, &x.value(), cfg.use_graph)?)
        } else {
            None
        };
        let opts = opts.unwrap_or(PassOptions {
            causal: match task {
                Task::Predict => cfg.causal_predict,
                Task::Impute => cfg.causal_impute,
            },
            adapters: true,
        });
        let hidden = self.backbone.forward(tape, store, features, bias, opts, trace)?;
        let head = self.fusion.head(task).forward(tape, store, hidden)?;

        let guide = if cfg.use_guidance {
            Some(match task {
                Task::Predict => self.guidance.predict(tape, store, x, cfg.horizon)?,
                Task::Impute => self.guidance.impute(tape, store, x, mask.expect("checked above"))?,
            })
        } else {
            None
        };
        let fused = match guide {
            Some(g) => gated_fuse(head, g, tape.param(store, self.fusion.gate(task)))?,
            None => head,
        };
        let y = conditioning::invert(fused, scale)?;
        Ok(Output {
            y,
            fused,
            head,
            guide,
            scale,
            bias,
        })
    }

    /// Total and trainable parameter counts.
    pub fn param_counts(&self) -> (usize, usize) {
        (self.store.count(false), self.store.count(true))
    }
}
