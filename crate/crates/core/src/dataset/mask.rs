//! Random observation masks for the imputation task.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Array, Real};

/// Draws a `[B, L, N, C]` mask (1 = kept, 0 = masked). Each sample gets its
/// own rate `p ~ U(rate_min, rate_max)`, returned alongside the mask.
///
/// With `block_len = None` every entry is masked independently with
/// probability `p`. With `Some(mean)` each `(node, channel)` track is a
/// two-state chain along time whose masked runs average `mean` steps and
/// whose stationary masked fraction is `p`.
pub fn gen_mask<T: Real>(
    shape: &[usize],
    rate_min: f64,
    rate_max: f64,
    block_len: Option<f64>,
    rng: &mut impl Rng,
) -> Result<(Array<T>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&rate_min) || !(0.0..=1.0).contains(&rate_max) || rate_min > rate_max {
        return Err(Error::Config(format!(
            "invalid mask rate range [{rate_min}, {rate_max}]"
        )));
    }
    if shape.len() != 4 {
        return Err(Error::shape("mask shape", shape, &[0, 0, 0, 0]));
    }
    if let Some(m) = block_len {
        if !(m.is_finite() && m >= 1.0) {
            return Err(Error::Config(format!("block mean length must be ≥ 1, got {m}")));
        }
    }
    let (b, l, tracks) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut data = vec![T::one(); b * l * tracks];
    let mut rates = Vec::with_capacity(b);
    for s in 0..b {
        let p = if rate_max > rate_min {
            rng.random_range(rate_min..rate_max)
        } else {
            rate_min
        };
        rates.push(p);
        let sample = &mut data[s * l * tracks..(s + 1) * l * tracks];
        match block_len {
            None => {
                for v in sample.iter_mut() {
                    if rng.random::<f64>() < p {
                        *v = T::zero();
                    }
                }
            }
            Some(mean) => {
                let leave = 1.0 / mean;
                let enter = if p >= 1.0 {
                    1.0
                } else {
                    (p * leave / (1.0 - p)).min(1.0)
                };
                for k in 0..tracks {
                    let mut masked = rng.random::<f64>() < p;
                    for t in 0..l {
                        if t > 0 {
                            let u = rng.random::<f64>();
                            masked = if masked { u >= leave || p >= 1.0 } else { u < enter };
                        }
                        if masked {
                            sample[t * tracks + k] = T::zero();
                        }
                    }
                }
            }
        }
    }
    Ok((Array::new(shape, data)?, rates))
}
