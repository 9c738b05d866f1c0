//! Masked squared-error objectives.

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{Array, Real, Var};

/// Mean of squared residuals over entries where `keep` is 1. Excluded
/// entries are replaced by an exact zero, so their values (even huge ones)
/// never reach the sum. An empty selection yields 0.
pub fn masked_mse<'t, T: Real>(y: Var<'t, T>, target: &Array<T>, keep: &Array<T>) -> Result<Var<'t, T>> {
    if y.shape() != target.shape() || target.shape() != keep.shape() {
        return Err(Error::shape("masked mse", &y.shape(), target.shape()));
    }
    let tape = y.tape();
    let count = keep.data().iter().filter(|&&k| k == T::one()).count();
    if count == 0 {
        return Ok(tape.scalar(T::zero()));
    }
    let sq = y.sub(tape.constant(target.clone()))?.square();
    let zeros = tape.constant(Array::zeros(target.shape()));
    Ok(sq.select(keep, zeros)?.sum_all().scale(T::one() / T::lit(count as f64)))
}

/// 1 where a target counts: not interpolated.
pub fn prediction_keep<T: Real>(interp: &Array<T>) -> Array<T> {
    interp.map(|f| if f == T::one() { T::zero() } else { T::one() })
}

/// 1 on the imputation set: masked out (`mask == 0`) and not interpolated.
pub fn imputation_keep<T: Real>(mask: &Array<T>, interp: &Array<T>) -> Result<Array<T>> {
    mask.zip_map(interp, |m, f| {
        if m == T::zero() && f != T::one() {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Forecast error over every non-interpolated target.
pub fn loss_pred<'t, T: Real>(y: Var<'t, T>, target: &Array<T>, interp: &Array<T>) -> Result<Var<'t, T>> {
    masked_mse(y, target, &prediction_keep(interp))
}

/// Reconstruction error restricted to the masked, non-interpolated entries.
pub fn loss_imp<'t, T: Real>(
    y: Var<'t, T>,
    truth: &Array<T>,
    mask: &Array<T>,
    interp: &Array<T>,
) -> Result<Var<'t, T>> {
    let keep = imputation_keep(mask, interp)?;
    if keep.data().iter().all(|&k| k == T::zero()) {
        warn!("imputation loss over an empty masked set is zero");
    }
    masked_mse(y, truth, &keep)
}

/// `alpha·pred + (1−alpha)·imp`. A branch with zero weight is dropped so
/// the endpoints reproduce the single-task losses exactly.
pub fn total_loss<'t, T: Real>(pred: Option<Var<'t, T>>, imp: Option<Var<'t, T>>, alpha: f64) -> Result<Var<'t, T>> {
    let weighted = |v: Option<Var<'t, T>>, w: f64, which: &str| -> Result<Option<Var<'t, T>>> {
        if w == 0.0 {
            return Ok(None);
        }
        let v = v.ok_or_else(|| Error::Contract(format!("{which} loss required for weight {w}")))?;
        Ok(Some(if w == 1.0 { v } else { v.scale(T::lit(w)) }))
    };
    match (
        weighted(pred, alpha, "prediction")?,
        weighted(imp, 1.0 - alpha, "imputation")?,
    ) {
        (Some(p), Some(i)) => p.add(i),
        (Some(v), None) | (None, Some(v)) => Ok(v),
        (None, None) => Err(Error::Config(format!("alpha {alpha} leaves no loss term"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn arr(shape: &[usize], v: &[f64]) -> Array<f64> {
        Array::from_f64(shape, v).unwrap()
    }

    #[test]
    fn prediction_examples() {
        let tape = Tape::<f64>::new();
        let y = tape.constant(arr(&[2], &[0.0, 0.0]));
        let l = loss_pred(y, &arr(&[2], &[1.0, 3.0]), &Array::zeros(&[2])).unwrap();
        assert_eq!(l.value().item(), 5.0);
        let same = loss_pred(y, &Array::zeros(&[2]), &Array::zeros(&[2])).unwrap();
        assert_eq!(same.value().item(), 0.0);
        let flagged = loss_pred(y, &arr(&[2], &[1.0, 1e12]), &arr(&[2], &[0.0, 1.0])).unwrap();
        assert_eq!(flagged.value().item(), 1.0);
    }

    #[test]
    fn imputation_examples() {
        let tape = Tape::<f64>::new();
        let y = tape.constant(arr(&[3], &[1.0, 2.0, 5.0]));
        let truth = arr(&[3], &[0.0, 2.0, 3.0]);
        let none = Array::zeros(&[3]);
        assert_eq!(
            loss_imp(y, &truth, &Array::ones(&[3]), &none).unwrap().value().item(),
            0.0
        );
        let one = arr(&[3], &[1.0, 1.0, 0.0]);
        assert_eq!(loss_imp(y, &truth, &one, &none).unwrap().value().item(), 4.0);
    }

    #[test]
    fn weighted_mix() {
        let tape = Tape::<f64>::new();
        let (p, i) = (tape.scalar(2.0), tape.scalar(4.0));
        assert_eq!(total_loss(Some(p), Some(i), 0.5).unwrap().value().item(), 3.0);
        assert_eq!(total_loss(Some(p), Some(i), 1.0).unwrap().value().item(), 2.0);
        assert_eq!(total_loss(Some(p), Some(i), 0.0).unwrap().value().item(), 4.0);
        assert_eq!(total_loss(Some(p), None, 1.0).unwrap().value().item(), 2.0);
        assert!(total_loss(None, Some(i), 0.5).is_err());
    }
}
