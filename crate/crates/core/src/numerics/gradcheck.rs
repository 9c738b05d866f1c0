//! Central finite differences, used as an independent oracle for the
//! reverse-mode gradients.

use super::{Array, Real};

/// Central-difference gradient of a scalar function of several arrays.
pub fn central_difference<T: Real>(f: impl Fn(&[Array<T>]) -> T, inputs: &[Array<T>], eps: f64) -> Vec<Array<T>> {
    let mut work: Vec<Array<T>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    let h = T::lit(eps);
    for a in 0..inputs.len() {
        let mut g = Array::zeros(inputs[a].shape());
        for i in 0..inputs[a].numel() {
            let orig = work[a].data()[i];
            work[a].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[a].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[a].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (h + h);
        }
        grads.push(g);
    }
    grads
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error<T: Real, U: Real>(a: &Array<T>, b: &Array<U>, floor: f64) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}
