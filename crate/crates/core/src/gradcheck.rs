//! Central finite differences for checking reverse-mode gradients.

use alloc::vec::Vec;

use crate::tensor::RealArray;

/// Default step for central differences in 64-bit arithmetic.
pub const STEP: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`:
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, x: &RealArray, h: f64) -> RealArray
where
    F: Fn(&RealArray) -> f64,
{
    let mut data: Vec<f64> = x.data().to_vec();
    let mut grad = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + h;
        let plus = f(&RealArray::new(x.shape().to_vec(), data.clone()).expect("finite probe"));
        data[i] = orig - h;
        let minus = f(&RealArray::new(x.shape().to_vec(), data.clone()).expect("finite probe"));
        data[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    RealArray::new(x.shape().to_vec(), grad).expect("finite difference produced non-finite value")
}

/// Relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`.
///
/// The floor keeps comparisons of near-zero gradients from blowing up.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(floor, f64::max);
    diff / scale
}
