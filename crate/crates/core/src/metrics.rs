//! Distances between empirical distributions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::RealArray;

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact Wasserstein-1 distance between two empirical distributions on the
/// line: the integral of `|F_a⁻¹(t) − F_b⁻¹(t)|` over `t ∈ [0, 1]`.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sample set"));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len(), b.len());
    if n == m {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / n as f64);
    }
    // Walk the merged breakpoints i/n and j/m in exact integer arithmetic.
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let mut total = 0.0;
    let denom = (n as u128) * (m as u128);
    while i < n && j < m {
        let next_a = (i as u128 + 1) * m as u128;
        let next_b = (j as u128 + 1) * n as u128;
        let next = next_a.min(next_b);
        total += (next - prev) as f64 / denom as f64 * (a[i] - b[j]).abs();
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(total)
}

/// Mean of the per-coordinate 1-D distances between two point clouds with
/// the same column count; equals [`wasserstein1_1d`] in one dimension.
pub fn sliced_w1(a: &RealArray, b: &RealArray) -> Result<f64> {
    let (ra, ca) = a.dims2();
    let (rb, cb) = b.dims2();
    if ra == 0 || rb == 0 || ca == 0 {
        return Err(Error::EmptyInput("sample set"));
    }
    if ca != cb {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "sliced_w1",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    let mut total = 0.0;
    for c in 0..ca {
        let xa: Vec<f64> = (0..ra).map(|r| a.get(r, c)).collect();
        let xb: Vec<f64> = (0..rb).map(|r| b.get(r, c)).collect();
        total += wasserstein1_1d(&xa, &xb)?;
    }
    Ok(total / ca as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quantile(sorted: &[f64], t: f64) -> f64 {
        let k = ((t * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[k - 1]
    }

    /// Midpoint rule on a fine grid of the quantile functions.
    fn integral_oracle(a: &[f64], b: &[f64], steps: usize) -> f64 {
        let (a, b) = (sorted(a), sorted(b));
        (0..steps)
            .map(|k| {
                let t = (k as f64 + 0.5) / steps as f64;
                (quantile(&a, t) - quantile(&b, t)).abs()
            })
            .sum::<f64>()
            / steps as f64
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(
            wasserstein1_1d(&[0.3, -1.0, 2.0], &[2.0, 0.3, -1.0]).unwrap(),
            0.0
        );
        assert_eq!(wasserstein1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((wasserstein1_1d(&[0.0; 3], &[1.0; 7]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            wasserstein1_1d(&[], &[1.0]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn unequal_sizes_match_quantile_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(1..40);
            let m = rng.random_range(1..40);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..5.0)).collect();
            let exact = wasserstein1_1d(&a, &b).unwrap();
            // Grid cells nest inside the breakpoints i/n and j/m.
            let oracle = integral_oracle(&a, &b, n * m * 64);
            assert!((exact - oracle).abs() <= 1e-6, "{exact} vs {oracle}");
        }
    }

    #[test]
    fn metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.random_range(1..30);
            let shift = rng.random_range(-2.0..2.0);
            (0..n)
                .map(|_| shift + rng.random_range(-1.0..1.0))
                .collect()
        };
        for _ in 0..200 {
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let ab = wasserstein1_1d(&a, &b).unwrap();
            let ba = wasserstein1_1d(&b, &a).unwrap();
            assert!((ab - ba).abs() <= 1e-12);
            assert!(ab >= 0.0);
            let ac = wasserstein1_1d(&a, &c).unwrap();
            let cb = wasserstein1_1d(&c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-9);
        }
    }

    #[test]
    fn sliced_reduces_to_one_dimension() {
        let a = RealArray::column(alloc::vec![0.0, 1.0, 5.0]).unwrap();
        let b = RealArray::column(alloc::vec![1.0, 2.0]).unwrap();
        let direct = wasserstein1_1d(a.data(), b.data()).unwrap();
        assert_eq!(sliced_w1(&a, &b).unwrap(), direct);
        let wide = RealArray::from_rows(&[&[0.0, 0.0], &[1.0, 3.0]]).unwrap();
        let wide2 = RealArray::from_rows(&[&[1.0, 0.0], &[2.0, 3.0]]).unwrap();
        assert_eq!(sliced_w1(&wide, &wide2).unwrap(), 0.5);
    }
}
