//! Softmax cross-entropy classification losses.

use alloc::vec::Vec;

use super::similarity::{check_labels, EmbeddingBatch};
use crate::error::Result;
use crate::tensor::{softmax_row, Graph, RealArray, TensorError, Var};

/// Mean cross-entropy of `logits` (N×c) against labels, together with the
/// class probabilities `p_{i,k}`.
pub fn acgan_ce(logits: &RealArray, y: &[usize]) -> Result<(f64, RealArray)> {
    let (n, c) = logits.dims2();
    if y.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "acgan_ce",
            lhs: logits.shape().to_vec(),
            rhs: alloc::vec![y.len()],
        }
        .into());
    }
    check_labels(y, c)?;
    let mut probs = Vec::with_capacity(n * c);
    let mut loss = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let row = logits.row(i);
        loss += neg_log_prob(row, label);
        probs.extend(softmax_row(row));
    }
    Ok((loss / n as f64, RealArray::matrix(n, c, probs)?))
}

/// `−log softmax(row)[label]`, evaluated relative to the label logit when
/// it is the largest so confident predictions keep full precision.
fn neg_log_prob(row: &[f64], label: usize) -> f64 {
    let target = row[label];
    if row.iter().all(|&x| x <= target) {
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label)
            .map(|(_, &x)| crate::math::exp(x - target))
            .sum();
        crate::math::ln_1p(rest)
    } else {
        crate::tensor::log_sum_exp(row) - target
    }
}

/// Gradient of the cross-entropy with respect to each class weight vector
/// for given probabilities: row `k` is `−(1/N) Σᵢ F(xᵢ)(𝟙[yᵢ=k] − p_{i,k})`.
///
/// The result is linear in `features` for fixed `probs`.
pub fn ce_weight_grad_from_probs(
    features: &RealArray,
    probs: &RealArray,
    y: &[usize],
) -> Result<RealArray> {
    let (n, d) = features.dims2();
    let (pn, c) = probs.dims2();
    if pn != n || y.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "ce_weight_grad",
            lhs: features.shape().to_vec(),
            rhs: probs.shape().to_vec(),
        }
        .into());
    }
    check_labels(y, c)?;
    let mut grad = alloc::vec![0.0; c * d];
    for (i, &label) in y.iter().enumerate() {
        let fi = features.row(i);
        for k in 0..c {
            let coeff = (if label == k { 1.0 } else { 0.0 }) - probs.get(i, k);
            for (g, x) in grad[k * d..(k + 1) * d].iter_mut().zip(fi) {
                *g -= x * coeff;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    Ok(RealArray::matrix(c, d, grad)?)
}

/// Closed-form gradient of the ACGAN classifier loss with respect to the
/// class weights (`c×d`, one row per class) for unnormalized features.
pub fn acgan_ce_grad_w(
    features: &RealArray,
    weights: &RealArray,
    y: &[usize],
) -> Result<RealArray> {
    let logits = logits_against_rows(features, weights)?;
    let (_, probs) = acgan_ce(&logits, y)?;
    ce_weight_grad_from_probs(features, &probs, y)
}

/// `features · weightsᵀ`.
pub fn logits_against_rows(features: &RealArray, weights: &RealArray) -> Result<RealArray> {
    if features.cols() != weights.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "logits",
            lhs: features.shape().to_vec(),
            rhs: weights.shape().to_vec(),
        }
        .into());
    }
    Ok(features.matmul(&weights.transpose())?)
}

/// Cross-entropy on cosine logits `f_iᵀ v_j` of a normalized batch.
pub fn feature_normalized_ce(batch: &EmbeddingBatch) -> Result<f64> {
    let logits = logits_against_rows(batch.embeddings(), batch.proxies())?;
    Ok(acgan_ce(&logits, batch.labels())?.0)
}

/// Recorded mean cross-entropy.
pub fn cross_entropy(g: &mut Graph, logits: Var, y: &[usize]) -> Result<Var> {
    check_labels(y, g.value(logits).cols())?;
    let logp = g.log_softmax(logits)?;
    let picked = g.gather_cols(logp, y)?;
    let mean = g.mean(picked)?;
    Ok(g.scale(mean, -1.0)?)
}

/// Per-sample target probabilities `p_{i,yᵢ}`.
pub fn target_probabilities(probs: &RealArray, y: &[usize]) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(i, &k)| probs.get(i, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::relative_error;
    use crate::math;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> RealArray {
        RealArray::matrix(
            r,
            c,
            (0..r * c)
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
        )
        .unwrap()
    }

    /// Direct transcription of the empirical cross-entropy with explicit
    /// exponentials, no stabilization.
    fn naive_ce(logits: &RealArray, y: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let mut denom = 0.0;
            for j in 0..logits.cols() {
                denom += math::exp(logits.get(i, j));
            }
            total += math::ln(math::exp(logits.get(i, yi)) / denom);
        }
        -total / y.len() as f64
    }

    #[test]
    fn uniform_two_class_is_ln2() {
        let logits = RealArray::from_rows(&[&[0.0, 0.0]]).unwrap();
        let (loss, _) = acgan_ce(&logits, &[0]).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction() {
        let logits = RealArray::from_rows(&[&[10.0, -10.0]]).unwrap();
        let (loss, _) = acgan_ce(&logits, &[0]).unwrap();
        // −log σ(20) = log(1 + e^{−20})
        let expected = math::ln_1p(math::exp(-20.0));
        assert!((loss - expected).abs() <= 1e-20);
        assert!((loss - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let logits = random(&mut rng, 8, 5, 3.0);
            let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..5)).collect();
            let (loss, _) = acgan_ce(&logits, &y).unwrap();
            assert!((loss - naive_ce(&logits, &y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = RealArray::from_rows(&[&[0.0, 0.0]]).unwrap();
        assert!(acgan_ce(&logits, &[2]).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_weight_gradient() {
        let features = RealArray::from_rows(&[&[50.0, 0.0]]).unwrap();
        let weights = RealArray::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]).unwrap();
        let g = acgan_ce_grad_w(&features, &weights, &[0]).unwrap();
        assert!(g.data().iter().all(|x| x.abs() < 1e-30));
    }

    #[test]
    fn weight_gradient_scales_with_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let features = random(&mut rng, 1, 4, 1.0);
        let logits = random(&mut rng, 1, 3, 1.0);
        let (_, probs) = acgan_ce(&logits, &[1]).unwrap();
        let g1 = ce_weight_grad_from_probs(&features, &probs, &[1]).unwrap();
        let g10 = ce_weight_grad_from_probs(&features.scale(10.0).unwrap(), &probs, &[1]).unwrap();
        for (a, b) in g1.data().iter().zip(g10.data()) {
            assert!((b - 10.0 * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn weight_gradient_matches_autodiff() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let features = random(&mut rng, 6, 4, 3.0);
            let weights = random(&mut rng, 5, 4, 1.0);
            let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
            let closed = acgan_ce_grad_w(&features, &weights, &y).unwrap();

            let mut g = Graph::new();
            let fv = g.leaf(features.clone());
            let wv = g.leaf(weights.clone());
            let wt = g.transpose(wv).unwrap();
            let logits = g.matmul(fv, wt).unwrap();
            let loss = cross_entropy(&mut g, logits, &y).unwrap();
            let grads = g.backward(loss).unwrap();
            let auto = grads.get(wv).unwrap();
            assert!(relative_error(closed.data(), auto.data(), 1e-6) <= 1e-8);
        }
    }

    #[test]
    fn normalized_ce_closed_form() {
        let f = RealArray::from_rows(&[&[1.0, 0.0]]).unwrap();
        let v = RealArray::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]).unwrap();
        let batch = EmbeddingBatch::new(f, vec![0], v).unwrap();
        let loss = feature_normalized_ce(&batch).unwrap();
        let e = core::f64::consts::E;
        assert!((loss - (-math::ln(e / (e + 1.0 / e)))).abs() < 1e-15);
        assert!((loss - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn identical_proxies_give_ln_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let f = random(&mut rng, 5, 3, 1.0);
        let v = RealArray::from_rows(&[&[0.0, 1.0, 0.0][..]; 4]).unwrap();
        let y = vec![0, 1, 2, 3, 0];
        let batch = EmbeddingBatch::from_raw(&f, y, &v).unwrap();
        let loss = feature_normalized_ce(&batch).unwrap();
        assert!((loss - math::ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn normalized_ce_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let f = random(&mut rng, 7, 4, 1.0);
            let v = random(&mut rng, 3, 4, 1.0);
            let y: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
            let batch = EmbeddingBatch::from_raw(&f, y.clone(), &v).unwrap();
            let mut logits = Vec::new();
            for i in 0..7 {
                for j in 0..3 {
                    logits.push(math::dot(batch.embeddings().row(i), batch.proxies().row(j)));
                }
            }
            let logits = RealArray::matrix(7, 3, logits).unwrap();
            let loss = feature_normalized_ce(&batch).unwrap();
            assert!((loss - naive_ce(&logits, &y)).abs() < 1e-12);
        }
    }
}
