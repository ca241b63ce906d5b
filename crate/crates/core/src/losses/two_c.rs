//! Conditional contrastive (2C) loss, kept as the comparison baseline for
//! D2D-CE.
//!
//! Positives `𝒫(i)` are the other samples sharing `i`'s label. The default
//! denominator ranges over every `j ≠ i`, so same-label samples (false
//! negatives) appear there as well.

use alloc::vec;
use alloc::vec::Vec;

use super::d2dce::{finish, EmbeddingGrads};
use super::similarity::{EmbeddingBatch, SimilarityBundle};
use crate::error::Result;
use crate::math;
use crate::tensor::{Graph, RealArray, Var};

/// Which pairs enter the 2C denominator besides the proxy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Denominator {
    /// Every other sample in the batch, false negatives included.
    #[default]
    AllOthers,
    /// Only samples with a different label.
    NegativesOnly,
}

fn in_denominator(labels: &[usize], i: usize, j: usize, which: Denominator) -> bool {
    i != j
        && match which {
            Denominator::AllOthers => true,
            Denominator::NegativesOnly => labels[i] != labels[j],
        }
}

fn is_positive(labels: &[usize], i: usize, j: usize) -> bool {
    i != j && labels[i] == labels[j]
}

pub fn two_c_loss_with(bundle: &SimilarityBundle, tau: f64, which: Denominator) -> f64 {
    let n = bundle.len();
    let labels = bundle.labels();
    let mut total = 0.0;
    for i in 0..n {
        let row = bundle.s_neg().row(i);
        let pos = bundle.s_pos()[i] / tau;
        let mut num_logits = vec![pos];
        let mut den_logits = vec![pos];
        for (j, &s) in row.iter().enumerate() {
            if is_positive(labels, i, j) {
                num_logits.push(s / tau);
            }
            if in_denominator(labels, i, j, which) {
                den_logits.push(s / tau);
            }
        }
        total += crate::tensor::log_sum_exp(&den_logits) - crate::tensor::log_sum_exp(&num_logits);
    }
    total / n as f64
}

pub fn two_c_loss(bundle: &SimilarityBundle, tau: f64) -> f64 {
    two_c_loss_with(bundle, tau, Denominator::AllOthers)
}

/// Closed-form `∂L/∂f_q` of the 2C loss.
///
/// With `A` the numerator sum and `B` the denominator sum, attraction is
/// `−1/(τN) · ((e^{s_q/τ} v + Σ_𝒫 e^{s_{q,p}/τ} f_p)/A − e^{s_q/τ} v/B)` and
/// repulsion is `1/(τN) · Σ_{j≠q} e^{s_{q,j}/τ} f_j / B`, which includes the
/// same-label samples.
pub fn two_c_embedding_grads(
    batch: &EmbeddingBatch,
    bundle: &SimilarityBundle,
    tau: f64,
) -> EmbeddingGrads {
    let f = batch.embeddings();
    let labels = batch.labels();
    let (n, d) = f.dims2();
    let scale = 1.0 / (tau * n as f64);
    let mut attraction = vec![0.0; n * d];
    let mut repulsion = vec![0.0; n * d];
    let mut d_pair = vec![0.0; n * n];
    for q in 0..n {
        let row = bundle.s_neg().row(q);
        // Shift by the largest logit; the ratios below are invariant to it.
        let pos = bundle.s_pos()[q] / tau;
        let max = (0..n)
            .filter(|&j| j != q)
            .map(|j| row[j] / tau)
            .fold(pos, f64::max);
        let e_pos = math::exp(pos - max);
        let e: Vec<f64> = (0..n).map(|j| math::exp(row[j] / tau - max)).collect();
        let a = e_pos
            + (0..n)
                .filter(|&j| is_positive(labels, q, j))
                .map(|j| e[j])
                .sum::<f64>();
        let b = e_pos + (0..n).filter(|&j| j != q).map(|j| e[j]).sum::<f64>();

        let v = batch.proxies().row(labels[q]);
        let att = &mut attraction[q * d..(q + 1) * d];
        let k_v = -scale * (e_pos / a - e_pos / b);
        for (x, vi) in att.iter_mut().zip(v) {
            *x += k_v * vi;
        }
        for j in (0..n).filter(|&j| is_positive(labels, q, j)) {
            let k = -scale * e[j] / a;
            d_pair[q * n + j] += k;
            for (x, fj) in att.iter_mut().zip(f.row(j)) {
                *x += k * fj;
            }
        }
        let rep = &mut repulsion[q * d..(q + 1) * d];
        for j in (0..n).filter(|&j| j != q) {
            let k = scale * e[j] / b;
            d_pair[q * n + j] += k;
            for (x, fj) in rep.iter_mut().zip(f.row(j)) {
                *x += k * fj;
            }
        }
    }
    let d_pair = RealArray::matrix(n, n, d_pair).expect("finite gradients");
    finish(f, attraction, repulsion, &d_pair)
}

/// Recorded 2C loss on similarity nodes.
pub fn two_c_from_similarities(
    g: &mut Graph,
    s_pos: Var,
    s_neg: Var,
    labels: &[usize],
    tau: f64,
    which: Denominator,
) -> Result<Var> {
    let n = labels.len();
    let mut pos_mask = Vec::with_capacity(n * n);
    let mut den_mask = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            pos_mask.push(if is_positive(labels, i, j) { 1.0 } else { 0.0 });
            den_mask.push(if in_denominator(labels, i, j, which) {
                1.0
            } else {
                0.0
            });
        }
    }
    let pos_mask = g.leaf(RealArray::matrix(n, n, pos_mask)?);
    let den_mask = g.leaf(RealArray::matrix(n, n, den_mask)?);
    let pos = g.scale(s_pos, 1.0 / tau)?;
    let pair = g.scale(s_neg, 1.0 / tau)?;
    let e_pos = g.exp(pos)?;
    let e_pair = g.exp(pair)?;
    let num_pairs = g.mul(e_pair, pos_mask)?;
    let num_pairs = g.sum_rows(num_pairs)?;
    let den_pairs = g.mul(e_pair, den_mask)?;
    let den_pairs = g.sum_rows(den_pairs)?;
    let num = g.add(e_pos, num_pairs)?;
    let den = g.add(e_pos, den_pairs)?;
    let log_num = g.ln(num)?;
    let log_den = g.ln(den)?;
    let per = g.sub(log_den, log_num)?;
    Ok(g.mean(per)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error, STEP};
    use crate::losses::d2dce::{
        anchor_similarity_nodes, d2dce_embedding_grads, d2dce_similarity_grads, similarity_nodes,
        D2dceParams,
    };
    use crate::losses::similarity::exact_negative_mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(batch: &EmbeddingBatch, tau: f64) -> f64 {
        let f = batch.embeddings();
        let y = batch.labels();
        let n = y.len();
        let mut total = 0.0;
        for i in 0..n {
            let proxy = math::exp(math::dot(f.row(i), batch.proxies().row(y[i])) / tau);
            let mut num = proxy;
            let mut den = proxy;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = math::exp(math::dot(f.row(i), f.row(j)) / tau);
                if y[j] == y[i] {
                    num += e;
                }
                den += e;
            }
            total -= math::ln(num / den);
        }
        total / n as f64
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (EmbeddingBatch, SimilarityBundle, f64) {
        let n = rng.random_range(2..10);
        let d = rng.random_range(2..5);
        let c = rng.random_range(1..4);
        let batch = EmbeddingBatch::random(rng, n, d, c).unwrap();
        let bundle =
            SimilarityBundle::from_batch(&batch, exact_negative_mask(batch.labels())).unwrap();
        (
            batch,
            bundle,
            [0.125, 0.25, 0.5, 1.0][rng.random_range(0..4)],
        )
    }

    fn unit(x: &[f64]) -> Vec<f64> {
        let n = math::norm(x);
        x.iter().map(|v| v / n).collect()
    }

    #[test]
    fn identical_same_label_pair_gives_zero() {
        let f = RealArray::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]).unwrap();
        let v = RealArray::from_rows(&[&[1.0, 0.0]]).unwrap();
        let batch = EmbeddingBatch::new(f, vec![0, 0], v).unwrap();
        let bundle = SimilarityBundle::from_batch(&batch, exact_negative_mask(&[0, 0])).unwrap();
        assert!(two_c_loss(&bundle, 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_classes_reduce_to_softmax_over_proxy_and_others() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut batch = EmbeddingBatch::random(&mut rng, 5, 3, 5).unwrap();
        batch = EmbeddingBatch::new(
            batch.embeddings().clone(),
            vec![0, 1, 2, 3, 4],
            batch.proxies().clone(),
        )
        .unwrap();
        let bundle =
            SimilarityBundle::from_batch(&batch, exact_negative_mask(batch.labels())).unwrap();
        let tau = 0.5;
        // With no positives the loss is modified CE with the exact mask.
        let expected = crate::losses::d2dce::modified_ce(&bundle, tau);
        assert!((two_c_loss(&bundle, tau) - expected).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let (batch, bundle, tau) = random_case(&mut rng);
            let a = two_c_loss(&bundle, tau);
            let b = brute_force(&batch, tau);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn grads_match_autodiff_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let (batch, bundle, tau) = random_case(&mut rng);
            let closed = two_c_embedding_grads(&batch, &bundle, tau);
            let labels = batch.labels().to_vec();
            for anchor_only in [true, false] {
                let mut g = Graph::new();
                let f = g.leaf(batch.embeddings().clone());
                let v = g.leaf(batch.proxies().clone());
                let (sp, sn) = if anchor_only {
                    anchor_similarity_nodes(&mut g, f, v, &labels).unwrap()
                } else {
                    similarity_nodes(&mut g, f, v, &labels).unwrap()
                };
                let l =
                    two_c_from_similarities(&mut g, sp, sn, &labels, tau, Denominator::AllOthers)
                        .unwrap();
                let auto = g.backward(l).unwrap().get(f).unwrap().clone();
                let want = if anchor_only {
                    &closed.anchor
                } else {
                    &closed.total
                };
                assert!(relative_error(want.data(), auto.data(), 1e-6) <= 1e-8);
            }
            let v = batch.proxies().clone();
            let fd = central_difference(
                |fp| {
                    let mut g = Graph::new();
                    let f = g.leaf(fp.clone());
                    let vv = g.leaf(v.clone());
                    let (sp, sn) = similarity_nodes(&mut g, f, vv, &labels).unwrap();
                    let l = two_c_from_similarities(
                        &mut g,
                        sp,
                        sn,
                        &labels,
                        tau,
                        Denominator::AllOthers,
                    )
                    .unwrap();
                    g.value(l).item()
                },
                batch.embeddings(),
                STEP,
            );
            assert!(relative_error(closed.total.data(), fd.data(), 1e-3) <= 1e-5);
        }
    }

    #[test]
    fn without_positives_matches_modified_ce_gradient() {
        // Distinct labels: no positives and the exact negative set, so the
        // 2C anchor gradient equals the margin-free loss gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let tau = 0.5;
        let random = EmbeddingBatch::random(&mut rng, 6, 4, 6).unwrap();
        let labels: Vec<usize> = (0..6).collect();
        let batch = EmbeddingBatch::new(
            random.embeddings().clone(),
            labels.clone(),
            random.proxies().clone(),
        )
        .unwrap();
        let bundle = SimilarityBundle::from_batch(&batch, exact_negative_mask(&labels)).unwrap();
        let closed = two_c_embedding_grads(&batch, &bundle, tau);
        let mut g = Graph::new();
        let f = g.leaf(batch.embeddings().clone());
        let v = g.leaf(batch.proxies().clone());
        let (sp, sn) = anchor_similarity_nodes(&mut g, f, v, &labels).unwrap();
        let l =
            crate::losses::d2dce::modified_ce_from_similarities(&mut g, sp, sn, bundle.mask(), tau)
                .unwrap();
        let auto = g.backward(l).unwrap().get(f).unwrap().clone();
        assert!(relative_error(closed.anchor.data(), auto.data(), 1e-6) <= 1e-10);
    }

    #[test]
    fn easy_positive_contrast_with_d2dce() {
        // Anchor 0 and sample 1 share a label and are nearly aligned;
        // sample 2 is of another class.
        let f0 = unit(&[1.0, 0.0, 0.0]);
        let angle = libm::acos(0.999);
        let f1 = vec![libm::cos(angle), libm::sin(angle), 0.0];
        let f2 = unit(&[0.0, 0.3, 1.0]);
        let v0 = unit(&[1.0, 0.01, 0.0]);
        let v1 = unit(&[0.0, 0.0, 1.0]);
        let f = RealArray::from_rows(&[&f0, &f1, &f2]).unwrap();
        let v = RealArray::from_rows(&[&v0, &v1]).unwrap();
        let labels = vec![0, 0, 1];
        let batch = EmbeddingBatch::new(f, labels.clone(), v).unwrap();
        let bundle = SimilarityBundle::from_batch(&batch, exact_negative_mask(&labels)).unwrap();
        assert!((bundle.s_neg().get(0, 1) - 0.999).abs() < 1e-12);

        let p = D2dceParams::new(0.5, 0.98).unwrap();
        assert!(bundle.s_pos()[0] >= p.m_p);

        let two_c = two_c_embedding_grads(&batch, &bundle, p.tau);
        let along = math::dot(two_c.attraction.row(0), &f1);
        assert!(along.abs() > 1e-3, "{along}");

        let d2d = d2dce_similarity_grads(&bundle, &p);
        assert_eq!(d2d.d_s_pos[0], 0.0);
        let d2d_emb = d2dce_embedding_grads(&batch, &bundle, &p);
        assert!(d2d_emb.attraction.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn same_class_denominator_terms_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mut checked = 0;
        while checked < 100 {
            let (_, bundle, tau) = random_case(&mut rng);
            let labels = bundle.labels();
            let dup =
                (0..labels.len()).any(|i| (0..labels.len()).any(|j| is_positive(labels, i, j)));
            let all = two_c_loss_with(&bundle, tau, Denominator::AllOthers);
            let neg = two_c_loss_with(&bundle, tau, Denominator::NegativesOnly);
            if dup {
                assert!(all != neg);
                assert!(all > neg);
                checked += 1;
            } else {
                assert_eq!(all, neg);
            }
        }
    }
}
