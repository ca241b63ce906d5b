//! Self-contained gradient and property checks run by the `verify`
//! command.
//!
//! Every closed-form gradient is compared against reverse-mode
//! differentiation and central finite differences on random instances; the
//! loss properties are checked on randomized similarity bundles. The
//! similarity-gradient routine is passed in through [`Hooks`] so a broken
//! implementation can be substituted to confirm the suites catch it.

// Negated comparisons below are deliberate: a NaN must fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{central_difference, relative_error, STEP};
use crate::losses::{
    acgan_ce_grad_w, anchor_similarity_nodes, ce_weight_grad_from_probs, cross_entropy, d2dce,
    d2dce_embedding_grads, d2dce_from_similarities, d2dce_global_minimum, d2dce_graph,
    d2dce_similarity_grads, exact_negative_mask, false_negative_mask, random_pairwise,
    similarity_nodes, two_c_embedding_grads, two_c_from_similarities, two_c_loss_with, D2dceParams,
    Denominator, EmbeddingBatch, SimilarityBundle, SimilarityGrads,
};
use crate::math;
use crate::tensor::{Graph, RealArray};

/// Relative-error limit against reverse-mode differentiation.
pub const AUTODIFF_TOL: f64 = 1e-8;
/// Relative-error limit against central finite differences.
pub const FD_TOL: f64 = 1e-5;
/// Floors on the relative-error denominator for the two comparisons.
pub const AUTODIFF_FLOOR: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-3;
/// Instances per gradient check and bundles per property.
pub const GRADIENT_INSTANCES: usize = 100;
pub const PROPERTY_BUNDLES: usize = 1000;

pub type SimilarityGradFn = fn(&SimilarityBundle, &D2dceParams) -> SimilarityGrads;

#[derive(Clone, Copy)]
pub struct Hooks {
    pub similarity_grads: SimilarityGradFn,
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            similarity_grads: d2dce_similarity_grads,
        }
    }
}

/// Known-bad substitutes for [`Hooks`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the derivative with respect to negative similarities.
    NegativeSimilaritySign,
}

impl Fault {
    pub const ALL: [Fault; 1] = [Fault::NegativeSimilaritySign];

    pub fn name(self) -> &'static str {
        match self {
            Fault::NegativeSimilaritySign => "negative-similarity-sign",
        }
    }

    pub fn hooks(self) -> Hooks {
        match self {
            Fault::NegativeSimilaritySign => Hooks {
                similarity_grads: flipped_negative_sign,
            },
        }
    }
}

fn flipped_negative_sign(bundle: &SimilarityBundle, p: &D2dceParams) -> SimilarityGrads {
    let mut g = d2dce_similarity_grads(bundle, p);
    g.d_s_neg = g.d_s_neg.scale(-1.0).expect("finite gradients");
    g
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Individual comparisons or bundles examined.
    pub comparisons: usize,
    /// Largest observed error (or violation) and the limit it is held to.
    pub worst: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, limit: f64) -> Self {
        Self {
            name,
            passed: true,
            comparisons: 0,
            worst: 0.0,
            limit,
            detail: String::new(),
        }
    }

    fn error(&mut self, err: f64) {
        self.comparisons += 1;
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
        if !(err <= self.limit) {
            self.passed = false;
        }
    }

    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.comparisons += 1;
        if !ok && self.passed {
            self.passed = false;
            self.detail = what();
        } else if !ok {
            self.passed = false;
        }
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> D2dceParams {
    let tau = [0.125, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)];
    let m_p = [0.75, 0.9, 0.95, 0.98, 1.0][rng.random_range(0..5)];
    D2dceParams::new(tau, m_p).expect("valid grid")
}

fn random_batch(rng: &mut ChaCha8Rng) -> EmbeddingBatch {
    let n = rng.random_range(2..10);
    let d = rng.random_range(2..6);
    let c = rng.random_range(2..5);
    EmbeddingBatch::random(rng, n, d, c).expect("valid batch")
}

/// Bundle drawn directly in similarity space so both sides of every margin
/// are well populated.
fn random_bundle(rng: &mut ChaCha8Rng, p: &D2dceParams) -> SimilarityBundle {
    let n = rng.random_range(2..12);
    let c = rng.random_range(2..5);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let s_pos = (0..n)
        .map(|_| {
            if rng.random_bool(0.3) {
                rng.random_range(p.m_p..=1.0)
            } else {
                rng.random_range(-1.0..=1.0)
            }
        })
        .collect();
    let s_neg = random_pairwise(rng, n, -1.0, 1.0);
    let drop = [0.0, 0.0, 0.5][rng.random_range(0..3)];
    let mask = false_negative_mask(&labels, drop, rng).expect("valid drop probability");
    SimilarityBundle::new(s_pos, s_neg, mask, labels).expect("valid bundle")
}

fn near_kink(bundle: &SimilarityBundle, p: &D2dceParams) -> bool {
    bundle.s_pos().iter().any(|s| (s - p.m_p).abs() < 1e-4)
        || bundle
            .s_neg()
            .data()
            .iter()
            .any(|s| (s - p.m_n).abs() < 1e-4)
}

fn column(v: &[f64]) -> RealArray {
    RealArray::column(v.to_vec()).expect("finite values")
}

fn check_ce_weight_grad(rng: &mut ChaCha8Rng) -> [Check; 2] {
    let mut auto = Check::new("ce_weight_grad_vs_autodiff", AUTODIFF_TOL);
    let mut fd = Check::new("ce_weight_grad_vs_finite_diff", FD_TOL);
    for _ in 0..GRADIENT_INSTANCES {
        let n = rng.random_range(1..10);
        let d = rng.random_range(1..6);
        let c = rng.random_range(2..6);
        let scale = rng.random_range(0.1..5.0);
        let feat: Vec<f64> = (0..n * d)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        let w: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = RealArray::matrix(n, d, feat).expect("finite");
        let w = RealArray::matrix(c, d, w).expect("finite");
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let closed = acgan_ce_grad_w(&f, &w, &y).expect("valid instance");
        let loss = |w: &RealArray| {
            let mut g = Graph::new();
            let fv = g.leaf(f.clone());
            let wv = g.leaf(w.clone());
            let wt = g.transpose(wv).expect("shape");
            let logits = g.matmul(fv, wt).expect("shape");
            let l = cross_entropy(&mut g, logits, &y).expect("valid labels");
            (g, wv, l)
        };
        let (g, wv, l) = loss(&w);
        let reverse = g.backward(l).expect("scalar loss").get_or_zeros(wv, &w);
        auto.error(relative_error(
            closed.data(),
            reverse.data(),
            AUTODIFF_FLOOR,
        ));
        let numeric = central_difference(
            |w| {
                let (g, _, l) = loss(w);
                g.value(l).item()
            },
            &w,
            STEP,
        );
        fd.error(relative_error(closed.data(), numeric.data(), FD_FLOOR));
    }
    [auto, fd]
}

fn check_similarity_grads(rng: &mut ChaCha8Rng, hooks: &Hooks) -> [Check; 4] {
    let mut pos_auto = Check::new("d2dce_positive_similarity_grad_vs_autodiff", AUTODIFF_TOL);
    let mut pos_fd = Check::new("d2dce_positive_similarity_grad_vs_finite_diff", FD_TOL);
    let mut neg_auto = Check::new("d2dce_negative_similarity_grad_vs_autodiff", AUTODIFF_TOL);
    let mut neg_fd = Check::new("d2dce_negative_similarity_grad_vs_finite_diff", FD_TOL);
    let mut done = 0;
    while done < GRADIENT_INSTANCES {
        let p = random_params(rng);
        let bundle = random_bundle(rng, &p);
        if near_kink(&bundle, &p) {
            continue;
        }
        done += 1;
        let closed = (hooks.similarity_grads)(&bundle, &p);
        let mask = bundle.mask().clone();
        let loss = |sp: &RealArray, sn: &RealArray| {
            let mut g = Graph::new();
            let a = g.leaf(sp.clone());
            let b = g.leaf(sn.clone());
            let l = d2dce_from_similarities(&mut g, a, b, &mask, &p).expect("valid bundle");
            (g, a, b, l)
        };
        let sp = column(bundle.s_pos());
        let sn = bundle.s_neg().clone();
        let (g, a, b, l) = loss(&sp, &sn);
        let grads = g.backward(l).expect("scalar loss");
        let ga = grads.get_or_zeros(a, &sp);
        let gb = grads.get_or_zeros(b, &sn);
        pos_auto.error(relative_error(&closed.d_s_pos, ga.data(), AUTODIFF_FLOOR));
        neg_auto.error(relative_error(
            closed.d_s_neg.data(),
            gb.data(),
            AUTODIFF_FLOOR,
        ));
        let value = |sp: &RealArray, sn: &RealArray| {
            let (g, _, _, l) = loss(sp, sn);
            g.value(l).item()
        };
        let fd_pos = central_difference(|x| value(x, &sn), &sp, STEP);
        let fd_neg = central_difference(|x| value(&sp, x), &sn, STEP);
        pos_fd.error(relative_error(&closed.d_s_pos, fd_pos.data(), FD_FLOOR));
        neg_fd.error(relative_error(
            closed.d_s_neg.data(),
            fd_neg.data(),
            FD_FLOOR,
        ));
    }
    [pos_auto, pos_fd, neg_auto, neg_fd]
}

fn check_embedding_grads(rng: &mut ChaCha8Rng) -> [Check; 5] {
    let mut d_anchor = Check::new("d2dce_anchor_embedding_grad_vs_autodiff", AUTODIFF_TOL);
    let mut d_auto = Check::new("d2dce_embedding_grad_vs_autodiff", AUTODIFF_TOL);
    let mut d_fd = Check::new("d2dce_embedding_grad_vs_finite_diff", FD_TOL);
    let mut c_auto = Check::new("two_c_embedding_grad_vs_autodiff", AUTODIFF_TOL);
    let mut c_fd = Check::new("two_c_embedding_grad_vs_finite_diff", FD_TOL);
    let mut done = 0;
    while done < GRADIENT_INSTANCES {
        let p = random_params(rng);
        let batch = random_batch(rng);
        let labels = batch.labels().to_vec();
        let mask = exact_negative_mask(&labels);
        let bundle = SimilarityBundle::from_batch(&batch, mask.clone()).expect("valid batch");
        if near_kink(&bundle, &p) {
            continue;
        }
        done += 1;
        let v = batch.proxies().clone();
        let f = batch.embeddings().clone();

        let d2d_loss = |f: &RealArray, anchor: bool| {
            let mut g = Graph::new();
            let fv = g.leaf(f.clone());
            let vv = g.leaf(v.clone());
            let (sp, sn) = if anchor {
                anchor_similarity_nodes(&mut g, fv, vv, &labels).expect("shapes")
            } else {
                similarity_nodes(&mut g, fv, vv, &labels).expect("shapes")
            };
            let l = d2dce_from_similarities(&mut g, sp, sn, &mask, &p).expect("valid");
            (g, fv, l)
        };
        let closed = d2dce_embedding_grads(&batch, &bundle, &p);
        for (anchor, check) in [(true, &mut d_anchor), (false, &mut d_auto)] {
            let (g, fv, l) = d2d_loss(&f, anchor);
            let reverse = g.backward(l).expect("scalar loss").get_or_zeros(fv, &f);
            let target = if anchor {
                &closed.anchor
            } else {
                &closed.total
            };
            check.error(relative_error(
                target.data(),
                reverse.data(),
                AUTODIFF_FLOOR,
            ));
        }
        let numeric = central_difference(
            |f| {
                let mut g = Graph::new();
                let fv = g.leaf(f.clone());
                let vv = g.leaf(v.clone());
                let l = d2dce_graph(&mut g, fv, vv, &labels, &mask, &p).expect("valid");
                g.value(l).item()
            },
            &f,
            STEP,
        );
        d_fd.error(relative_error(
            closed.total.data(),
            numeric.data(),
            FD_FLOOR,
        ));

        let two_c_loss = |f: &RealArray| {
            let mut g = Graph::new();
            let fv = g.leaf(f.clone());
            let vv = g.leaf(v.clone());
            let (sp, sn) = similarity_nodes(&mut g, fv, vv, &labels).expect("shapes");
            let l = two_c_from_similarities(&mut g, sp, sn, &labels, p.tau, Denominator::AllOthers)
                .expect("valid");
            (g, fv, l)
        };
        let closed = two_c_embedding_grads(&batch, &bundle, p.tau);
        let (g, fv, l) = two_c_loss(&f);
        let reverse = g.backward(l).expect("scalar loss").get_or_zeros(fv, &f);
        c_auto.error(relative_error(
            closed.total.data(),
            reverse.data(),
            AUTODIFF_FLOOR,
        ));
        let numeric = central_difference(
            |f| {
                let (g, _, l) = two_c_loss(f);
                g.value(l).item()
            },
            &f,
            STEP,
        );
        c_fd.error(relative_error(
            closed.total.data(),
            numeric.data(),
            FD_FLOOR,
        ));
    }
    [d_anchor, d_auto, d_fd, c_auto, c_fd]
}

/// Closed-form gradients against reverse-mode and finite differences.
pub fn verify_gradients(hooks: &Hooks, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    checks.extend(check_ce_weight_grad(&mut rng));
    checks.extend(check_similarity_grads(&mut rng, hooks));
    checks.extend(check_embedding_grads(&mut rng));
    checks
}

fn property_checks(rng: &mut ChaCha8Rng, hooks: &Hooks) -> [Check; 4] {
    let mut p1 = Check::new("hard_negative_mining", 0.0);
    let mut p2 = Check::new("easy_positive_suppression", 0.0);
    let mut p3 = Check::new("easy_negative_suppression", 0.0);
    let mut p4 = Check::new("global_minimum", 1e-12);
    for _ in 0..PROPERTY_BUNDLES {
        let p = random_params(rng);
        let bundle = random_bundle(rng, &p);
        let grads = (hooks.similarity_grads)(&bundle, &p);
        let n = bundle.len();
        let mut mining_ok = true;
        let mut neg_ok = true;
        for q in 0..n {
            let negs: Vec<usize> = (0..n).filter(|&j| bundle.mask().get(q, j)).collect();
            for &a in &negs {
                let ga = grads.d_s_neg.get(q, a);
                if !(ga >= 0.0) {
                    mining_ok = false;
                }
                for &b in &negs {
                    if bundle.s_neg().get(q, a) > bundle.s_neg().get(q, b)
                        && !(ga >= grads.d_s_neg.get(q, b))
                    {
                        mining_ok = false;
                    }
                }
            }
            for r in 0..n {
                if bundle.s_neg().get(q, r) - p.m_n <= 0.0 && grads.d_s_neg.get(q, r) != 0.0 {
                    neg_ok = false;
                }
            }
        }
        p1.require(mining_ok, || {
            String::from("a negative-similarity derivative is negative or out of order")
        });
        p3.require(neg_ok, || {
            String::from("an easy negative has a nonzero derivative")
        });
        let pos_ok = bundle
            .s_pos()
            .iter()
            .zip(&grads.d_s_pos)
            .all(|(&s, &g)| s - p.m_p < 0.0 || g == 0.0);
        p2.require(pos_ok, || {
            String::from("an easy positive has a nonzero derivative")
        });

        let floor = d2dce_global_minimum(bundle.mask());
        let value = d2dce(&bundle, &p);
        p4.error((floor - value).max(0.0));
        let s_pos = (0..n).map(|_| rng.random_range(p.m_p..=1.0)).collect();
        let s_neg = random_pairwise(rng, n, -1.0, p.m_n);
        let active = SimilarityBundle::new(
            s_pos,
            s_neg,
            bundle.mask().clone(),
            bundle.labels().to_vec(),
        )
        .expect("valid bundle");
        p4.error((d2dce(&active, &p) - floor).abs());
    }
    [p1, p2, p3, p4]
}

fn bound_check(rng: &mut ChaCha8Rng) -> Check {
    let mut check = Check::new("embedding_grad_norm_bound", 1.0);
    for _ in 0..PROPERTY_BUNDLES {
        let p = random_params(rng);
        let batch = random_batch(rng);
        let bundle = SimilarityBundle::from_batch(&batch, exact_negative_mask(batch.labels()))
            .expect("valid batch");
        let grads = d2dce_embedding_grads(&batch, &bundle, &p);
        let bound = 3.0 / p.tau;
        let worst = grads.per_sample_norms().into_iter().fold(0.0, f64::max);
        // Reported as a fraction of the bound.
        check.error(worst / bound);
    }
    check
}

fn linearity_check(rng: &mut ChaCha8Rng) -> Check {
    let mut check = Check::new("ce_weight_grad_linear_in_feature_scale", 1e-12);
    for _ in 0..PROPERTY_BUNDLES {
        let n = rng.random_range(1..10);
        let d = rng.random_range(1..6);
        let c = rng.random_range(2..6);
        let f = RealArray::matrix(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .expect("finite");
        let logits: Vec<f64> = (0..n * c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut probs = Vec::with_capacity(n * c);
        for row in logits.chunks(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| math::exp(x - m)).collect();
            let s: f64 = e.iter().sum();
            probs.extend(e.iter().map(|x| x / s));
        }
        let probs = RealArray::matrix(n, c, probs).expect("finite");
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let g1 = ce_weight_grad_from_probs(&f, &probs, &y).expect("valid");
        let g2 =
            ce_weight_grad_from_probs(&f.scale(2.0).expect("finite"), &probs, &y).expect("valid");
        for (a, b) in g1.row_norms().into_iter().zip(g2.row_norms()) {
            let rel = if a == 0.0 {
                b
            } else {
                (b - 2.0 * a).abs() / (2.0 * a)
            };
            check.error(rel);
        }
    }
    check
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = math::norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Easy-positive geometry where the 2C loss still pulls along the positive
/// pair while D2D-CE has a clamped positive term, plus the effect of
/// same-class denominator terms.
fn two_c_contrast(rng: &mut ChaCha8Rng) -> [Check; 2] {
    let mut easy = Check::new("two_c_easy_positive_contrast", 0.0);
    let f0 = unit(&[1.0, 0.0, 0.0]);
    let angle = libm::acos(0.999);
    let f1 = vec![libm::cos(angle), libm::sin(angle), 0.0];
    let f2 = unit(&[0.0, 0.3, 1.0]);
    let v0 = unit(&[1.0, 0.01, 0.0]);
    let v1 = unit(&[0.0, 0.0, 1.0]);
    let labels = vec![0, 0, 1];
    let batch = EmbeddingBatch::new(
        RealArray::from_rows(&[&f0, &f1, &f2]).expect("finite"),
        labels.clone(),
        RealArray::from_rows(&[&v0, &v1]).expect("finite"),
    )
    .expect("unit rows");
    let bundle = SimilarityBundle::from_batch(&batch, exact_negative_mask(&labels)).expect("valid");
    let p = D2dceParams::default();
    let attraction = two_c_embedding_grads(&batch, &bundle, p.tau).attraction;
    let along = math::dot(attraction.row(0), &f1);
    let clamped = d2dce_similarity_grads(&bundle, &p).d_s_pos[0];
    easy.require(bundle.s_pos()[0] >= p.m_p, || {
        String::from("positive not easy")
    });
    easy.require(along.abs() > 0.0, || {
        format!("2C attraction along the positive is {along}")
    });
    easy.require(clamped == 0.0, || {
        format!("D2D-CE positive derivative is {clamped}")
    });
    easy.worst = along.abs();
    easy.limit = 0.0;

    let mut denom = Check::new("two_c_same_class_denominator", 0.0);
    let mut done = 0;
    while done < PROPERTY_BUNDLES {
        let batch = random_batch(rng);
        let y = batch.labels();
        let duplicated = (0..y.len()).any(|i| (i + 1..y.len()).any(|j| y[i] == y[j]));
        if !duplicated {
            continue;
        }
        done += 1;
        let bundle = SimilarityBundle::from_batch(&batch, exact_negative_mask(y)).expect("valid");
        let tau = random_params(rng).tau;
        let all = two_c_loss_with(&bundle, tau, Denominator::AllOthers);
        let neg = two_c_loss_with(&bundle, tau, Denominator::NegativesOnly);
        denom.require(all != neg, || {
            format!("denominator change left the loss at {all}")
        });
    }
    [easy, denom]
}

/// Loss properties, the normalization bound, classifier-gradient linearity
/// and the 2C contrast.
pub fn verify_properties(hooks: &Hooks, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    checks.extend(property_checks(&mut rng, hooks));
    checks.push(bound_check(&mut rng));
    checks.push(linearity_check(&mut rng));
    checks.extend(two_c_contrast(&mut rng));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_with_reference_gradients() {
        let hooks = Hooks::default();
        let grads = verify_gradients(&hooks, 1);
        assert!(grads.iter().all(|c| c.passed), "{grads:?}");
        assert!(grads.iter().all(|c| c.comparisons >= GRADIENT_INSTANCES));
        let props = verify_properties(&hooks, 1);
        assert!(props.iter().all(|c| c.passed), "{props:?}");
        assert!(props[..4].iter().all(|c| c.comparisons >= PROPERTY_BUNDLES));
    }

    #[test]
    fn flipped_sign_is_caught() {
        let hooks = Fault::NegativeSimilaritySign.hooks();
        let props = verify_properties(&hooks, 2);
        let failed: Vec<&str> = props.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(failed, vec!["hard_negative_mining"]);
        let grads = verify_gradients(&hooks, 2);
        assert!(grads
            .iter()
            .any(|c| !c.passed && c.name.starts_with("d2dce_negative_similarity")));
    }

    #[test]
    fn reports_are_deterministic() {
        let hooks = Hooks::default();
        assert_eq!(verify_properties(&hooks, 3), verify_properties(&hooks, 3));
    }
}
