//! Data-to-data cross-entropy with margins, its margin-free variant, and
//! their closed-form gradients.

use alloc::vec;
use alloc::vec::Vec;

use super::similarity::{EmbeddingBatch, NegativeMask, SimilarityBundle};
use crate::error::{invalid, Result};
use crate::math;
use crate::tensor::{Graph, RealArray, Var};

/// Temperature, margins, balance coefficient and negative-drop
/// probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct D2dceParams {
    pub tau: f64,
    pub m_p: f64,
    pub m_n: f64,
    pub lambda: f64,
    pub mask_drop_p: f64,
}

impl D2dceParams {
    /// `m_n = 1 − m_p`, `λ = τ` and no negative dropping.
    pub fn new(tau: f64, m_p: f64) -> Result<Self> {
        Self {
            tau,
            m_p,
            m_n: 1.0 - m_p,
            lambda: tau,
            mask_drop_p: 0.0,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", "must be positive"));
        }
        if !(self.m_p > 0.0 && self.m_p <= 1.0) {
            return Err(invalid("m_p", "must lie in (0, 1]"));
        }
        if !(self.m_n >= 0.0 && self.m_n < 1.0) {
            return Err(invalid("m_n", "must lie in [0, 1)"));
        }
        if self.m_n >= self.m_p {
            return Err(invalid("m_n", "must be smaller than m_p"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.mask_drop_p) {
            return Err(invalid("mask_drop_p", "must lie in [0, 1]"));
        }
        Ok(self)
    }
}

impl Default for D2dceParams {
    fn default() -> Self {
        Self::new(0.5, 0.98).expect("defaults are valid")
    }
}

/// Per-anchor pieces of the margin loss: clamped positive logit and the
/// denominator `C`.
///
/// An anchor with no negatives left (all dropped, or no other class in the
/// batch) keeps only its clamped positive term `−pos`; taken literally the
/// ratio would be `exp(pos)/exp(pos)` and the anchor would carry no signal.
struct AnchorTerms {
    pos: f64,
    denom: f64,
    empty: bool,
}

impl AnchorTerms {
    fn loss(&self) -> f64 {
        if self.empty {
            -self.pos
        } else {
            math::ln(self.denom) - self.pos
        }
    }

    /// `exp(pos)/C`, the share of the denominator held by the positive;
    /// zero for an empty anchor so the positive gradient is the bare pull.
    fn positive_share(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            math::exp(self.pos) / self.denom
        }
    }
}

fn anchor_terms(bundle: &SimilarityBundle, p: &D2dceParams, i: usize) -> AnchorTerms {
    let pos = (bundle.s_pos()[i] - p.m_p).min(0.0) / p.tau;
    let mut denom = math::exp(pos);
    let mut empty = true;
    let row = bundle.s_neg().row(i);
    for (j, &keep) in bundle.mask().row(i).iter().enumerate() {
        if keep {
            denom += math::exp((row[j] - p.m_n).max(0.0) / p.tau);
            empty = false;
        }
    }
    AnchorTerms { pos, denom, empty }
}

/// Per-sample losses `−log(exp(pos)/C)`; their mean is the D2D-CE loss.
pub fn d2dce_per_sample(bundle: &SimilarityBundle, params: &D2dceParams) -> Vec<f64> {
    (0..bundle.len())
        .map(|i| anchor_terms(bundle, params, i).loss())
        .collect()
}

pub fn d2dce(bundle: &SimilarityBundle, params: &D2dceParams) -> f64 {
    let per = d2dce_per_sample(bundle, params);
    per.iter().sum::<f64>() / per.len() as f64
}

/// `(1/N) Σ log(1 + |𝒩(i)|)`, the value reached when every clamp is active.
pub fn d2dce_global_minimum(mask: &NegativeMask) -> f64 {
    let n = mask.size();
    (0..n)
        .map(|i| math::ln(1.0 + mask.count(i) as f64))
        .sum::<f64>()
        / n as f64
}

/// Margin-free data-to-data cross-entropy.
pub fn modified_ce(bundle: &SimilarityBundle, tau: f64) -> f64 {
    let n = bundle.len();
    let mut total = 0.0;
    for i in 0..n {
        let pos = bundle.s_pos()[i] / tau;
        let row = bundle.s_neg().row(i);
        // log-sum-exp over the positive logit and every kept negative.
        let logits: Vec<f64> = core::iter::once(pos)
            .chain(
                bundle
                    .mask()
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k)
                    .map(|(j, _)| row[j] / tau),
            )
            .collect();
        total += crate::tensor::log_sum_exp(&logits) - pos;
    }
    total / n as f64
}

/// Closed-form derivatives of the D2D-CE loss with respect to the
/// similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGrads {
    /// `∂L/∂s_i`.
    pub d_s_pos: Vec<f64>,
    /// `∂L/∂s_{i,j}` with `s_{i,j}` read as anchor `i`'s similarity to `j`.
    pub d_s_neg: RealArray,
}

pub fn d2dce_similarity_grads(bundle: &SimilarityBundle, p: &D2dceParams) -> SimilarityGrads {
    let n = bundle.len();
    let scale = 1.0 / (p.tau * n as f64);
    let mut d_s_pos = Vec::with_capacity(n);
    let mut d_s_neg = vec![0.0; n * n];
    for q in 0..n {
        let t = anchor_terms(bundle, p, q);
        let s_q = bundle.s_pos()[q];
        d_s_pos.push(if s_q - p.m_p < 0.0 {
            -scale + scale * t.positive_share()
        } else {
            0.0
        });
        let row = bundle.s_neg().row(q);
        for (r, &keep) in bundle.mask().row(q).iter().enumerate() {
            let s = row[r];
            if keep && s - p.m_n > 0.0 {
                d_s_neg[q * n + r] = scale * math::exp((s - p.m_n) / p.tau) / t.denom;
            }
        }
    }
    SimilarityGrads {
        d_s_pos,
        d_s_neg: RealArray::matrix(n, n, d_s_neg).expect("finite gradients"),
    }
}

/// Gradients with respect to the sample embeddings, split the way the
/// anchor's own loss term decomposes.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingGrads {
    /// Proxy/positive pull on each anchor.
    pub attraction: RealArray,
    /// Push away from the anchor's negatives.
    pub repulsion: RealArray,
    /// `attraction + repulsion`: the gradient of the loss with the other
    /// samples' embeddings held fixed.
    pub anchor: RealArray,
    /// Full gradient, adding what each row receives as somebody else's
    /// negative or positive.
    pub total: RealArray,
}

impl EmbeddingGrads {
    /// Norm of each sample's own-term gradient with the `1/N` batch
    /// average removed.
    pub fn per_sample_norms(&self) -> Vec<f64> {
        let n = self.anchor.rows() as f64;
        self.anchor.row_norms().into_iter().map(|x| x * n).collect()
    }
}

fn add_scaled(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Closed-form `∂L/∂f_q` of D2D-CE.
///
/// Attraction is `−𝟙[s_q<m_p]/(τN) · (v − e^{(s_q−m_p)/τ} v / C)` and
/// repulsion is `1/(τN) · Σ_{j∈𝒩(q)} 𝟙[s_{q,j}>m_n] e^{(s_{q,j}−m_n)/τ} f_j / C`.
pub fn d2dce_embedding_grads(
    batch: &EmbeddingBatch,
    bundle: &SimilarityBundle,
    p: &D2dceParams,
) -> EmbeddingGrads {
    let f = batch.embeddings();
    let (n, d) = f.dims2();
    let scale = 1.0 / (p.tau * n as f64);
    let mut attraction = vec![0.0; n * d];
    let mut repulsion = vec![0.0; n * d];
    for q in 0..n {
        let t = anchor_terms(bundle, p, q);
        let s_q = bundle.s_pos()[q];
        let v = batch.proxies().row(batch.labels()[q]);
        if s_q - p.m_p < 0.0 {
            let k = -scale * (1.0 - t.positive_share());
            add_scaled(&mut attraction[q * d..(q + 1) * d], v, k);
        }
        let row = bundle.s_neg().row(q);
        for (j, &keep) in bundle.mask().row(q).iter().enumerate() {
            if keep && row[j] - p.m_n > 0.0 {
                let k = scale * math::exp((row[j] - p.m_n) / p.tau) / t.denom;
                add_scaled(&mut repulsion[q * d..(q + 1) * d], f.row(j), k);
            }
        }
    }
    let sim = d2dce_similarity_grads(bundle, p);
    finish(f, attraction, repulsion, &sim.d_s_neg)
}

/// Assembles anchor and total gradients; `d_pair[i][j]` is the derivative
/// with respect to `f_iᵀ f_j` seen from anchor `i`, which also reaches
/// `f_j` through `f_i`.
pub(crate) fn finish(
    f: &RealArray,
    attraction: Vec<f64>,
    repulsion: Vec<f64>,
    d_pair: &RealArray,
) -> EmbeddingGrads {
    let (n, d) = f.dims2();
    let anchor: Vec<f64> = attraction
        .iter()
        .zip(&repulsion)
        .map(|(a, r)| a + r)
        .collect();
    let mut total = anchor.clone();
    for i in 0..n {
        for j in 0..n {
            let w = d_pair.get(i, j);
            if w != 0.0 {
                add_scaled(&mut total[j * d..(j + 1) * d], f.row(i), w);
            }
        }
    }
    let mk = |data| RealArray::matrix(n, d, data).expect("finite gradients");
    EmbeddingGrads {
        attraction: mk(attraction),
        repulsion: mk(repulsion),
        anchor: mk(anchor),
        total: mk(total),
    }
}

/// Recorded D2D-CE on similarity nodes: `s_pos` (N×1) and `s_neg` (N×N).
pub fn d2dce_from_similarities(
    g: &mut Graph,
    s_pos: Var,
    s_neg: Var,
    mask: &NegativeMask,
    p: &D2dceParams,
) -> Result<Var> {
    let per = d2dce_per_sample_graph(g, s_pos, s_neg, mask, p)?;
    Ok(g.mean(per)?)
}

/// Recorded per-sample D2D-CE terms (N×1).
pub fn d2dce_per_sample_graph(
    g: &mut Graph,
    s_pos: Var,
    s_neg: Var,
    mask: &NegativeMask,
    p: &D2dceParams,
) -> Result<Var> {
    let inv_tau = 1.0 / p.tau;
    let pos = g.shift(s_pos, -p.m_p)?;
    let pos = g.clamp_nonpos(pos)?;
    let pos = g.scale(pos, inv_tau)?;
    let neg = g.shift(s_neg, -p.m_n)?;
    let neg = g.clamp_nonneg(neg)?;
    let neg = g.scale(neg, inv_tau)?;
    let log_denom = masked_log_denominator(g, pos, neg, mask)?;
    // Anchors without negatives keep only `−pos`.
    let has_negatives: Vec<f64> = (0..mask.size())
        .map(|i| if mask.count(i) > 0 { 1.0 } else { 0.0 })
        .collect();
    let has_negatives = g.leaf(RealArray::column(has_negatives)?);
    let log_denom = g.mul(log_denom, has_negatives)?;
    Ok(g.sub(log_denom, pos)?)
}

/// `log(exp(pos) + Σ_mask exp(neg))`, row by row.
fn masked_log_denominator(g: &mut Graph, pos: Var, neg: Var, mask: &NegativeMask) -> Result<Var> {
    let mask = g.leaf(mask.to_array());
    let exp_pos = g.exp(pos)?;
    let exp_neg = g.exp(neg)?;
    let kept = g.mul(exp_neg, mask)?;
    let neg_sum = g.sum_rows(kept)?;
    let denom = g.add(exp_pos, neg_sum)?;
    Ok(g.ln(denom)?)
}

/// Recorded margin-free variant on similarity nodes.
pub fn modified_ce_from_similarities(
    g: &mut Graph,
    s_pos: Var,
    s_neg: Var,
    mask: &NegativeMask,
    tau: f64,
) -> Result<Var> {
    let pos = g.scale(s_pos, 1.0 / tau)?;
    let neg = g.scale(s_neg, 1.0 / tau)?;
    let log_denom = masked_log_denominator(g, pos, neg, mask)?;
    let per = g.sub(log_denom, pos)?;
    Ok(g.mean(per)?)
}

/// Positive similarities `f_iᵀ v_{y_i}` (N×1) and pairwise similarities
/// `f fᵀ` (N×N) recorded from embedding and proxy nodes.
pub fn similarity_nodes(g: &mut Graph, f: Var, v: Var, labels: &[usize]) -> Result<(Var, Var)> {
    let vt = g.transpose(v)?;
    let all = g.matmul(f, vt)?;
    let s_pos = g.gather_cols(all, labels)?;
    let ft = g.transpose(f)?;
    let s_neg = g.matmul(f, ft)?;
    Ok((s_pos, s_neg))
}

/// Like [`similarity_nodes`] but with the partner embeddings detached, so
/// gradients only flow through each anchor.
pub fn anchor_similarity_nodes(
    g: &mut Graph,
    f: Var,
    v: Var,
    labels: &[usize],
) -> Result<(Var, Var)> {
    let vt = g.transpose(v)?;
    let all = g.matmul(f, vt)?;
    let s_pos = g.gather_cols(all, labels)?;
    let partners = g.detach(f)?;
    let pt = g.transpose(partners)?;
    let s_neg = g.matmul(f, pt)?;
    Ok((s_pos, s_neg))
}

/// Recorded D2D-CE on unit-norm embedding (N×e) and proxy (c×e) nodes.
pub fn d2dce_graph(
    g: &mut Graph,
    f: Var,
    v: Var,
    labels: &[usize],
    mask: &NegativeMask,
    p: &D2dceParams,
) -> Result<Var> {
    let (s_pos, s_neg) = similarity_nodes(g, f, v, labels)?;
    d2dce_from_similarities(g, s_pos, s_neg, mask, p)
}
