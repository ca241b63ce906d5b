use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{Linear, Mlp};
use super::params::{init_uniform, ParamStore};
use crate::error::{invalid, Result};
use crate::losses::{check_labels, projection_graph};
use crate::math;
use crate::tensor::{Graph, RealArray, Var, NORM_EPS};

/// Optional heads attached to the shared feature extractor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Heads {
    /// Linear classifier on raw features (`c × d`).
    pub classifier: bool,
    /// Class embedding table added to the adversarial logit (`c × d`).
    pub projection: bool,
    /// Second classifier used against fake samples only (`d → c`).
    pub twin: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub input_dim: usize,
    pub classes: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub embed_dim: usize,
    pub slope: f64,
    pub heads: Heads,
}

/// Shared feature extractor `F` with an adversarial head, a projection head
/// onto the unit hypersphere and unit-normalized class proxies.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore,
    trunk: Mlp,
    adv: Linear,
    proj: Linear,
    proxies: usize,
    classifier: Option<usize>,
    class_embed: Option<usize>,
    twin: Option<Linear>,
}

/// Nodes recorded by one discriminator forward pass.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    /// Adversarial logits (N×1), including the projection term when enabled.
    pub adv_logits: Var,
    /// Raw features `F(x)` (N×d).
    pub features: Var,
    /// Unit-norm embeddings (N×e).
    pub embeddings: Var,
    /// Unit-norm class proxies (c×e).
    pub proxies: Var,
    pub class_logits: Option<Var>,
    pub twin_logits: Option<Var>,
    pub raw_feature_norms: Vec<f64>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.hidden_width == 0 || spec.hidden_layers == 0 {
            return Err(invalid("discriminator", "dimensions must be positive"));
        }
        if spec.embed_dim == 0 {
            return Err(invalid("embed_dim", "must be positive"));
        }
        if spec.classes == 0 {
            return Err(invalid("classes", "at least one class is required"));
        }
        let d = spec.hidden_width;
        let c = spec.classes;
        let mut params = ParamStore::new();
        let widths = vec![d; spec.hidden_layers];
        let trunk = Mlp::init(
            &mut params,
            rng,
            "features",
            spec.input_dim,
            &widths,
            spec.slope,
        );
        let adv = Linear::init(&mut params, rng, "adv", d, 1);
        let proj = Linear::init(&mut params, rng, "proj", d, spec.embed_dim);
        let proxy_data = (0..c * spec.embed_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let proxies = params.push(
            "proxies",
            RealArray::matrix(c, spec.embed_dim, proxy_data).expect("finite init"),
        );
        let classifier = spec
            .heads
            .classifier
            .then(|| params.push("classifier", init_uniform(rng, d, &[c, d])));
        let class_embed = spec
            .heads
            .projection
            .then(|| params.push("class_embed", init_uniform(rng, d, &[c, d])));
        let twin = spec
            .heads
            .twin
            .then(|| Linear::init(&mut params, rng, "twin", d, c));
        Ok(Self {
            spec,
            params,
            trunk,
            adv,
            proj,
            proxies,
            classifier,
            class_embed,
            twin,
        })
    }

    /// Store index of the classifier weights whose gradient is tracked:
    /// the linear classifier when present, otherwise the proxies.
    pub fn classifier_param(&self) -> usize {
        self.classifier.unwrap_or(self.proxies)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        labels: &[usize],
    ) -> Result<DiscriminatorOutput> {
        check_labels(labels, self.spec.classes)?;
        let xv = g.value(x);
        if xv.cols() != self.spec.input_dim || xv.rows() != labels.len() {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "discriminator",
                lhs: xv.shape().to_vec(),
                rhs: vec![labels.len(), self.spec.input_dim],
            }
            .into());
        }
        let features = self.trunk.forward(g, vars, x)?;
        let fv = g.value(features);
        let raw_feature_norms = (0..fv.rows()).map(|r| math::norm(fv.row(r))).collect();

        let mut adv_logits = self.adv.forward(g, vars, features)?;
        if let Some(table) = self.class_embed {
            let p = projection_graph(g, features, vars[table], labels)?;
            adv_logits = g.add(adv_logits, p)?;
        }
        let projected = self.proj.forward(g, vars, features)?;
        let embeddings = g.l2_normalize_rows(projected, NORM_EPS)?;
        let proxies = g.l2_normalize_rows(vars[self.proxies], NORM_EPS)?;
        let class_logits = match self.classifier {
            Some(w) => {
                let wt = g.transpose(vars[w])?;
                Some(g.matmul(features, wt)?)
            }
            None => None,
        };
        let twin_logits = match &self.twin {
            Some(head) => Some(head.forward(g, vars, features)?),
            None => None,
        };
        Ok(DiscriminatorOutput {
            adv_logits,
            features,
            embeddings,
            proxies,
            class_logits,
            twin_logits,
            raw_feature_norms,
        })
    }

    /// Plain-value forward pass using the current weights.
    pub fn evaluate(
        &self,
        x: &RealArray,
        labels: &[usize],
    ) -> Result<(Graph, DiscriminatorOutput)> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let x = g.leaf(x.clone());
        let out = self.forward(&mut g, &vars, x, labels)?;
        Ok((g, out))
    }
}
