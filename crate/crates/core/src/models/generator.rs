use alloc::vec;

use rand::Rng;

use super::mlp::{Linear, Mlp};
use super::params::{init_uniform, ParamStore};
use crate::error::{invalid, Result};
use crate::losses::check_labels;
use crate::tensor::{Graph, RealArray, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub z_dim: usize,
    pub classes: usize,
    pub label_embed_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    pub slope: f64,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(invalid("generator", "dimensions must be positive"));
        }
        if self.classes == 0 {
            return Err(invalid("classes", "at least one class is required"));
        }
        Ok(())
    }
}

/// Conditional generator: a learned label embedding is concatenated to the
/// noise and passed through an MLP trunk with a linear output layer.
#[derive(Clone, Debug)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub params: ParamStore,
    label_embed: usize,
    trunk: Mlp,
    out: Linear,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let label_embed = params.push(
            "label_embed",
            init_uniform(
                rng,
                spec.label_embed_dim.max(1),
                &[spec.classes, spec.label_embed_dim],
            ),
        );
        let widths = vec![spec.hidden_width; spec.hidden_layers];
        let input = spec.z_dim + spec.label_embed_dim;
        let trunk = Mlp::init(&mut params, rng, "trunk", input, &widths, spec.slope);
        let last = if spec.hidden_layers == 0 {
            input
        } else {
            spec.hidden_width
        };
        let out = Linear::init(&mut params, rng, "out", last, spec.output_dim);
        Ok(Self {
            spec,
            params,
            label_embed,
            trunk,
            out,
        })
    }

    /// Records `G(z, y)` using `vars` bound from a store shaped like
    /// `self.params` (the live weights or an EMA copy).
    pub fn forward(&self, g: &mut Graph, vars: &[Var], z: Var, y: &[usize]) -> Result<Var> {
        check_labels(y, self.spec.classes)?;
        if g.value(z).rows() != y.len() || g.value(z).cols() != self.spec.z_dim {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "generator",
                lhs: g.value(z).shape().to_vec(),
                rhs: vec![y.len(), self.spec.z_dim],
            }
            .into());
        }
        let h = if self.spec.label_embed_dim == 0 {
            z
        } else {
            let e = g.gather_rows(vars[self.label_embed], y)?;
            g.concat_cols(z, e)?
        };
        let h = self.trunk.forward(g, vars, h)?;
        self.out.forward(g, vars, h)
    }

    /// Evaluates the generator with the given weights, without keeping a graph.
    pub fn sample(&self, params: &ParamStore, z: &RealArray, y: &[usize]) -> Result<RealArray> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let z = g.leaf(z.clone());
        let out = self.forward(&mut g, &vars, z, y)?;
        Ok(g.value(out).clone())
    }
}
