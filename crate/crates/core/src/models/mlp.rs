use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::params::{init_uniform, ParamStore};
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// Affine layer stored as two entries of a [`ParamStore`]: weight
/// (`in × out`) and bias (`1 × out`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let weight = store.push(
            format!("{name}.weight"),
            init_uniform(rng, fan_in, &[fan_in, fan_out]),
        );
        let bias = store.push(
            format!("{name}.bias"),
            init_uniform(rng, fan_in, &[1, fan_out]),
        );
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let z = g.matmul(x, vars[self.weight])?;
        Ok(g.add(z, vars[self.bias])?)
    }
}

/// Stack of affine layers, each followed by a leaky rectifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        widths: &[usize],
        slope: f64,
    ) -> Self {
        let mut fan_in = input;
        let mut layers = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::init(store, rng, &format!("{name}.{i}"), fan_in, w));
            fan_in = w;
        }
        Self { layers, slope }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            let z = layer.forward(g, vars, x)?;
            x = g.leaky_relu(z, self.slope)?;
        }
        Ok(x)
    }
}
