use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::{Graph, RealArray, Var};

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<RealArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: RealArray) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &RealArray {
        &self.values[i]
    }

    pub fn set(&mut self, i: usize, value: RealArray) {
        assert_eq!(
            value.shape(),
            self.values[i].shape(),
            "parameter shape changed"
        );
        self.values[i] = value;
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealArray)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[RealArray] {
        &self.values
    }

    /// Records every parameter as a leaf, in store order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|v| g.leaf(v.clone())).collect()
    }

    /// True when both stores hold the same names, shapes and bit patterns.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Uniform `±1/√fan_in` initialization for a `fan_in × fan_out` weight.
pub(crate) fn init_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    shape: &[usize],
) -> RealArray {
    let bound = 1.0 / crate::math::sqrt(fan_in as f64);
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    RealArray::new(shape.to_vec(), data).expect("finite init")
}
