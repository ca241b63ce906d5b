use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::tensor::RealArray;
use crate::trainer::Dataset;

/// One isotropic Gaussian component; its index is the class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

/// Labelled Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MoGSpec {
    components: Vec<Component>,
}

impl MoGSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or(Error::EmptyInput("mixture components"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(invalid("mean", "must have at least one coordinate"));
        }
        for c in &components {
            if c.mean.len() != dim {
                return Err(invalid("mean", "all components need the same dimension"));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(invalid("mean", "must be finite"));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(invalid("std", "must be positive"));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(invalid("weight", "must be non-negative"));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weight", "must sum to 1"));
        }
        Ok(Self { components })
    }

    /// One-dimensional mixture with equal weights.
    pub fn from_1d(means: &[f64], stds: &[f64]) -> Result<Self> {
        if means.len() != stds.len() {
            return Err(invalid(
                "std",
                "one standard deviation per mean is required",
            ));
        }
        let w = 1.0 / means.len().max(1) as f64;
        Self::new(
            means
                .iter()
                .zip(stds)
                .map(|(&m, &s)| Component {
                    mean: vec![m],
                    std: s,
                    weight: w,
                })
                .collect(),
        )
    }

    /// Three heavily overlapping classes: means −1, 0, 1 and std 0.8.
    pub fn overlapped() -> Self {
        Self::from_1d(&[-1.0, 0.0, 1.0], &[0.8; 3]).expect("valid mixture")
    }

    /// Two well separated classes: means 0 and 10, std 0.5.
    pub fn separated() -> Self {
        Self::from_1d(&[0.0, 10.0], &[0.5; 2]).expect("valid mixture")
    }

    /// `classes` equally weighted 2-D components on a circle.
    pub fn ring(classes: usize, radius: f64, std: f64) -> Result<Self> {
        if classes == 0 {
            return Err(invalid("classes", "at least one class is required"));
        }
        let w = 1.0 / classes as f64;
        Self::new(
            (0..classes)
                .map(|k| {
                    let angle = 2.0 * core::f64::consts::PI * k as f64 / classes as f64;
                    Component {
                        mean: vec![radius * libm::cos(angle), radius * libm::sin(angle)],
                        std,
                        weight: w,
                    }
                })
                .collect(),
        )
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn classes(&self) -> usize {
        self.components.len()
    }

    fn draw_label<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (k, c) in self.components.iter().enumerate() {
            if c.weight <= 0.0 {
                continue;
            }
            acc += c.weight;
            last = k;
            if u < acc {
                return k;
            }
        }
        last
    }
}

/// Draws `n` labelled samples: labels by mixture weight, then a Gaussian
/// draw around the label's mean.
pub fn sample_mog<R: Rng + ?Sized>(
    spec: &MoGSpec,
    n: usize,
    rng: &mut R,
) -> Result<(RealArray, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyInput("sample count"));
    }
    let dim = spec.dim();
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let k = spec.draw_label(rng);
        let c = &spec.components[k];
        for &m in &c.mean {
            x.push(m + c.std * rng.sample::<f64, _>(StandardNormal));
        }
        y.push(k);
    }
    Ok((RealArray::matrix(n, dim, x)?, y))
}

impl Dataset for MoGSpec {
    fn dim(&self) -> usize {
        MoGSpec::dim(self)
    }

    fn classes(&self) -> usize {
        MoGSpec::classes(self)
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<(RealArray, Vec<usize>)> {
        sample_mog(self, n, rng)
    }
}
