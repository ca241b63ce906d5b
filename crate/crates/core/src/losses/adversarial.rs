//! Unconditional adversarial objectives and projection conditioning.

use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Graph, RealArray, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdversarialKind {
    #[default]
    Hinge,
    NonSaturation,
    LeastSquares,
}

impl AdversarialKind {
    pub const ALL: [AdversarialKind; 3] = [Self::Hinge, Self::NonSaturation, Self::LeastSquares];

    pub fn name(self) -> &'static str {
        match self {
            Self::Hinge => "hinge",
            Self::NonSaturation => "non_saturation",
            Self::LeastSquares => "least_squares",
        }
    }
}

impl fmt::Display for AdversarialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdversarialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind {
                what: "adversarial loss",
                name: s.to_string(),
            })
    }
}

/// Discriminator objective on real and fake logits (each N×1).
pub fn discriminator_loss(
    g: &mut Graph,
    kind: AdversarialKind,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let (r, f) = match kind {
        AdversarialKind::Hinge => {
            // mean(max(0, 1 − r)) + mean(max(0, 1 + f))
            let r = g.scale(real, -1.0)?;
            let r = g.shift(r, 1.0)?;
            let r = g.clamp_nonneg(r)?;
            let f = g.shift(fake, 1.0)?;
            let f = g.clamp_nonneg(f)?;
            (g.mean(r)?, g.mean(f)?)
        }
        AdversarialKind::NonSaturation => {
            // −log σ(r) − log(1 − σ(f))
            let r = g.scale(real, -1.0)?;
            let r = g.softplus(r)?;
            let f = g.softplus(fake)?;
            (g.mean(r)?, g.mean(f)?)
        }
        AdversarialKind::LeastSquares => {
            let r = g.shift(real, -1.0)?;
            let r = g.mul(r, r)?;
            let f = g.mul(fake, fake)?;
            let (r, f) = (g.mean(r)?, g.mean(f)?);
            (g.scale(r, 0.5)?, g.scale(f, 0.5)?)
        }
    };
    Ok(g.add(r, f)?)
}

/// Generator objective on fake logits.
pub fn generator_loss(g: &mut Graph, kind: AdversarialKind, fake: Var) -> Result<Var> {
    Ok(match kind {
        AdversarialKind::Hinge => {
            let m = g.mean(fake)?;
            g.scale(m, -1.0)?
        }
        AdversarialKind::NonSaturation => {
            let f = g.scale(fake, -1.0)?;
            let f = g.softplus(f)?;
            g.mean(f)?
        }
        AdversarialKind::LeastSquares => {
            let f = g.shift(fake, -1.0)?;
            let f = g.mul(f, f)?;
            let m = g.mean(f)?;
            g.scale(m, 0.5)?
        }
    })
}

/// `(d_loss, g_loss)` for plain logit vectors.
pub fn adversarial_losses(
    kind: AdversarialKind,
    d_real: &[f64],
    d_fake: &[f64],
) -> Result<(f64, f64)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::EmptyInput("adversarial logits"));
    }
    let mut g = Graph::new();
    let r = g.leaf(RealArray::column(d_real.to_vec())?);
    let f = g.leaf(RealArray::column(d_fake.to_vec())?);
    let d = discriminator_loss(&mut g, kind, r, f)?;
    let gl = generator_loss(&mut g, kind, f)?;
    Ok((g.value(d).item(), g.value(gl).item()))
}

/// Inner product of a feature vector with a class embedding, added to the
/// unconditional adversarial logit.
pub fn projection_term(embedding: &[f64], class_embed: &[f64]) -> Result<f64> {
    if embedding.len() != class_embed.len() {
        return Err(TensorError::ShapeMismatch {
            op: "projection_term",
            lhs: alloc::vec![embedding.len()],
            rhs: alloc::vec![class_embed.len()],
        }
        .into());
    }
    Ok(math::dot(embedding, class_embed))
}

/// Recorded projection term per row: `Σ_k h[i,k] · table[y_i, k]` (N×1).
pub fn projection_graph(g: &mut Graph, h: Var, table: Var, y: &[usize]) -> Result<Var> {
    let picked = g.gather_rows(table, y)?;
    let prod = g.mul(h, picked)?;
    Ok(g.sum_rows(prod)?)
}
