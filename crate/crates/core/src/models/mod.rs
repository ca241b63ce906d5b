//! Parameter storage and the generator/discriminator networks.

pub mod checkpoint;
mod discriminator;
mod generator;
mod mlp;
mod params;

pub use discriminator::{Discriminator, DiscriminatorOutput, DiscriminatorSpec, Heads};
pub use generator::{Generator, GeneratorSpec};
pub use mlp::{Linear, Mlp};
pub use params::ParamStore;
