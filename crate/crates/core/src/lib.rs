#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod experiments;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod models;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, RealArray, TensorError, Var};
