//! Inverse problems with non-unique solutions, solved with an emulator, a
//! density estimator and a variational encoder/decoder pair.

pub mod autodiff;
pub mod emulator;
pub mod error;
pub mod flow;
pub mod harness;
pub mod nn;
pub mod normalize;
pub mod optim;
pub mod physics;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
