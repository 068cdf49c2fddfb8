//! Ground-penetrating-radar forward modelling: an FDTD reference solver,
//! a random scene generator, and a bimodal encoder–decoder surrogate with
//! cross-attention feature fusion that predicts B-scans from permittivity
//! and conductivity maps.

pub mod autograd;
pub mod error;
pub mod optim;
pub mod parallel;
pub mod tensor;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use optim::{AdamConfig, ParameterStore};
pub use tensor::{Element, Tensor};
pub mod fdtd;
pub mod io;
pub mod network;
pub mod scene;
pub mod training;
