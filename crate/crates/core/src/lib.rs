//! Radar/optical fusion network for cloud removal, built on a small
//! reverse-mode tensor engine.

pub mod autograd;
pub mod blocks;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod run;
pub mod tensor;
pub mod train;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
