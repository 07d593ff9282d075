//! Network building blocks assembled from the basic layers.

mod aspp;
mod gated;
mod residual;
mod resample;
pub mod scdf;

pub use aspp::{Aspp, AsppRates};
pub use gated::{GatedConv, OptConv};
pub use residual::{PlainRb, RbDf, RbGc, RESIDUAL_SCALE};
pub use resample::{Down, Up};
pub use scdf::{FilterBank, FnParams, Scdf};
