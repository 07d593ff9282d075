//! Differentiable operators recorded on a [`Graph`](crate::autograd::Graph).

pub mod conv;
pub mod elementwise;
pub mod layout;
pub mod linalg;
pub mod norm;

pub use conv::ConvSpec;
pub use elementwise::{sigmoid, LEAKY_SLOPE};
pub use layout::PadMode;
pub use norm::{Mode, RunningStats, BN_EPS, BN_MOMENTUM};
