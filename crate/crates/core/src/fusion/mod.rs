//! Cross-modal fusion of the optical and radar streams.

mod attention;
mod cross;

pub use attention::{Mmrf, Mwru, Scru};
pub use cross::{CrossWeights, Mmcf, MmcfOutput};
