//! Sequential volumetric CNN with cached forward traces and reverse-mode
//! gradients w.r.t. parameters and inputs.

pub(crate) mod layers;
mod loss;
mod network;
mod patched;
mod spec;

pub use layers::{BatchNorm, BatchStats, Layer, Region3};
pub use loss::{predicted_classes, softmax_cross_entropy};
pub use network::{ForwardTrace, LayerCache, Mode, Network, ReluRule};
pub use spec::{BlockSpec, NetworkSpec, DEFAULT_FILTERS, DEFAULT_POOLS};
