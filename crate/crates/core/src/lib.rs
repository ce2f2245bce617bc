//! Adaptive message passing: graph networks that learn their own depth
//! through a truncated variational distribution over layers, and that
//! softly filter outgoing messages per node and layer.

pub mod amp;
pub mod autodiff;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod graphs;
pub mod mp;
pub mod special;
pub mod train;

pub use error::{AmpError, Result};
