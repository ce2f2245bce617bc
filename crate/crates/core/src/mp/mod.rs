//! Message-passing layers, soft message filters and per-layer readouts.

mod filter;
mod layers;
mod linear;
mod readout;

pub use filter::{ones_filter, Filter, FilterMode};
pub use layers::{aggregate, MpKind, MpLayer, ADGN_EPSILON, ADGN_GAMMA};
pub use linear::{glorot, Linear, Mlp};
pub use readout::{mean_pool, Readout};

#[cfg(test)]
mod tests;
