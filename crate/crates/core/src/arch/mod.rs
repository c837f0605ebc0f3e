//! The searchable child network: architecture encoding, the shared weight
//! store and compilation of an architecture into a runnable plan.

mod encoding;
pub mod modules;
mod params;
mod plan;

pub use encoding::{ArchEncoding, NodeChoice, OpKind};
pub use params::{SharedParams, SupernetConfig, REDUCTIONS};
pub use plan::{ForwardOutput, Layer, NetworkPlan, Step};
