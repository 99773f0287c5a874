//! Multi-order feature stacks, the closed-form stationary state and the
//! hop-layered supporting sets used during inductive inference.

mod distance;
mod stack;
mod stationary;
mod support;

pub(crate) use distance::distance_unchecked;
pub use distance::{smoothness_distance, smoothness_distance_with, DistanceMode};
pub(crate) use stack::{average_into, SumAccumulator};
pub use stack::{precompute_stack, target_stack, Backend, PropagatedStack};
pub use stationary::{stationary_state, stationary_summary, update_summary, StationarySummary};
pub use support::{layered_support, SupportLayers};
