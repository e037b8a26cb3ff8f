//! Hierarchical O(N) evaluation of the vortex kernels: velocity and its
//! gradient from truncated solid-harmonic expansions, a hybrid
//! treecode/cell-cell traversal, periodic-image far field and a
//! short-range Gaussian correction.
//!
//! The hierarchy approximates the singular point kernel only. Regularized
//! cores enter through a separate correction pass that adds
//! `(regularized - point)` for pairs closer than five core radii; beyond
//! that the cutoff factor is saturated and the two kernels agree to
//! round-off. This keeps the expansion machinery kernel-exact and makes
//! the near field independent of the traversal geometry.

pub mod expansion;
pub mod harmonics;
pub mod traverse;
pub mod tree;

mod engine;
mod periodic;

pub use engine::{autotune, evaluate, FmmParams, TraversalStats, TunedParams};
pub use expansion::{l2p, p2m, translate, Expansion, ExpansionKind, Translation};
pub use periodic::periodic_far_field;
pub use traverse::{CostModel, TraversalMode};
pub use tree::{Cell, Octree};
