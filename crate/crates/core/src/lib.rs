//! Mesh-free vortex-method DNS of decaying isotropic turbulence in a
//! periodic cube, with a hybrid treecode/FMM evaluation engine, a built-in
//! brute-force oracle and a miniature pseudo-spectral reference solver.
//!
//! Everything is `f64`. Evaluation results are independent of the worker
//! thread count: parallel phases partition targets and accumulate each
//! target's contributions in a fixed (interaction-list) order.

pub mod config;
pub mod engine;
pub mod error;
pub mod fmm;
pub mod geom;
pub mod kernels;
pub mod lattice;
pub mod particles;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod turbgen;

pub use config::RunConfig;
pub use geom::{minimum_image, wrap_position, Domain, Mat3, Vec3};
pub use lattice::{LatticeField, SampleTag};
pub use particles::ParticleSet;
