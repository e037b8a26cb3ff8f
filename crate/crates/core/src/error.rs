//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum GeomError {
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum KernelError {
    #[error("core radius must be positive (got {0})")]
    NonPositiveSigma(f64),
    #[error("Green's function is singular at r = 0")]
    Singular,
    #[error("source set is empty")]
    EmptySources,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum FmmError {
    #[error("source set is empty")]
    EmptySources,
    #[error("expansion order must be at least 1 (got {0})")]
    InvalidOrder(usize),
    #[error("image levels must be at least 1 (got {0})")]
    InvalidImageLevels(usize),
    #[error("M2L requested for cells that are not well separated")]
    NotSeparated,
    #[error("L2P target lies outside the expansion's convergence radius")]
    OutsideConvergence,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite update for particle {index}")]
    Diverged { index: usize },
    #[error("linear solver failed to converge: {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("operator dimension {op} does not match right-hand side {rhs}")]
    DimensionMismatch { op: usize, rhs: usize },
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum SpectralError {
    #[error("lattice resolution must be a power of two >= 4 (got {0})")]
    NotPowerOfTwo(usize),
    #[error("spectral state diverged (non-finite coefficient)")]
    Diverged,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum StatsError {
    #[error("derivative field has zero variance; moments are undefined")]
    ZeroVariance,
    #[error("velocity scale is zero; flow scales are undefined")]
    ZeroVelocity,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum TurbgenError {
    #[error("peak wavenumber {k_p} is not resolvable on an n = {n} lattice (need k_p <= n/3)")]
    PeakTooHigh { k_p: usize, n: usize },
    #[error("lattice resolution must be a power of two >= 4 (got {0})")]
    BadResolution(usize),
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ConfigError {
    #[error("expansion order must be >= 1")]
    BadOrder,
    #[error("reinitialization cadence must be >= 1")]
    BadReinit,
    #[error("time step must be positive")]
    BadDt,
    #[error("viscosity must be positive")]
    BadViscosity,
    #[error("overlap ratio must lie in (0, 2]")]
    BadOverlap,
    #[error("image levels must be >= 1")]
    BadImageLevels,
    #[error("lattice resolution must be a power of two >= 4")]
    BadResolution,
}
