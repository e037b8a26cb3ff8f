//! Lagrangian particle state: positions, vector strengths and core radii.

use crate::geom::{wrap_unchecked, Vec3};

/// A set of Gaussian vortex elements.
///
/// Structure-of-arrays so the evaluation kernels stream each field
/// independently. `strength` carries circulation x volume (vorticity
/// integrated over the element); `sigma` is the Gaussian core radius,
/// uniform right after a reinitialization and growing with diffusion
/// in between.
#[derive(Clone, Debug, Default)]
pub struct ParticleSet {
    pub position: Vec<Vec3>,
    pub strength: Vec<Vec3>,
    pub sigma: Vec<f64>,
}

impl ParticleSet {
    pub fn new(position: Vec<Vec3>, strength: Vec<Vec3>, sigma: Vec<f64>) -> Self {
        assert_eq!(position.len(), strength.len());
        assert_eq!(position.len(), sigma.len());
        ParticleSet { position, strength, sigma }
    }

    /// Uniform-sigma constructor.
    pub fn with_uniform_sigma(position: Vec<Vec3>, strength: Vec<Vec3>, sigma: f64) -> Self {
        let n = position.len();
        ParticleSet::new(position, strength, vec![sigma; n])
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().cloned().fold(0.0, f64::max)
    }

    /// Wrap every position into the domain.
    pub fn wrap_all(&mut self) {
        for p in &mut self.position {
            *p = wrap_unchecked(*p);
        }
    }

    /// Check the set invariants: nonempty, positive radii, finite strengths.
    pub fn validate(&self) -> bool {
        !self.is_empty()
            && self.sigma.iter().all(|&s| s > 0.0 && s.is_finite())
            && self.strength.iter().all(|g| g.is_finite())
            && self.position.iter().all(|x| x.is_finite())
    }
}
