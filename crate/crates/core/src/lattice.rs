//! Uniform periodic lattices of scalar or vector samples.

use std::f64::consts::PI;

use crate::error::SpectralError;
use crate::geom::{Vec3, BOX_EDGE};

/// Where the samples of a [`LatticeField`] live within each grid cell.
///
/// The spectral solver works on cell corners `x_i = -pi + i*h`; particle
/// seeding uses cell centers `x_i = -pi + (i + 1/2)*h`, staggered in-between.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SampleTag {
    Corners,
    Centers,
}

/// `n^3` periodic grid of `components` real samples per node.
///
/// Layout: `data[c][iz][iy][ix]` flattened with `ix` fastest, i.e.
/// `data[((c * n + iz) * n + iy) * n + ix]`. The binary dump payload uses
/// the same order.
#[derive(Clone, Debug)]
pub struct LatticeField {
    pub n: usize,
    pub components: usize,
    pub tag: SampleTag,
    pub data: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(n: usize, components: usize, tag: SampleTag) -> Result<Self, SpectralError> {
        if n < 4 || !n.is_power_of_two() {
            return Err(SpectralError::NotPowerOfTwo(n));
        }
        assert!(components == 1 || components == 3);
        Ok(LatticeField { n, components, tag, data: vec![0.0; components * n * n * n] })
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        BOX_EDGE / self.n as f64
    }

    #[inline]
    pub fn idx(&self, c: usize, ix: usize, iy: usize, iz: usize) -> usize {
        ((c * self.n + iz) * self.n + iy) * self.n + ix
    }

    #[inline]
    pub fn get(&self, c: usize, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data[self.idx(c, ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, ix: usize, iy: usize, iz: usize, v: f64) {
        let i = self.idx(c, ix, iy, iz);
        self.data[i] = v;
    }

    /// Physical coordinate of node `(ix, iy, iz)`.
    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let h = self.h();
        let off = match self.tag {
            SampleTag::Corners => 0.0,
            SampleTag::Centers => 0.5,
        };
        Vec3::new(
            -PI + (ix as f64 + off) * h,
            -PI + (iy as f64 + off) * h,
            -PI + (iz as f64 + off) * h,
        )
    }

    /// All node positions in storage order.
    pub fn node_positions(&self) -> Vec<Vec3> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n * n);
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    out.push(self.node_position(ix, iy, iz));
                }
            }
        }
        out
    }

    /// Vector sample at a node (3-component fields).
    pub fn vec_at(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        debug_assert_eq!(self.components, 3);
        Vec3::new(self.get(0, ix, iy, iz), self.get(1, ix, iy, iz), self.get(2, ix, iy, iz))
    }

    pub fn set_vec(&mut self, ix: usize, iy: usize, iz: usize, v: Vec3) {
        self.set(0, ix, iy, iz, v.x);
        self.set(1, ix, iy, iz, v.y);
        self.set(2, ix, iy, iz, v.z);
    }

    /// Build a 3-component field from per-node vectors in storage order.
    pub fn from_vectors(n: usize, tag: SampleTag, v: &[Vec3]) -> Result<Self, SpectralError> {
        let mut f = LatticeField::zeros(n, 3, tag)?;
        assert_eq!(v.len(), n * n * n);
        for (i, w) in v.iter().enumerate() {
            f.data[i] = w.x;
            f.data[n * n * n + i] = w.y;
            f.data[2 * n * n * n + i] = w.z;
        }
        Ok(f)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
