//! Periodic-cube geometry: 3-vectors, the simulation domain and the
//! wrapping/minimum-image conventions shared by every other module.
//!
//! The domain is the cube `[-pi, pi)^3` with periodic boundaries. Wrapping
//! uses the half-open convention so every point has a unique representative.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::GeomError;

/// Edge length of the standard domain.
pub const BOX_EDGE: f64 = 2.0 * PI;

/// Plain 3-vector of `f64`, used for positions, velocities, strengths and
/// vorticity alike.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        self.scale(1.0 / s)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

/// Row-major 3x3 matrix; `m[r][c]` with rows indexing the output component.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    /// Matrix-vector product.
    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|r| r.iter().all(|v| v.is_finite()))
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, o: Mat3) {
        for r in 0..3 {
            for c in 0..3 {
                self.0[r][c] += o.0[r][c];
            }
        }
    }
}

/// The periodic simulation cube.
///
/// Only the standard `[-pi, pi)^3` cube is supported; the type exists so the
/// convention has a single home.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Domain {
    pub lower: Vec3,
    pub upper: Vec3,
    pub periodic: bool,
}

impl Default for Domain {
    fn default() -> Self {
        Domain::standard()
    }
}

impl Domain {
    pub fn standard() -> Self {
        Domain {
            lower: Vec3::new(-PI, -PI, -PI),
            upper: Vec3::new(PI, PI, PI),
            periodic: true,
        }
    }

    pub fn edge(&self) -> f64 {
        BOX_EDGE
    }

    pub fn center(&self) -> Vec3 {
        Vec3::ZERO
    }

    pub fn contains(&self, x: Vec3) -> bool {
        x.x >= -PI && x.x < PI && x.y >= -PI && x.y < PI && x.z >= -PI && x.z < PI
    }
}

/// Map a coordinate into `[-pi, pi)`; the displacement from the input is an
/// integer multiple of `2*pi`.
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    let mut y = x - BOX_EDGE * ((x + PI) / BOX_EDGE).floor();
    // Guard against rounding landing exactly on the excluded upper face.
    if y >= PI {
        y -= BOX_EDGE;
    }
    if y < -PI {
        y += BOX_EDGE;
    }
    y
}

/// Wrap a position into the domain. Errors on non-finite coordinates.
pub fn wrap_position(x: Vec3, domain: &Domain) -> Result<Vec3, GeomError> {
    if !x.is_finite() {
        return Err(GeomError::NonFinite);
    }
    debug_assert!(domain.periodic);
    Ok(wrap_unchecked(x))
}

/// Infallible wrap for hot paths; inputs must be finite.
#[inline]
pub fn wrap_unchecked(x: Vec3) -> Vec3 {
    Vec3::new(wrap_coord(x.x), wrap_coord(x.y), wrap_coord(x.z))
}

/// Minimum-image form of a separation vector: each coordinate mapped into
/// `[-pi, pi)` by multiples of `2*pi`.
#[inline]
pub fn minimum_image(dx: Vec3) -> Vec3 {
    wrap_unchecked(dx)
}
