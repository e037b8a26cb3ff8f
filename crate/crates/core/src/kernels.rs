//! Analytic kernels and the direct pairwise evaluation of velocity,
//! stretching and vorticity. These O(N^2) sums are the ground truth the
//! hierarchical engine is checked against.
//!
//! The velocity induced at `x_i` by Gaussian elements is
//! `u_i = sum_j gamma_j x grad(G g)`, with `G = 1/(4 pi r)` and the cutoff
//! factor `g` equal to the fraction of a unit Gaussian enclosed within
//! radius `r`. The gradient is taken at the target, which fixes the sign
//! convention: a unit z-strength at the origin induces `(0, -1/4pi, 0)`
//! at `(1, 0, 0)`.

use rayon::prelude::*;
use std::f64::consts::{FRAC_2_SQRT_PI, PI};

use crate::error::KernelError;
use crate::geom::{minimum_image, Mat3, Vec3, BOX_EDGE};
use crate::particles::ParticleSet;

/// Gaussian argument beyond which the cutoff factor is saturated:
/// `1 - g < 1e-13` for `t = r^2/(2 sigma^2) >= 32`, i.e. `r >= 8 sigma`.
const T_SATURATED: f64 = 32.0;

/// Evaluation cutoff of the pair kernels: beyond `5 sigma`
/// (`t >= 12.5`, truncating about 1.5e-5 of the enclosed Gaussian mass,
/// below the solver tolerance) the regularized kernel is replaced by the
/// point kernel. Keeping one cutoff across the direct oracle and the
/// hierarchical engine makes their near fields identical pair by pair.
const T_KERNEL_CUT: f64 = 12.5;

/// Below this `t` the closed forms for `g` lose digits to cancellation and
/// a series is used instead.
const T_SERIES: f64 = 0.01;

/// Neighbor cutoff for Gaussian vorticity sums, in units of sigma.
pub const VORTICITY_CUTOFF_SIGMAS: f64 = 5.0;

/// Free-space Green's function of the Laplace kernel, `1/(4 pi r)`.
pub fn greens_laplace(r: f64) -> Result<f64, KernelError> {
    if r <= 0.0 || !r.is_finite() {
        return Err(KernelError::Singular);
    }
    Ok(1.0 / (4.0 * PI * r))
}

/// Normalized Gaussian basis function of standard deviation `sigma`,
/// `(2 pi sigma^2)^(-3/2) exp(-r^2 / 2 sigma^2)`; integrates to one.
pub fn gaussian_zeta(r: f64, sigma: f64) -> Result<f64, KernelError> {
    if !(sigma > 0.0) {
        return Err(KernelError::NonPositiveSigma(sigma));
    }
    let t = r * r / (2.0 * sigma * sigma);
    Ok(zeta0(sigma) * (-t).exp())
}

/// Peak value of the Gaussian basis function.
#[inline]
fn zeta0(sigma: f64) -> f64 {
    let two_pi_s2 = 2.0 * PI * sigma * sigma;
    1.0 / (two_pi_s2 * two_pi_s2.sqrt())
}

/// Cutoff factor `g = erf(sqrt(t)) - (2/sqrt(pi)) sqrt(t) exp(-t)` with
/// `t = r^2/(2 sigma^2)`: the Gaussian mass enclosed within radius `r`.
/// Monotone from 0 at the origin to 1 in the far field.
pub fn cutoff_g(r: f64, sigma: f64) -> Result<f64, KernelError> {
    if !(sigma > 0.0) {
        return Err(KernelError::NonPositiveSigma(sigma));
    }
    let t = r * r / (2.0 * sigma * sigma);
    Ok(g_of_t(t))
}

#[inline]
fn g_of_t(t: f64) -> f64 {
    if t >= T_SATURATED {
        1.0
    } else if t < T_SERIES {
        // erf and the decaying term cancel to O(s^3); sum the series of the
        // difference instead. Coefficients of s^(2n+1) are
        // (-1)^(n+1) 2n / (n! (2n+1)).
        let s = t.sqrt();
        let s2 = t;
        let poly = s2
            * (2.0 / 3.0
                + s2 * (-2.0 / 5.0 + s2 * (1.0 / 7.0 + s2 * (-1.0 / 27.0 + s2 * (1.0 / 132.0)))));
        FRAC_2_SQRT_PI * s * poly
    } else {
        let s = t.sqrt();
        libm::erf(s) - FRAC_2_SQRT_PI * s * (-t).exp()
    }
}

/// Radial factors of the regularized kernel for a pair at squared distance
/// `r2` and source core radius `sigma`:
///
/// * `q` multiplies `gamma x d` in the velocity (`u += (gamma x d) q`),
/// * `w = q'/r` carries the extra term of the velocity gradient
///   (`J += [gamma x] q + (gamma x d) (x) d w`).
///
/// In the far field `q -> -1/(4 pi r^3)` and `w -> 3/(4 pi r^5)`.
#[inline]
pub(crate) fn radial_factors(r2: f64, sigma: f64) -> (f64, f64) {
    let t = r2 / (2.0 * sigma * sigma);
    if t >= T_KERNEL_CUT {
        let inv_r3 = 1.0 / (r2 * r2.sqrt());
        let q = -inv_r3 / (4.0 * PI);
        let w = 3.0 * inv_r3 / (4.0 * PI * r2);
        (q, w)
    } else {
        let z0 = zeta0(sigma);
        if t < T_SERIES {
            // Series of q/zeta0 and w*sigma^2/zeta0 in t; both factors are
            // regular at the origin.
            let q = z0
                * ((-t).exp()
                    - (1.0 / 3.0 - t * (1.0 / 5.0 - t * (1.0 / 14.0 - t * (1.0 / 54.0)))));
            let w = z0 / (sigma * sigma)
                * (-(-t).exp() + 0.2 - t * (1.0 / 7.0 - t * (1.0 / 18.0 - t * (1.0 / 66.0))));
            (q, w)
        } else {
            let (fq, fw) = kernel_table().lookup(t);
            (z0 * fq, z0 / (sigma * sigma) * fw)
        }
    }
}

/// Dimensionless kernel factors as functions of `t = r^2/(2 sigma^2)`:
/// `q = zeta0 * fq(t)` and `w = zeta0/sigma^2 * fw(t)`.
fn normalized_factors_exact(t: f64) -> (f64, f64) {
    let et = (-t).exp();
    let g = g_of_t(t);
    // G/zeta0 with G = g/(4 pi r^3).
    let big_g = g * PI.sqrt() / (4.0 * t * t.sqrt());
    let fq = et - big_g;
    let fw = -et + (3.0 * big_g - et) / (2.0 * t);
    (fq, fw)
}

/// Sampled kernel factors with cubic (4-point) interpolation, accurate to
/// well beyond 1e-10 over the covered range; the series and saturated
/// branches handle the ends.
struct KernelTable {
    inv_dt: f64,
    fq: Vec<f64>,
    fw: Vec<f64>,
}

impl KernelTable {
    fn build() -> Self {
        const N: usize = 8192;
        let dt = T_KERNEL_CUT / N as f64;
        // Two pad samples past the cut keep the stencil in range.
        let mut fq = Vec::with_capacity(N + 3);
        let mut fw = Vec::with_capacity(N + 3);
        for i in 0..=(N + 2) {
            let t = (i as f64 * dt).max(1e-12);
            let (a, b) = normalized_factors_exact(t);
            fq.push(a);
            fw.push(b);
        }
        KernelTable { inv_dt: 1.0 / dt, fq, fw }
    }

    #[inline]
    fn lookup(&self, t: f64) -> (f64, f64) {
        let u = t * self.inv_dt;
        let i = (u as usize).clamp(1, self.fq.len() - 3);
        let x = u - i as f64;
        // Cubic Lagrange weights over samples i-1 .. i+2.
        let w0 = -x * (x - 1.0) * (x - 2.0) / 6.0;
        let w1 = (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0;
        let w2 = -(x + 1.0) * x * (x - 2.0) / 2.0;
        let w3 = (x + 1.0) * x * (x - 1.0) / 6.0;
        let q = w0 * self.fq[i - 1] + w1 * self.fq[i] + w2 * self.fq[i + 1] + w3 * self.fq[i + 2];
        let w = w0 * self.fw[i - 1] + w1 * self.fw[i] + w2 * self.fw[i + 1] + w3 * self.fw[i + 2];
        (q, w)
    }
}

fn kernel_table() -> &'static KernelTable {
    use std::sync::OnceLock;
    static TABLE: OnceLock<KernelTable> = OnceLock::new();
    TABLE.get_or_init(KernelTable::build)
}

/// Pairwise kernel: velocity and (optionally) velocity-gradient
/// contribution of one source at separation `d = x_target - x_source`.
#[inline]
pub(crate) fn pair_contribution(
    d: Vec3,
    gamma: Vec3,
    sigma: f64,
    vel: &mut Vec3,
    grad: Option<&mut Mat3>,
) {
    let r2 = d.norm_sq();
    if r2 == 0.0 {
        // Regularized kernel is odd; the self term vanishes.
        return;
    }
    let (q, w) = radial_factors(r2, sigma);
    let gxd = gamma.cross(d);
    *vel += gxd * q;
    if let Some(j) = grad {
        let m = &mut j.0;
        m[0][0] += gxd.x * d.x * w;
        m[0][1] += gxd.x * d.y * w - gamma.z * q;
        m[0][2] += gxd.x * d.z * w + gamma.y * q;
        m[1][0] += gxd.y * d.x * w + gamma.z * q;
        m[1][1] += gxd.y * d.y * w;
        m[1][2] += gxd.y * d.z * w - gamma.x * q;
        m[2][0] += gxd.z * d.x * w - gamma.y * q;
        m[2][1] += gxd.z * d.y * w + gamma.x * q;
        m[2][2] += gxd.z * d.z * w;
    }
}

/// Offsets of the truncated image lattice for a given recursion depth:
/// all multiples of the box edge within `[-R, R]^3`, `R = (3^levels - 1)/2`.
/// `levels = 0` is free space (the single zero offset).
pub fn image_offsets(levels: usize) -> Vec<Vec3> {
    let r = image_radius(levels) as i64;
    let mut out = Vec::with_capacity(((2 * r + 1) * (2 * r + 1) * (2 * r + 1)) as usize);
    for kz in -r..=r {
        for ky in -r..=r {
            for kx in -r..=r {
                out.push(Vec3::new(
                    kx as f64 * BOX_EDGE,
                    ky as f64 * BOX_EDGE,
                    kz as f64 * BOX_EDGE,
                ));
            }
        }
    }
    out
}

/// Per-axis image radius covered by `levels` of the recursive 3x scheme.
pub fn image_radius(levels: usize) -> usize {
    (3usize.pow(levels as u32) - 1) / 2
}

fn validate_sources(sources: &ParticleSet) -> Result<(), KernelError> {
    if sources.is_empty() {
        return Err(KernelError::EmptySources);
    }
    for &s in &sources.sigma {
        if !(s > 0.0) {
            return Err(KernelError::NonPositiveSigma(s));
        }
    }
    Ok(())
}

/// Direct velocity and optional velocity gradient at arbitrary points,
/// summed pairwise over the truncated image lattice. The workhorse behind
/// [`direct_velocity`] and [`direct_stretching`]; parallel over targets.
pub fn direct_eval(
    targets: &[Vec3],
    sources: &ParticleSet,
    images: usize,
    want_grad: bool,
) -> Result<(Vec<Vec3>, Option<Vec<Mat3>>), KernelError> {
    validate_sources(sources)?;
    let offsets = image_offsets(images);
    let n_t = targets.len();
    let mut vel = vec![Vec3::ZERO; n_t];
    let mut grad = if want_grad { vec![Mat3::ZERO; n_t] } else { Vec::new() };

    let eval_one = |i: usize, v: &mut Vec3, j: Option<&mut Mat3>| {
        let x = targets[i];
        let mut jt = Mat3::ZERO;
        let mut vt = Vec3::ZERO;
        let want = j.is_some();
        for off in &offsets {
            for (s, (&xs, &gs)) in
                sources.position.iter().zip(sources.strength.iter()).enumerate()
            {
                let d = x - xs - *off;
                pair_contribution(d, gs, sources.sigma[s], &mut vt, want.then_some(&mut jt));
            }
        }
        *v = vt;
        if let Some(j) = j {
            *j = jt;
        }
    };

    if want_grad {
        vel.par_iter_mut().zip(grad.par_iter_mut()).enumerate().for_each(|(i, (v, j))| {
            eval_one(i, v, Some(j));
        });
        Ok((vel, Some(grad)))
    } else {
        vel.par_iter_mut().enumerate().for_each(|(i, v)| eval_one(i, v, None));
        Ok((vel, None))
    }
}

/// Velocity induced at `targets` by all sources, including the (vanishing)
/// self term when a target coincides with a source.
pub fn direct_velocity(
    targets: &[Vec3],
    sources: &ParticleSet,
    images: usize,
) -> Result<Vec<Vec3>, KernelError> {
    Ok(direct_eval(targets, sources, images, false)?.0)
}

/// Strength evolution rates `d gamma_i/dt = (grad u)(x_i) . gamma_i` from
/// the analytic gradient of the regularized kernel.
pub fn direct_stretching(
    targets: &ParticleSet,
    sources: &ParticleSet,
    images: usize,
) -> Result<Vec<Vec3>, KernelError> {
    let (_, grad) = direct_eval(&targets.position, sources, images, true)?;
    let grad = grad.unwrap();
    Ok(grad.iter().zip(targets.strength.iter()).map(|(j, &g)| j.mul_vec(g)).collect())
}

/// Vorticity at arbitrary points as the superposition of Gaussian elements,
/// restricted to sources within `5 sigma` using minimum-image distances.
///
/// Binned by cell lists; the per-target accumulation order is fixed, so
/// results are reproducible run to run and across thread counts.
pub fn direct_vorticity(
    points: &[Vec3],
    sources: &ParticleSet,
) -> Result<Vec<Vec3>, KernelError> {
    validate_sources(sources)?;
    let r_cut = VORTICITY_CUTOFF_SIGMAS * sources.max_sigma();
    let grid = ShortRangeGrid::build(&sources.position, r_cut, true);
    let rc2 = r_cut * r_cut;
    let mut out = vec![Vec3::ZERO; points.len()];
    out.par_iter_mut().zip(points.par_iter()).for_each(|(w, &x)| {
        let mut acc = Vec3::ZERO;
        grid.for_pairs(x, |slot, _, _, _, r2| {
            if r2 <= rc2 {
                let j = grid.idx[slot] as usize;
                let s = sources.sigma[j];
                let t = r2 / (2.0 * s * s);
                acc += sources.strength[j] * (zeta0(s) * (-t).exp());
            }
        });
        *w = acc;
    });
    Ok(out)
}

/// Bin-sorted cell grid over the cube for short-range Gaussian sums.
///
/// Sources are counting-sorted by bin so each bin's particles are
/// contiguous; the 27-stencil visit precomputes the periodic wrap offset
/// per bin, so the pair loop is free of wrapping arithmetic. When fewer
/// than three bins fit per axis the stencil cannot tile the torus and the
/// grid degenerates to an all-pairs sweep with minimum-image distances.
pub(crate) struct ShortRangeGrid {
    nb: usize,
    span: usize,
    periodic: bool,
    bin_start: Vec<u32>,
    /// Original index of each bin-sorted source.
    pub idx: Vec<u32>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub zs: Vec<f64>,
}

impl ShortRangeGrid {
    pub(crate) fn build(positions: &[Vec3], r_cut: f64, periodic: bool) -> Self {
        // Bin edge near r_cut/3 keeps the stencil overscan modest.
        let nb = ((3.0 * BOX_EDGE / r_cut).floor() as usize).clamp(1, 96);
        let nb3 = nb * nb * nb;
        let scale = nb as f64 / BOX_EDGE;
        let bin_of = |x: Vec3| -> usize {
            let w = crate::geom::wrap_unchecked(x);
            let bx = (((w.x + PI) * scale) as usize).min(nb - 1);
            let by = (((w.y + PI) * scale) as usize).min(nb - 1);
            let bz = (((w.z + PI) * scale) as usize).min(nb - 1);
            (bz * nb + by) * nb + bx
        };
        let mut count = vec![0u32; nb3 + 1];
        for &p in positions {
            count[bin_of(p) + 1] += 1;
        }
        for i in 0..nb3 {
            count[i + 1] += count[i];
        }
        let bin_start = count.clone();
        let mut cursor = count;
        let n = positions.len();
        let mut idx = vec![0u32; n];
        let mut xs = vec![0.0; n];
        let mut ys = vec![0.0; n];
        let mut zs = vec![0.0; n];
        for (i, &p) in positions.iter().enumerate() {
            let b = bin_of(p);
            let slot = cursor[b] as usize;
            cursor[b] += 1;
            idx[slot] = i as u32;
            let w = crate::geom::wrap_unchecked(p);
            xs[slot] = w.x;
            ys[slot] = w.y;
            zs[slot] = w.z;
        }
        let span = ((r_cut * nb as f64 / BOX_EDGE).ceil() as usize).max(1);
        ShortRangeGrid { nb, span, periodic, bin_start, idx, xs, ys, zs }
    }

    /// Visit every source within `r_cut` of `x` (and possibly a few
    /// beyond; callers test `r2` themselves). The callback receives the
    /// bin-sorted slot and the displacement `x - source`.
    #[inline]
    pub(crate) fn for_pairs(&self, x: Vec3, mut f: impl FnMut(usize, f64, f64, f64, f64)) {
        let w = crate::geom::wrap_unchecked(x);
        if self.nb < 2 * self.span + 1 {
            for slot in 0..self.xs.len() {
                let mut dx = w.x - self.xs[slot];
                let mut dy = w.y - self.ys[slot];
                let mut dz = w.z - self.zs[slot];
                if self.periodic {
                    let m = minimum_image(Vec3::new(dx, dy, dz));
                    dx = m.x;
                    dy = m.y;
                    dz = m.z;
                }
                f(slot, dx, dy, dz, dx * dx + dy * dy + dz * dz);
            }
            return;
        }
        let nb = self.nb as i64;
        let scale = self.nb as f64 / BOX_EDGE;
        let bx = (((w.x + PI) * scale) as i64).min(nb - 1);
        let by = (((w.y + PI) * scale) as i64).min(nb - 1);
        let bz = (((w.z + PI) * scale) as i64).min(nb - 1);
        let span = self.span as i64;
        for dzb in -span..=span {
            for dyb in -span..=span {
                for dxb in -span..=span {
                    let (cx, offx) = wrap_bin(bx + dxb, nb, self.periodic);
                    let (cy, offy) = wrap_bin(by + dyb, nb, self.periodic);
                    let (cz, offz) = wrap_bin(bz + dzb, nb, self.periodic);
                    let (Some(cx), Some(cy), Some(cz)) = (cx, cy, cz) else {
                        continue;
                    };
                    let b = (cz * self.nb + cy) * self.nb + cx;
                    let lo = self.bin_start[b] as usize;
                    let hi = self.bin_start[b + 1] as usize;
                    let tx = w.x - offx;
                    let ty = w.y - offy;
                    let tz = w.z - offz;
                    for slot in lo..hi {
                        let dx = tx - self.xs[slot];
                        let dy = ty - self.ys[slot];
                        let dz = tz - self.zs[slot];
                        f(slot, dx, dy, dz, dx * dx + dy * dy + dz * dz);
                    }
                }
            }
        }
    }
}

/// Bin index with periodic wrap; the offset is the image shift of the
/// wrapped bin's contents relative to the query.
#[inline]
fn wrap_bin(i: i64, nb: i64, periodic: bool) -> (Option<usize>, f64) {
    if i < 0 {
        if periodic {
            ((Some((i + nb) as usize)), -BOX_EDGE)
        } else {
            (None, 0.0)
        }
    } else if i >= nb {
        if periodic {
            (Some((i - nb) as usize), BOX_EDGE)
        } else {
            (None, 0.0)
        }
    } else {
        (Some(i as usize), 0.0)
    }
}
