//! Expansions over the solid-harmonic bases and the translation operators
//! connecting them.
//!
//! An [`Expansion`] carries one coefficient block per strength component;
//! the velocity field is the curl combination of the three scalar
//! potentials, formed at evaluation time by re-indexing coefficients.

use num_complex::Complex64;

use super::harmonics::{
    contract_regular, contract_singular, derivative, get_signed, regular_table, sgn, sgn_len,
    singular_table, tri, tri_len, Block, Side,
};
use crate::error::FmmError;
use crate::geom::{Mat3, Vec3};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ExpansionKind {
    Multipole,
    Local,
}

/// Translation operator selector for [`translate`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Translation {
    M2M,
    M2L,
    L2L,
}

/// Truncated solid-harmonic expansion of the three strength potentials.
///
/// `coeffs[c]` stores `m >= 0` in triangular layout; the full `(p+1)^2`
/// logical coefficients per component follow from
/// `c[n][-m] = (-1)^m conj(c[n][m])`.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub kind: ExpansionKind,
    pub order: usize,
    pub center: Vec3,
    pub coeffs: [Block; 3],
}

impl Expansion {
    pub fn zero(kind: ExpansionKind, order: usize, center: Vec3) -> Self {
        let b = vec![Complex64::ZERO; tri_len(order)];
        Expansion { kind, order, center, coeffs: [b.clone(), b.clone(), b] }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|b| b.iter().all(|c| c.norm_sqr() == 0.0))
    }

    pub fn add_assign(&mut self, other: &Expansion) {
        debug_assert_eq!(self.order, other.order);
        for c in 0..3 {
            for (a, b) in self.coeffs[c].iter_mut().zip(other.coeffs[c].iter()) {
                *a += *b;
            }
        }
    }

    /// Largest conjugate-symmetry violation, zero for blocks sourced from
    /// real strengths (m = 0 entries must be real).
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.coeffs {
            for n in 0..=self.order {
                worst = worst.max(b[tri(n, 0)].im.abs());
            }
        }
        worst
    }
}

/// Multipole expansion of a set of weighted sources about `center`.
///
/// `M[c][n][m] = sum_j q_j[c] R[n][-m](s_j - center)`, with the Green's
/// function normalization folded into the weights by the caller.
pub fn p2m(positions: &[Vec3], strengths: &[Vec3], center: Vec3, order: usize) -> Expansion {
    let mut e = Expansion::zero(ExpansionKind::Multipole, order, center);
    for (s, g) in positions.iter().zip(strengths.iter()) {
        let rt = regular_table(*s - center, order);
        let q = [g.x / FOUR_PI, g.y / FOUR_PI, g.z / FOUR_PI];
        for n in 0..=order {
            for m in 0..=n {
                // R[n][-m] = (-1)^m conj(R[n][m])
                let mut v = rt[tri(n, m)].conj();
                if m % 2 == 1 {
                    v = -v;
                }
                for c in 0..3 {
                    e.coeffs[c][tri(n, m)] += v * q[c];
                }
            }
        }
    }
    e
}

/// Re-center a multipole expansion:
/// `M'[j][k] = sum_{n<=j,m} M[n][m] R[j-n][m-k](c_old - c_new)`.
pub fn m2m(src: &Expansion, new_center: Vec3) -> Expansion {
    debug_assert_eq!(src.kind, ExpansionKind::Multipole);
    let p = src.order;
    let mut out = Expansion::zero(ExpansionKind::Multipole, p, new_center);
    let rt = regular_table(src.center - new_center, p);
    for c in 0..3 {
        for j in 0..=p {
            for k in 0..=j as i64 {
                let mut acc = Complex64::ZERO;
                for n in 0..=j {
                    for m in -(n as i64)..=(n as i64) {
                        let mm = get_signed(&src.coeffs[c], p, n as i64, m);
                        if mm.norm_sqr() == 0.0 {
                            continue;
                        }
                        acc += mm * get_signed(&rt, p, (j - n) as i64, m - k);
                    }
                }
                out.coeffs[c][tri(j, k as usize)] = acc;
            }
        }
    }
    out
}

/// Re-center a local expansion:
/// `L'[j][k] = sum_{n>=j,m} L[n][m] R[n-j][m-k](c_new - c_old)`.
pub fn l2l(src: &Expansion, new_center: Vec3) -> Expansion {
    debug_assert_eq!(src.kind, ExpansionKind::Local);
    let p = src.order;
    let mut out = Expansion::zero(ExpansionKind::Local, p, new_center);
    let rt = regular_table(new_center - src.center, p);
    for c in 0..3 {
        for j in 0..=p {
            for k in 0..=j as i64 {
                let mut acc = Complex64::ZERO;
                for n in j..=p {
                    for m in -(n as i64)..=(n as i64) {
                        let ll = get_signed(&src.coeffs[c], p, n as i64, m);
                        if ll.norm_sqr() == 0.0 {
                            continue;
                        }
                        acc += ll * get_signed(&rt, p, (n - j) as i64, m - k);
                    }
                }
                out.coeffs[c][tri(j, k as usize)] = acc;
            }
        }
    }
    out
}

/// Dense signed-m copy of a triangular block, for convolution inner loops.
pub fn to_signed(block: &[Complex64], p: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; sgn_len(p)];
    for n in 0..=p {
        for m in -(n as i64)..=(n as i64) {
            out[sgn(n, m)] = get_signed(block, p, n as i64, m);
        }
    }
    out
}

/// The three components of a multipole in dense signed-m layout, split
/// into re/im planes so convolution loops vectorize.
pub struct SignedBlocks {
    pub len: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

pub fn to_signed_soa(coeffs: &[Block; 3], p: usize) -> SignedBlocks {
    let len = sgn_len(p);
    let mut re = vec![0.0; 3 * len];
    let mut im = vec![0.0; 3 * len];
    for c in 0..3 {
        let signed = to_signed(&coeffs[c], p);
        for (i, v) in signed.iter().enumerate() {
            re[c * len + i] = v.re;
            im[c * len + i] = v.im;
        }
    }
    SignedBlocks { len, re, im }
}

/// Multipole-to-local kernel: accumulate
/// `L[l][q] += (-1)^l sum_{n,m} M[n][m] S[n+l][m-q](d)`.
///
/// With `square` unset the sum keeps combinations with `n + l <= n_eff`
/// (total-degree truncation): the dropped terms decay like the pair's
/// separation ratio, which the traversal keeps below the acceptance
/// threshold. Pairs admitted at harsher ratios (the periodic supercells)
/// pass `square` to keep the full `n, l <= n_eff` rectangle. `d` points
/// from the multipole center to the local center.
pub fn m2l_accumulate(
    local: &mut [Block; 3],
    m: &SignedBlocks,
    d: Vec3,
    p: usize,
    n_eff: usize,
    square: bool,
) {
    let n_eff = n_eff.min(p);
    let st = singular_table(d, 2 * n_eff);
    let sr: Vec<f64> = st.iter().map(|v| v.re).collect();
    let si: Vec<f64> = st.iter().map(|v| v.im).collect();
    m2l_with_table(local, m, &sr, &si, n_eff, square);
}

/// Convolution core of the multipole-to-local translation. By linearity
/// the table may be the sum of singular tables over many displacements,
/// which translates a multipole past a whole set of image boxes at once.
pub fn m2l_with_table(
    local: &mut [Block; 3],
    m: &SignedBlocks,
    sr: &[f64],
    si: &[f64],
    n_eff: usize,
    square: bool,
) {
    let len_m = m.len;
    for l in 0..=n_eff {
        let neg = l % 2 == 1;
        let n_max = if square { n_eff } else { n_eff - l };
        for q in 0..=l as i64 {
            let mut acc = [Complex64::ZERO; 3];
            for n in 0..=n_max {
                let nn = n as i64;
                let base_s = ((n + l) * (n + l) + (n + l)) as i64;
                let base_m = n * n + n;
                let s_lo = (base_s - nn - q) as usize;
                let m_lo = base_m - n;
                let span = 2 * n + 1;
                let srn = &sr[s_lo..s_lo + span];
                let sin_ = &si[s_lo..s_lo + span];
                for c in 0..3 {
                    let mrn = &m.re[c * len_m + m_lo..c * len_m + m_lo + span];
                    let min_ = &m.im[c * len_m + m_lo..c * len_m + m_lo + span];
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for k in 0..span {
                        re += mrn[k] * srn[k] - min_[k] * sin_[k];
                        im += mrn[k] * sin_[k] + min_[k] * srn[k];
                    }
                    acc[c] += Complex64::new(re, im);
                }
            }
            let idx = tri(l, q as usize);
            for c in 0..3 {
                local[c][idx] += if neg { -acc[c] } else { acc[c] };
            }
        }
    }
}

/// Public translation operator. `M2L` verifies the separation contract:
/// the destination sphere may not intersect the source sphere implied by
/// the centers' distance.
pub fn translate(
    kind: Translation,
    src: &Expansion,
    dst_center: Vec3,
    radius_src: f64,
    radius_dst: f64,
) -> Result<Expansion, FmmError> {
    match kind {
        Translation::M2M => Ok(m2m(src, dst_center)),
        Translation::L2L => Ok(l2l(src, dst_center)),
        Translation::M2L => {
            debug_assert_eq!(src.kind, ExpansionKind::Multipole);
            let d = dst_center - src.center;
            if d.norm() <= radius_src + radius_dst {
                return Err(FmmError::NotSeparated);
            }
            let p = src.order;
            let mut out = Expansion::zero(ExpansionKind::Local, p, dst_center);
            let m_signed = to_signed_soa(&src.coeffs, p);
            m2l_accumulate(&mut out.coeffs, &m_signed, d, p, p, true);
            Ok(out)
        }
    }
}

/// Velocity blocks (curl combination) and, on demand, the nine Jacobian
/// blocks derived from a coefficient triple.
pub struct FieldBlocks {
    pub order: usize,
    pub side: Side,
    pub u: [Block; 3],
    pub jac: Option<[[Block; 3]; 3]>,
}

/// `u = (dz P_y - dy P_z, dx P_z - dz P_x, dy P_x - dx P_y)` applied as
/// coefficient shifts; the Jacobian rows are one more derivative.
pub fn field_blocks(coeffs: &[Block; 3], p: usize, side: Side, want_grad: bool) -> FieldBlocks {
    // Multipole-side derivatives raise the top degree.
    let (p1, p2) = match side {
        Side::Local => (p, p),
        Side::Multipole => (p + 1, p + 2),
    };
    let d = |c: usize, axis: usize| derivative(&coeffs[c], p, p1, axis, side);
    let sub = |a: Block, b: &Block| -> Block {
        a.iter().zip(b.iter()).map(|(x, y)| *x - *y).collect()
    };
    let u = [
        sub(d(1, 2), &d(2, 1)), // dz P_y - dy P_z
        sub(d(2, 0), &d(0, 2)), // dx P_z - dz P_x
        sub(d(0, 1), &d(1, 0)), // dy P_x - dx P_y
    ];
    let jac = want_grad.then(|| {
        let row = |r: usize| -> [Block; 3] {
            [
                derivative(&u[r], p1, p2, 0, side),
                derivative(&u[r], p1, p2, 1, side),
                derivative(&u[r], p1, p2, 2, side),
            ]
        };
        [row(0), row(1), row(2)]
    });
    FieldBlocks { order: p2, side, u, jac }
}

impl FieldBlocks {
    /// Evaluate velocity and optional Jacobian at a displacement `v` from
    /// the expansion center.
    pub fn eval(&self, v: Vec3, grad: Option<&mut Mat3>) -> Vec3 {
        match self.side {
            Side::Local => {
                let p1 = self.u[0].len();
                let p1 = order_of(p1);
                let rt = regular_table(v, self.order.max(p1));
                let u = Vec3::new(
                    contract_regular(&self.u[0], &rt, p1),
                    contract_regular(&self.u[1], &rt, p1),
                    contract_regular(&self.u[2], &rt, p1),
                );
                if let (Some(g), Some(j)) = (grad, self.jac.as_ref()) {
                    for (r, row) in j.iter().enumerate() {
                        for (c, blk) in row.iter().enumerate() {
                            g.0[r][c] += contract_regular(blk, &rt, order_of(blk.len()));
                        }
                    }
                }
                u
            }
            Side::Multipole => {
                let st = singular_table(v, self.order);
                let p1 = order_of(self.u[0].len());
                let u = Vec3::new(
                    contract_singular(&self.u[0], &st, p1),
                    contract_singular(&self.u[1], &st, p1),
                    contract_singular(&self.u[2], &st, p1),
                );
                if let (Some(g), Some(j)) = (grad, self.jac.as_ref()) {
                    for (r, row) in j.iter().enumerate() {
                        for (c, blk) in row.iter().enumerate() {
                            g.0[r][c] += contract_singular(blk, &st, order_of(blk.len()));
                        }
                    }
                }
                u
            }
        }
    }
}

/// Inverse of `tri_len`.
fn order_of(len: usize) -> usize {
    let mut p = 0;
    while tri_len(p) < len {
        p += 1;
    }
    p
}

/// Far-field velocity (and optional Jacobian) of a local expansion at
/// targets inside its cell. Increments `vel`/`grad` in place.
pub fn l2p(
    local: &Expansion,
    targets: &[Vec3],
    radius: f64,
    vel: &mut [Vec3],
    mut grad: Option<&mut [Mat3]>,
) -> Result<(), FmmError> {
    debug_assert_eq!(local.kind, ExpansionKind::Local);
    let blocks = field_blocks(&local.coeffs, local.order, Side::Local, grad.is_some());
    for (i, &x) in targets.iter().enumerate() {
        let v = x - local.center;
        if v.norm() > radius * 1.0001 {
            return Err(FmmError::OutsideConvergence);
        }
        let g = grad.as_deref_mut().map(|g| &mut g[i]);
        vel[i] += blocks.eval(v, g);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::direct_eval;
    use crate::particles::ParticleSet;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cluster(center: Vec3, radius: f64, n: usize, seed: u64) -> ParticleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos = Vec::new();
        let mut strength = Vec::new();
        for _ in 0..n {
            pos.push(
                center
                    + Vec3::new(
                        rng.random_range(-radius..radius),
                        rng.random_range(-radius..radius),
                        rng.random_range(-radius..radius),
                    ),
            );
            strength.push(Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
        }
        ParticleSet::with_uniform_sigma(pos, strength, 1e-3)
    }

    #[test]
    fn p2m_single_center_particle_is_pure_monopole() {
        let c = Vec3::new(0.2, -0.1, 0.4);
        let e = p2m(&[c], &[Vec3::new(0.0, 0.0, 1.0)], c, 6);
        // rho = 0 kills every n >= 1 term.
        for n in 1..=6 {
            for m in 0..=n {
                assert_eq!(e.coeffs[2][tri(n, m)], Complex64::ZERO);
            }
        }
        assert!((e.coeffs[2][0].re - 1.0 / FOUR_PI).abs() < 1e-15);
        assert!(e.symmetry_defect() < 1e-15);
    }

    #[test]
    fn p2m_negating_strengths_negates_coefficients() {
        let src = cluster(Vec3::ZERO, 0.3, 12, 3);
        let neg: Vec<Vec3> = src.strength.iter().map(|g| -*g).collect();
        let a = p2m(&src.position, &src.strength, Vec3::ZERO, 5);
        let b = p2m(&src.position, &neg, Vec3::ZERO, 5);
        for c in 0..3 {
            for (x, y) in a.coeffs[c].iter().zip(b.coeffs[c].iter()) {
                assert!((*x + *y).norm() < 1e-14);
            }
        }
    }

    /// Multipole evaluation against the far-field point-kernel sum.
    #[test]
    fn multipole_far_field_matches_direct() {
        let src = cluster(Vec3::ZERO, 0.25, 30, 5);
        let mut last = f64::MAX;
        for p in [4usize, 8, 12] {
            let e = p2m(&src.position, &src.strength, Vec3::ZERO, p);
            let blocks = field_blocks(&e.coeffs, p, Side::Multipole, true);
            let targets = [Vec3::new(2.0, 0.6, -0.8), Vec3::new(-1.6, 1.8, 1.4)];
            let (u_ref, j_ref) = direct_eval(&targets, &src, 0, true).unwrap();
            let j_ref = j_ref.unwrap();
            let mut err: f64 = 0.0;
            for (i, &t) in targets.iter().enumerate() {
                let mut jm = Mat3::ZERO;
                let um = blocks.eval(t, Some(&mut jm));
                err = err.max((um - u_ref[i]).norm() / u_ref[i].norm());
                let mut jd = 0.0;
                let mut jn = 0.0;
                for r in 0..3 {
                    for c in 0..3 {
                        jd += (jm.0[r][c] - j_ref[i].0[r][c]).powi(2);
                        jn += j_ref[i].0[r][c].powi(2);
                    }
                }
                err = err.max((jd / jn).sqrt());
            }
            assert!(err < last, "p={p}: err {err} !< {last}");
            last = err;
        }
        assert!(last < 5e-8, "p=12 error {last}");
    }

    #[test]
    fn m2m_zero_offset_is_identity() {
        let src = cluster(Vec3::ZERO, 0.3, 10, 7);
        let e = p2m(&src.position, &src.strength, Vec3::ZERO, 6);
        let moved = m2m(&e, Vec3::ZERO);
        for c in 0..3 {
            for (a, b) in e.coeffs[c].iter().zip(moved.coeffs[c].iter()) {
                assert!((*a - *b).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn m2m_matches_direct_p2m_about_new_center() {
        // Exact identity: re-centering a full multipole of order p equals
        // building it about the new center directly... up to truncation,
        // which the convolution structure makes exact for polynomials of
        // the source coordinates, so compare evaluated fields instead.
        let src = cluster(Vec3::new(0.1, 0.1, 0.1), 0.2, 15, 9);
        let p = 10;
        let e1 = p2m(&src.position, &src.strength, Vec3::new(0.1, 0.1, 0.1), p);
        let e2 = m2m(&e1, Vec3::ZERO);
        let direct = p2m(&src.position, &src.strength, Vec3::ZERO, p);
        let b1 = field_blocks(&e2.coeffs, p, Side::Multipole, false);
        let b2 = field_blocks(&direct.coeffs, p, Side::Multipole, false);
        for t in [Vec3::new(1.5, 0.2, 0.1), Vec3::new(-0.9, 1.1, -0.6)] {
            let u1 = b1.eval(t, None);
            let u2 = b2.eval(t, None);
            assert!((u1 - u2).norm() <= 1e-6 * u2.norm().max(1e-12), "{u1:?} vs {u2:?}");
        }
    }

    #[test]
    fn l2l_preserves_constant_expansion() {
        let mut e = Expansion::zero(ExpansionKind::Local, 5, Vec3::ZERO);
        for c in 0..3 {
            e.coeffs[c][0] = Complex64::new(1.5 + c as f64, 0.0);
        }
        let moved = l2l(&e, Vec3::new(0.4, -0.2, 0.3));
        for c in 0..3 {
            assert!((moved.coeffs[c][0] - e.coeffs[c][0]).norm() < 1e-15);
            for i in 1..moved.coeffs[c].len() {
                assert!(moved.coeffs[c][i].norm() < 1e-15);
            }
        }
    }

    #[test]
    fn m2l_requires_separation() {
        let src = cluster(Vec3::ZERO, 0.3, 5, 1);
        let e = p2m(&src.position, &src.strength, Vec3::ZERO, 4);
        let err = translate(Translation::M2L, &e, Vec3::new(0.5, 0.0, 0.0), 0.52, 0.52);
        assert_eq!(err.unwrap_err(), FmmError::NotSeparated);
    }

    /// The full pipeline on two separated clusters: P2M -> M2M -> M2L ->
    /// L2L -> L2P against the direct far-field sum, with errors decaying
    /// exponentially in the order.
    #[test]
    fn pipeline_reproduces_direct_far_field() {
        let src_center = Vec3::new(-1.2, -0.9, -1.0);
        let tgt_center = Vec3::new(1.1, 1.2, 0.9);
        let src = cluster(src_center + Vec3::new(0.05, -0.03, 0.04), 0.35, 25, 21);
        let tgt = cluster(tgt_center - Vec3::new(0.03, 0.02, 0.05), 0.35, 8, 22);
        let (u_ref, j_ref) = direct_eval(&tgt.position, &src, 0, true).unwrap();
        let j_ref = j_ref.unwrap();

        let mut last = f64::MAX;
        for p in [4usize, 6, 8, 10, 12] {
            let m_leaf =
                p2m(&src.position, &src.strength, src_center + Vec3::new(0.05, -0.03, 0.04), p);
            let m_root = m2m(&m_leaf, src_center);
            let l_root =
                translate(Translation::M2L, &m_root, tgt_center, 0.7, 0.7).unwrap();
            let l_leaf = l2l(&l_root, tgt_center - Vec3::new(0.03, 0.02, 0.05));
            let mut vel = vec![Vec3::ZERO; tgt.len()];
            let mut grad = vec![Mat3::ZERO; tgt.len()];
            l2p(&l_leaf, &tgt.position, 0.9, &mut vel, Some(&mut grad)).unwrap();

            let mut num = 0.0;
            let mut den = 0.0;
            let mut jnum = 0.0;
            let mut jden = 0.0;
            for i in 0..tgt.len() {
                num += (vel[i] - u_ref[i]).norm_sq();
                den += u_ref[i].norm_sq();
                for r in 0..3 {
                    for c in 0..3 {
                        jnum += (grad[i].0[r][c] - j_ref[i].0[r][c]).powi(2);
                        jden += j_ref[i].0[r][c].powi(2);
                    }
                }
            }
            let err = (num / den).sqrt().max((jnum / jden).sqrt());
            assert!(err < last, "p={p}: {err} !< {last}");
            last = err;
        }
        assert!(last < 5e-5, "p=12 pipeline error {last}");
    }
}
