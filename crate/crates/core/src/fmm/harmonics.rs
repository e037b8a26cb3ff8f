//! Scaled solid harmonics and the coefficient algebra built on them.
//!
//! The working bases are
//!
//! ```text
//! R[n][m](v) = i^|m| / (n+|m|)! * r^n     * P_n^|m|(cos th) e^(i m ph)
//! S[n][m](v) = i^-|m| * (n-|m|)! / r^(n+1) * P_n^|m|(cos th) e^(i m ph)
//! ```
//!
//! normalized so that the three identities driving the whole pipeline hold
//! without extra coefficients:
//!
//! * `1/|x - a| = sum_{n,m} R[n][-m](a) S[n][m](x)` for `|x| > |a|`,
//! * `R[n][m](a + b) = sum_{j,k} R[j][k](a) R[n-j][m-k](b)`,
//! * `S[j][k](X + v) = sum_{n>=j,m} S[n][m](X) R[n-j][k-m](-v)`.
//!
//! Gradients act as index shifts: `dz R[n][m] = R[n-1][m]`,
//! `(dx -+ i dy) R[n][m] = i R[n-1][m-+1]`, `dz S[n][m] = -S[n+1][m]`,
//! `(dx -+ i dy) S[n][m] = -i S[n+1][m+-1]`, which lets velocity (a curl)
//! and its Jacobian be formed by re-indexing coefficient blocks instead of
//! differentiating basis functions at evaluation points.
//!
//! Coefficients of real sources obey `c[n][-m] = (-1)^m conj(c[n][m])`, so
//! blocks store `m >= 0` only, in triangular layout `n(n+1)/2 + m`.

use num_complex::Complex64;

use crate::geom::Vec3;

pub type Block = Vec<Complex64>;

/// Triangular index for `m >= 0` storage.
#[inline]
pub fn tri(n: usize, m: usize) -> usize {
    n * (n + 1) / 2 + m
}

/// Number of stored coefficients for expansion order `p`.
#[inline]
pub fn tri_len(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Signed-m index within a dense `(p+1)^2` table: entry `(n, m)` lives at
/// `n^2 + n + m`.
#[inline]
pub fn sgn(n: usize, m: i64) -> usize {
    let n = n as i64;
    (n * n + n + m) as usize
}

#[inline]
pub fn sgn_len(p: usize) -> usize {
    (p + 1) * (p + 1)
}

/// Signed-m coefficient lookup honoring the conjugate symmetry of blocks
/// sourced from real strengths. Out-of-range indices read as zero.
#[inline]
pub fn get_signed(block: &[Complex64], p: usize, n: i64, m: i64) -> Complex64 {
    if n < 0 || n > p as i64 || m.abs() > n {
        return Complex64::ZERO;
    }
    let v = block[tri(n as usize, m.unsigned_abs() as usize)];
    if m >= 0 {
        v
    } else if m % 2 == 0 {
        v.conj()
    } else {
        -v.conj()
    }
}

/// Regular solid harmonics of `v` up to `order`, triangular `m >= 0` layout.
///
/// Recurrences (plain Legendre functions, no Condon-Shortley factor):
/// `R[m][m] = R[m-1][m-1] (i x - y) / (2m)`, `R[m+1][m] = z R[m][m]`,
/// `R[n+1][m] = ((2n+1) z R[n][m] - r^2 R[n-1][m]) / ((n+m+1)(n-m+1))`.
pub fn regular_table(v: Vec3, order: usize) -> Block {
    let mut t = vec![Complex64::ZERO; tri_len(order)];
    let r2 = v.norm_sq();
    t[0] = Complex64::new(1.0, 0.0);
    for m in 0..=order {
        if m > 0 {
            let prev = t[tri(m - 1, m - 1)];
            t[tri(m, m)] = prev * Complex64::new(-v.y, v.x) / (2.0 * m as f64);
        }
        if m + 1 <= order {
            t[tri(m + 1, m)] = t[tri(m, m)] * v.z;
        }
        for n in (m + 1)..order {
            let a = t[tri(n, m)] * ((2 * n + 1) as f64) * v.z;
            let b = t[tri(n - 1, m)] * r2;
            t[tri(n + 1, m)] = (a - b) / (((n + m + 1) * (n - m + 1)) as f64);
        }
    }
    t
}

/// Singular (outer) solid harmonics of `v` up to `order`, as a dense
/// signed-m table for convolution loops.
///
/// Recurrences: `S[0][0] = 1/r`,
/// `S[m][m] = (2m-1) S[m-1][m-1] (y - i x) / r^2`,
/// `S[m+1][m] = (2m+1) z S[m][m] / r^2`,
/// `S[n+1][m] = ((2n+1) z S[n][m] - (n+m)(n-m) S[n-1][m]) / r^2`.
pub fn singular_table(v: Vec3, order: usize) -> Block {
    let mut t = vec![Complex64::ZERO; sgn_len(order)];
    singular_table_into(&mut t, v, order);
    t
}

/// In-place variant of [`singular_table`]; `t` must hold `sgn_len(order)`
/// entries and is fully overwritten.
pub fn singular_table_into(t: &mut [Complex64], v: Vec3, order: usize) {
    debug_assert_eq!(t.len(), sgn_len(order));
    t.fill(Complex64::ZERO);
    let r2 = v.norm_sq();
    debug_assert!(r2 > 0.0);
    let inv_r2 = 1.0 / r2;
    t[0] = Complex64::new(r2.sqrt().recip(), 0.0);
    for m in 0..=order {
        if m > 0 {
            let prev = t[sgn(m - 1, m as i64 - 1)];
            t[sgn(m, m as i64)] =
                prev * Complex64::new(v.y, -v.x) * ((2 * m - 1) as f64 * inv_r2);
        }
        if m + 1 <= order {
            t[sgn(m + 1, m as i64)] =
                t[sgn(m, m as i64)] * ((2 * m + 1) as f64) * v.z * inv_r2;
        }
        for n in (m + 1)..order {
            let a = t[sgn(n, m as i64)] * ((2 * n + 1) as f64) * v.z;
            let b = t[sgn(n - 1, m as i64)] * (((n + m) * (n - m)) as f64);
            t[sgn(n + 1, m as i64)] = (a - b) * inv_r2;
        }
        // Negative m by conjugate symmetry of the basis itself.
        for n in m.max(1)..=order {
            let w = t[sgn(n, m as i64)];
            if m > 0 {
                t[sgn(n, -(m as i64))] = if m % 2 == 0 { w.conj() } else { -w.conj() };
            }
        }
    }
}

/// Which side of the pipeline a coefficient block lives on; selects the
/// derivative shift rules.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Side {
    /// Local coefficients, evaluated against the regular basis.
    Local,
    /// Multipole coefficients, evaluated against the singular basis.
    Multipole,
}

/// Cartesian derivative along one axis as a coefficient re-indexing.
///
/// Local side: `(Dx c)[n][m] = (i/2)(c[n+1][m+1] + c[n+1][m-1])`,
/// `(Dy c)[n][m] = (c[n+1][m-1] - c[n+1][m+1])/2`, `(Dz c)[n][m] = c[n+1][m]`.
/// Multipole side: `(Dx c)[n][m] = (-i/2)(c[n-1][m+1] + c[n-1][m-1])`,
/// `(Dy c)[n][m] = (c[n-1][m+1] - c[n-1][m-1])/2`, `(Dz c)[n][m] = -c[n-1][m]`.
///
/// `p_in` bounds reads of `block`; the result carries `p_out` orders.
/// Differentiating a multipole block raises the top degree, so callers pass
/// `p_out = p_in + 1` there to keep the derivative of the truncated field
/// exact.
pub fn derivative(
    block: &[Complex64],
    p_in: usize,
    p_out: usize,
    axis: usize,
    side: Side,
) -> Block {
    let mut out = vec![Complex64::ZERO; tri_len(p_out)];
    let half_i = Complex64::new(0.0, 0.5);
    for n in 0..=p_out {
        for m in 0..=n {
            let (nn, mm) = (n as i64, m as i64);
            let src_n = match side {
                Side::Local => nn + 1,
                Side::Multipole => nn - 1,
            };
            let v = match (axis, side) {
                (0, Side::Local) => {
                    (get_signed(block, p_in, src_n, mm + 1)
                        + get_signed(block, p_in, src_n, mm - 1))
                        * half_i
                }
                (0, Side::Multipole) => {
                    -(get_signed(block, p_in, src_n, mm + 1)
                        + get_signed(block, p_in, src_n, mm - 1))
                        * half_i
                }
                (1, Side::Local) => {
                    (get_signed(block, p_in, src_n, mm - 1)
                        - get_signed(block, p_in, src_n, mm + 1))
                        * 0.5
                }
                (1, Side::Multipole) => {
                    (get_signed(block, p_in, src_n, mm + 1)
                        - get_signed(block, p_in, src_n, mm - 1))
                        * 0.5
                }
                (2, Side::Local) => get_signed(block, p_in, src_n, mm),
                (2, Side::Multipole) => -get_signed(block, p_in, src_n, mm),
                _ => unreachable!(),
            };
            out[tri(n, m)] = v;
        }
    }
    out
}

/// Real part of `sum_{n,m} c[n][m] B[n][m](v)` for a conjugate-symmetric
/// block against a triangular basis table (regular side).
#[inline]
pub fn contract_regular(block: &[Complex64], table: &[Complex64], p: usize) -> f64 {
    let mut acc = 0.0;
    for n in 0..=p {
        let base = tri(n, 0);
        acc += block[base].re * table[base].re;
        let mut inner = 0.0;
        for m in 1..=n {
            let c = block[base + m];
            let b = table[base + m];
            inner += c.re * b.re - c.im * b.im;
        }
        acc += 2.0 * inner;
    }
    acc
}

/// Same contraction against a dense signed singular table.
#[inline]
pub fn contract_singular(block: &[Complex64], table: &[Complex64], p: usize) -> f64 {
    let mut acc = 0.0;
    for n in 0..=p {
        acc += block[tri(n, 0)].re * table[sgn(n, 0)].re;
        let mut inner = 0.0;
        for m in 1..=n {
            let c = block[tri(n, m)];
            let b = table[sgn(n, m as i64)];
            inner += c.re * b.re - c.im * b.im;
        }
        acc += 2.0 * inner;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cnorm(b: &[Complex64]) -> f64 {
        b.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Brute-force signed evaluation of the regular basis at low order via
    /// explicit polynomials, used to pin the normalization.
    #[test]
    fn regular_low_order_closed_forms() {
        let v = Vec3::new(0.3, -0.7, 0.5);
        let t = regular_table(v, 2);
        // R[0][0] = 1, R[1][0] = z, R[1][1] = i(x + i y)/2
        assert_relative_eq!(t[tri(0, 0)].re, 1.0);
        assert_relative_eq!(t[tri(1, 0)].re, v.z);
        assert_relative_eq!(t[tri(1, 1)].re, -v.y / 2.0);
        assert_relative_eq!(t[tri(1, 1)].im, v.x / 2.0);
        // R[2][0] = (2 z^2 - x^2 - y^2)/4 ... from r^2 P_2(cos)/2!
        let expect = (2.0 * v.z * v.z - v.x * v.x - v.y * v.y) / 4.0;
        assert_relative_eq!(t[tri(2, 0)].re, expect, max_relative = 1e-14);
    }

    #[test]
    fn singular_low_order_closed_forms() {
        let v = Vec3::new(0.4, 0.9, -1.2);
        let r = v.norm();
        let t = singular_table(v, 2);
        assert_relative_eq!(t[sgn(0, 0)].re, 1.0 / r, max_relative = 1e-14);
        // S[1][0] = z/r^3, S[1][1] = -i(x + iy)/r^3
        assert_relative_eq!(t[sgn(1, 0)].re, v.z / r.powi(3), max_relative = 1e-13);
        assert_relative_eq!(t[sgn(1, 1)].re, v.y / r.powi(3), max_relative = 1e-13);
        assert_relative_eq!(t[sgn(1, 1)].im, -v.x / r.powi(3), max_relative = 1e-13);
        // Conjugate symmetry for -m.
        let a = t[sgn(2, 1)];
        let b = t[sgn(2, -1)];
        assert_relative_eq!(b.re, -a.re, max_relative = 1e-13);
        assert_relative_eq!(b.im, a.im, max_relative = 1e-13);
    }

    #[test]
    fn addition_theorem_reconstructs_inverse_distance() {
        // 1/|x - a| = sum R[n][-m](a) S[n][m](x), converging in order.
        let a = Vec3::new(0.21, -0.13, 0.17);
        let x = Vec3::new(1.4, 0.9, -1.1);
        let exact = 1.0 / (x - a).norm();
        let mut last_err = f64::MAX;
        for order in [4usize, 8, 12, 16] {
            let ra = regular_table(a, order);
            let sx = singular_table(x, order);
            let mut sum = 0.0;
            for n in 0..=order {
                for m in -(n as i64)..=(n as i64) {
                    let r_nm = get_signed(&ra, order, n as i64, -m);
                    let s_nm = sx[sgn(n, m)];
                    sum += (r_nm * s_nm).re;
                }
            }
            let err = (sum - exact).abs() / exact;
            assert!(err < last_err * 0.9 || err < 1e-14, "order {order}: {err}");
            last_err = err;
        }
        assert!(last_err < 1e-10, "final error {last_err}");
    }

    #[test]
    fn regular_addition_is_exact_convolution() {
        // Polynomial identity, exact to round-off at any order.
        let a = Vec3::new(0.8, -0.4, 1.1);
        let b = Vec3::new(-0.5, 0.9, 0.3);
        let order = 8;
        let rab = regular_table(a + b, order);
        let ra = regular_table(a, order);
        let rb = regular_table(b, order);
        for n in 0..=order {
            for m in 0..=n as i64 {
                let mut acc = Complex64::ZERO;
                for j in 0..=n {
                    for k in -(j as i64)..=(j as i64) {
                        acc += get_signed(&ra, order, j as i64, k)
                            * get_signed(&rb, order, (n - j) as i64, m - k);
                    }
                }
                let direct = rab[tri(n, m as usize)];
                assert!(
                    (acc - direct).norm() <= 1e-13 * cnorm(&rab).max(1.0),
                    "n={n} m={m}: {acc} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn derivative_shifts_match_finite_differences() {
        // Check d/dx_axis of sum c[n][m] R[n][m] via the shift rules on a
        // random conjugate-symmetric block.
        let p = 6;
        let mut block = vec![Complex64::ZERO; tri_len(p)];
        let mut s = 12345u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for n in 0..=p {
            block[tri(n, 0)] = Complex64::new(rnd(), 0.0);
            for m in 1..=n {
                block[tri(n, m)] = Complex64::new(rnd(), rnd());
            }
        }
        let v = Vec3::new(0.31, -0.2, 0.43);
        let eps = 1e-6;
        for axis in 0..3 {
            let d = derivative(&block, p, p, axis, Side::Local);
            let got = contract_regular(&d, &regular_table(v, p), p);
            let mut dv = Vec3::ZERO;
            match axis {
                0 => dv.x = eps,
                1 => dv.y = eps,
                _ => dv.z = eps,
            }
            let fp = contract_regular(&block, &regular_table(v + dv, p), p);
            let fm = contract_regular(&block, &regular_table(v - dv, p), p);
            let fd = (fp - fm) / (2.0 * eps);
            assert_relative_eq!(got, fd, max_relative = 1e-7, epsilon = 1e-9);
        }
        // Multipole side against the singular basis; the shift raises the
        // top degree so the derivative of the truncated field is exact.
        for axis in 0..3 {
            let d = derivative(&block, p, p + 1, axis, Side::Multipole);
            let x = Vec3::new(1.2, 0.8, -0.9);
            let got = contract_singular(&d, &singular_table(x, p + 1), p + 1);
            let mut dv = Vec3::ZERO;
            match axis {
                0 => dv.x = eps,
                1 => dv.y = eps,
                _ => dv.z = eps,
            }
            let fp = contract_singular(&block, &singular_table(x + dv, p), p);
            let fm = contract_singular(&block, &singular_table(x - dv, p), p);
            let fd = (fp - fm) / (2.0 * eps);
            assert_relative_eq!(got, fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }
}
