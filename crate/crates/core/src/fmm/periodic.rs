//! Aggregated far field of the periodic image lattice.
//!
//! The 26 nearest image boxes are handled by the traversal itself (the
//! root pair is seeded once per box offset in `[-1,1]^3`). Everything
//! beyond enters here: per recursion level the supercell multipole grows
//! by 3x (a 27-box aggregation) and is translated into a single local
//! expansion at the domain center from the 9^3 - 3^3 = 702 sub-positions
//! of the 26 surrounding supercells. `levels` shells cover the
//! `3^levels`-wide image block, `3^(3 levels) - 1` boxes in total
//! (including the 26 the traversal resolves), at a cost independent of
//! the particle count.
//!
//! The translation is a convolution with the singular-harmonic table of
//! the displacement, so the 702 translations of one shell collapse into a
//! single convolution with the summed table.

use num_complex::Complex64;

use super::expansion::{m2l_with_table, m2m, to_signed_soa, Expansion, ExpansionKind};
use super::harmonics::{sgn_len, singular_table};
use crate::error::FmmError;
use crate::geom::{Vec3, BOX_EDGE};

/// Build the local expansion at the domain center collecting every image
/// box beyond the traversal's own `[-1,1]^3` neighborhood. `levels = 1`
/// yields a zero expansion (the traversal already covers everything).
pub fn periodic_far_field(root: &Expansion, levels: usize) -> Result<Expansion, FmmError> {
    if levels < 1 {
        return Err(FmmError::InvalidImageLevels(levels));
    }
    debug_assert_eq!(root.kind, ExpansionKind::Multipole);
    let p = root.order;
    let mut local = Expansion::zero(ExpansionKind::Local, p, Vec3::ZERO);
    if levels == 1 || root.is_zero() {
        return Ok(local);
    }

    let mut agg = root.clone();
    let mut cycle = BOX_EDGE;
    for shell in 2..=levels {
        // Summed translation table over the shell's 702 positions.
        let mut table = vec![Complex64::ZERO; sgn_len(2 * p)];
        for iz in -1i64..=1 {
            for iy in -1i64..=1 {
                for ix in -1i64..=1 {
                    if ix == 0 && iy == 0 && iz == 0 {
                        continue;
                    }
                    for cz in -1i64..=1 {
                        for cy in -1i64..=1 {
                            for cx in -1i64..=1 {
                                let pos = Vec3::new(
                                    (3 * ix + cx) as f64,
                                    (3 * iy + cy) as f64,
                                    (3 * iz + cz) as f64,
                                ) * cycle;
                                let st = singular_table(-pos, 2 * p);
                                for (acc, v) in table.iter_mut().zip(st.iter()) {
                                    *acc += *v;
                                }
                            }
                        }
                    }
                }
            }
        }
        let m_signed = to_signed_soa(&agg.coeffs, p);
        let sr: Vec<f64> = table.iter().map(|v| v.re).collect();
        let si: Vec<f64> = table.iter().map(|v| v.im).collect();
        m2l_with_table(&mut local.coeffs, &m_signed, &sr, &si, p, true);

        if shell < levels {
            // 27-box aggregation into the next supercell multipole.
            let mut next = Expansion::zero(ExpansionKind::Multipole, p, Vec3::ZERO);
            for iz in -1i64..=1 {
                for iy in -1i64..=1 {
                    for ix in -1i64..=1 {
                        let mut copy = agg.clone();
                        copy.center = Vec3::new(ix as f64, iy as f64, iz as f64) * cycle;
                        next.add_assign(&m2m(&copy, Vec3::ZERO));
                    }
                }
            }
            agg = next;
            cycle *= 3.0;
        }
    }
    Ok(local)
}
