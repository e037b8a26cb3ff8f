//! Dual tree traversal building interaction lists, and the list-driven
//! evaluation phases.
//!
//! The traversal walks pairs of cells on an explicit stack. A pair whose
//! centers satisfy `theta * distance > r_a + r_b` interacts through
//! expansions; the hybrid mode picks cell-cell, cell-particle or
//! particle-particle per pair by a work estimate. Everything else recurses
//! by splitting the wider cell until two leaves meet in a direct pass.
//!
//! Records are attached to target cells (cell-cell) or target leaves
//! (cell-particle, particle-particle) in deterministic traversal order, so
//! each target's accumulation order is fixed regardless of thread count.

use super::tree::Octree;
use crate::geom::Vec3;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TraversalMode {
    /// Cost-model choice among cell-cell, cell-particle and direct.
    Hybrid,
    /// Far pairs always interact cell-cell.
    FmmOnly,
    /// Far pairs always interact cell-particle.
    TreecodeOnly,
    /// Everything direct; reproduces pairwise summation.
    P2pOnly,
}

/// Relative work constants of the interaction kinds, in "pair units".
/// Tuned values come from [`super::autotune`]; the defaults are from the
/// operation counts of the implementations.
#[derive(Copy, Clone, Debug)]
pub struct CostModel {
    /// Cost of one particle-particle pair.
    pub p2p: f64,
    /// Cost per target of a cell-particle evaluation, per (n_eff+2)^2.
    pub m2p: f64,
    /// Cost of a cell-cell translation, per (n_eff+1)^4 / 8.
    pub m2l: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { p2p: 1.0, m2p: 0.6, m2l: 0.25 }
    }
}

/// Cell-cell record: source multipole translated into the target's local.
#[derive(Copy, Clone, Debug)]
pub struct M2lRec {
    pub src: u32,
    pub off: u32,
    pub n_eff: u8,
}

/// Cell-particle record attached to a target leaf.
#[derive(Copy, Clone, Debug)]
pub struct M2pRec {
    pub src: u32,
    pub off: u32,
    pub n_eff: u8,
}

/// Particle-particle record attached to a target leaf.
#[derive(Copy, Clone, Debug)]
pub struct P2pRec {
    pub src: u32,
    pub off: u32,
}

#[derive(Clone, Debug, Default)]
pub struct InteractionLists {
    /// Image offsets indexed by the records' `off`.
    pub offsets: Vec<Vec3>,
    /// Per target cell.
    pub m2l: Vec<Vec<M2lRec>>,
    /// Per target leaf (indexed by cell id).
    pub m2p: Vec<Vec<M2pRec>>,
    /// Per target leaf (indexed by cell id).
    pub p2p: Vec<Vec<P2pRec>>,
    pub n_m2l: u64,
    pub n_m2p: u64,
    /// Particle pairs covered by direct records.
    pub n_p2p_pairs: u64,
}

/// Truncation order for an admitted pair: the smallest order whose
/// geometric decay matches what full order gives at the acceptance
/// threshold, `rho^(n+1) <= theta^(p+1)`.
fn effective_order(p: usize, theta: f64, rho: f64) -> usize {
    if rho <= 0.0 {
        return 2.min(p);
    }
    let need = (p as f64 + 1.0) * theta.ln() / rho.ln();
    ((need.ceil() as usize).max(3) - 1).clamp(2, p)
}

pub struct TraversalConfig {
    pub p: usize,
    pub theta: f64,
    pub mode: TraversalMode,
    pub cost: CostModel,
}

/// Build interaction lists for all `root_offsets` images of the source
/// tree against the target tree.
pub fn traverse(
    tgt: &Octree,
    src: &Octree,
    root_offsets: &[Vec3],
    cfg: &TraversalConfig,
) -> InteractionLists {
    let mut lists = InteractionLists {
        offsets: root_offsets.to_vec(),
        m2l: vec![Vec::new(); tgt.cells.len()],
        m2p: vec![Vec::new(); tgt.cells.len()],
        p2p: vec![Vec::new(); tgt.cells.len()],
        ..Default::default()
    };
    let mut stack: Vec<(u32, u32, u32)> = Vec::with_capacity(1024);
    for off in (0..root_offsets.len() as u32).rev() {
        stack.push((0, 0, off));
    }
    while let Some((ti, si, off)) = stack.pop() {
        let t = &tgt.cells[ti as usize];
        let s = &src.cells[si as usize];
        let d = (t.center - (s.center + root_offsets[off as usize])).norm();
        let rsum = t.radius() + s.radius();
        if d * cfg.theta > rsum && d > 0.0 {
            let rho = rsum / d;
            let n_eff = effective_order(cfg.p, cfg.theta, rho);
            let nt = t.count() as f64;
            let ns = s.count() as f64;
            match cfg.mode {
                TraversalMode::P2pOnly => {
                    descend(tgt, src, &mut stack, &mut lists, ti, si, off);
                    continue;
                }
                TraversalMode::FmmOnly => {
                    lists.m2l[ti as usize].push(M2lRec { src: si, off, n_eff: n_eff as u8 });
                    lists.n_m2l += 1;
                }
                TraversalMode::TreecodeOnly => {
                    push_m2p(tgt, &mut lists, ti, si, off, n_eff);
                }
                TraversalMode::Hybrid => {
                    let ne1 = (n_eff + 1) as f64;
                    let ne2 = (n_eff + 2) as f64;
                    let c_m2l = cfg.cost.m2l * ne1 * ne1 * ne1 * ne1 / 8.0;
                    let c_m2p = cfg.cost.m2p * ne2 * ne2 * nt;
                    let c_p2p = cfg.cost.p2p * nt * ns;
                    if c_p2p <= c_m2l && c_p2p <= c_m2p {
                        descend(tgt, src, &mut stack, &mut lists, ti, si, off);
                    } else if c_m2l <= c_m2p {
                        lists.m2l[ti as usize].push(M2lRec {
                            src: si,
                            off,
                            n_eff: n_eff as u8,
                        });
                        lists.n_m2l += 1;
                    } else {
                        push_m2p(tgt, &mut lists, ti, si, off, n_eff);
                    }
                }
            }
        } else {
            descend(tgt, src, &mut stack, &mut lists, ti, si, off);
        }
    }
    lists
}

/// Recurse on a non-admissible (or forced-direct) pair: split the wider
/// splittable cell; two leaves interact directly.
fn descend(
    tgt: &Octree,
    src: &Octree,
    stack: &mut Vec<(u32, u32, u32)>,
    lists: &mut InteractionLists,
    ti: u32,
    si: u32,
    off: u32,
) {
    let t = &tgt.cells[ti as usize];
    let s = &src.cells[si as usize];
    if t.is_leaf && s.is_leaf {
        lists.p2p[ti as usize].push(P2pRec { src: si, off });
        lists.n_p2p_pairs += (t.count() * s.count()) as u64;
        return;
    }
    let split_target = if t.is_leaf {
        false
    } else if s.is_leaf {
        true
    } else {
        t.half_width >= s.half_width
    };
    if split_target {
        for &c in tgt.cells[ti as usize].children.iter().rev() {
            if c >= 0 {
                stack.push((c as u32, si, off));
            }
        }
    } else {
        for &c in src.cells[si as usize].children.iter().rev() {
            if c >= 0 {
                stack.push((ti, c as u32, off));
            }
        }
    }
}

/// Attach a cell-particle record to every target leaf under `ti`.
fn push_m2p(tgt: &Octree, lists: &mut InteractionLists, ti: u32, si: u32, off: u32, n_eff: usize) {
    let t = &tgt.cells[ti as usize];
    if t.is_leaf {
        lists.m2p[ti as usize].push(M2pRec { src: si, off, n_eff: n_eff as u8 });
        lists.n_m2p += 1;
        return;
    }
    for &c in &t.children {
        if c >= 0 {
            push_m2p(tgt, lists, c as u32, si, off, n_eff);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::image_offsets;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_positions(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-PI..PI),
                    rng.random_range(-PI..PI),
                    rng.random_range(-PI..PI),
                )
            })
            .collect()
    }

    /// Every (target, source, image) triple must be covered by exactly one
    /// record along the target's leaf-to-root chain.
    fn check_partition(mode: TraversalMode) {
        let pos = random_positions(700, 5);
        let tree = Octree::build(&pos, 24);
        let offsets = image_offsets(1);
        let cfg = TraversalConfig {
            p: 6,
            theta: 0.7,
            mode,
            cost: CostModel::default(),
        };
        let lists = traverse(&tree, &tree, &offsets, &cfg);

        let n = pos.len();
        // Multiplicity per (target slot, source slot, offset).
        let mut count = vec![0u16; n * offsets.len()];
        for &leaf in &tree.leaves {
            // Walk the ancestor chain for m2l records.
            let mut chain = vec![leaf];
            let mut cur = leaf;
            while tree.cells[cur as usize].parent >= 0 {
                cur = tree.cells[cur as usize].parent as u32;
                chain.push(cur);
            }
            let lc = &tree.cells[leaf as usize];
            for t_slot in lc.start..lc.end {
                let base = |src: u32, off: u32| {
                    let sc = &tree.cells[src as usize];
                    (sc.start..sc.end).map(move |s_slot| (s_slot, off))
                };
                for &cell in &chain {
                    for rec in &lists.m2l[cell as usize] {
                        for (s_slot, off) in base(rec.src, rec.off) {
                            count[s_slot * offsets.len() + off as usize] += 1;
                        }
                    }
                }
                for rec in &lists.m2p[leaf as usize] {
                    for (s_slot, off) in base(rec.src, rec.off) {
                        count[s_slot * offsets.len() + off as usize] += 1;
                    }
                }
                for rec in &lists.p2p[leaf as usize] {
                    for (s_slot, off) in base(rec.src, rec.off) {
                        count[s_slot * offsets.len() + off as usize] += 1;
                    }
                }
                for c in &count {
                    assert_eq!(*c, 1, "target slot {t_slot}: uncovered or double-counted");
                }
                count.iter_mut().for_each(|c| *c = 0);
                // One target slot per leaf is plenty; the lists are shared.
                break;
            }
        }
    }

    #[test]
    fn partition_property_hybrid() {
        check_partition(TraversalMode::Hybrid);
    }

    #[test]
    fn partition_property_fmm_only() {
        check_partition(TraversalMode::FmmOnly);
    }

    #[test]
    fn partition_property_treecode_only() {
        check_partition(TraversalMode::TreecodeOnly);
    }

    #[test]
    fn p2p_only_produces_no_expansions() {
        let pos = random_positions(300, 9);
        let tree = Octree::build(&pos, 16);
        let cfg = TraversalConfig {
            p: 6,
            theta: 0.7,
            mode: TraversalMode::P2pOnly,
            cost: CostModel::default(),
        };
        let lists = traverse(&tree, &tree, &image_offsets(0), &cfg);
        assert_eq!(lists.n_m2l, 0);
        assert_eq!(lists.n_m2p, 0);
        assert_eq!(lists.n_p2p_pairs, (pos.len() * pos.len()) as u64);
    }

    #[test]
    fn effective_order_clamps_and_decays() {
        assert_eq!(effective_order(10, 0.75, 0.75), 10);
        assert!(effective_order(10, 0.75, 0.4) < 10);
        assert!(effective_order(10, 0.75, 0.05) >= 2);
        assert_eq!(effective_order(4, 0.75, 0.74), 4);
    }
}
