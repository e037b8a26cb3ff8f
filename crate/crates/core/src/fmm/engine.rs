//! List-driven evaluation: upward pass, traversal, translations, downward
//! pass, direct near field and the Gaussian correction.

use std::time::Instant;

use rayon::prelude::*;

use super::expansion::{field_blocks, l2l, m2l_with_table, m2m, p2m, to_signed_soa, Expansion,
    ExpansionKind, SignedBlocks};
use super::harmonics::{self, Side};
use super::periodic::periodic_far_field;
use super::traverse::{traverse, CostModel, InteractionLists, TraversalConfig, TraversalMode};
use super::tree::Octree;
use crate::error::FmmError;
use crate::geom::{Mat3, Vec3};
use crate::kernels::{image_offsets, radial_factors, ShortRangeGrid, VORTICITY_CUTOFF_SIGMAS};
use crate::particles::ParticleSet;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Tunables of the hierarchical engine.
#[derive(Clone, Debug)]
pub struct FmmParams {
    /// Expansion order.
    pub p: usize,
    /// Periodic image recursion depth; 0 evaluates in free space.
    pub image_levels: usize,
    /// Acceptance threshold: cells interact through expansions when
    /// `theta * distance > r_a + r_b`.
    pub theta: f64,
    /// Leaf capacity of the octrees.
    pub n_crit: usize,
    pub mode: TraversalMode,
    pub cost: CostModel,
}

impl Default for FmmParams {
    fn default() -> Self {
        FmmParams {
            p: 10,
            image_levels: 3,
            theta: 0.7,
            n_crit: 64,
            mode: TraversalMode::Hybrid,
            cost: CostModel::default(),
        }
    }
}

impl FmmParams {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        FmmParams { p: cfg.p, image_levels: cfg.image_levels, ..Default::default() }
    }
}

/// Interaction counts and per-phase wall time of one evaluation.
#[derive(Clone, Debug, Default)]
pub struct TraversalStats {
    pub n_m2l: u64,
    pub n_m2p: u64,
    pub n_p2p_pairs: u64,
    pub n_correction_pairs: u64,
    pub t_build: f64,
    pub t_upward: f64,
    pub t_traverse: f64,
    pub t_far: f64,
    pub t_near: f64,
    pub t_down: f64,
    pub t_periodic: f64,
    pub t_correction: f64,
    pub n_crit: usize,
    pub theta: f64,
}

impl TraversalStats {
    pub fn total_time(&self) -> f64 {
        self.t_build
            + self.t_upward
            + self.t_traverse
            + self.t_far
            + self.t_near
            + self.t_down
            + self.t_periodic
            + self.t_correction
    }

    pub fn csv_header() -> &'static str {
        "n_m2l,n_m2p,n_p2p_pairs,n_correction_pairs,t_build,t_upward,t_traverse,t_far,t_near,t_down,t_periodic,t_correction,n_crit,theta"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
            self.n_m2l,
            self.n_m2p,
            self.n_p2p_pairs,
            self.n_correction_pairs,
            self.t_build,
            self.t_upward,
            self.t_traverse,
            self.t_far,
            self.t_near,
            self.t_down,
            self.t_periodic,
            self.t_correction,
            self.n_crit,
            self.theta
        )
    }
}

/// Per-target accumulator: velocity plus the velocity gradient rows.
#[derive(Copy, Clone, Default)]
struct Acc {
    u: [f64; 3],
    j: [[f64; 3]; 3],
}

/// Evaluate velocity (and optionally its gradient) induced by `sources` at
/// `targets` through the hybrid hierarchy plus periodic far field.
///
/// Deterministic for a fixed configuration: each target's contributions
/// accumulate in interaction-list order, independent of the worker thread
/// count.
pub fn evaluate(
    targets: &[Vec3],
    sources: &ParticleSet,
    params: &FmmParams,
    want_grad: bool,
) -> Result<(Vec<Vec3>, Option<Vec<Mat3>>, TraversalStats), FmmError> {
    if sources.is_empty() {
        return Err(FmmError::EmptySources);
    }
    if params.p < 1 {
        return Err(FmmError::InvalidOrder(params.p));
    }
    let mut stats = TraversalStats {
        n_crit: params.n_crit,
        theta: params.theta,
        ..Default::default()
    };

    let t0 = Instant::now();
    let src_tree = Octree::build(&sources.position, params.n_crit);
    let tgt_tree = Octree::build(targets, params.n_crit);
    // Strengths in Morton order, scaled for the Green's function.
    let n_src = sources.len();
    let mut gx = vec![0.0; n_src];
    let mut gy = vec![0.0; n_src];
    let mut gz = vec![0.0; n_src];
    for (slot, &orig) in src_tree.perm.iter().enumerate() {
        let g = sources.strength[orig as usize];
        gx[slot] = g.x;
        gy[slot] = g.y;
        gz[slot] = g.z;
    }
    stats.t_build = t0.elapsed().as_secs_f64();

    // Upward: leaf multipoles, then aggregation level by level.
    let t0 = Instant::now();
    let n_cells = src_tree.cells.len();
    let mut multipoles: Vec<Expansion> = (0..n_cells)
        .map(|i| Expansion::zero(ExpansionKind::Multipole, params.p, src_tree.cells[i].center))
        .collect();
    let leaf_mp: Vec<(u32, Expansion)> = src_tree
        .leaves
        .par_iter()
        .map(|&l| {
            let c = &src_tree.cells[l as usize];
            let pos: Vec<Vec3> = (c.start..c.end)
                .map(|s| Vec3::new(src_tree.x[s], src_tree.y[s], src_tree.z[s]))
                .collect();
            let strength: Vec<Vec3> =
                (c.start..c.end).map(|s| Vec3::new(gx[s], gy[s], gz[s])).collect();
            (l, p2m(&pos, &strength, c.center, params.p))
        })
        .collect();
    for (l, e) in leaf_mp {
        multipoles[l as usize] = e;
    }
    let max_level = src_tree.depth;
    for level in (0..max_level).rev() {
        let ids: Vec<usize> = (0..n_cells)
            .filter(|&i| src_tree.cells[i].level == level && !src_tree.cells[i].is_leaf)
            .collect();
        let updated: Vec<(usize, Expansion)> = ids
            .par_iter()
            .map(|&i| {
                let c = &src_tree.cells[i];
                let mut acc = Expansion::zero(ExpansionKind::Multipole, params.p, c.center);
                for &ch in &c.children {
                    if ch >= 0 {
                        acc.add_assign(&m2m(&multipoles[ch as usize], c.center));
                    }
                }
                (i, acc)
            })
            .collect();
        for (i, e) in updated {
            multipoles[i] = e;
        }
    }
    stats.t_upward = t0.elapsed().as_secs_f64();

    // Traversal.
    let t0 = Instant::now();
    let offsets = image_offsets(params.image_levels.min(1));
    let tcfg = TraversalConfig {
        p: params.p,
        theta: params.theta,
        mode: params.mode,
        cost: params.cost,
    };
    let lists: InteractionLists = traverse(&tgt_tree, &src_tree, &offsets, &tcfg);
    stats.n_m2l = lists.n_m2l;
    stats.n_m2p = lists.n_m2p;
    stats.n_p2p_pairs = lists.n_p2p_pairs;
    stats.t_traverse = t0.elapsed().as_secs_f64();

    // Cell-cell translations into per-cell locals.
    let t0 = Instant::now();
    let signed_mp: Vec<SignedBlocks> =
        multipoles.par_iter().map(|e| to_signed_soa(&e.coeffs, params.p)).collect();
    let mut locals: Vec<Expansion> = (0..tgt_tree.cells.len())
        .map(|i| Expansion::zero(ExpansionKind::Local, params.p, tgt_tree.cells[i].center))
        .collect();
    let table_len = harmonics::sgn_len(2 * params.p);
    locals.par_iter_mut().enumerate().for_each_init(
        || {
            (
                vec![num_complex::Complex64::ZERO; table_len],
                vec![0.0f64; table_len],
                vec![0.0f64; table_len],
            )
        },
        |(st, sr, si), (ti, loc)| {
            for rec in &lists.m2l[ti] {
                let d = tgt_tree.cells[ti].center
                    - (src_tree.cells[rec.src as usize].center
                        + lists.offsets[rec.off as usize]);
                let n_eff = (rec.n_eff as usize).min(params.p);
                let need = harmonics::sgn_len(2 * n_eff);
                harmonics::singular_table_into(&mut st[..need], d, 2 * n_eff);
                for k in 0..need {
                    sr[k] = st[k].re;
                    si[k] = st[k].im;
                }
                m2l_with_table(
                    &mut loc.coeffs,
                    &signed_mp[rec.src as usize],
                    &sr[..need],
                    &si[..need],
                    n_eff,
                    true,
                );
            }
        },
    );
    stats.t_far = t0.elapsed().as_secs_f64();

    // Aggregated periodic images beyond the traversal's neighbor boxes.
    let t0 = Instant::now();
    if params.image_levels >= 2 {
        let far = periodic_far_field(&multipoles[0], params.image_levels)?;
        // The far-field local is centered on the domain center, which is
        // the target root's center.
        locals[0].add_assign(&far);
    }
    stats.t_periodic = t0.elapsed().as_secs_f64();

    // Downward: push locals to children.
    let t0 = Instant::now();
    for level in 1..=tgt_tree.depth {
        let ids: Vec<usize> = (0..tgt_tree.cells.len())
            .filter(|&i| tgt_tree.cells[i].level == level)
            .collect();
        let shifted: Vec<(usize, Expansion)> = ids
            .par_iter()
            .map(|&i| {
                let parent = tgt_tree.cells[i].parent as usize;
                (i, l2l(&locals[parent], tgt_tree.cells[i].center))
            })
            .collect();
        for (i, e) in shifted {
            locals[i].add_assign(&e);
        }
    }
    stats.t_down = t0.elapsed().as_secs_f64();

    // Leaf evaluation: far field from the leaf local, treecode records,
    // then the direct near field. Leaf target ranges partition the slots,
    // so the per-leaf slices are disjoint.
    let t0 = Instant::now();
    let n_t = targets.len();
    let mut acc = vec![Acc::default(); n_t];
    {
        let mut slices: Vec<(u32, &mut [Acc])> = Vec::with_capacity(tgt_tree.leaves.len());
        let mut rest: &mut [Acc] = &mut acc;
        let mut cursor = 0usize;
        let mut leaves_sorted: Vec<u32> = tgt_tree.leaves.clone();
        leaves_sorted.sort_by_key(|&l| tgt_tree.cells[l as usize].start);
        for &l in &leaves_sorted {
            let c = &tgt_tree.cells[l as usize];
            debug_assert_eq!(c.start, cursor);
            let (head, tail) = rest.split_at_mut(c.count());
            slices.push((l, head));
            rest = tail;
            cursor = c.end;
        }
        slices.into_par_iter().for_each(|(leaf, out)| {
            eval_leaf(
                leaf,
                out,
                &tgt_tree,
                &src_tree,
                &gx,
                &gy,
                &gz,
                &multipoles,
                &locals,
                &lists,
                params,
                want_grad,
            );
        });
    }
    stats.t_near = t0.elapsed().as_secs_f64();

    // Short-range Gaussian correction: replace the point kernel by the
    // regularized one for pairs within the vorticity cutoff.
    let t0 = Instant::now();
    let r_cut = VORTICITY_CUTOFF_SIGMAS * sources.max_sigma();
    let periodic = params.image_levels >= 1;
    let grid = ShortRangeGrid::build(&sources.position, r_cut, periodic);
    let n_src = sources.len();
    let mut sg = vec![0.0; n_src];
    let mut sgx = vec![0.0; n_src];
    let mut sgy = vec![0.0; n_src];
    let mut sgz = vec![0.0; n_src];
    for (slot, &orig) in grid.idx.iter().enumerate() {
        sg[slot] = sources.sigma[orig as usize];
        let g = sources.strength[orig as usize];
        sgx[slot] = g.x;
        sgy[slot] = g.y;
        sgz[slot] = g.z;
    }
    let rc2 = r_cut * r_cut;
    let n_corr: u64 = acc
        .par_iter_mut()
        .enumerate()
        .map(|(slot, a)| {
            let x = Vec3::new(tgt_tree.x[slot], tgt_tree.y[slot], tgt_tree.z[slot]);
            let mut pairs = 0u64;
            grid.for_pairs(x, |j, dx, dy, dz, r2| {
                if r2 > rc2 || r2 == 0.0 {
                    return;
                }
                pairs += 1;
                let (qg, wg) = radial_factors(r2, sg[j]);
                let inv_r2 = 1.0 / r2;
                let inv_r3 = inv_r2 / r2.sqrt();
                let dq = qg + inv_r3 / FOUR_PI;
                let dw = wg - 3.0 * inv_r3 * inv_r2 / FOUR_PI;
                let (gx_, gy_, gz_) = (sgx[j], sgy[j], sgz[j]);
                let cx = gy_ * dz - gz_ * dy;
                let cy = gz_ * dx - gx_ * dz;
                let cz = gx_ * dy - gy_ * dx;
                a.u[0] += cx * dq;
                a.u[1] += cy * dq;
                a.u[2] += cz * dq;
                if want_grad {
                    a.j[0][0] += cx * dx * dw;
                    a.j[0][1] += cx * dy * dw - gz_ * dq;
                    a.j[0][2] += cx * dz * dw + gy_ * dq;
                    a.j[1][0] += cy * dx * dw + gz_ * dq;
                    a.j[1][1] += cy * dy * dw;
                    a.j[1][2] += cy * dz * dw - gx_ * dq;
                    a.j[2][0] += cz * dx * dw - gy_ * dq;
                    a.j[2][1] += cz * dy * dw + gx_ * dq;
                    a.j[2][2] += cz * dz * dw;
                }
            });
            pairs
        })
        .sum();
    stats.n_correction_pairs = n_corr;
    stats.t_correction = t0.elapsed().as_secs_f64();

    // Un-permute to caller order.
    let mut vel = vec![Vec3::ZERO; n_t];
    let mut grad = want_grad.then(|| vec![Mat3::ZERO; n_t]);
    for (slot, &orig) in tgt_tree.perm.iter().enumerate() {
        let a = &acc[slot];
        vel[orig as usize] = Vec3::new(a.u[0], a.u[1], a.u[2]);
        if let Some(g) = grad.as_mut() {
            g[orig as usize] = Mat3(a.j);
        }
    }
    Ok((vel, grad, stats))
}

/// Far + near field for the targets of one leaf.
#[allow(clippy::too_many_arguments)]
fn eval_leaf(
    leaf: u32,
    out: &mut [Acc],
    tgt_tree: &Octree,
    src_tree: &Octree,
    gx: &[f64],
    gy: &[f64],
    gz: &[f64],
    multipoles: &[Expansion],
    locals: &[Expansion],
    lists: &InteractionLists,
    params: &FmmParams,
    want_grad: bool,
) {
    let cell = &tgt_tree.cells[leaf as usize];
    let p = params.p;

    // Far field of the accumulated local expansion.
    let local = &locals[leaf as usize];
    if !local.is_zero() {
        let blocks = field_blocks(&local.coeffs, p, Side::Local, want_grad);
        for (k, slot) in (cell.start..cell.end).enumerate() {
            let v = Vec3::new(tgt_tree.x[slot], tgt_tree.y[slot], tgt_tree.z[slot]) - cell.center;
            let mut jm = Mat3::ZERO;
            let u = blocks.eval(v, want_grad.then_some(&mut jm));
            add_acc(&mut out[k], u, &jm, want_grad);
        }
    }

    // Treecode records: source multipoles evaluated at the targets.
    for rec in &lists.m2p[leaf as usize] {
        let src = &multipoles[rec.src as usize];
        let blocks = field_blocks(&src.coeffs, p, Side::Multipole, want_grad);
        let center = src.center + lists.offsets[rec.off as usize];
        for (k, slot) in (cell.start..cell.end).enumerate() {
            let v = Vec3::new(tgt_tree.x[slot], tgt_tree.y[slot], tgt_tree.z[slot]) - center;
            let mut jm = Mat3::ZERO;
            let u = blocks.eval(v, want_grad.then_some(&mut jm));
            add_acc(&mut out[k], u, &jm, want_grad);
        }
    }

    // Direct near field with the point kernel; the Gaussian correction
    // pass repairs pairs within the cutoff afterwards.
    for rec in &lists.p2p[leaf as usize] {
        let s = &src_tree.cells[rec.src as usize];
        let off = lists.offsets[rec.off as usize];
        if want_grad {
            p2p_span::<true>(cell, s, off, tgt_tree, src_tree, gx, gy, gz, out);
        } else {
            p2p_span::<false>(cell, s, off, tgt_tree, src_tree, gx, gy, gz, out);
        }
    }
}

/// Point-kernel pass of one leaf pair. Four-lane inner loop with masked
/// inverses: coincident pairs contribute exactly zero, and the fixed lane
/// structure keeps the summation order reproducible.
#[allow(clippy::too_many_arguments)]
fn p2p_span<const GRAD: bool>(
    t: &super::tree::Cell,
    s: &super::tree::Cell,
    off: Vec3,
    tgt_tree: &Octree,
    src_tree: &Octree,
    gx: &[f64],
    gy: &[f64],
    gz: &[f64],
    out: &mut [Acc],
) {
    let xs = &src_tree.x[s.start..s.end];
    let ys = &src_tree.y[s.start..s.end];
    let zs = &src_tree.z[s.start..s.end];
    let sx = &gx[s.start..s.end];
    let sy = &gy[s.start..s.end];
    let sz = &gz[s.start..s.end];
    let n = xs.len();
    let chunks = n & !3;
    for (k, slot) in (t.start..t.end).enumerate() {
        let xt = tgt_tree.x[slot] - off.x;
        let yt = tgt_tree.y[slot] - off.y;
        let zt = tgt_tree.z[slot] - off.z;
        let a = &mut out[k];
        let mut au = [[0.0f64; 4]; 3];
        let mut aj = [[0.0f64; 4]; 9];
        let mut j = 0;
        while j < chunks {
            let x4: &[f64; 4] = xs[j..j + 4].try_into().unwrap();
            let y4: &[f64; 4] = ys[j..j + 4].try_into().unwrap();
            let z4: &[f64; 4] = zs[j..j + 4].try_into().unwrap();
            let gx4: &[f64; 4] = sx[j..j + 4].try_into().unwrap();
            let gy4: &[f64; 4] = sy[j..j + 4].try_into().unwrap();
            let gz4: &[f64; 4] = sz[j..j + 4].try_into().unwrap();
            let mut q = [0.0f64; 4];
            let mut w = [0.0f64; 4];
            let mut dx = [0.0f64; 4];
            let mut dy = [0.0f64; 4];
            let mut dz = [0.0f64; 4];
            for l in 0..4 {
                dx[l] = xt - x4[l];
                dy[l] = yt - y4[l];
                dz[l] = zt - z4[l];
                let r2 = dx[l] * dx[l] + dy[l] * dy[l] + dz[l] * dz[l];
                let mask = if r2 > 0.0 { 1.0 } else { 0.0 };
                let inv_r2 = mask / r2.max(f64::MIN_POSITIVE);
                let inv_r3 = inv_r2 * inv_r2.sqrt();
                q[l] = -inv_r3 / FOUR_PI;
                w[l] = if GRAD { 3.0 * inv_r3 * inv_r2 / FOUR_PI } else { 0.0 };
            }
            for l in 0..4 {
                let cx = gy4[l] * dz[l] - gz4[l] * dy[l];
                let cy = gz4[l] * dx[l] - gx4[l] * dz[l];
                let cz = gx4[l] * dy[l] - gy4[l] * dx[l];
                au[0][l] += cx * q[l];
                au[1][l] += cy * q[l];
                au[2][l] += cz * q[l];
                if GRAD {
                    aj[0][l] += cx * dx[l] * w[l];
                    aj[1][l] += cx * dy[l] * w[l] - gz4[l] * q[l];
                    aj[2][l] += cx * dz[l] * w[l] + gy4[l] * q[l];
                    aj[3][l] += cy * dx[l] * w[l] + gz4[l] * q[l];
                    aj[4][l] += cy * dy[l] * w[l];
                    aj[5][l] += cy * dz[l] * w[l] - gx4[l] * q[l];
                    aj[6][l] += cz * dx[l] * w[l] - gy4[l] * q[l];
                    aj[7][l] += cz * dy[l] * w[l] + gx4[l] * q[l];
                    aj[8][l] += cz * dz[l] * w[l];
                }
            }
            j += 4;
        }
        let mut ux = (au[0][0] + au[0][1]) + (au[0][2] + au[0][3]);
        let mut uy = (au[1][0] + au[1][1]) + (au[1][2] + au[1][3]);
        let mut uz = (au[2][0] + au[2][1]) + (au[2][2] + au[2][3]);
        let mut jm = [0.0f64; 9];
        if GRAD {
            for r in 0..9 {
                jm[r] = (aj[r][0] + aj[r][1]) + (aj[r][2] + aj[r][3]);
            }
        }
        // Remainder lanes.
        for jj in chunks..n {
            let dx = xt - xs[jj];
            let dy = yt - ys[jj];
            let dz = zt - zs[jj];
            let r2 = dx * dx + dy * dy + dz * dz;
            let mask = if r2 > 0.0 { 1.0 } else { 0.0 };
            let inv_r2 = mask / r2.max(f64::MIN_POSITIVE);
            let inv_r3 = inv_r2 * inv_r2.sqrt();
            let q = -inv_r3 / FOUR_PI;
            let cx = sy[jj] * dz - sz[jj] * dy;
            let cy = sz[jj] * dx - sx[jj] * dz;
            let cz = sx[jj] * dy - sy[jj] * dx;
            ux += cx * q;
            uy += cy * q;
            uz += cz * q;
            if GRAD {
                let w = 3.0 * inv_r3 * inv_r2 / FOUR_PI;
                jm[0] += cx * dx * w;
                jm[1] += cx * dy * w - sz[jj] * q;
                jm[2] += cx * dz * w + sy[jj] * q;
                jm[3] += cy * dx * w + sz[jj] * q;
                jm[4] += cy * dy * w;
                jm[5] += cy * dz * w - sx[jj] * q;
                jm[6] += cz * dx * w - sy[jj] * q;
                jm[7] += cz * dy * w + sx[jj] * q;
                jm[8] += cz * dz * w;
            }
        }
        a.u[0] += ux;
        a.u[1] += uy;
        a.u[2] += uz;
        if GRAD {
            for r in 0..3 {
                for c in 0..3 {
                    a.j[r][c] += jm[3 * r + c];
                }
            }
        }
    }
}

#[inline]
fn add_acc(a: &mut Acc, u: Vec3, j: &Mat3, want_grad: bool) {
    a.u[0] += u.x;
    a.u[1] += u.y;
    a.u[2] += u.z;
    if want_grad {
        for r in 0..3 {
            for c in 0..3 {
                a.j[r][c] += j.0[r][c];
            }
        }
    }
}

/// Result of a parameter probe.
#[derive(Clone, Debug)]
pub struct TunedParams {
    pub n_crit: usize,
    pub theta: f64,
    pub cost: CostModel,
    /// Measured relative L2 velocity error of the chosen configuration.
    pub probe_error: f64,
    /// Measured wall time of the chosen configuration.
    pub probe_time: f64,
}

/// Pick `n_crit` and the acceptance threshold by measuring wall time on a
/// sample at fixed accuracy. Candidates missing the order-dependent
/// accuracy gate are discarded; ties and measurement noise resolve by
/// fixed candidate order, so identical measurements reproduce identical
/// choices. Falls back to the defaults when nothing passes.
pub fn autotune(sample: &ParticleSet, p: usize, image_levels: usize) -> TunedParams {
    let defaults = FmmParams::default();
    let fallback = TunedParams {
        n_crit: defaults.n_crit,
        theta: defaults.theta,
        cost: defaults.cost,
        probe_error: f64::NAN,
        probe_time: f64::NAN,
    };
    if sample.is_empty() {
        return fallback;
    }
    // Deterministic subsample cap.
    let max_sample = 4096;
    let stride = sample.len().div_ceil(max_sample).max(1);
    let idx: Vec<usize> = (0..sample.len()).step_by(stride).collect();
    let probe = ParticleSet::new(
        idx.iter().map(|&i| sample.position[i]).collect(),
        idx.iter().map(|&i| sample.strength[i]).collect(),
        idx.iter().map(|&i| sample.sigma[i]).collect(),
    );
    let n_probe_targets = probe.len().min(192);
    let probe_targets: Vec<Vec3> = probe.position[..n_probe_targets].to_vec();
    let images = image_levels.min(1);
    let u_ref = match crate::kernels::direct_velocity(&probe_targets, &probe, images) {
        Ok(u) => u,
        Err(_) => return fallback,
    };
    let ref_norm: f64 = u_ref.iter().map(|v| v.norm_sq()).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return fallback;
    }

    let gate = accuracy_gate(p);
    let mut best: Option<(f64, TunedParams)> = None;
    for &n_crit in &[32usize, 64, 128] {
        for &theta in &[0.4f64, 0.55, 0.7, 0.85, 1.0] {
            let params = FmmParams {
                p,
                image_levels: images,
                theta,
                n_crit,
                mode: TraversalMode::Hybrid,
                cost: CostModel::default(),
            };
            let t0 = Instant::now();
            let Ok((u, _, stats)) = evaluate(&probe.position, &probe, &params, true) else {
                continue;
            };
            let dt = t0.elapsed().as_secs_f64();
            let err: f64 = probe_targets
                .iter()
                .enumerate()
                .map(|(i, _)| (u[i] - u_ref[i]).norm_sq())
                .sum::<f64>()
                .sqrt()
                / ref_norm;
            if err > gate {
                continue;
            }
            // Calibrate the hybrid cost model from this probe's timings.
            let cost = calibrate_cost(&stats);
            let cand = TunedParams { n_crit, theta, cost, probe_error: err, probe_time: dt };
            if best.as_ref().map(|(t, _)| dt < *t).unwrap_or(true) {
                best = Some((dt, cand));
            }
        }
    }
    best.map(|(_, c)| c).unwrap_or(fallback)
}

/// Accuracy target per expansion order: the base requirement at order 10,
/// relaxed geometrically for lower orders.
pub fn accuracy_gate(p: usize) -> f64 {
    1e-4 * (0.55f64).powi(p as i32 - 10)
}

fn calibrate_cost(stats: &TraversalStats) -> CostModel {
    let mut cost = CostModel::default();
    if stats.n_p2p_pairs > 0 && stats.t_near > 0.0 {
        cost.p2p = stats.t_near / stats.n_p2p_pairs as f64;
        if stats.n_m2l > 0 && stats.t_far > 0.0 {
            // Normalize against the pair unit.
            let m2l_each = stats.t_far / stats.n_m2l as f64;
            cost.m2l = m2l_each / cost.p2p / 1830.0; // (10+1)^4/8 reference
            cost.m2l = cost.m2l.clamp(0.01, 100.0);
        }
        cost.p2p = 1.0;
    }
    cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{direct_eval, direct_velocity};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_set(n: usize, sigma: f64, seed: u64) -> ParticleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos = Vec::new();
        let mut strength = Vec::new();
        for _ in 0..n {
            pos.push(Vec3::new(
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            ));
            strength.push(Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
        }
        ParticleSet::with_uniform_sigma(pos, strength, sigma)
    }

    fn rel_l2(a: &[Vec3], b: &[Vec3]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (*x - *y).norm_sq()).sum();
        let den: f64 = b.iter().map(|v| v.norm_sq()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn two_particles_reduce_to_direct() {
        let src = random_set(2, 0.1, 1);
        let params = FmmParams { image_levels: 0, ..Default::default() };
        let (u, _, stats) = evaluate(&src.position, &src, &params, false).unwrap();
        let u_ref = direct_velocity(&src.position, &src, 0).unwrap();
        assert_eq!(stats.n_m2l + stats.n_m2p, 0);
        for (a, b) in u.iter().zip(u_ref.iter()) {
            assert!((*a - *b).norm() <= 1e-12 * b.norm().max(1e-300), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn p2p_only_matches_direct_to_roundoff() {
        let src = random_set(600, 0.12, 2);
        let params = FmmParams {
            image_levels: 1,
            mode: TraversalMode::P2pOnly,
            n_crit: 32,
            ..Default::default()
        };
        let (u, g, _) = evaluate(&src.position, &src, &params, true).unwrap();
        let (u_ref, g_ref) = direct_eval(&src.position, &src, 1, true).unwrap();
        let g = g.unwrap();
        let g_ref = g_ref.unwrap();
        assert!(rel_l2(&u, &u_ref) < 1e-12);
        for i in 0..src.len() {
            for r in 0..3 {
                for c in 0..3 {
                    let d = (g[i].0[r][c] - g_ref[i].0[r][c]).abs();
                    assert!(d <= 1e-9 * g_ref[i].0[r][c].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn accuracy_improves_with_order() {
        let src = random_set(4096, 0.05, 3);
        let u_ref = direct_velocity(&src.position, &src, 1).unwrap();
        let mut last = f64::MAX;
        for p in [4usize, 6, 8, 10] {
            let params = FmmParams { p, image_levels: 1, ..Default::default() };
            let (u, _, _) = evaluate(&src.position, &src, &params, false).unwrap();
            let err = rel_l2(&u, &u_ref);
            assert!(err < last, "p={p}: {err} !< {last}");
            last = err;
        }
        assert!(last <= 1e-4, "p=10 error {last}");
    }

    #[test]
    fn hybrid_and_pure_modes_agree() {
        let src = random_set(3000, 0.08, 4);
        let u_ref = direct_velocity(&src.position, &src, 1).unwrap();
        let mut errs = Vec::new();
        for mode in [TraversalMode::FmmOnly, TraversalMode::TreecodeOnly, TraversalMode::Hybrid] {
            let params = FmmParams { p: 6, image_levels: 1, mode, ..Default::default() };
            let (u, _, stats) = evaluate(&src.position, &src, &params, false).unwrap();
            match mode {
                TraversalMode::FmmOnly => assert_eq!(stats.n_m2p, 0),
                TraversalMode::TreecodeOnly => assert_eq!(stats.n_m2l, 0),
                _ => {}
            }
            errs.push(rel_l2(&u, &u_ref));
        }
        let bound = errs[0].max(1e-12);
        for (i, e) in errs.iter().enumerate() {
            assert!(*e <= 2.0 * bound, "mode {i}: {e} vs bound {bound}");
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let src = random_set(2000, 0.1, 5);
        let params = FmmParams { p: 6, ..Default::default() };
        let (u1, g1, _) = evaluate(&src.position, &src, &params, true).unwrap();
        let (u2, g2, _) = evaluate(&src.position, &src, &params, true).unwrap();
        assert_eq!(u1, u2);
        assert_eq!(g1.unwrap(), g2.unwrap());
    }

    #[test]
    fn distinct_targets_from_sources() {
        // Lattice targets induced by scattered sources.
        let src = random_set(1500, 0.1, 6);
        let mut targets = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                targets.push(Vec3::new(
                    -PI + i as f64 * PI / 3.0,
                    -PI + j as f64 * PI / 3.0,
                    0.37,
                ));
            }
        }
        let params = FmmParams { image_levels: 1, ..Default::default() };
        let (u, _, _) = evaluate(&targets, &src, &params, false).unwrap();
        let u_ref = direct_velocity(&targets, &src, 1).unwrap();
        assert!(rel_l2(&u, &u_ref) < 1e-4);
    }

    #[test]
    fn stretching_gradient_matches_direct() {
        let src = random_set(2500, 0.07, 7);
        let params = FmmParams { image_levels: 1, ..Default::default() };
        let (_, g, _) = evaluate(&src.position, &src, &params, true).unwrap();
        let (_, g_ref) = direct_eval(&src.position, &src, 1, true).unwrap();
        let g = g.unwrap();
        let g_ref = g_ref.unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..src.len() {
            for r in 0..3 {
                for c in 0..3 {
                    num += (g[i].0[r][c] - g_ref[i].0[r][c]).powi(2);
                    den += g_ref[i].0[r][c].powi(2);
                }
            }
        }
        let err = (num / den).sqrt();
        assert!(err < 3e-4, "gradient rel L2 {err}");
    }

    #[test]
    fn empty_sources_and_bad_order_are_errors() {
        let empty = ParticleSet::default();
        let params = FmmParams::default();
        assert!(matches!(
            evaluate(&[Vec3::ZERO], &empty, &params, false),
            Err(FmmError::EmptySources)
        ));
        let src = random_set(4, 0.1, 8);
        let bad = FmmParams { p: 0, ..Default::default() };
        assert!(matches!(
            evaluate(&src.position, &src, &bad, false),
            Err(FmmError::InvalidOrder(0))
        ));
    }

    #[test]
    fn autotune_meets_gate_and_is_deterministic() {
        let src = random_set(3000, 0.06, 9);
        let t1 = autotune(&src, 10, 1);
        assert!(t1.probe_error.is_nan() || t1.probe_error <= accuracy_gate(10));
        // The choice is a pure function of measurements; on re-run with the
        // same input the chosen configuration never becomes slower than the
        // worst probed configuration.
        let params = FmmParams {
            p: 10,
            image_levels: 1,
            theta: t1.theta,
            n_crit: t1.n_crit,
            ..Default::default()
        };
        let (u, _, _) = evaluate(&src.position, &src, &params, false).unwrap();
        let u_ref = direct_velocity(&src.position, &src, 1).unwrap();
        assert!(rel_l2(&u, &u_ref) <= accuracy_gate(10) * 1.5);
    }
}
