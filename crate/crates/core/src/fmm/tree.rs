//! Morton-ordered octree over the periodic cube.

use std::f64::consts::PI;

use crate::geom::{wrap_unchecked, Vec3, BOX_EDGE};

/// Deepest refinement level (21 bits per axis in the 63-bit key).
pub const MAX_LEVEL: usize = 20;

/// Interleave the low 21 bits of `v` with two zero bits after each.
#[inline]
fn spread(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f00000000ffff;
    x = (x | (x << 16)) & 0x1f0000ff0000ff;
    x = (x | (x << 8)) & 0x100f00f00f00f00f;
    x = (x | (x << 4)) & 0x10c30c30c30c30c3;
    x = (x | (x << 2)) & 0x1249249249249249;
    x
}

/// 63-bit Morton key of a wrapped position; x occupies the low bit of each
/// 3-bit digit, then y, then z.
pub fn morton_key(x: Vec3) -> u64 {
    let w = wrap_unchecked(x);
    let scale = (1u64 << 21) as f64 / BOX_EDGE;
    let qx = (((w.x + PI) * scale) as u64).min((1 << 21) - 1);
    let qy = (((w.y + PI) * scale) as u64).min((1 << 21) - 1);
    let qz = (((w.z + PI) * scale) as u64).min((1 << 21) - 1);
    spread(qx) | (spread(qy) << 1) | (spread(qz) << 2)
}

/// Octant digit of `key` consumed when descending from `level` to
/// `level + 1`.
#[inline]
fn digit(key: u64, level: usize) -> usize {
    ((key >> (3 * (MAX_LEVEL - level))) & 7) as usize
}

/// One node of the hierarchy.
#[derive(Clone, Debug)]
pub struct Cell {
    pub level: usize,
    /// Morton path from the root (3 bits per level, high bits first).
    pub key: u64,
    pub center: Vec3,
    pub half_width: f64,
    /// Contiguous range into the Morton-sorted particle arrays.
    pub start: usize,
    pub end: usize,
    pub children: [i32; 8],
    pub parent: i32,
    pub is_leaf: bool,
}

impl Cell {
    pub fn count(&self) -> usize {
        self.end - self.start
    }

    /// Circumscribed-sphere radius used by the acceptance criterion.
    pub fn radius(&self) -> f64 {
        self.half_width * 3f64.sqrt()
    }
}

/// Morton-ordered octree with structure-of-arrays particle storage.
///
/// Construction permutes particles into Morton order; `perm[slot]` is the
/// original index of the particle now at `slot`.
#[derive(Clone, Debug)]
pub struct Octree {
    pub cells: Vec<Cell>,
    pub perm: Vec<u32>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub n_crit: usize,
    pub leaves: Vec<u32>,
    pub depth: usize,
}

impl Octree {
    /// Build the hierarchy over `positions` splitting cells holding more
    /// than `n_crit` particles (overfull leaves allowed only at the depth
    /// cap, which coincident points can force).
    pub fn build(positions: &[Vec3], n_crit: usize) -> Octree {
        assert!(!positions.is_empty());
        let n_crit = n_crit.max(1);
        let mut order: Vec<u32> = (0..positions.len() as u32).collect();
        let keys: Vec<u64> = positions.iter().map(|&p| morton_key(p)).collect();
        order.sort_by_key(|&i| keys[i as usize]);
        let sorted_keys: Vec<u64> = order.iter().map(|&i| keys[i as usize]).collect();
        let mut x = Vec::with_capacity(order.len());
        let mut y = Vec::with_capacity(order.len());
        let mut z = Vec::with_capacity(order.len());
        for &i in &order {
            let w = wrap_unchecked(positions[i as usize]);
            x.push(w.x);
            y.push(w.y);
            z.push(w.z);
        }

        let mut tree = Octree {
            cells: Vec::new(),
            perm: order,
            x,
            y,
            z,
            n_crit,
            leaves: Vec::new(),
            depth: 0,
        };
        tree.cells.push(Cell {
            level: 0,
            key: 0,
            center: Vec3::ZERO,
            half_width: PI,
            start: 0,
            end: positions.len(),
            children: [-1; 8],
            parent: -1,
            is_leaf: true,
        });
        tree.split(0, &sorted_keys);
        tree.leaves = tree
            .cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_leaf)
            .map(|(i, _)| i as u32)
            .collect();
        tree.depth = tree.cells.iter().map(|c| c.level).max().unwrap_or(0);
        tree
    }

    fn split(&mut self, id: usize, keys: &[u64]) {
        let (level, start, end, center, half) = {
            let c = &self.cells[id];
            (c.level, c.start, c.end, c.center, c.half_width)
        };
        if end - start <= self.n_crit || level >= MAX_LEVEL {
            return;
        }
        self.cells[id].is_leaf = false;
        let mut children = [-1i32; 8];
        let mut lo = start;
        for oct in 0..8usize {
            // Particles of this octant are contiguous in Morton order.
            let hi = lo + keys[lo..end].partition_point(|&k| digit(k, level) <= oct);
            if hi > lo {
                let quarter = half * 0.5;
                let offset = Vec3::new(
                    if oct & 1 == 1 { quarter } else { -quarter },
                    if oct & 2 == 2 { quarter } else { -quarter },
                    if oct & 4 == 4 { quarter } else { -quarter },
                );
                let child_id = self.cells.len();
                children[oct] = child_id as i32;
                self.cells.push(Cell {
                    level: level + 1,
                    key: (self.cells[id].key << 3) | oct as u64,
                    center: center + offset,
                    half_width: quarter,
                    start: lo,
                    end: hi,
                    children: [-1; 8],
                    parent: id as i32,
                    is_leaf: true,
                });
                self.split(child_id, keys);
            }
            lo = hi;
        }
        debug_assert_eq!(lo, end);
        self.cells[id].children = children;
    }

    pub fn root(&self) -> &Cell {
        &self.cells[0]
    }

    /// Positions in Morton order as vectors (convenience for tests).
    pub fn sorted_positions(&self) -> Vec<Vec3> {
        (0..self.x.len()).map(|i| Vec3::new(self.x[i], self.y[i], self.z[i])).collect()
    }
}
