//! Incomplete quadtrees/octrees built from implicit queries.
//!
//! Octants live on an integer lattice with `2^MAX_LEVEL` cells per domain
//! edge, so all adjacency and containment tests are exact. Leaves are kept
//! in Morton order; corner nodes are numbered in lexicographic (z, y, x)
//! order of their lattice coordinates.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Aabb, Vec3};
use crate::sdf::ImplicitField;

pub const MAX_LEVEL: u8 = 21;
const LATTICE: u32 = 1 << MAX_LEVEL;

#[derive(Debug, Error)]
pub enum OctreeError {
    #[error("level {0} outside the supported range 1..={MAX_LEVEL}")]
    Level(u8),
    #[error("domain must be a cube, got extents {0:?}")]
    NonCubicDomain(Vec<f64>),
    #[error("dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("leaves overlap at {0:?}")]
    Overlap(Octant),
    #[error("octant {0:?} is off the lattice")]
    Misaligned(Octant),
    #[error("tree is not 2:1 balanced between {0:?} and {1:?}")]
    Unbalanced(Octant, Octant),
    #[error("field is not finite at {0:?}")]
    NonFinite(Vec3),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Octant {
    pub level: u8,
    pub anchor: [u32; 3],
}

impl Octant {
    pub const ROOT: Octant = Octant { level: 0, anchor: [0; 3] };

    /// Edge length in lattice units.
    pub fn size(&self) -> u32 {
        1 << (MAX_LEVEL - self.level)
    }

    pub fn children(&self, dim: usize) -> impl Iterator<Item = Octant> + '_ {
        let half = self.size() / 2;
        (0..1usize << dim).map(move |c| {
            let mut a = self.anchor;
            for (i, ai) in a.iter_mut().enumerate().take(dim) {
                if c >> i & 1 == 1 {
                    *ai += half;
                }
            }
            Octant { level: self.level + 1, anchor: a }
        })
    }

    pub fn parent(&self) -> Option<Octant> {
        (self.level > 0).then(|| self.ancestor(self.level - 1))
    }

    pub fn ancestor(&self, level: u8) -> Octant {
        let mask = !((1u32 << (MAX_LEVEL - level)) - 1);
        Octant {
            level,
            anchor: [self.anchor[0] & mask, self.anchor[1] & mask, self.anchor[2] & mask],
        }
    }

    /// Corner `c` in lattice units; bit i of `c` selects the max side on axis i.
    pub fn corner(&self, c: usize, dim: usize) -> [u32; 3] {
        let s = self.size();
        let mut p = self.anchor;
        for (i, pi) in p.iter_mut().enumerate().take(dim) {
            if c >> i & 1 == 1 {
                *pi += s;
            }
        }
        p
    }

    pub fn contains_cell(&self, p: &[u32; 3], dim: usize) -> bool {
        let s = self.size();
        (0..dim).all(|i| p[i] >= self.anchor[i] && p[i] < self.anchor[i] + s)
    }

    fn morton(&self, dim: usize) -> u64 {
        let mut key = 0u64;
        for bit in (0..MAX_LEVEL as u32).rev() {
            for i in (0..dim).rev() {
                key = key << 1 | ((self.anchor[i] >> bit) & 1) as u64;
            }
        }
        key
    }
}

/// Additional refinement inside a geometric region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RefineRegion {
    Sphere { center: Vec3, radius: f64, level: u8 },
    Cylinder { center: Vec3, axis: Vec3, radius: f64, height: f64, level: u8 },
}

impl RefineRegion {
    fn level(&self) -> u8 {
        match self {
            RefineRegion::Sphere { level, .. } | RefineRegion::Cylinder { level, .. } => *level,
        }
    }

    /// Conservative: true if a ball of radius `r` around `p` may meet the region.
    fn touches(&self, p: &Vec3, r: f64) -> bool {
        match self {
            RefineRegion::Sphere { center, radius, .. } => geom::dist(p, center) <= radius + r,
            RefineRegion::Cylinder { center, axis, radius, height, .. } => {
                let a = geom::scale(axis, 1.0 / geom::norm(axis));
                let q = geom::sub(p, center);
                let along = geom::dot(&q, &a);
                let radial = geom::norm(&geom::sub(&q, &geom::scale(&a, along)));
                radial <= radius + r && along.abs() <= 0.5 * height + r
            }
        }
    }
}

/// Target level recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    pub base_level: u8,
    /// Level for octants whose center lies within one cell diagonal of the surface.
    #[serde(default)]
    pub boundary_level: Option<u8>,
    #[serde(default)]
    pub regions: Vec<RefineRegion>,
}

impl RefineSpec {
    pub fn uniform(level: u8) -> Self {
        RefineSpec { base_level: level, boundary_level: None, regions: Vec::new() }
    }

    fn validate(&self) -> Result<(), OctreeError> {
        if self.base_level < 1 || self.base_level > MAX_LEVEL {
            return Err(OctreeError::Level(self.base_level));
        }
        for l in self.boundary_level.iter().copied().chain(self.regions.iter().map(|r| r.level())) {
            if !(1..=MAX_LEVEL).contains(&l) {
                return Err(OctreeError::Level(l));
            }
        }
        Ok(())
    }

    fn max_level(&self) -> u8 {
        self.regions
            .iter()
            .map(|r| r.level())
            .chain(self.boundary_level)
            .fold(self.base_level, u8::max)
    }
}

#[derive(Clone, Debug)]
pub struct Octree {
    dim: usize,
    domain: Aabb,
    leaves: Vec<Octant>,
    leaf_index: HashMap<Octant, usize>,
    levels_present: Vec<u8>,
    nodes: Vec<[u32; 3]>,
    node_index: HashMap<[u32; 3], usize>,
    /// 2^dim node ids per leaf, corner order as in `Octant::corner`.
    leaf_nodes: Vec<usize>,
}

/// Hanging node id mapped to (master node, weight) pairs.
pub type HangingMap = BTreeMap<usize, Vec<(usize, f64)>>;

fn check_domain(domain: &Aabb) -> Result<(), OctreeError> {
    if !(2..=3).contains(&domain.dim) {
        return Err(OctreeError::Dimension(domain.dim));
    }
    if !domain.is_cube() {
        return Err(OctreeError::NonCubicDomain((0..domain.dim).map(|i| domain.extent(i)).collect()));
    }
    Ok(())
}

/// Offsets to face neighbours, plus edge neighbours in 3D.
fn balance_directions(dim: usize) -> Vec<[i32; 3]> {
    let mut dirs = Vec::new();
    let range: &[i32] = &[-1, 0, 1];
    for &dz in if dim == 3 { range } else { &[0] } {
        for &dy in range {
            for &dx in range {
                let d = [dx, dy, dz];
                let nz = d.iter().filter(|v| **v != 0).count();
                if nz == 1 || (dim == 3 && nz == 2) {
                    dirs.push(d);
                }
            }
        }
    }
    dirs
}

impl Octree {
    /// Builds a tree from an explicit leaf set (sorted and validated).
    pub fn from_leaves(domain: Aabb, mut leaves: Vec<Octant>) -> Result<Self, OctreeError> {
        check_domain(&domain)?;
        let dim = domain.dim;
        for o in &leaves {
            if o.level > MAX_LEVEL {
                return Err(OctreeError::Level(o.level));
            }
            let s = o.size();
            if (0..3).any(|i| if i < dim { o.anchor[i] % s != 0 || o.anchor[i] + s > LATTICE } else { o.anchor[i] != 0 }) {
                return Err(OctreeError::Misaligned(*o));
            }
        }
        leaves.sort_by_key(|o| (o.morton(dim), o.level));
        leaves.dedup();
        let leaf_index: HashMap<Octant, usize> = leaves.iter().enumerate().map(|(i, o)| (*o, i)).collect();
        for o in &leaves {
            for l in 0..o.level {
                if leaf_index.contains_key(&o.ancestor(l)) {
                    return Err(OctreeError::Overlap(*o));
                }
            }
        }
        let mut levels_present: Vec<u8> = leaves.iter().map(|o| o.level).collect();
        levels_present.sort_unstable();
        levels_present.dedup();

        let nc = 1usize << dim;
        let mut coords: Vec<[u32; 3]> = leaves.iter().flat_map(|o| (0..nc).map(move |c| o.corner(c, dim))).collect();
        coords.sort_unstable_by_key(|p| (p[2], p[1], p[0]));
        coords.dedup();
        let node_index: HashMap<[u32; 3], usize> = coords.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let leaf_nodes = leaves.iter().flat_map(|o| (0..nc).map(|c| node_index[&o.corner(c, dim)])).collect();
        Ok(Octree {
            dim,
            domain,
            leaves,
            leaf_index,
            levels_present,
            nodes: coords,
            node_index,
            leaf_nodes,
        })
    }

    /// Recursive subdivision driven by `refine`, keeping octants that reach
    /// the fluid side (any corner or the center has f >= 0), then 2:1
    /// balancing. Octants whose center lies deeper inside the solid than
    /// their half-diagonal are pruned before reaching the target level.
    pub fn build_incomplete(field: &ImplicitField, domain: Aabb, refine: &RefineSpec) -> Result<Self, OctreeError> {
        check_domain(&domain)?;
        refine.validate()?;
        if field.dim() != domain.dim {
            return Err(OctreeError::Dimension(field.dim()));
        }
        let dim = domain.dim;
        let probe = Octree::from_leaves(domain, vec![Octant::ROOT])?;
        let mut current = vec![Octant::ROOT];
        let mut leaves = Vec::new();
        let max_level = refine.max_level();
        while !current.is_empty() {
            let npts = (1 << dim) + 1;
            let mut pts = Vec::with_capacity(current.len() * npts);
            for o in &current {
                pts.push(probe.octant_center(o));
                for c in 0..1 << dim {
                    pts.push(probe.lattice_to_point(&o.corner(c, dim)));
                }
            }
            let vals = field.values(&pts);
            if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
                return Err(OctreeError::NonFinite(pts[k]));
            }
            let mut next = Vec::new();
            for (k, o) in current.iter().enumerate() {
                let v = &vals[k * npts..(k + 1) * npts];
                let fc = v[0];
                let diag = probe.octant_diagonal(o);
                let center = pts[k * npts];
                let mut target = refine.base_level;
                if let Some(b) = refine.boundary_level {
                    if fc.abs() < diag {
                        target = target.max(b);
                    }
                }
                for r in &refine.regions {
                    if r.touches(&center, 0.5 * diag) {
                        target = target.max(r.level());
                    }
                }
                let target = target.min(max_level);
                if o.level < target {
                    if fc > -0.5 * diag {
                        next.extend(o.children(dim));
                    }
                } else if v.iter().any(|f| *f >= 0.0) {
                    leaves.push(*o);
                }
            }
            current = next;
        }
        let tree = Octree::from_leaves(domain, leaves)?;
        Ok(tree.balance_2to1(Some(field)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    pub fn leaves(&self) -> &[Octant] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_id(&self, o: &Octant) -> Option<usize> {
        self.leaf_index.get(o).copied()
    }

    pub fn node_id(&self, p: &[u32; 3]) -> Option<usize> {
        self.node_index.get(p).copied()
    }

    pub fn node_lattice(&self, id: usize) -> [u32; 3] {
        self.nodes[id]
    }

    pub fn node_point(&self, id: usize) -> Vec3 {
        self.lattice_to_point(&self.nodes[id])
    }

    pub fn leaf_nodes(&self, leaf: usize) -> &[usize] {
        let nc = 1 << self.dim;
        &self.leaf_nodes[leaf * nc..(leaf + 1) * nc]
    }

    /// Physical edge length of one lattice unit.
    fn unit(&self) -> f64 {
        self.domain.extent(0) / LATTICE as f64
    }

    pub fn lattice_to_point(&self, p: &[u32; 3]) -> Vec3 {
        let u = self.unit();
        let mut x = [0.0; 3];
        for (i, xi) in x.iter_mut().enumerate().take(self.dim) {
            *xi = self.domain.min[i] + p[i] as f64 * u;
        }
        x
    }

    pub fn octant_size(&self, o: &Octant) -> f64 {
        self.domain.extent(0) / (1u64 << o.level) as f64
    }

    pub fn octant_diagonal(&self, o: &Octant) -> f64 {
        self.octant_size(o) * (self.dim as f64).sqrt()
    }

    pub fn octant_min(&self, o: &Octant) -> Vec3 {
        self.lattice_to_point(&o.anchor)
    }

    pub fn octant_center(&self, o: &Octant) -> Vec3 {
        let h = self.octant_size(o);
        let mut c = self.octant_min(o);
        for ci in c.iter_mut().take(self.dim) {
            *ci += 0.5 * h;
        }
        c
    }

    /// Leaf containing the finest lattice cell anchored at `p`.
    pub fn locate_cell(&self, p: &[u32; 3]) -> Option<usize> {
        if (0..self.dim).any(|i| p[i] >= LATTICE) {
            return None;
        }
        let finest = Octant { level: MAX_LEVEL, anchor: *p };
        self.levels_present.iter().find_map(|&l| self.leaf_index.get(&finest.ancestor(l)).copied())
    }

    /// Lattice cell just outside `o` in direction `dir` (None outside the domain).
    fn adjacent_cell(&self, o: &Octant, dir: &[i32; 3]) -> Option<[u32; 3]> {
        let s = o.size() as i64;
        let mut p = [0u32; 3];
        for i in 0..self.dim {
            let v = match dir[i] {
                -1 => o.anchor[i] as i64 - 1,
                1 => o.anchor[i] as i64 + s,
                _ => o.anchor[i] as i64,
            };
            if v < 0 || v >= LATTICE as i64 {
                return None;
            }
            p[i] = v as u32;
        }
        Some(p)
    }

    /// Same-level or coarser leaf across face `face` (axis = face / 2,
    /// side = face % 2); None if the region is empty or covered by finer leaves.
    pub fn face_neighbor(&self, leaf: usize, face: usize) -> Option<usize> {
        let o = &self.leaves[leaf];
        let mut dir = [0; 3];
        dir[face / 2] = if face % 2 == 0 { -1 } else { 1 };
        let p = self.adjacent_cell(o, &dir)?;
        self.locate_cell(&p).filter(|&n| self.leaves[n].level <= o.level)
    }

    /// All leaves sharing part of face `face` of `leaf` from the other side.
    pub fn face_neighbors(&self, leaf: usize, face: usize) -> Vec<usize> {
        let o = self.leaves[leaf];
        let axis = face / 2;
        let mut dir = [0; 3];
        dir[axis] = if face % 2 == 0 { -1 } else { 1 };
        let Some(p) = self.adjacent_cell(&o, &dir) else {
            return Vec::new();
        };
        if let Some(n) = self.locate_cell(&p) {
            if self.leaves[n].level <= o.level {
                return vec![n];
            }
        }
        // search the same-size octant on the other side for finer leaves
        let mut region = Octant { level: o.level, anchor: o.anchor };
        region.anchor[axis] = if face % 2 == 0 { o.anchor[axis] - o.size() } else { o.anchor[axis] + o.size() };
        let mut out = Vec::new();
        let mut stack = vec![region];
        while let Some(r) = stack.pop() {
            if let Some(&id) = self.leaf_index.get(&r) {
                out.push(id);
                continue;
            }
            if r.level >= MAX_LEVEL || self.levels_present.last().is_none_or(|&m| r.level >= m) {
                continue;
            }
            for c in r.children(self.dim) {
                // only children touching the shared face
                let touches = if face % 2 == 0 {
                    c.anchor[axis] + c.size() == o.anchor[axis]
                } else {
                    c.anchor[axis] == o.anchor[axis] + o.size()
                };
                if touches {
                    stack.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Splits leaves until face- (and in 3D edge-) adjacent leaves differ by at
    /// most one level. With a field, new children failing the retention
    /// test are dropped.
    pub fn balance_2to1(&self, field: Option<&ImplicitField>) -> Octree {
        let dim = self.dim;
        let dirs = balance_directions(dim);
        let mut set: HashMap<Octant, ()> = self.leaves.iter().map(|o| (*o, ())).collect();
        let mut levels: Vec<u8> = self.levels_present.clone();
        let locate = |set: &HashMap<Octant, ()>, levels: &[u8], p: &[u32; 3]| -> Option<Octant> {
            let finest = Octant { level: MAX_LEVEL, anchor: *p };
            levels.iter().map(|&l| finest.ancestor(l)).find(|a| set.contains_key(a))
        };
        // process finest leaves first; splits only create leaves one level
        // finer than the split octant, which are then queued
        let mut queue: Vec<Octant> = self.leaves.clone();
        queue.sort_by_key(|o| (o.level, o.morton(dim)));
        while let Some(o) = queue.pop() {
            if !set.contains_key(&o) {
                continue;
            }
            for d in &dirs {
                let Some(p) = self.adjacent_cell(&o, d) else { continue };
                let Some(n) = locate(&set, &levels, &p) else { continue };
                if n.level + 1 >= o.level {
                    continue;
                }
                // split n repeatedly down to level o.level - 1 along the path to p
                let mut cur = n;
                while cur.level + 1 < o.level {
                    set.remove(&cur);
                    let children: Vec<Octant> = cur.children(dim).collect();
                    let keep = self.retained(field, &children);
                    let mut next = None;
                    for (c, k) in children.into_iter().zip(keep) {
                        if c.contains_cell(&p, dim) {
                            next = Some(c);
                        }
                        if k || c.contains_cell(&p, dim) {
                            set.insert(c, ());
                            queue.push(c);
                        }
                    }
                    if let Err(pos) = levels.binary_search(&(cur.level + 1)) {
                        levels.insert(pos, cur.level + 1);
                    }
                    cur = next.expect("one child contains the cell");
                }
                // the chain child may itself fail retention; prune it only now
                // that it no longer steers the descent
                if !self.retained(field, &[cur])[0] {
                    set.remove(&cur);
                }
                queue.push(o);
            }
        }
        let leaves: Vec<Octant> = set.into_keys().collect();
        Octree::from_leaves(self.domain, leaves).expect("balancing preserves a valid tiling")
    }

    fn retained(&self, field: Option<&ImplicitField>, octs: &[Octant]) -> Vec<bool> {
        let Some(f) = field else {
            return vec![true; octs.len()];
        };
        let npts = (1 << self.dim) + 1;
        let mut pts = Vec::with_capacity(octs.len() * npts);
        for o in octs {
            pts.push(self.octant_center(o));
            for c in 0..1 << self.dim {
                pts.push(self.lattice_to_point(&o.corner(c, self.dim)));
            }
        }
        let v = f.values(&pts);
        v.chunks(npts).map(|c| c.iter().any(|x| *x >= 0.0)).collect()
    }

    /// First pair of adjacent leaves violating 2:1 balance, if any.
    pub fn balance_violation(&self) -> Option<(Octant, Octant)> {
        let dirs = balance_directions(self.dim);
        for o in &self.leaves {
            for d in &dirs {
                let Some(p) = self.adjacent_cell(o, d) else { continue };
                if let Some(n) = self.locate_cell(&p) {
                    if self.leaves[n].level + 1 < o.level {
                        return Some((*o, self.leaves[n]));
                    }
                }
            }
        }
        None
    }

    /// Hanging nodes of the whole tree.
    pub fn build_constraints(&self) -> Result<HangingMap, OctreeError> {
        self.build_constraints_masked(None)
    }

    /// Hanging nodes with respect to the `active` leaves only: a node is
    /// hanging if an active leaf uses it and it sits at the midpoint of an
    /// edge (or center of a face) of a coarser active leaf.
    pub fn build_constraints_masked(&self, active: Option<&[bool]>) -> Result<HangingMap, OctreeError> {
        if let Some((a, b)) = self.balance_violation() {
            return Err(OctreeError::Unbalanced(a, b));
        }
        let is_active = |l: usize| active.is_none_or(|m| m[l]);
        let mut used = vec![false; self.nodes.len()];
        for l in 0..self.leaves.len() {
            if is_active(l) {
                for &n in self.leaf_nodes(l) {
                    used[n] = true;
                }
            }
        }
        let dim = self.dim;
        let nc = 1usize << dim;
        let mut map = HangingMap::new();
        for (l, o) in self.leaves.iter().enumerate() {
            if !is_active(l) || o.level == MAX_LEVEL {
                continue;
            }
            let corners: Vec<[u32; 3]> = (0..nc).map(|c| o.corner(c, dim)).collect();
            // edges: corner pairs differing in exactly one bit
            for a in 0..nc {
                for i in 0..dim {
                    let b = a | 1 << i;
                    if b == a {
                        continue;
                    }
                    let mid = midpoint(&[corners[a], corners[b]]);
                    if let Some(id) = self.node_index.get(&mid).copied().filter(|&id| used[id]) {
                        let ma = self.node_index[&corners[a]];
                        let mb = self.node_index[&corners[b]];
                        map.insert(id, vec![(ma, 0.5), (mb, 0.5)]);
                    }
                }
            }
            if dim == 3 {
                for axis in 0..3 {
                    for side in 0..2 {
                        let fc: Vec<usize> = (0..nc).filter(|c| (c >> axis & 1) == side).collect();
                        let pts: Vec<[u32; 3]> = fc.iter().map(|&c| corners[c]).collect();
                        let mid = midpoint(&pts);
                        if let Some(id) = self.node_index.get(&mid).copied().filter(|&id| used[id]) {
                            let masters = fc.iter().map(|&c| (self.node_index[&corners[c]], 0.25)).collect();
                            map.insert(id, masters);
                        }
                    }
                }
            }
        }
        Ok(map)
    }

    /// `level,anchor_x,anchor_y[,anchor_z]`, one row per leaf in Morton order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.dim == 2 {
            writeln!(w, "level,anchor_x,anchor_y")?;
        } else {
            writeln!(w, "level,anchor_x,anchor_y,anchor_z")?;
        }
        for o in &self.leaves {
            if self.dim == 2 {
                writeln!(w, "{},{},{}", o.level, o.anchor[0], o.anchor[1])?;
            } else {
                writeln!(w, "{},{},{},{}", o.level, o.anchor[0], o.anchor[1], o.anchor[2])?;
            }
        }
        Ok(())
    }
}

fn midpoint(pts: &[[u32; 3]]) -> [u32; 3] {
    let mut m = [0u64; 3];
    for p in pts {
        for i in 0..3 {
            m[i] += p[i] as u64;
        }
    }
    let n = pts.len() as u64;
    [(m[0] / n) as u32, (m[1] / n) as u32, (m[2] / n) as u32]
}

/// Octant at `level` with integer cell coordinates `idx` (for fixtures).
pub fn octant_at(level: u8, idx: [u32; 3]) -> Octant {
    let s = 1u32 << (MAX_LEVEL - level);
    Octant { level, anchor: [idx[0] * s, idx[1] * s, idx[2] * s] }
}
