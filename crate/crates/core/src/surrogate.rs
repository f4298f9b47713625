//! Element classification by Gauss-point sign counts, surrogate boundary
//! extraction, and cached distance vectors at boundary Gauss points.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;
use crate::octree::{Octant, Octree, MAX_LEVEL};
use crate::quadrature::tensor_rule;
use crate::sdf::{ImplicitField, GRADIENT_DEGENERACY_FLOOR};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("field is not finite at a Gauss point of leaf {leaf}")]
    NonFinite { leaf: usize },
    #[error("node flags cover {got} nodes, tree has {expected}")]
    InconsistentFlags { expected: usize, got: usize },
    #[error("degenerate gradient (norm {norm:e}) at Gauss point {point:?}")]
    Degenerate { point: Vec3, norm: f64 },
    #[error("no distance vector cached for Gauss point {0:?}")]
    Missing(Vec3),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marker {
    Interior,
    Exterior,
    TrueIntercepted,
    FalseIntercepted,
    NeighborsFalseIntercepted,
}

impl Marker {
    /// Leaves integrated as part of the fluid (surrogate) domain.
    pub fn is_assembled(self) -> bool {
        matches!(self, Marker::Exterior | Marker::TrueIntercepted | Marker::NeighborsFalseIntercepted)
    }

    /// Integer code used in field output.
    pub fn code(self) -> u8 {
        match self {
            Marker::Interior => 0,
            Marker::Exterior => 1,
            Marker::TrueIntercepted => 2,
            Marker::FalseIntercepted => 3,
            Marker::NeighborsFalseIntercepted => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementMarkers {
    pub leaf: Vec<Marker>,
    /// Gauss points with f < 0, per leaf.
    pub inside_count: Vec<usize>,
    pub gp_per_leaf: usize,
    /// f(node) < 0.
    pub node_in: Vec<bool>,
    /// Node belongs to a FalseIntercepted leaf.
    pub node_false_intercepted: Vec<bool>,
}

impl ElementMarkers {
    pub fn assembled(&self) -> Vec<bool> {
        self.leaf.iter().map(|m| m.is_assembled()).collect()
    }
}

fn classify_count(count: usize, num_gp: usize, lambda: f64) -> Marker {
    if count == 0 {
        Marker::Exterior
    } else if count == num_gp {
        Marker::Interior
    } else if count as f64 / num_gp as f64 >= lambda {
        Marker::FalseIntercepted
    } else {
        Marker::TrueIntercepted
    }
}

/// Marks each leaf by the fraction of its Gauss points inside the solid.
/// Exterior and Interior are tested before the fraction so both stay
/// reachable for every threshold.
pub fn classify_elements(tree: &Octree, field: &ImplicitField, lambda_criteria: f64, gp_order: usize) -> Result<ElementMarkers, SurrogateError> {
    if gp_order < 2 {
        return Err(SurrogateError::Parameter(format!("gp_order {gp_order} below 2")));
    }
    if !(lambda_criteria > 0.0 && lambda_criteria <= 1.0) {
        return Err(SurrogateError::Parameter(format!("lambda_criteria {lambda_criteria} outside (0, 1]")));
    }
    let dim = tree.dim();
    let rule = tensor_rule(gp_order, dim);
    let num_gp = rule.len();
    let mut pts = Vec::with_capacity(tree.num_leaves() * num_gp);
    for o in tree.leaves() {
        let c = tree.octant_center(o);
        let half = 0.5 * tree.octant_size(o);
        for (xi, _) in &rule {
            let mut p = c;
            for i in 0..dim {
                p[i] += half * xi[i];
            }
            pts.push(p);
        }
    }
    let vals = field.values(&pts);
    let mut leaf = Vec::with_capacity(tree.num_leaves());
    let mut inside_count = Vec::with_capacity(tree.num_leaves());
    for (l, chunk) in vals.chunks(num_gp).enumerate() {
        if chunk.iter().any(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFinite { leaf: l });
        }
        let count = chunk.iter().filter(|v| **v < 0.0).count();
        inside_count.push(count);
        leaf.push(classify_count(count, num_gp, lambda_criteria));
    }
    let node_pts: Vec<Vec3> = (0..tree.num_nodes()).map(|n| tree.node_point(n)).collect();
    let node_in = field.values(&node_pts).into_iter().map(|v| v < 0.0).collect();
    Ok(ElementMarkers {
        leaf,
        inside_count,
        gp_per_leaf: num_gp,
        node_in,
        node_false_intercepted: vec![false; tree.num_nodes()],
    })
}

/// One face (or, across a level change, sub-face) of the surrogate boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SurrogateFace {
    /// Assembled leaf owning the face.
    pub leaf: usize,
    /// axis = face / 2; side = face % 2 (0: min, 1: max).
    pub face: u8,
    /// Octant inside `leaf` whose face `face` is exactly this segment.
    pub sub: Octant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateBoundary {
    pub faces: Vec<SurrogateFace>,
    /// Faces proposed by the node-flag rules before reconciliation with the
    /// assembled/non-assembled interface.
    pub candidate_faces: usize,
    /// Leaves reclassified as FalseIntercepted by the opposite-face rule.
    pub reclassified: usize,
}

impl SurrogateBoundary {
    /// Unit normal pointing out of the fluid domain.
    pub fn normal(&self, face: &SurrogateFace) -> Vec3 {
        let mut n = [0.0; 3];
        n[(face.face / 2) as usize] = if face.face % 2 == 0 { -1.0 } else { 1.0 };
        n
    }

    /// Physical Gauss points and weights (scaled by the face measure).
    pub fn gauss_points(&self, tree: &Octree, face: &SurrogateFace, gp_order: usize) -> Vec<(Vec3, f64)> {
        face_gauss_points(tree, &face.sub, face.face as usize, gp_order)
    }

    pub fn all_gauss_points(&self, tree: &Octree, gp_order: usize) -> Vec<Vec3> {
        self.faces.iter().flat_map(|f| self.gauss_points(tree, f, gp_order).into_iter().map(|p| p.0)).collect()
    }

    /// `leaf,face,qx,qy[,qz],dx,dy[,dz]`, one row per face Gauss point.
    pub fn write_csv<W: Write>(&self, mut w: W, tree: &Octree, gp_order: usize, cache: &DistanceCache) -> Result<(), std::io::Error> {
        let dim = tree.dim();
        if dim == 2 {
            writeln!(w, "leaf,face,qx,qy,dx,dy")?;
        } else {
            writeln!(w, "leaf,face,qx,qy,qz,dx,dy,dz")?;
        }
        for f in &self.faces {
            for (q, _) in self.gauss_points(tree, f, gp_order) {
                let d = cache.get(&q).ok_or_else(|| std::io::Error::other(format!("no distance vector at {q:?}")))?;
                if dim == 2 {
                    writeln!(w, "{},{},{},{},{},{}", f.leaf, f.face, q[0], q[1], d[0], d[1])?;
                } else {
                    writeln!(w, "{},{},{},{},{},{},{},{}", f.leaf, f.face, q[0], q[1], q[2], d[0], d[1], d[2])?;
                }
            }
        }
        Ok(())
    }
}

/// Gauss points on face `face` of octant `o`.
pub fn face_gauss_points(tree: &Octree, o: &Octant, face: usize, gp_order: usize) -> Vec<(Vec3, f64)> {
    let dim = tree.dim();
    let axis = face / 2;
    let h = tree.octant_size(o);
    let c = tree.octant_center(o);
    let rule = tensor_rule(gp_order, dim - 1);
    let tangential: Vec<usize> = (0..dim).filter(|&i| i != axis).collect();
    let jac = (0.5 * h).powi(dim as i32 - 1);
    rule.iter()
        .map(|(xi, w)| {
            let mut p = c;
            p[axis] += if face % 2 == 0 { -0.5 * h } else { 0.5 * h };
            for (k, &t) in tangential.iter().enumerate() {
                p[t] += 0.5 * h * xi[k];
            }
            (p, w * jac)
        })
        .collect()
}

fn face_corners(dim: usize, face: usize) -> impl Iterator<Item = usize> {
    let axis = face / 2;
    let side = face % 2;
    (0..1usize << dim).filter(move |c| (c >> axis) & 1 == side)
}

/// Surrogate boundary and updated markers. Node flags drive the candidate
/// faces (intercepted leaves: faces whose nodes are all inside; neighbours
/// of FalseIntercepted leaves: faces whose nodes are all inside or on a
/// FalseIntercepted leaf); a leaf with candidates on two opposite faces is
/// reclassified FalseIntercepted and extraction repeats. The returned faces
/// are the interface between assembled and non-assembled (or pruned) space.
pub fn extract_surrogate_boundary(tree: &Octree, markers: &ElementMarkers) -> Result<(SurrogateBoundary, ElementMarkers), SurrogateError> {
    let n_nodes = tree.num_nodes();
    if markers.node_in.len() != n_nodes || markers.node_false_intercepted.len() != n_nodes {
        return Err(SurrogateError::InconsistentFlags { expected: n_nodes, got: markers.node_in.len() });
    }
    if markers.leaf.len() != tree.num_leaves() {
        return Err(SurrogateError::InconsistentFlags { expected: tree.num_leaves(), got: markers.leaf.len() });
    }
    let dim = tree.dim();
    // markers without the derived neighbour class
    let mut base: Vec<Marker> = markers
        .leaf
        .iter()
        .zip(&markers.inside_count)
        .map(|(m, &c)| match m {
            Marker::NeighborsFalseIntercepted => {
                if c == 0 {
                    Marker::Exterior
                } else {
                    Marker::TrueIntercepted
                }
            }
            other => *other,
        })
        .collect();
    let mut reclassified = 0;
    loop {
        let mut fi_node = vec![false; n_nodes];
        for (l, m) in base.iter().enumerate() {
            if *m == Marker::FalseIntercepted {
                for &n in tree.leaf_nodes(l) {
                    fi_node[n] = true;
                }
            }
        }
        let current: Vec<Marker> = base
            .iter()
            .enumerate()
            .map(|(l, m)| {
                let near_fi = tree.leaf_nodes(l).iter().any(|&n| fi_node[n]);
                match m {
                    Marker::Exterior | Marker::TrueIntercepted if near_fi => Marker::NeighborsFalseIntercepted,
                    other => *other,
                }
            })
            .collect();

        let mut candidates = 0;
        let mut cycles = Vec::new();
        for (l, m) in current.iter().enumerate() {
            let nodes = tree.leaf_nodes(l);
            let mut bits = [false; 6];
            for (face, bit) in bits.iter_mut().enumerate().take(2 * dim) {
                let mut corners = face_corners(dim, face).map(|c| nodes[c]);
                *bit = match m {
                    Marker::TrueIntercepted => corners.all(|n| markers.node_in[n]),
                    Marker::NeighborsFalseIntercepted => corners.all(|n| markers.node_in[n] || fi_node[n]),
                    _ => false,
                };
            }
            if (0..dim).any(|a| bits[2 * a] && bits[2 * a + 1]) {
                cycles.push(l);
            } else {
                candidates += bits.iter().filter(|b| **b).count();
            }
        }
        if cycles.is_empty() {
            let faces = interface_faces(tree, &current);
            let updated = ElementMarkers {
                leaf: current,
                inside_count: markers.inside_count.clone(),
                gp_per_leaf: markers.gp_per_leaf,
                node_in: markers.node_in.clone(),
                node_false_intercepted: fi_node,
            };
            if candidates != faces.len() {
                log::debug!("surrogate: {candidates} candidate faces, {} interface faces", faces.len());
            }
            return Ok((SurrogateBoundary { faces, candidate_faces: candidates, reclassified }, updated));
        }
        reclassified += cycles.len();
        for l in cycles {
            base[l] = Marker::FalseIntercepted;
        }
    }
}

/// Faces of assembled leaves that border non-assembled leaves or pruned
/// space inside the domain, split to the finer side across level changes.
fn interface_faces(tree: &Octree, markers: &[Marker]) -> Vec<SurrogateFace> {
    let dim = tree.dim();
    let max_level = tree.leaves().iter().map(|o| o.level).max().unwrap_or(0);
    let mut out = Vec::new();
    for (l, o) in tree.leaves().iter().enumerate() {
        if !markers[l].is_assembled() {
            continue;
        }
        for face in 0..2 * dim {
            collect_segments(tree, markers, max_level, l, *o, face, &mut out);
        }
    }
    out
}

fn collect_segments(tree: &Octree, markers: &[Marker], max_level: u8, leaf: usize, sub: Octant, face: usize, out: &mut Vec<SurrogateFace>) {
    let axis = face / 2;
    let mut across = sub;
    if face % 2 == 0 {
        if sub.anchor[axis] == 0 {
            return;
        }
        across.anchor[axis] -= sub.size();
    } else {
        if sub.anchor[axis] + sub.size() >= 1u32 << MAX_LEVEL {
            return;
        }
        across.anchor[axis] += sub.size();
    }
    let segment = SurrogateFace { leaf, face: face as u8, sub };
    // probe the lattice cell of `across` touching the face
    let mut probe = across.anchor;
    if face % 2 == 0 {
        probe[axis] += across.size() - 1;
    }
    if let Some(n) = tree.locate_cell(&probe) {
        if tree.leaves()[n].level <= across.level {
            if !markers[n].is_assembled() {
                out.push(segment);
            }
            return;
        }
    }
    if !touching_leaf_exists(tree, &across, face ^ 1, max_level) {
        // pruned space
        out.push(segment);
        return;
    }
    for c in sub.children(tree.dim()) {
        let on_face = if face % 2 == 0 { c.anchor[axis] == sub.anchor[axis] } else { c.anchor[axis] + c.size() == sub.anchor[axis] + sub.size() };
        if on_face {
            collect_segments(tree, markers, max_level, leaf, c, face, out);
        }
    }
}

/// Whether any leaf inside `region` touches its face `face`.
fn touching_leaf_exists(tree: &Octree, region: &Octant, face: usize, max_level: u8) -> bool {
    let axis = face / 2;
    let mut stack = vec![*region];
    while let Some(r) = stack.pop() {
        if tree.leaf_id(&r).is_some() {
            return true;
        }
        if r.level >= max_level {
            continue;
        }
        for c in r.children(tree.dim()) {
            let on_face = if face % 2 == 0 { c.anchor[axis] == region.anchor[axis] } else { c.anchor[axis] + c.size() == region.anchor[axis] + region.size() };
            if on_face {
                stack.push(c);
            }
        }
    }
    false
}

/// Memoised distance vectors keyed by the exact coordinates of the query.
#[derive(Clone, Debug, Default)]
pub struct DistanceCache {
    map: HashMap<[u64; 3], Vec3>,
    evaluations: usize,
    step: f64,
}

fn key(q: &Vec3) -> [u64; 3] {
    [q[0].to_bits(), q[1].to_bits(), q[2].to_bits()]
}

impl DistanceCache {
    /// `step` is the central-difference step for the gradient.
    pub fn new(step: f64) -> Self {
        DistanceCache { map: HashMap::new(), evaluations: 0, step }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Field evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn get(&self, q: &Vec3) -> Option<Vec3> {
        self.map.get(&key(q)).copied()
    }

    pub fn distance_vector(&mut self, field: &ImplicitField, q: &Vec3) -> Result<Vec3, SurrogateError> {
        if let Some(d) = self.get(q) {
            return Ok(d);
        }
        self.fill(field, std::slice::from_ref(q))?;
        Ok(self.map[&key(q)])
    }

    /// Computes and stores d = -f grad f / |grad f| for every uncached
    /// query, evaluating the field in one batch.
    pub fn fill(&mut self, field: &ImplicitField, queries: &[Vec3]) -> Result<(), SurrogateError> {
        if !(self.step > 0.0) {
            return Err(SurrogateError::Parameter(format!("finite-difference step {}", self.step)));
        }
        let dim = field.dim();
        let mut todo: Vec<Vec3> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for q in queries {
            if !self.map.contains_key(&key(q)) && seen.insert(key(q)) {
                todo.push(*q);
            }
        }
        if todo.is_empty() {
            return Ok(());
        }
        let per = 1 + 2 * dim;
        let mut pts = Vec::with_capacity(todo.len() * per);
        let h = self.step;
        for q in &todo {
            pts.push(*q);
            for i in 0..dim {
                let mut a = *q;
                let mut b = *q;
                a[i] += h;
                b[i] -= h;
                pts.push(a);
                pts.push(b);
            }
        }
        let vals = field.values(&pts);
        self.evaluations += pts.len();
        for (q, v) in todo.iter().zip(vals.chunks(per)) {
            let f = v[0];
            let d = if f == 0.0 {
                [0.0; 3]
            } else {
                let mut g = [0.0; 3];
                for i in 0..dim {
                    g[i] = (v[1 + 2 * i] - v[2 + 2 * i]) / (2.0 * h);
                }
                let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(n >= GRADIENT_DEGENERACY_FLOOR) {
                    return Err(SurrogateError::Degenerate { point: *q, norm: n });
                }
                [-f * g[0] / n, -f * g[1] / n, -f * g[2] / n]
            };
            self.map.insert(key(q), d);
        }
        Ok(())
    }
}

/// Distance vectors at every Gauss point of the surrogate boundary.
pub fn boundary_gauss_distance_vectors(
    tree: &Octree,
    boundary: &SurrogateBoundary,
    field: &ImplicitField,
    gp_order: usize,
    step: f64,
) -> Result<DistanceCache, SurrogateError> {
    let mut cache = DistanceCache::new(step);
    cache.fill(field, &boundary.all_gauss_points(tree, gp_order))?;
    Ok(cache)
}
