//! Randomised shapes and the structural checks every built tree must pass.
#![allow(dead_code)]

use shiftflow::octree::*;
use shiftflow::sdf::{AnalyticShape, ImplicitField};

fn ensure(ok: bool, msg: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn leaf_set(t: &Octree) -> Vec<Octant> {
    let mut v = t.leaves().to_vec();
    v.sort();
    v
}

pub fn random_shape(kind: u8, dim: usize, a: f64, b: f64, c: f64) -> ImplicitField {
    let shape = match (dim, kind % 3) {
        (2, 0) => AnalyticShape::Circle { center: [a * 0.3, b * 0.3], radius: 0.2 + 0.4 * c.abs() },
        (2, 1) => AnalyticShape::Ring { center: [a * 0.2, b * 0.2], r1: 0.15 + 0.1 * c.abs(), r2: 0.45 + 0.2 * c.abs() },
        (2, _) => AnalyticShape::Box { min: vec![-0.5 + 0.2 * a, -0.3], max: vec![0.3, 0.4 + 0.3 * b.abs()] },
        (_, 0) => AnalyticShape::Sphere { center: [a * 0.3, b * 0.3, c * 0.3], radius: 0.3 + 0.2 * c.abs() },
        (_, 1) => AnalyticShape::Cylinder { center: [a * 0.2, 0.0, 0.0], axis: [b, 1.0, c], radius: 0.3, height: 1.0 },
        _ => AnalyticShape::Box { min: vec![-0.4, -0.4 + 0.1 * a, -0.3], max: vec![0.35, 0.3, 0.4 + 0.2 * b.abs()] },
    };
    ImplicitField::analytic(shape).unwrap()
}

/// Balance, tiling, constraint weights, neighbour symmetry and idempotent
/// balancing; the first violation is returned as a message.
pub fn check_invariants(t: &Octree) -> Result<(), String> {
    if let Some(v) = t.balance_violation() {
        return Err(format!("unbalanced pair {v:?}"));
    }
    // rebuilding validates sortedness and non-overlap on the integer lattice
    let rebuilt = Octree::from_leaves(*t.domain(), t.leaves().to_vec()).map_err(|e| e.to_string())?;
    ensure(rebuilt.leaves() == t.leaves(), "leaf order changed on rebuild")?;
    // tiling: measures add up to the union measure computed at the finest level
    let dim = t.dim();
    let finest = t.leaves().iter().map(|o| o.level).max().unwrap();
    let cells: u64 = t.leaves().iter().map(|o| 1u64 << (dim as u32 * (finest - o.level) as u32)).sum();
    let area: f64 = t.leaves().iter().map(|o| t.octant_size(o).powi(dim as i32)).sum();
    let cell_area = (2.0f64 / (1u64 << finest) as f64).powi(dim as i32);
    ensure((area - cells as f64 * cell_area).abs() <= 1e-12 * area, "leaf measures do not tile")?;
    let map = t.build_constraints().map_err(|e| e.to_string())?;
    for masters in map.values() {
        let sum: f64 = masters.iter().map(|m| m.1).sum();
        ensure((sum - 1.0).abs() < 1e-15, "constraint weights do not sum to one")?;
        ensure(masters.iter().all(|&(_, w)| w == 0.5 || (dim == 3 && w == 0.25)), "unexpected constraint weight")?;
    }
    // same-level face neighbours are mutual
    for l in 0..t.num_leaves() {
        for face in 0..2 * dim {
            if let Some(n) = t.face_neighbor(l, face) {
                if t.leaves()[n].level == t.leaves()[l].level {
                    ensure(t.face_neighbor(n, face ^ 1) == Some(l), "face neighbours are not mutual")?;
                }
            }
        }
    }
    let again = t.balance_2to1(None);
    ensure(leaf_set(&again) == leaf_set(t), "balancing is not idempotent")?;
    Ok(())
}

