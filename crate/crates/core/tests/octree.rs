use proptest::prelude::*;
use shiftflow::geom::Aabb;
use shiftflow::octree::*;
use shiftflow::sdf::{AnalyticShape, ImplicitField};

#[path = "support/octree_checks.rs"]
mod octree_checks;
use octree_checks::*;

fn circle(r: f64) -> ImplicitField {
    ImplicitField::analytic(AnalyticShape::Circle { center: [0.0, 0.0], radius: r }).unwrap()
}

fn far_away_2d() -> ImplicitField {
    ImplicitField::analytic(AnalyticShape::Circle { center: [50.0, 50.0], radius: 1.0 }).unwrap()
}

fn leaf_set(t: &Octree) -> Vec<Octant> {
    let mut v = t.leaves().to_vec();
    v.sort();
    v
}

#[test]
fn empty_geometry_gives_complete_tree() {
    let t = Octree::build_incomplete(&far_away_2d(), Aabb::symmetric_unit(2), &RefineSpec::uniform(3)).unwrap();
    assert_eq!(t.num_leaves(), 64);
    assert_eq!(t.num_nodes(), 81);
    assert!(t.build_constraints().unwrap().is_empty());
}

#[test]
fn circle_leaf_count_matches_cell_scan() {
    let r = 0.5;
    let t = Octree::build_incomplete(&circle(r), Aabb::symmetric_unit(2), &RefineSpec::uniform(3)).unwrap();
    // independent scan: cell kept if any corner or the center is outside or on the circle
    let h = 0.25;
    let mut expected = 0;
    for j in 0..8 {
        for i in 0..8 {
            let x0 = -1.0 + i as f64 * h;
            let y0 = -1.0 + j as f64 * h;
            let pts = [(x0, y0), (x0 + h, y0), (x0, y0 + h), (x0 + h, y0 + h), (x0 + 0.5 * h, y0 + 0.5 * h)];
            if pts.iter().any(|(x, y)| (x * x + y * y).sqrt() >= r) {
                expected += 1;
            }
        }
    }
    assert_eq!(t.num_leaves(), expected);
    assert!(expected < 64);
}

#[test]
fn boundary_band_reaches_target_level() {
    let f = circle(0.45);
    let spec = RefineSpec { base_level: 3, boundary_level: Some(5), regions: vec![] };
    let t = Octree::build_incomplete(&f, Aabb::symmetric_unit(2), &spec).unwrap();
    let mut crossing = 0;
    for (l, o) in t.leaves().iter().enumerate() {
        let vals: Vec<f64> = t.leaf_nodes(l).iter().map(|&n| f.value(&t.node_point(n))).collect();
        let sign_change = vals.iter().any(|v| *v < 0.0) && vals.iter().any(|v| *v > 0.0);
        if sign_change {
            crossing += 1;
            assert_eq!(o.level, 5, "leaf {o:?} crosses the surface");
        }
    }
    assert!(crossing > 0);
    assert!(t.balance_violation().is_none());
}

#[test]
fn region_refinement_is_local() {
    let spec = RefineSpec {
        base_level: 2,
        boundary_level: None,
        regions: vec![RefineRegion::Sphere { center: [0.5, 0.5, 0.0], radius: 0.1, level: 5 }],
    };
    let t = Octree::build_incomplete(&far_away_2d(), Aabb::symmetric_unit(2), &spec).unwrap();
    let c = t.locate_cell(&[3 << 19, 3 << 19, 0]).unwrap();
    assert_eq!(t.leaves()[c].level, 5);
    let far = t.locate_cell(&[0, 0, 0]).unwrap();
    assert_eq!(t.leaves()[far].level, 2);
    assert!(t.balance_violation().is_none());
}

#[test]
fn invalid_levels_are_rejected() {
    let d = Aabb::symmetric_unit(2);
    assert!(matches!(Octree::build_incomplete(&far_away_2d(), d, &RefineSpec::uniform(0)), Err(OctreeError::Level(0))));
    let spec = RefineSpec { base_level: 2, boundary_level: Some(22), regions: vec![] };
    assert!(matches!(Octree::build_incomplete(&far_away_2d(), d, &spec), Err(OctreeError::Level(22))));
}

#[test]
fn three_leaf_balance_fixture() {
    // a level-2 leaf beside two level-4 leaves; by hand, only the level-2
    // leaf splits, into four level-3 leaves
    let d = Aabb::symmetric_unit(2);
    let a = octant_at(2, [0, 0, 0]);
    let b = octant_at(4, [4, 0, 0]);
    let c = octant_at(4, [4, 1, 0]);
    let t = Octree::from_leaves(d, vec![a, b, c]).unwrap();
    assert!(t.balance_violation().is_some());
    assert!(matches!(t.build_constraints(), Err(OctreeError::Unbalanced(..))));
    let bal = t.balance_2to1(None);
    let mut expected = vec![
        octant_at(3, [0, 0, 0]),
        octant_at(3, [1, 0, 0]),
        octant_at(3, [0, 1, 0]),
        octant_at(3, [1, 1, 0]),
        b,
        c,
    ];
    expected.sort();
    assert_eq!(leaf_set(&bal), expected);
}

#[test]
fn balanced_tree_is_unchanged() {
    let d = Aabb::symmetric_unit(2);
    let mut leaves: Vec<Octant> = octant_at(1, [0, 0, 0]).children(2).collect();
    leaves.extend([octant_at(1, [1, 0, 0]), octant_at(1, [0, 1, 0]), octant_at(1, [1, 1, 0])]);
    let t = Octree::from_leaves(d, leaves).unwrap();
    assert_eq!(leaf_set(&t.balance_2to1(None)), leaf_set(&t));
}

#[test]
fn edge_hanging_node_in_2d() {
    let d = Aabb::symmetric_unit(2);
    let mut leaves: Vec<Octant> = octant_at(1, [0, 0, 0]).children(2).collect();
    leaves.push(octant_at(1, [1, 0, 0]));
    let t = Octree::from_leaves(d, leaves).unwrap();
    let map = t.build_constraints().unwrap();
    // the fine leaves put a node at the midpoint of the coarse leaf's left edge
    assert_eq!(map.len(), 1);
    let (&h, masters) = map.iter().next().unwrap();
    assert_eq!(t.node_point(h), [0.0, -0.5, 0.0]);
    let mut pts: Vec<_> = masters.iter().map(|&(m, w)| (t.node_point(m), w)).collect();
    pts.sort_by(|a, b| a.0[1].partial_cmp(&b.0[1]).unwrap());
    assert_eq!(pts, vec![([0.0, -1.0, 0.0], 0.5), ([0.0, 0.0, 0.0], 0.5)]);
}

#[test]
fn face_center_hanging_node_in_3d() {
    let d = Aabb::symmetric_unit(3);
    let mut leaves: Vec<Octant> = octant_at(1, [0, 0, 0]).children(3).collect();
    leaves.push(octant_at(1, [1, 0, 0]));
    let t = Octree::from_leaves(d, leaves).unwrap();
    let map = t.build_constraints().unwrap();
    // one face center and four edge midpoints on the shared face
    assert_eq!(map.len(), 5);
    let center = t.node_id(&[1 << 20, 1 << 19, 1 << 19]).unwrap();
    let masters = &map[&center];
    assert_eq!(masters.len(), 4);
    assert!(masters.iter().all(|&(_, w)| w == 0.25));
    for (h, m) in &map {
        if *h != center {
            assert_eq!(m.len(), 2);
            assert!(m.iter().all(|&(_, w)| w == 0.5));
        }
    }
}

#[test]
fn masked_constraints_ignore_inactive_coarse_leaves() {
    let d = Aabb::symmetric_unit(2);
    let mut leaves: Vec<Octant> = octant_at(1, [0, 0, 0]).children(2).collect();
    leaves.push(octant_at(1, [1, 0, 0]));
    let t = Octree::from_leaves(d, leaves).unwrap();
    let coarse = t.leaf_id(&octant_at(1, [1, 0, 0])).unwrap();
    let mut active = vec![true; t.num_leaves()];
    active[coarse] = false;
    assert!(t.build_constraints_masked(Some(&active)).unwrap().is_empty());
}

#[test]
fn csv_dump_lists_leaves() {
    let t = Octree::from_leaves(Aabb::symmetric_unit(2), octant_at(0, [0, 0, 0]).children(2).collect()).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert_eq!(s.lines().next(), Some("level,anchor_x,anchor_y"));
    assert_eq!(s.lines().count(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn random_trees_satisfy_invariants(
        three in any::<bool>(),
        kind in 0u8..3,
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0,
        base in 1u8..3,
        extra in 0u8..3,
    ) {
        let dim = if three { 3 } else { 2 };
        let f = random_shape(kind, dim, a, b, c);
        let top = if three { base + extra.min(2) } else { base + 1 + extra };
        let spec = RefineSpec { base_level: base, boundary_level: Some(top), regions: vec![] };
        let t = Octree::build_incomplete(&f, Aabb::symmetric_unit(dim), &spec).unwrap();
        check_invariants(&t).map_err(TestCaseError::fail)?;
    }
}
