use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftflow::geom::{self, Aabb, Vec3};
use shiftflow::mesh::*;
use shiftflow::oracle::DistanceOracle;

/// Axis-aligned box as 12 outward-wound triangles.
fn box_mesh(lo: Vec3, hi: Vec3) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let v: Vec<Vec3> = (0..8)
        .map(|c| [if c & 1 == 1 { hi[0] } else { lo[0] }, if c & 2 == 2 { hi[1] } else { lo[1] }, if c & 4 == 4 { hi[2] } else { lo[2] }])
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let mut t = Vec::new();
    for q in quads {
        t.push([q[0], q[1], q[2]]);
        t.push([q[0], q[2], q[3]]);
    }
    (v, t)
}

fn unit_cube() -> TriangleSoup {
    let (v, t) = box_mesh([-0.5; 3], [0.5; 3]);
    TriangleSoup::new(v, t).unwrap()
}

fn ascii_stl(v: &[Vec3], t: &[[usize; 3]]) -> String {
    let mut s = String::from("solid cube\n");
    for tri in t {
        s += "  facet normal 0 0 0\n    outer loop\n";
        for &i in tri {
            s += &format!("      vertex {} {} {}\n", v[i][0], v[i][1], v[i][2]);
        }
        s += "    endloop\n  endfacet\n";
    }
    s + "endsolid cube\n"
}

fn binary_stl(v: &[Vec3], t: &[[usize; 3]]) -> Vec<u8> {
    let mut b = vec![0u8; 80];
    b.extend((t.len() as u32).to_le_bytes());
    for tri in t {
        b.extend([0u8; 12]);
        for &i in tri {
            for c in v[i] {
                b.extend((c as f32).to_le_bytes());
            }
        }
        b.extend([0u8; 2]);
    }
    b
}

#[test]
fn ascii_and_binary_stl_cube() {
    let (v, t) = box_mesh([-0.5; 3], [0.5; 3]);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("cube.stl");
    std::fs::write(&a, ascii_stl(&v, &t)).unwrap();
    let soup = TriangleSoup::load(&a).unwrap();
    assert_eq!(soup.num_triangles(), 12);
    assert_eq!(soup.bounding_box(), ([-0.5; 3], [0.5; 3]));
    assert!(soup.is_watertight());
    for n in soup.normals() {
        assert!((geom::norm(n) - 1.0).abs() < 1e-12);
    }
    let b = dir.path().join("cube_bin.STL");
    std::fs::write(&b, binary_stl(&v, &t)).unwrap();
    let soup = TriangleSoup::load(&b).unwrap();
    assert_eq!(soup.num_triangles(), 12);
    assert!(soup.is_watertight());
}

#[test]
fn truncated_binary_stl_is_a_format_error() {
    let (v, t) = box_mesh([-0.5; 3], [0.5; 3]);
    let mut b = binary_stl(&v, &t);
    b.truncate(b.len() - 20);
    assert!(matches!(TriangleSoup::parse_stl(&b), Err(MeshError::Format { .. })));
    assert!(matches!(TriangleSoup::parse_stl(&b[..40]), Err(MeshError::Format { .. })));
}

#[test]
fn load_errors_are_distinct() {
    let missing = TriangleSoup::load(std::path::Path::new("/nonexistent/mesh.obj")).unwrap_err();
    let malformed = TriangleSoup::parse_obj("v 0 0 0\nf 1 2 3\n").unwrap_err();
    let empty = TriangleSoup::parse_obj("# nothing\n").unwrap_err();
    let codes = [missing.code(), malformed.code(), empty.code()];
    assert!(matches!(missing, MeshError::Io { .. }));
    assert!(matches!(malformed, MeshError::Format { line: 2, .. }));
    assert!(matches!(empty, MeshError::Empty));
    assert!(codes[0] != codes[1] && codes[1] != codes[2] && codes[0] != codes[2]);
}

#[test]
fn obj_zero_area_triangle_is_dropped() {
    let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n";
    let soup = TriangleSoup::parse_obj(obj).unwrap();
    assert_eq!(soup.num_triangles(), 1);
    assert_eq!(soup.dropped(), 1);
    // quads and slash indices
    let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 -1\n";
    assert_eq!(TriangleSoup::parse_obj(quad).unwrap().num_triangles(), 2);
}

#[test]
fn rescaling() {
    let (v, t) = box_mesh([0.0; 3], [2.0; 3]);
    let soup = TriangleSoup::new(v, t).unwrap();
    let r = soup.rescale_to_domain(&Aabb::symmetric_unit(3), 0.5).unwrap();
    let (lo, hi) = r.bounding_box();
    assert_eq!((lo, hi), ([-0.5; 3], [0.5; 3]));
    let again = r.rescale_to_domain(&Aabb::symmetric_unit(3), 0.5).unwrap();
    assert_eq!(again.vertices(), r.vertices());
    // a cluster of coincident points leaves no usable triangle
    assert!(TriangleSoup::new(vec![[0.3; 3]; 3], vec![[0, 1, 2]]).is_err());
}

#[test]
fn surface_samples() {
    let tri = TriangleSoup::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.2, 0.9, 0.3]], vec![[0, 1, 2]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = tri.vertices().to_vec();
    for (p, _) in tri.sample_surface_points(100, &mut rng) {
        // barycentric coordinates from the normal equations
        let e1 = geom::sub(&v[1], &v[0]);
        let e2 = geom::sub(&v[2], &v[0]);
        let r = geom::sub(&p, &v[0]);
        let (a, b, c) = (geom::dot(&e1, &e1), geom::dot(&e1, &e2), geom::dot(&e2, &e2));
        let (d, e) = (geom::dot(&r, &e1), geom::dot(&r, &e2));
        let det = a * c - b * b;
        let u = (c * d - b * e) / det;
        let w = (a * e - b * d) / det;
        assert!(u >= -1e-12 && w >= -1e-12 && u + w <= 1.0 + 1e-12);
        let back = geom::add(&v[0], &geom::add(&geom::scale(&e1, u), &geom::scale(&e2, w)));
        assert!(geom::dist(&back, &p) < 1e-12);
    }
    let cube = unit_cube();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = cube.sample_surface_points(1000, &mut rng);
    for (p, n) in &pts {
        let (s, _) = cube.exact_signed_distance(p).unwrap();
        assert!(s.abs() < 1e-12);
        // normal of an axis face points along the coordinate at ±0.5
        let axis = (0..3).find(|&i| n[i].abs() > 0.5).unwrap();
        assert!((p[axis] - 0.5 * n[axis]).abs() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert_eq!(cube.sample_surface_points(1000, &mut rng), pts);
}

#[test]
fn narrowband_samples() {
    let sphere = TriangleSoup::icosphere(0.5, 3);
    let d = Aabb::symmetric_unit(3);
    let set = SampleSet::generate(&sphere, &d, [10, 500, 20], 0.01, 3).unwrap();
    assert_eq!(set.narrowband.len(), 500);
    for p in &set.narrowband {
        let (s, _) = sphere.exact_signed_distance(&p.x).unwrap();
        assert!(s.abs() <= 0.01);
        assert_eq!(s, p.s);
    }
    assert!(set.uniform.iter().all(|p| d.contains(&p.x)));
    let flat = SampleSet::generate(&sphere, &d, [0, 50, 0], 0.0, 3).unwrap();
    assert!(flat.narrowband.iter().all(|p| p.s.abs() < 1e-12));
    let again = SampleSet::generate(&sphere, &d, [10, 500, 20], 0.01, 3).unwrap();
    assert_eq!(again.narrowband, set.narrowband);
    assert_eq!(again.uniform, set.uniform);

    // a huge band around a thin plate throws almost every offset out of the domain
    let (v, t) = box_mesh([-0.5, -0.5, -0.005], [0.5, 0.5, 0.005]);
    let plate = TriangleSoup::new(v, t).unwrap();
    let (lo, hi) = plate.bounding_box();
    let huge = 10.0 * geom::dist(&lo, &hi);
    assert!(SampleSet::generate(&plate, &d, [0, 200, 0], huge, 1).is_err());
}

#[test]
fn uniform_samples() {
    let d = Aabb::symmetric_unit(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    assert!(shiftflow::inr::sample_uniform(&d, 0, &mut rng).is_empty());
    let pts = shiftflow::inr::sample_uniform(&d, 100_000, &mut rng);
    for axis in 0..2 {
        let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / pts.len() as f64;
        assert!(mean.abs() < 0.02);
    }
    assert!(pts.iter().all(|p| p[2] == 0.0));
}

#[test]
fn cube_oracle_values() {
    let cube = unit_cube();
    assert_eq!(cube.exact_signed_distance(&[0.0; 3]).unwrap().0, -0.5);
    assert_eq!(cube.exact_signed_distance(&[1.0, 0.0, 0.0]).unwrap().0, 0.5);
    let (s, foot) = cube.exact_signed_distance(&[1.0, 1.0, 0.2]).unwrap();
    assert!((s - 0.5f64.hypot(0.5)).abs() < 1e-15);
    assert_eq!(foot, [0.5, 0.5, 0.2]);
}

#[test]
fn icosphere_distance_within_tessellation_bound() {
    let sphere = TriangleSoup::icosphere(1.0, 3);
    assert_eq!(sphere.num_triangles(), 1280);
    assert!(sphere.is_watertight());
    // every facet plane sits between the inscribed radius and 1
    let r_in = sphere
        .triangles()
        .iter()
        .zip(sphere.normals())
        .map(|(t, n)| geom::dot(&sphere.vertices()[t[0]], n))
        .fold(f64::INFINITY, f64::min);
    assert!(r_in > 0.99 && r_in < 1.0);
    let (s, _) = sphere.exact_signed_distance(&[2.0, 0.0, 0.0]).unwrap();
    assert!(s >= 1.0 - 1e-12 && s <= 2.0 - r_in + 1e-12, "s = {s}, bound {}", 2.0 - r_in);
    let (s, _) = sphere.exact_signed_distance(&[0.1, 0.0, 0.0]).unwrap();
    assert!(s < 0.0 && -s >= r_in - 0.1 - 1e-12 && -s <= 0.9 + 1e-12);
}

#[test]
fn open_box_has_no_sign() {
    let (v, mut t) = box_mesh([-0.5; 3], [0.5; 3]);
    t.truncate(10);
    let soup = TriangleSoup::new(v, t).unwrap();
    assert!(!soup.is_watertight());
    match soup.exact_signed_distance(&[0.0; 3]) {
        Err(MeshError::SignUnavailable { unsigned }) => assert_eq!(unsigned, 0.5),
        other => panic!("{other:?}"),
    }
}

#[test]
fn sample_csv_layout() {
    let sphere = TriangleSoup::icosphere(0.5, 1);
    let set = SampleSet::generate(&sphere, &Aabb::symmetric_unit(3), [3, 4, 5], 0.02, 0).unwrap();
    let mut out = Vec::new();
    set.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y,z,s,nx,ny,nz,set");
    assert_eq!(lines.len(), 13);
    assert!(lines[1].ends_with(",surface") && lines[4].ends_with(",narrowband") && lines[12].ends_with(",uniform"));
}

/// Independent point-triangle distance: plane projection when it lands
/// inside, otherwise the nearest of the three edges.
fn naive_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let n = geom::cross(&geom::sub(b, a), &geom::sub(c, a));
    let n = geom::scale(&n, 1.0 / geom::norm(&n));
    let h = geom::dot(&geom::sub(p, a), &n);
    let q = geom::sub(p, &geom::scale(&n, h));
    let edge_side = |u: &Vec3, v: &Vec3| geom::dot(&geom::cross(&geom::sub(v, u), &geom::sub(&q, u)), &n) >= 0.0;
    if edge_side(a, b) && edge_side(b, c) && edge_side(c, a) {
        return h.abs();
    }
    let seg = |u: &Vec3, v: &Vec3| {
        let e = geom::sub(v, u);
        let t = (geom::dot(&geom::sub(p, u), &e) / geom::dot(&e, &e)).clamp(0.0, 1.0);
        geom::dist(p, &geom::add(u, &geom::scale(&e, t)))
    };
    seg(a, b).min(seg(b, c)).min(seg(c, a))
}

#[test]
fn brute_force_matches_independent_scan() {
    let sphere = TriangleSoup::icosphere(0.6, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut best = f64::INFINITY;
        for t in sphere.triangles().iter().rev() {
            let v = sphere.vertices();
            best = best.min(naive_triangle_distance(&p, &v[t[0]], &v[t[1]], &v[t[2]]));
        }
        let (s, foot) = sphere.exact_signed_distance(&p).unwrap();
        assert!((s.abs() - best).abs() < 1e-12, "{} vs {best}", s.abs());
        // the foot point is on the surface
        let (sf, _) = sphere.exact_signed_distance(&foot).unwrap();
        assert!(sf.abs() <= 1e-9 * 1.2 * 3f64.sqrt());
        // sign agrees with the sphere wherever the tessellation cannot matter
        let r = geom::norm(&p);
        if r < 0.55 {
            assert!(s < 0.0);
        } else if r > 0.6 {
            assert!(s > 0.0);
        }
    }
}

#[test]
fn oracle_trait_on_soup() {
    let cube = unit_cube();
    let p = [0.2, 0.1, 0.9];
    assert_eq!(cube.signed_distance(&p), 0.4);
    let d = cube.distance_vector(&p).unwrap();
    assert!(geom::dist(&d, &[0.0, 0.0, -0.4]) < 1e-15);
    for q in [p, [0.2, 0.1, 0.3]] {
        let n = cube.normal(&q).unwrap();
        assert!(geom::dist(&n, &[0.0, 0.0, 1.0]) < 1e-15, "{n:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cube_sign_matches_box_test(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let cube = unit_cube();
        let (s, _) = cube.exact_signed_distance(&[x, y, z]).unwrap();
        let inside = x.abs() < 0.5 && y.abs() < 0.5 && z.abs() < 0.5;
        prop_assert_eq!(s < 0.0, inside);
    }
}
