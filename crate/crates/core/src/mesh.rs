//! Triangle soups: STL/OBJ input, rescaling, surface sampling and a
//! brute-force exact signed distance with ray-parity sign.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{self, Aabb, Vec3};
use crate::inr::{sample_narrowband, sample_uniform, InrError, TrainSample, TrainingSource};
use crate::oracle::DistanceOracle;

/// Triangles with area below this times bbox_diag^2 are dropped.
const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed input at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("mesh has no usable triangles")]
    Empty,
    #[error("mesh has zero extent")]
    ZeroExtent,
    #[error("mesh is not watertight, sign unavailable (unsigned distance {unsigned})")]
    SignUnavailable { unsigned: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Sampling(#[from] InrError),
}

impl MeshError {
    /// Distinct process exit code per failure class.
    pub fn code(&self) -> i32 {
        match self {
            MeshError::Io { .. } => 10,
            MeshError::Format { .. } => 11,
            MeshError::Empty => 12,
            MeshError::ZeroExtent => 13,
            MeshError::SignUnavailable { .. } => 14,
            MeshError::Parameter(_) => 15,
            MeshError::Sampling(_) => 16,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TriangleSoup {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
    dropped: usize,
    watertight: bool,
}

fn fmt_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Format { line, msg: msg.into() }
}

impl TriangleSoup {
    /// Welds bitwise-identical vertices, drops near-zero-area triangles and
    /// computes normals from the winding.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(MeshError::Parameter(format!("triangle {t:?} indexes past {} vertices", vertices.len())));
        }
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::Parameter("non-finite vertex".into()));
        }
        let mut weld: BTreeMap<[u64; 3], usize> = BTreeMap::new();
        let mut remap = Vec::with_capacity(vertices.len());
        let mut verts = Vec::new();
        for v in &vertices {
            let key = [v[0].to_bits(), v[1].to_bits(), v[2].to_bits()];
            let id = *weld.entry(key).or_insert_with(|| {
                verts.push(*v);
                verts.len() - 1
            });
            remap.push(id);
        }
        let (lo, hi) = bbox(triangles.iter().flat_map(|t| t.iter().map(|&i| &vertices[i])));
        let diag = geom::dist(&lo, &hi);
        let mut tris = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        let mut dropped = 0;
        for t in &triangles {
            let t = [remap[t[0]], remap[t[1]], remap[t[2]]];
            let c = geom::cross(&geom::sub(&verts[t[1]], &verts[t[0]]), &geom::sub(&verts[t[2]], &verts[t[0]]));
            let twice = geom::norm(&c);
            if 0.5 * twice < DEGENERATE_AREA * diag * diag || twice == 0.0 {
                dropped += 1;
                continue;
            }
            tris.push(t);
            normals.push(geom::scale(&c, 1.0 / twice));
            areas.push(0.5 * twice);
        }
        if tris.is_empty() {
            return Err(MeshError::Empty);
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} degenerate triangles");
        }
        let watertight = edges_paired(&tris);
        Ok(TriangleSoup { vertices: verts, triangles: tris, normals, areas, dropped, watertight })
    }

    /// STL (ASCII or binary) or OBJ, chosen by extension.
    pub fn load(path: &Path) -> Result<Self, MeshError> {
        let bytes = std::fs::read(path).map_err(|source| MeshError::Io { path: path.display().to_string(), source })?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "obj" => Self::parse_obj(&String::from_utf8_lossy(&bytes)),
            "stl" => Self::parse_stl(&bytes),
            other => Err(fmt_err(0, format!("unknown mesh extension '{other}'"))),
        }
    }

    pub fn parse_stl(bytes: &[u8]) -> Result<Self, MeshError> {
        if bytes.len() >= 84 {
            let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
            if bytes.len() == 84 + 50 * n {
                return Self::parse_binary_stl(bytes);
            }
        }
        let text = std::str::from_utf8(bytes).ok();
        match text {
            Some(t) if t.trim_start().starts_with("solid") => Self::parse_ascii_stl(t),
            _ if bytes.len() >= 84 => Err(fmt_err(0, "binary STL length does not match its triangle count")),
            _ => Err(fmt_err(0, "truncated STL")),
        }
    }

    fn parse_binary_stl(bytes: &[u8]) -> Result<Self, MeshError> {
        let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        let mut verts = Vec::with_capacity(3 * n);
        for k in 0..n {
            let rec = &bytes[84 + 50 * k..84 + 50 * (k + 1)];
            for v in 0..3 {
                let mut p = [0.0; 3];
                for (i, pi) in p.iter_mut().enumerate() {
                    let o = 12 + 12 * v + 4 * i;
                    *pi = f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
                }
                verts.push(p);
            }
        }
        let tris = (0..n).map(|k| [3 * k, 3 * k + 1, 3 * k + 2]).collect();
        Self::new(verts, tris)
    }

    fn parse_ascii_stl(text: &str) -> Result<Self, MeshError> {
        let mut verts = Vec::new();
        let mut pending = 0;
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("vertex") => {
                    let mut p = [0.0; 3];
                    for pi in &mut p {
                        *pi = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| fmt_err(ln + 1, "bad vertex"))?;
                    }
                    verts.push(p);
                    pending += 1;
                }
                Some("endloop") => {
                    if pending != 3 {
                        return Err(fmt_err(ln + 1, format!("facet with {pending} vertices")));
                    }
                    pending = 0;
                }
                _ => {}
            }
        }
        if pending != 0 {
            return Err(fmt_err(text.lines().count(), "unterminated facet"));
        }
        let tris = (0..verts.len() / 3).map(|k| [3 * k, 3 * k + 1, 3 * k + 2]).collect();
        Self::new(verts, tris)
    }

    /// `v` and `f` records; polygons are fan-triangulated, texture and
    /// normal indices ignored, negative indices count from the end.
    pub fn parse_obj(text: &str) -> Result<Self, MeshError> {
        let mut verts = Vec::new();
        let mut tris = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut p = [0.0; 3];
                    for pi in &mut p {
                        *pi = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| fmt_err(ln + 1, "bad vertex"))?;
                    }
                    verts.push(p);
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in it {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| fmt_err(ln + 1, format!("bad face index '{tok}'")))?;
                        let i = if i < 0 { verts.len() as i64 + i } else { i - 1 };
                        if i < 0 || i as usize >= verts.len() {
                            return Err(fmt_err(ln + 1, format!("face index {tok} out of range")));
                        }
                        idx.push(i as usize);
                    }
                    if idx.len() < 3 {
                        return Err(fmt_err(ln + 1, "face with fewer than 3 vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        tris.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(verts, tris)
    }

    /// Sphere of radius `r` from a subdivided icosahedron.
    pub fn icosphere(r: f64, subdivisions: usize) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vec3> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut f: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for p in v.iter_mut() {
            *p = geom::scale(p, 1.0 / geom::norm(p));
        }
        for _ in 0..subdivisions {
            let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut next = Vec::with_capacity(4 * f.len());
            for tri in &f {
                let mut m = [0; 3];
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    m[k] = *mid.entry(key).or_insert_with(|| {
                        let p = geom::scale(&geom::add(&v[a], &v[b]), 0.5);
                        v.push(geom::scale(&p, 1.0 / geom::norm(&p)));
                        v.len() - 1
                    });
                }
                next.push([tri[0], m[0], m[2]]);
                next.push([tri[1], m[1], m[0]]);
                next.push([tri[2], m[2], m[1]]);
                next.push(m);
            }
            f = next;
        }
        let v = v.iter().map(|p| geom::scale(p, r)).collect();
        Self::new(v, f).expect("icosphere is well formed")
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Triangles dropped as degenerate on construction.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bbox(self.vertices.iter())
    }

    fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Centers the bounding box in `domain` and scales uniformly so the
    /// longest box axis spans `fraction` of the domain edge.
    pub fn rescale_to_domain(&self, domain: &Aabb, fraction: f64) -> Result<Self, MeshError> {
        if !(fraction > 0.0) {
            return Err(MeshError::Parameter(format!("fraction {fraction}")));
        }
        let (lo, hi) = self.bounding_box();
        let longest = (0..3).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
        if !(longest > 0.0) {
            return Err(MeshError::ZeroExtent);
        }
        let edge = (0..domain.dim).map(|i| domain.extent(i)).fold(f64::INFINITY, f64::min);
        let s = fraction * edge / longest;
        let c = geom::scale(&geom::add(&lo, &hi), 0.5);
        let target = domain.center();
        let vertices = self.vertices.iter().map(|p| geom::add(&target, &geom::scale(&geom::sub(p, &c), s))).collect();
        let mut out = self.clone();
        out.vertices = vertices;
        out.areas.iter_mut().for_each(|a| *a *= s * s);
        Ok(out)
    }

    /// Area-weighted triangle choice, uniform barycentric placement; the
    /// normal is the host triangle's.
    pub fn sample_surface_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec3, Vec3)> {
        let pick = WeightedIndex::new(&self.areas).expect("areas are positive");
        (0..n)
            .map(|_| {
                let t = pick.sample(rng);
                let [a, b, c] = self.corners(t);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let p = geom::add(&a, &geom::add(&geom::scale(&geom::sub(&b, &a), u), &geom::scale(&geom::sub(&c, &a), v)));
                (p, self.normals[t])
            })
            .collect()
    }

    /// Unsigned distance and closest point, by scanning every triangle.
    pub fn closest_point(&self, x: &Vec3) -> (f64, Vec3, usize) {
        let mut best = (f64::INFINITY, [0.0; 3], 0);
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let q = closest_point_on_triangle(x, &a, &b, &c);
            let d2 = geom::dot(&geom::sub(x, &q), &geom::sub(x, &q));
            if d2 < best.0 {
                best = (d2, q, t);
            }
        }
        (best.0.sqrt(), best.1, best.2)
    }

    /// Signed distance (negative inside) and foot point.
    pub fn exact_signed_distance(&self, x: &Vec3) -> Result<(f64, Vec3), MeshError> {
        let (d, foot, _) = self.closest_point(x);
        if !self.watertight {
            return Err(MeshError::SignUnavailable { unsigned: d });
        }
        if d == 0.0 {
            return Ok((0.0, foot));
        }
        let s = if self.inside(x) { -d } else { d };
        Ok((s, foot))
    }

    /// Ray-crossing parity; directions that graze an edge or vertex are
    /// replaced by the next fixed direction.
    pub fn inside(&self, x: &Vec3) -> bool {
        const DIRS: [Vec3; 4] = [
            [0.5773502691896258, 0.4082482904638631, std::f64::consts::FRAC_1_SQRT_2],
            [-0.2672612419124244, 0.8017837257372732, 0.5345224838248488],
            [0.6246950475544243, -0.7808688094430304, 0.0],
            [-0.3713906763541037, -0.5570860145311556, 0.7427813527082074],
        ];
        for dir in &DIRS {
            if let Some(c) = self.crossings(x, dir) {
                return c % 2 == 1;
            }
        }
        // every direction grazed: majority over slightly perturbed origins
        let mut votes = 0;
        for k in 0..5 {
            let eps = 1e-9 * (k as f64 + 1.0);
            let y = [x[0] + eps, x[1] - 0.7 * eps, x[2] + 0.3 * eps];
            if self.crossings(&y, &DIRS[0]).is_some_and(|c| c % 2 == 1) {
                votes += 1;
            }
        }
        votes >= 3
    }

    fn crossings(&self, x: &Vec3, dir: &Vec3) -> Option<usize> {
        const GRAZE: f64 = 1e-10;
        let mut count = 0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let e1 = geom::sub(&b, &a);
            let e2 = geom::sub(&c, &a);
            let p = geom::cross(dir, &e2);
            let det = geom::dot(&e1, &p);
            let scale = geom::norm(&e1) * geom::norm(&e2);
            if det.abs() < 1e-12 * scale {
                // ray parallel to the plane: only matters if it lies in it
                let off = geom::dot(&geom::sub(x, &a), &self.normals[t]);
                if off.abs() < GRAZE * scale.sqrt() {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / det;
            let s = geom::sub(x, &a);
            let u = geom::dot(&s, &p) * inv;
            let q = geom::cross(&s, &e1);
            let v = geom::dot(dir, &q) * inv;
            let tt = geom::dot(&e2, &q) * inv;
            if tt <= 0.0 || u < -GRAZE || v < -GRAZE || u + v > 1.0 + GRAZE {
                continue;
            }
            if u < GRAZE || v < GRAZE || u + v > 1.0 - GRAZE {
                return None;
            }
            count += 1;
        }
        Some(count)
    }
}

fn bbox<'a>(pts: impl Iterator<Item = &'a Vec3>) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

fn edges_paired(tris: &[[usize; 3]]) -> bool {
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    count.values().all(|&c| c == 2)
}

/// Closest point to `p` on triangle abc (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = geom::sub(b, a);
    let ac = geom::sub(c, a);
    let ap = geom::sub(p, a);
    let d1 = geom::dot(&ab, &ap);
    let d2 = geom::dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = geom::sub(p, b);
    let d3 = geom::dot(&ab, &bp);
    let d4 = geom::dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return geom::add(a, &geom::scale(&ab, v));
    }
    let cp = geom::sub(p, c);
    let d5 = geom::dot(&ab, &cp);
    let d6 = geom::dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return geom::add(a, &geom::scale(&ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return geom::add(b, &geom::scale(&geom::sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    geom::add(a, &geom::add(&geom::scale(&ab, v), &geom::scale(&ac, w)))
}

impl DistanceOracle for TriangleSoup {
    fn dim(&self) -> usize {
        3
    }

    /// Unsigned distance when the soup is not watertight.
    fn signed_distance(&self, p: &Vec3) -> f64 {
        match self.exact_signed_distance(p) {
            Ok((s, _)) => s,
            Err(MeshError::SignUnavailable { unsigned }) => unsigned,
            Err(_) => f64::NAN,
        }
    }

    fn distance_vector(&self, p: &Vec3) -> Option<Vec3> {
        let (_, foot, _) = self.closest_point(p);
        Some(geom::sub(&foot, p))
    }

    fn normal(&self, p: &Vec3) -> Option<Vec3> {
        let (d, foot, t) = self.closest_point(p);
        if d < 1e-12 {
            return Some(self.normals[t]);
        }
        let s = if self.inside(p) { -1.0 } else { 1.0 };
        Some(geom::scale(&geom::sub(p, &foot), s / d))
    }
}

impl TrainingSource for TriangleSoup {
    fn sample_surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(Vec3, Vec3)>, InrError> {
        Ok(self.sample_surface_points(n, rng))
    }
}

/// Which pool a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Surface,
    Narrowband,
    Uniform,
}

impl SampleKind {
    fn label(self) -> &'static str {
        match self {
            SampleKind::Surface => "surface",
            SampleKind::Narrowband => "narrowband",
            SampleKind::Uniform => "uniform",
        }
    }
}

/// The three sample pools drawn from one seed.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub surface: Vec<(Vec3, Vec3)>,
    pub narrowband: Vec<TrainSample>,
    pub uniform: Vec<TrainSample>,
    pub delta: f64,
    pub seed: u64,
}

impl SampleSet {
    pub fn generate(
        soup: &TriangleSoup,
        domain: &Aabb,
        counts: [usize; 3],
        delta: f64,
        seed: u64,
    ) -> Result<Self, MeshError> {
        use rand::SeedableRng;
        if !(delta >= 0.0) {
            return Err(MeshError::Parameter(format!("delta {delta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let surface = soup.sample_surface_points(counts[0], &mut rng);
        let narrowband = sample_narrowband(soup, domain, counts[1], delta, f64::INFINITY, &mut rng)?;
        let uniform = sample_uniform(domain, counts[2], &mut rng)
            .into_iter()
            .map(|x| TrainSample { x, s: soup.signed_distance(&x), normal: None })
            .collect();
        Ok(SampleSet { surface, narrowband, uniform, delta, seed })
    }

    /// Header `x,y,z,s,nx,ny,nz,set`; missing normals are written as 0.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,z,s,nx,ny,nz,set")?;
        let row = |w: &mut W, x: &Vec3, s: f64, n: &Vec3, kind: SampleKind| {
            writeln!(w, "{},{},{},{},{},{},{},{}", x[0], x[1], x[2], s, n[0], n[1], n[2], kind.label())
        };
        for (x, n) in &self.surface {
            row(&mut w, x, 0.0, n, SampleKind::Surface)?;
        }
        for (set, kind) in [(&self.narrowband, SampleKind::Narrowband), (&self.uniform, SampleKind::Uniform)] {
            for p in set {
                row(&mut w, &p.x, p.s, &p.normal.unwrap_or([0.0; 3]), kind)?;
            }
        }
        Ok(())
    }
}
