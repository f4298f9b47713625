//! Shared fixtures and independent evaluators for the flow solver tests.
#![allow(dead_code)]

use shiftflow::fem::*;
use shiftflow::geom::Aabb;
use shiftflow::octree::*;
use shiftflow::sdf::{AnalyticShape, ImplicitField};
use shiftflow::surrogate::*;

pub fn uniform_2d(domain: Aabb, level: u8) -> Octree {
    let n = 1u32 << level;
    let mut leaves = Vec::new();
    for j in 0..n {
        for i in 0..n {
            leaves.push(octant_at(level, [i, j, 0]));
        }
    }
    Octree::from_leaves(domain, leaves).unwrap()
}

pub fn unit_square() -> Aabb {
    Aabb::new(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
}

pub fn all(t: &Octree) -> Vec<bool> {
    vec![true; t.num_leaves()]
}

/// Linear fields u = u0 + A x, p = p0 + c . x in 2D.
pub struct Linear {
    pub u0: [f64; 2],
    pub a: [[f64; 2]; 2],
    pub p0: f64,
    pub c: [f64; 2],
}

impl Linear {
    pub fn u(&self, x: &[f64]) -> [f64; 2] {
        [
            self.u0[0] + self.a[0][0] * x[0] + self.a[0][1] * x[1],
            self.u0[1] + self.a[1][0] * x[0] + self.a[1][1] * x[1],
        ]
    }
    pub fn p(&self, x: &[f64]) -> f64 {
        self.p0 + self.c[0] * x[0] + self.c[1] * x[1]
    }
    pub fn nodal(&self, t: &Octree) -> Vec<f64> {
        let mut x = Vec::new();
        for n in 0..t.num_nodes() {
            let q = t.node_point(n);
            let u = self.u(&q);
            x.extend_from_slice(&[u[0], u[1], self.p(&q)]);
        }
        x
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Straight-line evaluation of the stabilized volume residual of one
/// rectangle [x0, x0+h] x [y0, y0+h] for linear fields.
pub fn reference_element(
    lin: &Linear,
    hist: &Linear,
    corners: &[[f64; 3]],
    h: f64,
    a0: f64,
    dt: f64,
    re: f64,
    force: [f64; 2],
    damping: f64,
) -> Vec<f64> {
    let x0 = corners.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
    let y0 = corners.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
    let g = 1.0 / 3f64.sqrt();
    let pts = [0.5 - 0.5 * g, 0.5 + 0.5 * g];
    let mut out = vec![0.0; 12];
    for &sx in &pts {
        for &sy in &pts {
            let x = [x0 + sx * h, y0 + sy * h];
            let w = 0.25 * h * h;
            let u = lin.u(&x);
            let p = lin.p(&x);
            let a = lin.a;
            let hv = hist.u(&x);
            let div = a[0][0] + a[1][1];
            let k = 2.0 / h;
            let s = 4.0 / (dt * dt) + k * k * (u[0] * u[0] + u[1] * u[1]) + 36.0 / (re * re) * 2.0 * k.powi(4);
            let tm = 1.0 / s.sqrt();
            let tc = 1.0 / (tm * 2.0 * k * k);
            let mut rm = [0.0; 2];
            let mut base = [0.0; 2];
            for i in 0..2 {
                let conv = u[0] * a[i][0] + u[1] * a[i][1];
                base[i] = a0 * u[i] + hv[i] + conv + damping * u[i] - force[i];
                rm[i] = base[i] + lin.c[i];
            }
            let up = [-tm * rm[0], -tm * rm[1]];
            let pp = -tc * div;
            for (node, c) in corners.iter().enumerate() {
                // bilinear hat of this corner
                let fx = 1.0 - (x[0] - c[0]).abs() / h;
                let fy = 1.0 - (x[1] - c[1]).abs() / h;
                let sgx = if c[0] > x[0] { 1.0 } else { -1.0 } / h;
                let sgy = if c[1] > x[1] { 1.0 } else { -1.0 } / h;
                let na = fx * fy;
                let gna = [sgx * fy, fx * sgy];
                let u_g = u[0] * gna[0] + u[1] * gna[1];
                let up_g = up[0] * gna[0] + up[1] * gna[1];
                for i in 0..2 {
                    let mut r = na * base[i];
                    for j in 0..2 {
                        r += (a[i][j] + a[j][i]) / re * gna[j];
                    }
                    r -= p * gna[i];
                    r -= u_g * up[i];
                    r += na * (a[i][0] * up[0] + a[i][1] * up[1]);
                    r -= up[i] * up_g;
                    r -= pp * gna[i];
                    out[node * 3 + i] += w * r;
                }
                out[node * 3 + 2] += w * (na * div - up_g);
            }
        }
    }
    out
}

/// 2x2 mesh of [-1, 1]^2 with one shifted face on the lower-left leaf and
/// a generic state; the cross-stress term is off so the Jacobian is exact.
pub fn two_by_two_with_face() -> (FlowProblem, Vec<f64>) {
    let t = uniform_2d(Aabb::symmetric_unit(2), 1);
    let field = ImplicitField::analytic(AnalyticShape::Circle { center: [-1.3, -0.4], radius: 0.2 }).unwrap();
    let leaf = t.leaf_id(&octant_at(1, [0, 0, 0])).unwrap();
    let sub = t.leaves()[leaf];
    let boundary = SurrogateBoundary { faces: vec![SurrogateFace { leaf, face: 0, sub }], candidate_faces: 1, reclassified: 0 };
    let cache = boundary_gauss_distance_vectors(&t, &boundary, &field, 2, 1e-7).unwrap();
    let params = SolverParams { re: 20.0, cross_stress: false, immersed_velocity: [0.2, -0.1, 0.0], ..Default::default() };
    let prob = FlowProblem::new(t.clone(), all(&t), Some((&boundary, &cache)), params, BoundaryConditions::Natural).unwrap();
    assert_eq!(prob.num_face_points(), 2);
    let x: Vec<f64> = (0..prob.num_dofs()).map(|k| ((k as f64) * 0.731).sin() * 0.8).collect();
    (prob, x)
}

pub fn poiseuille(level: u8) -> (FlowProblem, FlowState) {
    let t = uniform_2d(Aabb::symmetric_unit(2), level);
    let params = SolverParams { re: 10.0, ..Default::default() };
    let prob = FlowProblem::new(t.clone(), all(&t), None, params, BoundaryConditions::Channel { u_max: 1.0 }).unwrap();
    let mut s = prob.initial_state(0.1);
    let (x, hist) = prob.solve_nonlinear(&s.x, &TimeTerms::steady(s.x.len())).unwrap();
    assert!(hist.last().unwrap() < &1e-8);
    s.x = x;
    (prob, s)
}

/// Relative L2 error of the steady channel solution against 1 - y^2 on
/// three vertical lines.
pub fn channel_profile_error(level: u8) -> f64 {
    let (prob, s) = poiseuille(level);
    let mut num = 0.0;
    let mut den = 0.0;
    for &xc in &[-0.5, 0.0, 0.5] {
        for k in 0..=40 {
            let y = -1.0 + k as f64 * 0.05;
            let (u, _) = prob.sample(&s, &[xc, y, 0.0]).unwrap();
            let exact = 1.0 - y * y;
            num += (u[0] - exact).powi(2) + u[1].powi(2);
            den += exact * exact;
        }
    }
    (num / den).sqrt()
}

/// Largest column-wise relative difference between the assembled Jacobian
/// and central differences of the residual.
pub fn jacobian_fd_error(prob: &FlowProblem, x: &[f64]) -> f64 {
    let hist: Vec<f64> = x.iter().map(|v| -0.5 * v).collect();
    let tt = TimeTerms { a0: 10.0, dt: Some(0.1), hist };
    let (j, _) = prob.assemble(x, &tt);
    let n = x.len();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for col in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[col] += eps;
        xm[col] -= eps;
        let rp = prob.residual(&xp, &tt);
        let rm = prob.residual(&xm, &tt);
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let jc: Vec<f64> = (0..n).map(|row| j.get(row, col)).collect();
        worst = worst.max(rel_err(&jc, &fd));
    }
    worst
}

/// Relative error of the assembled single-element residual against
/// `reference_element` for linear fields on one 0.25 x 0.25 leaf.
pub fn single_element_error() -> f64 {
    let dom = Aabb::new(&[0.2, -0.1], &[0.45, 0.15]).unwrap();
    let t = uniform_2d(dom, 0);
    let lin = Linear { u0: [0.4, -0.3], a: [[1.3, -0.7], [0.5, -0.2]], p0: 0.8, c: [-1.1, 2.4] };
    let hist_field = Linear { u0: [-0.5, 0.9], a: [[0.3, 0.2], [-0.4, 0.6]], p0: 0.0, c: [0.0, 0.0] };
    let (re, dt, damping, force) = (50.0, 0.02, 0.7, [0.3, -1.2]);
    let params = SolverParams { re, damping, force: [force[0], force[1], 0.0], ..Default::default() };
    let prob = FlowProblem::new(t.clone(), all(&t), None, params, BoundaryConditions::Natural).unwrap();
    let x = lin.nodal(&t);
    let hist = hist_field.nodal(&t);
    let a0 = 1.5 / dt;
    let tt = TimeTerms { a0, dt: Some(dt), hist };
    let r = prob.residual(&x, &tt);
    let nodes = t.leaf_nodes(0);
    let corners: Vec<[f64; 3]> = nodes.iter().map(|&n| t.node_point(n)).collect();
    let reference = reference_element(&lin, &hist_field, &corners, 0.25, a0, dt, re, force, damping);
    let mut got = vec![0.0; 12];
    for (a, &n) in nodes.iter().enumerate() {
        got[a * 3..a * 3 + 3].copy_from_slice(&r[n * 3..n * 3 + 3]);
    }
    rel_err(&got, &reference)
}
