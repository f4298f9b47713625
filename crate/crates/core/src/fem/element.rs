//! Multilinear element kernels: stabilized volume terms and shifted
//! Dirichlet face terms, generic over plain or dual arithmetic.

use super::dual::Real;
use crate::geom::Vec3;

/// Values and physical gradients of the 2^dim corner shape functions.
#[derive(Clone, Debug)]
pub struct Shape {
    pub n: [f64; 8],
    pub grad: [[f64; 3]; 8],
}

/// Shape functions of an axis-aligned cell of edge `h` at reference point
/// `xi` in [-1, 1]^dim; corner c has coordinate bit i set on the max side of
/// axis i.
pub fn shape(dim: usize, xi: &[f64; 3], h: f64) -> Shape {
    let mut n = [0.0; 8];
    let mut grad = [[0.0; 3]; 8];
    for c in 0..1usize << dim {
        let mut f = [0.0; 3];
        let mut s = [0.0; 3];
        for i in 0..dim {
            s[i] = if c >> i & 1 == 1 { 1.0 } else { -1.0 };
            f[i] = 0.5 * (1.0 + s[i] * xi[i]);
        }
        n[c] = (0..dim).map(|i| f[i]).product();
        for i in 0..dim {
            let others: f64 = (0..dim).filter(|&j| j != i).map(|j| f[j]).product();
            grad[c][i] = 0.5 * s[i] * others * 2.0 / h;
        }
    }
    Shape { n, grad }
}

/// Stabilization parameters from the element metric `gm` (G_ij) and `gv`
/// (g_i); `dt` None drops the time term.
pub fn compute_tau<T: Real>(dt: Option<f64>, u: &[T; 3], gm: &[[f64; 3]; 3], gv: &Vec3, re: f64, c_m: f64, dim: usize) -> (T, T) {
    let mut s = T::cst(dt.map_or(0.0, |dt| 4.0 / (dt * dt)));
    let mut gg = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += u[i] * u[j] * gm[i][j];
            gg += gm[i][j] * gm[i][j];
        }
    }
    s += T::cst(c_m / (re * re) * gg);
    let tau_m = T::cst(1.0) / s.sqrt();
    let g2: f64 = (0..dim).map(|i| gv[i] * gv[i]).sum();
    let tau_c = T::cst(1.0) / (tau_m * g2);
    (tau_m, tau_c)
}

/// Metric tensors of a cube of edge `h`: G = (2/h)^2 I, g_i = 2/h.
pub fn cube_metric(dim: usize, h: f64) -> ([[f64; 3]; 3], Vec3) {
    let mut gm = [[0.0; 3]; 3];
    let mut gv = [0.0; 3];
    for i in 0..dim {
        gm[i][i] = (2.0 / h) * (2.0 / h);
        gv[i] = 2.0 / h;
    }
    (gm, gv)
}

/// Coefficients shared by every element of one assembly.
#[derive(Clone, Debug)]
pub struct Physics {
    pub re: f64,
    pub c_m: f64,
    pub gamma: f64,
    /// du/dt ~ a0 u + history.
    pub a0: f64,
    /// Time step in the stabilization parameter (None when steady).
    pub dt: Option<f64>,
    pub force: Vec3,
    /// Linear damping: f = force - damping u.
    pub damping: f64,
    /// Include the fine-scale cross-stress term in the residual.
    pub cross_stress: bool,
}

/// Volume quadrature point of one element.
#[derive(Clone, Debug)]
pub struct VolumePoint {
    pub shape: Shape,
    /// Quadrature weight times Jacobian determinant.
    pub w: f64,
    /// History part of the discrete time derivative.
    pub hist: Vec3,
}

/// Quadrature point on a surrogate face.
#[derive(Clone, Debug)]
pub struct FacePoint {
    pub shape: Shape,
    pub w: f64,
    /// Outward normal of the fluid domain.
    pub normal: Vec3,
    /// Vector to the closest point of the true boundary.
    pub d: Vec3,
    /// Dirichlet velocity on the true boundary.
    pub ud: Vec3,
}

struct Fields<T> {
    u: [T; 3],
    p: T,
    gu: [[T; 3]; 3],
    gp: [T; 3],
}

fn interpolate<T: Real>(dim: usize, s: &Shape, x: &[T]) -> Fields<T> {
    let nf = dim + 1;
    let z = T::cst(0.0);
    let mut f = Fields { u: [z; 3], p: z, gu: [[z; 3]; 3], gp: [z; 3] };
    for a in 0..1usize << dim {
        let xa = &x[a * nf..(a + 1) * nf];
        for i in 0..dim {
            f.u[i] += xa[i] * s.n[a];
            for j in 0..dim {
                f.gu[i][j] += xa[i] * s.grad[a][j];
            }
        }
        f.p += xa[dim] * s.n[a];
        for j in 0..dim {
            f.gp[j] += xa[dim] * s.grad[a][j];
        }
    }
    f
}

/// Adds the Galerkin and fine-scale volume terms of one element to `out`.
/// The viscous part of the momentum residual vanishes for multilinear
/// fields and is omitted.
pub fn volume_residual<T: Real>(dim: usize, h: f64, points: &[VolumePoint], x: &[T], ph: &Physics, out: &mut [T]) {
    let nf = dim + 1;
    let nc = 1usize << dim;
    let (gm, gv) = cube_metric(dim, h);
    let z = T::cst(0.0);
    let inv_re = 1.0 / ph.re;
    for gp in points {
        let s = &gp.shape;
        let f = interpolate(dim, s, x);
        let mut dudt = [z; 3];
        let mut conv = [z; 3];
        let mut rm = [z; 3];
        let mut div = z;
        for i in 0..dim {
            dudt[i] = f.u[i] * ph.a0 + gp.hist[i];
            for j in 0..dim {
                conv[i] += f.u[j] * f.gu[i][j];
            }
            let force = f.u[i] * ph.damping - T::cst(ph.force[i]);
            rm[i] = dudt[i] + conv[i] + f.gp[i] + force;
            div += f.gu[i][i];
        }
        let (tau_m, tau_c) = compute_tau(ph.dt, &f.u, &gm, &gv, ph.re, ph.c_m, dim);
        let mut uf = [z; 3];
        for i in 0..dim {
            uf[i] = -(tau_m * rm[i]);
        }
        let pf = -(tau_c * div);
        let ufd = [uf[0].detach(), uf[1].detach(), uf[2].detach()];
        let mut eps = [[z; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                eps[i][j] = (f.gu[i][j] + f.gu[j][i]) * 0.5;
            }
        }
        for a in 0..nc {
            let na = s.n[a];
            let ga = &s.grad[a];
            let mut u_dot_ga = z;
            for j in 0..dim {
                u_dot_ga += f.u[j] * ga[j];
            }
            for i in 0..dim {
                let mut r = (dudt[i] + conv[i] + f.u[i] * ph.damping + T::cst(-ph.force[i])) * na;
                let mut visc = z;
                for j in 0..dim {
                    visc += eps[i][j] * ga[j];
                }
                r += visc * (2.0 * inv_re);
                r += -(f.p * ga[i]);
                // fine-scale terms
                r += -(u_dot_ga * uf[i]);
                let mut adv = z;
                for j in 0..dim {
                    adv += uf[j] * f.gu[i][j];
                }
                r += adv * na;
                if ph.cross_stress {
                    let mut cs = z;
                    for j in 0..dim {
                        cs += ufd[i] * ufd[j] * ga[j];
                    }
                    r += -cs;
                }
                r += -(pf * ga[i]);
                out[a * nf + i] += r * gp.w;
            }
            let mut rc = div * na;
            for j in 0..dim {
                rc += -(uf[j] * ga[j]);
            }
            out[a * nf + dim] += rc * gp.w;
        }
    }
}

/// Adds the shifted-boundary consistency, adjoint-consistency and penalty
/// terms of the faces of one element to `out`. `h` is the element size.
pub fn face_residual<T: Real>(dim: usize, h: f64, points: &[FacePoint], x: &[T], ph: &Physics, out: &mut [T]) {
    let nf = dim + 1;
    let nc = 1usize << dim;
    let z = T::cst(0.0);
    let inv_re = 1.0 / ph.re;
    let pen = ph.gamma * inv_re / h;
    for fp in points {
        let s = &fp.shape;
        let f = interpolate(dim, s, x);
        let n = &fp.normal;
        // shifted Dirichlet mismatch u + grad u . d - u_d
        let mut g = [z; 3];
        for i in 0..dim {
            g[i] = f.u[i] + T::cst(-fp.ud[i]);
            for j in 0..dim {
                g[i] += f.gu[i][j] * fp.d[j];
            }
        }
        // traction (2/Re eps(u) - p I) n
        let mut tr = [z; 3];
        for i in 0..dim {
            tr[i] = -(f.p * n[i]);
            for j in 0..dim {
                tr[i] += (f.gu[i][j] + f.gu[j][i]) * (inv_re * n[j]);
            }
        }
        let mut n_dot_g = z;
        for i in 0..dim {
            n_dot_g += g[i] * n[i];
        }
        for a in 0..nc {
            let na = s.n[a];
            let ga = &s.grad[a];
            let ga_n: f64 = (0..dim).map(|j| ga[j] * n[j]).sum();
            let ga_d: f64 = (0..dim).map(|j| ga[j] * fp.d[j]).sum();
            let mut ga_g = z;
            for j in 0..dim {
                ga_g += g[j] * ga[j];
            }
            for i in 0..dim {
                let mut r = -(tr[i] * na);
                r += -((g[i] * ga_n + ga_g * n[i]) * inv_re);
                r += g[i] * ((na + ga_d) * pen);
                out[a * nf + i] += r * fp.w;
            }
            out[a * nf + dim] += -(n_dot_g * (na * inv_re * fp.w));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_functions_partition_unity() {
        for dim in [2, 3] {
            let s = shape(dim, &[0.3, -0.6, 0.1], 0.5);
            let sum: f64 = s.n.iter().take(1 << dim).sum();
            assert!((sum - 1.0).abs() < 1e-15);
            for i in 0..dim {
                let g: f64 = s.grad.iter().take(1 << dim).map(|g| g[i]).sum();
                assert!(g.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tau_limits() {
        let (gm, gv) = cube_metric(2, 0.1);
        let (tm, _) = compute_tau(Some(0.01), &[0.0; 3], &gm, &gv, f64::INFINITY, 36.0, 2);
        assert!((tm - 0.005).abs() < 1e-15);
        let mut prev = 0.0;
        for re in [1.0, 2.0, 4.0, 8.0] {
            let (tm, _): (f64, f64) = compute_tau(Some(0.01), &[0.0; 3], &gm, &gv, re, 36.0, 2);
            assert!(tm > prev);
            prev = tm;
        }
    }
}
