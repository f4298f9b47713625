//! Right-preconditioned BiCGStab and restarted GMRES.

use serde::{Deserialize, Serialize};

use super::precond::{IdentityPrecond, Ilu0, Jacobi, Preconditioner};
use super::{CsrMatrix, LinalgError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrylovMethod {
    Bicgstab,
    Gmres { restart: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    None,
    Jacobi,
    Ilu0,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: KrylovMethod,
    pub preconditioner: PreconditionerKind,
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: KrylovMethod::Bicgstab,
            preconditioner: PreconditionerKind::Ilu0,
            rtol: 1e-10,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// ||b - A x|| / ||b|| recomputed from the returned solution.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Solves `A x = b` from a zero initial guess.
pub fn solve(a: &CsrMatrix, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, SolveStats), LinalgError> {
    let n = a.n_rows();
    if a.n_cols() != n || b.len() != n {
        return Err(LinalgError::Dimension(format!("matrix {}x{}, right-hand side {}", n, a.n_cols(), b.len())));
    }
    if b.iter().any(|v| !v.is_finite()) || a.values().iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let precond: Box<dyn Preconditioner> = match opts.preconditioner {
        PreconditionerKind::None => Box::new(IdentityPrecond),
        PreconditionerKind::Jacobi => Box::new(Jacobi::new(a)?),
        PreconditionerKind::Ilu0 => Box::new(Ilu0::new(a)?),
    };
    let (x, iterations) = match opts.method {
        KrylovMethod::Bicgstab => bicgstab(a, b, precond.as_ref(), opts.rtol, opts.max_iter)?,
        KrylovMethod::Gmres { restart } => gmres(a, b, precond.as_ref(), restart.max(1), opts.rtol, opts.max_iter)?,
    };
    let rel = norm(&residual(a, b, &x)) / bnorm;
    if !(rel <= opts.rtol) {
        return Err(LinalgError::NotConverged { iterations, relative_residual: rel });
    }
    Ok((x, SolveStats { iterations, relative_residual: rel }))
}

fn bicgstab(a: &CsrMatrix, b: &[f64], m: &dyn Preconditioner, rtol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), LinalgError> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let tiny = 1e-300;
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < tiny {
            return Err(LinalgError::Breakdown { method: "bicgstab", iteration: it });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut phat);
        a.mul_vec_into(&phat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv.abs() < tiny {
            return Err(LinalgError::Breakdown { method: "bicgstab", iteration: it });
        }
        alpha = rho / rv;
        // r becomes s
        axpy(&mut r, -alpha, &v);
        axpy(&mut x, alpha, &phat);
        if norm(&r) <= rtol * bnorm {
            return Ok((x, it));
        }
        m.apply(&r, &mut shat);
        a.mul_vec_into(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt < tiny {
            return Err(LinalgError::Breakdown { method: "bicgstab", iteration: it });
        }
        omega = dot(&t, &r) / tt;
        axpy(&mut x, omega, &shat);
        axpy(&mut r, -omega, &t);
        if !norm(&r).is_finite() {
            return Err(LinalgError::NonFinite);
        }
        if norm(&r) <= rtol * bnorm {
            return Ok((x, it));
        }
        if omega.abs() < tiny {
            return Err(LinalgError::Breakdown { method: "bicgstab", iteration: it });
        }
    }
    Ok((x, max_iter))
}

fn gmres(a: &CsrMatrix, b: &[f64], m: &dyn Preconditioner, restart: usize, rtol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), LinalgError> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut total = 0;
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    while total < max_iter {
        let r = residual(a, b, &x);
        let beta = norm(&r);
        if beta <= rtol * bnorm {
            return Ok((x, total));
        }
        let k_max = restart.min(max_iter - total);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k_max + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; k_max]; k_max + 1];
        let mut cs = vec![0.0; k_max];
        let mut sn = vec![0.0; k_max];
        let mut g = vec![0.0; k_max + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..k_max {
            total += 1;
            m.apply(&basis[k], &mut z);
            a.mul_vec_into(&z, &mut w);
            // modified Gram-Schmidt
            for (j, vj) in basis.iter().enumerate() {
                h[j][k] = dot(&w, vj);
                axpy(&mut w, -h[j][k], vj);
            }
            h[k + 1][k] = norm(&w);
            for j in 0..k {
                let tmp = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = tmp;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                return Err(LinalgError::Breakdown { method: "gmres", iteration: total });
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            let hk1 = h[k + 1][k];
            h[k][k] = cs[k] * h[k][k] + sn[k] * hk1;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            let happy = hk1 <= 1e-14 * beta;
            if g[k + 1].abs() <= rtol * bnorm || happy {
                break;
            }
            basis.push(w.iter().map(|v| v / hk1).collect());
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            if h[i][i] == 0.0 {
                return Err(LinalgError::Breakdown { method: "gmres", iteration: total });
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            axpy(&mut update, *yj, &basis[j]);
        }
        m.apply(&update, &mut z);
        axpy(&mut x, 1.0, &z);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let rel = norm(&residual(a, b, &x)) / bnorm;
        if rel <= rtol {
            return Ok((x, total));
        }
        if k_used < k_max && g[k_used].abs() > rtol * bnorm {
            // the Krylov space became invariant without reaching the target
            return Err(LinalgError::Breakdown { method: "gmres", iteration: total });
        }
    }
    Ok((x, total))
}
