//! Jacobi and zero-fill incomplete LU preconditioners.

use super::{CsrMatrix, LinalgError};

pub trait Preconditioner {
    /// z = M^{-1} r
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPrecond;

impl Preconditioner for IdentityPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .enumerate()
            .map(|(i, d)| if d != 0.0 && d.is_finite() { Ok(1.0 / d) } else { Err(LinalgError::ZeroPivot { row: i }) })
            .collect::<Result<_, _>>()?;
        Ok(Jacobi { inv_diag })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * d;
        }
    }
}

/// ILU(0): L and U share the sparsity pattern of A; L has a unit diagonal.
pub struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let n = a.n_rows();
        if n != a.n_cols() {
            return Err(LinalgError::Dimension(format!("ILU0 needs a square matrix, got {}x{}", n, a.n_cols())));
        }
        let mut lu = a.clone();
        let mut diag_pos = Vec::with_capacity(n);
        for i in 0..n {
            diag_pos.push(lu.find(i, i).ok_or(LinalgError::ZeroPivot { row: i })?);
        }
        let row_ptr = lu.row_ptr().to_vec();
        let col_idx = lu.col_idx().to_vec();
        // position of column j within the current row, or usize::MAX
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (row_ptr[i], row_ptr[i + 1]);
            for p in start..end {
                pos[col_idx[p]] = p;
            }
            for p in start..end {
                let k = col_idx[p];
                if k >= i {
                    break;
                }
                let pivot = lu.values()[diag_pos[k]];
                let lik = lu.values()[p] / pivot;
                lu.values_mut()[p] = lik;
                for q in diag_pos[k] + 1..row_ptr[k + 1] {
                    let j = col_idx[q];
                    if pos[j] != usize::MAX {
                        let ukj = lu.values()[q];
                        lu.values_mut()[pos[j]] -= lik * ukj;
                    }
                }
            }
            let d = lu.values()[diag_pos[i]];
            if d == 0.0 || !d.is_finite() {
                return Err(LinalgError::ZeroPivot { row: i });
            }
            for p in start..end {
                pos[col_idx[p]] = usize::MAX;
            }
        }
        Ok(Ilu0 { lu, diag_pos })
    }
}

impl Preconditioner for Ilu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        let rp = self.lu.row_ptr();
        let ci = self.lu.col_idx();
        let v = self.lu.values();
        for i in 0..n {
            let mut s = r[i];
            for p in rp[i]..self.diag_pos[i] {
                s -= v[p] * z[ci[p]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for p in self.diag_pos[i] + 1..rp[i + 1] {
                s -= v[p] * z[ci[p]];
            }
            z[i] = s / v[self.diag_pos[i]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TripletBuilder;

    #[test]
    fn ilu0_of_tridiagonal_is_exact() {
        // no fill-in for a tridiagonal matrix, so ILU0 is the full LU
        let n = 6;
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 4.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -2.0);
            }
        }
        let a = t.build();
        let m = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let mut x = vec![0.0; n];
        m.apply(&b, &mut x);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut t = TripletBuilder::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(1, 0, 1.0);
        let a = t.build();
        assert!(matches!(Ilu0::new(&a), Err(LinalgError::ZeroPivot { row: 1 })));
        assert!(matches!(Jacobi::new(&a), Err(LinalgError::ZeroPivot { row: 1 })));
    }
}
