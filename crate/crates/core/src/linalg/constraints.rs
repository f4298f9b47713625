//! Elimination of Dirichlet and linear (hanging-node) constraints.
//!
//! A full vector is written `x = C y + g`, with `y` the free unknowns. The
//! reduced operator is `C^T A C` and the reduced right-hand side
//! `C^T (b - A g)`.

use std::collections::BTreeMap;

use super::{CsrMatrix, LinalgError, TripletBuilder};

#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// x_i = value
    Dirichlet(f64),
    /// x_i = sum_k w_k x_{m_k}
    Linear(Vec<(usize, f64)>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSet {
    n: usize,
    entries: BTreeMap<usize, Constraint>,
}

/// Constraint map resolved down to free unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    n: usize,
    /// Full index of each free unknown.
    free: Vec<usize>,
    /// For every full index: weights on free unknowns (by reduced index).
    rows: Vec<Vec<(usize, f64)>>,
    /// Constant part `g`.
    offset: Vec<f64>,
}

impl ConstraintSet {
    pub fn new(n: usize) -> Self {
        ConstraintSet { n, entries: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_constrained(&self) -> usize {
        self.entries.len()
    }

    pub fn set_dirichlet(&mut self, dof: usize, value: f64) {
        assert!(dof < self.n);
        self.entries.insert(dof, Constraint::Dirichlet(value));
    }

    pub fn set_linear(&mut self, dof: usize, masters: Vec<(usize, f64)>) {
        assert!(dof < self.n && masters.iter().all(|&(m, _)| m < self.n));
        self.entries.insert(dof, Constraint::Linear(masters));
    }

    pub fn get(&self, dof: usize) -> Option<&Constraint> {
        self.entries.get(&dof)
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.entries.contains_key(&dof)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Constraint)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Same constraints with all Dirichlet values set to zero, as needed
    /// for Newton increments.
    pub fn homogeneous(&self) -> ConstraintSet {
        let entries = self
            .entries
            .iter()
            .map(|(k, c)| {
                let c = match c {
                    Constraint::Dirichlet(_) => Constraint::Dirichlet(0.0),
                    other => other.clone(),
                };
                (*k, c)
            })
            .collect();
        ConstraintSet { n: self.n, entries }
    }

    /// Resolves chains of constraints; fails on cycles.
    pub fn reduction(&self) -> Result<Reduction, LinalgError> {
        let free: Vec<usize> = (0..self.n).filter(|i| !self.entries.contains_key(i)).collect();
        let mut reduced_index = vec![usize::MAX; self.n];
        for (r, &i) in free.iter().enumerate() {
            reduced_index[i] = r;
        }
        let mut rows: Vec<Option<(Vec<(usize, f64)>, f64)>> = vec![None; self.n];
        for &i in &free {
            rows[i] = Some((vec![(reduced_index[i], 1.0)], 0.0));
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.n];
        for &i in self.entries.keys() {
            self.resolve(i, &mut rows, &mut state)?;
        }
        let mut out_rows = Vec::with_capacity(self.n);
        let mut offset = Vec::with_capacity(self.n);
        for r in rows {
            let (w, g) = r.expect("every index resolved");
            out_rows.push(w);
            offset.push(g);
        }
        Ok(Reduction { n: self.n, free, rows: out_rows, offset })
    }

    fn resolve(
        &self,
        i: usize,
        rows: &mut Vec<Option<(Vec<(usize, f64)>, f64)>>,
        state: &mut [u8],
    ) -> Result<(), LinalgError> {
        if rows[i].is_some() {
            return Ok(());
        }
        if state[i] == 1 {
            return Err(LinalgError::CyclicConstraint { dof: i });
        }
        state[i] = 1;
        let resolved = match &self.entries[&i] {
            Constraint::Dirichlet(v) => (Vec::new(), *v),
            Constraint::Linear(masters) => {
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                let mut g = 0.0;
                for &(m, w) in masters {
                    self.resolve(m, rows, state)?;
                    let (mw, mg) = rows[m].as_ref().expect("resolved");
                    for &(r, v) in mw {
                        *acc.entry(r).or_insert(0.0) += w * v;
                    }
                    g += w * mg;
                }
                (acc.into_iter().collect(), g)
            }
        };
        state[i] = 2;
        rows[i] = Some(resolved);
        Ok(())
    }
}

impl Reduction {
    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    /// x = C y + g
    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.free.len());
        self.rows
            .iter()
            .zip(&self.offset)
            .map(|(w, g)| g + w.iter().map(|&(r, v)| v * y[r]).sum::<f64>())
            .collect()
    }

    /// Picks the free entries of a full vector.
    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| x[i]).collect()
    }

    /// Overwrites constrained entries so `x` satisfies every constraint.
    pub fn enforce(&self, x: &mut [f64]) {
        let y = self.restrict(x);
        x.copy_from_slice(&self.expand(&y));
    }

    /// C^T v
    pub fn reduce_vector(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let mut out = vec![0.0; self.free.len()];
        for (i, w) in self.rows.iter().enumerate() {
            for &(r, c) in w {
                out[r] += c * v[i];
            }
        }
        out
    }

    /// C^T A C and C^T (b - A g).
    pub fn reduce_system(&self, a: &CsrMatrix, b: &[f64]) -> Result<(CsrMatrix, Vec<f64>), LinalgError> {
        if a.n_rows() != self.n || a.n_cols() != self.n || b.len() != self.n {
            return Err(LinalgError::Dimension(format!("system of size {} against {} constrained unknowns", a.n_rows(), self.n)));
        }
        let nf = self.free.len();
        let mut t = TripletBuilder::with_capacity(nf, nf, a.nnz());
        for i in 0..self.n {
            let ri = &self.rows[i];
            if ri.is_empty() {
                continue;
            }
            let (cols, vals) = a.row(i);
            for (&j, &aij) in cols.iter().zip(vals) {
                for &(k, ci) in ri {
                    for &(l, cj) in &self.rows[j] {
                        t.push(k, l, ci * aij * cj);
                    }
                }
            }
        }
        let ag = a.mul_vec(&self.offset);
        let rhs: Vec<f64> = b.iter().zip(&ag).map(|(b, ag)| b - ag).collect();
        Ok((t.build(), self.reduce_vector(&rhs)))
    }
}
