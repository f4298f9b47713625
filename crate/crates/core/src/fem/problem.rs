use serde::{Deserialize, Serialize};

use super::dual::{Dual, Real};
use super::element::{face_residual, shape, volume_residual, FacePoint, Physics, VolumePoint};
use super::FemError;
use crate::geom::{Aabb, Vec3};
use crate::linalg::{solve, ConstraintSet, CsrMatrix, Reduction, SolveOptions, TripletBuilder};
use crate::octree::{Octree, MAX_LEVEL};
use crate::quadrature::tensor_rule;
use crate::surrogate::{DistanceCache, SurrogateBoundary};

const LATTICE: u32 = 1 << MAX_LEVEL;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub re: f64,
    /// Shifted-boundary penalty.
    pub gamma: f64,
    pub c_m: f64,
    pub gp_order: usize,
    pub newton_rtol: f64,
    pub newton_atol: f64,
    pub newton_max_iter: usize,
    pub linear: SolveOptions,
    /// Keep the fine-scale cross-stress term (lagged in the Jacobian).
    pub cross_stress: bool,
    pub force: Vec3,
    /// Linear damping coefficient in the forcing, f = force - damping u.
    pub damping: f64,
    /// Dirichlet velocity on the immersed boundary.
    pub immersed_velocity: Vec3,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            re: 100.0,
            gamma: 200.0,
            c_m: 36.0,
            gp_order: 2,
            newton_rtol: 1e-8,
            newton_atol: 1e-10,
            newton_max_iter: 20,
            linear: SolveOptions::default(),
            cross_stress: true,
            force: [0.0; 3],
            damping: 0.0,
            immersed_velocity: [0.0; 3],
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), FemError> {
        let bad = |m: &str| Err(FemError::Parameter(m.into()));
        if !(self.re > 0.0) {
            return bad("Reynolds number must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("penalty must be positive");
        }
        if !(self.c_m >= 0.0) {
            return bad("C_M must be nonnegative");
        }
        if self.gp_order == 0 {
            return bad("gp_order must be at least 1");
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter must be at least 1");
        }
        Ok(())
    }
}

/// Conditions on the outer box, imposed strongly. Axis 1 is "up".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConditions {
    /// No-slip walls; the wall at the max of axis 1 slides along axis 0.
    /// Corner nodes shared with other walls stay at rest.
    LidDriven { lid_speed: f64 },
    /// Parabolic inflow along axis 0 on its min side, no-slip on the
    /// transverse walls, zero pressure and transverse velocity at the outlet.
    Channel { u_max: f64 },
    /// As `Channel` with the circular profile u_max (1 - r^2 / radius^2)
    /// about the box axis along axis 0, zero for r >= radius.
    Pipe { u_max: f64, radius: f64 },
    /// Nothing imposed on the box.
    Natural,
}

/// Nodal unknowns, interleaved per node as velocity components then
/// pressure, with the previous level kept for BDF2.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub dim: usize,
    pub x: Vec<f64>,
    pub prev: Option<Vec<f64>>,
    pub t: f64,
    pub dt: f64,
    pub steps: usize,
}

impl FlowState {
    pub fn velocity(&self, node: usize) -> Vec3 {
        let nf = self.dim + 1;
        let mut u = [0.0; 3];
        u[..self.dim].copy_from_slice(&self.x[node * nf..node * nf + self.dim]);
        u
    }

    pub fn pressure(&self, node: usize) -> f64 {
        self.x[node * (self.dim + 1) + self.dim]
    }

    pub fn num_nodes(&self) -> usize {
        self.x.len() / (self.dim + 1)
    }
}

/// Discrete time derivative du/dt ~ a0 u + hist.
#[derive(Clone, Debug)]
pub struct TimeTerms {
    pub a0: f64,
    pub dt: Option<f64>,
    pub hist: Vec<f64>,
}

impl TimeTerms {
    pub fn steady(n: usize) -> Self {
        TimeTerms { a0: 0.0, dt: None, hist: vec![0.0; n] }
    }

    pub fn backward_euler(dt: f64, xn: &[f64]) -> Self {
        TimeTerms { a0: 1.0 / dt, dt: Some(dt), hist: xn.iter().map(|v| -v / dt).collect() }
    }

    /// (3 u - 4 u^n + u^(n-1)) / (2 dt)
    pub fn bdf2(dt: f64, xn: &[f64], xnm1: &[f64]) -> Self {
        let hist = xn.iter().zip(xnm1).map(|(a, b)| (-4.0 * a + b) / (2.0 * dt)).collect();
        TimeTerms { a0: 1.5 / dt, dt: Some(dt), hist }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub newton_history: Vec<f64>,
    /// max |u^(n+1) - u^n| over velocity unknowns.
    pub change_inf: f64,
}

/// Discretization of one flow case: element lists, boundary quadrature and
/// the strong constraints.
pub struct FlowProblem {
    tree: Octree,
    dim: usize,
    assembled: Vec<bool>,
    active: Vec<usize>,
    /// Surrogate-face quadrature per entry of `active`.
    faces: Vec<Vec<FacePoint>>,
    rule: Vec<([f64; 3], f64)>,
    params: SolverParams,
    bc: BoundaryConditions,
    constraints: ConstraintSet,
    full: Reduction,
    increments: Reduction,
}

impl FlowProblem {
    /// `assembled` marks the leaves integrated as fluid; `boundary` supplies
    /// the surrogate faces and their distance vectors.
    pub fn new(
        tree: Octree,
        assembled: Vec<bool>,
        boundary: Option<(&SurrogateBoundary, &DistanceCache)>,
        params: SolverParams,
        bc: BoundaryConditions,
    ) -> Result<Self, FemError> {
        params.validate()?;
        if assembled.len() != tree.num_leaves() {
            return Err(FemError::Parameter(format!("{} leaf flags for {} leaves", assembled.len(), tree.num_leaves())));
        }
        let dim = tree.dim();
        let active: Vec<usize> = (0..tree.num_leaves()).filter(|&l| assembled[l]).collect();
        if active.is_empty() {
            return Err(FemError::EmptyDomain);
        }
        let mut slot = vec![usize::MAX; tree.num_leaves()];
        for (k, &l) in active.iter().enumerate() {
            slot[l] = k;
        }
        let mut faces = vec![Vec::new(); active.len()];
        if let Some((b, cache)) = boundary {
            for f in &b.faces {
                if !assembled[f.leaf] {
                    return Err(FemError::Parameter(format!("surrogate face on non-assembled leaf {}", f.leaf)));
                }
                let o = tree.leaves()[f.leaf];
                let h = tree.octant_size(&o);
                let c = tree.octant_center(&o);
                let normal = b.normal(f);
                for (q, w) in b.gauss_points(&tree, f, params.gp_order) {
                    let d = cache.get(&q).ok_or(FemError::MissingDistance(q))?;
                    let mut xi = [0.0; 3];
                    for i in 0..dim {
                        xi[i] = (q[i] - c[i]) * 2.0 / h;
                    }
                    faces[slot[f.leaf]].push(FacePoint { shape: shape(dim, &xi, h), w, normal, d, ud: params.immersed_velocity });
                }
            }
        }
        let constraints = build_constraints(&tree, &assembled, &bc)?;
        let full = constraints.reduction()?;
        let increments = constraints.homogeneous().reduction()?;
        let rule = tensor_rule(params.gp_order, dim);
        Ok(FlowProblem { tree, dim, assembled, active, faces, rule, params, bc, constraints, full, increments })
    }

    pub fn tree(&self) -> &Octree {
        &self.tree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn boundary_conditions(&self) -> &BoundaryConditions {
        &self.bc
    }

    pub fn assembled(&self) -> &[bool] {
        &self.assembled
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn num_dofs(&self) -> usize {
        self.tree.num_nodes() * (self.dim + 1)
    }

    /// Number of surrogate-face quadrature points.
    pub fn num_face_points(&self) -> usize {
        self.faces.iter().map(Vec::len).sum()
    }

    /// Zero fields with the strong conditions applied.
    pub fn initial_state(&self, dt: f64) -> FlowState {
        let mut x = vec![0.0; self.num_dofs()];
        self.full.enforce(&mut x);
        FlowState { dim: self.dim, x, prev: None, t: 0.0, dt, steps: 0 }
    }

    /// Overwrites constrained unknowns from their definitions.
    pub fn enforce(&self, x: &mut [f64]) {
        self.full.enforce(x);
    }

    fn physics(&self, tt: &TimeTerms) -> Physics {
        let p = &self.params;
        Physics {
            re: p.re,
            c_m: p.c_m,
            gamma: p.gamma,
            a0: tt.a0,
            dt: tt.dt,
            force: p.force,
            damping: p.damping,
            cross_stress: p.cross_stress,
        }
    }

    fn element_dofs(&self, leaf: usize) -> Vec<usize> {
        let nf = self.dim + 1;
        self.tree.leaf_nodes(leaf).iter().flat_map(|&n| (0..nf).map(move |c| n * nf + c)).collect()
    }

    fn volume_points(&self, leaf: usize, tt: &TimeTerms) -> (f64, Vec<VolumePoint>) {
        let dim = self.dim;
        let nf = dim + 1;
        let o = self.tree.leaves()[leaf];
        let h = self.tree.octant_size(&o);
        let jac = (0.5 * h).powi(dim as i32);
        let nodes = self.tree.leaf_nodes(leaf);
        let pts = self
            .rule
            .iter()
            .map(|(xi, w)| {
                let s = shape(dim, xi, h);
                let mut hist = [0.0; 3];
                for (a, &n) in nodes.iter().enumerate() {
                    for (i, hi) in hist.iter_mut().enumerate().take(dim) {
                        *hi += s.n[a] * tt.hist[n * nf + i];
                    }
                }
                VolumePoint { shape: s, w: w * jac, hist }
            })
            .collect();
        (h, pts)
    }

    /// Full (unreduced) residual vector.
    pub fn residual(&self, x: &[f64], tt: &TimeTerms) -> Vec<f64> {
        let ph = self.physics(tt);
        let mut r = vec![0.0; self.num_dofs()];
        for (k, &leaf) in self.active.iter().enumerate() {
            let dofs = self.element_dofs(leaf);
            let xl: Vec<f64> = dofs.iter().map(|&d| x[d]).collect();
            let mut rl = vec![0.0; dofs.len()];
            let (h, pts) = self.volume_points(leaf, tt);
            volume_residual(self.dim, h, &pts, &xl, &ph, &mut rl);
            face_residual(self.dim, h, &self.faces[k], &xl, &ph, &mut rl);
            for (&d, v) in dofs.iter().zip(rl) {
                r[d] += v;
            }
        }
        r
    }

    /// Full Jacobian and residual.
    pub fn assemble(&self, x: &[f64], tt: &TimeTerms) -> (CsrMatrix, Vec<f64>) {
        match self.dim {
            2 => self.assemble_n::<12>(x, tt),
            _ => self.assemble_n::<32>(x, tt),
        }
    }

    fn assemble_n<const N: usize>(&self, x: &[f64], tt: &TimeTerms) -> (CsrMatrix, Vec<f64>) {
        let ph = self.physics(tt);
        let n = self.num_dofs();
        let mut r = vec![0.0; n];
        let mut t = TripletBuilder::with_capacity(n, n, self.active.len() * N * N);
        for (k, &leaf) in self.active.iter().enumerate() {
            let dofs = self.element_dofs(leaf);
            debug_assert_eq!(dofs.len(), N);
            let xl: Vec<Dual<N>> = dofs.iter().enumerate().map(|(j, &d)| Dual::var(x[d], j)).collect();
            let mut rl = vec![Dual::<N>::cst(0.0); N];
            let (h, pts) = self.volume_points(leaf, tt);
            volume_residual(self.dim, h, &pts, &xl, &ph, &mut rl);
            face_residual(self.dim, h, &self.faces[k], &xl, &ph, &mut rl);
            for (a, &da) in dofs.iter().enumerate() {
                r[da] += rl[a].v;
                for (b, &db) in dofs.iter().enumerate() {
                    if rl[a].d[b] != 0.0 {
                        t.push(da, db, rl[a].d[b]);
                    }
                }
            }
        }
        (t.build(), r)
    }

    /// Newton iterations from `x0`; constrained unknowns follow their
    /// definitions after every update.
    pub fn solve_nonlinear(&self, x0: &[f64], tt: &TimeTerms) -> Result<(Vec<f64>, Vec<f64>), FemError> {
        let mut x = x0.to_vec();
        self.full.enforce(&mut x);
        let mut history = Vec::new();
        let p = &self.params;
        for it in 0..=p.newton_max_iter {
            let (j, r) = self.assemble(&x, tt);
            let rr = self.increments.reduce_vector(&r);
            let norm = rr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(FemError::NonFinite);
            }
            history.push(norm);
            if norm <= p.newton_atol || norm <= p.newton_rtol * history[0] {
                return Ok((x, history));
            }
            if it == p.newton_max_iter {
                break;
            }
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let (jr, br) = self.increments.reduce_system(&j, &neg)?;
            let (dy, _) = solve(&jr, &br, &p.linear)?;
            let dx = self.increments.expand(&dy);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
        }
        let last = *history.last().expect("at least one residual");
        if last < 0.1 * history[0] {
            log::warn!("Newton stopped at {last:e} after {} iterations", history.len() - 1);
            Ok((x, history))
        } else {
            Err(FemError::NewtonStagnation { history })
        }
    }

    /// One time step: backward Euler when no previous level exists, BDF2
    /// otherwise.
    pub fn step(&self, state: &mut FlowState) -> Result<StepReport, FemError> {
        if !(state.dt > 0.0) {
            return Err(FemError::Parameter(format!("time step {}", state.dt)));
        }
        let tt = match &state.prev {
            None => TimeTerms::backward_euler(state.dt, &state.x),
            Some(prev) => TimeTerms::bdf2(state.dt, &state.x, prev),
        };
        let (xn, newton_history) = self.solve_nonlinear(&state.x, &tt)?;
        let nf = self.dim + 1;
        let change_inf = xn
            .iter()
            .zip(&state.x)
            .enumerate()
            .filter(|(k, _)| k % nf != self.dim)
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0, f64::max);
        state.prev = Some(std::mem::replace(&mut state.x, xn));
        state.t += state.dt;
        state.steps += 1;
        Ok(StepReport { newton_history, change_inf })
    }

    /// Steps until max |u^(n+1) - u^n| / dt < `tol`.
    pub fn run_to_steady<F: FnMut(&FlowState, &StepReport)>(
        &self,
        state: &mut FlowState,
        tol: f64,
        max_steps: usize,
        mut on_step: F,
    ) -> Result<usize, FemError> {
        let mut change = f64::INFINITY;
        for _ in 0..max_steps {
            let rep = self.step(state)?;
            on_step(state, &rep);
            change = rep.change_inf / state.dt;
            if change < tol {
                return Ok(state.steps);
            }
        }
        Err(FemError::NotSteady { steps: max_steps, change })
    }

    /// (integral of (div u)^2 over the assembled leaves)^(1/2)
    pub fn divergence_norm(&self, state: &FlowState) -> f64 {
        let dim = self.dim;
        let nf = dim + 1;
        let mut acc = 0.0;
        for &leaf in &self.active {
            let h = self.tree.octant_size(&self.tree.leaves()[leaf]);
            let jac = (0.5 * h).powi(dim as i32);
            let nodes = self.tree.leaf_nodes(leaf);
            for (xi, w) in &self.rule {
                let s = shape(dim, xi, h);
                let mut div = 0.0;
                for (a, &n) in nodes.iter().enumerate() {
                    for i in 0..dim {
                        div += s.grad[a][i] * state.x[n * nf + i];
                    }
                }
                acc += div * div * w * jac;
            }
        }
        acc.sqrt()
    }

    /// Velocity and pressure at `p`, or None outside the assembled leaves.
    pub fn sample(&self, state: &FlowState, p: &Vec3) -> Option<(Vec3, f64)> {
        let dim = self.dim;
        let dom = self.tree.domain();
        let mut cell = [0u32; 3];
        for i in 0..dim {
            let t = (p[i] - dom.min[i]) / dom.extent(i);
            if !(0.0..=1.0).contains(&t) {
                return None;
            }
            cell[i] = ((t * LATTICE as f64) as u32).min(LATTICE - 1);
        }
        let leaf = self.tree.locate_cell(&cell)?;
        if !self.assembled[leaf] {
            return None;
        }
        let o = self.tree.leaves()[leaf];
        let h = self.tree.octant_size(&o);
        let c = self.tree.octant_center(&o);
        let mut xi = [0.0; 3];
        for i in 0..dim {
            xi[i] = (p[i] - c[i]) * 2.0 / h;
        }
        let s = shape(dim, &xi, h);
        let mut u = [0.0; 3];
        let mut pr = 0.0;
        for (a, &n) in self.tree.leaf_nodes(leaf).iter().enumerate() {
            let v = state.velocity(n);
            for i in 0..dim {
                u[i] += s.n[a] * v[i];
            }
            pr += s.n[a] * state.pressure(n);
        }
        Some((u, pr))
    }
}

fn on_side(lat: &[u32; 3], axis: usize, max: bool) -> bool {
    if max {
        lat[axis] == LATTICE
    } else {
        lat[axis] == 0
    }
}

fn inflow(bc: &BoundaryConditions, dom: &Aabb, p: &Vec3) -> f64 {
    let dim = dom.dim;
    match *bc {
        BoundaryConditions::Channel { u_max } => (1..dim)
            .map(|a| {
                let s = 2.0 * (p[a] - dom.min[a]) / dom.extent(a) - 1.0;
                1.0 - s * s
            })
            .product::<f64>()
            * u_max,
        BoundaryConditions::Pipe { u_max, radius } => {
            let c = dom.center();
            let r2: f64 = (1..dim).map(|a| (p[a] - c[a]).powi(2)).sum();
            u_max * (1.0 - r2 / (radius * radius)).max(0.0)
        }
        _ => 0.0,
    }
}

fn build_constraints(tree: &Octree, assembled: &[bool], bc: &BoundaryConditions) -> Result<ConstraintSet, FemError> {
    let dim = tree.dim();
    let nf = dim + 1;
    let nn = tree.num_nodes();
    let mut active = vec![false; nn];
    for (l, &a) in assembled.iter().enumerate() {
        if a {
            for &n in tree.leaf_nodes(l) {
                active[n] = true;
            }
        }
    }
    let hanging = tree.build_constraints_masked(Some(assembled))?;
    let mut c = ConstraintSet::new(nn * nf);
    let mut pressure_fixed = false;
    for n in 0..nn {
        if !active[n] {
            for k in 0..nf {
                c.set_dirichlet(n * nf + k, 0.0);
            }
            continue;
        }
        let lat = tree.node_lattice(n);
        let on_box = (0..dim).any(|a| on_side(&lat, a, false) || on_side(&lat, a, true));
        let mut fixed = [false; 4];
        if on_box {
            match bc {
                BoundaryConditions::LidDriven { lid_speed } => {
                    let lid = on_side(&lat, 1, true) && (0..dim).filter(|&a| a != 1).all(|a| !on_side(&lat, a, false) && !on_side(&lat, a, true));
                    for k in 0..dim {
                        let v = if lid && k == 0 { *lid_speed } else { 0.0 };
                        c.set_dirichlet(n * nf + k, v);
                        fixed[k] = true;
                    }
                }
                BoundaryConditions::Channel { .. } | BoundaryConditions::Pipe { .. } => {
                    let wall = (1..dim).any(|a| on_side(&lat, a, false) || on_side(&lat, a, true));
                    if wall || on_side(&lat, 0, false) {
                        let profile = if wall { 0.0 } else { inflow(bc, tree.domain(), &tree.node_point(n)) };
                        for k in 0..dim {
                            c.set_dirichlet(n * nf + k, if k == 0 { profile } else { 0.0 });
                            fixed[k] = true;
                        }
                    } else if on_side(&lat, 0, true) {
                        for k in 1..dim {
                            c.set_dirichlet(n * nf + k, 0.0);
                            fixed[k] = true;
                        }
                        c.set_dirichlet(n * nf + dim, 0.0);
                        fixed[dim] = true;
                        pressure_fixed = true;
                    }
                }
                BoundaryConditions::Natural => {}
            }
        }
        if let Some(masters) = hanging.get(&n) {
            for k in 0..nf {
                if !fixed[k] {
                    c.set_linear(n * nf + k, masters.iter().map(|&(m, w)| (m * nf + k, w)).collect());
                }
            }
        }
    }
    if !pressure_fixed {
        // pin the pressure at the first free node in (z, y, x) lattice order
        let pin = (0..nn)
            .filter(|&n| active[n] && !hanging.contains_key(&n))
            .min_by_key(|&n| {
                let l = tree.node_lattice(n);
                (l[2], l[1], l[0])
            })
            .ok_or(FemError::EmptyDomain)?;
        c.set_dirichlet(pin * nf + dim, 0.0);
    }
    Ok(c)
}
