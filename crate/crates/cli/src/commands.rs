use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use shiftflow::fem::{FlowProblem, FlowState, StepReport};
use shiftflow::geom::{Aabb, Vec3};
use shiftflow::inr::{distance_vector_similarity, nmse, train, write_similarity_csv, Mlp, MlpConfig, TrainLogRow};
use shiftflow::mesh::TriangleSoup;
use shiftflow::octree::{Octree, RefineSpec};
use shiftflow::oracle::DistanceOracle;
use shiftflow::sdf::ImplicitField;
use shiftflow::surrogate::{
    boundary_gauss_distance_vectors, classify_elements, extract_surrogate_boundary, DistanceCache, ElementMarkers, SurrogateBoundary,
};

use crate::config::{config_error, Case, ConfigError, EndCondition, GeometrySource};
use crate::vtk;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(w.flush()?)
}

pub fn train_cmd(case: &Case, out: &Path) -> Result<()> {
    let dom = case.domain()?;
    let mut cfg = case.cfg.train.clone();
    cfg.network.input_dim = dom.dim;
    let start = Instant::now();
    let outcome = match &case.cfg.geometry {
        GeometrySource::Analytic { .. } => {
            let field = case.field()?;
            train(&field, &dom, &cfg)?
        }
        GeometrySource::Soup { path, fill_fraction } => {
            let soup = case.load_soup(path, *fill_fraction)?;
            train(&soup, &dom, &cfg)?
        }
        GeometrySource::Model { .. } => return config_error("train needs an analytic or soup geometry"),
    };
    info!("trained {} steps in {:.1?}; best validation NMSE {:e} at step {}", cfg.steps, start.elapsed(), outcome.best_validation_nmse, outcome.best_step);
    outcome.mlp.save(&out.join("model.inr"))?;
    let mut w = create(&out.join("train_log.csv"))?;
    write_train_log(&mut w, &outcome.log)?;
    w.flush()?;
    write_json(
        &out.join("train_summary.json"),
        &json!({
            "steps": cfg.steps,
            "best_step": outcome.best_step,
            "best_validation_nmse": outcome.best_validation_nmse,
            "parameters": outcome.mlp.num_params(),
        }),
    )
}

fn write_train_log<W: Write>(w: &mut W, log: &[TrainLogRow]) -> std::io::Result<()> {
    writeln!(w, "step,learning_rate,loss,data,eikonal,normal,skipped_normals,validation_nmse")?;
    for r in log {
        let v = r.validation_nmse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{},{},{}", r.step, r.learning_rate, r.loss, r.data, r.eikonal, r.normal, r.skipped_normals, v)?;
    }
    Ok(())
}

/// Metrics of one network against the exact geometry.
#[derive(Clone, Debug)]
pub struct InrMetrics {
    pub nmse_band: f64,
    pub band_points: usize,
    pub nmse_gp: f64,
    pub gauss_points: usize,
    pub cos_mean: f64,
    pub cos_sd: f64,
    pub excluded: usize,
}

/// Lattice-band NMSE plus NMSE and distance-vector cosine at the Gauss
/// points of the level-`level` surrogate built from the network itself.
pub fn evaluate_inr(case: &Case, net: &ImplicitField, oracle: &dyn DistanceOracle, dom: &Aabb) -> Result<(InrMetrics, shiftflow::inr::SimilarityReport)> {
    let e = &case.cfg.eval;
    let band = nmse(net, oracle, dom, e.band, e.grid_res)?;
    let refine = RefineSpec { base_level: e.base_level.min(e.level), boundary_level: Some(e.level), regions: vec![] };
    let tree = Octree::build_incomplete(net, dom.clone(), &refine)?;
    let m = classify_elements(&tree, net, case.cfg.lambda_criteria, case.cfg.solver.gp_order)?;
    let (b, _) = extract_surrogate_boundary(&tree, &m)?;
    let gps = b.all_gauss_points(&tree, case.cfg.solver.gp_order);
    if gps.is_empty() {
        return config_error("the network's surrogate boundary is empty at this level");
    }
    let f = net.values(&gps);
    let sse: f64 = gps.iter().zip(&f).map(|(p, f)| (oracle.signed_distance(p) - f).powi(2)).sum();
    let nmse_gp = sse / gps.len() as f64 / dom.characteristic_length();
    let sim = distance_vector_similarity(net, oracle, &gps, e.fd_step)?;
    let metrics = InrMetrics {
        nmse_band: band.value,
        band_points: band.count,
        nmse_gp,
        gauss_points: gps.len(),
        cos_mean: sim.mean,
        cos_sd: sim.sd,
        excluded: sim.excluded,
    };
    Ok((metrics, sim))
}

pub fn eval_inr_cmd(case: &Case, out: &Path) -> Result<()> {
    let dom = case.domain()?;
    let Some(model) = &case.cfg.eval.model else {
        return config_error("eval.model is required");
    };
    let mlp = case.load_model(model)?;
    if mlp.input_dim() != dom.dim {
        return config_error(format!("model is {}D but the domain is {}D", mlp.input_dim(), dom.dim));
    }
    let net = ImplicitField::neural(mlp);
    let (name, result) = match &case.cfg.geometry {
        GeometrySource::Analytic { shape } => {
            let truth = case.field()?;
            (format!("{shape:?}").split_whitespace().next().unwrap_or("analytic").to_lowercase(), evaluate_inr(case, &net, &truth, &dom)?)
        }
        GeometrySource::Soup { path, fill_fraction } => {
            let soup = case.load_soup(path, *fill_fraction)?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "soup".into());
            (name, evaluate_inr(case, &net, &soup, &dom)?)
        }
        GeometrySource::Model { .. } => return config_error("eval-inr needs an analytic or soup geometry as the reference"),
    };
    let (m, sim) = result;
    let mut w = create(&out.join("metrics.csv"))?;
    writeln!(w, "geometry,level,nmse_band,band_points,nmse_gp,gauss_points,cos_mean,cos_sd,excluded")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        name, case.cfg.eval.level, m.nmse_band, m.band_points, m.nmse_gp, m.gauss_points, m.cos_mean, m.cos_sd, m.excluded
    )?;
    w.flush()?;
    let mut w = create(&out.join("gauss_points.csv"))?;
    write_similarity_csv(&mut w, &sim)?;
    w.flush()?;
    info!("NMSE band {:e}, NMSE at Gauss points {:e}, cosine {:.6} ({:.2e})", m.nmse_band, m.nmse_gp, m.cos_mean, m.cos_sd);
    Ok(())
}

/// Tree, markers and surrogate boundary of a case.
pub struct Discretization {
    pub tree: Octree,
    pub markers: ElementMarkers,
    pub boundary: SurrogateBoundary,
    pub cache: DistanceCache,
}

pub fn discretize(case: &Case, field: &ImplicitField) -> Result<Discretization> {
    let dom = case.domain()?;
    let gp = case.cfg.solver.gp_order;
    let tree = Octree::build_incomplete(field, dom, &case.cfg.refine)?;
    let m = classify_elements(&tree, field, case.cfg.lambda_criteria, gp)?;
    let (boundary, markers) = extract_surrogate_boundary(&tree, &m)?;
    let cache = boundary_gauss_distance_vectors(&tree, &boundary, field, gp, case.distance_step(field))?;
    info!("{} leaves, {} nodes, {} surrogate faces", tree.num_leaves(), tree.num_nodes(), boundary.faces.len());
    Ok(Discretization { tree, markers, boundary, cache })
}

fn marker_codes(m: &ElementMarkers) -> Vec<u8> {
    m.leaf.iter().map(|m| m.code()).collect()
}

pub fn mesh_cmd(case: &Case, out: &Path) -> Result<()> {
    let field = case.field()?;
    let d = discretize(case, &field)?;
    let mut w = create(&out.join("mesh.vtk"))?;
    vtk::write_grid(&mut w, "shiftflow mesh", &d.tree, &marker_codes(&d.markers), None)?;
    w.flush()?;
    let mut w = create(&out.join("octree.csv"))?;
    d.tree.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("surrogate.csv"))?;
    d.boundary.write_csv(&mut w, &d.tree, case.cfg.solver.gp_order, &d.cache)?;
    w.flush()?;
    let count = |code: u8| d.markers.leaf.iter().filter(|m| m.code() == code).count();
    write_json(
        &out.join("mesh_summary.json"),
        &json!({
            "leaves": d.tree.num_leaves(),
            "nodes": d.tree.num_nodes(),
            "interior": count(0),
            "exterior": count(1),
            "true_intercepted": count(2),
            "false_intercepted": count(3),
            "neighbors_false_intercepted": count(4),
            "surrogate_faces": d.boundary.faces.len(),
            "reclassified": d.boundary.reclassified,
        }),
    )
}

/// Probe lines: vertical and horizontal centerlines through the domain
/// centre, plus the main diagonal in 3D.
pub fn probe_lines(dom: &Aabb) -> Vec<(&'static str, Vec3, Vec3)> {
    let c = dom.center();
    let mut lo_y = c;
    let mut hi_y = c;
    lo_y[1] = dom.min[1];
    hi_y[1] = dom.max[1];
    let mut lo_x = c;
    let mut hi_x = c;
    lo_x[0] = dom.min[0];
    hi_x[0] = dom.max[0];
    let mut lines = vec![("vertical", lo_y, hi_y), ("horizontal", lo_x, hi_x)];
    if dom.dim == 3 {
        lines.push(("diagonal", [dom.min[0], dom.min[1], dom.min[2]], [dom.max[0], dom.max[1], dom.max[2]]));
    }
    lines
}

pub fn write_probes<W: Write>(w: &mut W, prob: &FlowProblem, state: &FlowState, n: usize) -> std::io::Result<()> {
    writeln!(w, "line,s,x,y,z,active,u,v,w,p")?;
    for (name, a, b) in probe_lines(prob.tree().domain()) {
        for k in 0..n {
            let s = k as f64 / (n - 1) as f64;
            let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])];
            let (active, u, pr) = match prob.sample(state, &p) {
                Some((u, pr)) => (1, u, pr),
                None => (0, [0.0; 3], 0.0),
            };
            writeln!(w, "{name},{s},{},{},{},{active},{},{},{},{pr}", p[0], p[1], p[2], u[0], u[1], u[2])?;
        }
    }
    Ok(())
}

/// Outcome of a simulation run.
pub struct SimulationResult {
    pub problem: FlowProblem,
    pub state: FlowState,
    pub markers: Vec<u8>,
    pub converged: bool,
    pub divergence: f64,
}

fn history_row<W: Write>(w: &mut W, s: &FlowState, r: &StepReport, div: f64) -> std::io::Result<()> {
    let first = r.newton_history.first().copied().unwrap_or(0.0);
    let last = r.newton_history.last().copied().unwrap_or(0.0);
    writeln!(w, "{},{},{},{},{},{},{}", s.steps, s.t, r.newton_history.len() - 1, first, last, r.change_inf / s.dt, div)
}

/// Field to steady state (or final time), writing snapshots and history
/// into `out`.
pub fn run_simulation(case: &Case, out: &Path) -> Result<SimulationResult> {
    let field = case.field()?;
    let dom = case.domain()?;
    let bc = case.cfg.bc.to_conditions(dom.dim)?;
    let d = discretize(case, &field)?;
    let markers = marker_codes(&d.markers);
    let problem = FlowProblem::new(d.tree, d.markers.assembled(), Some((&d.boundary, &d.cache)), case.cfg.solver.clone(), bc)?;
    let mut state = problem.initial_state(case.cfg.dt);
    let history_path = out.join("history.csv");
    let mut hist = create(&history_path)?;
    writeln!(hist, "step,t,newton_iterations,residual_initial,residual_final,change_rate,divergence")?;
    let (tol, max_steps, t_final) = match case.cfg.end {
        EndCondition::Steady { tol, max_steps } => (Some(tol), max_steps, f64::INFINITY),
        EndCondition::TFinal { t } => (None, usize::MAX, t),
    };
    let start = Instant::now();
    let mut converged = false;
    while state.steps < max_steps && state.t < t_final - 1e-12 * case.cfg.dt {
        let rep = match problem.step(&mut state) {
            Ok(r) => r,
            Err(e) => {
                hist.flush()?;
                return Err(anyhow::Error::new(e).context(format!("time step {} failed; residual log in {}", state.steps + 1, history_path.display())));
            }
        };
        let div = problem.divergence_norm(&state);
        history_row(&mut hist, &state, &rep, div)?;
        if case.cfg.output_every > 0 && state.steps % case.cfg.output_every == 0 {
            let mut w = create(&out.join(format!("snapshot_{:05}.vtk", state.steps)))?;
            vtk::write_grid(&mut w, &format!("shiftflow t={}", state.t), problem.tree(), &markers, Some(&state))?;
            w.flush()?;
        }
        if state.steps % 10 == 0 {
            info!("step {} t={:.3} change/dt={:.3e} div={:.3e}", state.steps, state.t, rep.change_inf / state.dt, div);
        }
        if let Some(tol) = tol {
            if rep.change_inf / state.dt < tol {
                converged = true;
                break;
            }
        }
    }
    hist.flush()?;
    if tol.is_none() {
        converged = true;
    }
    info!("{} steps in {:.1?}", state.steps, start.elapsed());
    let divergence = problem.divergence_norm(&state);
    Ok(SimulationResult { problem, state, markers, converged, divergence })
}

pub fn simulate_cmd(case: &Case, out: &Path) -> Result<()> {
    let r = run_simulation(case, out)?;
    let mut w = create(&out.join("final.vtk"))?;
    vtk::write_grid(&mut w, &format!("shiftflow t={}", r.state.t), r.problem.tree(), &r.markers, Some(&r.state))?;
    w.flush()?;
    let mut w = create(&out.join("probes.csv"))?;
    write_probes(&mut w, &r.problem, &r.state, case.cfg.probe_points)?;
    w.flush()?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "steps": r.state.steps,
            "t": r.state.t,
            "converged": r.converged,
            "divergence_norm": r.divergence,
            "leaves": r.problem.tree().num_leaves(),
            "nodes": r.problem.tree().num_nodes(),
            "surrogate_gauss_points": r.problem.num_face_points(),
        }),
    )?;
    if !r.converged {
        return Err(shiftflow::fem::FemError::NotSteady { steps: r.state.steps, change: f64::NAN })
            .with_context(|| format!("no steady state; residual log in {}", out.join("history.csv").display()));
    }
    Ok(())
}

/// Per-query nanoseconds of the exact oracle and of the network on one
/// icosphere.
pub fn bench_soup(soup: &TriangleSoup, net: &Mlp, queries: &[Vec3], repeats: usize) -> (f64, f64) {
    let n = queries.len().max(1) as f64;
    let mut oracle_ns = f64::INFINITY;
    let mut net_ns = f64::INFINITY;
    let mut sink = 0.0;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        for q in queries {
            sink += soup.signed_distance(q);
        }
        oracle_ns = oracle_ns.min(t.elapsed().as_nanos() as f64 / n);
        let t = Instant::now();
        for q in queries {
            sink += net.eval_point(q);
        }
        net_ns = net_ns.min(t.elapsed().as_nanos() as f64 / n);
    }
    std::hint::black_box(sink);
    (oracle_ns, net_ns)
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub subdivisions: usize,
    pub triangles: usize,
    pub queries: usize,
    pub oracle_ns: f64,
    pub inference_ns: f64,
}

pub fn run_bench(case: &Case) -> Result<Vec<BenchRow>> {
    let b = &case.cfg.bench;
    let dom = case.domain()?;
    if dom.dim != 3 {
        return config_error("bench-geometry needs a 3D domain");
    }
    if !(b.radius > 0.0) {
        return config_error("bench.radius must be positive");
    }
    let net = match &b.model {
        Some(p) => case.load_model(p)?,
        None => Mlp::new(&MlpConfig::default(), case.cfg.seed.unwrap_or(0))?,
    };
    if net.input_dim() != 3 {
        return config_error("bench model must be 3D");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(case.cfg.seed.unwrap_or(0));
    let queries: Vec<Vec3> = (0..b.queries)
        .map(|_| {
            let mut p = [0.0; 3];
            for (i, v) in p.iter_mut().enumerate() {
                *v = rng.random_range(dom.min[i]..dom.max[i]);
            }
            p
        })
        .collect();
    let mut rows = Vec::new();
    for &s in &b.subdivisions {
        let soup = TriangleSoup::icosphere(b.radius, s);
        let (oracle_ns, inference_ns) = if queries.is_empty() { (0.0, 0.0) } else { bench_soup(&soup, &net, &queries, b.repeats) };
        info!("subdivisions {s}: {} triangles, oracle {oracle_ns:.0} ns, network {inference_ns:.0} ns", soup.num_triangles());
        rows.push(BenchRow { subdivisions: s, triangles: soup.num_triangles(), queries: queries.len(), oracle_ns, inference_ns });
    }
    Ok(rows)
}

pub fn bench_cmd(case: &Case, out: &Path) -> Result<()> {
    let rows = if case.cfg.bench.queries == 0 { Vec::new() } else { run_bench(case)? };
    let mut w = create(&out.join("bench.csv"))?;
    writeln!(w, "subdivisions,triangles,queries,oracle_ns_per_query,inference_ns_per_query")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.subdivisions, r.triangles, r.queries, r.oracle_ns, r.inference_ns)?;
    }
    Ok(w.flush()?)
}

/// Output directory: `--out`, else the config's `output_dir`.
pub fn output_dir(case: &Case, out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = match out {
        Some(d) => d,
        None => match &case.cfg.output_dir {
            Some(d) => case.resolve(d),
            None => return Err(ConfigError("no output directory: pass --out or set output_dir".into()).into()),
        },
    };
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}
