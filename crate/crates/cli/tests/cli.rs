use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use shiftflow::geom::Aabb;
use shiftflow::inr::Mlp;
use shiftflow::sdf::{AnalyticShape, ImplicitField};
use shiftflow_cli::commands::evaluate_inr;
use shiftflow_cli::config::{Case, CaseConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shiftflow"))
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path) -> (i32, String) {
    let o = bin().args([cmd, "--config"]).arg(config).arg("--out").arg(out).env("RUST_LOG", "warn").output().unwrap();
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn circle_case(level: u8) -> Value {
    json!({
        "geometry": {"kind": "analytic", "shape": {"kind": "circle", "center": [0.0, 0.0], "radius": 0.55}},
        "domain": {"min": [-1.0, -1.0], "max": [1.0, 1.0]},
        "refine": {"base_level": level},
        "lambda_criteria": 0.5
    })
}

/// Structural check of a legacy VTK file; returns (points, cells).
fn check_vtk(path: &Path, with_fields: bool) -> (usize, usize) {
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# vtk DataFile Version 3.0");
    assert_eq!(lines[2], "ASCII");
    assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
    let header = |i: usize, key: &str| -> usize {
        let parts: Vec<&str> = lines[i].split_whitespace().collect();
        assert_eq!(parts[0], key, "line {i}: {}", lines[i]);
        parts[1].parse().unwrap()
    };
    let np = header(4, "POINTS");
    let mut i = 5 + np;
    let nc = header(i, "CELLS");
    let mut corners = 0;
    for l in &lines[i + 1..i + 1 + nc] {
        let k: usize = l.split_whitespace().next().unwrap().parse().unwrap();
        assert_eq!(l.split_whitespace().count(), k + 1);
        assert!(l.split_whitespace().skip(1).all(|v| v.parse::<usize>().unwrap() < np));
        corners = k;
    }
    i += 1 + nc;
    assert_eq!(header(i, "CELL_TYPES"), nc);
    let expected_type = if corners == 4 { "9" } else { "12" };
    assert!(lines[i + 1..i + 1 + nc].iter().all(|l| *l == expected_type));
    i += 1 + nc;
    assert_eq!(header(i, "CELL_DATA"), nc);
    assert_eq!(lines[i + 1], "SCALARS marker int 1");
    i += 3 + nc;
    if with_fields {
        assert_eq!(header(i, "POINT_DATA"), np);
        assert_eq!(lines[i + 1], "VECTORS velocity double");
        i += 2 + np;
        assert_eq!(lines[i], "SCALARS pressure double 1");
        i += 2 + np;
    }
    assert_eq!(i, lines.len());
    (np, nc)
}

#[test]
fn missing_config_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let (code, err) = run("simulate", &missing, dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = circle_case(2);
    v["reynolds"] = json!(100.0);
    let (code, err) = run("mesh", &write_config(dir.path(), "a.json", &v), dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("reynolds"), "{err}");
    let mut v = circle_case(2);
    v["dt"] = json!(0.0);
    let (code, err) = run("simulate", &write_config(dir.path(), "b.json", &v), dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("dt"), "{err}");
    let mut v = circle_case(2);
    v["domain"] = json!({"min": [-1.0, -1.0], "max": [1.0, 2.0]});
    let (code, _) = run("mesh", &write_config(dir.path(), "c.json", &v), dir.path());
    assert_eq!(code, 2);
}

#[test]
fn mesh_writes_fixture_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh.json", &circle_case(2));
    let (code, err) = run("mesh", &cfg, dir.path());
    assert_eq!(code, 0, "{err}");
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("mesh_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["false_intercepted"], 4);
    assert_eq!(summary["surrogate_faces"], 8);
    let (np, nc) = check_vtk(&dir.path().join("mesh.vtk"), false);
    assert_eq!((np, nc), (25, 16));
    let csv = std::fs::read_to_string(dir.path().join("surrogate.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "leaf,face,qx,qy,dx,dy");
    assert_eq!(csv.lines().count(), 1 + 8 * 2);
}

#[test]
fn zero_step_training_writes_initial_network() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = circle_case(2);
    v["train"] = json!({"steps": 0, "mix": {"surface": 50, "narrowband": 50, "uniform": 50, "band": 0.01}, "validation_points": 50});
    let (code, err) = run("train", &write_config(dir.path(), "t.json", &v), dir.path());
    assert_eq!(code, 0, "{err}");
    let mlp = Mlp::load(&dir.path().join("model.inr")).unwrap();
    assert_eq!(mlp.input_dim(), 2);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);

    // a 2D model against a 3D geometry is a configuration error
    let v3 = json!({
        "geometry": {"kind": "analytic", "shape": {"kind": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5}},
        "domain": {"min": [-1.0, -1.0, -1.0], "max": [1.0, 1.0, 1.0]},
        "eval": {"model": dir.path().join("model.inr"), "level": 3}
    });
    let (code, err) = run("eval-inr", &write_config(dir.path(), "e.json", &v3), dir.path());
    assert_eq!(code, 2, "{err}");
}

#[test]
fn exact_field_scores_perfectly() {
    let v = json!({
        "geometry": {"kind": "analytic", "shape": {"kind": "circle", "center": [0.1, 0.0], "radius": 0.5}},
        "domain": {"min": [-1.0, -1.0], "max": [1.0, 1.0]},
        "eval": {"level": 6, "fd_step": 1e-7}
    });
    let cfg: CaseConfig = serde_json::from_value(v).unwrap();
    let case = Case::from_config(cfg, PathBuf::new()).unwrap();
    let f = ImplicitField::analytic(AnalyticShape::Circle { center: [0.1, 0.0], radius: 0.5 }).unwrap();
    let (m, _) = evaluate_inr(&case, &f, &f, &Aabb::symmetric_unit(2)).unwrap();
    assert_eq!(m.nmse_band, 0.0);
    assert_eq!(m.nmse_gp, 0.0);
    assert!((m.cos_mean - 1.0).abs() < 1e-12);
    assert!(m.gauss_points > 0);
}

#[test]
fn open_cavity_reaches_steady_state() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "geometry": {"kind": "analytic", "shape": {"kind": "circle", "center": [5.0, 5.0], "radius": 0.1}},
        "domain": {"min": [-1.0, -1.0], "max": [1.0, 1.0]},
        "refine": {"base_level": 5},
        "solver": {"re": 100.0},
        "dt": 0.5,
        "end": {"kind": "steady", "tol": 1e-6, "max_steps": 400},
        "bc": {"preset": "ldc2d"},
        "probe_points": 65,
        "output_every": 50
    });
    let (code, err) = run("simulate", &write_config(dir.path(), "ldc.json", &v), dir.path());
    assert_eq!(code, 0, "{err}");
    let (np, nc) = check_vtk(&dir.path().join("final.vtk"), true);
    assert_eq!((np, nc), (33 * 33, 32 * 32));
    check_vtk(&dir.path().join("snapshot_00050.vtk"), true);
    let probes = std::fs::read_to_string(dir.path().join("probes.csv")).unwrap();
    let mut lines = probes.lines();
    assert_eq!(lines.next().unwrap(), "line,s,x,y,z,active,u,v,w,p");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 2 * 65);
    // the primary vortex drives a return flow in the lower half
    let min_u = rows
        .iter()
        .filter(|r| r[0] == "vertical" && r[3].parse::<f64>().unwrap() < 0.0)
        .map(|r| r[6].parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(min_u < -0.2, "min u {min_u}");
    let top = rows.iter().find(|r| r[0] == "vertical" && r[1] == "1").unwrap();
    assert_eq!(top[6].parse::<f64>().unwrap(), 1.0);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    let hist = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + summary["steps"].as_u64().unwrap() as usize);
}

#[test]
fn step_limit_without_steady_state_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "geometry": {"kind": "analytic", "shape": {"kind": "circle", "center": [0.0, 0.0], "radius": 0.3}},
        "domain": {"min": [-1.0, -1.0], "max": [1.0, 1.0]},
        "refine": {"base_level": 3},
        "end": {"kind": "steady", "tol": 1e-6, "max_steps": 2},
        "bc": {"preset": "ldc2d"}
    });
    let (code, err) = run("simulate", &write_config(dir.path(), "s.json", &v), dir.path());
    assert_eq!(code, 3);
    assert!(err.contains("history.csv"), "{err}");
}

#[test]
fn bench_geometry_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = json!({
        "geometry": {"kind": "analytic", "shape": {"kind": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5}},
        "domain": {"min": [-1.0, -1.0, -1.0], "max": [1.0, 1.0, 1.0]},
        "bench": {"subdivisions": [0, 1], "queries": 0}
    });
    let (code, err) = run("bench-geometry", &write_config(dir.path(), "b0.json", &v), dir.path());
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv, "subdivisions,triangles,queries,oracle_ns_per_query,inference_ns_per_query\n");
    v["bench"]["queries"] = json!(20);
    let (code, err) = run("bench-geometry", &write_config(dir.path(), "b1.json", &v), dir.path());
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0,20,20,"));
    assert!(rows[1].starts_with("1,80,20,"));
}
