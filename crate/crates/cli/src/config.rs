//! Case configuration: one JSON document per run, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use shiftflow::fem::{BoundaryConditions, SolverParams};
use shiftflow::geom::Aabb;
use shiftflow::inr::{Mlp, TrainConfig};
use shiftflow::mesh::TriangleSoup;
use shiftflow::octree::RefineSpec;
use shiftflow::sdf::{AnalyticShape, ImplicitField};

/// Bad or inconsistent input; maps to exit code 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn config_error<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySource {
    Analytic {
        shape: AnalyticShape,
    },
    /// STL or OBJ; rescaled so its longest bounding-box edge is
    /// `fill_fraction` of the domain edge when given.
    Soup {
        path: PathBuf,
        #[serde(default)]
        fill_fraction: Option<f64>,
    },
    /// Trained network in the INR1 format.
    Model {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum BcPreset {
    Ldc2d {
        #[serde(default = "one")]
        lid_speed: f64,
    },
    Ldc3d {
        #[serde(default = "one")]
        lid_speed: f64,
    },
    Channel {
        #[serde(default = "one")]
        u_max: f64,
    },
    Pipe {
        #[serde(default = "one")]
        u_max: f64,
        radius: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl BcPreset {
    pub fn to_conditions(&self, dim: usize) -> Result<BoundaryConditions> {
        Ok(match *self {
            BcPreset::Ldc2d { lid_speed } if dim == 2 => BoundaryConditions::LidDriven { lid_speed },
            BcPreset::Ldc3d { lid_speed } if dim == 3 => BoundaryConditions::LidDriven { lid_speed },
            BcPreset::Ldc2d { .. } | BcPreset::Ldc3d { .. } => return config_error(format!("lid-driven preset does not match a {dim}D domain")),
            BcPreset::Channel { u_max } => BoundaryConditions::Channel { u_max },
            BcPreset::Pipe { radius, .. } if !(radius > 0.0) => return config_error("pipe radius must be positive"),
            BcPreset::Pipe { u_max, radius } => BoundaryConditions::Pipe { u_max, radius },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndCondition {
    /// Stop when max |u^(n+1) - u^n| / dt < tol.
    Steady { tol: f64, max_steps: usize },
    TFinal { t: f64 },
}

impl Default for EndCondition {
    fn default() -> Self {
        EndCondition::Steady { tol: 1e-6, max_steps: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Model to evaluate against `geometry`.
    pub model: Option<PathBuf>,
    /// Refinement level of the surrogate whose Gauss points are scored.
    pub level: u8,
    pub base_level: u8,
    /// Half-width of the lattice band for the NMSE.
    pub band: f64,
    pub grid_res: usize,
    /// Central-difference step for the network's distance vectors.
    pub fd_step: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { model: None, level: 8, base_level: 3, band: 1.0 / 1024.0, grid_res: 256, fd_step: 2e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub subdivisions: Vec<usize>,
    pub queries: usize,
    pub radius: f64,
    /// Network to time; an untrained default network when absent.
    pub model: Option<PathBuf>,
    /// Timed passes per measurement; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { subdivisions: vec![2, 3, 4], queries: 2000, radius: 0.5, model: None, repeats: 5 }
    }
}

fn default_refine() -> RefineSpec {
    RefineSpec::uniform(5)
}

fn default_lambda() -> f64 {
    0.5
}

fn default_dt() -> f64 {
    0.5
}

fn default_probe_points() -> usize {
    129
}

fn default_bc() -> BcPreset {
    BcPreset::Ldc2d { lid_speed: 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub geometry: GeometrySource,
    /// Use the plane z = slice_z of a 3D geometry as a 2D geometry.
    #[serde(default)]
    pub slice_z: Option<f64>,
    pub domain: DomainBox,
    #[serde(default = "default_refine")]
    pub refine: RefineSpec,
    #[serde(default = "default_lambda")]
    pub lambda_criteria: f64,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub end: EndCondition,
    #[serde(default = "default_bc")]
    pub bc: BcPreset,
    /// Write a VTK snapshot every this many steps (0: final state only).
    #[serde(default)]
    pub output_every: usize,
    #[serde(default = "default_probe_points")]
    pub probe_points: usize,
    /// Step for distance vectors of the geometry field; 1e-7 for analytic
    /// fields and 2e-4 for networks when absent.
    #[serde(default)]
    pub distance_step: Option<f64>,
    /// Overrides the seeds of `train` and `bench` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

/// A loaded configuration with paths resolved against its directory.
pub struct Case {
    pub cfg: CaseConfig,
    pub base: PathBuf,
}

impl Case {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: CaseConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let case = Case { cfg, base };
        case.validate()?;
        Ok(case)
    }

    pub fn from_config(cfg: CaseConfig, base: PathBuf) -> Result<Self> {
        let case = Case { cfg, base };
        case.validate()?;
        Ok(case)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.cfg;
        let dom = self.domain()?;
        if !(c.dt > 0.0) {
            return config_error(format!("dt must be positive, got {}", c.dt));
        }
        if !(0.0..=1.0).contains(&c.lambda_criteria) {
            return config_error("lambda_criteria must lie in [0, 1]");
        }
        if c.slice_z.is_some() && dom.dim != 2 {
            return config_error("slice_z needs a 2D domain");
        }
        match c.end {
            EndCondition::Steady { tol, max_steps } if !(tol > 0.0) || max_steps == 0 => {
                return config_error("steady end condition needs tol > 0 and max_steps > 0")
            }
            EndCondition::TFinal { t } if !(t > 0.0) => return config_error("t_final must be positive"),
            _ => {}
        }
        if c.probe_points < 2 {
            return config_error("probe_points must be at least 2");
        }
        if let Some(h) = c.distance_step {
            if !(h > 0.0) {
                return config_error("distance_step must be positive");
            }
        }
        c.solver.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn domain(&self) -> Result<Aabb> {
        let d = &self.cfg.domain;
        let dim = d.min.len();
        if d.max.len() != dim || !(2..=3).contains(&dim) {
            return config_error("domain min/max must both have 2 or 3 components");
        }
        match Aabb::new(&d.min, &d.max) {
            Some(b) if b.is_cube() => Ok(b),
            Some(_) => config_error("domain must be a cube"),
            None => config_error("domain box is empty or not finite"),
        }
    }

    pub fn load_soup(&self, path: &Path, fill: Option<f64>) -> Result<TriangleSoup> {
        let path = self.resolve(path);
        let soup = TriangleSoup::load(&path).map_err(|e| ConfigError(format!("{e}")))?;
        match fill {
            Some(f) => {
                let dom = self.domain()?;
                if dom.dim != 3 {
                    return config_error("triangle soups need a 3D domain");
                }
                soup.rescale_to_domain(&dom, f).map_err(|e| ConfigError(e.to_string()).into())
            }
            None => Ok(soup),
        }
    }

    pub fn load_model(&self, path: &Path) -> Result<Mlp> {
        let path = self.resolve(path);
        Mlp::load(&path).map_err(|e| ConfigError(format!("cannot load model {}: {e}", path.display())).into())
    }

    /// The field that drives meshing and simulation, sliced when asked.
    pub fn field(&self) -> Result<ImplicitField> {
        let base = match &self.cfg.geometry {
            GeometrySource::Analytic { shape } => ImplicitField::analytic(shape.clone()).map_err(|e| ConfigError(e.to_string()))?,
            GeometrySource::Model { path } => ImplicitField::neural(self.load_model(path)?),
            GeometrySource::Soup { .. } => {
                return config_error("meshing and simulation need an analytic or model geometry; train a model from the soup first")
            }
        };
        let field = match self.cfg.slice_z {
            Some(z) => ImplicitField::slice(base, z).map_err(|e| ConfigError(e.to_string()))?,
            None => base,
        };
        let dim = self.domain()?.dim;
        if field.dim() != dim {
            return config_error(format!("geometry is {}D but the domain is {dim}D", field.dim()));
        }
        Ok(field)
    }

    pub fn distance_step(&self, field: &ImplicitField) -> f64 {
        self.cfg.distance_step.unwrap_or_else(|| if is_neural(field) { 2e-4 } else { 1e-7 })
    }
}

fn is_neural(f: &ImplicitField) -> bool {
    match f {
        ImplicitField::Neural(_) => true,
        ImplicitField::Slice { inner, .. } => is_neural(inner),
        ImplicitField::Analytic(_) => false,
    }
}
