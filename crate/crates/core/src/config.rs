//! Serializable descriptions of meshes, models, schemes and runs.
//!
//! Every component description is a JSON object tagged by `kind`; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{FluxModel, Kernel, ScalarKernel, SourceModel, VectorKernel, VelocityField};
use crate::mesh::{Mesh, Point};
use crate::solver::{Backend, SolverOptions};
use crate::timestepping::SchemeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeshSpec {
    Interval { a: f64, b: f64, n: usize },
    Rectangle { x: [f64; 2], y: [f64; 2], nx: usize, ny: usize },
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh> {
        match self {
            MeshSpec::Interval { a, b, n } => Mesh::interval(*a, *b, *n),
            MeshSpec::Rectangle { x, y, nx, ny } => Mesh::rectangle(*x, *y, *nx, *ny),
        }
    }

    /// Same domain with every cell count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> MeshSpec {
        match self {
            MeshSpec::Interval { a, b, n } => MeshSpec::Interval { a: *a, b: *b, n: n * factor },
            MeshSpec::Rectangle { x, y, nx, ny } => MeshSpec::Rectangle { x: *x, y: *y, nx: nx * factor, ny: ny * factor },
        }
    }

    /// Cell width in the first coordinate.
    pub fn h(&self) -> f64 {
        match self {
            MeshSpec::Interval { a, b, n } => (b - a) / *n as f64,
            MeshSpec::Rectangle { x, nx, .. } => (x[1] - x[0]) / *nx as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VelocitySpec {
    Constant { value: Point },
    /// `X(x) = c x`.
    Linear { c: f64 },
    Affine { matrix: [[f64; 2]; 2], offset: Point },
}

impl VelocitySpec {
    pub fn build(&self) -> VelocityField {
        match self {
            VelocitySpec::Constant { value } => VelocityField::constant(*value),
            VelocitySpec::Linear { c } => VelocityField::linear(*c),
            VelocitySpec::Affine { matrix, offset } => VelocityField::Affine { matrix: *matrix, offset: *offset },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarKernelSpec {
    Zero,
    Constant { value: f64 },
    /// `amplitude exp(-|x-y|^2 / (2 width^2))`.
    Gaussian { amplitude: f64, width: f64 },
    /// Dense matrix sampled at cell centers.
    Matrix { path: PathBuf },
}

impl ScalarKernelSpec {
    pub fn build(&self, base: &Path) -> Result<ScalarKernel> {
        Ok(match self {
            ScalarKernelSpec::Zero => Kernel::Zero,
            ScalarKernelSpec::Constant { value } => {
                let v = *value;
                Kernel::function(move |_, _| v)
            }
            ScalarKernelSpec::Gaussian { amplitude, width } => {
                let (a, w) = (*amplitude, *width);
                if !(w > 0.0) {
                    return Err(Error::Parameter(format!("kernel width must be positive, got {w}")));
                }
                Kernel::function(move |x: Point, y: Point| {
                    a * (-((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)) / (2.0 * w * w)).exp()
                })
            }
            ScalarKernelSpec::Matrix { path } => Kernel::load_matrix(&base.join(path))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VectorKernelSpec {
    Zero,
    Constant { value: Point },
    /// One component matrix per dimension.
    Matrix { paths: Vec<PathBuf> },
}

impl VectorKernelSpec {
    pub fn build(&self, base: &Path) -> Result<VectorKernel> {
        Ok(match self {
            VectorKernelSpec::Zero => Kernel::Zero,
            VectorKernelSpec::Constant { value } => {
                let v = *value;
                Kernel::function(move |_, _| v)
            }
            VectorKernelSpec::Matrix { paths } => {
                let full: Vec<PathBuf> = paths.iter().map(|p| base.join(p)).collect();
                let refs: Vec<&Path> = full.iter().map(PathBuf::as_path).collect();
                Kernel::load_matrices(&refs)?
            }
        })
    }
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FluxSpec {
    Zero,
    PLaplacian { k: f64, p: f64 },
    DoublyNonlinear { k: f64, r: f64, p: f64 },
    PorousMedium { k: f64, gamma: f64 },
    ShallowIce { k: f64, n: f64 },
    Advective {
        #[serde(default)]
        epsilon: f64,
        #[serde(default = "default_p")]
        p: f64,
        velocity: VelocitySpec,
    },
    Nonlocal { g: VectorKernelSpec, kernel: ScalarKernelSpec, delta: f64 },
}

impl FluxSpec {
    /// Relative paths in kernel specs resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<FluxModel> {
        match self {
            FluxSpec::Zero => Ok(FluxModel::Zero),
            FluxSpec::PLaplacian { k, p } => FluxModel::plaplacian(*k, *p),
            FluxSpec::DoublyNonlinear { k, r, p } => FluxModel::doubly_nonlinear(*k, *r, *p),
            FluxSpec::PorousMedium { k, gamma } => FluxModel::porous_medium(*k, *gamma),
            FluxSpec::ShallowIce { k, n } => FluxModel::shallow_ice(*k, *n),
            FluxSpec::Advective { epsilon, p, velocity } => FluxModel::advective(*epsilon, *p, velocity.build()),
            FluxSpec::Nonlocal { g, kernel, delta } => FluxModel::nonlocal(g.build(base)?, kernel.build(base)?, *delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    Zero,
    Constant { value: f64 },
    /// `a + b . x`.
    Linear { a: f64, b: Point },
    /// `max(0, a + b . x)`.
    ClippedLinear { a: f64, b: Point },
    /// `a - b |x - center|`.
    Radial { a: f64, b: f64, center: Point },
}

impl SourceSpec {
    pub fn build(&self) -> SourceModel {
        match self {
            SourceSpec::Zero => SourceModel::zero(),
            SourceSpec::Constant { value } => SourceModel::constant(*value),
            SourceSpec::Linear { a, b } => SourceModel::linear(*a, *b),
            SourceSpec::ClippedLinear { a, b } => {
                let (a, b) = (*a, *b);
                SourceModel::from_fn(format!("clipped-linear({a}, {b:?})"), move |x, _| (a + b[0] * x[0] + b[1] * x[1]).max(0.0))
            }
            SourceSpec::Radial { a, b, center } => SourceModel::radial(*a, *b, *center),
        }
    }

    /// True when the source is nonnegative everywhere.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            SourceSpec::Zero | SourceSpec::ClippedLinear { .. } => true,
            SourceSpec::Constant { value } => *value >= 0.0,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant { value: f64 },
    /// `mean + amplitude cos(pi (x - a) / (b - a))` along the first axis.
    Cosine { mean: f64, amplitude: f64 },
    /// `height max(0, 1 - |x - center|^2 / radius^2)`.
    Dome { center: Point, radius: f64, height: f64 },
    /// Explicit values, one per unknown.
    Values { values: Vec<f64> },
}

impl InitialSpec {
    /// Evaluate at the unknown positions; `extent` is the first-axis range.
    pub fn evaluate(&self, positions: &[Point], extent: [f64; 2]) -> Result<Vec<f64>> {
        let v: Vec<f64> = match self {
            InitialSpec::Constant { value } => vec![*value; positions.len()],
            InitialSpec::Cosine { mean, amplitude } => positions
                .iter()
                .map(|x| mean + amplitude * (std::f64::consts::PI * (x[0] - extent[0]) / (extent[1] - extent[0])).cos())
                .collect(),
            InitialSpec::Dome { center, radius, height } => positions
                .iter()
                .map(|x| {
                    let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                    height * (1.0 - d2 / (radius * radius)).max(0.0)
                })
                .collect(),
            InitialSpec::Values { values } => {
                if values.len() != positions.len() {
                    return Err(Error::Configuration(format!(
                        "initial field has {} values but the run has {} unknowns",
                        values.len(),
                        positions.len()
                    )));
                }
                values.clone()
            }
        };
        if let Some(x) = v.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::ConstraintViolation(format!("initial thickness {x} is not a nonnegative number")));
        }
        Ok(v)
    }
}

/// A fixed step or an explicit list of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSchedule {
    Fixed(f64),
    List(Vec<f64>),
}

impl DtSchedule {
    pub fn steps(&self, steps: usize) -> Result<Vec<f64>> {
        let v = match self {
            DtSchedule::Fixed(dt) => vec![*dt; steps],
            DtSchedule::List(list) => {
                if list.len() != steps {
                    return Err(Error::Configuration(format!("dt list has {} entries but steps = {steps}", list.len())));
                }
                list.clone()
            }
        };
        if let Some(dt) = v.iter().find(|dt| !(**dt > 0.0 && dt.is_finite())) {
            return Err(Error::Configuration(format!("time step {dt} is not positive")));
        }
        Ok(v)
    }

    pub fn scaled(&self, factor: f64) -> DtSchedule {
        match self {
            DtSchedule::Fixed(dt) => DtSchedule::Fixed(dt * factor),
            DtSchedule::List(l) => DtSchedule::List(l.iter().map(|d| d * factor).collect()),
        }
    }

    /// Each step split into `parts` equal substeps.
    pub fn subdivided(&self, parts: usize) -> DtSchedule {
        match self {
            DtSchedule::Fixed(dt) => DtSchedule::Fixed(dt / parts as f64),
            DtSchedule::List(l) => DtSchedule::List(l.iter().flat_map(|d| std::iter::repeat_n(d / parts as f64, parts)).collect()),
        }
    }
}

fn default_snapshot_every() -> usize {
    10
}

/// A run description as read from JSON. Either names a catalog scenario
/// (optionally overriding some of its fields) or spells out every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
    #[serde(default)]
    pub flux: Option<FluxSpec>,
    #[serde(default)]
    pub source: Option<SourceSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub scheme: Option<SchemeSpec>,
    #[serde(default)]
    pub dt: Option<DtSchedule>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub backend: Option<Backend>,
    #[serde(default)]
    pub solver: Option<SolverOptions>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
}

impl RunConfig {
    /// Parse JSON; errors name the offending key path and position.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            Error::Configuration(format!("at `{}` (line {}, column {}): {inner}", e.path(), inner.line(), inner.column()))
        })
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
