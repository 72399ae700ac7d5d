//! Flux families and source terms.
//!
//! Four families are supported: p-Laplacian, doubly-nonlinear (porous medium,
//! shallow ice), advection with optional p-Laplacian diffusion, and a linear
//! nonlocal flux defined by integral kernels. Local families evaluate
//! pointwise; the nonlocal one integrates over the mesh with one-point
//! (center) quadrature.
//!
//! Every local family vanishes at zero thickness with zero gradient. For
//! `p < 2` the factor `|g|^{p-2}` is singular at `g = 0`; flux evaluation uses
//! the zero-flux convention there and only Jacobians regularize `|g|` from
//! below by [`GRADIENT_FLOOR`].

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::inequalities::poincare_constant;
use crate::mesh::{Edge, Mesh, Point};

/// Lower bound applied to `|grad|` (and to thickness for `r < 1`) inside
/// Newton linearizations only.
pub const GRADIENT_FLOOR: f64 = 1e-12;

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

fn finite(v: Point) -> bool {
    v[0].is_finite() && v[1].is_finite()
}

/// `|g|^{p-2} g`, zero at `g = 0`.
fn phi(p: f64, g: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else {
        g.abs().powf(p - 2.0) * g
    }
}

/// Derivative of [`phi`], regularized for `p < 2`.
fn dphi(p: f64, g: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if p < 2.0 {
        (p - 1.0) * g.abs().max(GRADIENT_FLOOR).powf(p - 2.0)
    } else {
        (p - 1.0) * g.abs().powf(p - 2.0)
    }
}

fn plap_vec(k: f64, p: f64, grad: Point) -> Point {
    let n2 = dot(grad, grad);
    if n2 == 0.0 {
        return [0.0, 0.0];
    }
    let c = -k * n2.powf(0.5 * (p - 2.0));
    [c * grad[0], c * grad[1]]
}

/// `-k |grad|^{p-2} grad`, with zero flux at zero gradient.
pub fn eval_plaplacian(k: f64, p: f64, grad: Point) -> Result<Point> {
    check_plap_params(k, p)?;
    if !finite(grad) {
        return Err(Error::Numeric("p-Laplacian gradient".into()));
    }
    Ok(plap_vec(k, p, grad))
}

/// `-k v^r |grad|^{p-2} grad`; zero at `v = 0`.
pub fn eval_doubly_nonlinear(k: f64, r: f64, p: f64, v: f64, grad: Point) -> Result<Point> {
    check_doubly_params(k, r, p)?;
    if v < 0.0 {
        return Err(Error::ConstraintViolation(format!("thickness {v} < 0")));
    }
    if !finite(grad) || !v.is_finite() {
        return Err(Error::Numeric("doubly-nonlinear flux arguments".into()));
    }
    if v == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let q = plap_vec(k, p, grad);
    let vr = if r == 0.0 { 1.0 } else { v.powf(r) };
    Ok([vr * q[0], vr * q[1]])
}

/// `-eps |grad|^{p-2} grad + X v` with `X` already evaluated at the point.
pub fn eval_advective(velocity: Point, epsilon: f64, p: f64, v: f64, grad: Point) -> Result<Point> {
    check_advective_params(epsilon, p)?;
    if v < 0.0 {
        return Err(Error::ConstraintViolation(format!("thickness {v} < 0")));
    }
    if !finite(grad) || !finite(velocity) || !v.is_finite() {
        return Err(Error::Numeric("advective flux arguments".into()));
    }
    let d = if epsilon > 0.0 { plap_vec(epsilon, p, grad) } else { [0.0, 0.0] };
    Ok([d[0] + velocity[0] * v, d[1] + velocity[1] * v])
}

fn check_plap_params(k: f64, p: f64) -> Result<()> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Parameter(format!("k must be positive, got {k}")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p must lie in (1, inf), got {p}")));
    }
    Ok(())
}

fn check_doubly_params(k: f64, r: f64, p: f64) -> Result<()> {
    check_plap_params(k, p)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Parameter(format!("r must be nonnegative, got {r}")));
    }
    Ok(())
}

fn check_advective_params(epsilon: f64, p: f64) -> Result<()> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p must lie in (1, inf), got {p}")));
    }
    Ok(())
}

/// Parameters of the substitution `u = w^m` that turns the doubly-nonlinear
/// flux into a p-Laplacian flux in `w` with coefficient `big_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTransform {
    pub m: f64,
    pub big_k: f64,
    pub p: f64,
}

impl PowerTransform {
    /// Transformed flux `-K |grad w|^{p-2} grad w`.
    pub fn flux(&self, grad_w: Point) -> Point {
        plap_vec(self.big_k, self.p, grad_w)
    }

    /// Zeroth-order term `G(w, x) = w^m - dt F(w^m, x) - u_prev`.
    pub fn zeroth_order(&self, w: f64, dt: f64, source: impl Fn(f64) -> f64, u_prev: f64) -> f64 {
        let u = w.powf(self.m);
        u - dt * source(u) - u_prev
    }

    pub fn to_thickness(&self, w: f64) -> f64 {
        w.powf(self.m)
    }

    pub fn from_thickness(&self, u: f64) -> f64 {
        u.powf(1.0 / self.m)
    }
}

/// `m = (p-1)/(r+p-1)` and `K = k m^{p-1}`.
pub fn power_transform_params(k: f64, r: f64, p: f64) -> Result<PowerTransform> {
    check_doubly_params(k, r, p)?;
    let m = (p - 1.0) / (r + p - 1.0);
    Ok(PowerTransform { m, big_k: k * m.powf(p - 1.0), p })
}

type PointFn = dyn Fn(Point) -> Point + Send + Sync;
type ScalarPointFn = dyn Fn(Point) -> f64 + Send + Sync;

/// Velocity field for advective fluxes.
#[derive(Clone)]
pub enum VelocityField {
    /// `X(x) = A x + b`; divergence is the trace of `A`.
    Affine { matrix: [[f64; 2]; 2], offset: Point },
    /// Arbitrary field with its divergence supplied separately.
    Custom { value: Arc<PointFn>, divergence: Arc<ScalarPointFn> },
}

impl VelocityField {
    pub fn constant(v: Point) -> Self {
        VelocityField::Affine { matrix: [[0.0; 2]; 2], offset: v }
    }

    /// `X(x) = c x` (radial compression for `c < 0`).
    pub fn linear(c: f64) -> Self {
        VelocityField::Affine { matrix: [[c, 0.0], [0.0, c]], offset: [0.0, 0.0] }
    }

    pub fn value(&self, x: Point) -> Point {
        match self {
            VelocityField::Affine { matrix: a, offset: b } => {
                [a[0][0] * x[0] + a[0][1] * x[1] + b[0], a[1][0] * x[0] + a[1][1] * x[1] + b[1]]
            }
            VelocityField::Custom { value, .. } => value(x),
        }
    }

    pub fn divergence(&self, x: Point, dimension: usize) -> f64 {
        match self {
            VelocityField::Affine { matrix, .. } => {
                if dimension == 1 {
                    matrix[0][0]
                } else {
                    matrix[0][0] + matrix[1][1]
                }
            }
            VelocityField::Custom { divergence, .. } => divergence(x),
        }
    }
}

impl fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VelocityField::Affine { matrix, offset } => {
                f.debug_struct("Affine").field("matrix", matrix).field("offset", offset).finish()
            }
            VelocityField::Custom { .. } => f.write_str("Custom"),
        }
    }
}

/// An integral kernel `k(x, y)`, given as a function or as samples at
/// cell-center pairs of a specific mesh.
#[derive(Clone)]
pub enum Kernel<T> {
    Zero,
    Function(Arc<dyn Fn(Point, Point) -> T + Send + Sync>),
    /// Row-major `n x n` samples; `x` and `y` are mapped to the nearest cell
    /// center.
    Samples { n: usize, values: Vec<T> },
}

pub type VectorKernel = Kernel<Point>;
pub type ScalarKernel = Kernel<f64>;

impl<T: Copy + Default> Kernel<T> {
    pub fn function(f: impl Fn(Point, Point) -> T + Send + Sync + 'static) -> Self {
        Kernel::Function(Arc::new(f))
    }

    pub fn samples(n: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Configuration(format!("kernel has {} samples, expected {n}x{n}", values.len())));
        }
        Ok(Kernel::Samples { n, values })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }

    /// Fails when sampled data does not match the mesh.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        match self {
            Kernel::Samples { n, .. } if *n != mesh.len() => Err(Error::Configuration(format!(
                "kernel sampled on {n} cells but mesh has {}",
                mesh.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluate at `x` against cell `m` of `mesh` as the `y` argument.
    pub fn eval_at_cell(&self, mesh: &Mesh, x: Point, m: usize) -> T {
        match self {
            Kernel::Zero => T::default(),
            Kernel::Function(f) => f(x, mesh.cells()[m].center),
            Kernel::Samples { n, values } => values[mesh.nearest_cell(x) * n + m],
        }
    }
}

impl ScalarKernel {
    /// Read a dense matrix (whitespace or comma separated, one row per line).
    pub fn load_matrix(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (n, values) = parse_square_matrix(&text)?;
        Kernel::samples(n, values)
    }
}

impl VectorKernel {
    /// Build a vector kernel from one (1D) or two (2D) component matrices.
    pub fn load_matrices(paths: &[&Path]) -> Result<Self> {
        if paths.is_empty() || paths.len() > 2 {
            return Err(Error::Configuration("vector kernel needs one or two component files".into()));
        }
        let mut parts = Vec::new();
        for p in paths {
            parts.push(parse_square_matrix(&std::fs::read_to_string(p)?)?);
        }
        let n = parts[0].0;
        if parts.iter().any(|(m, _)| *m != n) {
            return Err(Error::Configuration("kernel component matrices differ in size".into()));
        }
        let values = (0..n * n)
            .map(|i| [parts[0].1[i], parts.get(1).map_or(0.0, |c| c.1[i])])
            .collect();
        Kernel::samples(n, values)
    }
}

fn parse_square_matrix(text: &str) -> Result<(usize, Vec<f64>)> {
    let mut values = Vec::new();
    let mut rows = 0;
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Configuration(format!("matrix line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::Configuration(format!("matrix line {} has {} columns", lineno + 1, row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    if rows == 0 || width != Some(rows) {
        return Err(Error::Configuration(format!("matrix is {rows}x{} but must be square", width.unwrap_or(0))));
    }
    Ok((rows, values))
}

impl<T> fmt::Debug for Kernel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Zero => f.write_str("Zero"),
            Kernel::Function(_) => f.write_str("Function"),
            Kernel::Samples { n, .. } => write!(f, "Samples({n}x{n})"),
        }
    }
}

/// A continuous-time flux `q(grad u, u, x)`.
#[derive(Debug, Clone)]
pub enum FluxModel {
    /// No transport.
    Zero,
    PLaplacian { k: f64, p: f64 },
    DoublyNonlinear { k: f64, r: f64, p: f64 },
    Advective { epsilon: f64, p: f64, velocity: VelocityField },
    /// `int G(x,y) u(y) dy - int K(x,y) grad u(y) dy`; `delta` is the
    /// user-asserted coercivity constant of `K`.
    Nonlocal { g: VectorKernel, kernel: ScalarKernel, delta: f64 },
}

/// Normal flux across one oriented edge and its derivatives with respect to
/// the owning cell's and the neighbor's values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFlux {
    pub value: f64,
    pub d_own: f64,
    pub d_neighbor: f64,
}

impl FluxModel {
    pub fn plaplacian(k: f64, p: f64) -> Result<Self> {
        check_plap_params(k, p)?;
        Ok(FluxModel::PLaplacian { k, p })
    }

    pub fn doubly_nonlinear(k: f64, r: f64, p: f64) -> Result<Self> {
        check_doubly_params(k, r, p)?;
        Ok(FluxModel::DoublyNonlinear { k, r, p })
    }

    /// Porous medium flux `-k u^{gamma-1} grad u`.
    pub fn porous_medium(k: f64, gamma: f64) -> Result<Self> {
        if !(gamma >= 1.0) {
            return Err(Error::Parameter(format!("porous medium exponent must be >= 1, got {gamma}")));
        }
        Self::doubly_nonlinear(k, gamma - 1.0, 2.0)
    }

    /// Flat-bed shallow-ice flux with Glen exponent `n`: `r = n + 2`, `p = n + 1`.
    pub fn shallow_ice(k: f64, n: f64) -> Result<Self> {
        Self::doubly_nonlinear(k, n + 2.0, n + 1.0)
    }

    pub fn advective(epsilon: f64, p: f64, velocity: VelocityField) -> Result<Self> {
        check_advective_params(epsilon, p)?;
        Ok(FluxModel::Advective { epsilon, p, velocity })
    }

    pub fn nonlocal(g: VectorKernel, kernel: ScalarKernel, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!("coercivity constant must be positive, got {delta}")));
        }
        Ok(FluxModel::Nonlocal { g, kernel, delta })
    }

    /// Re-check parameter ranges (models built by hand bypass constructors).
    pub fn validate(&self) -> Result<()> {
        match self {
            FluxModel::Zero => Ok(()),
            FluxModel::PLaplacian { k, p } => check_plap_params(*k, *p),
            FluxModel::DoublyNonlinear { k, r, p } => check_doubly_params(*k, *r, *p),
            FluxModel::Advective { epsilon, p, .. } => check_advective_params(*epsilon, *p),
            FluxModel::Nonlocal { delta, .. } => {
                if *delta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("coercivity constant must be positive, got {delta}")))
                }
            }
        }
    }

    pub fn is_local(&self) -> bool {
        !matches!(self, FluxModel::Nonlocal { .. })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FluxModel::Zero)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FluxModel::Zero => "zero",
            FluxModel::PLaplacian { .. } => "p-laplacian",
            FluxModel::DoublyNonlinear { .. } => "doubly-nonlinear",
            FluxModel::Advective { .. } => "advective",
            FluxModel::Nonlocal { .. } => "nonlocal",
        }
    }

    /// Pointwise flux vector for local families; `None` for the nonlocal one.
    pub fn eval_local(&self, grad: Point, v: f64, x: Point) -> Option<Result<Point>> {
        Some(match self {
            FluxModel::Zero => Ok([0.0, 0.0]),
            FluxModel::PLaplacian { k, p } => eval_plaplacian(*k, *p, grad),
            FluxModel::DoublyNonlinear { k, r, p } => eval_doubly_nonlinear(*k, *r, *p, v, grad),
            FluxModel::Advective { epsilon, p, velocity } => {
                eval_advective(velocity.value(x), *epsilon, *p, v, grad)
            }
            FluxModel::Nonlocal { .. } => return None,
        })
    }

    /// Two-point normal flux `Q^{(j,k)}` for local families.
    ///
    /// The normal gradient is `(u_k - u_j) / distance`; thickness on the edge
    /// is the mean of the two values; advection takes the upwind value. The
    /// result is exactly antisymmetric under swapping the two cells. Returns
    /// `None` for the nonlocal family.
    pub fn two_point(&self, u_own: f64, u_neighbor: f64, edge: &Edge) -> Option<EdgeFlux> {
        let g = (u_neighbor - u_own) / edge.distance;
        let inv_d = 1.0 / edge.distance;
        Some(match self {
            FluxModel::Zero => EdgeFlux { value: 0.0, d_own: 0.0, d_neighbor: 0.0 },
            FluxModel::PLaplacian { k, p } => {
                let s = k * dphi(*p, g) * inv_d;
                EdgeFlux { value: -k * phi(*p, g), d_own: s, d_neighbor: -s }
            }
            FluxModel::DoublyNonlinear { k, r, p } => {
                let v = 0.5 * (u_own + u_neighbor);
                let (vr, dv) = if *r == 0.0 {
                    (1.0, 0.0)
                } else if *r < 1.0 {
                    (v.powf(*r), 0.5 * r * v.max(GRADIENT_FLOOR).powf(r - 1.0))
                } else {
                    (v.powf(*r), 0.5 * r * v.powf(r - 1.0))
                };
                let f = phi(*p, g);
                let s = vr * dphi(*p, g) * inv_d;
                EdgeFlux { value: -k * vr * f, d_own: -k * (dv * f - s), d_neighbor: -k * (dv * f + s) }
            }
            FluxModel::Advective { epsilon, p, velocity } => {
                let s = dot(velocity.value(edge.midpoint), edge.normal);
                let (diff, dd) = if *epsilon > 0.0 {
                    (-epsilon * phi(*p, g), epsilon * dphi(*p, g) * inv_d)
                } else {
                    (0.0, 0.0)
                };
                if s > 0.0 {
                    EdgeFlux { value: diff + s * u_own, d_own: dd + s, d_neighbor: -dd }
                } else {
                    EdgeFlux { value: diff + s * u_neighbor, d_own: dd, d_neighbor: -dd + s }
                }
            }
            FluxModel::Nonlocal { .. } => return None,
        })
    }

    /// Flux at point `x` given the whole field on `mesh` (any family).
    pub fn eval_at(&self, values: &[f64], mesh: &Mesh, x: Point) -> Result<Point> {
        match self {
            FluxModel::Nonlocal { g, kernel, .. } => eval_nonlocal(g, kernel, values, mesh, x),
            _ => {
                let j = mesh.nearest_cell(x);
                let grads = mesh.cell_gradients(values);
                let grad = if values[j] == 0.0 { [0.0, 0.0] } else { grads[j] };
                self.eval_local(grad, values[j], x).expect("local family")
            }
        }
    }
}

/// `int G(x,y) u(y) dy - int K(x,y) grad u(y) dy` by one-point quadrature at
/// cell centers, with Green-Gauss gradients.
pub fn eval_nonlocal(g: &VectorKernel, kernel: &ScalarKernel, values: &[f64], mesh: &Mesh, x: Point) -> Result<Point> {
    g.check_mesh(mesh)?;
    kernel.check_mesh(mesh)?;
    if values.len() != mesh.len() {
        return Err(Error::Configuration(format!("field has {} values, mesh has {} cells", values.len(), mesh.len())));
    }
    let grads = mesh.cell_gradients(values);
    let mut q = [0.0; 2];
    for (m, cell) in mesh.cells().iter().enumerate() {
        let gv = g.eval_at_cell(mesh, x, m);
        let kv = kernel.eval_at_cell(mesh, x, m);
        q[0] += (gv[0] * values[m] - kv * grads[m][0]) * cell.area;
        q[1] += (gv[1] * values[m] - kv * grads[m][1]) * cell.area;
    }
    Ok(q)
}

/// Precomputed edge-by-cell weights for the nonlocal normal flux, so one
/// evaluation over all edges is two dense mat-vecs.
#[derive(Debug, Clone)]
pub struct NonlocalEdgeOperator {
    /// `G(x_e, y_m) . n_e |w_m|`, row per unique edge.
    g_weights: Vec<Vec<f64>>,
    /// `K(x_e, y_m) |w_m|`, row per unique edge.
    k_weights: Vec<Vec<f64>>,
    normals: Vec<Point>,
}

impl NonlocalEdgeOperator {
    pub fn new(g: &VectorKernel, kernel: &ScalarKernel, mesh: &Mesh, edges: &[(usize, usize, Edge)]) -> Result<Self> {
        g.check_mesh(mesh)?;
        kernel.check_mesh(mesh)?;
        let mut g_weights = Vec::with_capacity(edges.len());
        let mut k_weights = Vec::with_capacity(edges.len());
        for (_, _, e) in edges {
            let mut gr = Vec::with_capacity(mesh.len());
            let mut kr = Vec::with_capacity(mesh.len());
            for (m, cell) in mesh.cells().iter().enumerate() {
                gr.push(dot(g.eval_at_cell(mesh, e.midpoint, m), e.normal) * cell.area);
                kr.push(kernel.eval_at_cell(mesh, e.midpoint, m) * cell.area);
            }
            g_weights.push(gr);
            k_weights.push(kr);
        }
        Ok(NonlocalEdgeOperator { g_weights, k_weights, normals: edges.iter().map(|(_, _, e)| e.normal).collect() })
    }

    /// Normal flux on every unique edge for field `u`.
    pub fn edge_fluxes(&self, mesh: &Mesh, u: &[f64]) -> Vec<f64> {
        let grads = mesh.cell_gradients(u);
        self.g_weights
            .iter()
            .zip(&self.k_weights)
            .zip(&self.normals)
            .map(|((gr, kr), n)| {
                let mut q = 0.0;
                for m in 0..u.len() {
                    q += gr[m] * u[m] - kr[m] * dot(grads[m], *n);
                }
                q
            })
            .collect()
    }
}

/// `2 / ||(div X)_-||_inf` with the sup over cell centers; infinite when the
/// sampled divergence is nonnegative everywhere.
pub fn advective_timestep_bound(velocity: &VelocityField, mesh: &Mesh) -> f64 {
    let worst = mesh
        .centers()
        .map(|c| (-velocity.divergence(c, mesh.dimension())).max(0.0))
        .fold(0.0, f64::max);
    if worst == 0.0 {
        f64::INFINITY
    } else {
        2.0 / worst
    }
}

/// `L2(Omega x Omega)` norm of a vector kernel by center quadrature.
pub fn kernel_l2_norm(g: &VectorKernel, mesh: &Mesh) -> Result<f64> {
    g.check_mesh(mesh)?;
    let mut s = 0.0;
    for ci in mesh.cells() {
        for (m, cm) in mesh.cells().iter().enumerate() {
            let v = g.eval_at_cell(mesh, ci.center, m);
            s += dot(v, v) * ci.area * cm.area;
        }
    }
    Ok(s.sqrt())
}

/// `delta / (C(Omega, p) ||G||)`, infinite when `G` vanishes.
pub fn nonlocal_timestep_bound(delta: f64, g: &VectorKernel, mesh: &Mesh, p: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("coercivity constant must be positive, got {delta}")));
    }
    let gn = if g.is_zero() { 0.0 } else { kernel_l2_norm(g, mesh)? };
    if gn == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(delta / (poincare_constant(mesh.volume(), mesh.dimension(), p)? * gn))
}

type SourceFn = dyn Fn(f64, Point, f64) -> f64 + Send + Sync;

/// A climate source `f(v, x, t)`: accumulation positive, ablation negative.
#[derive(Clone)]
pub struct SourceModel {
    f: Arc<SourceFn>,
    thickness_independent: bool,
    label: String,
}

impl SourceModel {
    /// Source depending on position and time only.
    pub fn from_fn(label: impl Into<String>, f: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        SourceModel { f: Arc::new(move |_, x, t| f(x, t)), thickness_independent: true, label: label.into() }
    }

    /// Source with thickness feedback. Ledgers built from it carry a caveat.
    pub fn thickness_dependent(
        label: impl Into<String>,
        f: impl Fn(f64, Point, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SourceModel { f: Arc::new(f), thickness_independent: false, label: label.into() }
    }

    pub fn zero() -> Self {
        Self::from_fn("zero", |_, _| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::from_fn(format!("constant({c})"), move |_, _| c)
    }

    /// `a + b . x`.
    pub fn linear(a: f64, b: Point) -> Self {
        Self::from_fn(format!("linear({a}, {b:?})"), move |x, _| a + b[0] * x[0] + b[1] * x[1])
    }

    /// `a - b |x - c|`.
    pub fn radial(a: f64, b: f64, center: Point) -> Self {
        Self::from_fn(format!("radial({a}, {b}, {center:?})"), move |x, _| {
            a - b * ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt()
        })
    }

    pub fn eval(&self, v: f64, x: Point, t: f64) -> f64 {
        (self.f)(v, x, t)
    }

    pub fn is_thickness_independent(&self) -> bool {
        self.thickness_independent
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for SourceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceModel")
            .field("label", &self.label)
            .field("thickness_independent", &self.thickness_independent)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionCheck {
    pub outcome: Outcome,
    /// Worst value of the checked quantity (flux norm, continuity ratio, ...).
    pub worst: f64,
    pub points: usize,
}

/// Numeric check of the standard flux assumptions on sampled fields.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FluxAssumptionReport {
    /// Continuity of `(grad, v) -> Q` by shrinking perturbations.
    pub continuity: AssumptionCheck,
    /// Finite flux for finite data (stand-in for integrability).
    pub finite: AssumptionCheck,
    /// Zero flux where the thickness vanishes.
    pub zero_at_dry: AssumptionCheck,
}

impl FluxAssumptionReport {
    pub fn passed(&self) -> bool {
        [&self.continuity, &self.finite, &self.zero_at_dry].iter().all(|c| c.outcome != Outcome::Fail)
    }
}

/// Tolerance for "flux is zero" at dry points.
pub const ZERO_FLUX_TOL: f64 = 1e-14;

/// Check the standard flux assumptions for `model` on each sampled field.
/// Gradients come from the mesh and are set to zero where the thickness is
/// zero.
pub fn check_standard_flux_assumptions(model: &FluxModel, mesh: &Mesh, samples: &[Vec<f64>]) -> Result<FluxAssumptionReport> {
    model.validate()?;
    for s in samples {
        if s.len() != mesh.len() {
            return Err(Error::Mismatch(format!("sample of length {} on mesh of {}", s.len(), mesh.len())));
        }
    }
    if model.is_local() {
        let f = |grad: Point, v: f64, x: Point| -> Point {
            model.eval_local(grad, v.max(0.0), x).expect("local").unwrap_or([f64::NAN; 2])
        };
        return Ok(check_pointwise_flux_assumptions(&f, mesh, samples));
    }
    // Nonlocal: the flux at a point depends on the whole field, so only the
    // zero-at-dry and finiteness checks are meaningful.
    let mut zero = (0usize, 0.0f64);
    let mut fin = (0usize, true);
    for s in samples {
        for c in mesh.cells() {
            let q = model.eval_at(s, mesh, c.center)?;
            fin.0 += 1;
            fin.1 &= finite(q);
            if s[c.id] == 0.0 {
                zero.0 += 1;
                zero.1 = zero.1.max(norm(q));
            }
        }
    }
    Ok(FluxAssumptionReport {
        continuity: AssumptionCheck { outcome: Outcome::NotApplicable, worst: 0.0, points: 0 },
        finite: AssumptionCheck { outcome: if fin.1 { Outcome::Pass } else { Outcome::Fail }, worst: 0.0, points: fin.0 },
        zero_at_dry: AssumptionCheck {
            outcome: if zero.1 <= ZERO_FLUX_TOL { Outcome::Pass } else { Outcome::Fail },
            worst: zero.1,
            points: zero.0,
        },
    })
}

/// Same checks for an arbitrary pointwise flux `f(grad, v, x)`.
///
/// Continuity passes at a point when the response to a perturbation of size
/// `eta` shrinks by at least half as `eta` goes from `1e-2` to `1e-12`, or is
/// at rounding level already. This accepts Hölder-continuous fluxes such as
/// `p < 2` p-Laplacians and rejects jumps.
pub fn check_pointwise_flux_assumptions(
    f: &dyn Fn(Point, f64, Point) -> Point,
    mesh: &Mesh,
    samples: &[Vec<f64>],
) -> FluxAssumptionReport {
    let mut zero = (0usize, 0.0f64);
    let mut fin = (0usize, true);
    let mut cont = (0usize, 0.0f64, true);
    for s in samples {
        let grads = mesh.cell_gradients(s);
        for c in mesh.cells() {
            let v = s[c.id];
            let grad = if v == 0.0 { [0.0, 0.0] } else { grads[c.id] };
            let q = f(grad, v, c.center);
            fin.0 += 1;
            fin.1 &= finite(q);
            if v == 0.0 {
                zero.0 += 1;
                zero.1 = zero.1.max(norm(q));
            }
            let response = |eta: f64| {
                let g2 = [grad[0] + eta, grad[1] + if mesh.dimension() == 2 { eta } else { 0.0 }];
                let q2 = f(g2, v + eta, c.center);
                norm([q2[0] - q[0], q2[1] - q[1]])
            };
            let coarse = response(1e-2);
            let fine = response(1e-12);
            let ratio = if coarse == 0.0 { 0.0 } else { fine / coarse };
            let ok = fine <= 1e-12 * (1.0 + norm(q)) || ratio <= 0.5;
            cont.0 += 1;
            cont.1 = cont.1.max(ratio);
            cont.2 &= ok;
        }
    }
    let pass = |b: bool| if b { Outcome::Pass } else { Outcome::Fail };
    FluxAssumptionReport {
        continuity: AssumptionCheck { outcome: pass(cont.2), worst: cont.1, points: cont.0 },
        finite: AssumptionCheck { outcome: pass(fin.1), worst: 0.0, points: fin.0 },
        zero_at_dry: AssumptionCheck { outcome: pass(zero.1 <= ZERO_FLUX_TOL), worst: zero.1, points: zero.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plaplacian_examples() {
        assert_eq!(eval_plaplacian(1.0, 2.0, [3.0, 4.0]).unwrap(), [-3.0, -4.0]);
        for &p in &[1.2, 2.0, 3.7] {
            assert_eq!(eval_plaplacian(2.5, p, [0.0, 0.0]).unwrap(), [0.0, 0.0]);
        }
        assert_eq!(eval_plaplacian(2.0, 4.0, [1.0, 1.0]).unwrap(), [-4.0, -4.0]);
        assert!(matches!(eval_plaplacian(1.0, 2.0, [f64::NAN, 0.0]), Err(Error::Numeric(_))));
        assert!(matches!(eval_plaplacian(0.0, 2.0, [1.0, 0.0]), Err(Error::Parameter(_))));
        assert!(matches!(eval_plaplacian(1.0, 1.0, [1.0, 0.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn doubly_nonlinear_examples() {
        assert_eq!(eval_doubly_nonlinear(1.0, 2.0, 3.0, 0.0, [5.0, -1.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(eval_doubly_nonlinear(1.0, 2.0, 2.0, 3.0, [1.0, 0.0]).unwrap(), [-9.0, 0.0]);
        assert_eq!(
            eval_doubly_nonlinear(1.0, 0.0, 2.0, 0.7, [0.3, 0.4]).unwrap(),
            eval_plaplacian(1.0, 2.0, [0.3, 0.4]).unwrap()
        );
        assert!(matches!(eval_doubly_nonlinear(1.0, 1.0, 2.0, -1.0, [1.0, 0.0]), Err(Error::ConstraintViolation(_))));
    }

    #[test]
    fn doubly_with_zero_r_matches_plaplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let g = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let v = rng.random_range(0.0..5.0);
            let p = rng.random_range(1.1..5.0);
            let a = eval_doubly_nonlinear(1.3, 0.0, p, v, g).unwrap();
            let b = eval_plaplacian(1.3, p, g).unwrap();
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() <= 1e-15 * b[i].abs());
            }
        }
    }

    #[test]
    fn power_transform_examples() {
        let t = power_transform_params(3.0, 1.0, 2.0).unwrap();
        assert_eq!(t.m, 0.5);
        assert_eq!(t.big_k, 1.5);
        let t = power_transform_params(3.0, 0.0, 2.5).unwrap();
        assert_eq!((t.m, t.big_k), (1.0, 3.0));
        let t = power_transform_params(2.0, 5.0, 4.0).unwrap();
        assert_eq!(t.m, 3.0 / 8.0);
        assert!((t.big_k - 2.0 * (3.0f64 / 8.0).powi(3)).abs() < 1e-15);
        assert!(power_transform_params(1.0, -1.0, 2.0).is_err());
        // G(w) = w^m - dt F - u_prev
        let t = power_transform_params(1.0, 1.0, 2.0).unwrap();
        assert!((t.zeroth_order(4.0, 0.5, |_| 2.0, 0.25) - (2.0 - 1.0 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn power_transform_consistency() {
        // -K|grad w|^{p-2} grad w equals -k u^r |grad u|^{p-2} grad u with
        // u = w^m and grad u = m w^{m-1} grad w.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let k = rng.random_range(0.1..3.0);
            let r = rng.random_range(0.0..6.0);
            let p = rng.random_range(1.2..5.0);
            let t = power_transform_params(k, r, p).unwrap();
            let w: f64 = rng.random_range(0.05..3.0);
            let gw = rng.random_range(-2.0..2.0);
            let u = t.to_thickness(w);
            let gu = t.m * w.powf(t.m - 1.0) * gw;
            let a = t.flux([gw, 0.0])[0];
            let b = eval_doubly_nonlinear(k, r, p, u, [gu, 0.0]).unwrap()[0];
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn power_transform_consistency_on_grid() {
        // Same identity on a fine 1D grid with difference quotients: the
        // transformed flux of w and the doubly-nonlinear flux of u = w^m agree
        // up to the differencing error, which shrinks like h^2.
        let t = power_transform_params(1.0, 1.0, 2.0).unwrap();
        let w = |x: f64| 1.0 + 0.5 * (3.0 * x).sin();
        let mut errs = Vec::new();
        for &h in &[1e-2, 5e-3] {
            let mut worst: f64 = 0.0;
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let gw = (w(x + h) - w(x - h)) / (2.0 * h);
                let gu = (t.to_thickness(w(x + h)) - t.to_thickness(w(x - h))) / (2.0 * h);
                let a = t.flux([gw, 0.0])[0];
                let b = eval_doubly_nonlinear(1.0, 1.0, 2.0, t.to_thickness(w(x)), [gu, 0.0]).unwrap()[0];
                worst = worst.max((a - b).abs());
            }
            errs.push(worst);
        }
        assert!(errs[1] < 0.3 * errs[0]);
    }

    #[test]
    fn advective_examples() {
        assert_eq!(eval_advective([2.0, 0.0], 0.0, 2.0, 3.0, [7.0, 0.0]).unwrap(), [6.0, 0.0]);
        assert_eq!(eval_advective([0.0, 0.0], 1.0, 2.0, 3.0, [7.0, -1.0]).unwrap(), [-7.0, 1.0]);
        assert_eq!(eval_advective([1.0, 0.0], 0.5, 2.0, 2.0, [4.0, 0.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(eval_advective([1.0, 1.0], 0.5, 1.5, 0.0, [0.0, 0.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn nonlocal_examples() {
        let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
        let g = Kernel::function(|_, _| [1.0, 0.0]);
        let k = Kernel::Zero;
        assert_eq!(eval_nonlocal(&g, &k, &[0.0; 4], &mesh, [0.3, 0.0]).unwrap(), [0.0, 0.0]);
        let q = eval_nonlocal(&g, &k, &[1.0; 4], &mesh, [0.3, 0.0]).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-15);

        // one-cell spike: integral of K grad u is the gradient of the
        // containing cell times its width
        let h = 0.25;
        let spike = Kernel::function(move |x: Point, y: Point| if (x[0] - y[0]).abs() < 0.5 * h { 1.0 } else { 0.0 });
        let u = [0.0, 0.5, 1.5, 2.0];
        let x = [0.375, 0.0];
        let grads = mesh.cell_gradients(&u);
        let q = eval_nonlocal(&Kernel::Zero, &spike, &u, &mesh, x).unwrap();
        assert!((q[0] + grads[1][0] * h).abs() < 1e-15);
        assert!((grads[1][0] - 3.0).abs() < 1e-14);

        let bad = Kernel::samples(3, vec![1.0; 9]).unwrap();
        assert!(matches!(eval_nonlocal(&Kernel::Zero, &bad, &u, &mesh, x), Err(Error::Configuration(_))));
    }

    #[test]
    fn advective_bounds() {
        let mesh = Mesh::interval(0.0, 1.0, 10).unwrap();
        assert_eq!(advective_timestep_bound(&VelocityField::linear(-1.0), &mesh), 2.0);
        assert_eq!(advective_timestep_bound(&VelocityField::constant([3.0, 0.0]), &mesh), f64::INFINITY);
        assert_eq!(advective_timestep_bound(&VelocityField::linear(-2.0), &mesh), 1.0);
    }

    #[test]
    fn advective_bound_ignores_divergence_free_part() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 6, 6).unwrap();
        let base = VelocityField::Affine { matrix: [[-0.5, 0.0], [0.0, -1.0]], offset: [0.0, 0.0] };
        let b0 = advective_timestep_bound(&base, &mesh);
        // add rotation, shear and a constant drift
        let with_rotation = VelocityField::Affine { matrix: [[-0.5, -2.0], [2.0, -1.0]], offset: [0.3, -0.1] };
        let with_shear = VelocityField::Affine { matrix: [[-0.5, 5.0], [0.0, -1.0]], offset: [0.0, 0.0] };
        let custom = VelocityField::Custom {
            value: Arc::new(|x: Point| [-0.5 * x[0] + x[1].sin(), -x[1] + x[0].cos()]),
            divergence: Arc::new(|_| -1.5),
        };
        assert_eq!(b0, 2.0 / 1.5);
        assert_eq!(advective_timestep_bound(&with_rotation, &mesh), b0);
        assert_eq!(advective_timestep_bound(&with_shear, &mesh), b0);
        assert_eq!(advective_timestep_bound(&custom, &mesh), b0);
    }

    #[test]
    fn nonlocal_bounds() {
        let mesh = Mesh::interval(0.0, 1.0, 8).unwrap();
        assert_eq!(nonlocal_timestep_bound(1.0, &Kernel::Zero, &mesh, 2.0).unwrap(), f64::INFINITY);
        let zero_fn = Kernel::function(|_, _| [0.0, 0.0]);
        assert_eq!(nonlocal_timestep_bound(1.0, &zero_fn, &mesh, 2.0).unwrap(), f64::INFINITY);
        let g = Kernel::function(|_, _| [1.0, 0.0]);
        assert!((kernel_l2_norm(&g, &mesh).unwrap() - 1.0).abs() < 1e-15);
        let b1 = nonlocal_timestep_bound(1.0, &g, &mesh, 2.0).unwrap();
        assert!((b1 - 0.8).abs() < 1e-15);
        let b2 = nonlocal_timestep_bound(2.0, &g, &mesh, 2.0).unwrap();
        assert!((b2 - 2.0 * b1).abs() < 1e-15);
        assert!(matches!(nonlocal_timestep_bound(0.0, &g, &mesh, 2.0), Err(Error::Parameter(_))));
    }

    fn sample_fields(mesh: &Mesh) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..6)
            .map(|_| {
                mesh.cells()
                    .iter()
                    .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random_range(0.0..2.0) })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn flux_assumptions_local_families_pass() {
        let mesh = Mesh::interval(0.0, 1.0, 20).unwrap();
        let samples = sample_fields(&mesh);
        for model in [
            FluxModel::plaplacian(1.0, 3.0).unwrap(),
            FluxModel::plaplacian(1.0, 1.3).unwrap(),
            FluxModel::doubly_nonlinear(1.0, 2.0, 2.0).unwrap(),
            FluxModel::shallow_ice(1.0, 3.0).unwrap(),
            FluxModel::advective(0.1, 2.0, VelocityField::linear(-1.0)).unwrap(),
        ] {
            let rep = check_standard_flux_assumptions(&model, &mesh, &samples).unwrap();
            assert!(rep.passed(), "{}: {rep:?}", model.name());
            assert!(rep.zero_at_dry.points > 0);
        }
    }

    #[test]
    fn flux_assumptions_negative_controls() {
        let mesh = Mesh::interval(0.0, 1.0, 20).unwrap();
        let samples = sample_fields(&mesh);
        let constant = |_: Point, _: f64, _: Point| [0.5, 0.0];
        let rep = check_pointwise_flux_assumptions(&constant, &mesh, &samples);
        assert_eq!(rep.zero_at_dry.outcome, Outcome::Fail);
        let jump = |g: Point, _: f64, _: Point| if g[0] > 0.0 { [1.0, 0.0] } else { [0.0, 0.0] };
        let rep = check_pointwise_flux_assumptions(&jump, &mesh, &samples);
        assert_eq!(rep.continuity.outcome, Outcome::Fail);
    }

    #[test]
    fn two_point_matches_hand_values() {
        let mesh = Mesh::interval(0.0, 1.0, 2).unwrap();
        let e = mesh.edges_of(0)[0];
        let f = FluxModel::plaplacian(1.0, 2.0).unwrap().two_point(0.0, 1.0, &e).unwrap();
        assert_eq!(f.value, -2.0);
        let adv = FluxModel::advective(0.0, 2.0, VelocityField::constant([1.0, 0.0])).unwrap();
        assert_eq!(adv.two_point(3.0, 5.0, &e).unwrap().value, 3.0);
    }

    fn models() -> Vec<FluxModel> {
        vec![
            FluxModel::plaplacian(1.5, 1.4).unwrap(),
            FluxModel::plaplacian(0.7, 3.0).unwrap(),
            FluxModel::doubly_nonlinear(1.0, 0.5, 2.0).unwrap(),
            FluxModel::doubly_nonlinear(1.0, 5.0, 4.0).unwrap(),
            FluxModel::advective(0.2, 2.0, VelocityField::Affine { matrix: [[-1.0, 0.5], [0.2, 0.3]], offset: [0.1, -0.4] })
                .unwrap(),
            FluxModel::advective(0.0, 2.0, VelocityField::linear(-1.0)).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn two_point_antisymmetric(a in 0.0f64..5.0, b in 0.0f64..5.0, which in 0usize..6) {
            let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 3, 3).unwrap();
            let model = &models()[which];
            for j in 0..mesh.len() {
                for e in mesh.edges_of(j) {
                    let back = mesh.edges_of(e.neighbor).iter().find(|x| x.neighbor == j).unwrap();
                    let f = model.two_point(a, b, e).unwrap();
                    let g = model.two_point(b, a, back).unwrap();
                    prop_assert!(f.value == -g.value);
                }
            }
        }

        #[test]
        fn two_point_derivatives_match_differences(a in 0.2f64..3.0, b in 0.2f64..3.0, which in 0usize..6) {
            prop_assume!((a - b).abs() > 1e-3);
            let mesh = Mesh::interval(0.0, 1.0, 5).unwrap();
            let e = mesh.edges_of(2)[1];
            let model = &models()[which];
            let f = model.two_point(a, b, &e).unwrap();
            let h = 1e-6;
            let da = (model.two_point(a + h, b, &e).unwrap().value - model.two_point(a - h, b, &e).unwrap().value) / (2.0 * h);
            let db = (model.two_point(a, b + h, &e).unwrap().value - model.two_point(a, b - h, &e).unwrap().value) / (2.0 * h);
            prop_assert!((da - f.d_own).abs() <= 1e-5 * (1.0 + da.abs()), "{} vs {}", da, f.d_own);
            prop_assert!((db - f.d_neighbor).abs() <= 1e-5 * (1.0 + db.abs()), "{} vs {}", db, f.d_neighbor);
        }

        #[test]
        fn local_families_vanish_at_zero(which in 0usize..6, x in 0.0f64..1.0) {
            let q = models()[which].eval_local([0.0, 0.0], 0.0, [x, 0.5]).unwrap().unwrap();
            prop_assert_eq!(q, [0.0, 0.0]);
        }
    }
}
