//! Residual assembly and the complementarity solve for one implicit stage.
//!
//! Two backends share the edge-flux machinery:
//!
//! * `Fv`: cell-centered finite volumes, one unknown per primal cell.
//! * `Fve`: 1D finite-volume-element, one unknown per node of the P1
//!   representation, conserved on the dual cells. Mass integrals over dual
//!   cells are exact for P1 fields.
//!
//! Each stage is the complementarity problem `u >= 0`, `r(u) >= 0`,
//! `u r(u) = 0`, solved by a reduced-space active-set Newton method.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flux::{power_transform_params, FluxModel, NonlocalEdgeOperator};
use crate::linalg::BandMatrix;
use crate::mesh::{Edge, Mesh, Point};
use crate::timestepping::StageProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Fv,
    Fve,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Fv => "fv",
            Backend::Fve => "fve",
        }
    }
}

/// Thickness at one time level: per cell (FV) or per node (FVE).
#[derive(Debug, Clone, PartialEq)]
pub struct ThicknessField {
    pub backend: Backend,
    pub values: Vec<f64>,
    pub time: f64,
}

impl ThicknessField {
    pub fn new(backend: Backend, values: Vec<f64>, time: f64) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("thickness value {v}")));
        }
        if let Some(v) = values.iter().find(|v| **v < -1e-12) {
            return Err(Error::ConstraintViolation(format!("thickness {v} < 0")));
        }
        Ok(ThicknessField { backend, values, time })
    }
}

/// Stage residual, one entry per cell or node, in mass units.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector(pub Vec<f64>);

/// Normal fluxes `Q^{(j,k)}` on each interior edge, stored once per edge as
/// seen from the lower-numbered cell `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFluxes {
    pub edges: Vec<(usize, usize)>,
    pub lengths: Vec<f64>,
    pub values: Vec<f64>,
}

impl EdgeFluxes {
    /// `Q^{(j,k)}` for an arbitrary ordered pair, negated when reversed.
    pub fn oriented(&self, j: usize, k: usize) -> Option<f64> {
        self.edges.iter().zip(&self.values).find_map(|(&(a, b), &q)| {
            if (a, b) == (j, k) {
                Some(q)
            } else if (a, b) == (k, j) {
                Some(-q)
            } else {
                None
            }
        })
    }
}

/// The unknown-carrying mesh for a backend plus the flux model, with
/// whatever the flux needs precomputed.
#[derive(Debug, Clone)]
pub struct Discretization<'m> {
    mesh: &'m Mesh,
    backend: Backend,
    flux: FluxModel,
    edges: Vec<(usize, usize, Edge)>,
    nonlocal: Option<NonlocalEdgeOperator>,
}

impl<'m> Discretization<'m> {
    /// `mesh` is the primal mesh; the FVE backend works on its dual.
    pub fn new(mesh: &'m Mesh, backend: Backend, flux: FluxModel) -> Result<Self> {
        flux.validate()?;
        let mesh = unknown_mesh(mesh, backend)?;
        let edges = mesh.unique_edges();
        let nonlocal = match &flux {
            FluxModel::Nonlocal { g, kernel, .. } => Some(NonlocalEdgeOperator::new(g, kernel, mesh, &edges)?),
            _ => None,
        };
        Ok(Discretization { mesh, backend, flux, edges, nonlocal })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn flux(&self) -> &FluxModel {
        &self.flux
    }

    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }

    /// Measures `|w_i|` of the control volumes.
    pub fn weights(&self) -> Vec<f64> {
        self.mesh.cells().iter().map(|c| c.area).collect()
    }

    /// Where the unknowns live (cell centers or nodes).
    pub fn positions(&self) -> Vec<Point> {
        self.mesh.centers().collect()
    }

    /// Source quadrature points (control-volume midpoints).
    pub fn quad_points(&self) -> Vec<Point> {
        self.mesh.cells().iter().map(|c| c.quad_point).collect()
    }

    pub fn unique_edges(&self) -> &[(usize, usize, Edge)] {
        &self.edges
    }

    fn check_len(&self, u: &[f64], what: &str) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::Mismatch(format!("{what} has {} values, discretization has {}", u.len(), self.len())));
        }
        Ok(())
    }

    /// `int_{w_i} u^h` for every control volume: `|w_j| u_j` for FV, exact P1
    /// integrals over dual cells for FVE.
    pub fn cell_masses(&self, u: &[f64]) -> Vec<f64> {
        match self.backend {
            Backend::Fv => self.mesh.cells().iter().map(|c| c.area * u[c.id]).collect(),
            Backend::Fve => (0..self.len())
                .map(|i| {
                    self.mesh
                        .edges_of(i)
                        .iter()
                        .map(|e| 0.125 * e.distance * (3.0 * u[i] + u[e.neighbor]))
                        .sum()
                })
                .collect(),
        }
    }

    /// Edge fluxes of the unscaled model `q` at field `u`.
    pub fn raw_edge_fluxes(&self, u: &[f64]) -> Vec<f64> {
        if let Some(op) = &self.nonlocal {
            return op.edge_fluxes(self.mesh, u);
        }
        self.edges
            .iter()
            .map(|(j, k, e)| self.flux.two_point(u[*j], u[*k], e).expect("local family").value)
            .collect()
    }

    /// `sum_k Q^{(j,k)} l_{(j,k)}` per control volume, with each edge
    /// evaluated once and applied with opposite signs to its two cells.
    pub fn flux_sums(&self, u: &[f64]) -> Vec<f64> {
        let q = self.raw_edge_fluxes(u);
        let mut out = vec![0.0; self.len()];
        for ((j, k, e), q) in self.edges.iter().zip(q) {
            let t = q * e.length;
            out[*j] += t;
            out[*k] -= t;
        }
        out
    }

    /// Discrete divergence `(1/|w_j|) sum_k Q l` of the unscaled flux.
    pub fn divergence(&self, u: &[f64]) -> Vec<f64> {
        self.flux_sums(u).iter().zip(self.mesh.cells()).map(|(s, c)| s / c.area).collect()
    }
}

/// The mesh whose cells carry the unknowns of `backend`.
pub fn unknown_mesh(mesh: &Mesh, backend: Backend) -> Result<&Mesh> {
    match backend {
        Backend::Fv => Ok(mesh),
        Backend::Fve => mesh.dual().ok_or_else(|| {
            Error::Configuration("the fve backend needs a 1D interval mesh with a dual mesh".into())
        }),
    }
}

/// Scaled edge fluxes `Q_n^{(j,k)}` of a stage at `field`.
pub fn assemble_edge_fluxes(stage: &StageProblem, field: &ThicknessField, disc: &Discretization) -> Result<EdgeFluxes> {
    check_field(field, disc)?;
    let values = if stage.flux_scale == 0.0 {
        vec![0.0; disc.edges.len()]
    } else {
        disc.raw_edge_fluxes(&field.values).into_iter().map(|q| stage.flux_scale * q).collect()
    };
    Ok(EdgeFluxes {
        edges: disc.edges.iter().map(|(j, k, _)| (*j, *k)).collect(),
        lengths: disc.edges.iter().map(|(_, _, e)| e.length).collect(),
        values,
    })
}

fn check_field(field: &ThicknessField, disc: &Discretization) -> Result<()> {
    if field.backend != disc.backend {
        return Err(Error::Mismatch(format!(
            "field is {} but discretization is {}",
            field.backend.name(),
            disc.backend.name()
        )));
    }
    disc.check_len(&field.values, "field")
}

/// Stage residual
/// `int_{w_j}(u - u_prev) - dt F_j |w_j| + dt sum_k Q^{(j,k)} l_{(j,k)}`.
pub fn assemble_residual(stage: &StageProblem, field: &ThicknessField, disc: &Discretization) -> Result<ResidualVector> {
    check_field(field, disc)?;
    check_stage(stage, disc)?;
    let r = residual(stage, disc, &field.values, &disc.quad_points());
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("stage residual".into()));
    }
    Ok(ResidualVector(r))
}

fn check_stage(stage: &StageProblem, disc: &Discretization) -> Result<()> {
    if !(stage.dt > 0.0 && stage.dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {}", stage.dt)));
    }
    disc.check_len(&stage.u_prev, "previous field")?;
    disc.check_len(&stage.explicit_source, "explicit source")
}

fn residual(stage: &StageProblem, disc: &Discretization, u: &[f64], quad: &[Point]) -> Vec<f64> {
    let n = u.len();
    let diff: Vec<f64> = (0..n).map(|i| u[i] - stage.u_prev[i]).collect();
    let mut r = disc.cell_masses(&diff);
    for (i, c) in disc.mesh.cells().iter().enumerate() {
        r[i] -= stage.dt * stage.source_at(i, u[i], quad[i]) * c.area;
    }
    if stage.flux_scale != 0.0 {
        let q = disc.raw_edge_fluxes(u);
        for ((j, k, e), q) in disc.edges.iter().zip(q) {
            let t = stage.dt * stage.flux_scale * q * e.length;
            r[*j] += t;
            r[*k] -= t;
        }
    }
    r
}

fn jacobian(stage: &StageProblem, disc: &Discretization, u: &[f64], quad: &[Point]) -> BandMatrix {
    let n = u.len();
    let bw = if disc.nonlocal.is_some() { n.saturating_sub(1) } else { disc.mesh.bandwidth() };
    let mut jac = BandMatrix::zeros(n, bw, bw);
    match disc.backend {
        Backend::Fv => {
            for c in disc.mesh.cells() {
                jac.add(c.id, c.id, c.area);
            }
        }
        Backend::Fve => {
            for i in 0..n {
                for e in disc.mesh.edges_of(i) {
                    jac.add(i, i, 0.375 * e.distance);
                    jac.add(i, e.neighbor, 0.125 * e.distance);
                }
            }
        }
    }
    if stage.source_scale != 0.0 && !stage.source.is_thickness_independent() {
        for (i, c) in disc.mesh.cells().iter().enumerate() {
            let h = 1e-7 * u[i].abs().max(1.0);
            let d = (stage.source.eval(u[i] + h, quad[i], stage.time) - stage.source.eval(u[i] - h, quad[i], stage.time))
                / (2.0 * h);
            jac.add(i, i, -stage.dt * stage.source_scale * d * c.area);
        }
    }
    if stage.flux_scale == 0.0 {
        return jac;
    }
    let s = stage.dt * stage.flux_scale;
    if let Some(op) = &disc.nonlocal {
        // The nonlocal flux is linear in u, so its columns are exact images
        // of unit vectors.
        let mut unit = vec![0.0; n];
        for m in 0..n {
            unit[m] = 1.0;
            let q = op.edge_fluxes(disc.mesh, &unit);
            unit[m] = 0.0;
            for ((j, k, e), q) in disc.edges.iter().zip(q) {
                if q != 0.0 {
                    jac.add(*j, m, s * q * e.length);
                    jac.add(*k, m, -s * q * e.length);
                }
            }
        }
        return jac;
    }
    for (j, k, e) in &disc.edges {
        let f = disc.flux.two_point(u[*j], u[*k], e).expect("local family");
        let a = s * e.length * f.d_own;
        let b = s * e.length * f.d_neighbor;
        jac.add(*j, *j, a);
        jac.add(*j, *k, b);
        jac.add(*k, *j, -a);
        jac.add(*k, *k, -b);
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Newton iterations until the certificate held.
    pub iterations: usize,
    /// Extra Newton steps taken afterwards to reduce the residual to rounding.
    pub polish_steps: usize,
    /// `max_i max(-u_i, -r_i, |u_i r_i|) / scale`.
    pub complementarity: f64,
    /// Euclidean norm of `min(u_i, r_i / |w_i|)`.
    pub natural_residual: f64,
    /// Indices with `u_i = 0` in the returned field.
    pub active_set: Vec<usize>,
    pub converged: bool,
    #[serde(skip)]
    pub residual: Vec<f64>,
}

impl SolveReport {
    pub fn log_line(&self) -> String {
        format!(
            "iterations={} polish={} complementarity={:.3e} natural_residual={:.3e} active_set_size={} converged={}",
            self.iterations,
            self.polish_steps,
            self.complementarity,
            self.natural_residual,
            self.active_set.len(),
            self.converged
        )
    }
}

fn residual_scale(r: &[f64]) -> f64 {
    r.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

fn complementarity_measure(u: &[f64], r: &[f64]) -> f64 {
    let scale = residual_scale(r);
    u.iter()
        .zip(r)
        .map(|(&u, &r)| (-u).max(-r).max((u * r).abs()))
        .fold(0.0f64, f64::max)
        / scale
}

fn natural_residual(u: &[f64], r: &[f64], w: &[f64]) -> f64 {
    u.iter().zip(r).zip(w).map(|((&u, &r), &w)| u.min(r / w).powi(2)).sum::<f64>().sqrt()
}

/// Solve the stage complementarity problem starting from `u_prev`.
pub fn solve_ncp(stage: &StageProblem, disc: &Discretization, opts: &SolverOptions) -> Result<(ThicknessField, SolveReport)> {
    solve_ncp_from(stage, disc, &stage.u_prev.clone(), opts)
}

/// Solve the stage complementarity problem from an explicit initial guess.
pub fn solve_ncp_from(
    stage: &StageProblem,
    disc: &Discretization,
    initial: &[f64],
    opts: &SolverOptions,
) -> Result<(ThicknessField, SolveReport)> {
    check_stage(stage, disc)?;
    disc.check_len(initial, "initial guess")?;
    if let Some(v) = stage.u_prev.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::ConstraintViolation(format!("previous thickness {v} < 0")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let quad = disc.quad_points();
    let w = disc.weights();
    let eval = |u: &[f64]| -> Result<Vec<f64>> {
        let r = residual(stage, disc, u, &quad);
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("stage residual".into()));
        }
        Ok(r)
    };
    let newton_step = |u: &[f64], r: &[f64]| -> Result<Vec<f64>> {
        let inactive: Vec<usize> = (0..u.len()).filter(|&i| !(u[i] == 0.0 && r[i] > 0.0)).collect();
        let mut dir = vec![0.0; u.len()];
        if inactive.is_empty() {
            return Ok(dir);
        }
        let jac = jacobian(stage, disc, u, &quad).principal(&inactive);
        let rhs: Vec<f64> = inactive.iter().map(|&i| -r[i]).collect();
        let d = jac.solve(&rhs)?;
        for (&i, d) in inactive.iter().zip(d) {
            dir[i] = d;
        }
        Ok(dir)
    };
    let step = |u: &[f64], dir: &[f64], lambda: f64| -> Vec<f64> {
        u.iter().zip(dir).map(|(u, d)| (u + lambda * d).max(0.0)).collect()
    };
    let certified = |u: &[f64], r: &[f64]| complementarity_measure(u, r) <= opts.tol;

    let mut u: Vec<f64> = initial.iter().map(|v| v.max(0.0)).collect();
    let mut r = eval(&u)?;
    let mut iterations = 0;
    let fail = |u: Vec<f64>, r: Vec<f64>, iterations: usize| -> Error {
        let report = SolveReport {
            iterations,
            polish_steps: 0,
            complementarity: complementarity_measure(&u, &r),
            natural_residual: natural_residual(&u, &r, &w),
            active_set: (0..u.len()).filter(|&i| u[i] == 0.0).collect(),
            converged: false,
            residual: r,
        };
        Error::NotConverged {
            step: None,
            last: Box::new(ThicknessField { backend: disc.backend, values: u, time: stage.time }),
            report: Box::new(report),
        }
    };
    while !certified(&u, &r) {
        if iterations == opts.max_iter {
            return Err(fail(u, r, iterations));
        }
        iterations += 1;
        let dir = match newton_step(&u, &r) {
            Ok(d) => d,
            Err(_) => return Err(fail(u, r, iterations)),
        };
        let phi0 = natural_residual(&u, &r, &w);
        let mut lambda = 1.0;
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for _ in 0..40 {
            let trial = step(&u, &dir, lambda);
            if let Ok(rt) = eval(&trial) {
                let phi = natural_residual(&trial, &rt, &w);
                if phi <= (1.0 - 1e-4 * lambda) * phi0 {
                    best = Some((phi, trial, rt));
                    break;
                }
                if best.as_ref().is_none_or(|b| phi < b.0) {
                    best = Some((phi, trial, rt));
                }
            }
            lambda *= 0.5;
        }
        match best {
            Some((_, trial, rt)) => {
                u = trial;
                r = rt;
            }
            None => return Err(fail(u, r, iterations)),
        }
    }

    // Certified. Keep taking full Newton steps while they shrink the natural
    // residual tenfold, so wet-cell residuals end at rounding level.
    let mut polish_steps = 0;
    for _ in 0..3 {
        let phi0 = natural_residual(&u, &r, &w);
        if phi0 == 0.0 {
            break;
        }
        let Ok(dir) = newton_step(&u, &r) else { break };
        let trial = step(&u, &dir, 1.0);
        let Ok(rt) = eval(&trial) else { break };
        if natural_residual(&trial, &rt, &w) <= 0.1 * phi0 && certified(&trial, &rt) {
            u = trial;
            r = rt;
            polish_steps += 1;
        } else {
            break;
        }
    }

    let report = SolveReport {
        iterations,
        polish_steps,
        complementarity: complementarity_measure(&u, &r),
        natural_residual: natural_residual(&u, &r, &w),
        active_set: (0..u.len()).filter(|&i| u[i] == 0.0).collect(),
        converged: true,
        residual: r,
    };
    Ok((ThicknessField { backend: disc.backend, values: u, time: stage.time }, report))
}

/// Worst violations of the three complementarity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplementarityCertificate {
    pub min_value: f64,
    pub min_residual: f64,
    pub max_product: f64,
    pub scale: f64,
    pub nonnegative: bool,
    pub residual_nonnegative: bool,
    pub complementary: bool,
}

impl ComplementarityCertificate {
    pub fn passed(&self) -> bool {
        self.nonnegative && self.residual_nonnegative && self.complementary
    }
}

/// Check `u >= -1e-12`, `r >= -tol scale` and `|u r| <= tol scale` with
/// `scale = max(1, ||r||_inf)`.
pub fn verify_complementarity(field: &ThicknessField, residual: &ResidualVector, tol: f64) -> ComplementarityCertificate {
    let u = &field.values;
    let r = &residual.0;
    let scale = residual_scale(r);
    let min_value = u.iter().copied().fold(f64::INFINITY, f64::min);
    let min_residual = r.iter().copied().fold(f64::INFINITY, f64::min);
    let max_product = u.iter().zip(r).map(|(u, r)| (u * r).abs()).fold(0.0, f64::max);
    ComplementarityCertificate {
        min_value,
        min_residual,
        max_product,
        scale,
        nonnegative: u.is_empty() || min_value >= -1e-12,
        residual_nonnegative: r.is_empty() || min_residual >= -tol * scale,
        complementary: max_product <= tol * scale,
    }
}

/// Strong-form checks after a solve: the residual vanishes on wet cells and
/// the sign condition `u_prev + dt F <= tol` holds on dry ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteriorReport {
    pub wet: usize,
    pub dry: usize,
    /// Largest `|r_j| / |w_j|` over wet cells.
    pub max_wet_residual: f64,
    /// Largest `u_prev + dt F_j` over dry cells (`-inf` if none).
    pub max_dry_sign: f64,
    pub wet_violations: Vec<usize>,
    pub dry_violations: Vec<usize>,
}

impl InteriorReport {
    pub fn passed(&self) -> bool {
        self.wet_violations.is_empty() && self.dry_violations.is_empty()
    }
}

pub fn check_interior_pde_residual(
    field: &ThicknessField,
    stage: &StageProblem,
    disc: &Discretization,
    tol: f64,
) -> Result<InteriorReport> {
    let r = assemble_residual(stage, field, disc)?.0;
    let quad = disc.quad_points();
    let mut rep = InteriorReport {
        wet: 0,
        dry: 0,
        max_wet_residual: 0.0,
        max_dry_sign: f64::NEG_INFINITY,
        wet_violations: Vec::new(),
        dry_violations: Vec::new(),
    };
    for (i, c) in disc.mesh.cells().iter().enumerate() {
        let u = field.values[i];
        if u > 0.0 {
            rep.wet += 1;
            let v = r[i].abs() / c.area;
            rep.max_wet_residual = rep.max_wet_residual.max(v);
            if v > tol {
                rep.wet_violations.push(i);
            }
        } else {
            rep.dry += 1;
            let s = stage.u_prev[i] + stage.dt * stage.source_at(i, 0.0, quad[i]);
            rep.max_dry_sign = rep.max_dry_sign.max(s);
            if s > tol {
                rep.dry_violations.push(i);
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// `<A(u) - A(v), u - v>` at the distinct pair where it is smallest
    /// relative to `scale`.
    pub min_inner: f64,
    /// `sum_i |A(u)_i - A(v)_i| |u_i - v_i|` at the minimizing pair.
    pub scale: f64,
    /// True when the doubly-nonlinear operator was tested in the variable
    /// `w = u^{1/m}`.
    pub transformed: bool,
    pub passed: bool,
}

/// Random nonnegative fields: iid values with some exact zeros, or smooth
/// low-mode profiles on a positive offset. The smooth family vanishes in
/// its perturbation at the right end, which is where the advective
/// counterexamples live.
fn sample_field(rng: &mut ChaCha8Rng, positions: &[Point], lo: f64, hi: f64) -> Vec<f64> {
    if rng.random::<f64>() < 0.5 {
        positions
            .iter()
            .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(0.0..2.0) })
            .collect()
    } else {
        let c: Vec<f64> = (0..3).map(|m| rng.random_range(-1.0..1.0) / (m + 1) as f64).collect();
        let offset = c.iter().map(|v| v.abs()).sum::<f64>() + rng.random_range(0.0..1.0);
        positions
            .iter()
            .map(|x| {
                let s = (x[0] - lo) / (hi - lo);
                offset
                    + c.iter()
                        .enumerate()
                        .map(|(m, a)| a * ((m as f64 + 0.5) * std::f64::consts::PI * s).cos())
                        .sum::<f64>()
            })
            .map(|v: f64| v.max(0.0))
            .collect()
    }
}

type Operator<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;

/// Sample `<A(u) - A(v), u - v>` over random admissible pairs.
///
/// For doubly-nonlinear fluxes with `r > 0` the operator is sampled after the
/// substitution `u = w^m`, where it is a p-Laplacian plus an increasing
/// zeroth-order term; the untransformed operator is not monotone in `u`.
pub fn check_monotonicity(stage: &StageProblem, disc: &Discretization, n_samples: usize, seed: u64) -> Result<MonotonicityReport> {
    check_stage(stage, disc)?;
    if stage.source_scale != 0.0 && !stage.source.is_thickness_independent() {
        return Err(Error::Parameter("monotonicity sampling needs a thickness-independent source".into()));
    }
    let positions = disc.positions();
    let (lo, hi) = positions.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x[0]), b.max(x[0])));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo, lo + 1.0) };
    let quad = disc.quad_points();

    let transform = match disc.flux() {
        FluxModel::DoublyNonlinear { k, r, p } if *r > 0.0 => Some(power_transform_params(*k, *r, *p)?),
        _ => None,
    };
    let operator: Operator = match transform {
        None => Box::new(|u: &[f64]| residual(stage, disc, u, &quad)),
        Some(t) => {
            let plap = Discretization::new_on(disc.mesh, disc.backend, FluxModel::PLaplacian { k: t.big_k, p: t.p });
            Box::new(move |w: &[f64]| {
                let u: Vec<f64> = w.iter().map(|&w| t.to_thickness(w)).collect();
                let mut r: Vec<f64> = residual(stage, disc, &u, &quad);
                // replace the flux part with the transformed one
                if stage.flux_scale != 0.0 {
                    let orig = disc.flux_sums(&u);
                    let new = plap.flux_sums(w);
                    for i in 0..r.len() {
                        r[i] += stage.dt * stage.flux_scale * (new[i] - orig[i]);
                    }
                }
                r
            })
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_inner = f64::INFINITY;
    let mut scale_at_min = 0.0;
    let mut worst_ratio = f64::INFINITY;
    let mut passed = true;
    for s in 0..n_samples {
        let u = sample_field(&mut rng, &positions, lo, hi);
        let v = if s == 0 { u.clone() } else { sample_field(&mut rng, &positions, lo, hi) };
        let au = operator(&u);
        let av = operator(&v);
        let mut inner = 0.0;
        let mut scale = 0.0;
        for i in 0..u.len() {
            let a = au[i] - av[i];
            let d = u[i] - v[i];
            inner += a * d;
            scale += (a * d).abs();
        }
        if inner < -1e-10 * scale || (s == 0 && inner != 0.0) {
            passed = false;
        }
        // the u = v sample is only a consistency check
        if s == 0 || scale == 0.0 {
            continue;
        }
        if inner / scale < worst_ratio {
            worst_ratio = inner / scale;
            min_inner = inner;
            scale_at_min = scale;
        }
    }
    if min_inner == f64::INFINITY {
        min_inner = 0.0;
    }
    Ok(MonotonicityReport { samples: n_samples, min_inner, scale: scale_at_min, transformed: transform.is_some(), passed })
}

impl<'m> Discretization<'m> {
    /// Build on an already-selected unknown mesh (no dual lookup).
    fn new_on(mesh: &'m Mesh, backend: Backend, flux: FluxModel) -> Discretization<'m> {
        Discretization { mesh, backend, flux, edges: mesh.unique_edges(), nonlocal: None }
    }
}
