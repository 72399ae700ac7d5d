//! Built-in experiments and the step loop that runs them.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{DtSchedule, FluxSpec, InitialSpec, MeshSpec, RunConfig, ScalarKernelSpec, SourceSpec, VectorKernelSpec, VelocitySpec};
use crate::conservation::{step_ledger, total_mass, Ledger, LedgerEntry, LedgerTotals};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::solver::{
    assemble_edge_fluxes, solve_ncp, verify_complementarity, Backend, Discretization, ResidualVector, SolveReport,
    SolverOptions, ThicknessField,
};
use crate::timestepping::{step_stages, SchemeSpec};

/// Properties a scenario promises; checked after every run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expectation {
    #[serde(rename = "balance-closes")]
    BalanceCloses,
    #[serde(rename = "complementarity")]
    Complementarity,
    #[serde(rename = "R=0")]
    NoRetreat,
    #[serde(rename = "R>0")]
    RetreatOccurs,
    #[serde(rename = "R<=bound")]
    RetreatWithinBound,
    #[serde(rename = "B=0")]
    NoLeak,
    #[serde(rename = "S=0")]
    NoSlop,
    #[serde(rename = "S>=0")]
    SlopNonnegative,
    #[serde(rename = "M-constant")]
    ConstantMass,
    #[serde(rename = "all-wet")]
    AllWet,
    /// Checked by [`refinement_study`], not by a single run.
    #[serde(rename = "B-decreases-under-refinement")]
    LeakDecreasesUnderRefinement,
    /// Checked by [`refinement_study`], not by a single run.
    #[serde(rename = "R-scales-with-dt")]
    RetreatScalesWithDt,
}

impl Expectation {
    pub const ALL: [Expectation; 12] = [
        Expectation::BalanceCloses,
        Expectation::Complementarity,
        Expectation::NoRetreat,
        Expectation::RetreatOccurs,
        Expectation::RetreatWithinBound,
        Expectation::NoLeak,
        Expectation::NoSlop,
        Expectation::SlopNonnegative,
        Expectation::ConstantMass,
        Expectation::AllWet,
        Expectation::LeakDecreasesUnderRefinement,
        Expectation::RetreatScalesWithDt,
    ];

    pub fn tag(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(tag.into()))
            .map_err(|_| Error::Configuration(format!("unknown expectation tag `{tag}`")))
    }

    pub fn is_study_only(self) -> bool {
        matches!(self, Expectation::LeakDecreasesUnderRefinement | Expectation::RetreatScalesWithDt)
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub mesh: MeshSpec,
    pub flux: FluxSpec,
    pub source: SourceSpec,
    pub initial: InitialSpec,
    pub scheme: SchemeSpec,
    pub dt: DtSchedule,
    pub steps: usize,
    pub backend: Backend,
    pub solver: SolverOptions,
    pub expected: Vec<Expectation>,
    /// Directory that relative kernel paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[allow(clippy::too_many_arguments)]
fn scenario(
    name: &str,
    description: &str,
    mesh: MeshSpec,
    flux: FluxSpec,
    source: SourceSpec,
    initial: InitialSpec,
    scheme: SchemeSpec,
    dt: f64,
    steps: usize,
    expected: &[Expectation],
) -> Scenario {
    Scenario {
        name: name.into(),
        description: description.into(),
        mesh,
        flux,
        source,
        initial,
        scheme,
        dt: DtSchedule::Fixed(dt),
        steps,
        backend: Backend::Fv,
        solver: SolverOptions::default(),
        expected: expected.to_vec(),
        base_dir: PathBuf::from("."),
    }
}

fn unit_interval(n: usize) -> MeshSpec {
    MeshSpec::Interval { a: 0.0, b: 1.0, n }
}

fn pme() -> FluxSpec {
    FluxSpec::PorousMedium { k: 1.0, gamma: 2.0 }
}

/// The ablation-margin problem: porous-medium flux, accumulation
/// `0.6 - 1.2x`, a thin initial layer over the whole domain. The ablation
/// zone first strips the thin layer (retreat), then the flow from the
/// accumulation zone advances the margin again.
pub fn ablation_margin() -> Scenario {
    use Expectation::*;
    scenario(
        "ablation-margin",
        "porous-medium flow, linear climate 0.6-1.2x, thin initial layer that retreats under ablation",
        unit_interval(100),
        pme(),
        SourceSpec::Linear { a: 0.6, b: [-1.2, 0.0] },
        InitialSpec::Dome { center: [0.0, 0.0], radius: 1.2, height: 0.2 },
        SchemeSpec::BackwardEuler,
        0.01,
        200,
        &[BalanceCloses, Complementarity, RetreatOccurs, RetreatWithinBound, LeakDecreasesUnderRefinement, RetreatScalesWithDt],
    )
}

/// The full built-in catalog.
pub fn catalog() -> Vec<Scenario> {
    use Expectation::*;
    let mut out = vec![
        scenario(
            "zero-dynamics",
            "no flux, no climate: nothing moves",
            unit_interval(20),
            FluxSpec::Zero,
            SourceSpec::Zero,
            InitialSpec::Cosine { mean: 1.0, amplitude: 0.5 },
            SchemeSpec::BackwardEuler,
            0.1,
            10,
            &[BalanceCloses, Complementarity, ConstantMass, NoRetreat, NoLeak, NoSlop, RetreatWithinBound],
        ),
        scenario(
            "fixed-boundary",
            "linear diffusion with uniform positive climate; the layer covers the domain throughout",
            unit_interval(50),
            FluxSpec::PLaplacian { k: 1.0, p: 2.0 },
            SourceSpec::Constant { value: 0.5 },
            InitialSpec::Cosine { mean: 1.0, amplitude: 0.5 },
            SchemeSpec::BackwardEuler,
            0.01,
            50,
            &[BalanceCloses, Complementarity, AllWet, NoRetreat, NoLeak, RetreatWithinBound],
        ),
        scenario(
            "advance-only",
            "porous-medium dome under nonnegative climate max(0, 0.5-x); the margin only advances",
            unit_interval(100),
            pme(),
            SourceSpec::ClippedLinear { a: 0.5, b: [-1.0, 0.0] },
            InitialSpec::Dome { center: [0.0, 0.0], radius: 0.3, height: 0.5 },
            SchemeSpec::BackwardEuler,
            0.01,
            100,
            &[BalanceCloses, Complementarity, NoRetreat, RetreatWithinBound],
        ),
        ablation_margin(),
    ];
    let mut fve = ablation_margin();
    fve.name = "ablation-margin-fve".into();
    fve.description = "ablation-margin on the finite-volume-element backend".into();
    fve.backend = Backend::Fve;
    fve.expected = vec![BalanceCloses, Complementarity, RetreatOccurs, RetreatWithinBound, SlopNonnegative];
    out.push(fve);
    for (suffix, scheme) in [
        ("crank-nicolson", SchemeSpec::CrankNicolson),
        ("midpoint", SchemeSpec::DirkMidpoint),
        ("sstable2", SchemeSpec::DirkSstable2),
    ] {
        let mut s = ablation_margin();
        s.name = format!("ablation-margin-{suffix}");
        s.description = format!("ablation-margin with the {} scheme", scheme.name());
        s.scheme = scheme;
        s.expected = vec![BalanceCloses, Complementarity, RetreatWithinBound];
        out.push(s);
    }
    out.extend([
        scenario(
            "advective-transport",
            "weak diffusion plus converging velocity X=-x under climate 0.3-x, time step below the advective bound",
            unit_interval(100),
            FluxSpec::Advective { epsilon: 0.01, p: 2.0, velocity: VelocitySpec::Linear { c: -1.0 } },
            SourceSpec::Linear { a: 0.3, b: [-1.0, 0.0] },
            InitialSpec::Dome { center: [0.3, 0.0], radius: 0.3, height: 0.5 },
            SchemeSpec::BackwardEuler,
            0.02,
            100,
            &[BalanceCloses, Complementarity, RetreatWithinBound],
        ),
        scenario(
            "nonlocal-coupling",
            "linear nonlocal flux with Gaussian diffusion kernel and constant drift kernel under positive climate",
            unit_interval(40),
            FluxSpec::Nonlocal {
                g: VectorKernelSpec::Constant { value: [0.1, 0.0] },
                kernel: ScalarKernelSpec::Gaussian { amplitude: 1.0, width: 0.1 },
                delta: 1.0,
            },
            SourceSpec::Constant { value: 0.1 },
            InitialSpec::Cosine { mean: 1.0, amplitude: 0.5 },
            SchemeSpec::BackwardEuler,
            0.05,
            20,
            &[BalanceCloses, Complementarity, AllWet, RetreatWithinBound],
        ),
        scenario(
            "dome-2d",
            "porous-medium dome on the unit square under radial climate 0.3-|x-c|",
            MeshSpec::Rectangle { x: [0.0, 1.0], y: [0.0, 1.0], nx: 16, ny: 16 },
            pme(),
            SourceSpec::Radial { a: 0.3, b: 1.0, center: [0.5, 0.5] },
            InitialSpec::Dome { center: [0.5, 0.5], radius: 0.45, height: 0.3 },
            SchemeSpec::BackwardEuler,
            0.01,
            50,
            &[BalanceCloses, Complementarity, RetreatWithinBound],
        ),
        scenario(
            "shallow-ice-1d",
            "flat-bed shallow-ice flux (Glen n=3) under climate 0.5-x",
            unit_interval(100),
            FluxSpec::ShallowIce { k: 1.0, n: 3.0 },
            SourceSpec::Linear { a: 0.5, b: [-1.0, 0.0] },
            InitialSpec::Dome { center: [0.0, 0.0], radius: 0.8, height: 0.6 },
            SchemeSpec::BackwardEuler,
            0.01,
            100,
            &[BalanceCloses, Complementarity, RetreatWithinBound],
        ),
        scenario(
            "plap-1.5",
            "singular p-Laplacian (p=1.5) under climate 0.2-0.6x",
            unit_interval(100),
            FluxSpec::PLaplacian { k: 0.1, p: 1.5 },
            SourceSpec::Linear { a: 0.2, b: [-0.6, 0.0] },
            InitialSpec::Dome { center: [0.0, 0.0], radius: 0.6, height: 0.3 },
            SchemeSpec::BackwardEuler,
            0.01,
            100,
            &[BalanceCloses, Complementarity, RetreatWithinBound],
        ),
    ]);
    out
}

pub fn find_scenario(name: &str) -> Result<Scenario> {
    catalog()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Configuration(format!("unknown scenario `{name}`")))
}

impl Scenario {
    /// Resolve a run configuration: start from the named scenario if any and
    /// apply the fields that are present. Without a name every physical
    /// field is required.
    pub fn from_config(cfg: &RunConfig, base_dir: PathBuf) -> Result<Scenario> {
        let mut s = match &cfg.scenario {
            Some(name) => find_scenario(name)?,
            None => {
                let missing = [
                    ("mesh", cfg.mesh.is_none()),
                    ("flux", cfg.flux.is_none()),
                    ("source", cfg.source.is_none()),
                    ("initial", cfg.initial.is_none()),
                    ("dt", cfg.dt.is_none()),
                    ("steps", cfg.steps.is_none()),
                ]
                .iter()
                .filter(|(_, m)| *m)
                .map(|(k, _)| *k)
                .collect::<Vec<_>>();
                if !missing.is_empty() {
                    return Err(Error::Configuration(format!(
                        "missing keys {} (or give `scenario`)",
                        missing.join(", ")
                    )));
                }
                Scenario {
                    name: "custom".into(),
                    description: "configured run".into(),
                    mesh: cfg.mesh.clone().expect("checked"),
                    flux: cfg.flux.clone().expect("checked"),
                    source: cfg.source.clone().expect("checked"),
                    initial: cfg.initial.clone().expect("checked"),
                    scheme: SchemeSpec::BackwardEuler,
                    dt: cfg.dt.clone().expect("checked"),
                    steps: cfg.steps.expect("checked"),
                    backend: Backend::Fv,
                    solver: SolverOptions::default(),
                    expected: vec![Expectation::BalanceCloses, Expectation::Complementarity, Expectation::RetreatWithinBound],
                    base_dir: base_dir.clone(),
                }
            }
        };
        if let Some(m) = &cfg.mesh {
            s.mesh = m.clone();
        }
        if let Some(f) = &cfg.flux {
            s.flux = f.clone();
        }
        if let Some(f) = &cfg.source {
            s.source = f.clone();
        }
        if let Some(i) = &cfg.initial {
            s.initial = i.clone();
        }
        if let Some(sc) = cfg.scheme {
            s.scheme = sc;
        }
        if let Some(dt) = &cfg.dt {
            s.dt = dt.clone();
        }
        if let Some(n) = cfg.steps {
            s.steps = n;
        }
        if let Some(b) = cfg.backend {
            s.backend = b;
        }
        if let Some(o) = cfg.solver {
            s.solver = o;
        }
        s.base_dir = base_dir;
        s.scheme.validate()?;
        s.dt.steps(s.steps)?;
        Ok(s)
    }
}

/// Solver reports for one step, one per stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub n: usize,
    pub stages: Vec<SolveReport>,
    /// Every stage passed the complementarity certificate.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationResult {
    pub tag: Expectation,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub ledger: Ledger,
    #[serde(skip)]
    pub final_field: ThicknessField,
    /// Positions of the unknowns along the first axis, for snapshots.
    #[serde(skip)]
    pub positions: Vec<[f64; 2]>,
    pub steps: Vec<StepReport>,
    pub expectations: Vec<ExpectationResult>,
}

impl RunOutcome {
    pub fn totals(&self) -> LedgerTotals {
        self.ledger.totals()
    }

    /// Human-readable reasons the run should be considered failed.
    pub fn flags(&self) -> Vec<String> {
        let mut out = Vec::new();
        let t = self.totals();
        if t.flagged_steps > 0 {
            out.push(format!("{} steps with unbalanced ledger", t.flagged_steps));
        }
        if t.bound_violations > 0 {
            out.push(format!("{} steps above the retreat bound", t.bound_violations));
        }
        let uncertified = self.steps.iter().filter(|s| !s.certified).count();
        if uncertified > 0 {
            out.push(format!("{uncertified} steps failed the complementarity certificate"));
        }
        for e in self.expectations.iter().filter(|e| !e.passed) {
            out.push(format!("expectation {} failed: {}", e.tag, e.detail));
        }
        out
    }
}

/// Tolerance of the complementarity certificate checked after every stage.
pub const CERTIFICATE_TOL: f64 = 1e-10;

/// Run a scenario to completion.
pub fn run_scenario(s: &Scenario) -> Result<RunOutcome> {
    run_scenario_with(s, |_| Ok(()))
}

/// What a run observer sees after each step.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub n: usize,
    pub field: &'a ThicknessField,
    pub positions: &'a [[f64; 2]],
    pub entry: &'a LedgerEntry,
    /// One report per stage; empty for the initial state.
    pub reports: &'a [SolveReport],
}

/// Run a scenario, calling `observe` after every step and once for the
/// initial state (`n = 0`).
pub fn run_scenario_with(s: &Scenario, mut observe: impl FnMut(StepView) -> Result<()>) -> Result<RunOutcome> {
    let mesh: Mesh = s.mesh.build()?;
    let flux = s.flux.build(&s.base_dir)?;
    let source = s.source.build();
    let disc = Discretization::new(&mesh, s.backend, flux)?;
    let dts = s.dt.steps(s.steps)?;
    let positions = disc.positions();
    let extent = match s.mesh {
        MeshSpec::Interval { a, b, .. } => [a, b],
        MeshSpec::Rectangle { x, .. } => x,
    };
    let mut u = s.initial.evaluate(&positions, extent)?;
    let quadrature = match s.backend {
        Backend::Fv => "one-point at cell centers",
        Backend::Fve => "one-point at dual-cell midpoints; P1 mass integrals exact",
    };
    let mut ledger = Ledger::new(
        LedgerEntry::initial(total_mass(&u, &disc)?, 0.0),
        quadrature,
        !source.is_thickness_independent(),
    );
    observe(StepView {
        n: 0,
        field: &ThicknessField { backend: s.backend, values: u.clone(), time: 0.0 },
        positions: &positions,
        entry: &ledger.initial,
        reports: &[],
    })?;

    let mut t = 0.0;
    let mut steps = Vec::with_capacity(s.steps);
    for (n, &dt) in dts.iter().enumerate() {
        let step_no = n + 1;
        let mut reports = Vec::new();
        let mut certified = true;
        let stages = step_stages(s.scheme, &disc, &source, &u, t, dt, |stage| {
            let (field, report) = solve_ncp(stage, &disc, &s.solver).map_err(|e| match e {
                Error::NotConverged { last, report, .. } => Error::NotConverged { step: Some(step_no), last, report },
                other => other,
            })?;
            let cert = verify_complementarity(&field, &ResidualVector(report.residual.clone()), CERTIFICATE_TOL);
            certified &= cert.passed();
            reports.push(report);
            Ok(field.values)
        })?;
        let (stage, u_new) = stages.last().expect("at least one stage");
        let field = ThicknessField { backend: s.backend, values: u_new.clone(), time: stage.time };
        let fluxes = assemble_edge_fluxes(stage, &field, &disc)?;
        let entry = step_ledger(ledger.last(), stage, u_new, &fluxes, &disc)?;
        ledger.push(entry);
        observe(StepView { n: step_no, field: &field, positions: &positions, entry: &entry, reports: &reports })?;
        steps.push(StepReport { n: step_no, stages: reports, certified });
        u = field.values;
        t = stage.time;
    }
    let final_field = ThicknessField { backend: s.backend, values: u, time: t };
    let expectations = check_expectations(s, &ledger, &steps);
    Ok(RunOutcome { ledger, final_field, positions, steps, expectations })
}

fn check_expectations(s: &Scenario, ledger: &Ledger, steps: &[StepReport]) -> Vec<ExpectationResult> {
    let e = &ledger.entries;
    let t = ledger.totals();
    s.expected
        .iter()
        .filter(|x| !x.is_study_only())
        .map(|&tag| {
            let (passed, detail) = match tag {
                Expectation::BalanceCloses => {
                    (t.flagged_steps == 0, format!("max |residual| {:.3e}", t.max_balance_residual))
                }
                Expectation::Complementarity => {
                    let bad = steps.iter().filter(|s| !s.certified).count();
                    (bad == 0, format!("{bad} uncertified steps"))
                }
                Expectation::NoRetreat => (e.iter().all(|x| x.retreat == 0.0), format!("sum R = {:.3e}", t.retreat)),
                Expectation::RetreatOccurs => (e.iter().any(|x| x.retreat > 0.0), format!("sum R = {:.3e}", t.retreat)),
                Expectation::RetreatWithinBound => {
                    (t.bound_violations == 0, format!("{} steps above bound", t.bound_violations))
                }
                Expectation::NoLeak => (e.iter().all(|x| x.leak == 0.0), format!("sum |B| = {:.3e}", t.abs_leak)),
                Expectation::NoSlop => (e.iter().all(|x| x.slop == 0.0), format!("sum S = {:.3e}", t.slop)),
                Expectation::SlopNonnegative => (e.iter().all(|x| x.slop >= 0.0), format!("sum S = {:.3e}", t.slop)),
                Expectation::ConstantMass => (
                    e.iter().all(|x| x.mass == ledger.initial.mass),
                    format!("final mass {:.17e}, initial {:.17e}", t.final_mass, t.initial_mass),
                ),
                Expectation::AllWet => {
                    let dry = e.iter().map(|x| x.active_set_size).max().unwrap_or(0);
                    (dry == 0, format!("largest dry set {dry}"))
                }
                Expectation::LeakDecreasesUnderRefinement | Expectation::RetreatScalesWithDt => unreachable!(),
            };
            ExpectationResult { tag, passed, detail }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub axis: Axis,
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    /// `sum_n |B_n|` over the run.
    pub abs_leak: f64,
    /// `sum_n R_n` over the run.
    pub retreat: f64,
    pub max_balance_residual: f64,
    /// Steps whose ledger did not balance.
    pub flagged_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTable {
    pub scenario: String,
    pub rows: Vec<StudyRow>,
    /// `sum |B|` non-increasing across spatial levels.
    pub leak_nonincreasing: bool,
    /// `sum R` strictly decreasing across temporal levels.
    pub retreat_decreasing: bool,
    /// Every temporal halving ratio of `sum R` within a factor two of the
    /// linear ratio 2, i.e. in `[1, 4]`.
    pub retreat_linear_in_dt: bool,
    /// `sum R` positive at every spatial level.
    pub retreat_nonzero_in_space: bool,
    /// `sum R` and `sum |B|` exactly zero at every level.
    pub retreat_absent: bool,
    pub leak_absent: bool,
    /// No unbalanced step at any level.
    pub balanced: bool,
    /// The scenario's expectations, which decide what [`passed`](Self::passed) demands.
    pub expected: Vec<Expectation>,
}

impl StudyTable {
    /// Every level balances, and each trend the scenario claims holds.
    pub fn passed(&self) -> bool {
        self.balanced
            && self.expected.iter().all(|e| match e {
                Expectation::LeakDecreasesUnderRefinement => self.leak_nonincreasing,
                Expectation::RetreatScalesWithDt => self.retreat_decreasing && self.retreat_linear_in_dt,
                Expectation::RetreatOccurs => self.retreat_nonzero_in_space,
                Expectation::NoRetreat => self.retreat_absent,
                Expectation::NoLeak => self.leak_absent,
                _ => true,
            })
    }

    pub const CSV_HEADER: &'static str = "axis,level,h,dt,steps,sum_abs_B,sum_R,max_balance_residual";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}\n",
                match r.axis {
                    Axis::Spatial => "spatial",
                    Axis::Temporal => "temporal",
                },
                r.level,
                r.h,
                r.dt,
                r.steps,
                r.abs_leak,
                r.retreat,
                r.max_balance_residual
            ));
        }
        s
    }
}

/// Rerun `s` with the mesh refined by `2^l` and, separately, with the time
/// step halved `l` times (same final time), for `l < levels`.
pub fn refinement_study(s: &Scenario, levels: usize) -> Result<StudyTable> {
    if levels < 3 {
        return Err(Error::Parameter(format!("a refinement study needs at least 3 levels, got {levels}")));
    }
    let first_dt = s.dt.steps(s.steps)?[0];
    let runs: Vec<(Axis, usize, Scenario)> = (0..levels)
        .map(|l| {
            let mut a = s.clone();
            a.mesh = s.mesh.refined(1 << l);
            (Axis::Spatial, l, a)
        })
        .chain((0..levels).map(|l| {
            let mut a = s.clone();
            a.dt = s.dt.subdivided(1 << l);
            a.steps = s.steps << l;
            (Axis::Temporal, l, a)
        }))
        .collect();
    use rayon::prelude::*;
    let rows = runs
        .par_iter()
        .map(|(axis, level, sc)| {
            let out = run_scenario(sc)?;
            let t = out.totals();
            Ok(StudyRow {
                axis: *axis,
                level: *level,
                h: sc.mesh.h(),
                dt: first_dt / (if *axis == Axis::Temporal { (1usize << level) as f64 } else { 1.0 }),
                steps: sc.steps,
                abs_leak: t.abs_leak,
                retreat: t.retreat,
                max_balance_residual: t.max_balance_residual,
                flagged_steps: t.flagged_steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spatial: Vec<&StudyRow> = rows.iter().filter(|r| r.axis == Axis::Spatial).collect();
    let temporal: Vec<&StudyRow> = rows.iter().filter(|r| r.axis == Axis::Temporal).collect();
    let leak_nonincreasing = spatial.windows(2).all(|w| w[1].abs_leak <= w[0].abs_leak);
    let retreat_decreasing = temporal.windows(2).all(|w| w[1].retreat < w[0].retreat);
    let retreat_linear_in_dt = temporal.windows(2).all(|w| {
        let ratio = w[0].retreat / w[1].retreat;
        (1.0..=4.0).contains(&ratio)
    });
    let retreat_nonzero_in_space = spatial.iter().all(|r| r.retreat > 0.0);
    let retreat_absent = rows.iter().all(|r| r.retreat == 0.0);
    let leak_absent = rows.iter().all(|r| r.abs_leak == 0.0);
    let balanced = rows.iter().all(|r| r.flagged_steps == 0);
    Ok(StudyTable {
        scenario: s.name.clone(),
        rows,
        leak_nonincreasing,
        retreat_decreasing,
        retreat_linear_in_dt,
        retreat_nonzero_in_space,
        retreat_absent,
        leak_absent,
        balanced,
        expected: s.expected.clone(),
    })
}
