//! Mass accounting for one step: total mass `M`, climate input `C`, retreat
//! loss `R`, boundary leak `B` and cell slop `S`, tied together by
//! `M_n = M_{n-1} + C - R - B + S`.
//!
//! Wet/dry classification uses exact zeros; the solver returns exact zeros
//! on its active set.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::{Backend, Discretization, EdgeFluxes};
use crate::timestepping::StageProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// `u_n > 0`.
    Wet,
    /// `u_n = 0 < u_{n-1}`.
    Retreat,
    /// `u_n = 0 = u_{n-1}`.
    DryDry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDecomposition {
    pub regions: Vec<Region>,
    pub wet: Vec<usize>,
    pub retreat: Vec<usize>,
    pub dry_dry: Vec<usize>,
}

impl DomainDecomposition {
    pub fn is_wet(&self, i: usize) -> bool {
        self.regions[i] == Region::Wet
    }
}

pub fn decompose(u_prev: &[f64], u_new: &[f64]) -> Result<DomainDecomposition> {
    if u_prev.len() != u_new.len() {
        return Err(Error::Mismatch(format!("fields of length {} and {}", u_prev.len(), u_new.len())));
    }
    let mut d = DomainDecomposition { regions: Vec::new(), wet: Vec::new(), retreat: Vec::new(), dry_dry: Vec::new() };
    for (i, (&a, &b)) in u_prev.iter().zip(u_new).enumerate() {
        let region = if b > 0.0 {
            d.wet.push(i);
            Region::Wet
        } else if a > 0.0 {
            d.retreat.push(i);
            Region::Retreat
        } else {
            d.dry_dry.push(i);
            Region::DryDry
        };
        d.regions.push(region);
    }
    Ok(d)
}

fn check_len(disc: &Discretization, u: &[f64]) -> Result<()> {
    if u.len() != disc.len() {
        return Err(Error::Mismatch(format!("field has {} values, discretization has {}", u.len(), disc.len())));
    }
    Ok(())
}

/// `sum_j u_j |w_j|` (FV) or the exact integral of the P1 field (FVE).
pub fn total_mass(values: &[f64], disc: &Discretization) -> Result<f64> {
    check_len(disc, values)?;
    Ok(disc.cell_masses(values).iter().fold(0.0, |a, b| a + b))
}

/// `dt sum_{wet} F_n^j |w_j|`, with `F_n` evaluated at the new field.
pub fn climate_input(stage: &StageProblem, u_new: &[f64], disc: &Discretization, d: &DomainDecomposition) -> Result<f64> {
    check_len(disc, u_new)?;
    let quad = disc.quad_points();
    let cells = disc.mesh().cells();
    Ok(stage.dt * d.wet.iter().map(|&i| stage.source_at(i, u_new[i], quad[i]) * cells[i].area).fold(0.0, |a, b| a + b))
}

/// Previous mass on control volumes that are dry after the step. For FV
/// this is the retreat set only; for FVE a dry-dry node can still own
/// previous mass through its neighbors.
pub fn retreat_loss(u_prev: &[f64], d: &DomainDecomposition, disc: &Discretization) -> Result<f64> {
    check_len(disc, u_prev)?;
    let m = disc.cell_masses(u_prev);
    Ok(d.regions.iter().zip(m).filter(|(r, _)| **r != Region::Wet).fold(0.0, |acc, (_, m)| acc + m))
}

/// `dt sum Q^{(j,k)} l_{(j,k)}` over edges from a wet `j` to a dry `k`.
pub fn boundary_leak(fluxes: &EdgeFluxes, dt: f64, d: &DomainDecomposition) -> f64 {
    let mut b = 0.0;
    for ((&(j, k), q), l) in fluxes.edges.iter().zip(&fluxes.values).zip(&fluxes.lengths) {
        match (d.is_wet(j), d.is_wet(k)) {
            (true, false) => b += q * l,
            (false, true) => b -= q * l,
            _ => {}
        }
    }
    dt * b
}

/// Mass of the P1 field on dual cells whose node is dry (FVE only; zero for
/// FV).
pub fn cell_slop(u_new: &[f64], d: &DomainDecomposition, disc: &Discretization) -> Result<f64> {
    check_len(disc, u_new)?;
    if disc.backend() == Backend::Fv {
        return Ok(0.0);
    }
    let m = disc.cell_masses(u_new);
    Ok(d.regions.iter().zip(m).filter(|(r, _)| **r != Region::Wet).fold(0.0, |acc, (_, m)| acc + m))
}

/// `dt sum_j max(0, -F_n(0, x_j)) |w_j|`.
pub fn retreat_bound(stage: &StageProblem, disc: &Discretization) -> Result<f64> {
    check_len(disc, &stage.u_prev)?;
    let quad = disc.quad_points();
    let cells = disc.mesh().cells();
    Ok(stage.dt
        * (0..disc.len())
            .map(|i| (-stage.source_at(i, 0.0, quad[i])).max(0.0) * cells[i].area)
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub n: usize,
    pub t: f64,
    pub dt: f64,
    #[serde(rename = "M")]
    pub mass: f64,
    #[serde(rename = "C")]
    pub climate: f64,
    #[serde(rename = "R")]
    pub retreat: f64,
    #[serde(rename = "B")]
    pub leak: f64,
    #[serde(rename = "S")]
    pub slop: f64,
    pub balance_residual: f64,
    pub retreat_bound: f64,
    pub active_set_size: usize,
    /// Balance residual above `1e-10 * (|M_n| + |M_{n-1}| + |C| + |R| + |B| + |S| + 1)`.
    pub flagged: bool,
}

impl LedgerEntry {
    /// Starting point of a ledger; never written to CSV.
    pub fn initial(mass: f64, t: f64) -> Self {
        LedgerEntry {
            n: 0,
            t,
            dt: 0.0,
            mass,
            climate: 0.0,
            retreat: 0.0,
            leak: 0.0,
            slop: 0.0,
            balance_residual: 0.0,
            retreat_bound: 0.0,
            active_set_size: 0,
            flagged: false,
        }
    }

    pub fn tolerance(&self, prev_mass: f64) -> f64 {
        1e-10
            * (self.mass.abs()
                + prev_mass.abs()
                + self.climate.abs()
                + self.retreat.abs()
                + self.leak.abs()
                + self.slop.abs()
                + 1.0)
    }
}

/// Terms of one step's balance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTerms {
    pub mass: f64,
    pub climate: f64,
    pub retreat: f64,
    pub leak: f64,
    pub slop: f64,
}

/// New ledger entry with residual `M_n - (M_{n-1} + C - R - B + S)`.
pub fn close_balance(prev: &LedgerEntry, dt: f64, terms: StepTerms, retreat_bound: f64, active_set_size: usize) -> LedgerEntry {
    let StepTerms { mass, climate, retreat, leak, slop } = terms;
    let residual = mass - (prev.mass + climate - retreat - leak + slop);
    let mut e = LedgerEntry {
        n: prev.n + 1,
        t: prev.t + dt,
        dt,
        mass,
        climate,
        retreat,
        leak,
        slop,
        balance_residual: residual,
        retreat_bound,
        active_set_size,
        flagged: false,
    };
    e.flagged = residual.abs() > e.tolerance(prev.mass);
    e
}

/// Ledger terms for a completed step whose final stage is `stage`, solved
/// to `u_new`.
pub fn step_ledger(
    prev: &LedgerEntry,
    stage: &StageProblem,
    u_new: &[f64],
    fluxes: &EdgeFluxes,
    disc: &Discretization,
) -> Result<LedgerEntry> {
    let d = decompose(&stage.u_prev, u_new)?;
    let terms = StepTerms {
        mass: total_mass(u_new, disc)?,
        climate: climate_input(stage, u_new, disc, &d)?,
        retreat: retreat_loss(&stage.u_prev, &d, disc)?,
        leak: boundary_leak(fluxes, stage.dt, &d),
        slop: cell_slop(u_new, &d, disc)?,
    };
    let mut e = close_balance(prev, stage.dt, terms, retreat_bound(stage, disc)?, d.retreat.len() + d.dry_dry.len());
    e.t = stage.time;
    Ok(e)
}

pub const CSV_HEADER: &str = "n,t,dt,M,C,R,B,S,balance_residual,retreat_bound,active_set_size";

fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

impl LedgerEntry {
    /// One CSV row; floats carry 17 significant digits.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            sci(self.t),
            sci(self.dt),
            sci(self.mass),
            sci(self.climate),
            sci(self.retreat),
            sci(self.leak),
            sci(self.slop),
            sci(self.balance_residual),
            sci(self.retreat_bound),
            self.active_set_size
        )
    }
}

/// Per-step ledger of a run plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ledger {
    pub initial: LedgerEntry,
    pub entries: Vec<LedgerEntry>,
    /// Source quadrature used for `C`.
    pub quadrature: String,
    /// Set when the source depends on thickness; the balance still closes
    /// but `C` then depends on the solution.
    pub thickness_dependent_source: bool,
}

impl Ledger {
    pub fn new(initial: LedgerEntry, quadrature: impl Into<String>, thickness_dependent_source: bool) -> Self {
        Ledger { initial, entries: Vec::new(), quadrature: quadrature.into(), thickness_dependent_source }
    }

    pub fn last(&self) -> &LedgerEntry {
        self.entries.last().unwrap_or(&self.initial)
    }

    pub fn push(&mut self, e: LedgerEntry) {
        self.entries.push(e);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&e.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn totals(&self) -> LedgerTotals {
        let mut t = LedgerTotals {
            final_mass: self.last().mass,
            initial_mass: self.initial.mass,
            climate: 0.0,
            retreat: 0.0,
            leak: 0.0,
            abs_leak: 0.0,
            slop: 0.0,
            max_balance_residual: 0.0,
            flagged_steps: 0,
            bound_violations: 0,
        };
        for e in &self.entries {
            t.climate += e.climate;
            t.retreat += e.retreat;
            t.leak += e.leak;
            t.abs_leak += e.leak.abs();
            t.slop += e.slop;
            t.max_balance_residual = t.max_balance_residual.max(e.balance_residual.abs());
            t.flagged_steps += usize::from(e.flagged);
            t.bound_violations += usize::from(e.retreat - e.slop > e.retreat_bound);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerTotals {
    pub initial_mass: f64,
    pub final_mass: f64,
    pub climate: f64,
    pub retreat: f64,
    pub leak: f64,
    pub abs_leak: f64,
    pub slop: f64,
    pub max_balance_residual: f64,
    pub flagged_steps: usize,
    /// Steps with `R - S` above the retreat bound.
    pub bound_violations: usize,
}
