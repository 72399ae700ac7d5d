//! Stage problems for the theta-method and two DIRK schemes.
//!
//! Every scheme reduces one step to a sequence of stage problems of the same
//! shape: find `u >= 0` with
//! `u - u_prev - dt F(u) + dt div(s q(u))` complementary to `u`, where `s` is
//! a scheme coefficient and `F` collects the implicit source plus any
//! explicit terms. Explicit divergences use the same edge-flux operator as
//! the implicit part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::SourceModel;
use crate::mesh::Point;
use crate::solver::Discretization;

/// `1 - sqrt(2)/2`.
pub const SSTABLE2_ALPHA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

/// One implicit solve.
///
/// The effective flux is `flux_scale * q` (the model is held by the
/// [`Discretization`]); the effective source at index `i` is
/// `explicit_source[i] + source_scale * f(v, x_i, time)`.
#[derive(Debug, Clone)]
pub struct StageProblem {
    pub dt: f64,
    pub time: f64,
    pub flux_scale: f64,
    pub source_scale: f64,
    pub explicit_source: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub source: SourceModel,
    pub label: String,
}

impl StageProblem {
    /// Backward-Euler-type stage with `Q = q` and `F = f(., time)`.
    pub fn implicit(dt: f64, time: f64, u_prev: Vec<f64>, source: SourceModel) -> Self {
        StageProblem {
            dt,
            time,
            flux_scale: 1.0,
            source_scale: 1.0,
            explicit_source: vec![0.0; u_prev.len()],
            u_prev,
            source,
            label: "implicit".into(),
        }
    }

    pub fn source_at(&self, i: usize, v: f64, x: Point) -> f64 {
        let s = if self.source_scale == 0.0 { 0.0 } else { self.source_scale * self.source.eval(v, x, self.time) };
        self.explicit_source[i] + s
    }

    /// `F_n(v, x_i)` on every control volume for a given field.
    pub fn effective_source(&self, values: &[f64], quad: &[Point]) -> Vec<f64> {
        (0..values.len()).map(|i| self.source_at(i, values[i], quad[i])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchemeSpec {
    Theta { theta: f64 },
    BackwardEuler,
    CrankNicolson,
    DirkMidpoint,
    DirkSstable2,
}

impl SchemeSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SchemeSpec::Theta { theta } if !(0.0..=1.0).contains(theta) => {
                Err(Error::Parameter(format!("theta must lie in [0, 1], got {theta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn stage_count(&self) -> usize {
        match self {
            SchemeSpec::DirkMidpoint | SchemeSpec::DirkSstable2 => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> String {
        match self {
            SchemeSpec::Theta { theta } => format!("theta({theta})"),
            SchemeSpec::BackwardEuler => "backward-euler".into(),
            SchemeSpec::CrankNicolson => "crank-nicolson".into(),
            SchemeSpec::DirkMidpoint => "dirk-midpoint".into(),
            SchemeSpec::DirkSstable2 => "dirk-sstable2".into(),
        }
    }

    fn theta(&self) -> Option<f64> {
        match self {
            SchemeSpec::Theta { theta } => Some(*theta),
            SchemeSpec::BackwardEuler => Some(1.0),
            SchemeSpec::CrankNicolson => Some(0.5),
            _ => None,
        }
    }
}

/// `f(u, x, t) - div q(u)` at every control volume.
fn explicit_rate(disc: &Discretization, source: &SourceModel, u: &[f64], t: f64) -> Vec<f64> {
    let quad = disc.quad_points();
    let div = if disc.flux().is_zero() { vec![0.0; u.len()] } else { disc.divergence(u) };
    (0..u.len()).map(|i| source.eval(u[i], quad[i], t) - div[i]).collect()
}

/// Theta-method stage: `Q = theta q(., t_n)`,
/// `F = theta f(v, t_n) + (1-theta)(f(u_prev, t_{n-1}) - div q(u_prev))`.
pub fn theta_stage(
    theta: f64,
    disc: &Discretization,
    source: &SourceModel,
    u_prev: &[f64],
    t_prev: f64,
    dt: f64,
) -> Result<StageProblem> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Parameter(format!("theta must lie in [0, 1], got {theta}")));
    }
    check_step(disc, u_prev, dt)?;
    let explicit_source = if theta < 1.0 {
        explicit_rate(disc, source, u_prev, t_prev).into_iter().map(|v| (1.0 - theta) * v).collect()
    } else {
        vec![0.0; u_prev.len()]
    };
    Ok(StageProblem {
        dt,
        time: t_prev + dt,
        flux_scale: theta,
        source_scale: theta,
        explicit_source,
        u_prev: u_prev.to_vec(),
        source: source.clone(),
        label: format!("theta({theta})"),
    })
}

fn check_step(disc: &Discretization, u_prev: &[f64], dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    if u_prev.len() != disc.len() {
        return Err(Error::Mismatch(format!("field has {} values, discretization has {}", u_prev.len(), disc.len())));
    }
    Ok(())
}

/// First stage of a DIRK scheme.
pub fn dirk_first_stage(
    kind: SchemeSpec,
    disc: &Discretization,
    source: &SourceModel,
    u_prev: &[f64],
    t_prev: f64,
    dt: f64,
) -> Result<StageProblem> {
    check_step(disc, u_prev, dt)?;
    let (c, label) = match kind {
        SchemeSpec::DirkMidpoint => (0.5, "midpoint-1"),
        SchemeSpec::DirkSstable2 => (SSTABLE2_ALPHA, "sstable2-1"),
        other => return Err(Error::Parameter(format!("{} is not a DIRK scheme", other.name()))),
    };
    Ok(StageProblem {
        dt,
        time: t_prev + c * dt,
        flux_scale: c,
        source_scale: c,
        explicit_source: vec![0.0; u_prev.len()],
        u_prev: u_prev.to_vec(),
        source: source.clone(),
        label: label.into(),
    })
}

/// Second stage of a DIRK scheme given the first-stage solution `u_stage`.
///
/// Midpoint: `Q = 0`, `F = f(u~, t_{n-1/2}) - div q(u~)`, so the stage is a
/// truncated explicit update. Strongly S-stable: `Q = alpha q(., t_n)`,
/// `F = (1-alpha)(f(u~, t~) - div q(u~)) + alpha f(v, t_n)`.
pub fn dirk_second_stage(
    kind: SchemeSpec,
    disc: &Discretization,
    source: &SourceModel,
    u_prev: &[f64],
    u_stage: &[f64],
    t_prev: f64,
    dt: f64,
) -> Result<StageProblem> {
    check_step(disc, u_prev, dt)?;
    check_step(disc, u_stage, dt)?;
    match kind {
        SchemeSpec::DirkMidpoint => Ok(StageProblem {
            dt,
            time: t_prev + dt,
            flux_scale: 0.0,
            source_scale: 0.0,
            explicit_source: explicit_rate(disc, source, u_stage, t_prev + 0.5 * dt),
            u_prev: u_prev.to_vec(),
            source: source.clone(),
            label: "midpoint-2".into(),
        }),
        SchemeSpec::DirkSstable2 => {
            let a = SSTABLE2_ALPHA;
            Ok(StageProblem {
                dt,
                time: t_prev + dt,
                flux_scale: a,
                source_scale: a,
                explicit_source: explicit_rate(disc, source, u_stage, t_prev + a * dt)
                    .into_iter()
                    .map(|v| (1.0 - a) * v)
                    .collect(),
                u_prev: u_prev.to_vec(),
                source: source.clone(),
                label: "sstable2-2".into(),
            })
        }
        other => Err(Error::Parameter(format!("{} is not a DIRK scheme", other.name()))),
    }
}

/// All stages of one DIRK step, solving each with `solve` before building
/// the next. Returns the stages in order; the last solution is the step
/// result.
pub fn dirk_stages(
    kind: SchemeSpec,
    disc: &Discretization,
    source: &SourceModel,
    u_prev: &[f64],
    t_prev: f64,
    dt: f64,
    mut solve: impl FnMut(&StageProblem) -> Result<Vec<f64>>,
) -> Result<Vec<(StageProblem, Vec<f64>)>> {
    let s1 = dirk_first_stage(kind, disc, source, u_prev, t_prev, dt)?;
    let u1 = solve(&s1)?;
    let s2 = dirk_second_stage(kind, disc, source, u_prev, &u1, t_prev, dt)?;
    let u2 = solve(&s2)?;
    Ok(vec![(s1, u1), (s2, u2)])
}

/// The stages of one step of any scheme, solved in order.
pub fn step_stages(
    scheme: SchemeSpec,
    disc: &Discretization,
    source: &SourceModel,
    u_prev: &[f64],
    t_prev: f64,
    dt: f64,
    mut solve: impl FnMut(&StageProblem) -> Result<Vec<f64>>,
) -> Result<Vec<(StageProblem, Vec<f64>)>> {
    scheme.validate()?;
    match scheme.theta() {
        Some(theta) => {
            let s = theta_stage(theta, disc, source, u_prev, t_prev, dt)?;
            let u = solve(&s)?;
            Ok(vec![(s, u)])
        }
        None => dirk_stages(scheme, disc, source, u_prev, t_prev, dt, solve),
    }
}

/// `max(0, u_prev + dt F)` entrywise.
pub fn explicit_truncation_step(u_prev: &[f64], f: &[f64], dt: f64) -> Result<Vec<f64>> {
    if u_prev.len() != f.len() {
        return Err(Error::Mismatch(format!("{} values but {} source entries", u_prev.len(), f.len())));
    }
    Ok(u_prev.iter().zip(f).map(|(u, f)| (u + dt * f).max(0.0)).collect())
}
