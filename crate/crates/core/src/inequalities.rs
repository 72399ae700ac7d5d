//! Pointwise and integrated p-norm inequalities behind the monotonicity and
//! coercivity arguments for p-Laplacian type fluxes, plus an explicit
//! Poincaré constant on `W_0^{1,p}`.
//!
//! The checkers return both sides of each inequality so callers can look at
//! the margin, not only at a pass/fail bit. [`fuzz`] runs seeded campaigns
//! with heavy-tailed samples (standard normal cubed), which get much closer to
//! the equality cases than uniform sampling does.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack allowed on every inequality.
pub const RELATIVE_SLACK: f64 = 1e-12;

/// One evaluated instance of a pointwise inequality `lhs >= rhs - slack`.
#[derive(Debug, Clone, PartialEq)]
pub struct PNormSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl PNormSample {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs - self.slack
    }
}

/// Both sides of the integrated Hölder-type bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl BoundPair {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs - self.slack
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(|x|^{p-2} x - |y|^{p-2} y) . (x - y)`, evaluated without the
/// cancellation the direct formula suffers when `x` is close to `y`.
pub fn monotone_pairing(x: &[f64], y: &[f64], p: f64) -> f64 {
    let a = norm(x);
    let b = norm(y);
    let diff: Vec<f64> = x.iter().zip(y).map(|(s, t)| s - t).collect();
    let diff2 = dot(&diff, &diff);
    if a == 0.0 || b == 0.0 {
        // one side vanishes: the pairing is |z|^p for the other one
        let c = a.max(b);
        return c.powf(p - 2.0) * diff2;
    }
    let sum: Vec<f64> = x.iter().zip(y).map(|(s, t)| s + t).collect();
    let a_minus_b = dot(&diff, &sum) / (a + b);
    if 2.0 * a_minus_b.abs() > a.max(b) {
        // norms far apart: x and y are not close, the direct form is accurate
        let fa = a.powf(p - 2.0);
        let fb = b.powf(p - 2.0);
        return x.iter().zip(y).zip(&diff).map(|((s, t), d)| (fa * s - fb * t) * d).sum();
    }
    // a^{p-2} |x-y|^2 + (a^{p-2} - b^{p-2}) y.(x-y), with the bracket formed
    // from a - b = (x-y).(x+y) / (a+b).
    let log_ratio = (a_minus_b / b).ln_1p();
    let bracket = b.powf(p - 2.0) * ((p - 2.0) * log_ratio).exp_m1();
    a.powf(p - 2.0) * diff2 + bracket * dot(y, &diff)
}

fn same_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Mismatch(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(())
}

fn pbig_sides(x: &[f64], y: &[f64], p: f64) -> (f64, f64) {
    let lhs = monotone_pairing(x, y, p);
    let d: Vec<f64> = x.iter().zip(y).map(|(s, t)| s - t).collect();
    let rhs = 2f64.powf(2.0 - p) * norm(&d).powf(p);
    (lhs, rhs)
}

fn psmall_sides(x: &[f64], y: &[f64], p: f64) -> (f64, f64) {
    let lhs = monotone_pairing(x, y, p);
    let d: Vec<f64> = x.iter().zip(y).map(|(s, t)| s - t).collect();
    let rhs = (p - 1.0) * dot(&d, &d) * (norm(x) + norm(y)).powf(p - 2.0);
    (lhs, rhs)
}

fn slack(lhs: f64, rhs: f64) -> f64 {
    RELATIVE_SLACK * (lhs.abs() + rhs.abs())
}

/// `(|x|^{p-2}x - |y|^{p-2}y).(x-y) >= 2^{2-p} |x-y|^p` for `p >= 2`.
pub fn check_pbig_inequality(x: &[f64], y: &[f64], p: f64) -> Result<PNormSample> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("p >= 2 required, got {p}")));
    }
    same_dims(x, y)?;
    let (lhs, rhs) = pbig_sides(x, y, p);
    Ok(PNormSample { x: x.to_vec(), y: y.to_vec(), p, lhs, rhs, slack: slack(lhs, rhs) })
}

/// `(|x|^{p-2}x - |y|^{p-2}y).(x-y) >= (p-1)|x-y|^2 (|x|+|y|)^{p-2}` for
/// `1 < p <= 2`. Returns `Ok(None)` when both vectors vanish (vacuous).
pub fn check_psmall_inequality(x: &[f64], y: &[f64], p: f64) -> Result<Option<PNormSample>> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::Parameter(format!("1 < p <= 2 required, got {p}")));
    }
    same_dims(x, y)?;
    if norm(x) == 0.0 && norm(y) == 0.0 {
        return Ok(None);
    }
    let (lhs, rhs) = psmall_sides(x, y, p);
    Ok(Some(PNormSample { x: x.to_vec(), y: y.to_vec(), p, lhs, rhs, slack: slack(lhs, rhs) }))
}

/// Discrete form of the integrated bound
///
/// `sum w |u-v|^2 / (|u|+|v|)^{2-p} >= (sum w |u-v|^p)^{2/p} / (sum w (|u|+|v|)^p)^{(2-p)/p}`
///
/// over vector-valued samples of dimension `dim` stored contiguously.
/// Points where `|u| + |v| = 0` contribute nothing to either side.
pub fn check_holder_integrated(u: &[f64], v: &[f64], weights: &[f64], dim: usize, p: f64) -> Result<BoundPair> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::Parameter(format!("1 < p <= 2 required, got {p}")));
    }
    if dim == 0 || u.len() != v.len() || u.len() != weights.len() * dim {
        return Err(Error::Mismatch(format!(
            "{} u-values, {} v-values, {} weights at dimension {dim}",
            u.len(),
            v.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::Parameter(format!("quadrature weights must be positive, got {w}")));
    }
    let (lhs, rhs) = holder_sides(u, v, weights, dim, p);
    Ok(BoundPair { lhs, rhs, slack: slack(lhs, rhs) })
}

fn holder_sides(u: &[f64], v: &[f64], weights: &[f64], dim: usize, p: f64) -> (f64, f64) {
    let mut lhs = 0.0;
    let mut diff_p = 0.0;
    let mut sum_p = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let (ui, vi) = (&u[i * dim..(i + 1) * dim], &v[i * dim..(i + 1) * dim]);
        let s = norm(ui) + norm(vi);
        if s == 0.0 {
            continue;
        }
        let d: f64 = ui.iter().zip(vi).map(|(a, b)| (a - b) * (a - b)).sum();
        lhs += w * d / s.powf(2.0 - p);
        diff_p += w * d.sqrt().powf(p);
        sum_p += w * s.powf(p);
    }
    let rhs = if sum_p == 0.0 { 0.0 } else { diff_p.powf(2.0 / p) / sum_p.powf((2.0 - p) / p) };
    (lhs, rhs)
}

/// Volume of the unit ball in `R^d`, for `d` in 1..=3.
pub fn unit_ball_volume(d: usize) -> Result<f64> {
    // 2 pi^{d/2} / (d Gamma(d/2)) with Gamma(1/2) = sqrt(pi), Gamma(1) = 1,
    // Gamma(3/2) = sqrt(pi)/2
    let gamma_half_d = match d {
        1 => PI.sqrt(),
        2 => 1.0,
        3 => 0.5 * PI.sqrt(),
        _ => return Err(Error::Parameter(format!("dimension {d} not supported (1..=3)"))),
    };
    Ok(2.0 * PI.powf(0.5 * d as f64) / (d as f64 * gamma_half_d))
}

/// Poincaré constant `C(Omega, p) = 1 + (|Omega| / omega_d)^{p/d}` bounding
/// `||u||_{1,p}^p <= C int |grad u|^p` on `W_0^{1,p}`.
pub fn poincare_constant(volume: f64, d: usize, p: f64) -> Result<f64> {
    if !(volume > 0.0) || !volume.is_finite() {
        return Err(Error::Parameter(format!("domain volume must be positive, got {volume}")));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("1 <= p < inf required, got {p}")));
    }
    let omega = unit_ball_volume(d)?;
    Ok(1.0 + (volume / omega).powf(p / d as f64))
}

/// LHS/RHS of the `p >= 2` inequality at `y = -x`, where it is an equality.
pub fn sharpness_ratio(x: &[f64], p: f64) -> f64 {
    let y: Vec<f64> = x.iter().map(|v| -v).collect();
    let (lhs, rhs) = pbig_sides(x, &y, p);
    lhs / rhs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lemma {
    /// `p >= 2` pointwise bound.
    PBig,
    /// `1 < p <= 2` pointwise bound.
    PSmall,
    /// Integrated Hölder bound, `1 < p <= 2`.
    Holder,
}

impl Lemma {
    pub const ALL: [Lemma; 3] = [Lemma::PBig, Lemma::PSmall, Lemma::Holder];
}

#[derive(Debug, Clone, Serialize)]
pub struct FuzzSummary {
    pub lemma: Lemma,
    pub samples: usize,
    /// Samples skipped as vacuous (both vectors zero).
    pub skipped: usize,
    pub violations: usize,
    /// Smallest `(lhs - rhs) / (|lhs| + |rhs|)` seen; negative values below
    /// `-RELATIVE_SLACK` are violations.
    pub worst_margin: f64,
}

impl FuzzSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

const CHUNK: usize = 8192;

fn heavy_tailed(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * z * z
        })
        .collect()
}

/// Seeded fuzz campaign for one lemma. Work is split into fixed-size chunks
/// with independent streams, so the result does not depend on thread count.
pub fn fuzz(lemma: Lemma, samples: usize, seed: u64) -> FuzzSummary {
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(usize, usize, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut skipped = 0;
            let mut violations = 0;
            let mut worst = f64::INFINITY;
            for _ in 0..count {
                let d = rng.random_range(1..=3usize);
                let sides = match lemma {
                    Lemma::PBig => {
                        let p = 2.0 + 4.0 * rng.random::<f64>();
                        let (x, y) = (heavy_tailed(&mut rng, d), heavy_tailed(&mut rng, d));
                        Some(pbig_sides(&x, &y, p))
                    }
                    Lemma::PSmall => {
                        let p = 2.0 - rng.random::<f64>();
                        let (x, y) = (heavy_tailed(&mut rng, d), heavy_tailed(&mut rng, d));
                        if norm(&x) == 0.0 && norm(&y) == 0.0 {
                            None
                        } else {
                            Some(psmall_sides(&x, &y, p))
                        }
                    }
                    Lemma::Holder => {
                        let p = 2.0 - rng.random::<f64>();
                        let points = rng.random_range(1..=8usize);
                        let u = heavy_tailed(&mut rng, points * d);
                        let v = heavy_tailed(&mut rng, points * d);
                        let w: Vec<f64> = (0..points).map(|_| 0.05 + rng.random::<f64>()).collect();
                        Some(holder_sides(&u, &v, &w, d, p))
                    }
                };
                let Some((lhs, rhs)) = sides else {
                    skipped += 1;
                    continue;
                };
                let scale = lhs.abs() + rhs.abs();
                if scale == 0.0 {
                    worst = worst.min(0.0);
                    continue;
                }
                let margin = (lhs - rhs) / scale;
                if !(lhs >= rhs - slack(lhs, rhs)) {
                    violations += 1;
                }
                worst = worst.min(margin);
            }
            (skipped, violations, worst)
        })
        .collect();
    let (skipped, violations, worst_margin) = partial
        .into_iter()
        .fold((0, 0, f64::INFINITY), |(s, v, w), (s2, v2, w2)| (s + s2, v + v2, w.min(w2)));
    FuzzSummary { lemma, samples, skipped, violations, worst_margin }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pbig_equality_at_antipode() {
        for &p in &[2.0, 2.5, 3.0, 4.0, 6.0] {
            let s = check_pbig_inequality(&[0.3, -1.7], &[-0.3, 1.7], p).unwrap();
            assert!(s.holds());
            assert!((s.lhs / s.rhs - 1.0).abs() < 1e-14, "p={p}: {} vs {}", s.lhs, s.rhs);
        }
    }

    #[test]
    fn pbig_trivial_cases() {
        let s = check_pbig_inequality(&[1.0, 2.0], &[1.0, 2.0], 3.0).unwrap();
        assert_eq!((s.lhs, s.rhs), (0.0, 0.0));
        let s = check_pbig_inequality(&[1.0, 2.0], &[-0.5, 4.0], 2.0).unwrap();
        let d2 = 1.5f64 * 1.5 + 2.0 * 2.0;
        assert!((s.lhs - d2).abs() < 1e-14 && (s.rhs - d2).abs() < 1e-14);
        assert!(check_pbig_inequality(&[1.0], &[0.0], 1.5).is_err());
    }

    #[test]
    fn psmall_cases() {
        let s = check_psmall_inequality(&[1.0, 0.0], &[0.2, 0.7], 2.0).unwrap().unwrap();
        assert!((s.lhs - s.rhs).abs() < 1e-14);
        let s = check_psmall_inequality(&[0.4], &[0.4], 1.3).unwrap().unwrap();
        assert_eq!(s.lhs, 0.0);
        assert_eq!(s.rhs, 0.0);
        assert!(check_psmall_inequality(&[0.0, 0.0], &[0.0, 0.0], 1.5).unwrap().is_none());
        assert!(check_psmall_inequality(&[1.0], &[2.0], 2.5).is_err());
        assert!(check_psmall_inequality(&[1.0], &[2.0], 1.0).is_err());
    }

    #[test]
    fn holder_cases() {
        let u = [1.0, 2.0, -3.0];
        let w = [0.2, 0.3, 0.5];
        let b = check_holder_integrated(&u, &u, &w, 1, 1.5).unwrap();
        assert_eq!((b.lhs, b.rhs), (0.0, 0.0));
        let v = [0.5, -1.0, 4.0];
        let b = check_holder_integrated(&u, &v, &w, 1, 2.0).unwrap();
        let direct: f64 = (0..3).map(|i| w[i] * (u[i] - v[i]).powi(2)).sum();
        assert!((b.lhs - direct).abs() < 1e-13 && (b.rhs - direct).abs() < 1e-13);
        assert!(check_holder_integrated(&u, &v, &[0.2, 0.0, 0.5], 1, 1.5).is_err());
        assert!(check_holder_integrated(&u, &v, &w, 2, 1.5).is_err());
        // zero points are excluded on both sides
        let b = check_holder_integrated(&[0.0, 1.0], &[0.0, 0.5], &[1.0, 1.0], 1, 1.5).unwrap();
        assert!(b.holds());
    }

    #[test]
    fn poincare_values() {
        assert_eq!(unit_ball_volume(1).unwrap(), 2.0);
        assert!((unit_ball_volume(2).unwrap() - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3).unwrap() - 4.0 * PI / 3.0).abs() < 1e-14);
        assert_eq!(poincare_constant(1.0, 1, 2.0).unwrap(), 1.25);
        assert!((poincare_constant(1.0, 2, 2.0).unwrap() - (1.0 + 1.0 / PI)).abs() < 1e-15);
        assert!((poincare_constant(1e-12, 2, 2.0).unwrap() - 1.0).abs() < 1e-11);
        assert!(poincare_constant(0.0, 1, 2.0).is_err());
        assert!(poincare_constant(1.0, 4, 2.0).is_err());
        assert!(poincare_constant(1.0, 1, 0.5).is_err());
    }

    #[test]
    fn poincare_monotone_in_volume() {
        for d in 1..=3 {
            for &p in &[1.0, 1.5, 2.0, 4.0] {
                let mut last = 0.0;
                for i in 1..200 {
                    let c = poincare_constant(i as f64 * 0.05, d, p).unwrap();
                    assert!(c > last);
                    last = c;
                }
            }
        }
    }

    #[test]
    fn stable_pairing_matches_direct_formula_away_from_cancellation() {
        let x = [1.3, -0.2];
        let y = [-0.7, 2.1];
        for &p in &[1.2, 2.0, 3.5] {
            let phi = |z: &[f64]| {
                let n = norm(z).powf(p - 2.0);
                [n * z[0], n * z[1]]
            };
            let (a, b) = (phi(&x), phi(&y));
            let direct = (a[0] - b[0]) * (x[0] - y[0]) + (a[1] - b[1]) * (x[1] - y[1]);
            assert!((monotone_pairing(&x, &y, p) - direct).abs() < 1e-13 * direct.abs());
        }
    }

    #[test]
    fn psmall_holds_with_very_different_norms() {
        let x = [3.0e4, -1.0e5];
        let y = [2.0e-9, 1.0e-10];
        for &p in &[1.05, 1.5, 1.9] {
            let s = check_psmall_inequality(&x, &y, p).unwrap().unwrap();
            assert!(s.holds(), "p={p}: {s:?}");
            let s = check_psmall_inequality(&y, &x, p).unwrap().unwrap();
            assert!(s.holds(), "p={p}: {s:?}");
        }
    }

    #[test]
    fn small_fuzz_is_clean_and_deterministic() {
        for lemma in Lemma::ALL {
            let a = fuzz(lemma, 20_000, 11);
            let b = fuzz(lemma, 20_000, 11);
            assert!(a.passed(), "{a:?}");
            assert_eq!(a.worst_margin.to_bits(), b.worst_margin.to_bits());
        }
    }

    proptest! {
        #[test]
        fn pbig_holds(x in prop::collection::vec(-50.0f64..50.0, 3), y in prop::collection::vec(-50.0f64..50.0, 3), p in 2.0f64..6.0) {
            prop_assert!(check_pbig_inequality(&x, &y, p).unwrap().holds());
        }

        #[test]
        fn psmall_holds(x in prop::collection::vec(-50.0f64..50.0, 2), y in prop::collection::vec(-50.0f64..50.0, 2), p in 1.0001f64..2.0) {
            if let Some(s) = check_psmall_inequality(&x, &y, p).unwrap() {
                prop_assert!(s.holds());
            }
        }
    }
}
