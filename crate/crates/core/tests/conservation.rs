use proptest::prelude::*;
use thinlayer::conservation::*;
use thinlayer::flux::{FluxModel, SourceModel};
use thinlayer::solver::{
    assemble_edge_fluxes, solve_ncp, Backend, Discretization, EdgeFluxes, SolverOptions, ThicknessField,
};
use thinlayer::timestepping::StageProblem;
use thinlayer::Mesh;

#[test]
fn decompose_examples() {
    let d = decompose(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
    assert_eq!((d.wet.clone(), d.retreat.clone(), d.dry_dry.clone()), (vec![0], vec![1], vec![2]));
    assert_eq!(d.regions, vec![Region::Wet, Region::Retreat, Region::DryDry]);

    let d = decompose(&[0.0, 2.0], &[0.5, 0.1]).unwrap();
    assert!(d.retreat.is_empty() && d.dry_dry.is_empty());

    let d = decompose(&[0.0, 0.0, 0.0], &[0.0, 0.3, 0.0]).unwrap();
    assert_eq!(d.wet, vec![1]);
    assert!(d.retreat.is_empty());

    assert!(decompose(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn mass_examples() {
    let mesh = Mesh::interval(0.0, 1.0, 7).unwrap();
    let disc = Discretization::new(&mesh, Backend::Fv, FluxModel::Zero).unwrap();
    assert!((total_mass(&[2.0; 7], &disc).unwrap() - 2.0).abs() < 1e-15);

    let mesh = Mesh::interval(0.0, 1.0, 2).unwrap();
    let disc = Discretization::new(&mesh, Backend::Fv, FluxModel::Zero).unwrap();
    assert_eq!(total_mass(&[1.0, 3.0], &disc).unwrap(), 2.0);

    let fve = Discretization::new(&mesh, Backend::Fve, FluxModel::Zero).unwrap();
    assert!((total_mass(&[0.0, 1.0, 0.0], &fve).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn climate_examples() {
    let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
    let disc = Discretization::new(&mesh, Backend::Fv, FluxModel::Zero).unwrap();
    let all_wet = decompose(&[1.0; 4], &[1.0; 4]).unwrap();
    let zero = StageProblem::implicit(0.5, 0.5, vec![1.0; 4], SourceModel::zero());
    assert_eq!(climate_input(&zero, &[1.0; 4], &disc, &all_wet).unwrap(), 0.0);
    let one = StageProblem::implicit(0.5, 0.5, vec![1.0; 4], SourceModel::constant(1.0));
    assert!((climate_input(&one, &[1.0; 4], &disc, &all_wet).unwrap() - 0.5).abs() < 1e-15);

    // F = -1 on the dry half, +1 on the wet half
    let src = SourceModel::from_fn("step", |x, _| if x[0] < 0.5 { 1.0 } else { -1.0 });
    let stage = StageProblem::implicit(0.5, 0.5, vec![1.0; 4], src);
    let u_new = [1.0, 1.0, 0.0, 0.0];
    let d = decompose(&[1.0; 4], &u_new).unwrap();
    assert!((climate_input(&stage, &u_new, &disc, &d).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn retreat_examples() {
    let mesh = Mesh::interval(0.0, 0.3, 3).unwrap();
    let disc = Discretization::new(&mesh, Backend::Fv, FluxModel::Zero).unwrap();
    let prev = [1.0, 0.5, 0.0];
    let d = decompose(&prev, &[1.0, 0.0, 0.0]).unwrap();
    assert!((retreat_loss(&prev, &d, &disc).unwrap() - 0.05).abs() < 1e-15);
    let d = decompose(&prev, &[1.0, 0.4, 0.0]).unwrap();
    let r = retreat_loss(&prev, &d, &disc).unwrap();
    assert_eq!(r, 0.0);
    assert!(r.is_sign_positive());
}

#[test]
fn leak_examples() {
    let d = decompose(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    let q = EdgeFluxes { edges: vec![(0, 1)], lengths: vec![1.0], values: vec![0.7] };
    assert!((boundary_leak(&q, 0.1, &d) - 0.07).abs() < 1e-15);
    // same edge stored the other way round
    let q = EdgeFluxes { edges: vec![(1, 0)], lengths: vec![1.0], values: vec![-0.7] };
    assert!((boundary_leak(&q, 0.1, &d) - 0.07).abs() < 1e-15);
    let q = EdgeFluxes { edges: vec![(0, 1)], lengths: vec![1.0], values: vec![0.0] };
    assert_eq!(boundary_leak(&q, 0.1, &d), 0.0);
    let wet = decompose(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
    let q = EdgeFluxes { edges: vec![(0, 1)], lengths: vec![1.0], values: vec![0.7] };
    assert_eq!(boundary_leak(&q, 0.1, &wet), 0.0);
}

#[test]
fn slop_examples() {
    let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
    let fv = Discretization::new(&mesh, Backend::Fv, FluxModel::Zero).unwrap();
    let d = decompose(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(cell_slop(&[1.0, 0.0, 0.0, 0.0], &d, &fv).unwrap(), 0.0);

    let fve = Discretization::new(&mesh, Backend::Fve, FluxModel::Zero).unwrap();
    let u = [1.0, 0.0, 0.0, 0.0, 0.0];
    let d = decompose(&[1.0, 1.0, 0.0, 0.0, 0.0], &u).unwrap();
    assert!((cell_slop(&u, &d, &fve).unwrap() - 0.25 / 8.0).abs() < 1e-15);
    let u = [1.0; 5];
    let d = decompose(&u, &u).unwrap();
    assert_eq!(cell_slop(&u, &d, &fve).unwrap(), 0.0);
}

#[test]
fn retreat_bound_examples() {
    let mesh = Mesh::interval(0.0, 1.0, 5).unwrap();
    let disc = Discretization::new(&mesh, Backend::Fv, FluxModel::Zero).unwrap();
    let pos = StageProblem::implicit(0.25, 0.25, vec![1.0; 5], SourceModel::constant(0.3));
    assert_eq!(retreat_bound(&pos, &disc).unwrap(), 0.0);
    let neg = StageProblem::implicit(0.25, 0.25, vec![1.0; 5], SourceModel::constant(-2.0));
    assert!((retreat_bound(&neg, &disc).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn close_balance_examples() {
    let prev = LedgerEntry::initial(1.0, 0.0);
    let e = close_balance(&prev, 0.1, StepTerms { mass: 1.3, climate: 0.3, retreat: 0.0, leak: 0.0, slop: 0.0 }, 0.0, 0);
    assert!(e.balance_residual.abs() < 1e-15 && !e.flagged);
    assert_eq!((e.n, e.dt), (1, 0.1));

    let e = close_balance(&prev, 0.1, StepTerms { mass: 1.0, climate: 0.0, retreat: 0.0, leak: 0.0, slop: 0.0 }, 0.0, 0);
    assert_eq!(e.balance_residual, 0.0);

    let e = close_balance(&prev, 0.1, StepTerms { mass: 1.0 + 1e-6, climate: 0.0, retreat: 0.0, leak: 0.0, slop: 0.0 }, 0.0, 0);
    assert!(e.flagged);

    let e = close_balance(&prev, 0.1, StepTerms { mass: 1.05, climate: 0.1, retreat: 0.2, leak: -0.1, slop: 0.05 }, 0.3, 2);
    assert!(e.balance_residual.abs() < 1e-15 && !e.flagged);
    assert_eq!(e.active_set_size, 2);
}

#[test]
fn csv_rows_have_fixed_columns() {
    let mut ledger = Ledger::new(LedgerEntry::initial(0.5, 0.0), "midpoint", false);
    ledger.push(close_balance(
        ledger.last(),
        0.1,
        StepTerms { mass: 0.5, climate: 0.0, retreat: 0.0, leak: 0.0, slop: 0.0 },
        0.0,
        0,
    ));
    let csv = ledger.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 11);
    assert_eq!(row[3], "5.0000000000000000e-1");
    assert_eq!(ledger.totals().flagged_steps, 0);
}

fn one_step(backend: Backend, u0: Vec<f64>, a: f64, dt: f64) -> LedgerEntry {
    let mesh = Mesh::interval(0.0, 1.0, 25).unwrap();
    let disc = Discretization::new(&mesh, backend, FluxModel::porous_medium(1.0, 2.0).unwrap()).unwrap();
    let u0 = u0[..disc.len()].to_vec();
    let prev = LedgerEntry::initial(total_mass(&u0, &disc).unwrap(), 0.0);
    let stage = StageProblem::implicit(dt, dt, u0, SourceModel::linear(a, [-1.5, 0.0]));
    let (u, _) = solve_ncp(&stage, &disc, &SolverOptions::default()).unwrap();
    let q = assemble_edge_fluxes(&stage, &u, &disc).unwrap();
    step_ledger(&prev, &stage, &u.values, &q, &disc).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_is_disjoint_and_complete(
        pairs in prop::collection::vec((prop_oneof![Just(0.0), 0.0f64..2.0], prop_oneof![Just(0.0), 0.0f64..2.0]), 1..40)
    ) {
        let (prev, new): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = decompose(&prev, &new).unwrap();
        let mut all: Vec<usize> = d.wet.iter().chain(&d.retreat).chain(&d.dry_dry).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..prev.len()).collect::<Vec<_>>());
        for &i in &d.retreat {
            prop_assert!(prev[i] > 0.0 && new[i] == 0.0);
        }
    }

    #[test]
    fn single_steps_balance_and_respect_the_bound(
        u0 in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 26),
        a in -0.5f64..1.0,
        dt in 0.001f64..0.05,
        fve in any::<bool>(),
    ) {
        let backend = if fve { Backend::Fve } else { Backend::Fv };
        let e = one_step(backend, u0, a, dt);
        prop_assert!(!e.flagged, "{:?}", e);
        prop_assert!(e.retreat >= 0.0 && e.slop >= 0.0);
        prop_assert!(e.retreat - e.slop <= e.retreat_bound + 1e-14, "{:?}", e);
        if !fve {
            prop_assert_eq!(e.slop, 0.0);
        }
    }

    #[test]
    fn nonnegative_source_never_retreats(
        u0 in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 26),
        dt in 0.001f64..0.05,
    ) {
        let e = one_step(Backend::Fv, u0, 1.5, dt);
        prop_assert_eq!(e.retreat, 0.0);
        prop_assert_eq!(e.retreat_bound, 0.0);
    }
}

#[test]
fn field_rejects_negative_values() {
    assert!(ThicknessField::new(Backend::Fv, vec![1.0, -0.1], 0.0).is_err());
    assert!(ThicknessField::new(Backend::Fv, vec![1.0, f64::NAN], 0.0).is_err());
}
