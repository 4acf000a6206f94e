use std::sync::Arc;

use mfg_cip::cip::{delta_lines, extract, inject_noise, measure_delta, CIPData, Completeness, NoiseProfile, NoiseSpec};
use mfg_cip::mfg::MFGTriple;
use mfg_cip::{make_grid, Error, Face, Field, Grid, Prism, SpaceField};

fn line(nx: usize, nt: usize) -> Arc<Grid> {
    make_grid(Prism::interval(1.0, 2.0, 1.0).unwrap(), vec![nx], nt).unwrap()
}

fn triple(g: &Arc<Grid>, u: impl Fn(&[f64], f64) -> f64, m: impl Fn(&[f64], f64) -> f64) -> MFGTriple {
    MFGTriple::new(Field::from_fn(g, u), Field::from_fn(g, m), SpaceField::constant(g, 1.0)).unwrap()
}

fn smooth(g: &Arc<Grid>) -> MFGTriple {
    triple(g, |x, t| x[0] * x[0] + (2.0 * t).sin() * x[0], |x, t| 1.0 + 0.3 * (x[0] * t).cos())
}

fn same(a: &CIPData, b: &CIPData) -> bool {
    let sets = |d: &CIPData| [d.g0.clone(), d.g1.clone(), d.p0.clone(), d.p1.clone()];
    a.u0.data() == b.u0.data()
        && a.m0.data() == b.m0.data()
        && sets(a).iter().zip(sets(b).iter()).all(|(x, y)| {
            x.faces == y.faces
                && (0..3).all(|s| x.by_order[s].iter().zip(&y.by_order[s]).all(|(p, q)| p.data() == q.data()))
        })
}

#[test]
fn traces_of_a_linear_value_function() {
    let g = line(33, 17);
    let d = extract(&triple(&g, |x, _| x[0], |_, _| 1.0), Completeness::Full);
    let up = d.g1.get(0, Face::upper(0)).unwrap();
    let lo = d.g1.get(0, Face::lower(0)).unwrap();
    assert!(up.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(lo.data().iter().all(|v| (v + 1.0).abs() < 1e-12));
    for s in 0..3 {
        assert!(d.p1.by_order[s].iter().all(|t| t.max_abs() < 1e-12));
    }
    assert!(d.g0.by_order[1].iter().all(|t| t.max_abs() < 1e-12));
    assert!((&d.u0 - &SpaceField::from_fn(&g, |x| x[0])).max_abs() == 0.0);
}

#[test]
fn time_derivative_traces() {
    let g = line(17, 33);
    let d = extract(&triple(&g, |x, t| t * x[0], |_, _| 1.0), Completeness::Full);
    let s1 = d.g0.get(1, Face::upper(0)).unwrap();
    assert!(s1.data().iter().all(|v| (v - 2.0).abs() < 1e-12));
    assert!(d.g0.get(2, Face::upper(0)).unwrap().max_abs() < 1e-9);
    assert!((&d.u0 - &SpaceField::from_fn(&g, |x| 0.5 * x[0])).max_abs() < 1e-15);
}

#[test]
fn incomplete_mode_keeps_neumann_on_one_face() {
    let g = line(17, 17);
    let d = extract(&smooth(&g), Completeness::Incomplete);
    assert_eq!(d.g1.faces, vec![Face::gamma1_plus()]);
    assert_eq!(d.p1.faces, vec![Face::gamma1_plus()]);
    assert_eq!(d.g0.faces.len(), 2);
}

#[test]
fn stored_derivatives_are_consistent() {
    let mut c = Vec::new();
    for nt in [33, 65, 129] {
        let g = line(17, nt);
        c.push(extract(&smooth(&g), Completeness::Full).derivative_consistency());
    }
    assert!(c[0] < 1e-2, "{c:?}");
    // Second order in τ.
    assert!(c[1] / c[2] > 3.0, "{c:?}");
}

#[test]
fn zero_noise_is_identity() {
    let g = line(33, 33);
    let d = extract(&smooth(&g), Completeness::Full);
    let n = inject_noise(&d, &NoiseSpec { delta: 0.0, seed: 42, profile: NoiseProfile::SmoothLowMode }).unwrap();
    assert!(same(&d, &n));
    assert_eq!(measure_delta(&d, &n, Completeness::Full).unwrap(), 0.0);
}

#[test]
fn measured_noise_matches_the_requested_level() {
    let g = line(33, 65);
    for mode in [Completeness::Full, Completeness::Incomplete] {
        let d = extract(&smooth(&g), mode);
        for profile in [NoiseProfile::SmoothLowMode, NoiseProfile::WhitePerNode] {
            let n = inject_noise(&d, &NoiseSpec { delta: 1e-2, seed: 42, profile }).unwrap();
            let lines = delta_lines(&n, &d, mode).unwrap();
            let delta = measure_delta(&n, &d, mode).unwrap();
            assert!((9e-3..=1e-2).contains(&delta), "{mode:?} {profile:?}: {delta}");
            assert!(lines.iter().all(|l| l.value <= 1e-2));
        }
    }
}

#[test]
fn noise_is_deterministic_in_the_seed() {
    let g = line(17, 17);
    let d = extract(&smooth(&g), Completeness::Full);
    let spec = NoiseSpec { delta: 1e-3, seed: 7, profile: NoiseProfile::WhitePerNode };
    assert!(same(&inject_noise(&d, &spec).unwrap(), &inject_noise(&d, &spec).unwrap()));
    let other = inject_noise(&d, &NoiseSpec { seed: 8, ..spec }).unwrap();
    assert!(!same(&inject_noise(&d, &spec).unwrap(), &other));
    assert!(inject_noise(&d, &NoiseSpec { delta: -1.0, ..spec }).is_err());
}

#[test]
fn incomplete_noise_leaves_other_dirichlet_faces_clean() {
    let g = line(17, 17);
    let d = extract(&smooth(&g), Completeness::Incomplete);
    let n = inject_noise(&d, &NoiseSpec { delta: 1e-2, seed: 1, profile: NoiseProfile::SmoothLowMode }).unwrap();
    for s in 0..3 {
        let a = d.g0.get(s, Face::lower(0)).unwrap();
        let b = n.g0.get(s, Face::lower(0)).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn incomplete_budget_needs_matching_dirichlet_data() {
    let g = line(17, 17);
    let a = extract(&smooth(&g), Completeness::Incomplete);
    let shifted = triple(&g, |x, t| x[0] * x[0] + (2.0 * t).sin() * x[0] + 0.1, |x, t| 1.0 + 0.3 * (x[0] * t).cos());
    let b = extract(&shifted, Completeness::Incomplete);
    match measure_delta(&a, &b, Completeness::Incomplete) {
        Err(Error::IncompleteDirichlet { face, .. }) => assert_eq!(face, Face::lower(0).to_string()),
        other => panic!("expected rejection, got {other:?}"),
    }
    let full = extract(&smooth(&g), Completeness::Full);
    assert!(matches!(measure_delta(&full, &a, Completeness::Full), Err(Error::ModeMismatch)));
}

#[test]
fn delta_is_symmetric_and_scales() {
    let g = line(17, 17);
    let a = extract(&smooth(&g), Completeness::Full);
    let t2 = smooth(&g);
    let b = extract(&MFGTriple::new(&t2.u * 1.01, &t2.m * 1.02, t2.k.clone()).unwrap(), Completeness::Full);
    let c = extract(&MFGTriple::new(&t2.u * 1.02, &t2.m * 1.04, t2.k.clone()).unwrap(), Completeness::Full);
    let ab = measure_delta(&a, &b, Completeness::Full).unwrap();
    assert_eq!(ab, measure_delta(&b, &a, Completeness::Full).unwrap());
    let ac = measure_delta(&a, &c, Completeness::Full).unwrap();
    assert!((ac / ab - 2.0).abs() < 1e-9);
}
