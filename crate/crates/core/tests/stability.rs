use std::f64::consts::PI;
use std::sync::Arc;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfg_cip::cip::Completeness;
use mfg_cip::kernels::{Kernel, YBar};
use mfg_cip::mfg::{scenarios, solve_mfg_picard, MFGTriple, PicardOptions, ProblemSpec, Scheme};
use mfg_cip::stability::{
    assemble_final_estimate, check_inequality, compute_f, epsilon_window, feasibility, form_difference, holder_sweep,
    parse_rational, reconstruct_k_tilde, residual_derived_system, select_parameters, select_parameters_exact,
    shifted_spread, Derived, Inequality, Reconstruction, ReconstructOptions, SweepConfig,
};
use mfg_cip::{make_grid, Error, Field, Grid, Prism, SpaceField};

fn line(nx: usize, nt: usize) -> Arc<Grid> {
    make_grid(Prism::interval(1.0, 2.0, 1.0).unwrap(), vec![nx], nt).unwrap()
}

fn picard() -> PicardOptions {
    PicardOptions { theta: 0.5, max_iter: 100, tol: 1e-10, scheme: Scheme::Implicit }
}

fn dk(g: &Arc<Grid>) -> SpaceField {
    SpaceField::from_fn(g, |x| (PI * (x[0] - 1.0)).sin().powi(2))
}

/// Two forward solutions with `k₂ = k₁ + scale·sin²(π(x₁ − a))`.
fn pair(g: &Arc<Grid>, scale: f64) -> (ProblemSpec, MFGTriple, MFGTriple) {
    let (spec, k1) = scenarios::manufactured(g, 1.0, 0.1).unwrap();
    let k2 = &k1 + &(&dk(g) * scale);
    let t1 = solve_mfg_picard(&spec, &k1, &picard()).unwrap();
    let t2 = solve_mfg_picard(&spec, &k2, &picard()).unwrap();
    (spec, t1, t2)
}

fn mid_snapshots(t1: &MFGTriple, t2: &MFGTriple) -> (SpaceField, SpaceField) {
    let j = t1.grid().mid_level();
    (t1.u.level(j), t2.u.level(j))
}

fn q(s: &str) -> BigRational {
    parse_rational(s).unwrap()
}

#[test]
fn identical_triples_give_a_zero_pack() {
    let g = line(17, 17);
    let (spec, t1, _) = pair(&g, 0.0);
    let pack = form_difference(&t1, &t1, 0.2).unwrap();
    for f in [&pack.u, &pack.m, &pack.v, &pack.q, &pack.w, &pack.r] {
        assert_eq!(f.max_abs(), 0.0);
    }
    let (u01, _) = mid_snapshots(&t1, &t1);
    let big_f = compute_f(&pack, &u01, &u01, &t1.k, &spec.kernel, &spec.f, ReconstructOptions::default()).unwrap();
    assert_eq!(big_f.max_abs(), 0.0);
    let k = reconstruct_k_tilde(&pack, &u01, &big_f, Reconstruction::Snapshot, 1e-3).unwrap();
    assert_eq!(k.max_abs(), 0.0);
    for d in Derived::ALL {
        assert_eq!(residual_derived_system(&pack, &t1, &t1, &spec, d).unwrap(), (0.0, 0.0));
    }
    for i in Inequality::ALL {
        let r = check_inequality(&pack, &t1, &t1, &spec, &big_f, i, 1.0).unwrap();
        assert!(r.pass && r.dead_lhs_max == 0.0);
    }
    let params = select_parameters(0.5, 0.2, g.prism(), 1.0).unwrap();
    let est = assemble_final_estimate(&pack.norms, &params, 1e-3, 1.0).unwrap();
    assert!(est.holds && est.log_lhs == f64::NEG_INFINITY);
}

#[test]
fn time_linear_difference() {
    let g = line(33, 33);
    let k = SpaceField::constant(&g, 1.0);
    let m = Field::constant(&g, 1.0);
    let t1 = MFGTriple::new(Field::from_fn(&g, |x, t| x[0] * x[0] + t * (PI * x[0]).sin()), m.clone(), k.clone()).unwrap();
    let t2 = MFGTriple::new(Field::from_fn(&g, |x, _| x[0] * x[0]), m, k).unwrap();
    let pack = form_difference(&t1, &t2, 0.2).unwrap();
    assert!((&pack.v - &Field::from_fn(&g, |x, _| (PI * x[0]).sin())).max_abs() < 1e-12);
    assert!(pack.w.max_abs() < 1e-9);
    assert_eq!(pack.m.max_abs(), 0.0);
}

#[test]
fn rebuilt_difference_is_second_order_in_tau() {
    let mut errs = Vec::new();
    for nt in [33, 65, 129] {
        let g = line(9, nt);
        let k = SpaceField::constant(&g, 1.0);
        let m = Field::constant(&g, 1.0);
        let t1 = MFGTriple::new(Field::from_fn(&g, |x, t| x[0] * (3.0 * t).sin()), m.clone(), k.clone()).unwrap();
        let t2 = MFGTriple::new(Field::zeros(&g), m, k).unwrap();
        let (first, ident) = form_difference(&t1, &t2, 0.2).unwrap().consistency();
        assert!(first < 1e-12);
        errs.push(ident);
    }
    assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
}

#[test]
fn f_for_a_unit_density_difference() {
    let g = make_grid(Prism::new(1.0, 2.0, vec![1.0], 1.0).unwrap(), vec![17, 9], 9).unwrap();
    let k = SpaceField::constant(&g, 1.0);
    let u = Field::from_fn(&g, |x, _| x[0] * x[0] + x[1]);
    let t1 = MFGTriple::new(u.clone(), Field::constant(&g, 2.0), k.clone()).unwrap();
    let t2 = MFGTriple::new(u, Field::constant(&g, 1.0), k.clone()).unwrap();
    let pack = form_difference(&t1, &t2, 0.2).unwrap();
    let (u01, u02) = mid_snapshots(&t1, &t2);
    let kernel = Kernel::separable(YBar::Constant(1.0));
    let big_f = compute_f(&pack, &u01, &u02, &k, &kernel, &Field::zeros(&g), ReconstructOptions::default()).unwrap();
    let expect = SpaceField::from_fn(&g, |x| 2.0 * 2.0 / (4.0 * x[0] * x[0] + 1.0));
    assert!((&big_f - &expect).max_abs() < 1e-12);
}

#[test]
fn f_matches_an_independent_evaluation() {
    let g = line(33, 65);
    let (spec, t1, t2) = pair(&g, 0.1);
    let pack = form_difference(&t1, &t2, 0.2).unwrap();
    let (u01, u02) = mid_snapshots(&t1, &t2);
    let big_f = compute_f(&pack, &u01, &u02, &t2.k, &spec.kernel, &spec.f, ReconstructOptions::default()).unwrap();

    let n = g.nx()[0];
    let h = g.h()[0];
    let mid = g.mid_level();
    let du: Vec<f64> = (0..n).map(|i| pack.u0.at(&[i])).collect();
    let dm: Vec<f64> = (0..n).map(|i| pack.m0.at(&[i])).collect();
    let s: Vec<f64> = (0..n).map(|i| u01.at(&[i]) + u02.at(&[i])).collect();
    let a: Vec<f64> = (0..n).map(|i| u01.at(&[i])).collect();
    // The manufactured kernel is 0.1·H(y₁ − x₁).
    let tail = |i: usize| -> f64 {
        if i + 1 == n {
            return 0.0;
        }
        h * (dm[i..].iter().sum::<f64>() - 0.5 * (dm[i] + dm[n - 1]))
    };
    for i in 1..n - 1 {
        let lap = (du[i + 1] - 2.0 * du[i] + du[i - 1]) / (h * h);
        let gu = (du[i + 1] - du[i - 1]) / (2.0 * h);
        let gs = (s[i + 1] - s[i - 1]) / (2.0 * h);
        let ga = (a[i + 1] - a[i - 1]) / (2.0 * h);
        let f = spec.f.level(mid).at(&[i]);
        let expect = (2.0 * (lap + 0.1 * tail(i) + f * dm[i]) - t2.k.at(&[i]) * gu * gs) / (ga * ga);
        assert!((big_f.at(&[i]) - expect).abs() <= 1e-10 * expect.abs().max(1.0), "node {i}");
    }
}

#[test]
fn degenerate_gradient_is_rejected() {
    let g = line(17, 17);
    let k = SpaceField::constant(&g, 1.0);
    let flat = Field::from_fn(&g, |x, _| (x[0] - 1.5).powi(2));
    let t = MFGTriple::new(flat, Field::constant(&g, 1.0), k.clone()).unwrap();
    let pack = form_difference(&t, &t, 0.2).unwrap();
    let (u01, _) = mid_snapshots(&t, &t);
    let e = compute_f(&pack, &u01, &u01, &k, &Kernel::zero(), &Field::zeros(&g), ReconstructOptions::default());
    match e {
        Err(Error::Degenerate { node, .. }) => assert_eq!(node, vec![8]),
        other => panic!("expected degeneracy, got {other:?}"),
    }
}

#[test]
fn reconstruction_and_derived_residuals_refine() {
    let mut rec = Vec::new();
    let mut res: Vec<Vec<f64>> = vec![Vec::new(); Derived::ALL.len()];
    let mut spread = Vec::new();
    for (nx, nt) in [(17, 17), (33, 65)] {
        let g = line(nx, nt);
        let (spec, t1, t2) = pair(&g, 0.1);
        let pack = form_difference(&t1, &t2, 0.2).unwrap();
        let (u01, u02) = mid_snapshots(&t1, &t2);
        let big_f = compute_f(&pack, &u01, &u02, &t2.k, &spec.kernel, &spec.f, ReconstructOptions::default()).unwrap();
        let k = reconstruct_k_tilde(&pack, &u01, &big_f, Reconstruction::Snapshot, 1e-3).unwrap();
        rec.push((&k - &pack.k).l2());
        spread.push(shifted_spread(&pack, &u01, &big_f, &[0.25, 0.5, 0.75], 1e-3).unwrap());
        for (i, d) in Derived::ALL.iter().enumerate() {
            res[i].push(residual_derived_system(&pack, &t1, &t2, &spec, *d).unwrap().0);
        }
    }
    let slope = |e: &[f64]| (e[0] / e[1]).log2();
    assert!(slope(&rec) >= 1.5, "reconstruction {rec:?}");
    for (d, e) in Derived::ALL.iter().zip(&res) {
        assert!(slope(e) >= 1.2, "{d}: {e:?}");
    }
    // The shifted form is independent of t well below the reconstruction error.
    assert!(spread.iter().zip(&rec).all(|(s, r)| *s <= 10.0 * r));
}

#[test]
fn derived_labels_round_trip() {
    for d in Derived::ALL {
        assert_eq!(d.label().parse::<Derived>().unwrap(), d);
    }
    assert!("4.9".parse::<Derived>().is_err());
}

#[test]
fn inequality_constant_is_grid_stable() {
    let mut cs = Vec::new();
    for (nx, nt) in [(33, 65), (65, 257)] {
        let g = line(nx, nt);
        let (spec, t1, t2) = pair(&g, 0.1);
        let pack = form_difference(&t1, &t2, 0.2).unwrap();
        let (u01, u02) = mid_snapshots(&t1, &t2);
        let big_f = compute_f(&pack, &u01, &u02, &t2.k, &spec.kernel, &spec.f, ReconstructOptions::default()).unwrap();
        let r = check_inequality(&pack, &t1, &t2, &spec, &big_f, Inequality::V, 1.0).unwrap();
        assert!(r.c_empirical.is_finite());
        cs.push(r.c_empirical);
    }
    assert!((cs[1] / cs[0] - 1.0).abs() <= 0.2, "{cs:?}");
}

#[test]
fn inequality_constant_does_not_track_the_perturbation_size() {
    let g = line(33, 65);
    let mut cs = Vec::new();
    for scale in [0.1, 0.01] {
        let (spec, t1, t2) = pair(&g, scale);
        let pack = form_difference(&t1, &t2, 0.2).unwrap();
        let (u01, u02) = mid_snapshots(&t1, &t2);
        let big_f = compute_f(&pack, &u01, &u02, &t2.k, &spec.kernel, &spec.f, ReconstructOptions::default()).unwrap();
        let c: Vec<f64> = Inequality::ALL
            .iter()
            .map(|&i| check_inequality(&pack, &t1, &t2, &spec, &big_f, i, 1.0).unwrap().c_empirical)
            .collect();
        cs.push(c);
    }
    for (a, b) in cs[0].iter().zip(&cs[1]) {
        assert!(a / b < 2.0 && b / a < 2.0, "{cs:?}");
    }
}

#[test]
fn parameter_example_in_exact_arithmetic() {
    let e = select_parameters_exact(&q("0.5"), &q("0.2"), &q("1"), &q("2"), &q("1")).unwrap();
    assert_eq!(e.s, q("9/16"));
    assert_eq!(e.beta, q("33/7"));
    assert_eq!(e.alpha, q("1000/7"));
    assert_eq!(e.d, q("132/7"));
    assert_eq!(e.delta0_exponent, q("264/7"));
    let p = select_parameters(0.5, 0.2, &Prism::interval(1.0, 2.0, 1.0).unwrap(), 1.0).unwrap();
    assert!((p.beta - 33.0 / 7.0).abs() < 1e-12);
    assert!((p.alpha - 1000.0 / 7.0).abs() < 1e-10);
    assert!((p.d - 132.0 / 7.0).abs() < 1e-12);
    assert!((p.delta0 / (-264.0f64 / 7.0).exp() - 1.0).abs() < 1e-12);
    assert!(p.delta0 > 4.0e-17 && p.delta0 < 4.4e-17);
}

#[test]
fn epsilon_window_rejects_small_epsilon() {
    let (lo, hi) = epsilon_window(0.5, 1.0);
    assert!((lo - 0.146446609).abs() < 1e-9 && hi == 0.5);
    let prism = Prism::interval(1.0, 2.0, 1.0).unwrap();
    match select_parameters(0.5, 0.14, &prism, 1.0) {
        Err(Error::EpsilonWindow { lower, upper, .. }) => assert_eq!((lower, upper), (lo, hi)),
        other => panic!("expected window rejection, got {other:?}"),
    }
    assert!(select_parameters_exact(&q("0.5"), &q("0.14"), &q("1"), &q("2"), &q("1")).is_err());
    assert!(select_parameters(1.0, 0.2, &prism, 1.0).is_err());
}

#[test]
fn feasibility_vanishes_on_the_window_edge() {
    for (rho, t) in [(0.5, 1.0), (0.2, 3.0), (0.9, 0.5)] {
        let (lo, _) = epsilon_window(rho, t);
        assert!(feasibility(rho, lo, t).abs() < 1e-12);
    }
}

#[test]
fn feasibility_is_equivalent_to_the_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let rho: f64 = rng.random_range(0.01..0.99);
        let t: f64 = rng.random_range(0.1..10.0);
        let eps: f64 = rng.random_range(1e-6..0.5 * t);
        let (lo, _) = epsilon_window(rho, t);
        if (eps - lo).abs() < 1e-9 * t {
            continue;
        }
        assert_eq!(feasibility(rho, eps, t) > 0.0, eps > lo, "rho {rho} eps {eps} T {t}");
    }
}

#[test]
fn lambda_and_threshold_monotonicity() {
    let prism = Prism::interval(1.0, 2.0, 1.0).unwrap();
    let p = select_parameters(0.5, 0.2, &prism, 1.0).unwrap();
    let ds = [1e-12, 1e-8, 1e-4, 1e-1];
    for w in ds.windows(2) {
        assert!(p.lambda_of_delta(w[0]) > p.lambda_of_delta(w[1]));
    }
    let mut prev = 0.0;
    for rho in [0.9, 0.7, 0.5, 0.3] {
        let p = select_parameters(rho, 0.45, &prism, 1.0).unwrap();
        let ratio = p.d / p.rho;
        assert!(ratio > prev);
        prev = ratio;
    }
    let thresholds: Vec<f64> =
        [0.9, 0.7, 0.5, 0.3].iter().map(|&r| select_parameters(r, 0.45, &prism, 1.0).unwrap().delta0).collect();
    assert!(thresholds.windows(2).all(|w| w[1] < w[0]));
    assert!(p.decay_ratio() >= 1.0 - p.rho - 1e-12);
}

#[test]
fn final_estimate_exponents() {
    let prism = Prism::interval(1.0, 2.0, 1.0).unwrap();
    let p = select_parameters(0.5, 0.2, &prism, 1.0).unwrap();
    let norms = mfg_cip::stability::VNorms { h21_truncated_sq: 1.0, h2_sq: 2.0 };
    for delta in [1e-30, 1e-3] {
        let e = assemble_final_estimate(&norms, &p, delta, 1.0).unwrap();
        let lambda = p.lambda_of_delta(delta).max(1.0);
        assert_eq!(e.lambda, lambda);
        assert!((e.exponent_decay + 2.0 * lambda * p.beta * 4.0).abs() < 1e-9 * e.exponent_decay.abs());
        assert!((e.exponent_data - 2.0 * lambda * p.d).abs() < 1e-9 * e.exponent_data);
    }
    assert!(assemble_final_estimate(&norms, &p, 0.0, 1.0).is_err());
}

#[test]
fn sweep_excludes_zero_perturbation_and_is_deterministic() {
    let g = line(33, 65);
    let (spec, k1) = scenarios::manufactured(&g, 1.0, 0.1).unwrap();
    let cfg = SweepConfig { scales: vec![0.0, 1e-3, 1e-2, 1e-1], picard: picard(), ..Default::default() };
    let a = holder_sweep(&spec, &k1, &dk(&g), &cfg).unwrap();
    assert_eq!(a.excluded.len(), 1);
    assert_eq!(a.excluded[0].scale, 0.0);
    assert_eq!(a.points.len(), 3);
    assert!(a.slope().unwrap() >= 1.0 - cfg.rho - 0.15);
    let b = holder_sweep(&spec, &k1, &dk(&g), &cfg).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    let header = a.to_csv().unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("scale,delta,err_k,err_u_s0,err_u_s1,err_u_s2,err_m_s0,err_m_s1,err_m_s2"));

    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    for f in ["sweep.csv", "fit.json", "params.json"] {
        assert!(dir.path().join(f).exists());
    }
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!((fit["slope"].as_f64().unwrap() - a.slope().unwrap()).abs() < 1e-12);
}

#[test]
fn incomplete_sweep_uses_one_face() {
    let g = line(33, 65);
    let (spec, k1) = scenarios::manufactured(&g, 1.0, 0.1).unwrap();
    let cfg = SweepConfig {
        scales: vec![1e-3, 1e-2, 1e-1],
        picard: picard(),
        completeness: Completeness::Incomplete,
        ..Default::default()
    };
    let rep = holder_sweep(&spec, &k1, &dk(&g), &cfg).unwrap();
    assert!(rep.excluded.is_empty(), "{:?}", rep.excluded);
    assert!(rep.slope().unwrap() >= 1.0 - cfg.rho - 0.15);
}
