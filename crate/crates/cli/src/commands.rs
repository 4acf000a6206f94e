use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use mfg_cip::carleman::{empirical_c0, fubini_residual, negligible_decay, verify_lemma, Boundary, CarlemanParams, Lemma, Sign};
use mfg_cip::family::{default_family, random_family, TestFunction};
use mfg_cip::io::{write_json, write_triple};
use mfg_cip::kernels::{Kernel, YBar};
use mfg_cip::mfg::{
    manufacture_triple, residual, scenarios, solve_mfg_picard, Equation, ManufactureOptions,
};
use mfg_cip::stability::holder_sweep;
use mfg_cip::{Error, Field, SpaceField};

use crate::config::{build_problem, validate_base, validate_lambdas, validate_stability, ExperimentConfig};
use crate::failure::Failure;

fn io(context: &str) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure::from_core(context, &e)
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::from_core("csv", &Error::Csv(e))
}

fn provenance(command: &str, cfg: &ExperimentConfig) -> serde_json::Value {
    json!({ "command": command, "version": env!("CARGO_PKG_VERSION"), "config": cfg })
}

fn write_provenance(dir: &Path, command: &str, cfg: &ExperimentConfig, extra: Option<serde_json::Value>) -> Result<(), Failure> {
    let mut p = provenance(command, cfg);
    if let Some(extra) = extra {
        p["outcome"] = extra;
    }
    write_json(&dir.join("provenance.json"), &p).map_err(io("provenance.json"))
}

fn create(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::from_core(&dir.display().to_string(), &Error::Io(e)))
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Failure::from_core(&path.display().to_string(), &Error::Io(e)))
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    change: f64,
}

fn write_history(dir: &Path, history: &[f64]) -> Result<(), Failure> {
    let rows: Vec<HistoryRow> = history.iter().enumerate().map(|(i, &c)| HistoryRow { iteration: i + 1, change: c }).collect();
    write_csv(&dir.join("history.csv"), &rows)
}

pub fn forward(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let v = validate_base(cfg)?;
    let (spec, k) = build_problem(cfg, &v)?;
    create(&cfg.out)?;
    match solve_mfg_picard(&spec, &k, &cfg.picard()) {
        Ok(t) => {
            write_triple(&cfg.out, &t, &spec.f, &provenance("forward", cfg)).map_err(io("forward"))?;
            let history = t.report.as_ref().map(|r| r.history.clone()).unwrap_or_default();
            write_history(&cfg.out, &history)?;
            println!("converged in {} Picard iterations; output in {}", history.len(), cfg.out.display());
            Ok(())
        }
        Err(e) => {
            if let Error::NonConvergence { history, .. } = &e {
                write_history(&cfg.out, history)?;
            }
            write_provenance(&cfg.out, "forward", cfg, Some(json!({ "error": e.to_string() })))?;
            Err(Failure::from_core("forward", &e))
        }
    }
}

pub fn manufacture(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let v = validate_base(cfg)?;
    let g = &v.grid;
    let kernel = v.kernel.clone().unwrap_or_else(|| Kernel::causal(YBar::Constant(1.0)).scaled(cfg.problem.n1));
    let opts = ManufactureOptions { scheme: cfg.solver.scheme, ..Default::default() };
    let man = manufacture_triple(g, &kernel, &scenarios::default_k(g), &scenarios::default_u(), &scenarios::default_m0(g), opts)
        .map_err(io("manufacture"))?;
    create(&cfg.out)?;
    write_triple(&cfg.out, &man.triple, &man.f, &provenance("manufacture", cfg)).map_err(io("manufacture"))?;
    let res = |e| {
        let r = residual(&man.triple, &man.spec, e);
        json!({ "l2": r.l2, "max": r.max })
    };
    let report = json!({ "u": man.u_description, "hjb": res(Equation::Hjb), "fp": res(Equation::Fp) });
    write_json(&cfg.out.join("residuals.json"), &report).map_err(io("residuals.json"))?;
    println!("manufactured triple written to {}", cfg.out.display());
    Ok(())
}

fn family(dim: usize, members: usize, seed: Option<u64>) -> Result<Vec<TestFunction>, Failure> {
    match seed {
        Some(s) => Ok(random_family(dim, members, s)),
        None => {
            let all = default_family(dim);
            if members > all.len() {
                return Err(Failure::config("carleman.members", format!("the default family has {} members; set a seed for more", all.len())));
            }
            Ok(all.into_iter().take(members).collect())
        }
    }
}

#[derive(Serialize)]
struct CarlemanCsvRow {
    member: usize,
    lambda: f64,
    lhs: f64,
    main: f64,
    boundary: f64,
    negligible: f64,
    pass: bool,
}

pub fn carleman(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let v = validate_base(cfg)?;
    let g = &v.grid;
    let c = &cfg.carleman;
    let alpha = match c.alpha {
        Some(a) => a,
        None => validate_stability(cfg, g)?.alpha,
    };
    validate_lambdas("carleman.lambdas", &c.lambdas, alpha)?;
    if c.members == 0 {
        return Err(Failure::config("carleman.members", "must be at least 1"));
    }
    let fam = family(g.dim(), c.members, c.seed)?;
    let (boundary, members): (Boundary, Vec<Field>) = if c.restricted {
        (Boundary::Restricted, fam.iter().map(|f| f.vanishing_off_gamma1(g.prism()).sample(g)).collect())
    } else {
        (Boundary::Full, fam.iter().map(|f| f.vanishing_laterally(g.prism()).sample(g)).collect())
    };
    create(&cfg.out)?;
    let mut constants = Vec::new();
    for (sign, tag) in [(Sign::Plus, "plus"), (Sign::Minus, "minus")] {
        let e = empirical_c0(&members, sign, alpha, &c.lambdas, boundary).map_err(io("carleman"))?;
        let rows: Vec<CarlemanCsvRow> = e
            .reports
            .iter()
            .enumerate()
            .flat_map(|(m, r)| {
                r.rows.iter().map(move |row| CarlemanCsvRow {
                    member: m,
                    lambda: row.lambda,
                    lhs: row.lhs,
                    main: row.main,
                    boundary: row.boundary,
                    negligible: row.negligible,
                    pass: row.pass,
                })
            })
            .collect();
        write_csv(&cfg.out.join(format!("carleman_{tag}.csv")), &rows)?;
        let lambda0 = e.reports.iter().map(|r| r.lambda0).try_fold(f64::NEG_INFINITY, |acc, l| l.map(|l| acc.max(l)));
        let all_pass = e.reports.iter().all(|r| r.pass);
        println!("{tag}: C0 = {:e}, lambda0 = {lambda0:?}, all pass = {all_pass}", e.c0);
        constants.push(json!({
            "sign": sign,
            "c0": e.c0,
            "lambda0": lambda0,
            "worst_member": e.worst.0,
            "worst_lambda": e.worst.1,
            "all_pass": all_pass,
        }));
    }
    let decay = if CarlemanParams::new(c.lambdas[0], alpha).map_err(io("carleman"))?.negligible_decays(g.prism()) {
        let d = negligible_decay(&fam[0].sample(g), alpha, &c.lambdas, c.decay_tolerance).map_err(io("carleman"))?;
        serde_json::to_value(d).map_err(|e| Failure::from_core("decay", &Error::Json(e)))?
    } else {
        serde_json::Value::Null
    };
    let report = json!({ "alpha": alpha, "boundary": boundary, "constants": constants, "negligible_decay": decay });
    write_json(&cfg.out.join("constants.json"), &report).map_err(io("constants.json"))?;
    write_provenance(&cfg.out, "carleman", cfg, None)
}

#[derive(Serialize)]
struct LemmaCsvRow {
    member: usize,
    lambda: f64,
    ratio: f64,
    normalized: f64,
}

pub fn lemmas(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let v = validate_base(cfg)?;
    let g = &v.grid;
    let l = &cfg.lemmas;
    let alpha = match l.alpha {
        Some(a) => a,
        None => validate_stability(cfg, g)?.alpha,
    };
    validate_lambdas("lemmas.lambdas", &l.lambdas, alpha)?;
    if l.members == 0 {
        return Err(Failure::config("lemmas.members", "must be at least 1"));
    }
    let hs: Vec<Field> = random_family(g.dim(), l.members, l.seed).iter().map(|f| f.sample(g)).collect();
    create(&cfg.out)?;
    let cases = [
        (Lemma::TimeIntegral, None),
        (Lemma::SeparableKernel, Some(Kernel::separable(YBar::Constant(1.0)))),
        (Lemma::CausalKernel, Some(Kernel::causal(YBar::Constant(1.0)))),
    ];
    let mut summary = serde_json::Map::new();
    for (which, kernel) in cases {
        let mut rows = Vec::new();
        let mut members = Vec::new();
        for (m, h) in hs.iter().enumerate() {
            let r = verify_lemma(which, h, kernel.as_ref(), alpha, &l.lambdas).map_err(io(which.label()))?;
            for i in 0..r.lambdas.len() {
                rows.push(LemmaCsvRow { member: m, lambda: r.lambdas[i], ratio: r.ratios[i], normalized: r.normalized[i] });
            }
            members.push(json!({ "slope": r.slope, "spread": r.spread, "constant": r.constant, "pass": r.pass }));
        }
        write_csv(&cfg.out.join(format!("lemma_{}.csv", which.label())), &rows)?;
        let all_pass = members.iter().all(|m| m["pass"] == json!(true));
        println!("{}: all pass = {all_pass}", which.label());
        summary.insert(which.label().into(), json!({ "members": members, "all_pass": all_pass }));
    }
    let mut fubini: f64 = 0.0;
    for h in &hs {
        for &lambda in &l.lambdas {
            let p = CarlemanParams::new(lambda, alpha).map_err(io("fubini"))?;
            fubini = fubini.max(fubini_residual(h, &p).map_err(io("fubini"))?);
        }
    }
    println!("Fubini swap residual: {fubini:e}");
    summary.insert("fubini_residual".into(), json!(fubini));
    summary.insert("alpha".into(), json!(alpha));
    write_json(&cfg.out.join("lemmas.json"), &summary).map_err(io("lemmas.json"))?;
    write_provenance(&cfg.out, "lemmas", cfg, None)
}

pub fn params(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let v = validate_base(cfg)?;
    let p = validate_stability(cfg, &v.grid)?;
    let text = serde_json::to_string_pretty(&p).map_err(|e| Failure::from_core("params", &Error::Json(e)))?;
    // A closed pipe (`| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, params_only: bool) -> Result<(), Failure> {
    if params_only {
        return params(cfg);
    }
    let v = validate_base(cfg)?;
    validate_stability(cfg, &v.grid)?;
    let (spec, k1) = build_problem(cfg, &v)?;
    let a = v.grid.prism().a;
    let dk = SpaceField::from_fn(&v.grid, |x| (std::f64::consts::PI * (x[0] - a)).sin().powi(2));
    let rep = holder_sweep(&spec, &k1, &dk, &cfg.sweep_config()).map_err(io("sweep"))?;
    create(&cfg.out)?;
    rep.write(&cfg.out).map_err(io("sweep"))?;
    write_provenance(&cfg.out, "sweep", cfg, None)?;
    for e in &rep.excluded {
        eprintln!("excluded scale {:e}: {}", e.scale, e.reason);
    }
    match rep.slope() {
        Some(s) => {
            println!("{} points, delta spans {:.2} decades, slope {s:.3}", rep.points.len(), rep.delta_decades);
            Ok(())
        }
        None => Err(Failure { code: crate::failure::EXIT_SOLVER, message: "sweep: fewer than two usable points".into() }),
    }
}
