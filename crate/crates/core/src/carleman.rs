//! The Carleman weight `φ_λ(x₁,t) = exp[2λ(x₁² − α(t − T/2)²)]`, the
//! two-sided Carleman functional and numerical checks of the weighted
//! integral lemmas.
//!
//! Weighted integrals are evaluated against `φ_λ e^{−S}` with a shared
//! log-scale `S`; every report carries `S` so that true values are
//! `reported · e^S`. Inequality checks do not depend on `S`.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fit::{fit_line, loglog_fit};
use crate::grid::{lateral_h10_sq, lateral_h21_sq, BoundaryTrace, Face, Field, Grid, Prism, Region, SpaceField};
use crate::kernels::{Kernel, KernelVariant};
use crate::par;

/// Largest admissible `λ`.
pub const LAMBDA_MAX: f64 = 64.0;
/// `2λb²` above which [`weight_phi`] switches to scaled weights.
pub const DIRECT_EXPONENT_LIMIT: f64 = 700.0;
/// Tolerance for the vanishing-trace precondition of the restricted functional.
pub const FACE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl CarlemanParams {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda >= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 1, got {lambda}")));
        }
        if lambda > LAMBDA_MAX {
            return Err(Error::NumericRange(format!(
                "lambda = {lambda} exceeds the supported maximum {LAMBDA_MAX}"
            )));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        Ok(CarlemanParams { lambda, alpha })
    }

    /// `αT²/4 − b² > 0`: the time-edge term of the estimate decays in `λ`.
    pub fn negligible_decays(&self, prism: &Prism) -> bool {
        self.alpha * prism.t_final.powi(2) / 4.0 - prism.b * prism.b > 0.0
    }

    /// `ln φ_λ(x₁, t)`.
    pub fn log_phi(&self, prism: &Prism, x1: f64, t: f64) -> f64 {
        let s = t - prism.t_final / 2.0;
        2.0 * self.lambda * (x1 * x1 - self.alpha * s * s)
    }

    /// The shared scale `S = 2λb²`, the log of the maximum of the weight.
    pub fn peak_log(&self, prism: &Prism) -> f64 {
        2.0 * self.lambda * prism.b * prism.b
    }
}

/// `φ_λ = field · e^{log_scale}`.
#[derive(Clone, Debug)]
pub struct Weight {
    pub field: Field,
    pub log_scale: f64,
}

/// The weight on the grid. Below the overflow limit the field is exact and
/// `log_scale = 0`; above it the field is `φ_λ e^{−2λb²}`.
pub fn weight_phi(params: &CarlemanParams, grid: &Arc<Grid>) -> Weight {
    let peak = params.peak_log(grid.prism());
    let log_scale = if peak > DIRECT_EXPONENT_LIMIT { peak } else { 0.0 };
    Weight { field: weight_scaled(params, grid, log_scale), log_scale }
}

/// `φ_λ e^{−log_scale}`.
pub fn weight_scaled(params: &CarlemanParams, grid: &Arc<Grid>, log_scale: f64) -> Field {
    let prism = grid.prism().clone();
    Field::from_fn(grid, |x, t| (params.log_phi(&prism, x[0], t) - log_scale).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightExtrema {
    pub max: f64,
    /// `(x₁, t)` of the maximizing node.
    pub argmax: (f64, f64),
    pub min_truncated: f64,
    pub eps: f64,
}

/// Maximum over the grid nodes of `Q̄_T` and minimum over `Q̄_{ε,T}`.
///
/// The truncated cylinder is closed, so its time edges `t = ε` and
/// `t = T − ε` are included even when they fall between time levels.
pub fn weight_extrema(params: &CarlemanParams, grid: &Arc<Grid>, eps: f64) -> Result<WeightExtrema> {
    let prism = grid.prism();
    let tf = prism.t_final;
    if !(eps > 0.0 && eps < tf / 2.0) {
        return Err(Error::EpsilonOutOfRange { eps, t_final: tf });
    }
    if params.peak_log(prism) > DIRECT_EXPONENT_LIMIT {
        return Err(Error::NumericRange(format!(
            "e^(2λb²) with 2λb² = {} is not representable",
            params.peak_log(prism)
        )));
    }
    let nx1 = grid.nx()[0];
    let xs: Vec<f64> = (0..nx1).map(|i| grid.coord(0, i)).collect();
    let mut best = (f64::NEG_INFINITY, (0.0, 0.0));
    for j in 0..grid.nt() {
        let t = grid.time(j);
        for &x in &xs {
            let v = params.log_phi(prism, x, t);
            if v > best.0 {
                best = (v, (x, t));
            }
        }
    }
    let mut times: Vec<f64> = (0..grid.nt()).map(|j| grid.time(j)).filter(|t| *t >= eps && *t <= tf - eps).collect();
    times.extend([eps, tf - eps]);
    let min = times
        .iter()
        .flat_map(|&t| xs.iter().map(move |&x| (x, t)))
        .map(|(x, t)| params.log_phi(prism, x, t))
        .fold(f64::INFINITY, f64::min);
    Ok(WeightExtrema { max: best.0.exp(), argmax: best.1, min_truncated: min.exp(), eps })
}

/// `∂_t + Δ` or `∂_t − Δ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Which lateral norms enter the boundary term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// All of `S_T`.
    Full,
    /// Only `Γ₁T⁺`; requires `u = 0` on the rest of `S_T`.
    Restricted,
}

/// The four terms at one `λ`, without the constant `C₀` and divided by
/// `e^{log_scale}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanTerms {
    pub lambda: f64,
    pub log_scale: f64,
    pub lhs: f64,
    pub main: f64,
    pub boundary: f64,
    pub negligible: f64,
}

impl CarlemanTerms {
    /// `main − boundary − negligible`, the coefficient of `C₀`.
    pub fn net(&self) -> f64 {
        self.main - self.boundary - self.negligible
    }

    /// The largest `C₀` for which the estimate holds at this `λ`.
    pub fn admissible_c0(&self) -> f64 {
        if self.net() <= 0.0 {
            f64::INFINITY
        } else {
            self.lhs / self.net()
        }
    }

    pub fn passes(&self, c0: f64) -> bool {
        self.lhs >= c0 * self.net()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanRow {
    pub lambda: f64,
    pub log_scale: f64,
    pub lhs: f64,
    pub main: f64,
    pub boundary: f64,
    pub negligible: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub sign: Sign,
    pub boundary_kind: Boundary,
    pub alpha: f64,
    pub c0: f64,
    /// Rows in increasing `λ`; RHS components include the factor `C₀`.
    pub rows: Vec<CarlemanRow>,
    /// Smallest `λ` of the sweep from which every larger `λ` passes.
    pub lambda0: Option<f64>,
    /// Infimum over the sweep of the admissible `C₀`.
    pub c0_admissible: f64,
    pub pass: bool,
    /// `αT²/4 > b²`.
    pub negligible_decays: bool,
}

impl CarlemanReport {
    fn from_terms(sign: Sign, boundary_kind: Boundary, alpha: f64, c0: f64, terms: &[CarlemanTerms], decays: bool) -> Self {
        let rows: Vec<CarlemanRow> = terms
            .iter()
            .map(|t| CarlemanRow {
                lambda: t.lambda,
                log_scale: t.log_scale,
                lhs: t.lhs,
                main: c0 * t.main,
                boundary: c0 * t.boundary,
                negligible: c0 * t.negligible,
                pass: t.passes(c0),
            })
            .collect();
        let mut lambda0 = None;
        for r in rows.iter().rev() {
            if !r.pass {
                break;
            }
            lambda0 = Some(r.lambda);
        }
        CarlemanReport {
            sign,
            boundary_kind,
            alpha,
            c0,
            c0_admissible: terms.iter().map(CarlemanTerms::admissible_c0).fold(f64::INFINITY, f64::min),
            pass: rows.iter().all(|r| r.pass),
            lambda0,
            rows,
            negligible_decays: decays,
        }
    }

    /// CSV with columns `lambda, lhs, main, boundary, negligible, pass`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lambda", "lhs", "main", "boundary", "negligible", "pass", "log_scale"])?;
        for r in &self.rows {
            w.write_record([
                r.lambda.to_string(),
                format!("{:e}", r.lhs),
                format!("{:e}", r.main),
                format!("{:e}", r.boundary),
                format!("{:e}", r.negligible),
                r.pass.to_string(),
                r.log_scale.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn weighted(f: &Field, w: &Field) -> f64 {
    (f * w).integrate(Region::Cylinder).expect("cylinder integral")
}

fn check_restriction(u: &Field) -> Result<()> {
    for face in u.grid().faces() {
        if face == Face::gamma1_plus() {
            continue;
        }
        let max = u.dirichlet(face).max_abs();
        if max > FACE_TOL {
            return Err(Error::NonVanishingFace { face: face.to_string(), max });
        }
    }
    Ok(())
}

/// Evaluates the four terms of the Carleman estimate at one `λ`.
pub fn carleman_terms(u: &Field, sign: Sign, params: &CarlemanParams, boundary: Boundary) -> Result<CarlemanTerms> {
    if !u.is_finite() {
        return Err(Error::NonFinite("Carleman functional input".into()));
    }
    if boundary == Boundary::Restricted {
        check_restriction(u)?;
    }
    let g = u.grid();
    let prism = g.prism();
    let lambda = params.lambda;
    let s = params.peak_log(prism);
    let w = weight_scaled(params, g, s);
    let n = g.dim();

    let ut = u.dt();
    let op = &ut + &(&u.laplacian() * sign.factor());
    let lhs = weighted(&op.map(|v| v * v), &w);

    let mut second = ut.map(|v| v * v);
    for i in 0..n {
        for j in 0..n {
            let d = u.second(i, j);
            second = &second + &d.map(|v| v * v);
        }
    }
    let low = &(&u.grad_sq() * lambda) + &(&u.map(|v| v * v) * lambda.powi(3));
    let main = weighted(&second, &w) / lambda + weighted(&low, &w);

    let faces: Vec<Face> = match boundary {
        Boundary::Full => g.faces(),
        Boundary::Restricted => vec![Face::gamma1_plus()],
    };
    let dir: Vec<BoundaryTrace> = faces.iter().map(|&f| u.dirichlet(f)).collect();
    let neu: Vec<BoundaryTrace> = faces.iter().map(|&f| u.neumann(f)).collect();
    let lateral = lateral_h10_sq(&neu) + lateral_h21_sq(&dir);
    let bfac = (3.0 * lambda * prism.b * prism.b - s).exp();

    let edges = u.level(0).h1_sq() + u.level(g.nt() - 1).h1_sq();
    let decay = -2.0 * lambda * (params.alpha * prism.t_final.powi(2) / 4.0 - prism.b * prism.b);

    Ok(CarlemanTerms {
        lambda,
        log_scale: s,
        lhs,
        main,
        boundary: lateral * bfac,
        negligible: edges * (decay - s).exp(),
    })
}

/// The Carleman functional over all of `S_T` at a single `λ`.
pub fn carleman_functional(u: &Field, sign: Sign, params: &CarlemanParams, c0: f64) -> Result<CarlemanReport> {
    carleman_sweep(u, sign, params.alpha, &[params.lambda], c0, Boundary::Full)
}

/// The functional with the boundary term restricted to `Γ₁T⁺`.
pub fn carleman_functional_restricted(u: &Field, params: &CarlemanParams, c0: f64) -> Result<CarlemanReport> {
    carleman_sweep(u, Sign::Plus, params.alpha, &[params.lambda], c0, Boundary::Restricted)
}

fn sorted(lambdas: &[f64]) -> Vec<f64> {
    let mut ls = lambdas.to_vec();
    ls.sort_by(f64::total_cmp);
    ls
}

/// The functional over a `λ`-grid; rows come back in increasing `λ`.
pub fn carleman_sweep(
    u: &Field,
    sign: Sign,
    alpha: f64,
    lambdas: &[f64],
    c0: f64,
    boundary: Boundary,
) -> Result<CarlemanReport> {
    if !(c0 > 0.0) {
        return Err(Error::InvalidParameter(format!("C0 must be positive, got {c0}")));
    }
    let ls = sorted(lambdas);
    let params: Vec<CarlemanParams> = ls.iter().map(|&l| CarlemanParams::new(l, alpha)).collect::<Result<_>>()?;
    let terms: Vec<CarlemanTerms> =
        par::map_range(params.len(), |i| carleman_terms(u, sign, &params[i], boundary)).into_iter().collect::<Result<_>>()?;
    let decays = params.first().is_some_and(|p| p.negligible_decays(u.grid().prism()));
    Ok(CarlemanReport::from_terms(sign, boundary, alpha, c0, &terms, decays))
}

/// Empirical constants over a family of functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConstants {
    /// Infimum over members and `λ` of the admissible `C₀`.
    pub c0: f64,
    /// Member and `λ` attaining the infimum.
    pub worst: (usize, f64),
    pub reports: Vec<CarlemanReport>,
}

/// Runs the sweep for every member and reports the infimum of the admissible
/// `C₀`. The per-member reports are re-evaluated at that `C₀`.
pub fn empirical_c0(
    members: &[Field],
    sign: Sign,
    alpha: f64,
    lambdas: &[f64],
    boundary: Boundary,
) -> Result<EmpiricalConstants> {
    let ls = sorted(lambdas);
    let params: Vec<CarlemanParams> = ls.iter().map(|&l| CarlemanParams::new(l, alpha)).collect::<Result<_>>()?;
    let all: Vec<Vec<CarlemanTerms>> = par::map_range(members.len(), |m| {
        params.iter().map(|p| carleman_terms(&members[m], sign, p, boundary)).collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut worst = (0, ls.first().copied().unwrap_or(1.0));
    let mut c0 = f64::INFINITY;
    for (m, terms) in all.iter().enumerate() {
        for t in terms {
            if t.admissible_c0() < c0 {
                c0 = t.admissible_c0();
                worst = (m, t.lambda);
            }
        }
    }
    if !(c0 > 0.0) {
        return Err(Error::InvalidParameter("no positive C0 satisfies the family".into()));
    }
    let eval_c0 = if c0.is_finite() { c0 } else { 1.0 };
    let decays = params.first().is_some_and(|p| members.first().is_some_and(|u| p.negligible_decays(u.grid().prism())));
    let reports = all.iter().map(|t| CarlemanReport::from_terms(sign, boundary, alpha, eval_c0, t, decays)).collect();
    Ok(EmpiricalConstants { c0, worst, reports })
}

/// Decay of the time-edge contribution
/// `∫_Ω (|∇u|² + u²) φ_λ dx` at `t = 0` and `t = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub lambdas: Vec<f64>,
    /// `ln` of the measured contribution at each `λ`.
    pub log_measured: Vec<f64>,
    pub measured_slope: f64,
    /// `−2(αT²/4 − b²)`.
    pub predicted_slope: f64,
    pub relative_error: f64,
    pub pass: bool,
}

pub fn negligible_decay(u: &Field, alpha: f64, lambdas: &[f64], tolerance: f64) -> Result<DecayCheck> {
    let g = u.grid();
    let prism = g.prism().clone();
    let ls = sorted(lambdas);
    let edges = [u.level(0), u.level(g.nt() - 1)];
    let dens: Vec<_> = edges.iter().map(|e| &e.grad_sq() + &e.map(|v| v * v)).collect();
    // Both edges sit at |t − T/2| = T/2, so the time factor is common and
    // the spatial part is integrated relative to its peak at x₁ = b.
    let edge_density = &dens[0] + &dens[1];
    let mut log_measured = Vec::with_capacity(ls.len());
    for &l in &ls {
        let p = CarlemanParams::new(l, alpha)?;
        let w = SpaceField::from_fn(g, |x| (2.0 * l * (x[0] * x[0] - prism.b * prism.b)).exp());
        let total = (&w * &edge_density).integrate();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("time-edge contribution vanishes".into()));
        }
        log_measured.push(total.ln() + p.peak_log(&prism) + p.log_phi(&prism, 0.0, 0.0));
    }
    let fit = fit_line(&ls, &log_measured)?;
    let predicted = -2.0 * (alpha * prism.t_final.powi(2) / 4.0 - prism.b * prism.b);
    let relative_error = (fit.slope / predicted - 1.0).abs();
    Ok(DecayCheck {
        lambdas: ls,
        log_measured,
        measured_slope: fit.slope,
        predicted_slope: predicted,
        relative_error,
        pass: predicted < 0.0 && relative_error <= tolerance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lemma {
    /// Separable kernel, `∫(∫Ȳ h dȳ)²φ ≤ C̃∫h²φ`.
    #[serde(rename = "separable")]
    SeparableKernel,
    /// Causal kernel, `∫(∫Y h dy)²φ ≤ C̃∫h²φ`.
    #[serde(rename = "causal")]
    CausalKernel,
    /// `∫(∫_{T/2}^t h)²φ ≤ (C₁/λ)∫h²φ`.
    #[serde(rename = "time-integral")]
    TimeIntegral,
}

impl Lemma {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(Lemma::SeparableKernel),
            "causal" => Ok(Lemma::CausalKernel),
            "time-integral" => Ok(Lemma::TimeIntegral),
            _ => Err(Error::InvalidParameter(format!("unknown lemma `{s}`"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Lemma::SeparableKernel => "separable",
            Lemma::CausalKernel => "causal",
            Lemma::TimeIntegral => "time-integral",
        }
    }
}

/// Allowed spread `max/min` of the kernel-lemma ratios over the sweep.
pub const SPREAD_LIMIT: f64 = 10.0;
/// Allowed deviation of the time-integral slope from `−1`.
pub const SLOPE_TOL: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub which: Lemma,
    pub lambdas: Vec<f64>,
    /// `∫(Ih)²φ / ∫h²φ` with `I` the kernel or time integral.
    pub ratios: Vec<f64>,
    /// The bounded quantity: `ratio` for the kernel lemmas, `λ·ratio`
    /// for the time-integral lemma.
    pub normalized: Vec<f64>,
    /// Empirical constant: the maximum of `normalized`.
    pub constant: f64,
    /// `max/min` of `normalized`.
    pub spread: f64,
    /// Log-log slope of `ratios` against `λ`.
    pub slope: f64,
    /// `None` when `h ≡ 0`.
    pub pass: Option<bool>,
}

impl LemmaReport {
    pub fn degenerate(&self) -> bool {
        self.pass.is_none()
    }
}

/// Evaluates one of the weighted-integral lemmas over a `λ`-grid.
///
/// The kernel lemmas require a kernel of the matching form; its scale is
/// honoured.
pub fn verify_lemma(which: Lemma, h: &Field, kernel: Option<&Kernel>, alpha: f64, lambdas: &[f64]) -> Result<LemmaReport> {
    if !h.is_finite() {
        return Err(Error::NonFinite("lemma input".into()));
    }
    let ls = sorted(lambdas);
    for &l in &ls {
        CarlemanParams::new(l, alpha)?;
    }
    let integrated = match which {
        Lemma::TimeIntegral => h.integral_from_mid(),
        Lemma::SeparableKernel | Lemma::CausalKernel => {
            let k = kernel.ok_or_else(|| Error::InvalidParameter(format!("lemma {} needs a kernel", which.label())))?;
            match (which, k.variant()) {
                (Lemma::SeparableKernel, KernelVariant::SeparableDelta(_)) => {}
                (Lemma::CausalKernel, KernelVariant::HeavisideCausal(_)) => {}
                _ => {
                    return Err(Error::UnsupportedKernel { variant: k.variant().name(), operation: "this lemma" });
                }
            }
            k.apply(h)
        }
    };
    let lambdas = ls;
    if h.max_abs() == 0.0 {
        let n = lambdas.len();
        return Ok(LemmaReport {
            which,
            lambdas,
            ratios: vec![0.0; n],
            normalized: vec![0.0; n],
            constant: 0.0,
            spread: f64::NAN,
            slope: f64::NAN,
            pass: None,
        });
    }
    let g = h.grid();
    let num_f = integrated.map(|v| v * v);
    let den_f = h.map(|v| v * v);
    let ratios: Vec<f64> = par::map_range(lambdas.len(), |i| {
        let p = CarlemanParams { lambda: lambdas[i], alpha };
        let w = weight_scaled(&p, g, p.peak_log(g.prism()));
        weighted(&num_f, &w) / weighted(&den_f, &w)
    });
    let normalized: Vec<f64> = match which {
        Lemma::TimeIntegral => ratios.iter().zip(&lambdas).map(|(r, l)| r * l).collect(),
        _ => ratios.clone(),
    };
    let max = normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = normalized.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max / min;
    let slope = if lambdas.len() >= 2 && ratios.iter().all(|r| *r > 0.0) {
        loglog_fit(&lambdas, &ratios)?.slope
    } else {
        f64::NAN
    };
    let pass = match which {
        Lemma::TimeIntegral => (slope + 1.0).abs() <= SLOPE_TOL,
        _ => spread <= SPREAD_LIMIT,
    };
    Ok(LemmaReport { which, lambdas, ratios, normalized, constant: max, spread, slope, pass: Some(pass) })
}

/// Relative difference between the two orders of integration of
/// `∫_a^b (∫_{x₁}^b h²(y₁, ȳ, t) dy₁) φ_λ(x₁, t) dx₁`, integrated over
/// `ȳ` and `t`.
///
/// Both orders use the same triangle rule: tensor trapezoid weights off the
/// diagonal and half weights on it, so the two sums agree up to rounding.
pub fn fubini_residual(h: &Field, params: &CarlemanParams) -> Result<f64> {
    let g = h.grid();
    let prism = g.prism().clone();
    let n1 = g.nx()[0];
    let h1 = g.h()[0];
    let mut w1 = vec![h1; n1];
    w1[0] *= 0.5;
    w1[n1 - 1] *= 0.5;
    let s = params.peak_log(&prism);
    let xs: Vec<f64> = (0..n1).map(|i| g.coord(0, i)).collect();
    // Squared h with the x₁ axis last so that each lane is a function of y₁.
    let hsq = h.data().mapv(|v| v * v);
    let mut outer_a = ndarray::ArrayD::<f64>::zeros(hsq.index_axis(ndarray::Axis(1), 0).raw_dim());
    let mut outer_b = outer_a.clone();
    let lanes = hsq.lanes(ndarray::Axis(1));
    for (((idx, a), b), lane) in outer_a.indexed_iter_mut().zip(outer_b.iter_mut()).zip(lanes) {
        let t = g.time(ndarray::Dimension::slice(&idx)[0]);
        let phi: Vec<f64> = xs.iter().map(|&x| (params.log_phi(&prism, x, t) - s).exp()).collect();
        // Inner over y₁ ≥ x₁, then outer over x₁.
        let mut first = 0.0;
        for i in 0..n1 {
            let mut inner = 0.5 * w1[i] * lane[i];
            for j in i + 1..n1 {
                inner += w1[j] * lane[j];
            }
            first += w1[i] * phi[i] * inner;
        }
        // Inner over x₁ ≤ y₁, then outer over y₁.
        let mut second = 0.0;
        for j in 0..n1 {
            let mut inner = 0.5 * w1[j] * phi[j];
            for i in 0..j {
                inner += w1[i] * phi[i];
            }
            second += w1[j] * lane[j] * inner;
        }
        *a = first;
        *b = second;
    }
    let mut spacings = vec![g.tau()];
    spacings.extend_from_slice(&g.h()[1..]);
    let ia = crate::stencil::integrate(outer_a.view(), &spacings);
    let ib = crate::stencil::integrate(outer_b.view(), &spacings);
    let scale = ia.abs().max(ib.abs());
    Ok(if scale == 0.0 { 0.0 } else { (ia - ib).abs() / scale })
}
