//! Difference systems of two solution triples, the reconstruction of
//! `k̃ = k₁ − k₂`, the stability parameter calculus and the Hölder sweep.
//!
//! With `ũ = u₁ − u₂`, `m̃ = m₁ − m₂` the pack carries `v = ũ_t`, `q = m̃_t`,
//! `w = v_t`, `r = q_t` and the snapshots `ũ₀ = ũ(·,T/2)`, `m̃₀ = m̃(·,T/2)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::cip::{extract, inject_noise, measure_delta, Completeness, NoiseSpec};
use crate::error::{Error, Result};
use crate::fit::{loglog_fit, LineFit};
use crate::grid::{Field, Grid, Prism, SpaceField};
use crate::kernels::{apply_g, Kernel};
use crate::mfg::{solve_mfg_picard, MFGTriple, PicardOptions, ProblemSpec};
use crate::par;

/// Relative size below which an inequality bracket counts as vanishing.
pub const BRACKET_THRESHOLD: f64 = 1e-10;

/// Squared norms of `V = (v, q, w, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VNorms {
    /// `‖V‖²_{H^{2,1}(Q_{ε,T})}`.
    pub h21_truncated_sq: f64,
    /// `‖V‖²_{H²(Q_T)}`.
    pub h2_sq: f64,
}

#[derive(Clone, Debug)]
pub struct DifferencePack {
    pub u: Field,
    pub m: Field,
    pub k: SpaceField,
    pub v: Field,
    pub q: Field,
    pub w: Field,
    pub r: Field,
    pub u0: SpaceField,
    pub m0: SpaceField,
    pub eps: f64,
    pub norms: VNorms,
}

impl DifferencePack {
    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid()
    }

    /// Largest deviations of `v − ∂_t ũ`-type pairs: `(‖v − D_t ũ‖_∞ interior,
    /// max |ũ − (∫_{T/2}^t v + ũ₀)|)`. The first is zero by construction of
    /// `v`; the second measures the quadrature accuracy of the identity.
    pub fn consistency(&self) -> (f64, f64) {
        let first = [(&self.v, &self.u), (&self.q, &self.m)]
            .iter()
            .map(|(d, f)| (*d - &f.dt()).interior_norms().1)
            .fold(0.0, f64::max);
        let rebuilt = &self.v.integral_from_mid() + &self.u0.to_field();
        let ident = (&self.u - &rebuilt).max_abs();
        (first, ident)
    }

    /// `‖∂_t^s ũ‖_{H^{2,1}(Q_{ε,T})}` and the same for `m̃`, for `s = 0, 1, 2`.
    pub fn truncated_errors(&self) -> Result<([f64; 3], [f64; 3])> {
        let n = |f: &Field| f.h21_truncated_sq(self.eps).map(f64::sqrt);
        Ok(([n(&self.u)?, n(&self.v)?, n(&self.w)?], [n(&self.m)?, n(&self.q)?, n(&self.r)?]))
    }
}

/// Forms the difference of two triples on the same grid. `eps` fixes
/// `Q_{ε,T}` for the truncated norms.
pub fn form_difference(t1: &MFGTriple, t2: &MFGTriple, eps: f64) -> Result<DifferencePack> {
    let grid = t1.grid().clone();
    if !grid.same_as(t2.grid()) {
        return Err(Error::GridMismatch);
    }
    grid.snap_epsilon(eps)?;
    let u = &t1.u - &t2.u;
    let m = &t1.m - &t2.m;
    let k = &t1.k - &t2.k;
    let (v, q, w, r) = (u.dt(), m.dt(), u.dtt(), m.dtt());
    let mid = grid.mid_level();
    let (u0, m0) = (u.level(mid), m.level(mid));
    let mut norms = VNorms { h21_truncated_sq: 0.0, h2_sq: 0.0 };
    for f in [&v, &q, &w, &r] {
        norms.h21_truncated_sq += f.h21_truncated_sq(eps)?;
        norms.h2_sq += f.h2_sq();
    }
    Ok(DifferencePack { u, m, k, v, q, w, r, u0, m0, eps, norms })
}

/// Time level at which the interaction coefficient enters `F`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FLevel {
    /// `f(·, T/2)`, the level at which the first difference equation is read.
    #[default]
    Mid,
    /// `f(·, 0)`.
    Initial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOptions {
    /// Non-degeneracy constant: `½|∇u₀,₁|² ≥ c` is required.
    pub c: f64,
    #[serde(default)]
    pub f_level: FLevel,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions { c: 1e-3, f_level: FLevel::Mid }
    }
}

/// `|∇u₀,₁|²`, rejected when it drops below `2c` anywhere.
fn guarded_grad_sq(u01: &SpaceField, c: f64) -> Result<SpaceField> {
    let g2 = u01.grad_sq();
    let (node, value) = g2.argmin();
    if value < 2.0 * c {
        return Err(Error::Degenerate { value, bound: 2.0 * c, node });
    }
    Ok(g2)
}

/// `F = 2|∇u₀,₁|⁻²[Δũ₀ + ∫Y m̃₀ dy + f m̃₀] − |∇u₀,₁|⁻² k₂ ∇ũ₀·∇(u₀,₁ + u₀,₂)`.
pub fn compute_f(
    pack: &DifferencePack,
    u01: &SpaceField,
    u02: &SpaceField,
    k2: &SpaceField,
    kernel: &Kernel,
    f: &Field,
    opts: ReconstructOptions,
) -> Result<SpaceField> {
    let g2 = guarded_grad_sq(u01, opts.c)?;
    let level = match opts.f_level {
        FLevel::Mid => pack.grid().mid_level(),
        FLevel::Initial => 0,
    };
    let fl = f.level(level);
    let bracket = &(&pack.u0.laplacian() + &kernel.apply_space(&pack.m0)) + &(&fl * &pack.m0);
    let sum = u01 + u02;
    let mut cross = SpaceField::zeros(pack.grid());
    for a in 0..pack.grid().dim() {
        cross = &cross + &(&pack.u0.grad(a) * &sum.grad(a));
    }
    let num = &(&bracket * 2.0) - &(k2 * &cross);
    Ok(num.zip_map(&g2, |n, d| n / d))
}

/// Which form of the reconstruction formula to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reconstruction {
    /// `k̃ = 2|∇u₀,₁|⁻² v(·, T/2) + F`.
    Snapshot,
    /// `k̃ = 2|∇u₀,₁|⁻² [v(·, t) − ∫_{T/2}^t w dτ] + F` at the given `t`.
    Shifted(f64),
}

pub fn reconstruct_k_tilde(
    pack: &DifferencePack,
    u01: &SpaceField,
    big_f: &SpaceField,
    mode: Reconstruction,
    c: f64,
) -> Result<SpaceField> {
    let g2 = guarded_grad_sq(u01, c)?;
    let grid = pack.grid();
    let vt = match mode {
        Reconstruction::Snapshot => pack.v.level(grid.mid_level()),
        Reconstruction::Shifted(t) => {
            let j = grid.time_level(t)?;
            &pack.v.level(j) - &pack.w.integral_from_mid().level(j)
        }
    };
    Ok(&(&vt * 2.0).zip_map(&g2, |n, d| n / d) + big_f)
}

/// Largest pairwise `L₂(Ω)` difference of the shifted reconstruction over
/// `times`.
pub fn shifted_spread(
    pack: &DifferencePack,
    u01: &SpaceField,
    big_f: &SpaceField,
    times: &[f64],
    c: f64,
) -> Result<f64> {
    let recs = times
        .iter()
        .map(|&t| reconstruct_k_tilde(pack, u01, big_f, Reconstruction::Shifted(t), c))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0_f64;
    for i in 0..recs.len() {
        for j in i + 1..recs.len() {
            worst = worst.max((&recs[i] - &recs[j]).l2());
        }
    }
    Ok(worst)
}

/// The derived equations satisfied by a difference pack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Derived {
    /// HJB difference.
    #[serde(rename = "hjb")]
    Hjb,
    /// Fokker–Planck difference.
    #[serde(rename = "fp")]
    Fp,
    /// HJB difference differentiated once in `t`, in terms of `v`, `q`.
    #[serde(rename = "hjb-t")]
    HjbT,
    #[serde(rename = "fp-t")]
    FpT,
    /// Differentiated twice, in terms of `w`, `r`.
    #[serde(rename = "hjb-tt")]
    HjbTt,
    #[serde(rename = "fp-tt")]
    FpTt,
}

impl Derived {
    pub const ALL: [Derived; 6] = [Derived::Hjb, Derived::Fp, Derived::HjbT, Derived::FpT, Derived::HjbTt, Derived::FpTt];

    pub fn label(self) -> &'static str {
        match self {
            Derived::Hjb => "hjb",
            Derived::Fp => "fp",
            Derived::HjbT => "hjb-t",
            Derived::FpT => "fp-t",
            Derived::HjbTt => "hjb-tt",
            Derived::FpTt => "fp-tt",
        }
    }
}

impl fmt::Display for Derived {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Derived {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Derived::ALL
            .into_iter()
            .find(|d| d.label() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown derived equation `{s}`")))
    }
}

/// Everything about the two triples that the derived equations use.
struct Pair<'a> {
    pack: &'a DifferencePack,
    kernel: &'a Kernel,
    f: &'a Field,
    u1: &'a Field,
    u2: &'a Field,
    m1: &'a Field,
    m2: &'a Field,
    k2: Field,
    kt: Field,
}

impl<'a> Pair<'a> {
    fn new(pack: &'a DifferencePack, t1: &'a MFGTriple, t2: &'a MFGTriple, spec: &'a ProblemSpec) -> Result<Self> {
        let g = pack.grid();
        if !g.same_as(t1.grid()) || !g.same_as(t2.grid()) || !g.same_as(spec.grid()) {
            return Err(Error::GridMismatch);
        }
        Ok(Pair {
            pack,
            kernel: &spec.kernel,
            f: &spec.f,
            u1: &t1.u,
            u2: &t2.u,
            m1: &t1.m,
            m2: &t2.m,
            k2: t2.k.to_field(),
            kt: pack.k.to_field(),
        })
    }

    /// `ũ = ∫_{T/2}^t v + ũ₀`.
    fn u_int(&self) -> Field {
        &self.pack.v.integral_from_mid() + &self.pack.u0.to_field()
    }

    fn m_int(&self) -> Field {
        &self.pack.q.integral_from_mid() + &self.pack.m0.to_field()
    }
}

/// `Σ div(a ∇b)` over the given pairs, in product-rule form `∇a·∇b + aΔb`.
fn div_sum(pairs: &[(Field, &Field)]) -> Field {
    let grid = pairs[0].0.grid();
    let mut out = Field::zeros(grid);
    for (a, b) in pairs {
        out = &out + &(&Field::grad_dot(&a.gradient(), &b.gradient()) + &(a * &b.laplacian()));
    }
    out
}

fn dot(a: &Field, b: &Field) -> Field {
    Field::grad_dot(&a.gradient(), &b.gradient())
}

fn derived_field(p: &Pair, which: Derived) -> Field {
    let pk = p.pack;
    let (u1, u2, m1, m2) = (p.u1, p.u2, p.m1, p.m2);
    let (k2, kt) = (&p.k2, &p.kt);
    let half = 0.5;
    match which {
        Derived::Hjb => {
            let s = u1 + u2;
            let lhs = &(&(&pk.u.dt() + &pk.u.laplacian()) + &p.kernel.apply(&pk.m)) + &(p.f * &pk.m);
            let lin = &(k2 * &dot(&pk.u, &s)) * half;
            &(&lhs - &lin) - &(&(kt * &u1.grad_sq()) * half)
        }
        Derived::Fp => {
            let div = div_sum(&[(k2 * &pk.m, u1), (k2 * m2, &pk.u), (kt * m1, u1)]);
            &(&pk.m.dt() - &pk.m.laplacian()) - &div
        }
        Derived::HjbT => {
            let (uint, mint) = (p.u_int(), p.m_int());
            let (u1t, u2t) = (u1.dt(), u2.dt());
            let head = &(&(&pk.v.dt() + &pk.v.laplacian()) + &p.kernel.apply(&pk.q)) + &(p.f * &pk.q);
            let src = &head + &(&p.f.dt() * &mint);
            let a = &(k2 * &dot(&pk.v, &(u1 + u2))) * half;
            let b = &(k2 * &dot(&uint, &(&u1t + &u2t))) * half;
            let c = kt * &dot(u1, &u1t);
            &(&(&src - &a) - &b) - &c
        }
        Derived::FpT => {
            let (uint, mint) = (p.u_int(), p.m_int());
            let (u1t, m1t, m2t) = (u1.dt(), m1.dt(), m2.dt());
            let div = div_sum(&[
                (k2 * &pk.q, u1),
                (k2 * &mint, &u1t),
                (k2 * &m2t, &uint),
                (k2 * m2, &pk.v),
                (kt * &m1t, u1),
                (kt * m1, &u1t),
            ]);
            &(&pk.q.dt() - &pk.q.laplacian()) - &div
        }
        Derived::HjbTt => {
            let (uint, mint) = (p.u_int(), p.m_int());
            let (u1t, u2t, u1tt, u2tt) = (u1.dt(), u2.dt(), u1.dtt(), u2.dtt());
            let (ft, ftt) = (p.f.dt(), p.f.dtt());
            let head = &(&(&pk.w.dt() + &pk.w.laplacian()) + &p.kernel.apply(&pk.r)) + &(p.f * &pk.r);
            let src = &(&head + &(&(&ft * &pk.q) * 2.0)) + &(&ftt * &mint);
            let a = &(k2 * &dot(&pk.w, &(u1 + u2))) * half;
            let b = k2 * &dot(&pk.v, &(&u1t + &u2t));
            let c = &(k2 * &dot(&uint, &(&u1tt + &u2tt))) * half;
            let d = kt * &(&u1t.grad_sq() + &dot(u1, &u1tt));
            &(&(&(&src - &a) - &b) - &c) - &d
        }
        Derived::FpTt => {
            let (uint, mint) = (p.u_int(), p.m_int());
            let (u1t, u1tt) = (u1.dt(), u1.dtt());
            let (m1t, m1tt, m2t, m2tt) = (m1.dt(), m1.dtt(), m2.dt(), m2.dtt());
            let div = div_sum(&[
                (k2 * &pk.r, u1),
                (&(k2 * &pk.q) * 2.0, &u1t),
                (k2 * &mint, &u1tt),
                (k2 * &m2tt, &uint),
                (&(k2 * &m2t) * 2.0, &pk.v),
                (k2 * m2, &pk.w),
                (kt * &m1tt, u1),
                (&(kt * &m1t) * 2.0, &u1t),
                (kt * m1, &u1tt),
            ]);
            &(&pk.r.dt() - &pk.r.laplacian()) - &div
        }
    }
}

/// `L₂` and max norms of the residual of a derived equation over the
/// interior nodes of `Q_{ε,T}`. The end caps are left out: the second
/// solution only matches the first one's corner compatibility to first
/// order, so its higher time derivatives are singular at `t = 0` and `t = T`.
///
/// `t1`, `t2` are the triples the pack was formed from and `spec` supplies
/// the shared `f` and kernel. Terms in `ũ`, `m̃` inside the differentiated
/// equations are rebuilt from `∫_{T/2}^t v + ũ₀` and `∫_{T/2}^t q + m̃₀`.
pub fn residual_derived_system(
    pack: &DifferencePack,
    t1: &MFGTriple,
    t2: &MFGTriple,
    spec: &ProblemSpec,
    which: Derived,
) -> Result<(f64, f64)> {
    let pair = Pair::new(pack, t1, t2, spec)?;
    truncated_norms(&derived_field(&pair, which), pack.eps)
}

/// Whether a node lies strictly inside `Ω` and in the time levels of
/// `Q_{ε,T}`; `first` is the snapped level of `ε`.
fn live(g: &Grid, first: usize, idx: &[usize]) -> bool {
    idx[0] >= first.max(1) && idx[0] + first.max(1) < g.nt() && !g.is_boundary_node(&idx[1..])
}

/// `L₂` and max norms over the interior nodes of `Q_{ε,T}`.
fn truncated_norms(field: &Field, eps: f64) -> Result<(f64, f64)> {
    let g = field.grid();
    let (first, _) = g.snap_epsilon(eps)?;
    let mut data = field.data().clone();
    for (idx, v) in data.indexed_iter_mut() {
        if !live(g, first, ndarray::Dimension::slice(&idx)) {
            *v = 0.0;
        }
    }
    let max = data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let l2 = crate::stencil::integrate(data.mapv(|v| v * v).view(), &g.field_spacings()).sqrt();
    Ok((l2, max))
}

/// The differential inequalities bounding the principal parts of the
/// derived equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Inequality {
    #[serde(rename = "v")]
    V,
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "w")]
    W,
    #[serde(rename = "r")]
    R,
}

impl Inequality {
    pub const ALL: [Inequality; 4] = [Inequality::V, Inequality::Q, Inequality::W, Inequality::R];

    pub fn label(self) -> &'static str {
        match self {
            Inequality::V => "v",
            Inequality::Q => "q",
            Inequality::W => "w",
            Inequality::R => "r",
        }
    }
}

impl FromStr for Inequality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Inequality::ALL
            .into_iter()
            .find(|d| d.label() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown inequality `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityReport {
    pub which: Inequality,
    pub c_candidate: f64,
    /// `max (LHS − C δ̄)₊ / bracket` over interior nodes with a live bracket.
    pub c_empirical: f64,
    /// `max LHS / (bracket + δ̄)`, independent of the candidate.
    pub c_ratio: f64,
    /// Fraction of `Q_T` (by quadrature) where the bracket is below threshold.
    pub dead_measure: f64,
    /// Largest LHS on the dead set.
    pub dead_lhs_max: f64,
    pub pass: bool,
}

fn absf(f: &Field) -> Field {
    f.abs()
}

/// `|∫_{T/2}^t g dτ|`.
fn cum(g: &Field) -> Field {
    g.integral_from_mid().abs()
}

fn grad_abs(f: &Field) -> Field {
    f.grad_sq().map(f64::sqrt)
}

fn sum_fields(parts: &[Field]) -> Field {
    let mut out = Field::zeros(parts[0].grid());
    for p in parts {
        out = &out + p;
    }
    out
}

/// LHS, bracket and data slack `δ̄` of one inequality.
fn inequality_parts(p: &Pair, big_f: &SpaceField, which: Inequality) -> Result<(Field, Field, Field)> {
    let pk = p.pack;
    let (u1, u2, m1, m2, k2) = (p.u1, p.u2, p.m1, p.m2, &p.k2);
    let ff = big_f.to_field();
    let u0 = pk.u0.to_field();
    let m0 = pk.m0.to_field();
    let (v, q, w, r) = (&pk.v, &pk.q, &pk.w, &pk.r);
    let (gv, gq, gw, gr) = (grad_abs(v), grad_abs(q), grad_abs(w), grad_abs(r));
    let (av, aq, aw, ar) = (absf(v), absf(q), absf(w), absf(r));
    Ok(match which {
        Inequality::V => {
            let lhs = (&v.dt() + &v.laplacian()).abs();
            let bracket = sum_fields(&[gv.clone(), av, cum(&gv), cum(&aw), cum(&aq), apply_g(p.kernel, q)?, aq]);
            let u1t = u1.dt();
            let slack = sum_fields(&[
                (&ff * &dot(u1, &u1t)).abs(),
                (&p.f.dt() * &m0).abs(),
                (&(k2 * &dot(&u0, &(&u1t + &u2.dt()))) * 0.5).abs(),
            ]);
            (lhs, bracket, slack)
        }
        Inequality::Q => {
            let lhs = (&q.dt() - &q.laplacian()).abs();
            let lv = v.laplacian().abs();
            let bracket = sum_fields(&[
                &gq + &aq,
                cum(&(&gq + &aq)),
                &lv + &gv,
                cum(&(&lv + &gv)),
                cum(&(&gw + &aw)),
            ]);
            let (u1t, m1t) = (u1.dt(), m1.dt());
            let slack = sum_fields(&[
                div_sum(&[(k2 * &m0, &u1t)]).abs(),
                div_sum(&[(k2 * &m2.dt(), &u0)]).abs(),
                div_sum(&[(&ff * &m1t, u1), (&ff * m1, &u1t)]).abs(),
            ]);
            (lhs, bracket, slack)
        }
        Inequality::W => {
            let lhs = (&w.dt() + &w.laplacian()).abs();
            let bracket = sum_fields(&[
                &gw + &aw,
                cum(&aw),
                &gv + &av,
                cum(&gv),
                ar,
                aq.clone(),
                cum(&aq),
                apply_g(p.kernel, r)?,
            ]);
            let (u1t, u1tt) = (u1.dt(), u1.dtt());
            let slack = sum_fields(&[
                (&p.f.dtt() * &m0).abs(),
                (&(k2 * &dot(&u0, &(&u1tt + &u2.dtt()))) * 0.5).abs(),
                (&ff * &(&u1t.grad_sq() + &dot(u1, &u1tt))).abs(),
            ]);
            (lhs, bracket, slack)
        }
        Inequality::R => {
            let lhs = (&r.dt() - &r.laplacian()).abs();
            let (lv, lw) = (v.laplacian().abs(), w.laplacian().abs());
            let bracket = sum_fields(&[
                gr,
                ar,
                gq,
                aq,
                lv.clone(),
                gv.clone(),
                av.clone(),
                lw,
                gw.clone(),
                aw.clone(),
                cum(&sum_fields(&[lv, gv, av])),
                cum(&(&gw + &aw)),
            ]);
            let (u1t, u1tt, m1t, m1tt) = (u1.dt(), u1.dtt(), m1.dt(), m1.dtt());
            let slack = sum_fields(&[
                div_sum(&[(k2 * &m0, &u1tt)]).abs(),
                div_sum(&[(k2 * &m2.dtt(), &u0)]).abs(),
                div_sum(&[(&ff * &m1tt, u1), (&(&ff * &m1t) * 2.0, &u1t), (&ff * m1, &u1tt)]).abs(),
            ]);
            (lhs, bracket, slack)
        }
    })
}

/// Measures the constant of one differential inequality on the interior
/// nodes of `Q_{ε,T}`.
/// `big_f` is the field `F` of the reconstruction formula; the terms built
/// from it and from the snapshots `ũ₀`, `m̃₀` form the data slack `δ̄`.
pub fn check_inequality(
    pack: &DifferencePack,
    t1: &MFGTriple,
    t2: &MFGTriple,
    spec: &ProblemSpec,
    big_f: &SpaceField,
    which: Inequality,
    c_candidate: f64,
) -> Result<InequalityReport> {
    let pair = Pair::new(pack, t1, t2, spec)?;
    let (lhs, bracket, slack) = inequality_parts(&pair, big_f, which)?;
    let g = pack.grid();
    let (first, _) = g.snap_epsilon(pack.eps)?;
    let thr = BRACKET_THRESHOLD * bracket.max_abs().max(1.0);
    let (mut c_emp, mut c_ratio, mut dead_lhs) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut dead = Field::zeros(g).into_data();
    for (((idx, &l), &b), &s) in lhs.data().indexed_iter().zip(bracket.data().iter()).zip(slack.data().iter()) {
        let idx = ndarray::Dimension::slice(&idx);
        if !live(g, first, idx) {
            continue;
        }
        if b > thr {
            c_emp = c_emp.max((l - c_candidate * s).max(0.0) / b);
        } else {
            dead[idx] = 1.0;
            dead_lhs = dead_lhs.max(l);
        }
        if b + s > thr {
            c_ratio = c_ratio.max(l / (b + s));
        }
    }
    let vol = g.prism().measure() * g.prism().t_final;
    let dead_measure = crate::stencil::integrate(dead.view(), &g.field_spacings()) / vol;
    Ok(InequalityReport {
        which,
        c_candidate,
        c_empirical: c_emp,
        c_ratio,
        dead_measure,
        dead_lhs_max: dead_lhs,
        pass: c_emp <= c_candidate && dead_lhs <= thr,
    })
}

/// Parameters of the final stability estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub rho: f64,
    pub eps: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub a: f64,
    pub b: f64,
    pub lambda1: f64,
    pub s: f64,
    pub beta: f64,
    pub alpha: f64,
    pub d: f64,
    pub delta0: f64,
}

/// `((T/2)(1 − √ρ), T/2)`.
pub fn epsilon_window(rho: f64, t_final: f64) -> (f64, f64) {
    (0.5 * t_final * (1.0 - rho.sqrt()), 0.5 * t_final)
}

/// `ρ − (1 − ρ) s` with `s = (T/2 − ε)² / (ε(T − ε))`.
pub fn feasibility(rho: f64, eps: f64, t_final: f64) -> f64 {
    let s = (0.5 * t_final - eps).powi(2) / (eps * (t_final - eps));
    rho - (1.0 - rho) * s
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1)")));
    }
    Ok(())
}

pub fn select_parameters(rho: f64, eps: f64, prism: &Prism, lambda1: f64) -> Result<StabilityParams> {
    check_rho(rho)?;
    if !(lambda1 >= 1.0 && lambda1.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda1 = {lambda1} must be at least 1")));
    }
    let t = prism.t_final;
    let (lower, upper) = epsilon_window(rho, t);
    if !(eps > lower && eps < upper) {
        return Err(Error::EpsilonWindow { eps, rho, lower, upper });
    }
    let b = prism.b;
    let s = (0.5 * t - eps).powi(2) / (eps * (t - eps));
    let beta = (1.0 - rho) * (1.5 + s) / (rho - (1.0 - rho) * s);
    let alpha = (1.0 + beta) * b * b / (eps * (t - eps));
    let d = (1.5 + (1.0 + beta) * s) * b * b;
    let delta0 = (-lambda1 * d / rho).exp();
    Ok(StabilityParams { rho, eps, t_final: t, a: prism.a, b, lambda1, s, beta, alpha, d, delta0 })
}

impl StabilityParams {
    /// `λ(δ) = (ρ/d) ln(1/δ)`.
    pub fn lambda_of_delta(&self, delta: f64) -> f64 {
        self.rho / self.d * (1.0 / delta).ln()
    }

    /// `max(λ(δ), λ₁)`.
    pub fn lambda_used(&self, delta: f64) -> f64 {
        self.lambda_of_delta(delta).max(self.lambda1)
    }

    /// Exponent `ρβb²/d`, at least `1 − ρ` by the choice of `β`.
    pub fn decay_ratio(&self) -> f64 {
        self.rho * self.beta * self.b * self.b / self.d
    }
}

/// The same quantities in exact rational arithmetic. `δ₀ = exp(−delta0_exponent)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactParams {
    pub s: BigRational,
    pub beta: BigRational,
    pub alpha: BigRational,
    pub d: BigRational,
    pub delta0_exponent: BigRational,
}

/// Parses a decimal (`0.2`, `-1.5e-3`) or a fraction (`33/7`) exactly.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let bad = || Error::InvalidParameter(format!("`{text}` is not a decimal or fraction"));
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(n, d));
    }
    let (mant, exp) = match text.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().map_err(|_| bad())?),
        None => (text, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() || !(int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())) {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}0").parse().map_err(|_| bad())?;
    let ten = BigInt::from(10);
    let shift = exp - frac.len() as i32 - 1;
    let mut r = BigRational::from_integer(digits);
    let p = BigRational::from_integer(num_traits::pow(ten, shift.unsigned_abs() as usize));
    r = if shift >= 0 { r * p } else { r / p };
    Ok(if neg { -r } else { r })
}

pub fn select_parameters_exact(
    rho: &BigRational,
    eps: &BigRational,
    t_final: &BigRational,
    b: &BigRational,
    lambda1: &BigRational,
) -> Result<ExactParams> {
    let one = BigRational::one();
    let two = BigRational::from_integer(2.into());
    let three_halves = BigRational::new(3.into(), 2.into());
    if !(rho.is_positive() && *rho < one) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1)")));
    }
    let half_t = t_final / &two;
    let s = (&half_t - eps).pow(2) / (eps * (t_final - eps));
    let margin = rho - (&one - rho) * &s;
    if !(eps.is_positive() && *eps < half_t && margin.is_positive()) {
        let rf = rho.to_f64().unwrap_or(f64::NAN);
        let (lower, upper) = epsilon_window(rf, t_final.to_f64().unwrap_or(f64::NAN));
        return Err(Error::EpsilonWindow { eps: eps.to_f64().unwrap_or(f64::NAN), rho: rf, lower, upper });
    }
    let beta = (&one - rho) * (&three_halves + &s) / &margin;
    let b2 = b * b;
    let alpha = (&one + &beta) * &b2 / (eps * (t_final - eps));
    let d = (&three_halves + (&one + &beta) * &s) * &b2;
    let delta0_exponent = lambda1 * &d / rho;
    Ok(ExactParams { s, beta, alpha, d, delta0_exponent })
}

/// Both sides of the final estimate in log form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FinalEstimate {
    pub lambda: f64,
    /// `ln ‖V‖²_{H^{2,1}(Q_{ε,T})}` (−∞ for a zero pack).
    pub log_lhs: f64,
    /// `−2λ(αε(T − ε) − b²)`.
    pub exponent_decay: f64,
    /// `2λ(3b²/2 + α(T/2 − ε)²)`.
    pub exponent_data: f64,
    /// `ln` of the right-hand side.
    pub log_rhs: f64,
    /// `log_rhs − log_lhs`.
    pub margin: f64,
    pub holds: bool,
}

fn log_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

pub fn assemble_final_estimate(norms: &VNorms, params: &StabilityParams, delta: f64, c: f64) -> Result<FinalEstimate> {
    if !(delta > 0.0) || !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} and C = {c} must be positive")));
    }
    let p = params;
    let lambda = p.lambda_used(delta);
    let exponent_decay = -2.0 * lambda * (p.alpha * p.eps * (p.t_final - p.eps) - p.b * p.b);
    let exponent_data = 2.0 * lambda * (1.5 * p.b * p.b + p.alpha * (0.5 * p.t_final - p.eps).powi(2));
    let first = c.ln() + exponent_decay + norms.h2_sq.ln();
    let second = c.ln() + 2.0 * delta.ln() + exponent_data;
    let log_rhs = log_add(first, second);
    let log_lhs = norms.h21_truncated_sq.ln();
    if !log_rhs.is_finite() && log_rhs != f64::NEG_INFINITY {
        return Err(Error::NumericRange(format!("final estimate right-hand side at lambda = {lambda}")));
    }
    let margin = log_rhs - log_lhs;
    Ok(FinalEstimate { lambda, log_lhs, exponent_decay, exponent_data, log_rhs, margin, holds: log_lhs <= log_rhs })
}

/// `n` points geometric in `[lo, hi]`.
pub fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scales: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default)]
    pub completeness: Completeness,
    #[serde(default)]
    pub picard: PicardOptions,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub reconstruct: ReconstructOptions,
}

fn one() -> f64 {
    1.0
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            scales: geometric(1e-4, 1e-1, 6),
            rho: 0.5,
            eps: 0.2,
            lambda1: 1.0,
            completeness: Completeness::Full,
            picard: PicardOptions::default(),
            noise: None,
            reconstruct: ReconstructOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scale: f64,
    pub delta: f64,
    /// `‖k₁ − k₂‖_{L₂(Ω)}`.
    pub err_k: f64,
    pub err_u: [f64; 3],
    pub err_m: [f64; 3],
    /// `‖k̃_rec − (k₁ − k₂)‖_{L₂(Ω)}` for the snapshot reconstruction.
    pub err_k_reconstructed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcludedPoint {
    pub scale: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepFits {
    /// `ln ‖k̃‖` against `ln δ`.
    pub k: LineFit,
    pub u: [Option<LineFit>; 3],
    pub m: [Option<LineFit>; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub params: StabilityParams,
    pub points: Vec<SweepPoint>,
    pub excluded: Vec<ExcludedPoint>,
    pub fits: Option<SweepFits>,
    /// `min/max` of the retained `δ` as decades spanned.
    pub delta_decades: f64,
}

impl SweepReport {
    pub fn slope(&self) -> Option<f64> {
        self.fits.as_ref().map(|f| f.k.slope)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scale",
            "delta",
            "err_k",
            "err_u_s0",
            "err_u_s1",
            "err_u_s2",
            "err_m_s0",
            "err_m_s1",
            "err_m_s2",
            "err_k_reconstructed",
        ])?;
        for p in &self.points {
            let mut row = vec![p.scale, p.delta, p.err_k];
            row.extend(p.err_u);
            row.extend(p.err_m);
            row.push(p.err_k_reconstructed);
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `sweep.csv`, `fit.json` and `params.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), self.to_csv()?)?;
        let fit = serde_json::json!({
            "slope": self.fits.as_ref().map(|f| f.k.slope),
            "intercept": self.fits.as_ref().map(|f| f.k.intercept),
            "r2": self.fits.as_ref().map(|f| f.k.r2),
            "delta_decades": self.delta_decades,
            "fits": self.fits,
            "excluded": self.excluded,
        });
        std::fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&fit)?)?;
        std::fs::write(dir.join("params.json"), serde_json::to_string_pretty(&self.params)?)?;
        Ok(())
    }
}

/// Measures one pair: data distance, coefficient and state errors.
pub fn sweep_point(
    spec: &ProblemSpec,
    base: &MFGTriple,
    other: &MFGTriple,
    scale: f64,
    cfg: &SweepConfig,
) -> Result<SweepPoint> {
    let d1 = extract(base, cfg.completeness);
    let mut d2 = extract(other, cfg.completeness);
    if let Some(noise) = &cfg.noise {
        d2 = inject_noise(&d2, noise)?;
    }
    let delta = measure_delta(&d1, &d2, cfg.completeness)?;
    let pack = form_difference(base, other, cfg.eps)?;
    let (err_u, err_m) = pack.truncated_errors()?;
    let mid = base.grid().mid_level();
    let (u01, u02) = (base.u.level(mid), other.u.level(mid));
    let big_f = compute_f(&pack, &u01, &u02, &other.k, &spec.kernel, &spec.f, cfg.reconstruct)?;
    let rec = reconstruct_k_tilde(&pack, &u01, &big_f, Reconstruction::Snapshot, cfg.reconstruct.c)?;
    Ok(SweepPoint {
        scale,
        delta,
        err_k: pack.k.l2(),
        err_u,
        err_m,
        err_k_reconstructed: (&rec - &pack.k).l2(),
    })
}

/// Solves for `k₁` and every `k₂ = k₁ + scale·Δk` with the shared `spec`,
/// measures each pair and fits the errors against `δ` in log-log scale.
/// Scales run concurrently; points with `δ = 0` or a failed solve are
/// excluded and listed.
pub fn holder_sweep(spec: &ProblemSpec, k1: &SpaceField, dk: &SpaceField, cfg: &SweepConfig) -> Result<SweepReport> {
    let params = select_parameters(cfg.rho, cfg.eps, spec.grid().prism(), cfg.lambda1)?;
    let base = solve_mfg_picard(spec, k1, &cfg.picard)?;
    let results = par::map_range(cfg.scales.len(), |i| {
        let scale = cfg.scales[i];
        let k2 = k1 + &(dk * scale);
        solve_mfg_picard(spec, &k2, &cfg.picard).and_then(|t2| sweep_point(spec, &base, &t2, scale, cfg))
    });
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (res, &scale) in results.into_iter().zip(&cfg.scales) {
        match res {
            Ok(p) if p.delta > 0.0 && p.err_k > 0.0 => points.push(p),
            Ok(_) => excluded.push(ExcludedPoint { scale, reason: "zero data distance".into() }),
            Err(e) => excluded.push(ExcludedPoint { scale, reason: e.to_string() }),
        }
    }
    let deltas: Vec<f64> = points.iter().map(|p| p.delta).collect();
    let fit_of = |ys: Vec<f64>| loglog_fit(&deltas, &ys).ok();
    let fits = if points.len() >= 2 {
        fit_of(points.iter().map(|p| p.err_k).collect()).map(|k| SweepFits {
            k,
            u: [0, 1, 2].map(|s| fit_of(points.iter().map(|p| p.err_u[s]).collect())),
            m: [0, 1, 2].map(|s| fit_of(points.iter().map(|p| p.err_m[s]).collect())),
        })
    } else {
        None
    };
    let delta_decades = match (deltas.iter().cloned().reduce(f64::min), deltas.iter().cloned().reduce(f64::max)) {
        (Some(lo), Some(hi)) => (hi / lo).log10(),
        _ => 0.0,
    };
    Ok(SweepReport { config: cfg.clone(), params, points, excluded, fits, delta_decades })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(q("0.2"), BigRational::new(1.into(), 5.into()));
        assert_eq!(q("-1.5e-3"), BigRational::new((-3).into(), 2000.into()));
        assert_eq!(q("33/7"), BigRational::new(33.into(), 7.into()));
        assert_eq!(q("2"), BigRational::from_integer(2.into()));
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn geometric_endpoints() {
        let g = geometric(1e-4, 1e-1, 6);
        assert_eq!(g.len(), 6);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[5] - 1e-1).abs() < 1e-15);
    }

    #[test]
    fn log_add_handles_infinities() {
        assert_eq!(log_add(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
