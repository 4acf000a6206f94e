//! Forward solvers for the mean field games system
//!
//! ```text
//! u_t + Δu − k|∇u|²/2 + K[m] + f m = 0     (HJB, marched backward from t = T)
//! m_t − Δm − div(k m ∇u) = 0               (Fokker–Planck, marched forward)
//! ```
//!
//! with Dirichlet data on `∂Ω`, a terminal condition for `u` and an initial
//! condition for `m`. The implicit path solves one tridiagonal system per
//! grid line and axis (Lie splitting when `n > 1`); the explicit path is kept
//! for cross-checks and refuses steps that violate its stability bound.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{ArrayD, ArrayView1, ArrayViewD, ArrayViewMut1, Axis, IxDyn, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Region, SpaceField};
use crate::kernels::Kernel;
use crate::stencil;

/// Magnitude above which a marching solver reports blow-up.
pub const BLOWUP: f64 = 1e12;

/// Default lower bound on `m` when dividing by it to manufacture `f`.
pub const DEFAULT_M_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Implicit,
    Explicit,
}

/// Data of a forward problem. Dirichlet data are read from the boundary
/// nodes of `u_dirichlet` and `m_dirichlet`; their interior values are
/// ignored.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub kernel: Kernel,
    pub f: Field,
    pub u_dirichlet: Field,
    pub m_dirichlet: Field,
    pub u_terminal: SpaceField,
    pub m_initial: SpaceField,
}

impl ProblemSpec {
    pub fn new(
        kernel: Kernel,
        f: Field,
        u_dirichlet: Field,
        m_dirichlet: Field,
        u_terminal: SpaceField,
        m_initial: SpaceField,
    ) -> Result<Self> {
        let g = f.grid();
        for other in [u_dirichlet.grid(), m_dirichlet.grid(), u_terminal.grid(), m_initial.grid()] {
            if !g.same_as(other) {
                return Err(Error::GridMismatch);
            }
        }
        for (name, ok) in [
            ("f", f.is_finite()),
            ("u boundary data", u_dirichlet.is_finite()),
            ("m boundary data", m_dirichlet.is_finite()),
            ("terminal data", u_terminal.data().iter().all(|v| v.is_finite())),
            ("initial data", m_initial.data().iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(name.into()));
            }
        }
        let (node, min) = m_initial.argmin();
        if min <= 0.0 {
            return Err(Error::NonPositiveDensity { min, node });
        }
        Ok(ProblemSpec { kernel, f, u_dirichlet, m_dirichlet, u_terminal, m_initial })
    }

    /// Takes boundary, terminal and initial data from given fields `u`, `m`.
    pub fn from_fields(kernel: Kernel, f: Field, u: &Field, m: &Field) -> Result<Self> {
        let nt = u.grid().nt();
        Self::new(kernel, f, u.clone(), m.clone(), u.level(nt - 1), m.level(0))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.f.grid()
    }

    /// `N = max_k ‖∂_t^k f‖_∞` for `k = 0, 1, 2`.
    pub fn f_bound(&self) -> f64 {
        self.f.max_abs().max(self.f.dt().max_abs()).max(self.f.dtt().max_abs())
    }

    pub fn with_f(&self, f: Field) -> Self {
        ProblemSpec { f, ..self.clone() }
    }

    pub fn with_kernel(&self, kernel: Kernel) -> Self {
        ProblemSpec { kernel, ..self.clone() }
    }
}

fn set_boundary(arr: &mut ArrayD<f64>, bnd: ArrayViewD<f64>) {
    for a in 0..arr.ndim() {
        let n = arr.len_of(Axis(a));
        for i in [0, n - 1] {
            arr.index_axis_mut(Axis(a), i).assign(&bnd.index_axis(Axis(a), i));
        }
    }
}

fn check_level(solver: &'static str, level: usize, a: &ArrayD<f64>) -> Result<()> {
    let mut worst = 0.0_f64;
    for &v in a.iter() {
        if !v.is_finite() {
            return Err(Error::Instability { solver, level, magnitude: f64::INFINITY });
        }
        worst = worst.max(v.abs());
    }
    if worst > BLOWUP {
        return Err(Error::Instability { solver, level, magnitude: worst });
    }
    Ok(())
}

/// Solves the interior of a tridiagonal line system with Dirichlet ends.
/// `coef(i)` returns `(lower, diag, upper, rhs)` for interior node `i`.
fn solve_line(mut line: ArrayViewMut1<f64>, coef: impl Fn(usize) -> (f64, f64, f64, f64)) {
    let n = line.len();
    let ni = n - 2;
    let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; ni], vec![0.0; ni], vec![0.0; ni], vec![0.0; ni]);
    for r in 0..ni {
        let i = r + 1;
        let (l, d, u, b) = coef(i);
        lo[r] = l;
        di[r] = d;
        up[r] = u;
        rhs[r] = b;
    }
    rhs[0] -= lo[0] * line[0];
    rhs[ni - 1] -= up[ni - 1] * line[n - 1];
    stencil::thomas(&lo, &di, &up, &mut rhs);
    for r in 0..ni {
        line[r + 1] = rhs[r];
    }
}

/// Face drift `k_{i+1/2} (u_{i+1} − u_i)/h`.
fn face_drift(u: &ArrayView1<f64>, k: &ArrayView1<f64>, i: usize, h: f64) -> f64 {
    0.5 * (k[i] + k[i + 1]) * (u[i + 1] - u[i]) / h
}

/// Conservative discretization of `∂_a(∂_a m + k m ∂_a u)` on one line.
fn fp_line_operator(m: &ArrayView1<f64>, u: &ArrayView1<f64>, k: &ArrayView1<f64>, h: f64, out: &mut ArrayViewMut1<f64>) {
    let n = m.len();
    for i in 1..n - 1 {
        let kp = face_drift(u, k, i, h);
        let km = face_drift(u, k, i - 1, h);
        out[i] += (m[i + 1] - 2.0 * m[i] + m[i - 1]) / (h * h)
            + (kp * (m[i] + m[i + 1]) - km * (m[i - 1] + m[i])) / (2.0 * h);
    }
}

fn fp_implicit_step(g: &Grid, cur: ArrayD<f64>, un: ArrayViewD<f64>, kd: &ArrayD<f64>, bnd: ArrayViewD<f64>) -> ArrayD<f64> {
    let tau = g.tau();
    let mut m = cur;
    for a in 0..g.dim() {
        set_boundary(&mut m, bnd.view());
        let h = g.h()[a];
        Zip::from(m.lanes_mut(Axis(a))).and(un.lanes(Axis(a))).and(kd.lanes(Axis(a))).for_each(|line, ul, kl| {
            let old = line.to_owned();
            solve_line(line, |i| {
                let kp = face_drift(&ul, &kl, i, h);
                let km = face_drift(&ul, &kl, i - 1, h);
                (
                    -1.0 / (h * h) + km / (2.0 * h),
                    1.0 / tau + 2.0 / (h * h) - (kp - km) / (2.0 * h),
                    -1.0 / (h * h) - kp / (2.0 * h),
                    old[i] / tau,
                )
            })
        });
    }
    set_boundary(&mut m, bnd.view());
    m
}

fn fp_explicit_step(
    g: &Grid,
    cur: &ArrayD<f64>,
    uj: &SpaceField,
    k: &SpaceField,
    bnd: ArrayViewD<f64>,
) -> Result<ArrayD<f64>> {
    let (tau, dim) = (g.tau(), g.dim());
    let drift = (0..dim).map(|a| (k * &uj.grad(a)).max_abs()).fold(0.0, f64::max);
    let hmin = g.h().iter().copied().fold(f64::INFINITY, f64::min);
    let limit = hmin * hmin / (2.0 * dim as f64 * (1.0 + drift * hmin));
    if tau > limit {
        return Err(Error::StabilityRestriction { solver: "fokker-planck", tau, limit });
    }
    let mut lm = ArrayD::zeros(cur.raw_dim());
    for a in 0..dim {
        let h = g.h()[a];
        Zip::from(lm.lanes_mut(Axis(a)))
            .and(cur.lanes(Axis(a)))
            .and(uj.data().lanes(Axis(a)))
            .and(k.data().lanes(Axis(a)))
            .for_each(|mut o, ml, ul, kl| fp_line_operator(&ml, &ul, &kl, h, &mut o));
    }
    let mut m = cur + &(lm * tau);
    set_boundary(&mut m, bnd.view());
    Ok(m)
}

/// Marches the Fokker–Planck equation from `m(·,0)` to `t = T` with the
/// drift of the given `u`.
pub fn solve_fokker_planck(spec: &ProblemSpec, k: &SpaceField, u: &Field, scheme: Scheme) -> Result<Field> {
    let g = spec.grid().clone();
    if !g.same_as(k.grid()) || !g.same_as(u.grid()) {
        return Err(Error::GridMismatch);
    }
    let nt = g.nt();
    let mut out = ArrayD::zeros(IxDyn(&g.field_shape()));
    let mut cur = spec.m_initial.data().clone();
    out.index_axis_mut(Axis(0), 0).assign(&cur);
    for j in 0..nt - 1 {
        let bnd = spec.m_dirichlet.data().index_axis(Axis(0), j + 1);
        let next = match scheme {
            Scheme::Implicit => fp_implicit_step(&g, cur, u.data().index_axis(Axis(0), j + 1), k.data(), bnd),
            Scheme::Explicit => fp_explicit_step(&g, &cur, &u.level(j), k, bnd)?,
        };
        check_level("fokker-planck", j + 1, &next)?;
        out.index_axis_mut(Axis(0), j + 1).assign(&next);
        cur = next;
    }
    Ok(Field::from_raw(&g, out))
}

/// Marches the HJB equation backward from `u(·,T)` with frozen `m`. The
/// quadratic gradient term is lagged to the previously computed level.
pub fn solve_hjb(spec: &ProblemSpec, k: &SpaceField, m: &Field, scheme: Scheme) -> Result<Field> {
    let g = spec.grid().clone();
    if !g.same_as(k.grid()) || !g.same_as(m.grid()) {
        return Err(Error::GridMismatch);
    }
    let (nt, tau, dim) = (g.nt(), g.tau(), g.dim());
    let source = &spec.kernel.apply(m) + &(&spec.f * m);
    if scheme == Scheme::Explicit {
        let hmin = g.h().iter().copied().fold(f64::INFINITY, f64::min);
        let limit = hmin * hmin / (2.0 * dim as f64);
        if tau > limit {
            return Err(Error::StabilityRestriction { solver: "hjb", tau, limit });
        }
    }
    let mut out = ArrayD::zeros(IxDyn(&g.field_shape()));
    let mut cur = spec.u_terminal.clone();
    out.index_axis_mut(Axis(0), nt - 1).assign(cur.data());
    for j in (0..nt - 1).rev() {
        let bnd = spec.u_dirichlet.data().index_axis(Axis(0), j);
        let hamiltonian = &(k * &cur.grad_sq()) * -0.5;
        let next = match scheme {
            Scheme::Implicit => {
                let src = source.level(j);
                let mut u = cur.data() + &((hamiltonian.data() + src.data()) * tau);
                for a in 0..dim {
                    set_boundary(&mut u, bnd.view());
                    let h = g.h()[a];
                    let r = tau / (h * h);
                    for line in u.lanes_mut(Axis(a)) {
                        let old = line.to_owned();
                        solve_line(line, |i| (-r, 1.0 + 2.0 * r, -r, old[i]));
                    }
                }
                set_boundary(&mut u, bnd.view());
                u
            }
            Scheme::Explicit => {
                let src = source.level(j + 1);
                let mut u = cur.data() + &((cur.laplacian().data() + hamiltonian.data() + src.data()) * tau);
                set_boundary(&mut u, bnd.view());
                u
            }
        };
        check_level("hjb", j, &next)?;
        out.index_axis_mut(Axis(0), j).assign(&next);
        cur = SpaceField::from_raw(&g, next);
    }
    Ok(Field::from_raw(&g, out))
}

/// Options of the damped fixed-point coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub theta: f64,
    pub max_iter: usize,
    pub tol: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { theta: 0.5, max_iter: 50, tol: 1e-8, scheme: Scheme::Implicit }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// `‖m_new − m_old‖_{L₂(Q_T)}` per iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    pub options: PicardOptions,
    pub min_density: f64,
}

/// A solution triple `(u, m, k)`.
#[derive(Clone, Debug)]
pub struct MFGTriple {
    pub u: Field,
    pub m: Field,
    pub k: SpaceField,
    pub report: Option<ConvergenceReport>,
}

/// Sampled regularity bounds of a triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleBounds {
    /// Largest sampled `|∂^α u|`, `|∂^α m|` over space-time multi-indices of order ≤ 4.
    pub n2: f64,
    /// `max(|k|, |∇k|)`.
    pub n3: f64,
    /// `min ½|∇u(·,T/2)|²`.
    pub c: f64,
}

impl MFGTriple {
    pub fn new(u: Field, m: Field, k: SpaceField) -> Result<Self> {
        if !u.grid().same_as(m.grid()) || !u.grid().same_as(k.grid()) {
            return Err(Error::GridMismatch);
        }
        Ok(MFGTriple { u, m, k, report: None })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid()
    }

    /// `min ½|∇u(·,T/2)|²` and the node where it is attained.
    pub fn nondegeneracy(&self) -> (f64, Vec<usize>) {
        let mid = self.u.level(self.grid().mid_level());
        let (node, v) = mid.grad_sq().argmin();
        (0.5 * v, node)
    }

    pub fn bounds(&self) -> TripleBounds {
        let n2 = sampled_c4(&self.u).max(sampled_c4(&self.m));
        let mut n3 = self.k.max_abs();
        for a in 0..self.grid().dim() {
            n3 = n3.max(self.k.grad(a).max_abs());
        }
        TripleBounds { n2, n3, c: self.nondegeneracy().0 }
    }
}

/// Largest sampled derivative magnitude over multi-indices in `(t, x)` of
/// total order at most four.
pub fn sampled_c4(u: &Field) -> f64 {
    let dim = u.grid().dim() + 1;
    let mut best = 0.0_f64;
    let mut alpha = vec![0usize; dim];
    loop {
        let order: usize = alpha.iter().sum();
        if order <= 4 {
            let mut d = u.clone();
            for (ax, &c) in alpha.iter().enumerate() {
                for _ in 0..c {
                    d = if ax == 0 { d.dt() } else { d.grad(ax - 1) };
                }
            }
            best = best.max(d.max_abs());
        }
        let mut p = 0;
        loop {
            if p == dim {
                return best;
            }
            alpha[p] += 1;
            if alpha[p] <= 4 {
                break;
            }
            alpha[p] = 0;
            p += 1;
        }
    }
}

/// Alternates HJB and Fokker–Planck solves with damping
/// `m ← θ m_new + (1 − θ) m_old` until the `L₂(Q_T)` change falls below
/// `tol`. The first density is the Fokker–Planck solution for `u` equal to
/// its terminal data at every time, so an uncoupled problem converges in one
/// iteration.
pub fn solve_mfg_picard(spec: &ProblemSpec, k: &SpaceField, opts: &PicardOptions) -> Result<MFGTriple> {
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("damping θ = {} outside (0, 1]", opts.theta)));
    }
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("max_iter and tol must be positive".into()));
    }
    let u0 = spec.u_terminal.to_field();
    let mut m = solve_fokker_planck(spec, k, &u0, opts.scheme)?;
    let mut history = Vec::new();
    let fail = |history: &Vec<f64>, last: f64| Error::NonConvergence {
        iterations: history.len(),
        last,
        history: history.clone(),
    };
    for _ in 0..opts.max_iter {
        let step = solve_hjb(spec, k, &m, opts.scheme)
            .and_then(|u| solve_fokker_planck(spec, k, &u, opts.scheme).map(|mn| (u, mn)));
        let (u, m_new) = match step {
            Ok(s) => s,
            Err(Error::Instability { .. }) => return Err(fail(&history, f64::INFINITY)),
            Err(e) => return Err(e),
        };
        let diff = &m_new - &m;
        let change = diff.l2_sq().sqrt();
        if !change.is_finite() {
            return Err(fail(&history, f64::INFINITY));
        }
        history.push(change);
        m = if opts.theta == 1.0 { m_new } else { &(&m_new * opts.theta) + &(&m * (1.0 - opts.theta)) };
        if change < opts.tol {
            let u = if change == 0.0 { u } else { solve_hjb(spec, k, &m, opts.scheme)? };
            let report = ConvergenceReport {
                iterations: history.len(),
                history,
                converged: true,
                options: *opts,
                min_density: m.min(),
            };
            return Ok(MFGTriple { u, m, k: k.clone(), report: Some(report) });
        }
    }
    let last = history.last().copied().unwrap_or(f64::INFINITY);
    Err(fail(&history, last))
}

/// A closed-form function `u(x, t)` with exact first derivatives and
/// Laplacian.
pub trait ClosedForm: Send + Sync {
    fn value(&self, x: &[f64], t: f64) -> f64;
    fn dt(&self, x: &[f64], t: f64) -> f64;
    fn grad(&self, x: &[f64], t: f64, out: &mut [f64]);
    fn laplacian(&self, x: &[f64], t: f64) -> f64;

    fn describe(&self) -> String {
        "closed-form".into()
    }
}

/// `u = a x₁² + b x₁ + c t + d t x₁ + e Σ_{i≥2} x_i² + s sin(πx₁) cos t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothU {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub s: f64,
}

impl SmoothU {
    /// `x₁² + t`.
    pub fn unit() -> Self {
        SmoothU { a: 1.0, c: 1.0, ..Default::default() }
    }
}

impl ClosedForm for SmoothU {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        let tr: f64 = x[1..].iter().map(|v| v * v).sum();
        self.a * x[0] * x[0] + self.b * x[0] + self.c * t + self.d * t * x[0] + self.e * tr
            + self.s * (PI * x[0]).sin() * t.cos()
    }

    fn dt(&self, x: &[f64], t: f64) -> f64 {
        self.c + self.d * x[0] - self.s * (PI * x[0]).sin() * t.sin()
    }

    fn grad(&self, x: &[f64], t: f64, out: &mut [f64]) {
        out[0] = 2.0 * self.a * x[0] + self.b + self.d * t + self.s * PI * (PI * x[0]).cos() * t.cos();
        for (o, v) in out[1..].iter_mut().zip(&x[1..]) {
            *o = 2.0 * self.e * v;
        }
    }

    fn laplacian(&self, x: &[f64], t: f64) -> f64 {
        2.0 * self.a + 2.0 * self.e * (x.len() - 1) as f64 - self.s * PI * PI * (PI * x[0]).sin() * t.cos()
    }

    fn describe(&self) -> String {
        format!(
            "{}·x1² + {}·x1 + {}·t + {}·t·x1 + {}·|x̄|² + {}·sin(πx1)cos(t)",
            self.a, self.b, self.c, self.d, self.e, self.s
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManufactureOptions {
    pub scheme: Scheme,
    pub m_floor: f64,
    /// Length of the density march before `t = 0`. The density starts from
    /// `m0` at `t = −warmup` so that its boundary data are compatible with
    /// the equation by the time the triple begins.
    pub warmup: f64,
}

impl Default for ManufactureOptions {
    fn default() -> Self {
        ManufactureOptions { scheme: Scheme::Implicit, m_floor: DEFAULT_M_FLOOR, warmup: 0.25 }
    }
}

/// A manufactured triple with its interaction coefficient and the forward
/// problem it solves.
#[derive(Clone, Debug)]
pub struct Manufactured {
    pub triple: MFGTriple,
    pub f: Field,
    pub spec: ProblemSpec,
    pub u_description: String,
}

/// Builds an exact triple: `m` is the Fokker–Planck solution driven by the
/// prescribed `u` (boundary data `m0` held constant in time), and `f` is
/// chosen so that the HJB equation holds with the exact derivatives of `u`:
/// `f = [−u_t − Δu + k|∇u|²/2 − K[m]] / m`.
fn warm_density(
    grid: &Arc<Grid>,
    k: &SpaceField,
    u: &dyn ClosedForm,
    m0: &SpaceField,
    opts: ManufactureOptions,
) -> Result<SpaceField> {
    if !(opts.warmup >= 0.0) || !opts.warmup.is_finite() {
        return Err(Error::InvalidParameter(format!("warmup must be non-negative, got {}", opts.warmup)));
    }
    let steps = (opts.warmup / grid.tau()).round() as usize;
    let mut cur = m0.data().clone();
    for j in 0..steps {
        let t = -((steps - j - 1) as f64) * grid.tau();
        let uj = SpaceField::from_fn(grid, |x| u.value(x, t));
        cur = match opts.scheme {
            Scheme::Implicit => fp_implicit_step(grid, cur, uj.data().view(), k.data(), m0.data().view()),
            Scheme::Explicit => {
                let prev = SpaceField::from_fn(grid, |x| u.value(x, t - grid.tau()));
                fp_explicit_step(grid, &cur, &prev, k, m0.data().view())?
            }
        };
        check_level("fokker-planck warm-up", j, &cur)?;
    }
    Ok(SpaceField::from_raw(grid, cur))
}

pub fn manufacture_triple(
    grid: &Arc<Grid>,
    kernel: &Kernel,
    k: &SpaceField,
    u: &dyn ClosedForm,
    m0: &SpaceField,
    opts: ManufactureOptions,
) -> Result<Manufactured> {
    let (node, min) = m0.argmin();
    if min <= 0.0 {
        return Err(Error::NonPositiveDensity { min, node });
    }
    let uf = Field::from_fn(grid, |x, t| u.value(x, t));
    let m_bnd = m0.to_field();
    let zero = Field::zeros(grid);
    let fp_spec = ProblemSpec::new(kernel.clone(), zero, uf.clone(), m_bnd, uf.level(grid.nt() - 1), m0.clone())?;
    let start = warm_density(grid, k, u, m0, opts)?;
    let fp_spec = ProblemSpec { m_initial: start, ..fp_spec };
    let m = solve_fokker_planck(&fp_spec, k, &uf, opts.scheme)?;
    let mut worst = (Vec::new(), f64::INFINITY);
    for (idx, &v) in m.data().indexed_iter() {
        if v < worst.1 {
            worst = (ndarray::Dimension::slice(&idx).to_vec(), v);
        }
    }
    if worst.1 <= opts.m_floor {
        return Err(Error::DensityFloor { min: worst.1, floor: opts.m_floor, node: worst.0 });
    }
    let km = kernel.apply(&m);
    let kfull = k.to_field();
    let lhs = Field::from_fn(grid, |x, t| -u.dt(x, t) - u.laplacian(x, t));
    let g2 = Field::from_fn(grid, |x, t| {
        let mut gr = vec![0.0; x.len()];
        u.grad(x, t, &mut gr);
        gr.iter().map(|v| v * v).sum()
    });
    let num = &(&lhs + &(&(&kfull * &g2) * 0.5)) - &km;
    let f = num.zip_map(&m, |a, b| a / b);
    if !f.is_finite() {
        return Err(Error::NonFinite("manufactured f".into()));
    }
    let spec = ProblemSpec::from_fields(kernel.clone(), f.clone(), &uf, &m)?;
    let triple = MFGTriple::new(uf, m, k.clone())?;
    Ok(Manufactured { triple, f, spec, u_description: u.describe() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Hjb,
    Fp,
}

/// Pointwise residual of one equation with interior norms.
#[derive(Clone, Debug)]
pub struct Residual {
    pub field: Field,
    pub l2: f64,
    pub max: f64,
}

/// Residual of the selected equation evaluated with central differences
/// (second order in `x` and `t` at interior nodes).
pub fn residual(triple: &MFGTriple, spec: &ProblemSpec, which: Equation) -> Residual {
    let (u, m) = (&triple.u, &triple.m);
    let kf = triple.k.to_field();
    let field = match which {
        Equation::Hjb => {
            let ham = &(&kf * &u.grad_sq()) * 0.5;
            &(&(&(&u.dt() + &u.laplacian()) - &ham) + &spec.kernel.apply(m)) + &(&spec.f * m)
        }
        Equation::Fp => {
            // Product-rule form: differencing the assembled flux would feed the
            // one-sided boundary gradient of u into the first interior node.
            let km = &kf * m;
            let drift = &Field::grad_dot(&km.gradient(), &u.gradient()) + &(&km * &u.laplacian());
            &(&m.dt() - &m.laplacian()) - &drift
        }
    };
    let (l2, max) = field.interior_norms();
    Residual { field, l2, max }
}

/// `∫_Ω m(·, t) dx` at every time level.
pub fn mass_history(m: &Field) -> Vec<f64> {
    (0..m.grid().nt()).map(|j| m.integrate(Region::Slice(j)).expect("valid level")).collect()
}

/// Ready-made forward problems.
pub mod scenarios {
    use super::*;
    use crate::grid::{make_grid, Prism};

    pub fn default_prism() -> Prism {
        Prism::interval(1.0, 2.0, 1.0).expect("valid prism")
    }

    /// `Ω = (1, 2)`, `T = 1`, `nx = 129`, `nt = 257`.
    pub fn default_grid() -> Arc<Grid> {
        make_grid(default_prism(), vec![129], 257).expect("valid grid")
    }

    /// The manufactured value function used by the stability experiments:
    /// `u = |x|²/2 + 2t + 0.15 sin(πx₁) cos t`.
    pub fn default_u() -> SmoothU {
        SmoothU { a: 0.5, b: 0.0, c: 2.0, d: 0.0, e: 0.5, s: 0.15 }
    }

    /// Baseline coefficient `k₁ = 1 + x₁/4`.
    pub fn default_k(grid: &Arc<Grid>) -> SpaceField {
        SpaceField::from_fn(grid, |x| 1.0 + 0.25 * x[0])
    }

    /// Density boundary data `m₀ = 1 + sin²(πx₁)/2`.
    pub fn default_m0(grid: &Arc<Grid>) -> SpaceField {
        SpaceField::from_fn(grid, |x| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).sin().powi(2))
    }

    /// `Y ≡ 0`, `f ≡ 0`, `k ≡ 0`: the two equations decouple.
    pub fn zero_coupling(grid: &Arc<Grid>) -> Result<(ProblemSpec, SpaceField)> {
        let u = Field::from_fn(grid, |x, _| x[0]);
        let m = Field::constant(grid, 1.0);
        let spec = ProblemSpec::from_fields(Kernel::zero(), Field::zeros(grid), &u, &m)?;
        Ok((spec, SpaceField::zeros(grid)))
    }

    /// Manufactured problem with the interaction coefficient scaled by
    /// `f_scale` and a Heaviside kernel of bound `n1`.
    pub fn manufactured(grid: &Arc<Grid>, f_scale: f64, n1: f64) -> Result<(ProblemSpec, SpaceField)> {
        manufactured_with(grid, Kernel::causal(crate::kernels::YBar::Constant(1.0)).scaled(n1), f_scale)
    }

    /// The same construction with an arbitrary kernel.
    pub fn manufactured_with(grid: &Arc<Grid>, kernel: Kernel, f_scale: f64) -> Result<(ProblemSpec, SpaceField)> {
        let k = default_k(grid);
        let man = manufacture_triple(grid, &kernel, &k, &default_u(), &default_m0(grid), ManufactureOptions::default())?;
        let f = &man.f * f_scale;
        Ok((man.spec.with_f(f), k))
    }

    /// A strongly and positively coupled problem on which undamped Picard
    /// iteration does not settle.
    pub fn strong_coupling(grid: &Arc<Grid>) -> Result<(ProblemSpec, SpaceField)> {
        let kernel = Kernel::causal(crate::kernels::YBar::Constant(1.0)).scaled(20.0);
        let k = SpaceField::constant(grid, 4.0);
        let u = Field::from_fn(grid, |x, _| x[0]);
        let m = Field::from_fn(grid, |x, _| 1.0 + 0.5 * (std::f64::consts::PI * x[0]).sin());
        let f = Field::constant(grid, 20.0);
        let spec = ProblemSpec::from_fields(kernel, f, &u, &m)?;
        Ok((spec, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Prism};

    fn small() -> Arc<Grid> {
        make_grid(Prism::interval(1.0, 2.0, 1.0).unwrap(), vec![33], 65).unwrap()
    }

    #[test]
    fn constant_density_is_stationary() {
        let g = small();
        let (spec, k) = scenarios::zero_coupling(&g).unwrap();
        let m = solve_fokker_planck(&spec, &k, &spec.u_dirichlet, Scheme::Implicit).unwrap();
        assert!(m.data().iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn zero_problem_gives_zero_value() {
        let g = small();
        let z = Field::zeros(&g);
        let one = Field::constant(&g, 1.0);
        let spec = ProblemSpec::from_fields(Kernel::zero(), z.clone(), &z, &one).unwrap();
        let u = solve_hjb(&spec, &SpaceField::zeros(&g), &one, Scheme::Implicit).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn explicit_path_guards_step() {
        let g = small();
        let (spec, k) = scenarios::zero_coupling(&g).unwrap();
        let err = solve_hjb(&spec, &k, &spec.m_dirichlet, Scheme::Explicit).unwrap_err();
        assert!(matches!(err, Error::StabilityRestriction { .. }));
    }

    #[test]
    fn nonpositive_initial_density_is_rejected() {
        let g = small();
        let z = Field::zeros(&g);
        let m = Field::from_fn(&g, |x, _| x[0] - 1.5);
        assert!(matches!(
            ProblemSpec::from_fields(Kernel::zero(), z.clone(), &z, &m),
            Err(Error::NonPositiveDensity { .. })
        ));
    }
}
