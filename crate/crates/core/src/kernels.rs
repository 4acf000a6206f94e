//! Interaction kernels `Y(x, y)` and the absolute-value majorant `G`.
//!
//! Three forms are supported:
//!
//! * `GaussianProduct`: `Y = Π exp(−(x_i − y_i)² / 2σ_i²)`, applied by full
//!   quadrature, one axis at a time.
//! * `SeparableDelta`: `Y = δ(x₁ − y₁) Ȳ(x̄, ȳ)`, which reduces to
//!   `∫_{Ω₁} Ȳ(x̄, ȳ) m(x₁, ȳ) dȳ`.
//! * `HeavisideCausal`: `Y = H(y₁ − x₁) Ȳ(x, y)`, which reduces to
//!   `∫_{Ω₁} ∫_{x₁}^b Ȳ(x, y) m(y) dy₁ dȳ`.
//!
//! For `n = 1` the transverse integral over `Ω₁` is the identity.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayD, Axis, IxDyn, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Region, SpaceField};
use crate::par;
use crate::stencil::trapz_weights;

type YFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// The bounded factor `Ȳ` of the reduced kernel forms.
///
/// For `SeparableDelta` it is called with the transverse coordinates
/// `(x̄, ȳ)`; for `HeavisideCausal` with the full coordinates `(x, y)`.
#[derive(Clone)]
pub enum YBar {
    Constant(f64),
    /// `Π_i cos((x_i − y_i)/2)`.
    CosineProduct,
    /// `exp(−|x − y|²)`.
    Bump,
    Custom(Arc<YFn>),
}

impl fmt::Debug for YBar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            YBar::Constant(c) => write!(f, "Constant({c})"),
            YBar::CosineProduct => f.write_str("CosineProduct"),
            YBar::Bump => f.write_str("Bump"),
            YBar::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl YBar {
    pub fn custom(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        YBar::Custom(Arc::new(f))
    }

    pub fn builtin(id: &str) -> Result<Self> {
        match id {
            "constant" => Ok(YBar::Constant(1.0)),
            "cosine-product" => Ok(YBar::CosineProduct),
            "bump" => Ok(YBar::Bump),
            other => Err(Error::UnknownYBar(other.to_string())),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            YBar::Constant(_) => "constant",
            YBar::CosineProduct => "cosine-product",
            YBar::Bump => "bump",
            YBar::Custom(_) => "custom",
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            YBar::Constant(c) => *c,
            YBar::CosineProduct => x.iter().zip(y).map(|(a, b)| (0.5 * (a - b)).cos()).product(),
            YBar::Bump => (-x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp(),
            YBar::Custom(f) => f(x, y),
        }
    }
}

#[derive(Clone, Debug)]
pub enum KernelVariant {
    GaussianProduct { sigma: Vec<f64> },
    SeparableDelta(YBar),
    HeavisideCausal(YBar),
}

impl KernelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            KernelVariant::GaussianProduct { .. } => "gaussian_product",
            KernelVariant::SeparableDelta(_) => "separable_delta",
            KernelVariant::HeavisideCausal(_) => "heaviside_causal",
        }
    }
}

/// An interaction kernel with an overall multiplier.
#[derive(Clone, Debug)]
pub struct Kernel {
    variant: KernelVariant,
    scale: f64,
}

/// JSON form of a kernel: `{"variant": ..., "sigma": [...], "ybar": ..., "scale": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ybar: Option<String>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Kernel {
    pub fn new(variant: KernelVariant) -> Result<Self> {
        if let KernelVariant::GaussianProduct { sigma } = &variant {
            if sigma.is_empty() || sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::InvalidParameter(format!("gaussian widths must be positive, got {sigma:?}")));
            }
        }
        Ok(Kernel { variant, scale: 1.0 })
    }

    pub fn gaussian(sigma: Vec<f64>) -> Result<Self> {
        Self::new(KernelVariant::GaussianProduct { sigma })
    }

    pub fn separable(ybar: YBar) -> Self {
        Kernel { variant: KernelVariant::SeparableDelta(ybar), scale: 1.0 }
    }

    pub fn causal(ybar: YBar) -> Self {
        Kernel { variant: KernelVariant::HeavisideCausal(ybar), scale: 1.0 }
    }

    /// `Y ≡ 0`.
    pub fn zero() -> Self {
        Kernel { variant: KernelVariant::SeparableDelta(YBar::Constant(1.0)), scale: 0.0 }
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale *= scale;
        self
    }

    pub fn variant(&self) -> &KernelVariant {
        &self.variant
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0 || matches!(&self.variant,
            KernelVariant::SeparableDelta(YBar::Constant(c)) | KernelVariant::HeavisideCausal(YBar::Constant(c)) if *c == 0.0)
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        let ybar = || YBar::builtin(spec.ybar.as_deref().unwrap_or("constant"));
        let k = match spec.variant.as_str() {
            "none" | "zero" => Kernel::zero(),
            "gaussian_product" => Kernel::gaussian(spec.sigma.clone())?,
            "separable_delta" => Kernel::separable(ybar()?),
            "heaviside_causal" => Kernel::causal(ybar()?),
            other => return Err(Error::InvalidParameter(format!("unknown kernel variant `{other}`"))),
        };
        if !spec.scale.is_finite() {
            return Err(Error::InvalidParameter("kernel scale must be finite".into()));
        }
        Ok(k.scaled(spec.scale))
    }

    pub fn to_spec(&self) -> KernelSpec {
        let (variant, sigma, ybar) = match &self.variant {
            KernelVariant::GaussianProduct { sigma } => ("gaussian_product", sigma.clone(), None),
            KernelVariant::SeparableDelta(y) => ("separable_delta", Vec::new(), Some(y.id().to_string())),
            KernelVariant::HeavisideCausal(y) => ("heaviside_causal", Vec::new(), Some(y.id().to_string())),
        };
        let mut scale = self.scale;
        if let Some(YBar::Constant(c)) = self.ybar() {
            scale *= c;
        }
        KernelSpec { variant: variant.into(), sigma, ybar, scale }
    }

    fn ybar(&self) -> Option<&YBar> {
        match &self.variant {
            KernelVariant::SeparableDelta(y) | KernelVariant::HeavisideCausal(y) => Some(y),
            KernelVariant::GaussianProduct { .. } => None,
        }
    }

    /// `N₁` estimated as the largest sampled `|Ȳ|` over node pairs (at most
    /// about a million pairs are visited).
    pub fn sampled_bound(&self, grid: &Grid) -> f64 {
        let s = self.scale.abs();
        match &self.variant {
            KernelVariant::GaussianProduct { .. } => s,
            KernelVariant::SeparableDelta(y) => {
                let (pts, _) = transverse_nodes(grid);
                s * max_pairs(&pts, &pts, y)
            }
            KernelVariant::HeavisideCausal(y) => {
                let pts = all_nodes(grid);
                s * max_pairs(&pts, &pts, y)
            }
        }
    }

    /// Discretized operator of this kernel on `grid`.
    pub fn operator(&self, grid: &Arc<Grid>) -> KernelOperator {
        KernelOperator::build(self, grid)
    }

    pub fn apply_space(&self, m: &SpaceField) -> SpaceField {
        self.operator(m.grid()).apply_space(m)
    }

    pub fn apply(&self, m: &Field) -> Field {
        self.operator(m.grid()).apply(m)
    }
}

fn max_pairs(xs: &[Vec<f64>], ys: &[Vec<f64>], y: &YBar) -> f64 {
    let sx = (xs.len() / 1000).max(1);
    let sy = (ys.len() / 1000).max(1);
    let mut m = 0.0_f64;
    for x in xs.iter().step_by(sx) {
        for yv in ys.iter().step_by(sy) {
            m = m.max(y.eval(x, yv).abs());
        }
    }
    m
}

/// Coordinates and trapezoid weights of the transverse nodes `x̄ ∈ Ω₁`, in
/// row-major order over axes `2..n`.
fn transverse_nodes(grid: &Grid) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = grid.dim();
    let shape: Vec<usize> = grid.nx()[1..].to_vec();
    let ws: Vec<Vec<f64>> = (1..n).map(|a| trapz_weights(grid.nx()[a], grid.h()[a])).collect();
    let count: usize = shape.iter().product();
    let mut pts = Vec::with_capacity(count);
    let mut wts = Vec::with_capacity(count);
    for flat in 0..count {
        let mut rem = flat;
        let mut idx = vec![0; shape.len()];
        for a in (0..shape.len()).rev() {
            idx[a] = rem % shape[a];
            rem /= shape[a];
        }
        pts.push(idx.iter().enumerate().map(|(a, &i)| grid.coord(a + 1, i)).collect());
        wts.push(idx.iter().enumerate().map(|(a, &i)| ws[a][i]).product());
    }
    (pts, wts)
}

fn all_nodes(grid: &Grid) -> Vec<Vec<f64>> {
    let (tr, _) = transverse_nodes(grid);
    let mut out = Vec::with_capacity(grid.n_space());
    for i in 0..grid.nx()[0] {
        let x1 = grid.coord(0, i);
        for t in &tr {
            let mut p = Vec::with_capacity(grid.dim());
            p.push(x1);
            p.extend_from_slice(t);
            out.push(p);
        }
    }
    out
}

/// Trapezoid weights of `∫_{x_i}^b` on the nodes `j ≥ i` of an axis.
fn causal_weights(n: usize, h: f64, i: usize) -> impl Iterator<Item = (usize, f64)> {
    (i..n).map(move |j| {
        let w = if i + 1 == n {
            0.0
        } else if j == i || j + 1 == n {
            0.5 * h
        } else {
            h
        };
        (j, w)
    })
}

const DENSE_LIMIT: usize = 2048;

enum OpKind {
    Zero,
    /// Per-axis quadrature matrices.
    Gaussian(Vec<Array2<f64>>),
    /// `W[x̄, ȳ] = Ȳ(x̄, ȳ) w(ȳ)` applied at every `x₁`.
    Transverse(Array2<f64>),
    /// Constant `Ȳ = c` with the causal `x₁` integral.
    CausalConstant(f64),
    /// Dense weight matrix over flattened nodes.
    CausalDense(Array2<f64>),
    /// Evaluated on the fly for large grids.
    CausalGeneral { ybar: YBar, nodes: Vec<Vec<f64>>, tw: Vec<f64> },
}

/// A kernel discretized on a fixed grid.
pub struct KernelOperator {
    grid: Arc<Grid>,
    kind: OpKind,
    scale: f64,
}

impl KernelOperator {
    fn build(kernel: &Kernel, grid: &Arc<Grid>) -> Self {
        let kind = if kernel.is_zero() {
            OpKind::Zero
        } else {
            match &kernel.variant {
                KernelVariant::GaussianProduct { sigma } => OpKind::Gaussian(
                    (0..grid.dim())
                        .map(|a| {
                            let s = sigma[a.min(sigma.len() - 1)];
                            let n = grid.nx()[a];
                            let w = trapz_weights(n, grid.h()[a]);
                            Array2::from_shape_fn((n, n), |(i, j)| {
                                let d = grid.coord(a, i) - grid.coord(a, j);
                                (-d * d / (2.0 * s * s)).exp() * w[j]
                            })
                        })
                        .collect(),
                ),
                KernelVariant::SeparableDelta(y) => {
                    let (pts, wts) = transverse_nodes(grid);
                    let k = pts.len();
                    OpKind::Transverse(Array2::from_shape_fn((k, k), |(p, q)| y.eval(&pts[p], &pts[q]) * wts[q]))
                }
                KernelVariant::HeavisideCausal(YBar::Constant(c)) => OpKind::CausalConstant(*c),
                KernelVariant::HeavisideCausal(y) => {
                    let nodes = all_nodes(grid);
                    let (_, tw) = transverse_nodes(grid);
                    if nodes.len() <= DENSE_LIMIT {
                        OpKind::CausalDense(causal_dense(grid, y, &nodes, &tw))
                    } else {
                        OpKind::CausalGeneral { ybar: y.clone(), nodes, tw }
                    }
                }
            }
        };
        KernelOperator { grid: grid.clone(), kind, scale: kernel.scale }
    }

    /// The majorant `G` of the two reduced kernel forms: the same integral
    /// with unit weight, to be applied to `|q|`.
    fn majorant(kernel: &Kernel, grid: &Arc<Grid>) -> Result<Self> {
        let unit = match &kernel.variant {
            KernelVariant::GaussianProduct { .. } => {
                return Err(Error::UnsupportedKernel { variant: "gaussian_product", operation: "the G operator" })
            }
            KernelVariant::SeparableDelta(_) => Kernel::separable(YBar::Constant(1.0)),
            KernelVariant::HeavisideCausal(_) => Kernel::causal(YBar::Constant(1.0)),
        };
        Ok(Self::build(&unit, grid))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn apply_space(&self, m: &SpaceField) -> SpaceField {
        let data = self.apply_array(m.data());
        SpaceField::from_raw(&self.grid, data)
    }

    /// Applies the operator at every time level.
    pub fn apply(&self, m: &Field) -> Field {
        if matches!(self.kind, OpKind::Zero) {
            return Field::zeros(&self.grid);
        }
        let nt = self.grid.nt();
        let levels = par::map_range(nt, |j| self.apply_array(&m.data().index_axis(Axis(0), j).to_owned()));
        let mut out = ArrayD::zeros(IxDyn(&self.grid.field_shape()));
        for (j, lvl) in levels.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), j).assign(&lvl);
        }
        Field::from_raw(&self.grid, out)
    }

    fn apply_array(&self, m: &ArrayD<f64>) -> ArrayD<f64> {
        let g = &self.grid;
        let shape = g.space_shape();
        let n1 = shape[0];
        let ntr = g.n_space() / n1;
        let m = m.as_standard_layout();
        let ms = m.as_slice().expect("standard layout");
        let mut out = vec![0.0; g.n_space()];
        match &self.kind {
            OpKind::Zero => {}
            OpKind::Gaussian(mats) => {
                let mut cur = m.to_owned();
                for (a, mat) in mats.iter().enumerate() {
                    let mut next = ArrayD::zeros(cur.raw_dim());
                    Zip::from(next.lanes_mut(Axis(a))).and(cur.lanes(Axis(a))).for_each(|mut o, u| {
                        o.assign(&mat.dot(&u));
                    });
                    cur = next;
                }
                let cur = cur.as_standard_layout().to_owned();
                out.copy_from_slice(cur.as_slice().expect("standard layout"));
            }
            OpKind::Transverse(w) => {
                for i in 0..n1 {
                    let row = &ms[i * ntr..(i + 1) * ntr];
                    for p in 0..ntr {
                        out[i * ntr + p] = w.row(p).iter().zip(row).map(|(a, b)| a * b).sum();
                    }
                }
            }
            OpKind::CausalConstant(c) => {
                let (_, tw) = transverse_nodes(g);
                let mbar: Vec<f64> =
                    (0..n1).map(|j| ms[j * ntr..(j + 1) * ntr].iter().zip(&tw).map(|(a, b)| a * b).sum()).collect();
                let h = g.h()[0];
                let mut s = 0.0;
                for i in (0..n1).rev() {
                    if i + 1 < n1 {
                        s += 0.5 * h * (mbar[i] + mbar[i + 1]);
                    }
                    for p in 0..ntr {
                        out[i * ntr + p] = c * s;
                    }
                }
            }
            OpKind::CausalDense(d) => {
                for (p, o) in out.iter_mut().enumerate() {
                    *o = d.row(p).iter().zip(ms).map(|(a, b)| a * b).sum();
                }
            }
            OpKind::CausalGeneral { ybar, nodes, tw } => {
                let h = g.h()[0];
                for (p, o) in out.iter_mut().enumerate() {
                    let i = p / ntr;
                    let mut s = 0.0;
                    for (j, w1) in causal_weights(n1, h, i) {
                        for (q, wq) in tw.iter().enumerate() {
                            let k = j * ntr + q;
                            s += ybar.eval(&nodes[p], &nodes[k]) * w1 * wq * ms[k];
                        }
                    }
                    *o = s;
                }
            }
        }
        let mut arr = ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape");
        if self.scale != 1.0 {
            arr *= self.scale;
        }
        arr
    }
}

fn causal_dense(grid: &Grid, y: &YBar, nodes: &[Vec<f64>], tw: &[f64]) -> Array2<f64> {
    let n1 = grid.nx()[0];
    let ntr = tw.len();
    let n = nodes.len();
    let h = grid.h()[0];
    let mut d = Array2::zeros((n, n));
    for p in 0..n {
        let i = p / ntr;
        for (j, w1) in causal_weights(n1, h, i) {
            for (q, wq) in tw.iter().enumerate() {
                let k = j * ntr + q;
                d[[p, k]] = y.eval(&nodes[p], &nodes[k]) * w1 * wq;
            }
        }
    }
    d
}

/// `∫_Ω Y(x, y) m(y, t) dy` at every time level.
pub fn apply_kernel(kernel: &Kernel, m: &Field) -> Field {
    kernel.apply(m)
}

/// `∫_Ω Y(x, y) m(y) dy` for one time level.
pub fn apply_kernel_level(kernel: &Kernel, m: &Field, level: usize) -> SpaceField {
    kernel.apply_space(&m.level(level))
}

/// The majorant operator `G(q)`, i.e. the reduced kernel integral with unit
/// weight applied to `|q|`.
pub fn apply_g(kernel: &Kernel, q: &Field) -> Result<Field> {
    let op = KernelOperator::majorant(kernel, q.grid())?;
    Ok(op.apply(&q.abs()))
}

/// Result of [`weighted_g_bound`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightedBound {
    /// `∫ G(q)² φ`.
    pub lhs: f64,
    /// `∫ G(q)² φ / ∫ q² φ`, the empirical `C̃` (0 when `q ≡ 0`).
    pub ratio: f64,
}

/// Weighted `L₂` bound of `G`: returns `∫G(q)²φ` and its ratio to `∫q²φ`.
pub fn weighted_g_bound(kernel: &Kernel, q: &Field, phi: &Field) -> Result<WeightedBound> {
    let gq = apply_g(kernel, q)?;
    let lhs = (&(&gq * &gq) * phi).integrate(Region::Cylinder)?;
    let den = (&(q * q) * phi).integrate(Region::Cylinder)?;
    let ratio = if den == 0.0 { 0.0 } else { lhs / den };
    Ok(WeightedBound { lhs, ratio })
}
