//! Tensor-product discretization of the prism `Ω × (0, T)`.
//!
//! `Ω = (a, b) × Π_{i≥2} (−B_i, B_i)`. Space-time fields are stored with the
//! time axis first (`[nt, nx₁, …, nx_n]`), so a time level is a contiguous
//! block. Lateral traces keep the time axis first followed by the spatial
//! axes tangential to the face.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use ndarray::{ArrayD, Axis, Dimension, IxDyn, Slice};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stencil;

/// The prism `Ω × (0, T)` with `Ω = {a < x₁ < b, −B_i < x_i < B_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prism {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub half_widths: Vec<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
}

impl Prism {
    pub fn new(a: f64, b: f64, half_widths: Vec<f64>, t_final: f64) -> Result<Self> {
        let p = Prism { a, b, half_widths, t_final };
        p.validate()?;
        Ok(p)
    }

    /// One-dimensional prism `(a, b) × (0, T)`.
    pub fn interval(a: f64, b: f64, t_final: f64) -> Result<Self> {
        Self::new(a, b, Vec::new(), t_final)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidPrism(format!("a = {} must be positive", self.a)));
        }
        if !(self.b > self.a && self.b.is_finite()) {
            return Err(Error::InvalidPrism(format!("b = {} must exceed a = {}", self.b, self.a)));
        }
        if let Some(bi) = self.half_widths.iter().find(|&&bi| !(bi > 0.0 && bi.is_finite())) {
            return Err(Error::InvalidPrism(format!("half width {bi} must be positive")));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidPrism(format!("T = {} must be positive", self.t_final)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1 + self.half_widths.len()
    }

    pub fn axis_range(&self, axis: usize) -> (f64, f64) {
        if axis == 0 {
            (self.a, self.b)
        } else {
            let bi = self.half_widths[axis - 1];
            (-bi, bi)
        }
    }

    /// `|Ω₁|`, the measure of the transverse cross-section (1 when n = 1).
    pub fn transverse_measure(&self) -> f64 {
        self.half_widths.iter().map(|b| 2.0 * b).product()
    }

    pub fn measure(&self) -> f64 {
        (self.b - self.a) * self.transverse_measure()
    }
}

/// Side of a face along its normal axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// A face `Γ_i^±` of `∂Ω`; `axis` is zero-based (`axis = 0` is `x₁`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn lower(axis: usize) -> Self {
        Face { axis, side: Side::Lower }
    }

    pub fn upper(axis: usize) -> Self {
        Face { axis, side: Side::Upper }
    }

    /// `Γ₁⁺ = {x₁ = b}`.
    pub fn gamma1_plus() -> Self {
        Face::upper(0)
    }

    /// Sign of the outward normal component along `axis`.
    pub fn outward_sign(&self) -> f64 {
        match self.side {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }

    /// Short identifier used in file names, e.g. `g1p`, `g2m`.
    pub fn tag(&self) -> String {
        let s = match self.side {
            Side::Lower => 'm',
            Side::Upper => 'p',
        };
        format!("g{}{}", self.axis + 1, s)
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.side {
            Side::Lower => '-',
            Side::Upper => '+',
        };
        write!(f, "Γ{}{}", self.axis + 1, s)
    }
}

/// Uniform tensor-product grid over a [`Prism`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    prism: Prism,
    nx: Vec<usize>,
    nt: usize,
    h: Vec<f64>,
    tau: f64,
}

/// Builds a grid, checking that `T/2` is a time level and that every axis
/// has room for second-order one-sided stencils.
pub fn make_grid(prism: Prism, nx: Vec<usize>, nt: usize) -> Result<Arc<Grid>> {
    Grid::new(prism, nx, nt)
}

impl Grid {
    pub fn new(prism: Prism, nx: Vec<usize>, nt: usize) -> Result<Arc<Grid>> {
        prism.validate()?;
        if nx.len() != prism.dim() {
            return Err(Error::InvalidGrid(format!(
                "{} point counts given for a {}-dimensional prism",
                nx.len(),
                prism.dim()
            )));
        }
        if let Some(&n) = nx.iter().find(|&&n| n < 5) {
            return Err(Error::InvalidGrid(format!("spatial count {n} < 5")));
        }
        if nt < 5 {
            return Err(Error::InvalidGrid(format!("time count {nt} < 5")));
        }
        if nt % 2 == 0 {
            return Err(Error::MidpointOffGrid { nt });
        }
        let h = nx
            .iter()
            .enumerate()
            .map(|(axis, &n)| {
                let (lo, hi) = prism.axis_range(axis);
                (hi - lo) / (n - 1) as f64
            })
            .collect();
        let tau = prism.t_final / (nt - 1) as f64;
        Ok(Arc::new(Grid { prism, nx, nt, h, tau }))
    }

    /// Re-validates a deserialized grid.
    pub fn from_json(text: &str) -> Result<Arc<Grid>> {
        let g: Grid = serde_json::from_str(text)?;
        Grid::new(g.prism, g.nx, g.nt)
    }

    pub fn prism(&self) -> &Prism {
        &self.prism
    }

    pub fn dim(&self) -> usize {
        self.nx.len()
    }

    pub fn nx(&self) -> &[usize] {
        &self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = self.prism.axis_range(axis);
        if i + 1 == self.nx[axis] {
            hi
        } else {
            lo + i as f64 * self.h[axis]
        }
    }

    pub fn time(&self, j: usize) -> f64 {
        if j + 1 == self.nt {
            self.prism.t_final
        } else {
            j as f64 * self.tau
        }
    }

    /// Index of the time level `t₀ = T/2`.
    pub fn mid_level(&self) -> usize {
        (self.nt - 1) / 2
    }

    pub fn space_shape(&self) -> Vec<usize> {
        self.nx.clone()
    }

    pub fn field_shape(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.dim() + 1);
        s.push(self.nt);
        s.extend_from_slice(&self.nx);
        s
    }

    pub fn n_space(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn space_coords(&self, idx: &[usize], out: &mut [f64]) {
        for (axis, (&i, o)) in idx.iter().zip(out.iter_mut()).enumerate() {
            *o = self.coord(axis, i);
        }
    }

    pub fn is_boundary_node(&self, idx: &[usize]) -> bool {
        idx.iter().zip(&self.nx).any(|(&i, &n)| i == 0 || i + 1 == n)
    }

    /// Index of the time level equal to `t` (within `1e-9 τ`).
    pub fn time_level(&self, t: f64) -> Result<usize> {
        let x = t / self.tau;
        let nearest = x.round().clamp(0.0, (self.nt - 1) as f64) as usize;
        if (x - nearest as f64).abs() > 1e-9 || t < -1e-12 || t > self.prism.t_final + 1e-12 {
            return Err(Error::OffGridTime { t, nearest, nearest_t: self.time(nearest) });
        }
        Ok(nearest)
    }

    /// Rounds `ε` to the nearest time level; returns `(level, snapped ε)`.
    pub fn snap_epsilon(&self, eps: f64) -> Result<(usize, f64)> {
        let half = 0.5 * self.prism.t_final;
        if !(eps > 0.0 && eps < half) {
            return Err(Error::EpsilonOutOfRange { eps, t_final: self.prism.t_final });
        }
        let k = ((eps / self.tau).round() as usize).clamp(1, self.mid_level() - 1);
        Ok((k, self.time(k)))
    }

    pub fn faces(&self) -> Vec<Face> {
        (0..self.dim()).flat_map(|axis| [Face::lower(axis), Face::upper(axis)]).collect()
    }

    /// Shape of a lateral trace on `face`: `[nt, nx_j for j ≠ face.axis]`.
    pub fn face_shape(&self, face: Face) -> Vec<usize> {
        let mut s = vec![self.nt];
        s.extend(self.nx.iter().enumerate().filter(|(j, _)| *j != face.axis).map(|(_, &n)| n));
        s
    }

    /// Spacings matching [`Grid::face_shape`].
    pub fn face_spacings(&self, face: Face) -> Vec<f64> {
        let mut s = vec![self.tau];
        s.extend(self.h.iter().enumerate().filter(|(j, _)| *j != face.axis).map(|(_, &h)| h));
        s
    }

    pub fn field_spacings(&self) -> Vec<f64> {
        let mut s = vec![self.tau];
        s.extend_from_slice(&self.h);
        s
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || self == other
    }
}

fn check_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Spatial field `Ω → ℝ` sampled on the grid nodes.
#[derive(Clone, Debug)]
pub struct SpaceField {
    grid: Arc<Grid>,
    data: ArrayD<f64>,
}

impl SpaceField {
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let data = ArrayD::from_shape_fn(IxDyn(&grid.space_shape()), |idx| {
            grid.space_coords(idx.slice(), &mut x);
            f(&x)
        });
        SpaceField { grid: grid.clone(), data }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        SpaceField { grid: grid.clone(), data: ArrayD::from_elem(IxDyn(&grid.space_shape()), c) }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_array(grid: &Arc<Grid>, data: ArrayD<f64>) -> Result<Self> {
        if data.shape() != grid.space_shape().as_slice() {
            return Err(Error::InvalidGrid(format!(
                "spatial array shape {:?} does not match grid {:?}",
                data.shape(),
                grid.space_shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spatial field construction".into()));
        }
        Ok(SpaceField { grid: grid.clone(), data })
    }

    pub(crate) fn from_raw(grid: &Arc<Grid>, data: ArrayD<f64>) -> Self {
        debug_assert_eq!(data.shape(), grid.space_shape().as_slice());
        SpaceField { grid: grid.clone(), data }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[IxDyn(idx)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Node index and value of the minimum.
    pub fn argmin(&self) -> (Vec<usize>, f64) {
        let mut best = (Vec::new(), f64::INFINITY);
        for (idx, &v) in self.data.indexed_iter() {
            if v < best.1 {
                best = (idx.slice().to_vec(), v);
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SpaceField { grid: self.grid.clone(), data: self.data.mapv(f) }
    }

    pub fn zip_map(&self, other: &SpaceField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        let mut data = self.data.clone();
        ndarray::Zip::from(&mut data).and(&other.data).for_each(|a, &b| *a = f(*a, b));
        SpaceField { grid: self.grid.clone(), data }
    }

    pub fn grad(&self, axis: usize) -> Self {
        Self::from_raw(&self.grid, stencil::d1(self.data.view(), axis, self.grid.h[axis]))
    }

    pub fn second(&self, i: usize, j: usize) -> Self {
        if i == j {
            Self::from_raw(&self.grid, stencil::d2(self.data.view(), i, self.grid.h[i]))
        } else {
            self.grad(i).grad(j)
        }
    }

    pub fn laplacian(&self) -> Self {
        let mut out = ArrayD::zeros(self.data.raw_dim());
        for axis in 0..self.grid.dim() {
            out += &stencil::d2(self.data.view(), axis, self.grid.h[axis]);
        }
        Self::from_raw(&self.grid, out)
    }

    /// `|∇u|²`.
    pub fn grad_sq(&self) -> Self {
        let mut out = ArrayD::zeros(self.data.raw_dim());
        for axis in 0..self.grid.dim() {
            let g = stencil::d1(self.data.view(), axis, self.grid.h[axis]);
            out += &(&g * &g);
        }
        Self::from_raw(&self.grid, out)
    }

    pub fn integrate(&self) -> f64 {
        stencil::integrate(self.data.view(), &self.grid.h)
    }

    pub fn l2_sq(&self) -> f64 {
        stencil::integrate(self.data.mapv(|v| v * v).view(), &self.grid.h)
    }

    pub fn l2(&self) -> f64 {
        self.l2_sq().sqrt()
    }

    pub fn h1_sq(&self) -> f64 {
        self.l2_sq() + (0..self.grid.dim()).map(|i| self.grad(i).l2_sq()).sum::<f64>()
    }

    pub fn h1(&self) -> f64 {
        self.h1_sq().sqrt()
    }

    /// Sum over multi-indices `|α| ≤ 2` of `‖D^α u‖²_{L₂(Ω)}`.
    pub fn h2_sq(&self) -> f64 {
        let n = self.grid.dim();
        let mut s = self.h1_sq();
        for i in 0..n {
            for j in i..n {
                s += self.second(i, j).l2_sq();
            }
        }
        s
    }

    pub fn h2(&self) -> f64 {
        self.h2_sq().sqrt()
    }

    /// Broadcasts to a space-time field constant in `t`.
    pub fn to_field(&self) -> Field {
        let shape = self.grid.field_shape();
        let data = self.data.broadcast(IxDyn(&shape)).expect("broadcast over time").to_owned();
        Field { grid: self.grid.clone(), data }
    }
}

impl Add for &SpaceField {
    type Output = SpaceField;
    fn add(self, rhs: &SpaceField) -> SpaceField {
        SpaceField { grid: self.grid.clone(), data: &self.data + &rhs.data }
    }
}

impl Sub for &SpaceField {
    type Output = SpaceField;
    fn sub(self, rhs: &SpaceField) -> SpaceField {
        SpaceField { grid: self.grid.clone(), data: &self.data - &rhs.data }
    }
}

impl Mul for &SpaceField {
    type Output = SpaceField;
    fn mul(self, rhs: &SpaceField) -> SpaceField {
        SpaceField { grid: self.grid.clone(), data: &self.data * &rhs.data }
    }
}

impl Mul<f64> for &SpaceField {
    type Output = SpaceField;
    fn mul(self, rhs: f64) -> SpaceField {
        SpaceField { grid: self.grid.clone(), data: &self.data * rhs }
    }
}

/// Derivative selector for [`Field::diff`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    Grad(usize),
    Laplacian,
    Dt,
    Dtt,
    Mixed(usize, usize),
}

/// Integration region for [`Field::integrate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    /// `Q_T = Ω × (0, T)`.
    Cylinder,
    /// `Ω` at the given time level.
    Slice(usize),
    /// `S_T = ∂Ω × (0, T)`.
    Lateral,
    /// A single face times `(0, T)`.
    Face(Face),
    /// `Q_{ε,T} = Ω × (ε, T − ε)`, with `ε` snapped to a time level.
    Truncated(f64),
}

/// Norm selector for [`Field::norm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Norm {
    L2Slice(usize),
    H1Slice(usize),
    H2Slice(usize),
    L2Q,
    H2Q,
    H21Q,
    /// `H^{2,1}(Q_{ε,T})`.
    H21Truncated(f64),
    H21Lateral,
    H10Lateral,
    H10Face(Face),
    H21Face(Face),
}

/// Which reading of the face `H^{2,1}` display to use.
///
/// `PerFace` evaluates every term on the face in question using tangential
/// derivatives only. `Literal` follows the printed index pattern, where the
/// spatial derivative terms with index `j` are integrated over `Γ_j^±`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceReading {
    #[default]
    PerFace,
    Literal,
}

/// Space-time field sampled on every grid node.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    data: ArrayD<f64>,
}

impl Field {
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let data = ArrayD::from_shape_fn(IxDyn(&grid.field_shape()), |idx| {
            let idx = idx.slice();
            grid.space_coords(&idx[1..], &mut x);
            f(&x, grid.time(idx[0]))
        });
        Field { grid: grid.clone(), data }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Field { grid: grid.clone(), data: ArrayD::from_elem(IxDyn(&grid.field_shape()), c) }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_array(grid: &Arc<Grid>, data: ArrayD<f64>) -> Result<Self> {
        if data.shape() != grid.field_shape().as_slice() {
            return Err(Error::InvalidGrid(format!(
                "array shape {:?} does not match grid {:?}",
                data.shape(),
                grid.field_shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field construction".into()));
        }
        Ok(Field { grid: grid.clone(), data })
    }

    pub(crate) fn from_raw(grid: &Arc<Grid>, data: ArrayD<f64>) -> Self {
        debug_assert_eq!(data.shape(), grid.field_shape().as_slice());
        Field { grid: grid.clone(), data }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Field { grid: self.grid.clone(), data: self.data.mapv(f) }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        let mut data = self.data.clone();
        ndarray::Zip::from(&mut data).and(&other.data).for_each(|a, &b| *a = f(*a, b));
        Field { grid: self.grid.clone(), data }
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    /// Multiplies every time level by a spatial field.
    pub fn scale_by(&self, s: &SpaceField) -> Self {
        let mut data = self.data.clone();
        for mut level in data.axis_iter_mut(Axis(0)) {
            level *= &s.data;
        }
        Field { grid: self.grid.clone(), data }
    }

    pub fn level(&self, j: usize) -> SpaceField {
        SpaceField::from_raw(&self.grid, self.data.index_axis(Axis(0), j).to_owned())
    }

    /// Restriction to the time level `t`; rejects off-grid times.
    pub fn snapshot(&self, t: f64) -> Result<SpaceField> {
        Ok(self.level(self.grid.time_level(t)?))
    }

    pub fn set_level(&mut self, j: usize, s: &SpaceField) {
        self.data.index_axis_mut(Axis(0), j).assign(&s.data);
    }

    pub fn diff(&self, kind: Derivative) -> Field {
        match kind {
            Derivative::Grad(i) => self.grad(i),
            Derivative::Laplacian => self.laplacian(),
            Derivative::Dt => self.dt(),
            Derivative::Dtt => self.dtt(),
            Derivative::Mixed(i, j) => self.second(i, j),
        }
    }

    pub fn grad(&self, axis: usize) -> Field {
        Self::from_raw(&self.grid, stencil::d1(self.data.view(), axis + 1, self.grid.h[axis]))
    }

    pub fn gradient(&self) -> Vec<Field> {
        (0..self.grid.dim()).map(|i| self.grad(i)).collect()
    }

    pub fn second(&self, i: usize, j: usize) -> Field {
        if i == j {
            Self::from_raw(&self.grid, stencil::d2(self.data.view(), i + 1, self.grid.h[i]))
        } else {
            self.grad(i).grad(j)
        }
    }

    pub fn laplacian(&self) -> Field {
        let mut out = ArrayD::zeros(self.data.raw_dim());
        for axis in 0..self.grid.dim() {
            out += &stencil::d2(self.data.view(), axis + 1, self.grid.h[axis]);
        }
        Self::from_raw(&self.grid, out)
    }

    pub fn dt(&self) -> Field {
        Self::from_raw(&self.grid, stencil::d1(self.data.view(), 0, self.grid.tau))
    }

    pub fn dtt(&self) -> Field {
        Self::from_raw(&self.grid, stencil::d2(self.data.view(), 0, self.grid.tau))
    }

    /// `Σ_i ∂_{x_i} V_i` for a vector field given by components.
    pub fn divergence(components: &[Field]) -> Field {
        let grid = components[0].grid.clone();
        let mut out = ArrayD::zeros(components[0].data.raw_dim());
        for (axis, c) in components.iter().enumerate() {
            out += &stencil::d1(c.data.view(), axis + 1, grid.h[axis]);
        }
        Self::from_raw(&grid, out)
    }

    /// `|∇u|²` at every node.
    pub fn grad_sq(&self) -> Field {
        let mut out = ArrayD::zeros(self.data.raw_dim());
        for axis in 0..self.grid.dim() {
            let g = stencil::d1(self.data.view(), axis + 1, self.grid.h[axis]);
            out += &(&g * &g);
        }
        Self::from_raw(&self.grid, out)
    }

    /// `∇a · ∇b`.
    pub fn grad_dot(a: &[Field], b: &[Field]) -> Field {
        let mut out = ArrayD::zeros(a[0].data.raw_dim());
        for (x, y) in a.iter().zip(b) {
            out += &(&x.data * &y.data);
        }
        Self::from_raw(&a[0].grid, out)
    }

    /// `∫_{T/2}^t u(x, τ) dτ` by cumulative trapezoid.
    pub fn integral_from_mid(&self) -> Field {
        Self::from_raw(
            &self.grid,
            stencil::cumulative_from(self.data.view(), 0, self.grid.tau, self.grid.mid_level()),
        )
    }

    pub fn integrate(&self, region: Region) -> Result<f64> {
        let g = &self.grid;
        Ok(match region {
            Region::Cylinder => stencil::integrate(self.data.view(), &g.field_spacings()),
            Region::Slice(j) => {
                if j >= g.nt {
                    return Err(Error::InvalidGrid(format!("time level {j} out of range")));
                }
                self.level(j).integrate()
            }
            Region::Lateral => g.faces().into_iter().map(|f| self.dirichlet(f).integrate()).sum(),
            Region::Face(face) => self.dirichlet(face).integrate(),
            Region::Truncated(eps) => {
                let (k, _) = g.snap_epsilon(eps)?;
                let view = self.data.slice_axis(Axis(0), Slice::from(k..g.nt - k));
                stencil::integrate(view, &g.field_spacings())
            }
        })
    }

    fn integrate_sq_rows(&self, rows: Option<usize>) -> f64 {
        let g = &self.grid;
        let sq = self.data.mapv(|v| v * v);
        match rows {
            None => stencil::integrate(sq.view(), &g.field_spacings()),
            Some(k) => stencil::integrate(
                sq.slice_axis(Axis(0), Slice::from(k..g.nt - k)).view(),
                &g.field_spacings(),
            ),
        }
    }

    pub fn l2_sq(&self) -> f64 {
        self.integrate_sq_rows(None)
    }

    /// `‖u‖²` in `H^{2,1}` over `Q_T` (`rows = None`) or over `Q_{ε,T}`.
    fn h21_sq_rows(&self, rows: Option<usize>) -> f64 {
        let n = self.grid.dim();
        let mut s = self.integrate_sq_rows(rows) + self.dt().integrate_sq_rows(rows);
        for i in 0..n {
            s += self.grad(i).integrate_sq_rows(rows);
            for j in i..n {
                s += self.second(i, j).integrate_sq_rows(rows);
            }
        }
        s
    }

    pub fn h21_sq(&self) -> f64 {
        self.h21_sq_rows(None)
    }

    pub fn h21_truncated_sq(&self, eps: f64) -> Result<f64> {
        let (k, _) = self.grid.snap_epsilon(eps)?;
        Ok(self.h21_sq_rows(Some(k)))
    }

    /// All `(x, t)` derivatives up to order two.
    pub fn h2_sq(&self) -> f64 {
        let n = self.grid.dim();
        let ut = self.dt();
        let mut s = self.l2_sq() + ut.l2_sq() + self.dtt().l2_sq();
        for i in 0..n {
            let gi = self.grad(i);
            s += gi.l2_sq() + gi.dt().l2_sq();
            for j in i..n {
                s += self.second(i, j).l2_sq();
            }
        }
        s
    }

    pub fn norm(&self, kind: Norm) -> Result<f64> {
        self.norm_with(kind, FaceReading::PerFace)
    }

    pub fn norm_with(&self, kind: Norm, reading: FaceReading) -> Result<f64> {
        let sq = match kind {
            Norm::L2Slice(j) => self.level(j).l2_sq(),
            Norm::H1Slice(j) => self.level(j).h1_sq(),
            Norm::H2Slice(j) => self.level(j).h2_sq(),
            Norm::L2Q => self.l2_sq(),
            Norm::H2Q => self.h2_sq(),
            Norm::H21Q => self.h21_sq(),
            Norm::H21Truncated(eps) => self.h21_truncated_sq(eps)?,
            Norm::H21Lateral => self.grid.faces().into_iter().map(|f| self.face_h21_sq(f, reading)).sum(),
            Norm::H10Lateral => self.grid.faces().into_iter().map(|f| self.dirichlet(f).h10_sq()).sum(),
            Norm::H10Face(face) => self.dirichlet(face).h10_sq(),
            Norm::H21Face(face) => self.face_h21_sq(face, reading),
        };
        Ok(sq.sqrt())
    }

    fn face_h21_sq(&self, face: Face, reading: FaceReading) -> f64 {
        match reading {
            FaceReading::PerFace => self.dirichlet(face).h21_sq(),
            FaceReading::Literal => {
                let n = self.grid.dim();
                let i = face.axis;
                let on = |axis: usize| Face { axis, side: face.side };
                let mut s = self.dirichlet(face).l2_sq() + self.dt().dirichlet(face).l2_sq();
                for j in (0..n).filter(|&j| j != i) {
                    s += self.grad(j).dirichlet(on(j)).l2_sq();
                }
                for j in 0..n {
                    for k in 0..n {
                        if (j, k) != (i, i) {
                            s += self.second(j, k).dirichlet(on(j)).l2_sq();
                        }
                    }
                }
                s
            }
        }
    }

    /// Restriction to the nodes of `face`.
    pub fn dirichlet(&self, face: Face) -> BoundaryTrace {
        let idx = match face.side {
            Side::Lower => 0,
            Side::Upper => self.grid.nx[face.axis] - 1,
        };
        let data = self.data.index_axis(Axis(face.axis + 1), idx).to_owned();
        BoundaryTrace { grid: self.grid.clone(), face, data }
    }

    /// Outward normal derivative on `face` by the second-order one-sided
    /// difference.
    pub fn neumann(&self, face: Face) -> BoundaryTrace {
        let ax = Axis(face.axis + 1);
        let n = self.grid.nx[face.axis];
        let h = self.grid.h[face.axis];
        let (i0, i1, i2) = match face.side {
            Side::Lower => (0, 1, 2),
            Side::Upper => (n - 1, n - 2, n - 3),
        };
        let u0 = self.data.index_axis(ax, i0);
        let u1 = self.data.index_axis(ax, i1);
        let u2 = self.data.index_axis(ax, i2);
        let data = (&u0 * 3.0 - &u1 * 4.0 + &u2) / (2.0 * h);
        BoundaryTrace { grid: self.grid.clone(), face, data }
    }

    /// `L₂(Q_T)` and max norms over interior nodes (spatial boundary and the
    /// first and last time levels zeroed).
    pub fn interior_norms(&self) -> (f64, f64) {
        let g = &self.grid;
        let mut data = self.data.clone();
        for (idx, v) in data.indexed_iter_mut() {
            let idx = idx.slice();
            if idx[0] == 0 || idx[0] + 1 == g.nt || g.is_boundary_node(&idx[1..]) {
                *v = 0.0;
            }
        }
        let max = data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let l2 = stencil::integrate(data.mapv(|v| v * v).view(), &g.field_spacings()).sqrt();
        (l2, max)
    }

    /// Copy of the field with the nodes of `trace.face()` replaced.
    pub fn with_face(&self, trace: &BoundaryTrace) -> Result<Field> {
        check_grid(&self.grid, &trace.grid)?;
        let idx = match trace.face.side {
            Side::Lower => 0,
            Side::Upper => self.grid.nx[trace.face.axis] - 1,
        };
        let mut data = self.data.clone();
        data.index_axis_mut(Axis(trace.face.axis + 1), idx).assign(&trace.data);
        Ok(Field { grid: self.grid.clone(), data })
    }

    /// Copies boundary-node values (all faces) from `src`.
    pub fn assign_boundary_from(&mut self, src: &Field) {
        for face in self.grid.faces() {
            let t = src.dirichlet(face);
            let idx = match face.side {
                Side::Lower => 0,
                Side::Upper => self.grid.nx[face.axis] - 1,
            };
            self.data.index_axis_mut(Axis(face.axis + 1), idx).assign(&t.data);
        }
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        Field { grid: self.grid.clone(), data: &self.data + &rhs.data }
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        Field { grid: self.grid.clone(), data: &self.data - &rhs.data }
    }
}

impl Mul for &Field {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        Field { grid: self.grid.clone(), data: &self.data * &rhs.data }
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        Field { grid: self.grid.clone(), data: &self.data * rhs }
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        Field { grid: self.grid.clone(), data: -&self.data }
    }
}

/// Values on one face of `∂Ω` at every time level.
#[derive(Clone, Debug)]
pub struct BoundaryTrace {
    grid: Arc<Grid>,
    face: Face,
    data: ArrayD<f64>,
}

impl BoundaryTrace {
    pub fn from_array(grid: &Arc<Grid>, face: Face, data: ArrayD<f64>) -> Result<Self> {
        if data.shape() != grid.face_shape(face).as_slice() {
            return Err(Error::InvalidGrid(format!(
                "trace shape {:?} does not match face {face} shape {:?}",
                data.shape(),
                grid.face_shape(face)
            )));
        }
        Ok(BoundaryTrace { grid: grid.clone(), face, data })
    }

    pub fn zeros(grid: &Arc<Grid>, face: Face) -> Self {
        BoundaryTrace { grid: grid.clone(), face, data: ArrayD::zeros(IxDyn(&grid.face_shape(face))) }
    }

    pub fn face(&self) -> Face {
        self.face
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Trace dimension that carries spatial axis `axis` (which must be
    /// tangential to the face).
    fn dim_of(&self, axis: usize) -> usize {
        debug_assert_ne!(axis, self.face.axis);
        if axis < self.face.axis {
            axis + 1
        } else {
            axis
        }
    }

    fn tangential_axes(&self) -> Vec<usize> {
        (0..self.grid.dim()).filter(|&j| j != self.face.axis).collect()
    }

    fn with_data(&self, data: ArrayD<f64>) -> Self {
        BoundaryTrace { grid: self.grid.clone(), face: self.face, data }
    }

    pub fn dt(&self) -> Self {
        self.with_data(stencil::d1(self.data.view(), 0, self.grid.tau))
    }

    pub fn dtt(&self) -> Self {
        self.with_data(stencil::d2(self.data.view(), 0, self.grid.tau))
    }

    /// Derivative along a tangential spatial axis.
    pub fn tangential(&self, axis: usize) -> Self {
        self.with_data(stencil::d1(self.data.view(), self.dim_of(axis), self.grid.h[axis]))
    }

    fn tangential2(&self, i: usize, j: usize) -> Self {
        if i == j {
            self.with_data(stencil::d2(self.data.view(), self.dim_of(i), self.grid.h[i]))
        } else {
            self.tangential(i).tangential(j)
        }
    }

    /// `∫_{face × (0,T)} g`.
    pub fn integrate(&self) -> f64 {
        stencil::integrate(self.data.view(), &self.grid.face_spacings(self.face))
    }

    pub fn l2_sq(&self) -> f64 {
        stencil::integrate(self.data.mapv(|v| v * v).view(), &self.grid.face_spacings(self.face))
    }

    /// `Σ_{j≠i} ‖∂_j g‖² + ‖g‖²` over the face.
    pub fn h10_sq(&self) -> f64 {
        self.l2_sq() + self.tangential_axes().into_iter().map(|j| self.tangential(j).l2_sq()).sum::<f64>()
    }

    /// First and second tangential derivatives plus `g` and `g_t`.
    pub fn h21_sq(&self) -> f64 {
        let axes = self.tangential_axes();
        let mut s = self.l2_sq() + self.dt().l2_sq();
        for &j in &axes {
            s += self.tangential(j).l2_sq();
            for &k in &axes {
                s += self.tangential2(j, k).l2_sq();
            }
        }
        s
    }

    pub fn sub(&self, other: &BoundaryTrace) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        if self.face != other.face {
            return Err(Error::InvalidParameter(format!(
                "trace faces differ: {} vs {}",
                self.face, other.face
            )));
        }
        Ok(self.with_data(&self.data - &other.data))
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.with_data(&self.data * c)
    }

    pub fn plus(&self, other: &BoundaryTrace) -> Self {
        self.with_data(&self.data + &other.data)
    }
}

/// Sum of per-face `H^{2,1}` squared norms over a set of traces.
pub fn lateral_h21_sq(traces: &[BoundaryTrace]) -> f64 {
    traces.iter().map(BoundaryTrace::h21_sq).sum()
}

/// Sum of per-face `H^{1,0}` squared norms over a set of traces.
pub fn lateral_h10_sq(traces: &[BoundaryTrace]) -> f64 {
    traces.iter().map(BoundaryTrace::h10_sq).sum()
}
