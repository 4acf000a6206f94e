//! Single-measurement data of the coefficient inverse problem: snapshots at
//! `t₀ = T/2`, lateral Cauchy data and their first two time derivatives,
//! noise injection at a prescribed level and the data distance `δ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::grid::{BoundaryTrace, Face, Field, Grid, SpaceField};
use crate::mfg::MFGTriple;

/// Largest Dirichlet difference treated as zero off `Γ₁⁺` in incomplete mode.
pub const ZERO_DIRICHLET_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Completeness {
    /// Dirichlet and Neumann data on all of `S_T`.
    #[default]
    Full,
    /// Neumann data only on `Γ₁T⁺`.
    Incomplete,
}

/// Traces of one quantity and of its first two time derivatives, one
/// entry per face.
#[derive(Clone, Debug)]
pub struct TraceSet {
    pub faces: Vec<Face>,
    /// `by_order[s][i]` is `∂_t^s` of the trace on `faces[i]`.
    pub by_order: [Vec<BoundaryTrace>; 3],
}

impl TraceSet {
    fn dirichlet(fd: &[Field; 3], faces: &[Face]) -> Self {
        TraceSet { faces: faces.to_vec(), by_order: std::array::from_fn(|s| faces.iter().map(|&fc| fd[s].dirichlet(fc)).collect()) }
    }

    fn neumann(fd: &[Field; 3], faces: &[Face]) -> Self {
        TraceSet { faces: faces.to_vec(), by_order: std::array::from_fn(|s| faces.iter().map(|&fc| fd[s].neumann(fc)).collect()) }
    }

    pub fn get(&self, s: usize, face: Face) -> Option<&BoundaryTrace> {
        self.faces.iter().position(|f| *f == face).map(|i| &self.by_order[s][i])
    }

    fn sub(&self, other: &TraceSet) -> Result<TraceSet> {
        if self.faces != other.faces {
            return Err(Error::ModeMismatch);
        }
        let by_order = std::array::from_fn(|s| {
            self.by_order[s].iter().zip(&other.by_order[s]).map(|(a, b)| a.sub(b)).collect::<Result<Vec<_>>>()
        });
        let [a, b, c] = by_order;
        Ok(TraceSet { faces: self.faces.clone(), by_order: [a?, b?, c?] })
    }

    fn restrict(&self, faces: &[Face]) -> TraceSet {
        let idx: Vec<usize> = faces.iter().filter_map(|f| self.faces.iter().position(|g| g == f)).collect();
        TraceSet {
            faces: idx.iter().map(|&i| self.faces[i]).collect(),
            by_order: std::array::from_fn(|s| idx.iter().map(|&i| self.by_order[s][i].clone()).collect()),
        }
    }

    fn h21_sq(&self, s: usize) -> f64 {
        self.by_order[s].iter().map(BoundaryTrace::h21_sq).sum()
    }

    fn h10_sq(&self, s: usize) -> f64 {
        self.by_order[s].iter().map(BoundaryTrace::h10_sq).sum()
    }

    /// Largest gap between the stored `s = 1, 2` traces and time
    /// differences of the stored `s = 0, 1` traces, relative to the size of
    /// the stored trace.
    fn consistency(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.faces.len() {
            for s in 0..2 {
                let d = self.by_order[s][i].dt();
                let stored = &self.by_order[s + 1][i];
                let gap = interior_time_max(&(d.sub(stored).expect("same face")));
                worst = worst.max(gap / stored.max_abs().max(1.0));
            }
        }
        worst
    }
}

/// Largest value away from the two time levels nearest each end, where a
/// difference of the one-sided end derivative is only first order.
fn interior_time_max(t: &BoundaryTrace) -> f64 {
    let nt = t.data().len_of(ndarray::Axis(0));
    t.data()
        .slice_axis(ndarray::Axis(0), ndarray::Slice::from(2..nt - 2))
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug)]
pub struct CIPData {
    pub completeness: Completeness,
    /// `u(·, T/2)`.
    pub u0: SpaceField,
    /// `m(·, T/2)`.
    pub m0: SpaceField,
    /// Dirichlet traces of `u` on all faces.
    pub g0: TraceSet,
    /// Neumann traces of `u`: all faces when full, `Γ₁⁺` only when incomplete.
    pub g1: TraceSet,
    pub p0: TraceSet,
    pub p1: TraceSet,
}

fn derivatives(f: &Field) -> [Field; 3] {
    let ft = f.dt();
    let ftt = f.dtt();
    [f.clone(), ft, ftt]
}

fn neumann_faces(grid: &Grid, mode: Completeness) -> Vec<Face> {
    match mode {
        Completeness::Full => grid.faces(),
        Completeness::Incomplete => vec![Face::gamma1_plus()],
    }
}

/// Extracts the data of a solution triple. Time derivatives of traces are
/// taken on the parent fields before tracing.
pub fn extract(triple: &MFGTriple, completeness: Completeness) -> CIPData {
    let g = triple.grid();
    let j0 = g.mid_level();
    let faces = g.faces();
    let nfaces = neumann_faces(g, completeness);
    let ud = derivatives(&triple.u);
    let md = derivatives(&triple.m);
    CIPData {
        completeness,
        u0: triple.u.level(j0),
        m0: triple.m.level(j0),
        g0: TraceSet::dirichlet(&ud, &faces),
        g1: TraceSet::neumann(&ud, &nfaces),
        p0: TraceSet::dirichlet(&md, &faces),
        p1: TraceSet::neumann(&md, &nfaces),
    }
}

/// One line of the data budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLine {
    pub name: String,
    pub value: f64,
}

impl CIPData {
    pub fn grid(&self) -> &Arc<Grid> {
        self.u0.grid()
    }

    /// Worst relative mismatch between stored derivative traces and time
    /// differences of lower-order traces. It is `O(τ²)` for smooth data.
    pub fn derivative_consistency(&self) -> f64 {
        [&self.g0, &self.g1, &self.p0, &self.p1].iter().map(|t| t.consistency()).fold(0.0, f64::max)
    }

    /// The norms of the data budget, evaluated on this dataset as if it were
    /// a difference of two datasets.
    pub fn budget(&self, mode: Completeness) -> Result<Vec<BudgetLine>> {
        if mode == Completeness::Full && self.completeness == Completeness::Incomplete {
            return Err(Error::ModeMismatch);
        }
        let mut lines = Vec::new();
        let mut push = |name: String, sq: f64| lines.push(BudgetLine { name, value: sq.sqrt() });
        match mode {
            Completeness::Full => {
                push("u0 H1".into(), self.u0.h1_sq());
                push("m0 H1".into(), self.m0.h1_sq());
                for s in 0..3 {
                    push(format!("g0 s={s} H21(S_T)"), self.g0.h21_sq(s));
                    push(format!("p0 s={s} H21(S_T)"), self.p0.h21_sq(s));
                    push(format!("g1 s={s} H10(S_T)"), self.g1.h10_sq(s));
                    push(format!("p1 s={s} H10(S_T)"), self.p1.h10_sq(s));
                }
            }
            Completeness::Incomplete => {
                for set in [&self.g0, &self.p0] {
                    for (i, face) in set.faces.iter().enumerate() {
                        if *face == Face::gamma1_plus() {
                            continue;
                        }
                        for s in 0..3 {
                            let max = set.by_order[s][i].max_abs();
                            if max > ZERO_DIRICHLET_TOL {
                                return Err(Error::IncompleteDirichlet { face: face.to_string(), max });
                            }
                        }
                    }
                }
                let g1p = [Face::gamma1_plus()];
                let (g0, p0) = (self.g0.restrict(&g1p), self.p0.restrict(&g1p));
                let (g1, p1) = (self.g1.restrict(&g1p), self.p1.restrict(&g1p));
                push("u0 H2".into(), self.u0.h2_sq());
                push("m0 H1".into(), self.m0.h1_sq());
                for s in 0..3 {
                    push(format!("g0 s={s} H21(G1+)"), g0.h21_sq(s));
                    push(format!("p0 s={s} H21(G1+)"), p0.h21_sq(s));
                    push(format!("g1 s={s} H10(G1+)"), g1.h10_sq(s));
                    push(format!("p1 s={s} H10(G1+)"), p1.h10_sq(s));
                }
            }
        }
        Ok(lines)
    }

    /// Componentwise `self − other`. Both datasets must share grid and mode.
    pub fn difference(&self, other: &CIPData) -> Result<CIPData> {
        if !self.grid().same_as(other.grid()) {
            return Err(Error::GridMismatch);
        }
        if self.completeness != other.completeness {
            return Err(Error::ModeMismatch);
        }
        Ok(CIPData {
            completeness: self.completeness,
            u0: &self.u0 - &other.u0,
            m0: &self.m0 - &other.m0,
            g0: self.g0.sub(&other.g0)?,
            g1: self.g1.sub(&other.g1)?,
            p0: self.p0.sub(&other.p0)?,
            p1: self.p1.sub(&other.p1)?,
        })
    }
}

/// The experimental `δ`: the largest budget line of `d1 − d2`.
pub fn measure_delta(d1: &CIPData, d2: &CIPData, mode: Completeness) -> Result<f64> {
    Ok(delta_lines(d1, d2, mode)?.iter().map(|l| l.value).fold(0.0, f64::max))
}

/// Every budget line of `d1 − d2`.
pub fn delta_lines(d1: &CIPData, d2: &CIPData, mode: Completeness) -> Result<Vec<BudgetLine>> {
    d1.difference(d2)?.budget(mode)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseProfile {
    /// Independent uniform values per node.
    WhitePerNode,
    /// Random combination of the five lowest cosine modes of the
    /// component's domain.
    #[default]
    SmoothLowMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub delta: f64,
    pub seed: u64,
    #[serde(default)]
    pub profile: NoiseProfile,
}

/// Margin keeping the rescaled lines strictly below `δ` despite rounding.
const SHARPNESS: f64 = 1.0 - 1e-12;

/// Multi-indices of the five lowest modes in `dim` variables, ordered by
/// total degree and then lexicographically.
fn lowest_modes(dim: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut degree = 0;
    while out.len() < 5 {
        let mut idx = vec![0usize; dim];
        loop {
            if idx.iter().sum::<usize>() == degree {
                out.push(idx.clone());
            }
            // Odometer over [0, degree]^dim.
            let mut k = dim;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                if idx[k] < degree {
                    idx[k] += 1;
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&v| v == 0) {
                break;
            }
        }
        degree += 1;
    }
    out.truncate(5);
    out
}

/// Noise on an array whose axes span `[0, extent_i]` with the given spacings.
fn noise_array(shape: &[usize], spacings: &[f64], profile: NoiseProfile, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    match profile {
        NoiseProfile::WhitePerNode => ArrayD::from_shape_fn(ndarray::IxDyn(shape), |_| rng.random_range(-1.0..=1.0)),
        NoiseProfile::SmoothLowMode => {
            let modes = lowest_modes(shape.len());
            let coef: Vec<f64> = modes.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
            ArrayD::from_shape_fn(ndarray::IxDyn(shape), |idx| {
                let idx = ndarray::Dimension::slice(&idx);
                modes
                    .iter()
                    .zip(&coef)
                    .map(|(k, c)| {
                        c * k
                            .iter()
                            .enumerate()
                            .map(|(ax, &kk)| {
                                let len = spacings[ax] * (shape[ax] - 1) as f64;
                                (PI * kk as f64 * idx[ax] as f64 * spacings[ax] / len).cos()
                            })
                            .product::<f64>()
                    })
                    .sum()
            })
        }
    }
}

fn noisy_traces(grid: &Arc<Grid>, faces: &[Face], profile: NoiseProfile, rng: &mut ChaCha8Rng) -> Result<TraceSet> {
    let base: Vec<BoundaryTrace> = faces
        .iter()
        .map(|&f| BoundaryTrace::from_array(grid, f, noise_array(&grid.face_shape(f), &grid.face_spacings(f), profile, rng)))
        .collect::<Result<_>>()?;
    let d1: Vec<BoundaryTrace> = base.iter().map(BoundaryTrace::dt).collect();
    let d2: Vec<BoundaryTrace> = base.iter().map(BoundaryTrace::dtt).collect();
    Ok(TraceSet { faces: faces.to_vec(), by_order: [base, d1, d2] })
}

fn scale_set(set: &TraceSet, c: f64) -> TraceSet {
    TraceSet { faces: set.faces.clone(), by_order: std::array::from_fn(|s| set.by_order[s].iter().map(|t| t.scaled(c)).collect()) }
}

fn add_set(a: &TraceSet, b: &TraceSet) -> TraceSet {
    TraceSet {
        faces: a.faces.clone(),
        by_order: std::array::from_fn(|s| a.by_order[s].iter().zip(&b.by_order[s]).map(|(x, y)| x.plus(y)).collect()),
    }
}

fn rescale(worst: f64, delta: f64) -> f64 {
    if worst > 0.0 {
        delta * SHARPNESS / worst
    } else {
        0.0
    }
}

/// Adds noise of level `δ` to every component.
///
/// Each component's noise is rescaled so that its largest budget line
/// equals `δ(1 − 10⁻¹²)`; the measured distance to the clean data is
/// therefore just below `δ`. In incomplete mode the Dirichlet traces off
/// `Γ₁⁺` are left clean, as the budget requires.
pub fn inject_noise(data: &CIPData, noise: &NoiseSpec) -> Result<CIPData> {
    if !(noise.delta >= 0.0) || !noise.delta.is_finite() {
        return Err(Error::InvalidParameter(format!("noise level must be non-negative, got {}", noise.delta)));
    }
    if noise.delta == 0.0 {
        return Ok(data.clone());
    }
    let g = data.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let space = g.space_shape();
    let sp = g.h().to_vec();
    let full = data.completeness == Completeness::Full;

    let eu = SpaceField::from_array(&g, noise_array(&space, &sp, noise.profile, &mut rng))?;
    let eu = &eu * rescale(if full { eu.h1_sq() } else { eu.h2_sq() }.sqrt(), noise.delta);
    let em = SpaceField::from_array(&g, noise_array(&space, &sp, noise.profile, &mut rng))?;
    let em = &em * rescale(em.h1_sq().sqrt(), noise.delta);

    let dirichlet_faces = match data.completeness {
        Completeness::Full => data.g0.faces.clone(),
        Completeness::Incomplete => vec![Face::gamma1_plus()],
    };
    let mut sets = Vec::new();
    for (set, dirichlet) in [(&data.g0, true), (&data.g1, false), (&data.p0, true), (&data.p1, false)] {
        let faces = if dirichlet { dirichlet_faces.clone() } else { set.faces.clone() };
        let n = noisy_traces(&g, &faces, noise.profile, &mut rng)?;
        let worst = (0..3)
            .map(|s| if dirichlet { n.h21_sq(s) } else { n.h10_sq(s) }.sqrt())
            .fold(0.0, f64::max);
        let n = scale_set(&n, rescale(worst, noise.delta));
        // Pad with zero traces on faces that must stay clean.
        let padded = TraceSet {
            faces: set.faces.clone(),
            by_order: std::array::from_fn(|s| {
                set.faces
                    .iter()
                    .map(|f| n.get(s, *f).cloned().unwrap_or_else(|| BoundaryTrace::zeros(&g, *f)))
                    .collect()
            }),
        };
        sets.push(add_set(set, &padded));
    }
    let [g0, g1, p0, p1]: [TraceSet; 4] = sets.try_into().expect("four trace sets");
    Ok(CIPData { completeness: data.completeness, u0: &data.u0 + &eu, m0: &data.m0 + &em, g0, g1, p0, p1 })
}
