//! Text persistence: fields as CSV `(i1, …, j, value)`, grids as JSON, and
//! directory layouts for triples and measurement data.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{ArrayD, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use crate::cip::{CIPData, Completeness, TraceSet};
use crate::error::{Error, Result};
use crate::grid::{BoundaryTrace, Face, Field, Grid, SpaceField};
use crate::mfg::{ConvergenceReport, MFGTriple};

/// Arrays with a leading time axis are written with the time index in the
/// last index column.
fn write_array(path: &Path, names: &[String], data: &ArrayD<f64>, timed: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = names.to_vec();
    if timed {
        header.rotate_left(1);
    }
    header.push("value".into());
    w.write_record(&header)?;
    for (idx, v) in data.indexed_iter() {
        let mut row: Vec<String> = idx.slice().iter().map(|i| i.to_string()).collect();
        if timed {
            row.rotate_left(1);
        }
        row.push(format!("{v:e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_array(path: &Path, shape: &[usize], timed: bool) -> Result<ArrayD<f64>> {
    let bad = |msg: String| Error::InvalidGrid(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path)?;
    let mut data = ArrayD::from_elem(IxDyn(shape), f64::NAN);
    let mut count = 0usize;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != shape.len() + 1 {
            return Err(bad(format!("expected {} columns, found {}", shape.len() + 1, rec.len())));
        }
        let mut idx = rec
            .iter()
            .take(shape.len())
            .map(|s| s.parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if timed {
            idx.rotate_right(1);
        }
        if idx.iter().zip(shape).any(|(i, n)| i >= n) {
            return Err(bad(format!("index {idx:?} outside shape {shape:?}")));
        }
        data[IxDyn(&idx)] = rec[shape.len()].parse::<f64>().map_err(|e| bad(e.to_string()))?;
        count += 1;
    }
    if count != data.len() || data.iter().any(|v| v.is_nan()) {
        return Err(bad(format!("{count} rows for {} nodes", data.len())));
    }
    Ok(data)
}

fn space_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("i{i}")).collect()
}

fn field_names(dim: usize) -> Vec<String> {
    let mut v = vec!["j".to_string()];
    v.extend(space_names(dim));
    v
}

pub fn write_field(path: &Path, f: &Field) -> Result<()> {
    write_array(path, &field_names(f.grid().dim()), f.data(), true)
}

pub fn read_field(path: &Path, grid: &Arc<Grid>) -> Result<Field> {
    Field::from_array(grid, read_array(path, &grid.field_shape(), true)?)
}

pub fn write_space_field(path: &Path, f: &SpaceField) -> Result<()> {
    write_array(path, &space_names(f.grid().dim()), f.data(), false)
}

pub fn read_space_field(path: &Path, grid: &Arc<Grid>) -> Result<SpaceField> {
    SpaceField::from_array(grid, read_array(path, &grid.space_shape(), false)?)
}

pub fn write_trace(path: &Path, t: &BoundaryTrace) -> Result<()> {
    let mut names = vec!["j".to_string()];
    names.extend((1..=t.grid().dim()).filter(|&i| i != t.face().axis + 1).map(|i| format!("i{i}")));
    write_array(path, &names, t.data(), true)
}

pub fn read_trace(path: &Path, grid: &Arc<Grid>, face: Face) -> Result<BoundaryTrace> {
    BoundaryTrace::from_array(grid, face, read_array(path, &grid.face_shape(face), true)?)
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(grid)?)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Arc<Grid>> {
    Grid::from_json(&fs::read_to_string(path)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Writes `grid.json`, `u.csv`, `m.csv`, `k.csv`, `f.csv` and
/// `provenance.json` (the given metadata plus the convergence report).
pub fn write_triple(dir: &Path, triple: &MFGTriple, f: &Field, provenance: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_grid(&dir.join("grid.json"), triple.grid())?;
    write_field(&dir.join("u.csv"), &triple.u)?;
    write_field(&dir.join("m.csv"), &triple.m)?;
    write_space_field(&dir.join("k.csv"), &triple.k)?;
    write_field(&dir.join("f.csv"), f)?;
    let prov = serde_json::json!({ "run": provenance, "convergence": triple.report });
    write_json(&dir.join("provenance.json"), &prov)
}

/// Reads a triple directory back; returns the triple and `f`.
pub fn read_triple(dir: &Path) -> Result<(MFGTriple, Field)> {
    let grid = read_grid(&dir.join("grid.json"))?;
    let u = read_field(&dir.join("u.csv"), &grid)?;
    let m = read_field(&dir.join("m.csv"), &grid)?;
    let k = read_space_field(&dir.join("k.csv"), &grid)?;
    let f = read_field(&dir.join("f.csv"), &grid)?;
    let mut triple = MFGTriple::new(u, m, k)?;
    let prov: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("provenance.json"))?)?;
    triple.report = serde_json::from_value::<Option<ConvergenceReport>>(prov["convergence"].clone())?;
    Ok((triple, f))
}

/// Metadata stored next to measurement data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Completeness,
    /// Snapshot time.
    pub t0: f64,
    /// Noise level the data were perturbed with, if any.
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    /// Faces carrying Neumann data.
    pub neumann_faces: Vec<Face>,
}

const SETS: [&str; 4] = ["g0", "g1", "p0", "p1"];

fn trace_sets(data: &CIPData) -> [&TraceSet; 4] {
    [&data.g0, &data.g1, &data.p0, &data.p1]
}

/// Writes snapshots `u0.csv`, `m0.csv`, per-face traces
/// `{g0,g1,p0,p1}_s{0,1,2}_{face}.csv`, `grid.json` and `manifest.json`.
pub fn write_cip(dir: &Path, data: &CIPData, delta: Option<f64>, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grid = data.grid();
    write_grid(&dir.join("grid.json"), grid)?;
    write_space_field(&dir.join("u0.csv"), &data.u0)?;
    write_space_field(&dir.join("m0.csv"), &data.m0)?;
    for (name, set) in SETS.iter().zip(trace_sets(data)) {
        for s in 0..3 {
            for (face, tr) in set.faces.iter().zip(&set.by_order[s]) {
                write_trace(&dir.join(format!("{name}_s{s}_{}.csv", face.tag())), tr)?;
            }
        }
    }
    let manifest =
        Manifest { mode: data.completeness, t0: grid.time(grid.mid_level()), delta, seed, neumann_faces: data.g1.faces.clone() };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_cip(dir: &Path) -> Result<(CIPData, Manifest)> {
    let grid = read_grid(&dir.join("grid.json"))?;
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let read_set = |name: &str, faces: &[Face]| -> Result<TraceSet> {
        let mut by_order: [Vec<BoundaryTrace>; 3] = Default::default();
        for (s, slot) in by_order.iter_mut().enumerate() {
            for &face in faces {
                slot.push(read_trace(&dir.join(format!("{name}_s{s}_{}.csv", face.tag())), &grid, face)?);
            }
        }
        Ok(TraceSet { faces: faces.to_vec(), by_order })
    };
    let all = grid.faces();
    let data = CIPData {
        completeness: manifest.mode,
        u0: read_space_field(&dir.join("u0.csv"), &grid)?,
        m0: read_space_field(&dir.join("m0.csv"), &grid)?,
        g0: read_set("g0", &all)?,
        g1: read_set("g1", &manifest.neumann_faces)?,
        p0: read_set("p0", &all)?,
        p1: read_set("p1", &manifest.neumann_faces)?,
    };
    Ok((data, manifest))
}
