//! On-disk forms of reach-set results and the DP table. Wall-clock timings
//! are deliberately left out so repeated runs write identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Backend, BoundaryPoint, DirectionStatus, DpTable, Interpolation, ReachSetResult, Timings};
use crate::chance::{AnchorMode, AnchorResult, EmptyCertificate};
use crate::error::{invalid, Result};

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorJson {
    pub mode: AnchorMode,
    pub point: Vec<f64>,
    pub controls: Vec<f64>,
    pub lower_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexJson {
    /// Direction index and step length of the line search behind the
    /// vertex; absent when the vertex is an anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub point: Vec<f64>,
    pub lower_bound: f64,
    pub controls: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryJson {
    pub direction: usize,
    pub anchor_mode: AnchorMode,
    pub theta: f64,
    pub point: Vec<f64>,
    pub status: DirectionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachSetJson {
    pub alpha: f64,
    pub backend: Backend,
    /// First anchor; `anchors` lists all of them when both modes ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorJson>,
    pub anchors: Vec<AnchorJson>,
    pub vertices: Vec<VertexJson>,
    pub boundary_points: Vec<BoundaryJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty: Option<EmptyCertificate>,
}

impl ReachSetJson {
    pub fn from_result(r: &ReachSetResult) -> Self {
        let vertices = match &r.polytope {
            Some(p) => p
                .vertices()
                .iter()
                .zip(&r.vertex_controls)
                .zip(&r.vertex_bounds)
                .zip(&r.vertex_origins)
                .map(|(((v, u), &lb), o)| VertexJson {
                    direction: o.map(|i| r.boundary_points[i].direction),
                    theta: o.map(|i| r.boundary_points[i].theta),
                    point: vec_of(v),
                    lower_bound: lb,
                    controls: vec_of(u),
                })
                .collect(),
            None => Vec::new(),
        };
        let anchors: Vec<AnchorJson> = r
            .anchors
            .iter()
            .map(|a| AnchorJson {
                mode: a.mode,
                point: vec_of(&a.x_anchor),
                controls: vec_of(&a.u),
                lower_bound: a.lower_bound,
                radius: a.radius,
            })
            .collect();
        Self {
            alpha: r.alpha,
            backend: r.backend,
            anchor: anchors.first().cloned(),
            anchors,
            vertices,
            boundary_points: r
                .boundary_points
                .iter()
                .map(|b| BoundaryJson {
                    direction: b.direction,
                    anchor_mode: b.anchor_mode,
                    theta: b.theta,
                    point: vec_of(&b.point),
                    status: b.status,
                    lower_bound: b.lower_bound,
                    controls: b.controls.as_ref().map(vec_of),
                    message: b.message.clone(),
                })
                .collect(),
            empty: r.empty.clone(),
        }
    }

    /// Rebuilds the in-memory result; the hull is recomputed from the
    /// certified boundary points.
    pub fn into_result(self) -> Result<ReachSetResult> {
        let mut r = ReachSetResult {
            alpha: self.alpha,
            backend: self.backend,
            anchors: self
                .anchors
                .into_iter()
                .map(|a| AnchorResult {
                    x_anchor: DVector::from_vec(a.point),
                    u: DVector::from_vec(a.controls),
                    lower_bound: a.lower_bound,
                    radius: a.radius,
                    mode: a.mode,
                })
                .collect(),
            boundary_points: self
                .boundary_points
                .into_iter()
                .map(|b| BoundaryPoint {
                    direction: b.direction,
                    anchor_mode: b.anchor_mode,
                    point: DVector::from_vec(b.point),
                    theta: b.theta,
                    controls: b.controls.map(DVector::from_vec),
                    lower_bound: b.lower_bound,
                    status: b.status,
                    message: b.message,
                })
                .collect(),
            polytope: None,
            vertex_controls: Vec::new(),
            vertex_bounds: Vec::new(),
            vertex_origins: Vec::new(),
            empty: self.empty,
            timings: Timings::default(),
        };
        if r.empty.is_none() {
            r.assemble()?;
        }
        Ok(r)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_reach_json(r: &ReachSetResult, path: &Path) -> Result<()> {
    write_json(&ReachSetJson::from_result(r), path)
}

pub fn read_reach_json(path: &Path) -> Result<ReachSetResult> {
    let j: ReachSetJson = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
    j.into_result()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationJson {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub vertices: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub pairs: Vec<(usize, usize)>,
}

impl From<&Interpolation> for InterpolationJson {
    fn from(i: &Interpolation) -> Self {
        Self {
            alpha1: i.alpha1,
            alpha2: i.alpha2,
            beta: i.beta,
            gamma: i.gamma,
            vertices: i.polytope.vertices().iter().map(vec_of).collect(),
            controls: i.controls.iter().map(vec_of).collect(),
            pairs: i.pairs.clone(),
        }
    }
}

fn header(w: &mut impl Write, n: usize, extra: &[String]) -> Result<()> {
    let mut cols: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    cols.extend_from_slice(extra);
    writeln!(w, "{}", cols.join(","))?;
    Ok(())
}

/// One row per polytope vertex: coordinates then the certified bound.
pub fn write_vertices_csv(r: &ReachSetResult, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let Some(p) = &r.polytope else {
        writeln!(w, "lower_bound")?;
        return Ok(());
    };
    header(&mut w, p.dim(), &["lower_bound".into()])?;
    for (v, lb) in p.vertices().iter().zip(&r.vertex_bounds) {
        let row: Vec<String> = v.iter().chain(std::iter::once(lb)).map(|x| format!("{x:.12e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Grid coordinates followed by `V_0 … V_N` at each grid point.
pub fn write_dp_csv(table: &DpTable, path: &Path) -> Result<()> {
    if table.values.is_empty() {
        return invalid("empty DP table");
    }
    let mut w = BufWriter::new(File::create(path)?);
    let extra: Vec<String> = (0..table.values.len()).map(|k| format!("V{k}")).collect();
    header(&mut w, table.dim(), &extra)?;
    for flat in 0..table.num_points() {
        let mut row: Vec<String> = table.point(flat).iter().map(|x| format!("{x:.12e}")).collect();
        row.extend(table.values.iter().map(|v| format!("{:.12e}", v[flat])));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Closed counter-clockwise boundary of a 2D polytope (first vertex
/// repeated at the end), or the two endpoints of a 1D interval.
pub fn write_boundary_csv(poly: &crate::geometry::VPolytope, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match poly.dim() {
        1 => {
            let xs: Vec<f64> = poly.vertices().iter().map(|v| v[0]).collect();
            writeln!(w, "x0")?;
            writeln!(w, "{:.12e}", xs.iter().cloned().fold(f64::INFINITY, f64::min))?;
            writeln!(w, "{:.12e}", xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))?;
        }
        2 => {
            let hull = crate::geometry::convex_hull_2d(poly.vertices())?;
            let v = hull.vertices();
            writeln!(w, "x0,x1")?;
            for p in v.iter().chain(v.first()) {
                writeln!(w, "{:.12e},{:.12e}", p[0], p[1])?;
            }
        }
        _ => return invalid("boundary export needs a 1D or 2D polytope"),
    }
    Ok(())
}
