//! Convex-set primitives: H- and V-polytopes, hulls, affine maps, scaled
//! Minkowski sums and direction sets.
//!
//! Constraint sets (target tubes, input sets) live in H-representation and
//! computed reach sets in V-representation. Conversions are limited to the
//! cheap cases (boxes and planar hulls); above two dimensions point-in-hull
//! questions are answered by linear-programming feasibility.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lpsolve::{solve_lp, LinearProgram, LpStatus};
use crate::DEFAULT_TOL;

/// The set `{x : normals·x <= offsets}`.
#[derive(Clone, Debug)]
pub struct HPolytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
    empty: OnceLock<bool>,
    bounded: OnceLock<bool>,
}

impl HPolytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return invalid(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            ));
        }
        for (i, row) in normals.row_iter().enumerate() {
            if row.iter().all(|v| *v == 0.0) && normals.ncols() > 0 {
                return invalid(format!("normal {i} is the zero vector"));
            }
            if row.iter().any(|v| !v.is_finite()) || !offsets[i].is_finite() {
                return invalid(format!("half-space {i} has non-finite data"));
            }
        }
        Ok(Self {
            normals,
            offsets,
            empty: OnceLock::new(),
            bounded: OnceLock::new(),
        })
    }

    /// Builds from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>], offsets: &[f64]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return invalid("ragged normal matrix");
        }
        let normals = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(normals, DVector::from_column_slice(offsets))
    }

    /// The whole of `R^0`, used as the input set of uncontrolled systems.
    pub fn zero_dimensional() -> Self {
        Self::new(DMatrix::zeros(0, 0), DVector::zeros(0)).expect("empty polytope is well formed")
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn row(&self, i: usize) -> (DVector<f64>, f64) {
        (self.normals.row(i).transpose(), self.offsets[i])
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        contains_point(self, x, tol)
    }

    fn support_lp(&self, direction: &DVector<f64>) -> LinearProgram {
        let n = self.dim();
        let mut lp = LinearProgram::new(n);
        lp.objective = direction.iter().map(|v| -v).collect();
        for i in 0..self.num_rows() {
            let terms = (0..n)
                .filter(|&j| self.normals[(i, j)] != 0.0)
                .map(|j| (j, self.normals[(i, j)]))
                .collect();
            lp.add_ineq(terms, self.offsets[i]);
        }
        lp
    }

    /// `max direction·x` over the set: `Ok(None)` if empty, `+inf` if unbounded.
    pub fn support(&self, direction: &DVector<f64>) -> Result<Option<f64>> {
        if direction.len() != self.dim() {
            return invalid("support direction has the wrong dimension");
        }
        let sol = solve_lp(&self.support_lp(direction))?;
        Ok(match sol.status {
            LpStatus::Optimal => Some(-sol.objective_value),
            LpStatus::Unbounded => Some(f64::INFINITY),
            LpStatus::Infeasible => None,
            LpStatus::IterationLimit => {
                return Err(crate::Error::ResourceExhausted("support LP hit the iteration cap".into()))
            }
        })
    }

    pub fn is_empty(&self) -> Result<bool> {
        if let Some(v) = self.empty.get() {
            return Ok(*v);
        }
        let empty = self.support(&DVector::zeros(self.dim()))?.is_none();
        Ok(*self.empty.get_or_init(|| empty))
    }

    /// Bounded iff the support is finite along every `±e_i`.
    pub fn is_bounded(&self) -> Result<bool> {
        if let Some(v) = self.bounded.get() {
            return Ok(*v);
        }
        let mut bounded = true;
        if !self.is_empty()? {
            'outer: for i in 0..self.dim() {
                for s in [1.0, -1.0] {
                    let mut d = DVector::zeros(self.dim());
                    d[i] = s;
                    if self.support(&d)?.is_some_and(|v| v.is_infinite()) {
                        bounded = false;
                        break 'outer;
                    }
                }
            }
        }
        Ok(*self.bounded.get_or_init(|| bounded))
    }

    /// Per-coordinate bounds when every half-space is axis aligned.
    /// Coordinates without a constraint get infinite bounds.
    pub fn as_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.dim();
        let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(n, f64::INFINITY);
        for i in 0..self.num_rows() {
            let row = self.normals.row(i);
            let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let j = nz[0];
            let v = self.offsets[i] / row[j];
            if row[j] > 0.0 {
                hi[j] = hi[j].min(v);
            } else {
                lo[j] = lo[j].max(v);
            }
        }
        Some((lo, hi))
    }

    /// Axis-aligned bounding box (LP support along each axis).
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        if let Some(b) = self.as_box() {
            return Ok(b);
        }
        let n = self.dim();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for i in 0..n {
            let mut d = DVector::zeros(n);
            d[i] = 1.0;
            hi[i] = self.support(&d)?.ok_or_else(|| crate::Error::InvalidArgument("empty polytope".into()))?;
            d[i] = -1.0;
            lo[i] = -self.support(&d)?.ok_or_else(|| crate::Error::InvalidArgument("empty polytope".into()))?;
        }
        Ok((lo, hi))
    }

    /// Largest `t >= 0` with `point + t·direction` inside (requires `point` inside).
    pub fn ray_extent(&self, point: &DVector<f64>, direction: &DVector<f64>) -> f64 {
        let mut t = f64::INFINITY;
        for i in 0..self.num_rows() {
            let a = self.normals.row(i);
            let ad = a.dot(&direction.transpose());
            if ad > 1e-15 {
                let slack = self.offsets[i] - a.dot(&point.transpose());
                t = t.min((slack / ad).max(0.0));
            }
        }
        t
    }

    pub fn to_json(&self) -> PolytopeJson {
        PolytopeJson::H {
            normals: self.normals.row_iter().map(|r| r.iter().copied().collect()).collect(),
            offsets: self.offsets.iter().copied().collect(),
        }
    }
}

impl PartialEq for HPolytope {
    fn eq(&self, other: &Self) -> bool {
        self.normals == other.normals && self.offsets == other.offsets
    }
}

impl Serialize for HPolytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HPolytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match PolytopeJson::deserialize(d)? {
            PolytopeJson::H { normals, offsets } => {
                HPolytope::from_rows(&normals, &offsets).map_err(serde::de::Error::custom)
            }
            PolytopeJson::V { .. } => Err(serde::de::Error::custom("expected a half-space polytope")),
        }
    }
}

/// Wire format for polytopes: `{"normals", "offsets"}` or `{"vertices"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PolytopeJson {
    H { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
    V { vertices: Vec<Vec<f64>> },
}

/// Convex hull of a finite, nonempty point list.
#[derive(Clone, Debug, PartialEq)]
pub struct VPolytope {
    vertices: Vec<DVector<f64>>,
}

impl VPolytope {
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = vertices.first() else {
            return invalid("a V-polytope needs at least one vertex");
        };
        let n = first.len();
        if vertices.iter().any(|v| v.len() != n) {
            return invalid("vertices have mixed dimensions");
        }
        if vertices.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return invalid("vertex with non-finite coordinate");
        }
        Ok(Self { vertices })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Membership of `x` in the hull, up to `tol` per coordinate.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        if x.len() != self.dim() {
            return invalid("point dimension differs from polytope dimension");
        }
        Ok(convex_weights(&self.vertices, x, tol)?.is_some())
    }

    /// Planar hull in H-representation (counterclockwise edges).
    pub fn to_hpolytope_2d(&self) -> Result<Option<HPolytope>> {
        if self.dim() != 2 {
            return invalid("H-representation conversion is only offered in 2D");
        }
        let hull = convex_hull_2d(&self.vertices)?;
        let v = hull.vertices();
        if v.len() < 3 {
            return Ok(None);
        }
        let mut rows = Vec::new();
        let mut offs = Vec::new();
        for i in 0..v.len() {
            let a = &v[i];
            let b = &v[(i + 1) % v.len()];
            let normal = [b[1] - a[1], a[0] - b[0]];
            let norm = normal[0].hypot(normal[1]);
            let normal = [normal[0] / norm, normal[1] / norm];
            rows.push(normal.to_vec());
            offs.push(normal[0] * a[0] + normal[1] * a[1]);
        }
        Ok(Some(HPolytope::from_rows(&rows, &offs)?))
    }

    /// Area of a planar hull.
    pub fn area_2d(&self) -> Result<f64> {
        if self.dim() != 2 {
            return invalid("area is only defined here for planar sets");
        }
        let hull = convex_hull_2d(&self.vertices)?;
        let v = hull.vertices();
        let mut a = 0.0;
        for i in 0..v.len() {
            let p = &v[i];
            let q = &v[(i + 1) % v.len()];
            a += p[0] * q[1] - q[0] * p[1];
        }
        Ok(0.5 * a.abs())
    }

    pub fn to_json(&self) -> PolytopeJson {
        PolytopeJson::V {
            vertices: self.vertices.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }
}

impl Serialize for VPolytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for VPolytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match PolytopeJson::deserialize(d)? {
            PolytopeJson::V { vertices } => VPolytope::from_rows(&vertices).map_err(serde::de::Error::custom),
            PolytopeJson::H { .. } => Err(serde::de::Error::custom("expected a vertex polytope")),
        }
    }
}

/// Unit directions for the line searches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    pub directions: Vec<Vec<f64>>,
    pub slice_dims: Option<(usize, usize)>,
}

impl DirectionSet {
    pub fn new(directions: Vec<DVector<f64>>, slice_dims: Option<(usize, usize)>) -> Result<Self> {
        for d in &directions {
            if (d.norm() - 1.0).abs() > 1e-9 {
                return invalid("direction vectors must have unit norm");
            }
        }
        Ok(Self {
            directions: directions.iter().map(|d| d.iter().copied().collect()).collect(),
            slice_dims,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn get(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.directions[i])
    }

    /// First `count` directions.
    pub fn prefix(&self, count: usize) -> Self {
        Self {
            directions: self.directions[..count.min(self.len())].to_vec(),
            slice_dims: self.slice_dims,
        }
    }
}

/// `{x : |x_i − c_i| <= a_i}` as `2n` half-spaces, upper faces first.
pub fn box_polytope(center: &DVector<f64>, half_widths: &DVector<f64>) -> Result<HPolytope> {
    let n = center.len();
    if half_widths.len() != n {
        return invalid("center and half-widths differ in length");
    }
    if let Some(a) = half_widths.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return invalid(format!("half-width {a} is not positive"));
    }
    let mut normals = DMatrix::zeros(2 * n, n);
    let mut offsets = DVector::zeros(2 * n);
    for i in 0..n {
        normals[(2 * i, i)] = 1.0;
        offsets[2 * i] = center[i] + half_widths[i];
        normals[(2 * i + 1, i)] = -1.0;
        offsets[2 * i + 1] = -center[i] + half_widths[i];
    }
    HPolytope::new(normals, offsets)
}

/// Closed-set membership: `normals·x <= offsets + tol` row by row.
pub fn contains_point(p: &HPolytope, x: &DVector<f64>, tol: f64) -> Result<bool> {
    if x.len() != p.dim() {
        return invalid(format!(
            "point of dimension {} tested against polytope of dimension {}",
            x.len(),
            p.dim()
        ));
    }
    if tol < 0.0 {
        return invalid("tolerance must be nonnegative");
    }
    let lhs = &p.normals * x;
    Ok(lhs.iter().zip(p.offsets.iter()).all(|(l, b)| *l <= b + tol))
}

fn cross(o: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Indices of the counterclockwise extreme points of a planar point set
/// (Andrew's monotone chain; collinear boundary points removed).
pub fn convex_hull_2d_indices(points: &[DVector<f64>]) -> Result<Vec<usize>> {
    if points.is_empty() {
        return invalid("convex hull of an empty point list");
    }
    if points.iter().any(|p| p.len() != 2) {
        return invalid("planar hull needs 2-vectors");
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
    });
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(1e-300_f64, |m, v| m.max(v.abs()));
    let eps = 1e-12 * scale * scale;
    idx.dedup_by(|a, b| {
        (points[*a][0] - points[*b][0]).abs() <= 1e-12 * scale
            && (points[*a][1] - points[*b][1]).abs() <= 1e-12 * scale
    });
    if idx.len() < 3 {
        return Ok(idx);
    }
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for &i in &idx {
        while hull.len() >= 2 && cross(&points[hull[hull.len() - 2]], &points[hull[hull.len() - 1]], &points[i]) <= eps {
            hull.pop();
        }
        hull.push(i);
    }
    let lower = hull.len() + 1;
    for &i in idx.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&points[hull[hull.len() - 2]], &points[hull[hull.len() - 1]], &points[i]) <= eps
        {
            hull.pop();
        }
        hull.push(i);
    }
    hull.pop();
    if hull.len() == 2 && hull[0] == hull[1] {
        hull.pop();
    }
    Ok(hull)
}

pub fn convex_hull_2d(points: &[DVector<f64>]) -> Result<VPolytope> {
    let idx = convex_hull_2d_indices(points)?;
    VPolytope::new(idx.into_iter().map(|i| points[i].clone()).collect())
}

/// Convex weights `λ >= 0, Σλ = 1` with `|Σλ_i p_i − x| <= tol` per
/// coordinate, or `None` when no such weights exist.
pub fn convex_weights(points: &[DVector<f64>], x: &DVector<f64>, tol: f64) -> Result<Option<Vec<f64>>> {
    let k = points.len();
    let n = x.len();
    let mut lp = LinearProgram::new(k);
    lp.bounds = vec![(0.0, f64::INFINITY); k];
    lp.add_eq((0..k).map(|i| (i, 1.0)).collect(), 1.0);
    for c in 0..n {
        let terms: Vec<(usize, f64)> = (0..k).filter(|&i| points[i][c] != 0.0).map(|i| (i, points[i][c])).collect();
        if tol == 0.0 {
            lp.add_eq(terms, x[c]);
        } else {
            lp.add_ineq(terms.clone(), x[c] + tol);
            lp.add_ineq(terms.into_iter().map(|(i, v)| (i, -v)).collect(), -x[c] + tol);
        }
    }
    let sol = solve_lp(&lp)?;
    Ok(match sol.status {
        LpStatus::Optimal => Some(sol.z),
        _ => None,
    })
}

fn dedup_indices(points: &[DVector<f64>], tol: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !keep.iter().any(|&j| (&points[j] - p).amax() <= tol) {
            keep.push(i);
        }
    }
    keep
}

/// Indices of the extreme points of a finite point set.
pub fn extreme_point_indices(points: &[DVector<f64>]) -> Result<Vec<usize>> {
    let Some(first) = points.first() else {
        return invalid("cannot prune an empty vertex list");
    };
    match first.len() {
        0 => Ok(vec![0]),
        1 => {
            let (mut lo, mut hi) = (0, 0);
            for (i, p) in points.iter().enumerate() {
                if p[0] < points[lo][0] {
                    lo = i;
                }
                if p[0] > points[hi][0] {
                    hi = i;
                }
            }
            if (points[hi][0] - points[lo][0]).abs() <= DEFAULT_TOL {
                Ok(vec![lo])
            } else {
                Ok(vec![lo, hi])
            }
        }
        2 => convex_hull_2d_indices(points),
        _ => {
            let scale = points.iter().fold(1.0_f64, |m, p| m.max(p.amax()));
            let mut keep = dedup_indices(points, 1e-12 * scale);
            let mut i = 0;
            while i < keep.len() && keep.len() > 1 {
                let others: Vec<DVector<f64>> = keep
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i)
                    .map(|(_, &j)| points[j].clone())
                    .collect();
                if convex_weights(&others, &points[keep[i]], 1e-10 * scale)?.is_some() {
                    keep.remove(i);
                } else {
                    i += 1;
                }
            }
            Ok(keep)
        }
    }
}

/// Removes duplicates and every vertex that is a convex combination of the
/// others.
pub fn prune_vertices(v: &VPolytope) -> Result<VPolytope> {
    let idx = extreme_point_indices(&v.vertices)?;
    VPolytope::new(idx.into_iter().map(|i| v.vertices[i].clone()).collect())
}

/// Hull of `γ·V1 ⊕ (1−γ)·V2`, with each surviving vertex tagged by the pair
/// `(i, j)` of source vertices that produced it.
pub fn minkowski_interpolate_indexed(
    v1: &VPolytope,
    v2: &VPolytope,
    gamma: f64,
) -> Result<(VPolytope, Vec<(usize, usize)>)> {
    if !(0.0..=1.0).contains(&gamma) {
        return invalid(format!("interpolation weight {gamma} outside [0, 1]"));
    }
    if v1.dim() != v2.dim() {
        return invalid("interpolated polytopes differ in dimension");
    }
    let mut pairs = Vec::with_capacity(v1.len() * v2.len());
    let mut points = Vec::with_capacity(v1.len() * v2.len());
    for (i, a) in v1.vertices.iter().enumerate() {
        for (j, b) in v2.vertices.iter().enumerate() {
            points.push(a * gamma + b * (1.0 - gamma));
            pairs.push((i, j));
        }
    }
    let idx = extreme_point_indices(&points)?;
    let poly = VPolytope::new(idx.iter().map(|&k| points[k].clone()).collect())?;
    Ok((poly, idx.into_iter().map(|k| pairs[k]).collect()))
}

/// Pruned V-representation of `conv{γv₁ + (1−γ)v₂}` over all vertex pairs.
pub fn minkowski_interpolate(v1: &VPolytope, v2: &VPolytope, gamma: f64) -> Result<VPolytope> {
    Ok(minkowski_interpolate_indexed(v1, v2, gamma)?.0)
}

/// Image of `v ↦ M v + t`, pruned.
pub fn affine_map(v: &VPolytope, m: &DMatrix<f64>, t: &DVector<f64>) -> Result<VPolytope> {
    if m.ncols() != v.dim() || m.nrows() != t.len() {
        return invalid(format!(
            "affine map {}x{} + {} does not fit dimension {}",
            m.nrows(),
            m.ncols(),
            t.len(),
            v.dim()
        ));
    }
    let image = VPolytope::new(v.vertices.iter().map(|x| m * x + t).collect())?;
    prune_vertices(&image)
}

/// `count` unit vectors spaced by `2π/count` in a coordinate plane.
///
/// In one dimension the result is `{+1, −1}`; in two dimensions the plane is
/// the whole space; above that `slice_dims` selects the plane.
pub fn spread_directions(count: usize, dim: usize, slice_dims: Option<(usize, usize)>) -> Result<DirectionSet> {
    if count < 2 {
        return invalid("at least two directions are required");
    }
    if dim == 0 {
        return invalid("directions need a positive dimension");
    }
    if dim == 1 {
        return DirectionSet::new(vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)], None);
    }
    let plane = match (dim, slice_dims) {
        (2, None) => (0, 1),
        (_, Some((a, b))) => {
            if a >= dim || b >= dim || a == b {
                return invalid(format!("slice {a},{b} invalid for dimension {dim}"));
            }
            (a, b)
        }
        (_, None) => return invalid("slice_dims is required above two dimensions"),
    };
    let dirs = (0..count)
        .map(|k| {
            let t = k as f64 * std::f64::consts::TAU / count as f64;
            let mut d = DVector::zeros(dim);
            d[plane.0] = t.cos();
            d[plane.1] = t.sin();
            d
        })
        .collect();
    DirectionSet::new(dirs, if dim > 2 { Some(plane) } else { slice_dims })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn unit_square(offset: [f64; 2]) -> VPolytope {
        VPolytope::from_rows(&[
            vec![offset[0], offset[1]],
            vec![offset[0] + 1.0, offset[1]],
            vec![offset[0] + 1.0, offset[1] + 1.0],
            vec![offset[0], offset[1] + 1.0],
        ])
        .unwrap()
    }

    fn same_point_set(a: &VPolytope, b: &VPolytope, tol: f64) -> bool {
        a.len() == b.len()
            && a.vertices().iter().all(|p| b.vertices().iter().any(|q| (p - q).amax() <= tol))
    }

    #[test]
    fn box_interval() {
        let b = box_polytope(&dvector![0.0], &dvector![1.0]).unwrap();
        assert_eq!(b.normals().as_slice(), &[1.0, -1.0]);
        assert_eq!(b.offsets().as_slice(), &[1.0, 1.0]);
        assert!(contains_point(&b, &dvector![0.0], 0.0).unwrap());
        assert!(!contains_point(&b, &dvector![1.5], 0.0).unwrap());
        assert!(contains_point(&b, &dvector![1.0], 0.0).unwrap());
    }

    #[test]
    fn box_square_and_errors() {
        let b = box_polytope(&dvector![0.0, 0.0], &dvector![1.0, 1.0]).unwrap();
        assert_eq!(b.num_rows(), 4);
        assert!(b.is_bounded().unwrap());
        assert!(!b.is_empty().unwrap());
        assert!(box_polytope(&dvector![0.0], &dvector![0.0]).is_err());
        assert!(box_polytope(&dvector![0.0], &dvector![-1.0]).is_err());
        assert!(contains_point(&b, &dvector![0.0], 0.0).is_err());
    }

    #[test]
    fn dubins_initial_box_half_width() {
        let a = 4.0 * (-0.0_f64 / 100.0).exp();
        let b = box_polytope(&dvector![0.0, 0.0], &dvector![a, a]).unwrap();
        assert_eq!(b.offsets()[0], 4.0);
    }

    #[test]
    fn empty_and_unbounded_flags() {
        let empty = HPolytope::from_rows(&[vec![1.0], vec![-1.0]], &[-1.0, 0.0]).unwrap();
        assert!(empty.is_empty().unwrap());
        let half_line = HPolytope::from_rows(&[vec![1.0]], &[1.0]).unwrap();
        assert!(!half_line.is_bounded().unwrap());
        assert!(HPolytope::from_rows(&[vec![0.0, 0.0]], &[1.0]).is_err());
    }

    #[test]
    fn hull_square_with_center() {
        let mut pts = unit_square([0.0, 0.0]).vertices().to_vec();
        pts.push(dvector![0.5, 0.5]);
        let h = convex_hull_2d(&pts).unwrap();
        assert!(same_point_set(&h, &unit_square([0.0, 0.0]), 0.0));
    }

    #[test]
    fn hull_collinear() {
        let pts = vec![dvector![0.0, 0.0], dvector![1.0, 1.0], dvector![2.0, 2.0]];
        let h = convex_hull_2d(&pts).unwrap();
        assert_eq!(h.len(), 2);
        assert!(convex_hull_2d(&[]).is_err());
    }

    #[test]
    fn hull_is_counterclockwise() {
        let pts = unit_square([0.0, 0.0]).vertices().to_vec();
        let h = convex_hull_2d(&pts).unwrap();
        let v = h.vertices();
        for i in 0..v.len() {
            assert!(cross(&v[i], &v[(i + 1) % v.len()], &v[(i + 2) % v.len()]) > 0.0);
        }
    }

    #[test]
    fn prune_single_and_duplicates() {
        let one = VPolytope::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(prune_vertices(&one).unwrap().len(), 1);
        let dup = VPolytope::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(prune_vertices(&dup).unwrap().len(), 1);
    }

    #[test]
    fn prune_cube_centroid() {
        let mut rows = Vec::new();
        for mask in 0..8 {
            rows.push(vec![(mask & 1) as f64, ((mask >> 1) & 1) as f64, ((mask >> 2) & 1) as f64]);
        }
        rows.push(vec![0.5, 0.5, 0.5]);
        let pruned = prune_vertices(&VPolytope::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(pruned.len(), 8);
        assert!(pruned.vertices().iter().all(|v| v.iter().all(|c| *c == 0.0 || *c == 1.0)));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = unit_square([0.0, 0.0]);
        let b = unit_square([2.0, 0.0]);
        assert!(same_point_set(&minkowski_interpolate(&a, &b, 1.0).unwrap(), &a, 1e-12));
        assert!(same_point_set(&minkowski_interpolate(&a, &b, 0.0).unwrap(), &b, 1e-12));
        let mid = minkowski_interpolate(&a, &b, 0.5).unwrap();
        assert!(same_point_set(&mid, &unit_square([1.0, 0.0]), 1e-12));
        assert!(minkowski_interpolate(&a, &b, 1.5).is_err());
        assert!(minkowski_interpolate(&a, &b, -0.1).is_err());
    }

    #[test]
    fn affine_maps() {
        let sq = unit_square([-0.5, -0.5]);
        let id = affine_map(&sq, &DMatrix::identity(2, 2), &dvector![0.0, 0.0]).unwrap();
        assert!(same_point_set(&id, &sq, 0.0));
        let scaled = affine_map(&sq, &(DMatrix::identity(2, 2) * 0.5), &dvector![0.0, 0.0]).unwrap();
        assert!((scaled.area_2d().unwrap() - 0.25).abs() < 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let r = affine_map(&sq, &rot, &dvector![0.0, 0.0]).unwrap();
        assert!(same_point_set(&r, &sq, 1e-15));
        assert!(affine_map(&sq, &DMatrix::identity(3, 3), &dvector![0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn directions() {
        let d = spread_directions(4, 2, None).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (v, e) in d.directions.iter().zip(expect) {
            assert!((v[0] - e[0]).abs() < 1e-15 && (v[1] - e[1]).abs() < 1e-15);
        }
        let d1 = spread_directions(2, 1, None).unwrap();
        assert_eq!(d1.directions, vec![vec![1.0], vec![-1.0]]);
        let d40 = spread_directions(8, 40, Some((0, 1))).unwrap();
        assert_eq!(d40.len(), 8);
        assert!(d40.directions.iter().all(|v| v[2..].iter().all(|x| *x == 0.0)));
        assert!(spread_directions(8, 40, None).is_err());
        assert!(spread_directions(1, 2, None).is_err());
    }

    #[test]
    fn vpolytope_membership_lp_matches_halfspaces() {
        let sq = unit_square([0.0, 0.0]);
        let h = sq.to_hpolytope_2d().unwrap().unwrap();
        for x in [dvector![0.5, 0.5], dvector![1.0, 1.0], dvector![1.1, 0.5], dvector![-0.01, 0.0]] {
            assert_eq!(sq.contains(&x, 1e-9).unwrap(), h.contains(&x, 1e-9).unwrap());
        }
    }

    #[test]
    fn json_round_trip() {
        let b = box_polytope(&dvector![1.0, -1.0], &dvector![0.5, 2.0]).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.starts_with("{\"normals\""));
        let back: HPolytope = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        let v = unit_square([0.0, 0.0]);
        let back: VPolytope = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
