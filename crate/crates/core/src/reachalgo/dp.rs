//! Grid dynamic programming for the reach probability in one or two state
//! dimensions with diagonal per-step noise covariance.
//!
//! Grid points are cell centers; cell edges sit halfway between neighbours
//! and half a spacing beyond the outermost points. The transition mass of a
//! cell factorizes into per-axis normal-CDF differences, and mass leaving the
//! grid counts as failure since the grid covers every tube set.

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::gaussian::phi;
use crate::geometry::{HPolytope, VPolytope};
use crate::sysmodel::{StochasticLTVSystem, TargetTube};

/// Mass beyond this many standard deviations is ignored.
const WINDOW_SIGMAS: f64 = 9.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DpTable {
    /// Grid points per axis, sorted.
    pub grids: Vec<Vec<f64>>,
    pub edges: Vec<Vec<f64>>,
    /// `V_0..V_N`, flattened with the last axis fastest.
    pub values: Vec<Vec<f64>>,
    pub input_grid: Vec<DVector<f64>>,
}

impl DpTable {
    pub fn dim(&self) -> usize {
        self.grids.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.grids.iter().map(|g| g.len()).collect()
    }

    pub fn num_points(&self) -> usize {
        self.grids.iter().map(|g| g.len()).product()
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    /// Axis indices of a flat index.
    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        let mut rest = flat;
        for d in (0..shape.len()).rev() {
            idx[d] = rest % shape[d];
            rest /= shape[d];
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        let shape = self.shape();
        idx.iter().zip(&shape).fold(0, |acc, (i, s)| acc * s + i)
    }

    pub fn point(&self, flat: usize) -> DVector<f64> {
        let idx = self.unflatten(flat);
        DVector::from_iterator(self.dim(), idx.iter().enumerate().map(|(d, &i)| self.grids[d][i]))
    }

    /// Index of the cell containing `x`, or `None` off the grid.
    pub fn locate(&self, x: &DVector<f64>) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let e = &self.edges[d];
            if x[d] < e[0] || x[d] > e[e.len() - 1] {
                return None;
            }
            let j = e.partition_point(|&t| t <= x[d]).saturating_sub(1);
            idx.push(j.min(self.grids[d].len() - 1));
        }
        Some(idx)
    }
}

fn edges_of(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut e = Vec::with_capacity(n + 1);
    let first = if n > 1 { points[1] - points[0] } else { 1.0 };
    let last = if n > 1 { points[n - 1] - points[n - 2] } else { 1.0 };
    e.push(points[0] - 0.5 * first);
    for w in points.windows(2) {
        e.push(0.5 * (w[0] + w[1]));
    }
    e.push(points[n - 1] + 0.5 * last);
    e
}

fn axis(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let count = ((hi - lo) / h - 1e-9).ceil().max(0.0) as usize + 1;
    (0..count).map(|i| lo + i as f64 * h).collect()
}

/// Grid over the bounding box of every tube set and a grid of the input set.
pub fn dp_values(
    sys: &StochasticLTVSystem,
    tube: &TargetTube,
    state_spacing: f64,
    input_spacing: f64,
) -> Result<DpTable> {
    if !(state_spacing > 0.0 && input_spacing > 0.0) {
        return invalid("grid spacings must be positive");
    }
    let n = tube.state_dim();
    let mut lo = DVector::from_element(n, f64::INFINITY);
    let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
    for s in tube.sets() {
        let (l, h) = s.bounding_box()?;
        lo = lo.inf(&l);
        hi = hi.sup(&h);
    }
    let grids = (0..n).map(|d| axis(lo[d], hi[d], state_spacing)).collect();
    let inputs = input_grid(sys.input_set(), input_spacing)?;
    dp_values_on_grid(sys, tube, grids, inputs)
}

/// Points of the input set's bounding-box grid that lie in the input set.
pub fn input_grid(u: &HPolytope, h: f64) -> Result<Vec<DVector<f64>>> {
    let m = u.dim();
    if m == 0 {
        return Ok(vec![DVector::zeros(0)]);
    }
    if m > 2 {
        return invalid("input grids are limited to two input dimensions");
    }
    let (lo, hi) = u.bounding_box()?;
    let axes: Vec<Vec<f64>> = (0..m).map(|d| axis(lo[d], hi[d], h)).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; m];
    loop {
        let p = DVector::from_iterator(m, (0..m).map(|d| axes[d][idx[d]]));
        if u.contains(&p, 1e-9)? {
            out.push(p);
        }
        let mut d = m;
        loop {
            if d == 0 {
                return Ok(out);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Per-axis probabilities of landing in each cell, restricted to a window.
fn axis_masses(edges: &[f64], mu: f64, sigma: f64, out: &mut Vec<f64>) -> usize {
    out.clear();
    let cells = edges.len() - 1;
    if sigma == 0.0 {
        if mu < edges[0] || mu >= edges[cells] {
            return 0;
        }
        let j = edges.partition_point(|&t| t <= mu) - 1;
        out.push(1.0);
        return j;
    }
    let a = edges.partition_point(|&t| t < mu - WINDOW_SIGMAS * sigma).saturating_sub(1);
    let b = edges.partition_point(|&t| t <= mu + WINDOW_SIGMAS * sigma).min(cells);
    if a >= b {
        return 0;
    }
    let mut prev = phi((edges[a] - mu) / sigma);
    for j in a..b {
        let next = phi((edges[j + 1] - mu) / sigma);
        out.push(next - prev);
        prev = next;
    }
    a
}

/// Backward recursion on explicit grids.
pub fn dp_values_on_grid(
    sys: &StochasticLTVSystem,
    tube: &TargetTube,
    grids: Vec<Vec<f64>>,
    input_grid: Vec<DVector<f64>>,
) -> Result<DpTable> {
    tube.check_compatible(sys)?;
    let n = sys.state_dim();
    if n > 2 {
        return invalid("grid dynamic programming supports at most two state dimensions");
    }
    if grids.len() != n || grids.iter().any(|g| g.is_empty() || g.windows(2).any(|w| w[0] >= w[1])) {
        return invalid("grids must be sorted, nonempty and one per state dimension");
    }
    if input_grid.is_empty() || input_grid.iter().any(|u| u.len() != sys.input_dim()) {
        return invalid("input grid must be nonempty and match the input dimension");
    }
    for (k, c) in sys.disturbance().cov_per_step.iter().enumerate() {
        let off = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j);
        let scale = c.amax().max(f64::MIN_POSITIVE);
        if off.into_iter().any(|(i, j)| c[(i, j)].abs() > 1e-12 * scale) {
            return invalid(format!("disturbance covariance at step {k} is not diagonal"));
        }
    }
    let edges: Vec<Vec<f64>> = grids.iter().map(|g| edges_of(g)).collect();
    for (k, s) in tube.sets().iter().enumerate() {
        let (l, h) = s.bounding_box()?;
        for d in 0..n {
            let (e0, e1) = (edges[d][0], edges[d][edges[d].len() - 1]);
            if l[d] < e0 - 1e-9 || h[d] > e1 + 1e-9 {
                return invalid(format!("grid does not cover T_{k} along axis {d}"));
            }
        }
    }
    let mut table = DpTable {
        grids,
        edges,
        values: Vec::new(),
        input_grid,
    };
    let total = table.num_points();
    let points: Vec<DVector<f64>> = (0..total).map(|i| table.point(i)).collect();
    let indicator = |k: usize| -> Result<Vec<f64>> {
        points
            .iter()
            .map(|p| Ok(if tube.set(k).contains(p, 1e-9)? { 1.0 } else { 0.0 }))
            .collect()
    };
    let horizon = sys.horizon();
    let mut values = vec![Vec::new(); horizon + 1];
    values[horizon] = indicator(horizon)?;
    let shape = table.shape();
    let mut masses: Vec<Vec<f64>> = vec![Vec::new(); n];
    for k in (0..horizon).rev() {
        let inside = indicator(k)?;
        let next = &values[k + 1];
        let a = sys.a(k);
        let b = sys.b(k);
        let mu_w = &sys.disturbance().mean_per_step[k];
        let cov = &sys.disturbance().cov_per_step[k];
        let sig: Vec<f64> = (0..n).map(|d| cov[(d, d)].max(0.0).sqrt()).collect();
        let mut cur = vec![0.0; total];
        for (i, p) in points.iter().enumerate() {
            if inside[i] == 0.0 {
                continue;
            }
            let drift = a * p + mu_w;
            let mut best: f64 = 0.0;
            for u in &table.input_grid {
                let mu = &drift + b * u;
                let mut starts = [0usize; 2];
                for d in 0..n {
                    starts[d] = axis_masses(&table.edges[d], mu[d], sig[d], &mut masses[d]);
                }
                let e = if n == 1 {
                    masses[0].iter().enumerate().map(|(j, m)| m * next[starts[0] + j]).sum::<f64>()
                } else {
                    let mut s = 0.0;
                    for (j0, m0) in masses[0].iter().enumerate() {
                        let row = (starts[0] + j0) * shape[1] + starts[1];
                        let inner: f64 = masses[1].iter().enumerate().map(|(j1, m1)| m1 * next[row + j1]).sum();
                        s += m0 * inner;
                    }
                    s
                };
                best = best.max(e);
            }
            cur[i] = best.min(1.0);
        }
        values[k] = cur;
    }
    table.values = values;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSet {
    pub alpha: f64,
    /// Grid points of `T₀` with `V₀ >= α`.
    pub mask: Vec<bool>,
    /// Hull of the selected points in one dimension.
    pub interval: Option<(f64, f64)>,
    /// Marching-squares polylines of `V₀ = α` in two dimensions.
    pub contour: Vec<Vec<[f64; 2]>>,
}

impl LevelSet {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

pub fn dp_level_set(table: &DpTable, t0: &HPolytope, alpha: f64) -> Result<LevelSet> {
    let v0 = &table.values[0];
    let mut mask = vec![false; v0.len()];
    for (i, m) in mask.iter_mut().enumerate() {
        *m = v0[i] >= alpha && t0.contains(&table.point(i), 1e-9)?;
    }
    let interval = if table.dim() == 1 {
        let g = &table.grids[0];
        let sel: Vec<f64> = (0..g.len()).filter(|&i| mask[i]).map(|i| g[i]).collect();
        sel.first().map(|a| (*a, *sel.last().unwrap()))
    } else {
        None
    };
    let contour = if table.dim() == 2 {
        marching_squares(table, &mask, alpha)
    } else {
        Vec::new()
    };
    Ok(LevelSet {
        alpha,
        mask,
        interval,
        contour,
    })
}

fn marching_squares(table: &DpTable, mask: &[bool], alpha: f64) -> Vec<Vec<[f64; 2]>> {
    let (gx, gy) = (&table.grids[0], &table.grids[1]);
    let ny = gy.len();
    let f = |i: usize, j: usize| {
        let k = i * ny + j;
        if mask[k] {
            table.values[0][k] - alpha
        } else {
            -1.0
        }
    };
    let lerp = |pa: [f64; 2], pb: [f64; 2], fa: f64, fb: f64| {
        let t = if fa == fb { 0.5 } else { fa / (fa - fb) };
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let mut segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
    for i in 0..gx.len().saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            let c = [[gx[i], gy[j]], [gx[i + 1], gy[j]], [gx[i + 1], gy[j + 1]], [gx[i], gy[j + 1]]];
            let v = [f(i, j), f(i + 1, j), f(i + 1, j + 1), f(i, j + 1)];
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if (v[a] >= 0.0) != (v[b] >= 0.0) {
                    crossings.push(lerp(c[a], c[b], v[a], v[b]));
                }
            }
            match crossings.len() {
                2 => segments.push((crossings[0], crossings[1])),
                4 => {
                    // Saddle: join according to the sign of the center average.
                    let center = v.iter().sum::<f64>() / 4.0;
                    if (center >= 0.0) == (v[0] >= 0.0) {
                        segments.push((crossings[0], crossings[1]));
                        segments.push((crossings[2], crossings[3]));
                    } else {
                        segments.push((crossings[3], crossings[0]));
                        segments.push((crossings[1], crossings[2]));
                    }
                }
                _ => {}
            }
        }
    }
    chain_segments(segments)
}

fn chain_segments(mut segments: Vec<([f64; 2], [f64; 2])>) -> Vec<Vec<[f64; 2]>> {
    let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12;
    let mut lines = Vec::new();
    while let Some((a, b)) = segments.pop() {
        let mut line = vec![a, b];
        loop {
            let tail = *line.last().unwrap();
            let head = line[0];
            if let Some(k) = segments.iter().position(|(p, q)| close(*p, tail) || close(*q, tail)) {
                let (p, q) = segments.swap_remove(k);
                line.push(if close(p, tail) { q } else { p });
            } else if let Some(k) = segments.iter().position(|(p, q)| close(*p, head) || close(*q, head)) {
                let (p, q) = segments.swap_remove(k);
                line.insert(0, if close(p, head) { q } else { p });
            } else {
                break;
            }
        }
        lines.push(line);
    }
    lines.sort_by(|a, b| b.len().cmp(&a.len()));
    lines
}

/// Outcome of comparing a polytope with a DP level set.
#[derive(Clone, Debug, PartialEq)]
pub struct Containment {
    /// Every sampled point of the polytope falls in a dilated level-set cell.
    pub contained: bool,
    pub violations: Vec<DVector<f64>>,
    /// Level-set grid points strictly outside the polytope.
    pub gap_cells: usize,
}

/// Checks `poly ⊆ level set ⊕ dilation cells` on the vertices, sampled
/// edges and every grid point inside `poly`, and counts the gap cells.
pub fn dp_containment(table: &DpTable, level: &LevelSet, poly: &VPolytope, dilation: usize) -> Result<Containment> {
    let n = table.dim();
    if poly.dim() != n {
        return invalid("polytope and grid differ in dimension");
    }
    let shape = table.shape();
    let in_dilated = |x: &DVector<f64>| -> bool {
        let Some(idx) = table.locate(x) else {
            return false;
        };
        let r = dilation as isize;
        let ranges: Vec<(isize, isize)> = (0..n)
            .map(|d| ((idx[d] as isize - r).max(0), (idx[d] as isize + r).min(shape[d] as isize - 1)))
            .collect();
        if n == 1 {
            (ranges[0].0..=ranges[0].1).any(|i| level.mask[i as usize])
        } else {
            (ranges[0].0..=ranges[0].1)
                .any(|i| (ranges[1].0..=ranges[1].1).any(|j| level.mask[i as usize * shape[1] + j as usize]))
        }
    };
    let hrep = if n == 2 { poly.to_hpolytope_2d()? } else { None };
    let inside = |x: &DVector<f64>, tol: f64| -> Result<bool> {
        match &hrep {
            Some(h) => h.contains(x, tol),
            None => poly.contains(x, tol),
        }
    };

    let mut samples: Vec<DVector<f64>> = poly.vertices().to_vec();
    if n == 2 {
        let hull = crate::geometry::convex_hull_2d(poly.vertices())?;
        let v = hull.vertices();
        let h = table.grids.iter().map(|g| spacing(g)).fold(f64::INFINITY, f64::min);
        for i in 0..v.len() {
            let (a, b) = (&v[i], &v[(i + 1) % v.len()]);
            let steps = ((b - a).norm() / (0.25 * h)).ceil() as usize;
            for s in 1..steps {
                samples.push(a + (b - a) * (s as f64 / steps as f64));
            }
        }
    }
    let mut gap_cells = 0;
    for i in 0..table.num_points() {
        let p = table.point(i);
        let is_inside = inside(&p, 1e-9)?;
        if is_inside {
            samples.push(p);
        } else if level.mask[i] {
            gap_cells += 1;
        }
    }
    let violations: Vec<DVector<f64>> = samples.into_iter().filter(|x| !in_dilated(x)).collect();
    Ok(Containment {
        contained: violations.is_empty(),
        violations,
        gap_cells,
    })
}

fn spacing(g: &[f64]) -> f64 {
    if g.len() > 1 {
        g[1] - g[0]
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::box_polytope;
    use nalgebra::{dvector, DMatrix};

    fn walk(var: f64, ell: f64, umax: f64) -> (StochasticLTVSystem, TargetTube) {
        let u = box_polytope(&dvector![0.0], &dvector![umax]).unwrap();
        let sys = StochasticLTVSystem::time_invariant(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            dvector![0.0],
            DMatrix::from_element(1, 1, var),
            u,
            5,
        )
        .unwrap();
        let sets = (0..=5)
            .map(|k| box_polytope(&dvector![0.0], &dvector![ell.powi(k)]).unwrap())
            .collect();
        (sys, TargetTube::new(sets).unwrap())
    }

    #[test]
    fn terminal_is_indicator() {
        let (sys, tube) = walk(0.001, 0.6, 0.1);
        let t = dp_values(&sys, &tube, 0.01, 0.01).unwrap();
        assert_eq!(t.grids[0].len(), 201);
        assert_eq!(t.input_grid.len(), 21);
        let r = 0.6f64.powi(5);
        for (x, v) in t.grids[0].iter().zip(&t.values[5]) {
            assert_eq!(*v, if x.abs() <= r + 1e-9 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn easy_tube_is_almost_sure() {
        let (sys, _) = walk(1e-8, 1.0, 1.0);
        let tube = TargetTube::constant(box_polytope(&dvector![0.0], &dvector![1.0]).unwrap(), 5).unwrap();
        let t = dp_values(&sys, &tube, 0.05, 0.05).unwrap();
        for (x, v) in t.grids[0].iter().zip(&t.values[0]) {
            if x.abs() < 0.9 {
                assert!(*v > 0.999, "V0({x}) = {v}");
            }
        }
    }

    #[test]
    fn level_set_extremes() {
        let (sys, tube) = walk(0.001, 0.6, 0.1);
        let t = dp_values(&sys, &tube, 0.01, 0.01).unwrap();
        let all = dp_level_set(&t, tube.set(0), 0.0).unwrap();
        assert_eq!(all.count(), 201);
        assert_eq!(dp_level_set(&t, tube.set(0), 1.1).unwrap().count(), 0);
        let l = dp_level_set(&t, tube.set(0), 0.8).unwrap();
        let (a, b) = l.interval.unwrap();
        assert!((a + b).abs() < 1e-9 && b > 0.0);
    }

    #[test]
    fn uncovered_grid_rejected() {
        let (sys, tube) = walk(0.001, 0.6, 0.1);
        let grid = vec![(0..11).map(|i| -0.5 + 0.1 * i as f64).collect()];
        assert!(dp_values_on_grid(&sys, &tube, grid, vec![dvector![0.0]]).is_err());
    }
}
