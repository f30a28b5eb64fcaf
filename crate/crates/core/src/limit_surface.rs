//! Limit interfaces: level-set extraction, multiplicities, the scalar Jacobi operator
//! `L_V = Lap_V + |A|^2 + Ric(nu, nu)` and comparisons against Allen-Cahn spectra.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allen_cahn::{second_variation_rescaled, Potential};
use crate::domain::{dot, norm, Domain, Metric, RegionSpec, ScalarField, TorusGrid, Vec3};
use crate::error::{SpectrumError, SurfaceError};
use crate::linalg::pminres;
use crate::spectrum::{eigen_smallest_problem, EigenOptions, SolverKind, SpectrumResult, SymmetricProblem};
use crate::varifold::DiffuseVarifold;

/// One closed component: a polyline in 2-D ambient space or a triangle mesh in 3-D.
#[derive(Debug, Clone)]
pub struct SurfaceComponent {
    pub id: usize,
    /// 1 for curves, 2 for surfaces.
    pub intrinsic_dim: usize,
    /// Curves list vertices in cyclic order with `+u` on the left.
    pub vertices: Vec<Vec3>,
    /// Empty for curves.
    pub triangles: Vec<[usize; 3]>,
    /// Length or area in the ambient metric.
    pub measure: f64,
    pub multiplicity: u32,
    pub flagged: bool,
    /// Unit normals towards `+u` (Euclidean direction).
    pub vertex_normals: Vec<Vec3>,
    pub element_normals: Vec<Vec3>,
    /// `|A|^2` in the ambient metric.
    pub vertex_curvature_sq: Vec<f64>,
    pub element_curvature_sq: Vec<f64>,
    /// `Ric(nu, nu)` sampled at the vertices.
    pub vertex_ricci: Vec<f64>,
    /// Signed Euclidean curvature sum `k_1 + ... ` along the normal.
    pub vertex_mean_curvature: Vec<f64>,
    pub min_angle_deg: f64,
}

impl SurfaceComponent {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    grid: Arc<TorusGrid>,
    metric: Metric,
    components: Vec<SurfaceComponent>,
    offsets: Vec<usize>,
}

/// Selection of surface nodes; excluded nodes carry Dirichlet conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMask {
    inside: Vec<bool>,
    label: String,
}

impl SurfaceMask {
    pub fn new(inside: Vec<bool>, label: impl Into<String>) -> Self {
        Self { inside, label: label.into() }
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &SurfaceMask) -> bool {
        self.inside.iter().zip(&other.inside).all(|(&a, &b)| !a || b)
    }
}

impl SurfaceMesh {
    pub fn new(grid: Arc<TorusGrid>, metric: Metric, components: Vec<SurfaceComponent>) -> Self {
        let mut offsets = Vec::with_capacity(components.len() + 1);
        let mut acc = 0;
        for c in &components {
            offsets.push(acc);
            acc += c.len();
        }
        offsets.push(acc);
        Self { grid, metric, components, offsets }
    }

    /// A closed polyline through the given points, with geometry computed as for extracted curves.
    pub fn from_polylines(grid: Arc<TorusGrid>, metric: Metric, loops: Vec<Vec<Vec3>>) -> Result<Self, SurfaceError> {
        if grid.dim() != 2 {
            return Err(SurfaceError::InvalidInput("polylines live in a 2-D ambient space".into()));
        }
        let comps = loops
            .into_iter()
            .enumerate()
            .map(|(id, v)| curve_component(&grid, &metric, id, v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(grid, metric, comps))
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn components(&self) -> &[SurfaceComponent] {
        &self.components
    }

    pub fn node_count(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn offset(&self, component: usize) -> usize {
        self.offsets[component]
    }

    pub fn position(&self, node: usize) -> Vec3 {
        let c = self.component_of(node);
        self.components[c].vertices[node - self.offsets[c]]
    }

    pub fn component_of(&self, node: usize) -> usize {
        match self.offsets.binary_search(&node) {
            Ok(i) if i < self.components.len() => i,
            Ok(i) => i - 1,
            Err(i) => i - 1,
        }
    }

    pub fn multiplicities(&self) -> Vec<u32> {
        self.components.iter().map(|c| c.multiplicity).collect()
    }

    pub fn set_multiplicities(&mut self, theta: &[u32]) -> Result<(), SurfaceError> {
        if theta.len() != self.components.len() || theta.iter().any(|&t| t == 0) {
            return Err(SurfaceError::InvalidInput("one positive multiplicity per component".into()));
        }
        for (c, &t) in self.components.iter_mut().zip(theta) {
            c.multiplicity = t;
        }
        Ok(())
    }

    pub fn full_mask(&self) -> SurfaceMask {
        SurfaceMask::new(vec![true; self.node_count()], "full")
    }

    pub fn mask_from_spec(&self, spec: &RegionSpec, label: &str) -> SurfaceMask {
        let inside = (0..self.node_count()).map(|i| spec.contains_point(&self.grid, &self.position(i))).collect();
        SurfaceMask::new(inside, label)
    }

    pub fn mask_from_fn(&self, label: &str, f: impl Fn(usize, &Vec3) -> bool) -> SurfaceMask {
        let inside = (0..self.node_count()).map(|i| f(i, &self.position(i))).collect();
        SurfaceMask::new(inside, label)
    }

    /// Smallest distance between vertices of different components.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.components.len() {
            for b in a + 1..self.components.len() {
                best = best.min(component_distance(&self.grid, &self.components[a], &self.components[b]));
            }
        }
        best
    }

    /// Nearest point on the surface: `(distance, component, [(local vertex, weight)])`.
    pub fn closest_point(&self, x: &Vec3) -> (f64, usize, Vec<(usize, f64)>) {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for (ci, c) in self.components.iter().enumerate() {
            for (vi, v) in c.vertices.iter().enumerate() {
                let d = self.grid.periodic_distance(x, v);
                if d < best.0 {
                    best = (d, ci, vi);
                }
            }
        }
        let (_, ci, vi) = best;
        let c = &self.components[ci];
        let mut result = (best.0, ci, vec![(vi, 1.0)]);
        let candidates: Vec<Vec<usize>> = if c.intrinsic_dim == 1 {
            let n = c.len();
            vec![vec![(vi + n - 1) % n, vi], vec![vi, (vi + 1) % n]]
        } else {
            let mut ring = vec![vi];
            for t in &c.triangles {
                if t.contains(&vi) {
                    ring.extend_from_slice(t);
                }
            }
            c.triangles.iter().filter(|t| t.iter().any(|v| ring.contains(v))).map(|t| t.to_vec()).collect()
        };
        for e in candidates {
            let base = c.vertices[e[0]];
            let rel = self.grid.periodic_delta(&base, x);
            let (d, w) = if e.len() == 2 {
                let s = self.grid.periodic_delta(&base, &c.vertices[e[1]]);
                closest_on_segment(&rel, &s)
            } else {
                let s1 = self.grid.periodic_delta(&base, &c.vertices[e[1]]);
                let s2 = self.grid.periodic_delta(&base, &c.vertices[e[2]]);
                closest_on_triangle(&rel, &s1, &s2)
            };
            if d < result.0 {
                result = (d, ci, e.iter().cloned().zip(w).collect());
            }
        }
        result
    }
}

fn component_distance(grid: &TorusGrid, a: &SurfaceComponent, b: &SurfaceComponent) -> f64 {
    a.vertices
        .par_iter()
        .map(|x| b.vertices.iter().map(|y| grid.periodic_distance(x, y)).fold(f64::INFINITY, f64::min))
        .reduce(|| f64::INFINITY, f64::min)
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn unit(a: &Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        *a
    }
}

fn closest_on_segment(p: &Vec3, s: &Vec3) -> (f64, Vec<f64>) {
    let ss = dot(s, s);
    let t = if ss > 0.0 { (dot(p, s) / ss).clamp(0.0, 1.0) } else { 0.0 };
    let q = scale(s, t);
    (norm(&sub(p, &q)), vec![1.0 - t, t])
}

/// Closest point of the triangle `(0, b, c)` to `p`, with barycentric weights.
fn closest_on_triangle(p: &Vec3, b: &Vec3, c: &Vec3) -> (f64, Vec<f64>) {
    let ab = *b;
    let ac = *c;
    let ap = *p;
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    let finish = |w: [f64; 3]| {
        let q = add(&scale(b, w[1]), &scale(c, w[2]));
        (norm(&sub(p, &q)), w.to_vec())
    };
    if d1 <= 0.0 && d2 <= 0.0 {
        return finish([1.0, 0.0, 0.0]);
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return finish([0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return finish([1.0 - v, v, 0.0]);
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return finish([0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return finish([1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return finish([0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    finish([1.0 - v - w, v, w])
}

type EdgeKey = (usize, usize);

struct Extractor<'a> {
    grid: &'a TorusGrid,
    u: &'a [f64],
    level: f64,
    grad: Vec<f64>,
    floor: f64,
    ids: HashMap<EdgeKey, usize>,
    positions: Vec<Vec3>,
}

impl<'a> Extractor<'a> {
    fn positive(&self, i: usize) -> bool {
        self.u[i] - self.level >= 0.0
    }

    fn crosses(&self, key: EdgeKey) -> bool {
        let b = self.grid.shift(key.0, key.1, 1);
        self.positive(key.0) != self.positive(b)
    }

    fn vertex(&mut self, key: EdgeKey) -> Result<usize, SurfaceError> {
        if let Some(&v) = self.ids.get(&key) {
            return Ok(v);
        }
        let (a, axis) = key;
        let b = self.grid.shift(a, axis, 1);
        let ua = self.u[a] - self.level;
        let ub = self.u[b] - self.level;
        let t = ua / (ua - ub);
        let g = (1.0 - t) * self.grad[a] + t * self.grad[b];
        if g < self.floor {
            return Err(SurfaceError::NotTransversal { node: a, grad: g });
        }
        let mut x = self.grid.position(a);
        x[axis] += t * self.grid.spacing()[axis];
        let id = self.positions.len();
        self.positions.push(x);
        self.ids.insert(key, id);
        Ok(id)
    }

    /// Cut vertices can coincide at nodes on the level; midpoints of distinct edges cannot.
    fn midpoint(&self, key: EdgeKey) -> Vec3 {
        let mut x = self.grid.position(key.0);
        x[key.1] += 0.5 * self.grid.spacing()[key.1];
        x
    }

    /// Vector from the negative to the positive end of an edge.
    fn rise(&self, key: EdgeKey) -> Vec3 {
        let mut v = [0.0; 3];
        v[key.1] = if self.positive(key.0) { -1.0 } else { 1.0 };
        v
    }

    /// Pairs crossing edges on a 4-cycle of corners; `edges[k]` joins `corners[k]` and `corners[k+1]`.
    fn face_pairs(&self, corners: &[usize; 4], edges: &[EdgeKey; 4]) -> Vec<(EdgeKey, EdgeKey)> {
        let crossing: Vec<usize> = (0..4).filter(|&k| self.crosses(edges[k])).collect();
        match crossing.len() {
            2 => vec![(edges[crossing[0]], edges[crossing[1]])],
            4 => {
                let centre: f64 = corners.iter().map(|&c| self.u[c]).sum::<f64>() / 4.0 - self.level;
                let cut_positive = centre < 0.0;
                (0..4)
                    .filter(|&k| self.positive(corners[k]) == cut_positive)
                    .map(|k| (edges[(k + 3) % 4], edges[k]))
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Zero level set (or `level`) of `u` by marching squares / marching cubes with linear
/// interpolation along grid edges. Values equal to `level` count as positive; face saddles are
/// resolved by the face-centre average.
pub fn extract_level_set(
    domain: &Domain,
    u: &ScalarField,
    level: f64,
    grad_floor: Option<f64>,
) -> Result<SurfaceMesh, SurfaceError> {
    u.check_finite()?;
    let grid = domain.grid().clone();
    let dim = grid.dim();
    if dim < 2 {
        return Err(SurfaceError::InvalidInput("level sets need a 2-D or 3-D ambient grid".into()));
    }
    let du = domain.differential(u)?;
    let grad: Vec<f64> = du.values().iter().map(norm).collect();
    let floor = grad_floor.unwrap_or(1e-8 * grad.iter().cloned().fold(0.0, f64::max));
    let mut ex = Extractor { grid: &grid, u: u.values(), level, grad, floor, ids: HashMap::new(), positions: Vec::new() };
    let n = grid.len();
    // degenerate cells: all corners exactly at the level
    for i in 0..n {
        let corners = cell_corners(&grid, i);
        if corners.iter().all(|&c| u.values()[c] == level) {
            return Err(SurfaceError::DegenerateLevelSet { cell: i });
        }
    }
    let metric = domain.metric().clone();
    if dim == 2 {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            let c0 = i;
            let c1 = grid.shift(i, 0, 1);
            let c2 = grid.shift(c1, 1, 1);
            let c3 = grid.shift(i, 1, 1);
            let corners = [c0, c1, c2, c3];
            let edges = [(c0, 0), (c1, 1), (c3, 0), (c0, 1)];
            for (ea, eb) in ex.face_pairs(&corners, &edges) {
                let va = ex.vertex(ea)?;
                let vb = ex.vertex(eb)?;
                let s = grid.periodic_delta(&ex.midpoint(ea), &ex.midpoint(eb));
                let left = [-s[1], s[0], 0.0];
                let r = add(&ex.rise(ea), &ex.rise(eb));
                if dot(&left, &r) >= 0.0 {
                    next.insert(va, vb);
                } else {
                    next.insert(vb, va);
                }
            }
        }
        let mut seen = vec![false; ex.positions.len()];
        let mut loops = Vec::new();
        for start in 0..ex.positions.len() {
            if seen[start] || !next.contains_key(&start) {
                continue;
            }
            let mut lp = Vec::new();
            let mut v = start;
            while !seen[v] {
                seen[v] = true;
                lp.push(ex.positions[v]);
                v = *next.get(&v).ok_or_else(|| SurfaceError::InvalidInput("open level-set curve".into()))?;
            }
            let weld = 1e-9 * grid.min_spacing();
            let mut welded: Vec<Vec3> = Vec::with_capacity(lp.len());
            for x in lp {
                if welded.last().is_none_or(|y| grid.periodic_distance(y, &x) > weld) {
                    welded.push(x);
                }
            }
            while welded.len() > 1 && grid.periodic_distance(&welded[0], welded.last().unwrap()) <= weld {
                welded.pop();
            }
            if welded.len() >= 3 {
                loops.push(welded);
            }
        }
        let comps = loops
            .into_iter()
            .enumerate()
            .map(|(id, v)| curve_component(&grid, &metric, id, v))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(SurfaceMesh::new(grid.clone(), metric, comps));
    }
    // 3-D: per cube, pair crossings on each face and close the resulting cycles
    const FACES: [[[usize; 3]; 4]; 6] = [
        [[0, 0, 0], [0, 1, 0], [0, 1, 1], [0, 0, 1]],
        [[1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 1]],
        [[0, 0, 0], [1, 0, 0], [1, 0, 1], [0, 0, 1]],
        [[0, 1, 0], [1, 1, 0], [1, 1, 1], [0, 1, 1]],
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
        [[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
    ];
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    for i in 0..n {
        let corner = |o: &[usize; 3]| -> usize {
            let mut c = i;
            for a in 0..3 {
                if o[a] == 1 {
                    c = grid.shift(c, a, 1);
                }
            }
            c
        };
        let mut adj: HashMap<EdgeKey, Vec<EdgeKey>> = HashMap::new();
        for face in &FACES {
            let corners = [corner(&face[0]), corner(&face[1]), corner(&face[2]), corner(&face[3])];
            let mut edges = [(0, 0); 4];
            for k in 0..4 {
                let (p, q) = (&face[k], &face[(k + 1) % 4]);
                let axis = (0..3).find(|&a| p[a] != q[a]).unwrap();
                let low = if p[axis] < q[axis] { corners[k] } else { corners[(k + 1) % 4] };
                edges[k] = (low, axis);
            }
            for (a, b) in ex.face_pairs(&corners, &edges) {
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
        }
        let mut used: Vec<EdgeKey> = Vec::new();
        let mut keys: Vec<EdgeKey> = adj.keys().cloned().collect();
        keys.sort_unstable();
        for start in keys {
            if used.contains(&start) {
                continue;
            }
            let mut cycle = vec![start];
            used.push(start);
            let mut prev = start;
            let mut cur = adj[&start][0];
            while cur != start {
                cycle.push(cur);
                used.push(cur);
                let nb = &adj[&cur];
                let nxt = if nb[0] == prev { nb[1] } else { nb[0] };
                prev = cur;
                cur = nxt;
                if cycle.len() > 12 {
                    return Err(SurfaceError::InvalidInput("inconsistent cube cycle".into()));
                }
            }
            let mut ids = Vec::with_capacity(cycle.len());
            for &k in &cycle {
                ids.push(ex.vertex(k)?);
            }
            let base = ex.positions[ids[0]];
            let mid0 = ex.midpoint(cycle[0]);
            let mids: Vec<Vec3> = cycle.iter().map(|&k| grid.periodic_delta(&mid0, &ex.midpoint(k))).collect();
            let mut newell = [0.0; 3];
            for k in 0..mids.len() {
                newell = add(&newell, &cross(&mids[k], &mids[(k + 1) % mids.len()]));
            }
            let rise = cycle.iter().fold([0.0; 3], |acc, &k| add(&acc, &ex.rise(k)));
            if dot(&newell, &rise) < 0.0 {
                ids.reverse();
            }
            let rel: Vec<Vec3> = ids.iter().map(|&v| grid.periodic_delta(&base, &ex.positions[v])).collect();
            match ids.len() {
                3 => triangles.push([ids[0], ids[1], ids[2]]),
                4 => {
                    if norm(&sub(&rel[2], &rel[0])) <= norm(&sub(&rel[3], &rel[1])) {
                        triangles.push([ids[0], ids[1], ids[2]]);
                        triangles.push([ids[0], ids[2], ids[3]]);
                    } else {
                        triangles.push([ids[0], ids[1], ids[3]]);
                        triangles.push([ids[1], ids[2], ids[3]]);
                    }
                }
                m => {
                    let c = rel.iter().fold([0.0; 3], |acc, r| add(&acc, r));
                    let centroid = grid.wrap(&add(&base, &scale(&c, 1.0 / m as f64)));
                    let cid = ex.positions.len();
                    ex.positions.push(centroid);
                    for k in 0..m {
                        triangles.push([ids[k], ids[(k + 1) % m], cid]);
                    }
                }
            }
        }
    }
    let positions = std::mem::take(&mut ex.positions);
    let (positions, triangles) = weld_mesh(&grid, positions, triangles);
    let comps = split_mesh(&positions, &triangles)
        .into_iter()
        .enumerate()
        .map(|(id, (v, t))| surface_component(&grid, &metric, id, v, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SurfaceMesh::new(grid.clone(), metric, comps))
}

fn cell_corners(grid: &TorusGrid, i: usize) -> Vec<usize> {
    let mut corners = vec![i];
    for a in 0..grid.dim() {
        let mut more = Vec::new();
        for &c in &corners {
            more.push(grid.shift(c, a, 1));
        }
        corners.extend(more);
    }
    corners
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merges vertices joined by vanishing edges and drops collapsed triangles.
fn weld_mesh(grid: &TorusGrid, positions: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let tol = 1e-9 * grid.min_spacing();
    let mut parent: Vec<usize> = (0..positions.len()).collect();
    for t in &triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if grid.periodic_distance(&positions[a], &positions[b]) <= tol {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut remap = vec![usize::MAX; positions.len()];
    let mut out = Vec::new();
    for i in 0..positions.len() {
        let r = find(&mut parent, i);
        if remap[r] == usize::MAX {
            remap[r] = out.len();
            out.push(positions[r]);
        }
        remap[i] = remap[r];
    }
    let tris = triangles
        .into_iter()
        .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    (out, tris)
}

type MeshPart = (Vec<Vec3>, Vec<[usize; 3]>);

fn split_mesh(positions: &[Vec3], triangles: &[[usize; 3]]) -> Vec<MeshPart> {
    let mut parent: Vec<usize> = (0..positions.len()).collect();
    for t in triangles {
        for k in 1..3 {
            let (ra, rb) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<usize> = Vec::new();
    let mut group_of = HashMap::new();
    let mut parts: Vec<MeshPart> = Vec::new();
    let mut local = vec![usize::MAX; positions.len()];
    for t in triangles {
        let r = find(&mut parent, t[0]);
        let g = *group_of.entry(r).or_insert_with(|| {
            groups.push(r);
            parts.push((Vec::new(), Vec::new()));
            parts.len() - 1
        });
        let mut lt = [0; 3];
        for k in 0..3 {
            if local[t[k]] == usize::MAX {
                local[t[k]] = parts[g].0.len();
                parts[g].0.push(positions[t[k]]);
            }
            lt[k] = local[t[k]];
        }
        parts[g].1.push(lt);
    }
    parts
}

fn curve_component(grid: &TorusGrid, metric: &Metric, id: usize, vertices: Vec<Vec3>) -> Result<SurfaceComponent, SurfaceError> {
    let n = vertices.len();
    if n < 3 {
        return Err(SurfaceError::InvalidInput("closed curves need at least 3 vertices".into()));
    }
    let dim = grid.dim();
    let lengths = grid.lengths();
    let seg: Vec<Vec3> = (0..n).map(|i| grid.periodic_delta(&vertices[i], &vertices[(i + 1) % n])).collect();
    let len: Vec<f64> = seg.iter().map(norm).collect();
    if len.iter().any(|&l| l <= 0.0) {
        return Err(SurfaceError::InvalidInput("repeated curve vertex".into()));
    }
    let element_normals: Vec<Vec3> = seg.iter().zip(&len).map(|(s, l)| [-s[1] / l, s[0] / l, 0.0]).collect();
    let mut sorted = len.clone();
    sorted.sort_by(f64::total_cmp);
    let window = 4.0 * sorted[n / 2];
    let mut vertex_normals = Vec::with_capacity(n);
    let mut curv = Vec::with_capacity(n);
    let mut ricci = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    let mut min_angle: f64 = 180.0;
    for i in 0..n {
        let p = (i + n - 1) % n;
        let nu = unit(&add(&element_normals[p], &element_normals[i]));
        vertex_normals.push(nu);
        let k_e = fit_curve_curvature(grid, &vertices, &len, i, window);
        let x = &vertices[i];
        let f = metric.exponent(dim, lengths, x);
        let df = metric.exponent_gradient(dim, lengths, x);
        let k_g = (-f).exp() * (k_e - dot(&df, &nu));
        curv.push(k_g * k_g);
        mean.push(k_e);
        ricci.push(metric.ricci_normal(dim, lengths, x, &nu));
        let turn = (dot(&seg[p], &seg[i]) / (len[p] * len[i])).clamp(-1.0, 1.0).acos();
        min_angle = min_angle.min(180.0 - turn.to_degrees());
    }
    let measure = (0..n)
        .map(|i| {
            let mid = grid.wrap(&add(&vertices[i], &scale(&seg[i], 0.5)));
            metric.exponent(dim, lengths, &mid).exp() * len[i]
        })
        .sum();
    let element_curvature_sq = (0..n).map(|i| 0.5 * (curv[i] + curv[(i + 1) % n])).collect();
    Ok(SurfaceComponent {
        id,
        intrinsic_dim: 1,
        vertices,
        triangles: Vec::new(),
        measure,
        multiplicity: 1,
        flagged: false,
        vertex_normals,
        element_normals,
        vertex_curvature_sq: curv,
        element_curvature_sq,
        vertex_ricci: ricci,
        vertex_mean_curvature: mean,
        min_angle_deg: min_angle,
    })
}

/// Signed curvature at vertex `i` (towards the left normal) from a least-squares circle
/// `z = a (s^2 + z^2) + b s` through the vertex, over neighbours within arclength `window` on each side.
fn fit_curve_curvature(grid: &TorusGrid, v: &[Vec3], len: &[f64], i: usize, window: f64) -> f64 {
    let n = v.len();
    let mut pts = Vec::new();
    let mut acc = 0.0;
    let mut k = i;
    loop {
        let prev = (k + n - 1) % n;
        acc += len[prev];
        k = prev;
        pts.push(grid.periodic_delta(&v[i], &v[k]));
        if acc >= window || pts.len() + 1 >= n / 2 {
            break;
        }
    }
    let back = *pts.last().unwrap();
    acc = 0.0;
    k = i;
    let mut fwd;
    loop {
        acc += len[k];
        k = (k + 1) % n;
        fwd = grid.periodic_delta(&v[i], &v[k]);
        pts.push(fwd);
        if acc >= window || pts.len() + 1 >= n {
            break;
        }
    }
    let t = unit(&sub(&fwd, &back));
    let nu = [-t[1], t[0], 0.0];
    let (mut qq, mut qs, mut ss, mut zq, mut zs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in &pts {
        let s = dot(p, &t);
        let z = dot(p, &nu);
        let q = s * s + z * z;
        qq += q * q;
        qs += q * s;
        ss += s * s;
        zq += z * q;
        zs += z * s;
    }
    let det = qq * ss - qs * qs;
    if det.abs() < f64::MIN_POSITIVE {
        return 0.0;
    }
    let a = (zq * ss - qs * zs) / det;
    let b = (qq * zs - qs * zq) / det;
    2.0 * a / (1.0 + b * b).sqrt()
}

/// `(|A|^2, k_1 + k_2)` at a mesh vertex from a least-squares quadric
/// `z = a x^2 + b xy + c y^2 + d x + e y` over its two-ring, in the frame of `nu`.
fn fit_surface_curvature(grid: &TorusGrid, v: &[Vec3], ring: &[usize], i: usize, nu: &Vec3) -> (f64, f64) {
    let seed = if nu[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = unit(&cross(nu, &seed));
    let e2 = cross(nu, &e1);
    let mut ata = nalgebra::Matrix5::<f64>::zeros();
    let mut atz = nalgebra::Vector5::<f64>::zeros();
    for &j in ring {
        if j == i {
            continue;
        }
        let d = grid.periodic_delta(&v[i], &v[j]);
        let (x, y, z) = (dot(&d, &e1), dot(&d, &e2), dot(&d, nu));
        let row = nalgebra::Vector5::new(x * x, x * y, y * y, x, y);
        ata += row * row.transpose();
        atz += row * z;
    }
    match ata.cholesky() {
        Some(ch) => {
            let c = ch.solve(&atz);
            let (a, b, cc) = (c[0], c[1], c[2]);
            (4.0 * a * a + 2.0 * b * b + 4.0 * cc * cc, 2.0 * (a + cc))
        }
        None => (0.0, 0.0),
    }
}

struct TriangleGeometry {
    area: f64,
    normal: Vec3,
    /// Interior angles at the three corners.
    angles: [f64; 3],
}

fn triangle_geometry(grid: &TorusGrid, v: &[Vec3], t: &[usize; 3]) -> TriangleGeometry {
    let p0 = v[t[0]];
    let e = [[0.0; 3], grid.periodic_delta(&p0, &v[t[1]]), grid.periodic_delta(&p0, &v[t[2]])];
    let c = cross(&e[1], &e[2]);
    let area = 0.5 * norm(&c);
    let mut angles = [0.0; 3];
    for k in 0..3 {
        let a = sub(&e[(k + 1) % 3], &e[k]);
        let b = sub(&e[(k + 2) % 3], &e[k]);
        angles[k] = (dot(&a, &b) / (norm(&a) * norm(&b))).clamp(-1.0, 1.0).acos();
    }
    TriangleGeometry { area, normal: unit(&c), angles }
}

fn surface_component(
    grid: &TorusGrid,
    metric: &Metric,
    id: usize,
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
) -> Result<SurfaceComponent, SurfaceError> {
    let n = vertices.len();
    let dim = grid.dim();
    let lengths = grid.lengths();
    let geo: Vec<TriangleGeometry> = triangles.iter().map(|t| triangle_geometry(grid, &vertices, t)).collect();
    let mut area = vec![0.0; n];
    let mut normal_acc = vec![[0.0; 3]; n];
    let mut min_angle: f64 = 180.0;
    for (t, g) in triangles.iter().zip(&geo) {
        for k in 0..3 {
            area[t[k]] += g.area / 3.0;
            normal_acc[t[k]] = add(&normal_acc[t[k]], &scale(&g.normal, g.area));
            min_angle = min_angle.min(g.angles[k].to_degrees());
        }
    }
    let mut one_ring: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in &triangles {
        for k in 0..3 {
            for q in 0..3 {
                if k != q && !one_ring[t[k]].contains(&t[q]) {
                    one_ring[t[k]].push(t[q]);
                }
            }
        }
    }
    let mut vertex_normals = Vec::with_capacity(n);
    let mut curv = Vec::with_capacity(n);
    let mut ricci = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    for i in 0..n {
        let nu = unit(&normal_acc[i]);
        vertex_normals.push(nu);
        let mut ring = one_ring[i].clone();
        for &j in &one_ring[i] {
            for &q in &one_ring[j] {
                if q != i && !ring.contains(&q) {
                    ring.push(q);
                }
            }
        }
        let (a2, h) = fit_surface_curvature(grid, &vertices, &ring, i, &nu);
        let x = &vertices[i];
        let f = metric.exponent(dim, lengths, x);
        let dn = dot(&metric.exponent_gradient(dim, lengths, x), &nu);
        curv.push((-2.0 * f).exp() * (a2 - 2.0 * h * dn + 2.0 * dn * dn).max(0.0));
        mean.push(h);
        ricci.push(metric.ricci_normal(dim, lengths, x, &nu));
    }
    let measure = triangles
        .iter()
        .zip(&geo)
        .map(|(t, g)| {
            let f: f64 = t.iter().map(|&v| metric.exponent(dim, lengths, &vertices[v])).sum::<f64>() / 3.0;
            (2.0 * f).exp() * g.area
        })
        .sum();
    let element_curvature_sq = triangles.iter().map(|t| t.iter().map(|&v| curv[v]).sum::<f64>() / 3.0).collect();
    Ok(SurfaceComponent {
        id,
        intrinsic_dim: 2,
        vertices,
        element_normals: geo.iter().map(|g| g.normal).collect(),
        triangles,
        measure,
        multiplicity: 1,
        flagged: false,
        vertex_normals,
        vertex_curvature_sq: curv,
        element_curvature_sq,
        vertex_ricci: ricci,
        vertex_mean_curvature: mean,
        min_angle_deg: min_angle,
    })
}

/// Mass-to-measure ratio of one component group along a varifold sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityEstimate {
    pub component: usize,
    /// Components merged into this one.
    pub members: Vec<usize>,
    pub ratios: Vec<f64>,
    pub ratio: f64,
    pub multiplicity: Option<u32>,
}

/// Rounds a ratio to a positive integer within 0.2, else `MultiplicityAmbiguous`.
pub fn round_multiplicity(component: usize, ratio: f64) -> Result<u32, SurfaceError> {
    let r = ratio.round();
    if r >= 1.0 && (ratio - r).abs() <= 0.2 {
        Ok(r as u32)
    } else {
        Err(SurfaceError::MultiplicityAmbiguous { component, ratio })
    }
}

fn group_components(surface: &SurfaceMesh, merge_distance: f64) -> Vec<Vec<usize>> {
    let k = surface.components.len();
    let mut parent: Vec<usize> = (0..k).collect();
    for a in 0..k {
        for b in a + 1..k {
            if component_distance(&surface.grid, &surface.components[a], &surface.components[b]) < merge_distance {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut idx = HashMap::new();
    for c in 0..k {
        let r = find(&mut parent, c);
        let g = *idx.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(c);
    }
    groups
}

/// Raw ratios `||V^eps||(tube around C) / measure(C)`; components closer than
/// `merge_distance` form one sheet. Each grid node's mass goes to the nearest sheet within
/// half the sheet separation.
pub fn multiplicity_ratios(
    varifolds: &[DiffuseVarifold],
    surface: &SurfaceMesh,
    merge_distance: f64,
) -> Result<Vec<MultiplicityEstimate>, SurfaceError> {
    if varifolds.is_empty() || surface.components.is_empty() {
        return Err(SurfaceError::InvalidInput("need a varifold sequence and a non-empty surface".into()));
    }
    let groups = group_components(surface, merge_distance);
    let mut sep = f64::INFINITY;
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            for &ca in &groups[a] {
                for &cb in &groups[b] {
                    sep = sep.min(component_distance(&surface.grid, &surface.components[ca], &surface.components[cb]));
                }
            }
        }
    }
    let cap = surface.grid.lengths().iter().cloned().fold(f64::INFINITY, f64::min) / 4.0;
    let tube = (0.5 * sep).min(cap);
    let group_of: Vec<usize> = {
        let mut g = vec![0; surface.components.len()];
        for (gi, members) in groups.iter().enumerate() {
            for &c in members {
                g[c] = gi;
            }
        }
        g
    };
    let mut ratios = vec![Vec::new(); groups.len()];
    for v in varifolds {
        let grid = v.grid();
        let masses = v.node_masses();
        let per_node: Vec<Option<(usize, f64)>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                if masses[i] == 0.0 {
                    return None;
                }
                let x = grid.position(i);
                let mut best = (f64::INFINITY, 0);
                for (ci, c) in surface.components.iter().enumerate() {
                    for y in &c.vertices {
                        let d = grid.periodic_distance(&x, y);
                        if d < best.0 {
                            best = (d, ci);
                        }
                    }
                }
                (best.0 < tube).then_some((group_of[best.1], masses[i]))
            })
            .collect();
        let mut acc = vec![0.0; groups.len()];
        for (g, m) in per_node.into_iter().flatten() {
            acc[g] += m;
        }
        for (gi, members) in groups.iter().enumerate() {
            let measure = members.iter().map(|&c| surface.components[c].measure).sum::<f64>() / members.len() as f64;
            ratios[gi].push(acc[gi] / measure);
        }
    }
    Ok(groups
        .into_iter()
        .zip(ratios)
        .map(|(members, r)| {
            let ratio = *r.last().unwrap();
            MultiplicityEstimate {
                component: members[0],
                multiplicity: round_multiplicity(members[0], ratio).ok(),
                members,
                ratios: r,
                ratio,
            }
        })
        .collect())
}

/// Integer multiplicities from the final varifold; merged sheets keep their first member.
pub fn estimate_multiplicity(
    varifolds: &[DiffuseVarifold],
    surface: &SurfaceMesh,
    merge_distance: f64,
) -> Result<(SurfaceMesh, Vec<MultiplicityEstimate>), SurfaceError> {
    let est = multiplicity_ratios(varifolds, surface, merge_distance)?;
    let mut comps = Vec::new();
    for (k, e) in est.iter().enumerate() {
        let theta = round_multiplicity(e.component, e.ratio)?;
        let mut c = surface.components[e.component].clone();
        c.id = k;
        c.multiplicity = theta;
        comps.push(c);
    }
    Ok((SurfaceMesh::new(surface.grid.clone(), surface.metric.clone(), comps), est))
}

/// Sparse rows of a symmetric matrix.
type SparseRows = Vec<Vec<(usize, f64)>>;

struct ComponentForms {
    stiffness: SparseRows,
    mass: SparseRows,
    lumped: Vec<f64>,
}

fn add_entry(rows: &mut SparseRows, i: usize, j: usize, v: f64) {
    if let Some(e) = rows[i].iter_mut().find(|e| e.0 == j) {
        e.1 += v;
    } else {
        rows[i].push((j, v));
    }
}

fn component_forms(grid: &TorusGrid, metric: &Metric, c: &SurfaceComponent) -> ComponentForms {
    let n = c.len();
    let dim = grid.dim();
    let lengths = grid.lengths();
    let mut k: SparseRows = vec![Vec::new(); n];
    let mut m: SparseRows = vec![Vec::new(); n];
    let mut lumped = vec![0.0; n];
    if c.intrinsic_dim == 1 {
        for i in 0..n {
            let j = (i + 1) % n;
            let s = grid.periodic_delta(&c.vertices[i], &c.vertices[j]);
            let l = norm(&s);
            let mid = grid.wrap(&add(&c.vertices[i], &scale(&s, 0.5)));
            let f = metric.exponent(dim, lengths, &mid);
            let w = (-f).exp() / l;
            let lg = f.exp() * l;
            add_entry(&mut k, i, i, w);
            add_entry(&mut k, j, j, w);
            add_entry(&mut k, i, j, -w);
            add_entry(&mut k, j, i, -w);
            // average of consistent and lumped mass: fourth-order eigenvalues on uniform curves
            add_entry(&mut m, i, i, 5.0 * lg / 12.0);
            add_entry(&mut m, j, j, 5.0 * lg / 12.0);
            add_entry(&mut m, i, j, lg / 12.0);
            add_entry(&mut m, j, i, lg / 12.0);
            lumped[i] += lg / 2.0;
            lumped[j] += lg / 2.0;
        }
    } else {
        for t in &c.triangles {
            let g = triangle_geometry(grid, &c.vertices, t);
            for q in 0..3 {
                let (a, b) = (t[(q + 1) % 3], t[(q + 2) % 3]);
                let w = 0.5 / g.angles[q].tan();
                add_entry(&mut k, a, a, w);
                add_entry(&mut k, b, b, w);
                add_entry(&mut k, a, b, -w);
                add_entry(&mut k, b, a, -w);
                let f = metric.exponent(dim, lengths, &c.vertices[t[q]]);
                lumped[t[q]] += (2.0 * f).exp() * g.area / 3.0;
            }
        }
        for i in 0..n {
            m[i].push((i, lumped[i]));
        }
    }
    ComponentForms { stiffness: k, mass: m, lumped }
}

/// `L_V` on masked surface nodes, Dirichlet outside.
pub struct JacobiOperator<'s> {
    surface: &'s SurfaceMesh,
    mask: SurfaceMask,
    /// `|A|^2 + Ric(nu, nu)` per surface node.
    potential: Vec<f64>,
    forms: Vec<ComponentForms>,
}

/// Minimum triangle angle accepted before surface spectra.
pub const MIN_ANGLE_DEG: f64 = 15.0;

pub fn jacobi_operator<'s>(surface: &'s SurfaceMesh, mask: &SurfaceMask) -> Result<JacobiOperator<'s>, SurfaceError> {
    if mask.inside.len() != surface.node_count() {
        return Err(SurfaceError::InvalidInput("mask size does not match the surface".into()));
    }
    if mask.count() == 0 {
        return Err(SurfaceError::EmptyRegion);
    }
    for c in &surface.components {
        if c.intrinsic_dim == 2 && c.min_angle_deg < MIN_ANGLE_DEG {
            return Err(SurfaceError::MeshQuality { min_angle_deg: c.min_angle_deg, limit_deg: MIN_ANGLE_DEG });
        }
    }
    let mut potential = Vec::with_capacity(surface.node_count());
    for c in &surface.components {
        for i in 0..c.len() {
            potential.push(c.vertex_curvature_sq[i] + c.vertex_ricci[i]);
        }
    }
    let forms = surface.components.iter().map(|c| component_forms(&surface.grid, &surface.metric, c)).collect();
    Ok(JacobiOperator { surface, mask: mask.clone(), potential, forms })
}

impl JacobiOperator<'_> {
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn mask(&self) -> &SurfaceMask {
        &self.mask
    }

    /// `(B_V(phi, phi), ||phi||^2)` with multiplicity weights; `phi` is zeroed off the mask.
    pub fn form_and_norm(&self, phi: &[f64], weights: &[f64]) -> (f64, f64) {
        let mut b = 0.0;
        let mut m = 0.0;
        for (ci, f) in self.forms.iter().enumerate() {
            let off = self.surface.offsets[ci];
            let val = |i: usize| if self.mask.inside[off + i] { phi[off + i] } else { 0.0 };
            let (mut bc, mut mc) = (0.0, 0.0);
            for i in 0..f.stiffness.len() {
                let pi = val(i);
                if pi == 0.0 {
                    continue;
                }
                bc += pi * f.stiffness[i].iter().map(|&(j, v)| v * val(j)).sum::<f64>();
                bc -= self.potential[off + i] * f.lumped[i] * pi * pi;
                mc += pi * f.mass[i].iter().map(|&(j, v)| v * val(j)).sum::<f64>();
            }
            b += weights[ci] * bc;
            m += weights[ci] * mc;
        }
        (b, m)
    }
}

/// Masked block of one component with lumped mass, for the iterative path.
struct LumpedBlock {
    rows: SparseRows,
    inv_sqrt: Vec<f64>,
    diag: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl SymmetricProblem for LumpedBlock {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, r) in self.rows.iter().enumerate() {
            y[i] = self.inv_sqrt[i] * r.iter().map(|&(j, v)| v * self.inv_sqrt[j] * x[j]).sum::<f64>();
        }
    }

    fn lower_bound(&self) -> f64 {
        self.lower
    }

    fn upper_bound(&self) -> f64 {
        self.upper
    }

    fn solve_shifted(&self, shift: f64, b: &[f64], x: &mut [f64]) -> Result<usize, SpectrumError> {
        let info = pminres(
            |v, out| {
                self.apply(v, out);
                for i in 0..v.len() {
                    out[i] -= shift * v[i];
                }
            },
            |v, out| {
                for i in 0..v.len() {
                    out[i] = v[i] / (self.diag[i] - shift).abs().max(1e-300);
                }
            },
            b,
            x,
            1e-12,
            20 * b.len() + 100,
        )
        .map_err(SpectrumError::InnerSolve)?;
        Ok(info.iterations)
    }
}

/// Threshold on masked component size for the dense generalized eigensolver.
pub const SURFACE_DENSE_LIMIT: usize = 1500;

fn component_spectrum(
    op: &JacobiOperator,
    ci: usize,
    weight: f64,
    p: usize,
    opts: &EigenOptions,
) -> Result<Vec<(f64, Vec<f64>, f64)>, SurfaceError> {
    let f = &op.forms[ci];
    let off = op.surface.offsets[ci];
    let nodes: Vec<usize> = (0..f.stiffness.len()).filter(|&i| op.mask.inside[off + i]).collect();
    let m = nodes.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut pos = vec![usize::MAX; f.stiffness.len()];
    for (k, &i) in nodes.iter().enumerate() {
        pos[i] = k;
    }
    let take = p.min(m);
    let lift = |y: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; op.surface.node_count()];
        for (k, &i) in nodes.iter().enumerate() {
            g[off + i] = y[k];
        }
        g
    };
    let intrinsic = op.surface.components[ci].intrinsic_dim;
    if m <= SURFACE_DENSE_LIMIT || intrinsic == 1 && m <= 4 * SURFACE_DENSE_LIMIT {
        let mut kd = DMatrix::<f64>::zeros(m, m);
        let mut md = DMatrix::<f64>::zeros(m, m);
        for (a, &i) in nodes.iter().enumerate() {
            for &(j, v) in &f.stiffness[i] {
                if pos[j] != usize::MAX {
                    kd[(a, pos[j])] += weight * v;
                }
            }
            kd[(a, a)] -= weight * op.potential[off + i] * f.lumped[i];
            for &(j, v) in &f.mass[i] {
                if pos[j] != usize::MAX {
                    md[(a, pos[j])] += weight * v;
                }
            }
        }
        let chol = md.clone().cholesky().ok_or_else(|| SurfaceError::InvalidInput("mass matrix not positive".into()))?;
        let l = chol.l();
        let linv = l.clone().try_inverse().ok_or_else(|| SurfaceError::InvalidInput("singular mass factor".into()))?;
        let c = &linv * &kd * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut out = Vec::with_capacity(take);
        for &k in order.iter().take(take) {
            let lam = eig.eigenvalues[k];
            let y = eig.eigenvectors.column(k).into_owned();
            let res = (&c * &y - &y * lam).norm();
            let phi = linv.transpose() * y;
            out.push((lam, lift(phi.as_slice()), res));
        }
        return Ok(out);
    }
    let rows: SparseRows = nodes
        .iter()
        .map(|&i| {
            let mut r: Vec<(usize, f64)> =
                f.stiffness[i].iter().filter(|e| pos[e.0] != usize::MAX).map(|&(j, v)| (pos[j], weight * v)).collect();
            add_entry_vec(&mut r, pos[i], -weight * op.potential[off + i] * f.lumped[i]);
            r
        })
        .collect();
    let inv_sqrt: Vec<f64> = nodes.iter().map(|&i| 1.0 / (weight * f.lumped[i]).sqrt()).collect();
    let diag: Vec<f64> =
        rows.iter().enumerate().map(|(a, r)| r.iter().filter(|e| e.0 == a).map(|e| e.1).sum::<f64>() * inv_sqrt[a] * inv_sqrt[a]).collect();
    let (mut lower, mut upper) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, r) in rows.iter().enumerate() {
        let off_sum: f64 = r.iter().filter(|e| e.0 != a).map(|e| (e.1 * inv_sqrt[a] * inv_sqrt[e.0]).abs()).sum();
        lower = lower.min(diag[a] - off_sum);
        upper = upper.max(diag[a] + off_sum);
    }
    let block = LumpedBlock { rows, inv_sqrt: inv_sqrt.clone(), diag, lower, upper };
    let mut o = opts.clone();
    o.want_vectors = true;
    let res = eigen_smallest_problem(&block, take, &o, "surface")?;
    let vecs = res.eigenvectors.unwrap_or_default();
    Ok(res
        .eigenvalues
        .iter()
        .zip(vecs)
        .zip(res.residuals)
        .map(|((&lam, y), r)| {
            let phi: Vec<f64> = y.iter().zip(&inv_sqrt).map(|(a, b)| a * b).collect();
            (lam, lift(&phi), r)
        })
        .collect())
}

fn add_entry_vec(r: &mut Vec<(usize, f64)>, j: usize, v: f64) {
    if let Some(e) = r.iter_mut().find(|e| e.0 == j) {
        e.1 += v;
    } else {
        r.push((j, v));
    }
}

/// Lowest `p` eigenvalues of `L_V phi + lambda phi = 0` on the mask. The weighted variant
/// scales both forms by the multiplicity of each component.
pub fn jacobi_spectrum(
    op: &JacobiOperator,
    p: usize,
    multiplicities: &[u32],
    weighted: bool,
    opts: &EigenOptions,
) -> Result<SpectrumResult, SurfaceError> {
    if p == 0 {
        return Err(SpectrumError::InvalidRequest("p must be positive".into()).into());
    }
    if multiplicities.len() != op.surface.components.len() {
        return Err(SurfaceError::InvalidInput("one multiplicity per component".into()));
    }
    let avail = op.mask.count();
    if p > avail {
        return Err(SpectrumError::InvalidRequest(format!("p = {p} with {avail} surface nodes")).into());
    }
    let parts: Vec<Vec<(f64, Vec<f64>, f64)>> = (0..op.forms.len())
        .into_par_iter()
        .map(|ci| {
            let w = if weighted { multiplicities[ci] as f64 } else { 1.0 };
            component_spectrum(op, ci, w, p, opts)
        })
        .collect::<Result<_, _>>()?;
    let mut all: Vec<(f64, Vec<f64>, f64)> = parts.into_iter().flatten().collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all.truncate(p);
    let solver = if op.forms.iter().all(|f| f.stiffness.len() <= SURFACE_DENSE_LIMIT) { SolverKind::Dense } else { SolverKind::Lanczos };
    Ok(SpectrumResult {
        eigenvalues: all.iter().map(|e| e.0).collect(),
        residuals: all.iter().map(|e| e.2).collect(),
        eigenvectors: opts.want_vectors.then(|| all.into_iter().map(|e| e.1).collect()),
        solver,
        region: op.mask.label.clone(),
    })
}

/// Effective Dirichlet length of a masked arc: the distance between the excluded vertices
/// that bracket a single masked run on a curve component.
pub fn masked_arc_length(surface: &SurfaceMesh, mask: &SurfaceMask, component: usize) -> Option<f64> {
    let c = &surface.components[component];
    if c.intrinsic_dim != 1 {
        return None;
    }
    let off = surface.offsets[component];
    let n = c.len();
    let inside = |i: usize| mask.inside[off + (i % n)];
    let start = (0..n).find(|&i| !inside(i) && inside(i + 1))?;
    let mut l = 0.0;
    let mut i = start;
    loop {
        l += surface.grid.periodic_distance(&c.vertices[i % n], &c.vertices[(i + 1) % n]);
        i += 1;
        if !inside(i) {
            break;
        }
    }
    Some(l)
}

/// `eta` with `eta = 1` on `[0, 1/2)` and support in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// Cubic smoothstep, C^1.
    #[default]
    Cubic,
    /// Quintic smoothstep, C^2.
    Quintic,
}

impl Cutoff {
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.5 {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        let s = 2.0 * t - 1.0;
        match self {
            Cutoff::Cubic => 1.0 - s * s * (3.0 - 2.0 * s),
            Cutoff::Quintic => 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s),
        }
    }
}

/// Extension of a surface function to the ambient space, constant along normals in the inner
/// half of a tube of width `tau`.
pub struct Transfer<'s> {
    surface: &'s SurfaceMesh,
    phi: Vec<f64>,
    tau: f64,
    cutoff: Cutoff,
}

pub fn transfer_test_function<'s>(
    surface: &'s SurfaceMesh,
    phi_surface: &[f64],
    tau: f64,
    cutoff: Cutoff,
) -> Result<Transfer<'s>, SurfaceError> {
    if phi_surface.len() != surface.node_count() {
        return Err(SurfaceError::InvalidInput("surface function size mismatch".into()));
    }
    if !(tau > 0.0) {
        return Err(SurfaceError::InvalidInput(format!("tube width {tau}")));
    }
    let sep = surface.min_separation();
    if tau > 0.5 * sep {
        return Err(SurfaceError::TubeOverlap { tau, separation: sep });
    }
    Ok(Transfer { surface, phi: phi_surface.to_vec(), tau, cutoff })
}

impl Transfer<'_> {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `(value, distance to the surface)` at `x`.
    pub fn eval_with_distance(&self, x: &Vec3) -> (f64, f64) {
        let (d, c, w) = self.surface.closest_point(x);
        if d >= self.tau {
            return (0.0, d);
        }
        let off = self.surface.offsets[c];
        let v: f64 = w.iter().map(|&(i, wi)| wi * self.phi[off + i]).sum();
        (v * self.cutoff.eval(d / self.tau), d)
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        self.eval_with_distance(x).0
    }

    pub fn field(&self, grid: &Arc<TorusGrid>) -> ScalarField {
        let vals: Vec<f64> = (0..grid.len()).into_par_iter().map(|i| self.eval(&grid.position(i))).collect();
        ScalarField::from_vec_unchecked(grid.clone(), vals)
    }

    /// Largest `|<grad phi, grad d>|` over grid nodes with `min_dist <= d < tau/2`, by central
    /// differences of step `delta` along the distance gradient.
    pub fn max_normal_derivative(&self, grid: &Arc<TorusGrid>, min_dist: f64, delta: f64) -> f64 {
        (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.position(i);
                let (d, c, w) = self.surface.closest_point(&x);
                if d < min_dist || d >= 0.5 * self.tau {
                    return 0.0;
                }
                let comp = &self.surface.components[c];
                let base = comp.vertices[w[0].0];
                let mut foot = [0.0; 3];
                for &(k, wk) in &w {
                    foot = add(&foot, &scale(&grid.periodic_delta(&base, &comp.vertices[k]), wk));
                }
                let rel = sub(&grid.periodic_delta(&base, &x), &foot);
                let n = unit(&rel);
                let xp = grid.wrap(&add(&x, &scale(&n, delta)));
                let xm = grid.wrap(&add(&x, &scale(&n, -delta)));
                ((self.eval(&xp) - self.eval(&xm)) / (2.0 * delta)).abs()
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// One Allen-Cahn solution in a sequence.
pub struct RunSample<'a> {
    pub domain: &'a Domain,
    pub u: &'a ScalarField,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighTable {
    pub j_v: f64,
    /// `(eps, J_i(|grad u_i| phi_i))`
    pub rows: Vec<(f64, f64)>,
    pub tail_max: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Compares the surface Rayleigh quotient with those of transferred test functions.
#[allow(clippy::too_many_arguments)]
pub fn rayleigh_transfer_check(
    runs: &[RunSample],
    potential: Potential,
    op: &JacobiOperator,
    phi_surface: &[f64],
    tau: f64,
    cutoff: Cutoff,
    tail: usize,
    slack_rel: f64,
) -> Result<RayleighTable, SurfaceError> {
    let weights: Vec<f64> = op.surface.components.iter().map(|c| c.multiplicity as f64).collect();
    let (b, m) = op.form_and_norm(phi_surface, &weights);
    if !(m > 0.0) {
        return Err(SurfaceError::ZeroNorm);
    }
    let j_v = b / m;
    let masked: Vec<f64> = phi_surface.iter().zip(&op.mask.inside).map(|(&v, &ok)| if ok { v } else { 0.0 }).collect();
    let tr = transfer_test_function(op.surface, &masked, tau, cutoff)?;
    let mut rows = Vec::with_capacity(runs.len());
    for r in runs {
        let phi = tr.field(r.domain.grid());
        let g = r.domain.grad_norm_sq(r.u)?;
        let psi: Vec<f64> = g.values().iter().zip(phi.values()).map(|(g2, p)| g2.sqrt() * p).collect();
        let norm_sq = r.domain.integrate_slice(&psi.iter().map(|v| v * v).collect::<Vec<_>>(), None);
        if !(norm_sq > 0.0) {
            return Err(SurfaceError::ZeroNorm);
        }
        let psi = ScalarField::from_vec_unchecked(r.u.grid().clone(), psi);
        let q = second_variation_rescaled(r.domain, potential, r.u, r.epsilon, &psi, None).map_err(crate::error::VarifoldError::from)?;
        rows.push((r.epsilon, q / norm_sq));
    }
    let t = tail.min(rows.len()).max(1);
    let tail_max = rows[rows.len() - t..].iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let slack = slack_rel * (1.0 + j_v.abs());
    Ok(RayleighTable { j_v, rows, tail_max, slack, pass: j_v >= tail_max - slack })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueVerdict {
    pub p: usize,
    pub lambda_v: f64,
    pub tail_max: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralVerdict {
    pub per_p: Vec<EigenvalueVerdict>,
    pub negatives: usize,
    pub k: usize,
    pub index_bound_pass: bool,
}

impl SpectralVerdict {
    pub fn lower_bound_pass(&self) -> bool {
        self.per_p.iter().all(|v| v.pass)
    }
}

/// `lambda_p(W) >= max(last `tail` of lambda_p^i(W)) - slack_rel (1 + |lambda_p(W)|)` per `p`,
/// and at most `k` surface eigenvalues below `-tol_zero`.
pub fn spectral_verdict(
    lambda_v: &[f64],
    lambda_i: &[Vec<f64>],
    k: usize,
    tail: usize,
    slack_rel: f64,
    tol_zero: f64,
) -> Result<SpectralVerdict, SurfaceError> {
    if lambda_i.len() < 3 || tail < 1 {
        return Err(SurfaceError::InsufficientSchedule(lambda_i.len()));
    }
    let t = tail.min(lambda_i.len());
    let rows = &lambda_i[lambda_i.len() - t..];
    let per_p = lambda_v
        .iter()
        .enumerate()
        .filter(|(p, _)| rows.iter().all(|r| r.len() > *p))
        .map(|(p, &lv)| {
            let tail_max = rows.iter().map(|r| r[p]).fold(f64::NEG_INFINITY, f64::max);
            let slack = slack_rel * (1.0 + lv.abs());
            EigenvalueVerdict { p: p + 1, lambda_v: lv, tail_max, slack, pass: lv >= tail_max - slack }
        })
        .collect();
    let negatives = lambda_v.iter().filter(|&&l| l < -tol_zero).count();
    Ok(SpectralVerdict { per_p, negatives, k, index_bound_pass: negatives <= k })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PunctureRow {
    pub radius: f64,
    pub removed: usize,
    pub eigenvalues: Vec<f64>,
    pub gap: Vec<f64>,
    /// Gap divided by the largest `|lambda_q(W)|`, `q <= p + 1`.
    pub relative_gap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkingBallTable {
    pub base: Vec<f64>,
    pub rows: Vec<PunctureRow>,
    pub monotone: bool,
    pub flag: Option<String>,
}

/// Spectra of `W` minus closed balls `B(y, R_m)` for decreasing radii.
pub fn shrinking_ball_spectrum(
    surface: &SurfaceMesh,
    mask: &SurfaceMask,
    y: &Vec3,
    radii: &[f64],
    p: usize,
    opts: &EigenOptions,
) -> Result<ShrinkingBallTable, SurfaceError> {
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] < w[0])) || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(SurfaceError::InvalidInput("radii must be positive and strictly decreasing".into()));
    }
    let theta = surface.multiplicities();
    let op = jacobi_operator(surface, mask)?;
    let base_all = jacobi_spectrum(&op, (p + 1).min(mask.count()), &theta, false, opts)?.eigenvalues;
    let base: Vec<f64> = base_all.iter().take(p).cloned().collect();
    let scale = base_all.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let inside: Vec<bool> = (0..surface.node_count())
            .map(|i| mask.inside[i] && surface.grid.periodic_distance(&surface.position(i), y) > r)
            .collect();
        let removed = mask.count() - inside.iter().filter(|&&b| b).count();
        let punctured = SurfaceMask::new(inside, format!("{}-ball({r})", mask.label));
        let op = jacobi_operator(surface, &punctured)?;
        let eigenvalues = jacobi_spectrum(&op, p.min(punctured.count()), &theta, false, opts)?.eigenvalues;
        let gap: Vec<f64> = eigenvalues.iter().zip(&base).map(|(a, b)| a - b).collect();
        let relative_gap = gap.iter().map(|g| g / scale).collect();
        rows.push(PunctureRow { radius: r, removed, eigenvalues, gap, relative_gap });
    }
    let monotone = rows.windows(2).all(|w| w[1].eigenvalues.iter().zip(&w[0].eigenvalues).all(|(b, a)| *b <= a + 1e-9));
    let flag = surface
        .components
        .iter()
        .any(|c| c.intrinsic_dim < 2)
        .then(|| "intrinsic dimension 1: punctures keep positive capacity, so the gap need not close".to_string());
    Ok(ShrinkingBallTable { base, rows, monotone, flag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TorusGrid;
    use std::f64::consts::PI;

    fn flat(dim: usize, n: usize) -> Domain {
        let l = vec![1.0; dim];
        let r = vec![n; dim];
        Domain::flat(Arc::new(TorusGrid::new(dim, &l, &r).unwrap()))
    }

    fn circle(grid: &Arc<TorusGrid>, r: f64, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [0.5 + r * t.cos(), 0.5 + r * t.sin(), 0.0]
            })
            .map(|x| grid.wrap(&x))
            .collect()
    }

    #[test]
    fn circle_harmonics() {
        let d = flat(2, 8);
        let r = 1.0 / (2.0 * PI);
        let s = SurfaceMesh::from_polylines(d.grid().clone(), Metric::Flat, vec![circle(d.grid(), r, 512)]).unwrap();
        assert!((s.components()[0].measure - 1.0).abs() < 1e-4);
        // the Jacobi potential of a circle is 1/r^2; strip it to test the Laplacian alone
        let mut s2 = s.clone();
        s2.components[0].vertex_curvature_sq.iter_mut().for_each(|v| *v = 0.0);
        let op = jacobi_operator(&s2, &s2.full_mask()).unwrap();
        let ev = jacobi_spectrum(&op, 3, &[1], false, &EigenOptions::default()).unwrap().eigenvalues;
        // an inscribed 512-gon is shorter than the circle; compare with its own perimeter
        let l = s.components()[0].vertices.len() as f64 * 2.0 * r * (PI / 512.0).sin();
        let k2 = (2.0 * PI / l).powi(2);
        assert!(ev[0].abs() < 1e-9);
        assert!((ev[1] - k2).abs() < 1e-6 && (ev[2] - k2).abs() < 1e-6, "{ev:?} vs {k2}");
        let op = jacobi_operator(&s, &s.full_mask()).unwrap();
        assert!(op.potential().iter().all(|&v| (v * r * r - 1.0).abs() < 1e-3));
    }

    #[test]
    fn dirichlet_arc_modes() {
        let d = flat(2, 128);
        let g = d.grid().clone();
        let u = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin());
        let s = extract_level_set(&d, &u, 0.0, None).unwrap();
        assert_eq!(s.components().len(), 2);
        for c in s.components() {
            assert!((c.measure - 1.0).abs() < 2.0 / 128.0);
        }
        let spec = RegionSpec::Box { lo: vec![0.25, 0.2], hi: vec![0.75, 0.8] };
        let mask = s.mask_from_spec(&spec, "box");
        let op = jacobi_operator(&s, &mask).unwrap();
        let ell = masked_arc_length(&s, &mask, 0).unwrap();
        let ev = jacobi_spectrum(&op, 5, &[1, 1], false, &EigenOptions::default()).unwrap().eigenvalues;
        for (p, l) in ev.iter().enumerate() {
            let exact = ((p + 1) as f64 * PI / ell).powi(2);
            assert!((l - exact).abs() / exact < 5e-3, "p={} {l} vs {exact}", p + 1);
        }
        let w = jacobi_spectrum(&op, 5, &[3, 1], true, &EigenOptions::default()).unwrap().eigenvalues;
        for (a, b) in ev.iter().zip(&w) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_and_radial() {
        let d = flat(2, 128);
        let z = ScalarField::constant(d.grid().clone(), 0.0);
        assert!(matches!(extract_level_set(&d, &z, 0.0, None), Err(SurfaceError::DegenerateLevelSet { .. })));
        let g = d.grid().clone();
        let r0 = 0.3;
        let u = ScalarField::from_fn(g.clone(), |x| g.periodic_distance(x, &[0.5, 0.5, 0.0]) - r0);
        let s = extract_level_set(&d, &u, 0.0, None).unwrap();
        assert_eq!(s.components().len(), 1);
        let c = &s.components()[0];
        assert!((c.measure - 2.0 * PI * r0).abs() < 0.02 * 2.0 * PI * r0);
        for k in &c.vertex_curvature_sq {
            assert!((k.sqrt() * r0 - 1.0).abs() < 0.03, "{k}");
        }
        // normals point to +u, i.e. outwards
        for (x, n) in c.vertices.iter().zip(&c.vertex_normals) {
            assert!(dot(&g.periodic_delta(&[0.5, 0.5, 0.0], x), n) > 0.0);
        }
    }

    #[test]
    fn plane_in_three_torus() {
        let d = flat(3, 16);
        let g = d.grid().clone();
        let u = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * (x[2] - 0.01)).sin());
        let s = extract_level_set(&d, &u, 0.0, None).unwrap();
        assert_eq!(s.components().len(), 2);
        for c in s.components() {
            assert!((c.measure - 1.0).abs() < 1e-9, "{}", c.measure);
            assert!(c.min_angle_deg >= 44.9);
            assert!(c.vertex_curvature_sq.iter().all(|&k| k < 1e-9));
        }
        let op = jacobi_operator(&s, &s.full_mask()).unwrap();
        let ev = jacobi_spectrum(&op, 6, &[1, 1], false, &EigenOptions::default()).unwrap().eigenvalues;
        assert!(ev[0].abs() < 1e-9 && ev[1].abs() < 1e-9);
        let k2 = 4.0 * PI * PI;
        assert!((ev[2] - k2).abs() / k2 < 0.02, "{ev:?}");
    }

    #[test]
    fn sphere_is_closed_and_curved() {
        let d = flat(3, 32);
        let g = d.grid().clone();
        let r0 = 0.3;
        let u = ScalarField::from_fn(g.clone(), |x| g.periodic_distance(x, &[0.5, 0.5, 0.5]) - r0);
        let s = extract_level_set(&d, &u, 0.0, None).unwrap();
        assert_eq!(s.components().len(), 1);
        let c = &s.components()[0];
        let area = 4.0 * PI * r0 * r0;
        assert!((c.measure - area).abs() < 0.02 * area, "{} vs {area}", c.measure);
        // every edge shared by exactly two triangles
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &c.triangles {
            for k in 0..3 {
                let (a, b) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                *count.entry((a, b)).or_default() += 1;
            }
        }
        assert!(count.values().all(|&v| v == 2));
        let euler = c.vertices.len() as i64 - count.len() as i64 + c.triangles.len() as i64;
        assert_eq!(euler, 2);
        let mean_k: f64 = c.vertex_curvature_sq.iter().sum::<f64>() / c.len() as f64;
        assert!((mean_k * r0 * r0 / 2.0 - 1.0).abs() < 0.1, "{mean_k}");
    }

    #[test]
    fn transfer_plateau_and_overlap() {
        let d = flat(2, 64);
        let g = d.grid().clone();
        let u = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin());
        let s = extract_level_set(&d, &u, 0.0, None).unwrap();
        let mut phi = vec![0.0; s.node_count()];
        for i in 0..s.components()[0].len() {
            phi[i] = 1.0;
        }
        assert!(matches!(transfer_test_function(&s, &phi, 0.6, Cutoff::Cubic), Err(SurfaceError::TubeOverlap { .. })));
        let t = transfer_test_function(&s, &phi, 0.2, Cutoff::Cubic).unwrap();
        let x0 = s.components()[0].vertices[0];
        assert!((t.eval(&g.wrap(&[x0[0] + 0.05, 0.3, 0.0])) - 1.0).abs() < 1e-12);
        assert_eq!(t.eval(&g.wrap(&[x0[0] + 0.25, 0.3, 0.0])), 0.0);
        assert!(t.max_normal_derivative(&g, 0.02, 1e-5) < 1e-6);
        let smooth: Vec<f64> = (0..s.node_count()).map(|i| (2.0 * PI * s.position(i)[1]).cos()).collect();
        let t = transfer_test_function(&s, &smooth, 0.2, Cutoff::Quintic).unwrap();
        assert!(t.max_normal_derivative(&g, 0.02, 1e-5) < 1e-6);
    }

    #[test]
    fn verdict_rules() {
        assert!(matches!(spectral_verdict(&[0.0], &[vec![0.0], vec![0.0]], 0, 3, 0.05, 1e-8), Err(SurfaceError::InsufficientSchedule(2))));
        let v = spectral_verdict(&[-1.0, 0.0, 5.0], &[vec![-3.0, -0.1, 4.0], vec![-2.0, -0.05, 4.9], vec![-1.5, -0.01, 5.1]], 1, 3, 0.05, 1e-8).unwrap();
        assert!(v.lower_bound_pass());
        assert_eq!(v.negatives, 1);
        assert!(v.index_bound_pass);
        assert!(round_multiplicity(0, 1.45).is_err());
        assert_eq!(round_multiplicity(0, 1.9).unwrap(), 2);
        assert!(round_multiplicity(0, 0.1).is_err());
    }

    #[test]
    fn circle_puncture_table() {
        let d = flat(2, 8);
        let s = SurfaceMesh::from_polylines(d.grid().clone(), Metric::Flat, vec![circle(d.grid(), 1.0 / (2.0 * PI), 256)]).unwrap();
        let mut s = s;
        s.components[0].vertex_curvature_sq.iter_mut().for_each(|v| *v = 0.0);
        let y = s.position(0);
        let t = shrinking_ball_spectrum(&s, &s.full_mask(), &y, &[0.1, 0.05, 0.02], 2, &EigenOptions::default()).unwrap();
        assert!(t.monotone);
        assert!(t.flag.is_some());
        assert!(t.rows.iter().all(|r| r.gap[0] > 1.0));
        let bad = shrinking_ball_spectrum(&s, &s.full_mask(), &y, &[0.05, 0.1], 2, &EigenOptions::default());
        assert!(bad.is_err());
    }
}
