//! P1 finite elements for the anti-plane problem on the cracked mesh.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, UnionFind};
use crate::mesh::CrackMesh;

/// Relative residual at which conjugate gradients stop.
pub const CG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
}

/// Boundary displacement `g`, extended to the whole plane by its formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryDatum {
    Zero,
    Constant {
        value: f64,
    },
    /// `a + b x + c y`
    Linear {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `kappa * sqrt(2 rho / pi) * sin(theta / 2)` in polar coordinates about
    /// `tip`, with `theta` measured from the direction `angle` and taking
    /// values in `(-pi, pi]`; the cut sits behind the tip.
    ModeIii {
        kappa: f64,
        tip: Point2,
        angle: f64,
    },
    /// `sum amplitude * sin(kx x + ky y + phase)`
    Trig {
        terms: Vec<TrigTerm>,
    },
    Scaled {
        factor: f64,
        datum: Box<BoundaryDatum>,
    },
    Sum {
        terms: Vec<BoundaryDatum>,
    },
}

impl BoundaryDatum {
    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        BoundaryDatum::Linear { a, b, c }
    }

    /// Mode-III field for a tip at `tip` whose crack runs back along `-direction`.
    pub fn mode_iii(kappa: f64, tip: Point2, direction: Point2) -> Self {
        BoundaryDatum::ModeIii { kappa, tip, angle: direction.angle() }
    }

    pub fn scaled(self, factor: f64) -> Self {
        if factor == 1.0 {
            self
        } else {
            BoundaryDatum::Scaled { factor, datum: Box::new(self) }
        }
    }

    pub fn eval(&self, p: Point2) -> f64 {
        match self {
            BoundaryDatum::Zero => 0.0,
            BoundaryDatum::Constant { value } => *value,
            BoundaryDatum::Linear { a, b, c } => a + b * p.x + c * p.y,
            BoundaryDatum::ModeIii { kappa, tip, angle } => {
                let d = (p - *tip).rotated(-angle);
                let rho = d.norm();
                if rho == 0.0 {
                    return 0.0;
                }
                kappa * (2.0 * rho / PI).sqrt() * (0.5 * d.y.atan2(d.x)).sin()
            }
            BoundaryDatum::Trig { terms } => terms
                .iter()
                .map(|t| t.amplitude * (t.kx * p.x + t.ky * p.y + t.phase).sin())
                .sum(),
            BoundaryDatum::Scaled { factor, datum } => factor * datum.eval(p),
            BoundaryDatum::Sum { terms } => terms.iter().map(|t| t.eval(p)).sum(),
        }
    }

    /// True if the datum vanishes identically.
    pub fn is_zero(&self) -> bool {
        match self {
            BoundaryDatum::Zero => true,
            BoundaryDatum::Constant { value } => *value == 0.0,
            BoundaryDatum::Linear { a, b, c } => *a == 0.0 && *b == 0.0 && *c == 0.0,
            BoundaryDatum::ModeIii { kappa, .. } => *kappa == 0.0,
            BoundaryDatum::Trig { terms } => terms.iter().all(|t| t.amplitude == 0.0),
            BoundaryDatum::Scaled { factor, datum } => *factor == 0.0 || datum.is_zero(),
            BoundaryDatum::Sum { terms } => terms.iter().all(|t| t.is_zero()),
        }
    }

    pub fn tag(&self) -> String {
        serde_json::to_string(self).expect("datum serializes")
    }
}

/// Nodal values on a mesh; duplicated crack nodes carry their own values.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub mesh: Arc<CrackMesh>,
    pub values: Vec<f64>,
}

/// Per-triangle constant gradient.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub mesh: Arc<CrackMesh>,
    pub grads: Vec<Point2>,
}

impl ScalarField {
    pub fn zeros(mesh: Arc<CrackMesh>) -> Self {
        let n = mesh.num_nodes();
        Self { mesh, values: vec![0.0; n] }
    }

    /// Nodal interpolant of `g`, evaluated on the correct side of the crack.
    pub fn interpolate(mesh: Arc<CrackMesh>, g: &BoundaryDatum) -> Self {
        let values = (0..mesh.num_nodes()).map(|i| g.eval(mesh.evaluation_point(i))).collect();
        Self { mesh, values }
    }

    pub fn gradient(&self) -> GradientField {
        let m = &self.mesh;
        let grads = m
            .triangles
            .iter()
            .map(|t| {
                let (g, _) = p1_gradients(m, t);
                g.iter()
                    .zip(t)
                    .fold(Point2::default(), |acc, (gi, &n)| acc + *gi * self.values[n])
            })
            .collect();
        GradientField { mesh: self.mesh.clone(), grads }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { mesh: self.mesh.clone(), values: self.values.iter().map(|v| v * factor).collect() }
    }

    /// CSV with header `node_id,x,y,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node_id,x,y,value\n");
        for (i, (p, v)) in self.mesh.nodes.iter().zip(&self.values).enumerate() {
            let _ = writeln!(s, "{i},{:?},{:?},{v:?}", p.x, p.y);
        }
        s
    }

    pub fn to_vtk(&self, name: &str) -> String {
        self.mesh.to_vtk(Some((name, &self.values)))
    }

    /// P1 interpolation at an arbitrary point, `None` outside the mesh. On
    /// the crack the value of the lowest-index triangle containing the point
    /// is returned.
    pub fn eval_at(&self, p: Point2) -> Option<f64> {
        let m = &self.mesh;
        for t in &m.triangles {
            let (a, b, c) = (m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]);
            let det = (b - a).cross(c - a);
            let l1 = (p - a).cross(c - a) / det;
            let l2 = (b - a).cross(p - a) / det;
            let l0 = 1.0 - l1 - l2;
            let tol = -1e-12;
            if l0 >= tol && l1 >= tol && l2 >= tol {
                return Some(l0 * self.values[t[0]] + l1 * self.values[t[1]] + l2 * self.values[t[2]]);
            }
        }
        None
    }
}

impl GradientField {
    /// `R grad u` with `R(y1, y2) = (-y2, y1)`.
    pub fn rotated(&self) -> GradientField {
        GradientField { mesh: self.mesh.clone(), grads: self.grads.iter().map(|g| g.perp()).collect() }
    }
}

/// Gradients of the three barycentric basis functions and the area.
fn p1_gradients(m: &CrackMesh, t: &[usize; 3]) -> ([Point2; 3], f64) {
    let (a, b, c) = (m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]);
    let det = (b - a).cross(c - a);
    let area = 0.5 * det;
    let g = |p: Point2, q: Point2| Point2::new(p.y - q.y, q.x - p.x) * (1.0 / det);
    ([g(b, c), g(c, a), g(a, b)], area)
}

fn element_stiffness(m: &CrackMesh, t: &[usize; 3]) -> [[f64; 3]; 3] {
    let (g, area) = p1_gradients(m, t);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * g[i].dot(g[j]);
        }
    }
    k
}

/// Symmetric sparse matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets; duplicates are summed in a fixed order.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients. Returns the iteration count.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::SolveFailure("non-positive diagonal entry".into()));
    }
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok(it);
        }
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolveFailure("matrix not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= tol * bnorm {
        Ok(max_iter)
    } else {
        Err(Error::SolveFailure(format!("conjugate gradients did not converge in {max_iter} iterations")))
    }
}

/// Constrained nodes and their values: Dirichlet nodes take `g`, and on each
/// connected component without a Dirichlet node the lowest node is pinned to 0.
pub fn constraints(mesh: &CrackMesh, g: &BoundaryDatum) -> Vec<Option<f64>> {
    let n = mesh.num_nodes();
    let mut fixed = vec![None; n];
    for i in mesh.dirichlet_nodes() {
        fixed[i] = Some(g.eval(mesh.evaluation_point(i)));
    }
    let mut uf = UnionFind::new(n);
    for t in &mesh.triangles {
        uf.union(t[0], t[1]);
        uf.union(t[1], t[2]);
    }
    let mut anchored = vec![false; n];
    for i in 0..n {
        if fixed[i].is_some() {
            let r = uf.find(i);
            anchored[r] = true;
        }
    }
    for i in 0..n {
        let r = uf.find(i);
        if !anchored[r] {
            anchored[r] = true;
            fixed[i] = Some(0.0);
        }
    }
    fixed
}

/// Discrete minimizer of the Dirichlet energy with `u = g` on the
/// constrained nodes.
pub fn solve(mesh: Arc<CrackMesh>, g: &BoundaryDatum) -> Result<ScalarField> {
    let fixed = constraints(&mesh, g);
    solve_with(mesh, &fixed)
}

/// Discrete minimizer with the given nodal constraints.
pub fn solve_with(mesh: Arc<CrackMesh>, fixed: &[Option<f64>]) -> Result<ScalarField> {
    let n = mesh.num_nodes();
    if fixed.len() != n {
        return Err(Error::MeshMismatch);
    }
    let mut free_id = vec![usize::MAX; n];
    let mut nfree = 0;
    for i in 0..n {
        if fixed[i].is_none() {
            free_id[i] = nfree;
            nfree += 1;
        }
    }
    let mut values: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
    if nfree == 0 {
        return Ok(ScalarField { mesh, values });
    }
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    let mut rhs = vec![0.0; nfree];
    for t in &mesh.triangles {
        let k = element_stiffness(&mesh, t);
        for i in 0..3 {
            let fi = free_id[t[i]];
            if fi == usize::MAX {
                continue;
            }
            for j in 0..3 {
                let fj = free_id[t[j]];
                if fj == usize::MAX {
                    rhs[fi] -= k[i][j] * values[t[j]];
                } else {
                    trip.push((fi, fj, k[i][j]));
                }
            }
        }
    }
    let a = CsrMatrix::from_triplets(nfree, trip);
    let mut x = vec![0.0; nfree];
    conjugate_gradient(&a, &rhs, &mut x, CG_TOL, 20 * nfree.max(1))?;
    for i in 0..n {
        if free_id[i] != usize::MAX {
            values[i] = x[free_id[i]];
        }
    }
    Ok(ScalarField { mesh, values })
}

/// `sum area * |grad u|^2`.
pub fn bulk_energy(u: &ScalarField) -> f64 {
    let g = u.gradient();
    u.mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(t, _)| u.mesh.triangle_area(t) * g.grads[t].norm_sq())
        .sum()
}

/// `sum area * (grad u . grad w)`.
pub fn inner_product(u: &GradientField, w: &GradientField) -> Result<f64> {
    if !same_mesh(&u.mesh, &w.mesh) {
        return Err(Error::MeshMismatch);
    }
    Ok((0..u.grads.len()).map(|t| u.mesh.triangle_area(t) * u.grads[t].dot(w.grads[t])).sum())
}

pub(crate) fn same_mesh(a: &Arc<CrackMesh>, b: &Arc<CrackMesh>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.fingerprint() == b.fingerprint()
            && a.nodes.len() == b.nodes.len()
            && a.triangles == b.triangles)
}

/// Largest residual `|(K u)_i|` over unconstrained nodes, scaled by the
/// largest nodal energy contribution so the number is dimensionless.
pub fn galerkin_residual(u: &ScalarField, g: &BoundaryDatum) -> f64 {
    let m = &u.mesh;
    let fixed = constraints(m, g);
    let n = m.num_nodes();
    let mut r = vec![0.0; n];
    let mut scale = vec![0.0f64; n];
    for t in &m.triangles {
        let k = element_stiffness(m, t);
        for i in 0..3 {
            for j in 0..3 {
                let c = k[i][j] * u.values[t[j]];
                r[t[i]] += c;
                scale[t[i]] = scale[t[i]].max(c.abs());
            }
        }
    }
    (0..n)
        .filter(|&i| fixed[i].is_none() && scale[i] > 0.0)
        .map(|i| r[i].abs() / scale[i])
        .fold(0.0, f64::max)
}

/// Circulation of `R grad u` around the median-dual cell of each unconstrained
/// node that is not on the crack. For a P1 field this equals minus the
/// outward flux of `grad u`, which the discrete equations set to zero.
pub fn dual_circulation(u: &ScalarField, g: &BoundaryDatum) -> Vec<(usize, f64)> {
    let m = &u.mesh;
    let fixed = constraints(m, g);
    let grad = u.gradient().rotated();
    let mut boundary = vec![false; m.num_nodes()];
    for e in &m.boundary_edges {
        boundary[e.nodes[0]] = true;
        boundary[e.nodes[1]] = true;
    }
    let mut circ = vec![0.0; m.num_nodes()];
    for (ti, t) in m.triangles.iter().enumerate() {
        let c = (m.nodes[t[0]] + m.nodes[t[1]] + m.nodes[t[2]]) * (1.0 / 3.0);
        for k in 0..3 {
            let p = m.nodes[t[k]];
            let mid_next = (p + m.nodes[t[(k + 1) % 3]]) * 0.5;
            let mid_prev = (p + m.nodes[t[(k + 2) % 3]]) * 0.5;
            // counterclockwise around the node: mid_next -> centroid -> mid_prev
            let path = (c - mid_next) + (mid_prev - c);
            circ[t[k]] += grad.grads[ti].dot(path);
        }
    }
    (0..m.num_nodes())
        .filter(|&i| fixed[i].is_none() && !boundary[i])
        .map(|i| (i, circ[i]))
        .collect()
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Harmonic conjugate on the triangles whose centroid lies in a region.
#[derive(Debug, Clone)]
pub struct ConjugateField {
    /// Values on all nodes; nodes outside the region hold 0.
    pub field: ScalarField,
    pub nodes: Vec<usize>,
    pub triangles: Vec<usize>,
}

/// Least-squares potential `v` with `grad v ~ R grad u` on the part of the
/// mesh inside `region`, normalized to zero mean over the region's nodes.
pub fn harmonic_conjugate(u: &ScalarField, region: Rect) -> Result<ConjugateField> {
    let m = &u.mesh;
    let tris: Vec<usize> = (0..m.triangles.len())
        .filter(|&t| {
            let tr = m.triangles[t];
            region.contains((m.nodes[tr[0]] + m.nodes[tr[1]] + m.nodes[tr[2]]) * (1.0 / 3.0))
        })
        .collect();
    if tris.is_empty() {
        return Err(Error::RegionNotSimplyConnected("region contains no triangles".into()));
    }
    let mut local = vec![usize::MAX; m.num_nodes()];
    let mut nodes = Vec::new();
    for &t in &tris {
        for &v in &m.triangles[t] {
            if local[v] == usize::MAX {
                local[v] = nodes.len();
                nodes.push(v);
            }
        }
    }
    // connected through shared edges and of Euler characteristic one
    let mut edges = std::collections::BTreeMap::new();
    for (k, &t) in tris.iter().enumerate() {
        let tr = m.triangles[t];
        for i in 0..3 {
            let (a, b) = (tr[i], tr[(i + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_insert_with(Vec::new).push(k);
        }
    }
    let mut uf = UnionFind::new(tris.len());
    for owners in edges.values() {
        if owners.len() == 2 {
            uf.union(owners[0], owners[1]);
        }
    }
    if uf.count() != 1 {
        return Err(Error::RegionNotSimplyConnected("region meets the domain in several pieces".into()));
    }
    let chi = nodes.len() as i64 - edges.len() as i64 + tris.len() as i64;
    if chi != 1 {
        return Err(Error::RegionNotSimplyConnected(format!("region has Euler characteristic {chi}")));
    }

    let rg = u.gradient().rotated();
    let n = nodes.len();
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; n];
    for &t in &tris {
        let tr = m.triangles[t];
        let (g, area) = p1_gradients(m, &tr);
        for i in 0..3 {
            let li = local[tr[i]];
            rhs[li] += area * g[i].dot(rg.grads[t]);
            for j in 0..3 {
                trip.push((li, local[tr[j]], area * g[i].dot(g[j])));
            }
        }
    }
    // pin the first node; the system is otherwise singular
    let trip: Vec<_> = trip.into_iter().filter(|(i, j, _)| *i != 0 && *j != 0).map(|(i, j, v)| (i - 1, j - 1, v)).collect();
    let mut x = vec![0.0; n - 1];
    if n > 1 {
        let a = CsrMatrix::from_triplets(n - 1, trip);
        conjugate_gradient(&a, &rhs[1..], &mut x, CG_TOL, 20 * n)?;
    }
    let mut vals = vec![0.0];
    vals.extend(x);
    let mean = vals.iter().sum::<f64>() / n as f64;
    let mut values = vec![0.0; m.num_nodes()];
    for (k, &v) in nodes.iter().enumerate() {
        values[v] = vals[k] - mean;
    }
    Ok(ConjugateField { field: ScalarField { mesh: u.mesh.clone(), values }, nodes, triangles: tris })
}
