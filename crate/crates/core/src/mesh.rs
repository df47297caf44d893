//! Crack-conforming triangulation of the cracked domain.
//!
//! The point cloud is built by hand and then handed to a constrained Delaunay
//! triangulation:
//!
//! * every crack tip gets a rosette of concentric rings aligned with the tip
//!   tangent: uniform rings of width `h_tip` up to `8 h_tip`, then rings whose
//!   width grows geometrically (ratio `1 / grading`) until it reaches `h_max`;
//! * away from the tips a hexagonal lattice of spacing `h_max`, anchored to
//!   the bounding box of the domain, fills the rest;
//! * boundary edges and crack segments are subdivided with the same size
//!   function; crack segments that end at a tip are subdivided by marching
//!   from the tip, so the crack nodes sit on the rosette rings.
//!
//! Because rosettes move rigidly with the tip and the lattice never moves,
//! two cracks that differ only near one tip produce meshes that differ only
//! near that tip, which keeps energy differences between candidates smooth.
//!
//! After triangulation each crack vertex is split into one node per sector
//! of incident triangles, so the two faces of the crack are disconnected and
//! the traction-free condition holds naturally.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Triangulation};

use crate::domain::{BoundaryKind, DomainSpec};
use crate::error::{Error, Result};
use crate::geometry::{proper_crossing, CrackSet, Point2, Segment, Tip, UnionFind, EPS_GEOM};

/// Tolerance used to merge coincident key points of the input geometry.
const SNAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub h_max: f64,
    pub h_tip: f64,
    /// Ratio between consecutive element sizes in the graded zone.
    #[serde(default = "default_grading")]
    pub grading: f64,
    /// Radius of the uniform zone around each tip, in units of `h_tip`.
    #[serde(default = "default_tip_zone")]
    pub tip_zone: f64,
    /// Smallest admissible triangle angle in degrees.
    #[serde(default = "default_min_angle")]
    pub min_angle_deg: f64,
}

fn default_grading() -> f64 {
    0.7
}
fn default_tip_zone() -> f64 {
    8.0
}
fn default_min_angle() -> f64 {
    5.0
}

impl MeshParams {
    pub fn new(h_max: f64, h_tip: f64) -> Self {
        Self {
            h_max,
            h_tip,
            grading: default_grading(),
            tip_zone: default_tip_zone(),
            min_angle_deg: default_min_angle(),
        }
    }

    pub fn uniform(h: f64) -> Self {
        Self::new(h, h)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.h_max > 0.0
            && self.h_tip > 0.0
            && self.h_tip <= self.h_max
            && self.grading > 0.0
            && self.grading < 1.0
            && self.tip_zone >= 1.0
            && self.h_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid mesh parameters {self:?}")))
        }
    }

    pub(crate) fn key_bytes(&self, out: &mut Vec<u8>) {
        for v in [self.h_max, self.h_tip, self.grading, self.tip_zone, self.min_angle_deg] {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTag {
    Dirichlet,
    Neumann,
    CrackFace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: EdgeTag,
}

/// Two coincident nodes on opposite sides of the crack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrackFacePair {
    pub location: Point2,
    pub plus: usize,
    pub minus: usize,
}

#[derive(Debug, Clone)]
pub struct CrackMesh {
    pub nodes: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub crack_face_pairs: Vec<CrackFacePair>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// One node per crack tip, aligned with `tips`.
    pub tip_nodes: Vec<usize>,
    pub tips: Vec<Tip>,
    /// Nodes on Dirichlet edges whose constraint is lifted because the crack
    /// meets the Dirichlet boundary there.
    pub released: Vec<usize>,
    pub h_max: f64,
    pub h_tip: f64,
    /// For nodes on the crack: a point inside the node's own sector, used to
    /// evaluate data that jump across the crack on the correct side.
    side_hints: Vec<Option<Point2>>,
    fingerprint: u64,
}

impl CrackMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * (self.nodes[b] - self.nodes[a]).cross(self.nodes[c] - self.nodes[a])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn min_angle_deg(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| triangle_min_angle(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]))
            .fold(180.0, f64::min)
    }

    /// Number of distinct undirected edges.
    pub fn num_edges(&self) -> usize {
        let mut edges = BTreeSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// Position at which nodal data should be evaluated: the node itself,
    /// nudged into its own sector for nodes on the crack.
    pub fn evaluation_point(&self, node: usize) -> Point2 {
        let p = self.nodes[node];
        match self.side_hints[node] {
            Some(h) => {
                let d = h - p;
                let n = d.norm();
                if n > 0.0 {
                    p + d * (1e-9 * n.max(1e-300).min(1.0) / n)
                } else {
                    p
                }
            }
            None => p,
        }
    }

    pub fn is_crack_node(&self, node: usize) -> bool {
        self.side_hints[node].is_some()
    }

    /// Nodes carrying a Dirichlet constraint.
    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        let released: BTreeSet<usize> = self.released.iter().copied().collect();
        let mut set = BTreeSet::new();
        for e in &self.boundary_edges {
            if e.tag == EdgeTag::Dirichlet {
                for &n in &e.nodes {
                    if !released.contains(&n) {
                        set.insert(n);
                    }
                }
            }
        }
        set.into_iter().collect()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Plain-text dump: a header line with node, triangle and boundary-edge
    /// counts, then one line per node, triangle and tagged edge.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.nodes.len(), self.triangles.len(), self.boundary_edges.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:?} {:?}", p.x, p.y);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let tag = match e.tag {
                EdgeTag::Dirichlet => "dirichlet",
                EdgeTag::Neumann => "neumann",
                EdgeTag::CrackFace => "crack_face",
            };
            let _ = writeln!(s, "{} {} {}", e.nodes[0], e.nodes[1], tag);
        }
        s
    }

    /// Legacy VTK unstructured grid, optionally with one point-data array.
    pub fn to_vtk(&self, point_data: Option<(&str, &[f64])>) -> String {
        let mut s = String::new();
        s.push_str("# vtk DataFile Version 3.0\ncrack mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
        let _ = writeln!(s, "POINTS {} double", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:?} {:?} 0", p.x, p.y);
        }
        let nt = self.triangles.len();
        let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "CELL_TYPES {nt}");
        for _ in 0..nt {
            s.push_str("5\n");
        }
        if let Some((name, values)) = point_data {
            let _ = writeln!(s, "POINT_DATA {}\nSCALARS {} double 1\nLOOKUP_TABLE default", values.len(), name);
            for v in values {
                let _ = writeln!(s, "{v:?}");
            }
        }
        s
    }
}

fn triangle_min_angle(a: Point2, b: Point2, c: Point2) -> f64 {
    let ang = |p: Point2, q: Point2, r: Point2| {
        let u = q - p;
        let v = r - p;
        u.cross(v).abs().atan2(u.dot(v)).to_degrees()
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
}

/// Points where the crack meets the Dirichlet part of the boundary; the
/// boundary displacement is not transmitted there.
pub fn crack_touches_dirichlet(domain: &DomainSpec, k: &CrackSet) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::new();
    let mut push = |p: Point2| {
        if !out.iter().any(|q| q.dist(p) <= SNAP) {
            out.push(p);
        }
    };
    for p in k.vertices() {
        if domain.on_dirichlet(p, EPS_GEOM) {
            push(p);
        }
    }
    for s in k.segments() {
        for (i, kind) in domain.edge_kinds().iter().enumerate() {
            if *kind == BoundaryKind::Dirichlet {
                if let Some(x) = proper_crossing(&s, &domain.edge(i)) {
                    push(x);
                }
            }
        }
    }
    out
}

/// Centre of a graded rosette: a crack tip, or a key point of the input
/// geometry whose neighbourhood is narrower than the mesh size there.
#[derive(Clone, Copy)]
struct Source {
    p: Point2,
    h: f64,
    /// Number of uniform rings of width `h`.
    uniform: usize,
    /// Angle of the first point of every ring.
    base: f64,
}

struct SizeField {
    sources: Vec<Source>,
    h_max: f64,
    slope: f64,
}

impl SizeField {
    fn new(params: &MeshParams) -> Self {
        Self { sources: Vec::new(), h_max: params.h_max, slope: 1.0 / params.grading - 1.0 }
    }

    fn contribution(&self, s: &Source, x: Point2) -> f64 {
        s.h + (s.p.dist(x) - s.uniform as f64 * s.h).max(0.0) * self.slope
    }

    fn at(&self, x: Point2) -> f64 {
        self.sources.iter().map(|s| self.contribution(s, x)).fold(self.h_max, f64::min)
    }

    /// Ring radii and point counts of a rosette, and the outer radius beyond
    /// which the lattice takes over.
    fn rings(&self, src: &Source) -> (Vec<(f64, usize)>, f64) {
        let h = src.h;
        let mut rings = Vec::new();
        for k in 1..=src.uniform {
            rings.push((k as f64 * h, 6 * k));
        }
        let zone = src.uniform as f64 * h;
        let mut r = zone;
        let mut s = h;
        while s < self.h_max {
            r += s;
            s = (h + (r - zone) * self.slope).min(self.h_max);
            let n = ((2.0 * std::f64::consts::PI * r / s).round() as usize).max(6);
            rings.push((r, n));
        }
        (rings, r)
    }
}

/// Input segment of the planar straight-line graph.
#[derive(Clone, Copy)]
struct PslgEdge {
    a: usize,
    b: usize,
    boundary: Option<usize>,
    crack: bool,
}

struct Builder {
    points: Vec<Point2>,
    edges: Vec<[usize; 2]>,
}

impl Builder {
    fn add_point(&mut self, p: Point2) -> usize {
        self.points.push(p);
        self.points.len() - 1
    }
}

/// Meshes `domain \ k`.
pub fn triangulate(domain: &DomainSpec, k: &CrackSet, params: MeshParams) -> Result<CrackMesh> {
    params.validate()?;
    for p in k.vertices() {
        if !domain.contains(p) {
            return Err(Error::MeshFailure(format!("crack vertex ({}, {}) outside the domain", p.x, p.y)));
        }
    }
    let tips = k.tips(Some(domain));
    let mut size = SizeField::new(&params);

    // ---- key points and atomic PSLG edges ---------------------------------
    let mut keys: Vec<Point2> = Vec::new();
    let key_of = |keys: &mut Vec<Point2>, p: Point2| -> usize {
        if let Some(i) = keys.iter().position(|q| q.dist(p) <= SNAP) {
            i
        } else {
            keys.push(p);
            keys.len() - 1
        }
    };
    for p in domain.vertices() {
        key_of(&mut keys, *p);
    }
    let crack_segs: Vec<Segment> = k.segments().collect();
    for p in k.vertices() {
        key_of(&mut keys, p);
    }
    // crossing points between crack segments and with the boundary
    for (i, s) in crack_segs.iter().enumerate() {
        for t in &crack_segs[i + 1..] {
            if let Some(x) = proper_crossing(s, t) {
                key_of(&mut keys, x);
            }
        }
        for b in domain.boundary_segments() {
            if let Some(x) = proper_crossing(s, &b) {
                key_of(&mut keys, x);
            }
        }
    }

    let split = |seg: &Segment, keys: &[Point2]| -> Vec<usize> {
        let mut on: Vec<(f64, usize)> = keys
            .iter()
            .enumerate()
            .filter(|(_, q)| seg.dist_to_point(**q) <= SNAP)
            .map(|(i, q)| (seg.project(*q), i))
            .collect();
        on.sort_by(|a, b| a.0.total_cmp(&b.0));
        on.dedup_by_key(|x| x.1);
        on.into_iter().map(|x| x.1).collect()
    };

    let mut pslg: BTreeMap<(usize, usize), PslgEdge> = BTreeMap::new();
    for i in 0..domain.vertices().len() {
        let seg = domain.edge(i);
        let ids = split(&seg, &keys);
        for w in ids.windows(2) {
            let key = (w[0].min(w[1]), w[0].max(w[1]));
            pslg.entry(key)
                .or_insert(PslgEdge { a: w[0], b: w[1], boundary: None, crack: false })
                .boundary = Some(i);
        }
    }
    for seg in &crack_segs {
        let ids = split(seg, &keys);
        for w in ids.windows(2) {
            let key = (w[0].min(w[1]), w[0].max(w[1]));
            pslg.entry(key)
                .or_insert(PslgEdge { a: w[0], b: w[1], boundary: None, crack: false })
                .crack = true;
        }
    }

    // ---- size field -------------------------------------------------------
    let tip_key: Vec<usize> = tips
        .iter()
        .map(|t| keys.iter().position(|q| q.dist(t.position) <= SNAP).expect("tip is a key point"))
        .collect();
    for t in &tips {
        size.sources.push(Source {
            p: t.position,
            h: params.h_tip,
            uniform: params.tip_zone.round() as usize,
            base: (-t.tangent).angle(),
        });
    }
    // Local feature size of every key point: distance to the geometry it is
    // not attached to. Only features much narrower than both the mesh size
    // and the point's own edges get a rosette; a uniformly short polygon
    // edge does not.
    let atomic: Vec<(usize, usize)> = pslg.values().map(|e| (e.a, e.b)).collect();
    let mut incident_len = vec![0.0f64; keys.len()];
    for &(a, b) in &atomic {
        let l = keys[a].dist(keys[b]);
        incident_len[a] = incident_len[a].max(l);
        incident_len[b] = incident_len[b].max(l);
    }
    let mut features = Vec::new();
    for (i, &p) in keys.iter().enumerate() {
        let mut d = f64::INFINITY;
        for (j, q) in keys.iter().enumerate() {
            if j != i && incident_len[j] == 0.0 {
                d = d.min(p.dist(*q));
            }
        }
        for &(a, b) in &atomic {
            if a != i && b != i {
                d = d.min(Segment::new(keys[a], keys[b]).dist_to_point(p));
            }
        }
        if d <= EPS_GEOM {
            return Err(Error::MeshFailure(format!(
                "geometry features closer than {EPS_GEOM} near ({}, {})",
                p.x, p.y
            )));
        }
        if let Some(ti) = tip_key.iter().position(|&k| k == i) {
            if d < 1.5 * params.h_tip {
                size.sources[ti].h = 0.5 * d;
            }
        } else if d < 0.5 * size.at(p).min(if incident_len[i] > 0.0 { incident_len[i] } else { f64::INFINITY }) {
            features.push(Source { p, h: 0.75 * d, uniform: 2, base: 0.0 });
        }
    }
    size.sources.extend(features);

    // ---- subdivision ------------------------------------------------------
    let mut bld = Builder { points: keys.clone(), edges: Vec::new() };
    // for every vertex sequence: (constraint edges, is_crack, boundary idx)
    let mut crack_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut boundary_of_edge: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut crack_on_boundary: BTreeSet<(usize, usize)> = BTreeSet::new();
    for e in pslg.values() {
        let pa = keys[e.a];
        let pb = keys[e.b];
        let a_tip = tip_key.contains(&e.a);
        let b_tip = tip_key.contains(&e.b);
        let inner = subdivide(pa, pb, a_tip, b_tip, &size);
        let mut chain = vec![e.a];
        for p in inner {
            chain.push(bld.add_point(p));
        }
        chain.push(e.b);
        for w in chain.windows(2) {
            bld.edges.push([w[0], w[1]]);
            let key = (w[0].min(w[1]), w[0].max(w[1]));
            if let Some(bi) = e.boundary {
                boundary_of_edge.insert(key, bi);
                if e.crack {
                    crack_on_boundary.insert(key);
                }
            } else if e.crack {
                crack_edges.insert(key);
            }
        }
    }
    let n_constrained = bld.points.len();

    // ---- interior points --------------------------------------------------
    let pslg_segs: Vec<Segment> = bld
        .edges
        .iter()
        .map(|e| Segment::new(bld.points[e[0]], bld.points[e[1]]))
        .collect();
    let clearance_ok = |p: Point2, s: f64| -> bool {
        const ALPHA: f64 = 0.5;
        domain.contains_strict(p)
            && pslg_segs.iter().all(|seg| seg.dist_to_point(p) >= ALPHA * s)
            && bld.points[..n_constrained].iter().all(|q| q.dist(p) >= ALPHA * s)
    };
    let mut interior: Vec<Point2> = Vec::new();
    let mut reach = Vec::with_capacity(size.sources.len());
    for (si, src) in size.sources.iter().enumerate() {
        let (rings, r_out) = size.rings(src);
        reach.push(r_out);
        for &(r, n) in &rings {
            for j in 0..n {
                let phi = src.base + 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                let p = src.p + Point2::new(phi.cos(), phi.sin()) * r;
                // each point belongs to the rosette that asks for the finest size
                let own = size.contribution(src, p);
                let dominated = size.sources.iter().enumerate().any(|(sj, o)| {
                    let c = size.contribution(o, p);
                    sj != si && (c < own || (c == own && sj < si))
                });
                if !dominated && clearance_ok(p, size.at(p)) {
                    interior.push(p);
                }
            }
        }
    }
    let (lo, hi) = domain.bounding_box();
    let h = params.h_max;
    let dy = h * 3f64.sqrt() / 2.0;
    let ny = ((hi.y - lo.y) / dy).ceil() as usize + 1;
    let nx = ((hi.x - lo.x) / h).ceil() as usize + 2;
    for j in 0..ny {
        let y = lo.y + j as f64 * dy;
        let shift = if j % 2 == 1 { 0.5 * h } else { 0.0 };
        for i in 0..nx {
            let p = Point2::new(lo.x + shift + i as f64 * h, y);
            if size.sources.iter().zip(&reach).any(|(src, r)| src.p.dist(p) < r + 0.5 * h) {
                continue;
            }
            if clearance_ok(p, h) {
                interior.push(p);
            }
        }
    }
    // Overlapping rosettes can put points almost on top of each other; keep
    // the first of any pair closer than a fraction of the local size.
    let mut grid: BTreeMap<(i64, i64), Vec<Point2>> = BTreeMap::new();
    let cell = params.h_max;
    let cell_of = |p: Point2| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    for p in interior {
        let r = 0.6 * size.at(p);
        let (cx, cy) = cell_of(p);
        let crowded = (cx - 1..=cx + 1).any(|i| {
            (cy - 1..=cy + 1).any(|j| grid.get(&(i, j)).is_some_and(|v| v.iter().any(|q| q.dist(p) < r)))
        });
        if !crowded {
            grid.entry((cx, cy)).or_default().push(p);
            bld.points.push(p);
        }
    }

    // ---- constrained Delaunay triangulation --------------------------------
    let verts: Vec<spade::Point2<f64>> = bld.points.iter().map(|p| spade::Point2::new(p.x, p.y)).collect();
    let nverts = verts.len();
    let mut conflicts = 0usize;
    let cdt = ConstrainedDelaunayTriangulation::<spade::Point2<f64>>::try_bulk_load_cdt(
        verts,
        bld.edges.clone(),
        |_| conflicts += 1,
    )
    .map_err(|e| Error::MeshFailure(format!("triangulation failed: {e:?}")))?;
    if conflicts > 0 {
        return Err(Error::MeshFailure(format!("{conflicts} intersecting constraint edges")));
    }
    if cdt.num_vertices() != nverts {
        return Err(Error::MeshFailure("coincident mesh points".into()));
    }
    let all: Vec<[usize; 3]> = cdt
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            [v[0].fix().index(), v[1].fix().index(), v[2].fix().index()]
        })
        .collect();
    // Flood fill from the convex hull across edges that are not on the
    // domain boundary; what it reaches lies outside the domain. Testing
    // centroids instead misclassifies slivers between the hull and boundary
    // points that sit a rounding error inside it.
    let mut faces_of: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (fi, t) in all.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            faces_of.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    let mut outside = vec![false; all.len()];
    let mut stack: Vec<usize> = faces_of
        .iter()
        .filter(|(e, f)| f.len() == 1 && !boundary_of_edge.contains_key(e))
        .map(|(_, f)| f[0])
        .collect();
    while let Some(fi) = stack.pop() {
        if outside[fi] {
            continue;
        }
        outside[fi] = true;
        let t = all[fi];
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = (a.min(b), a.max(b));
            if boundary_of_edge.contains_key(&e) {
                continue;
            }
            stack.extend(faces_of[&e].iter().copied().filter(|&g| !outside[g]));
        }
    }
    let mut triangles: Vec<[usize; 3]> =
        all.iter().zip(&outside).filter(|(_, o)| !**o).map(|(t, _)| *t).collect();
    // deterministic order independent of spade's internal face numbering
    for t in &mut triangles {
        let m = (0..3).min_by_key(|&i| t[i]).unwrap();
        t.rotate_left(m);
    }
    triangles.sort_unstable();
    let mut nodes = bld.points;
    for t in &triangles {
        let area = 0.5 * (nodes[t[1]] - nodes[t[0]]).cross(nodes[t[2]] - nodes[t[0]]);
        if !(area > 0.0) {
            return Err(Error::MeshFailure("degenerate or inverted triangle".into()));
        }
    }
    let mut covered = vec![false; nodes.len()];
    for t in &triangles {
        for &v in t {
            covered[v] = true;
        }
    }
    if let Some(i) = (0..nodes.len()).find(|&i| !covered[i]) {
        return Err(Error::MeshFailure(format!(
            "mesh point ({}, {}) not attached to any triangle",
            nodes[i].x, nodes[i].y
        )));
    }

    // ---- split crack vertices into sectors --------------------------------
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (ti, t) in triangles.iter().enumerate() {
        for &v in t {
            incident[v].push(ti);
        }
    }
    let mut crack_vertices: BTreeSet<usize> = BTreeSet::new();
    for &(a, b) in &crack_edges {
        crack_vertices.insert(a);
        crack_vertices.insert(b);
    }
    let mut orig_of: Vec<usize> = (0..nodes.len()).collect();
    let mut side_hints: Vec<Option<Point2>> = vec![None; nodes.len()];
    let mut pairs = Vec::new();
    for &v in &crack_vertices {
        let tris = &incident[v];
        let mut uf = UnionFind::new(tris.len());
        for i in 0..tris.len() {
            for j in i + 1..tris.len() {
                if let Some(w) = shared_other_vertex(&triangles[tris[i]], &triangles[tris[j]], v) {
                    if !crack_edges.contains(&(v.min(w), v.max(w))) {
                        uf.union(i, j);
                    }
                }
            }
        }
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..tris.len() {
            let r = uf.find(i);
            classes.entry(r).or_default().push(tris[i]);
        }
        let p = nodes[v];
        let mut first = None;
        for (ci, members) in classes.values().enumerate() {
            let centroid = members
                .iter()
                .map(|&t| {
                    let [a, b, c] = triangles[t];
                    (nodes[a] + nodes[b] + nodes[c]) * (1.0 / 3.0)
                })
                .fold(Point2::default(), |acc, x| acc + x)
                * (1.0 / members.len() as f64);
            let id = if ci == 0 {
                v
            } else {
                nodes.push(p);
                orig_of.push(v);
                side_hints.push(None);
                let id = nodes.len() - 1;
                for &t in members {
                    for x in triangles[t].iter_mut() {
                        if *x == v {
                            *x = id;
                        }
                    }
                }
                id
            };
            side_hints[id] = Some(centroid);
            match first {
                None => first = Some(id),
                Some(f) => pairs.push(CrackFacePair { location: p, plus: f, minus: id }),
            }
        }
    }

    // ---- boundary edges and tags -----------------------------------------
    let mut edge_count: BTreeMap<(usize, usize), (usize, [usize; 2])> = BTreeMap::new();
    for t in &triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = edge_count.entry((a.min(b), a.max(b))).or_insert((0, [a, b]));
            e.0 += 1;
        }
    }
    let mut boundary_edges = Vec::new();
    for ((a, b), (count, dir)) in &edge_count {
        if *count != 1 {
            continue;
        }
        let (oa, ob) = (orig_of[*a], orig_of[*b]);
        let okey = (oa.min(ob), oa.max(ob));
        let tag = if crack_edges.contains(&okey) || crack_on_boundary.contains(&okey) {
            EdgeTag::CrackFace
        } else if let Some(&bi) = boundary_of_edge.get(&okey) {
            match domain.edge_kinds()[bi] {
                BoundaryKind::Dirichlet => EdgeTag::Dirichlet,
                BoundaryKind::Neumann => EdgeTag::Neumann,
            }
        } else {
            return Err(Error::MeshFailure(format!(
                "unexpected free edge from ({}, {}) to ({}, {})",
                nodes[*a].x, nodes[*a].y, nodes[*b].x, nodes[*b].y
            )));
        };
        boundary_edges.push(BoundaryEdge { nodes: *dir, tag });
    }

    let touches = crack_touches_dirichlet(domain, k);
    let released: Vec<usize> = (0..nodes.len())
        .filter(|&i| side_hints[i].is_some() || crack_on_boundary.iter().any(|e| e.0 == orig_of[i] || e.1 == orig_of[i]))
        .filter(|&i| touches.iter().any(|q| q.dist(nodes[i]) <= SNAP))
        .collect();
    let tip_nodes: Vec<usize> = tip_key.clone();

    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    for p in &nodes {
        p.x.to_bits().hash(&mut hasher);
        p.y.to_bits().hash(&mut hasher);
    }
    triangles.hash(&mut hasher);
    let fingerprint = hasher.finish();

    let mesh = CrackMesh {
        nodes,
        triangles,
        crack_face_pairs: pairs,
        boundary_edges,
        tip_nodes,
        tips,
        released,
        h_max: params.h_max,
        h_tip: params.h_tip,
        side_hints,
        fingerprint,
    };
    let min_angle = mesh.min_angle_deg();
    if min_angle < params.min_angle_deg {
        return Err(Error::MeshFailure(format!(
            "minimum angle {min_angle:.2} deg below bound {}",
            params.min_angle_deg
        )));
    }
    Ok(mesh)
}

fn shared_other_vertex(t1: &[usize; 3], t2: &[usize; 3], v: usize) -> Option<usize> {
    t1.iter().copied().find(|&w| w != v && t2.contains(&w))
}

/// Interior subdivision points of the edge `a -> b`.
fn subdivide(a: Point2, b: Point2, a_tip: bool, b_tip: bool, size: &SizeField) -> Vec<Point2> {
    let len = a.dist(b);
    let dir = (b - a) * (1.0 / len);
    if a_tip || b_tip {
        // march from the tip end(s); with two tips each side covers half
        let march = |from: Point2, d: Point2, limit: f64| -> Vec<f64> {
            let mut out = Vec::new();
            let mut s = 0.0;
            loop {
                let step = size.at(from + d * s);
                s += step;
                if s >= limit {
                    break;
                }
                out.push(s);
            }
            out
        };
        let mut params: Vec<f64> = Vec::new();
        if a_tip && b_tip {
            let fa = march(a, dir, 0.5 * len);
            let fb = march(b, -dir, 0.5 * len);
            params.extend(fa.iter().copied());
            params.extend(fb.iter().rev().map(|s| len - s));
            // drop points crowding the junction
            let mid = 0.5 * len;
            let s_mid = size.at(a + dir * mid);
            let fa_last = fa.last().copied().unwrap_or(0.0);
            let fb_last = fb.last().map(|s| len - s).unwrap_or(len);
            if fb_last - fa_last < 0.5 * s_mid && !fa.is_empty() {
                params.retain(|&s| s != fa_last);
            }
        } else {
            let (from, d) = if a_tip { (a, dir) } else { (b, -dir) };
            let mut f = march(from, d, len);
            if let Some(&last) = f.last() {
                let rest = len - last;
                if rest < 0.5 * size.at(from + d * last) {
                    f.pop();
                }
            }
            if a_tip {
                params = f;
            } else {
                params = f.into_iter().rev().map(|s| len - s).collect();
            }
        }
        return params.into_iter().map(|s| a + dir * s).collect();
    }
    // equal increments of the size-normalised arclength
    const SAMPLES: usize = 64;
    let mut xi = vec![0.0; SAMPLES + 1];
    for i in 0..SAMPLES {
        let t0 = i as f64 / SAMPLES as f64;
        let t1 = (i + 1) as f64 / SAMPLES as f64;
        let f0 = 1.0 / size.at(a + dir * (t0 * len));
        let f1 = 1.0 / size.at(a + dir * (t1 * len));
        xi[i + 1] = xi[i] + 0.5 * (f0 + f1) * (t1 - t0) * len;
    }
    let total = xi[SAMPLES];
    let n = (total.round() as usize).max(1);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    let mut seg = 0;
    for k in 1..n {
        let target = total * k as f64 / n as f64;
        while xi[seg + 1] < target {
            seg += 1;
        }
        let w = (target - xi[seg]) / (xi[seg + 1] - xi[seg]);
        let t = (seg as f64 + w) / SAMPLES as f64;
        out.push(a + dir * (t * len));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;

    fn slit_disk() -> (DomainSpec, CrackSet) {
        let d = DomainSpec::unit_disk();
        let k = CrackSet::tight(vec![Polyline::segment(Point2::new(-1.0, 0.0), Point2::new(0.0, 0.0)).unwrap()]);
        (d, k)
    }

    #[test]
    fn unit_square_without_crack() {
        let m = triangulate(&DomainSpec::unit_square(), &CrackSet::empty(), MeshParams::uniform(0.5)).unwrap();
        assert!(m.crack_face_pairs.is_empty());
        assert!(m.tip_nodes.is_empty());
        assert!(m.boundary_edges.iter().all(|e| e.tag == EdgeTag::Dirichlet));
        let perimeter: f64 = m
            .boundary_edges
            .iter()
            .map(|e| m.nodes[e.nodes[0]].dist(m.nodes[e.nodes[1]]))
            .sum();
        assert!((perimeter - 4.0).abs() < 1e-12);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slit_disk_topology() {
        let (d, k) = slit_disk();
        let m = triangulate(&d, &k, MeshParams::new(0.1, 1.0 / 64.0)).unwrap();
        assert_eq!(m.tip_nodes.len(), 1);
        assert_eq!(m.nodes[m.tip_nodes[0]], Point2::new(0.0, 0.0));
        // every slit node other than the tip appears twice
        let on_slit: Vec<usize> = (0..m.num_nodes())
            .filter(|&i| m.nodes[i].y == 0.0 && m.nodes[i].x < 0.0)
            .collect();
        assert!(!on_slit.is_empty());
        for &i in &on_slit {
            let twins = on_slit.iter().filter(|&&j| m.nodes[j] == m.nodes[i]).count();
            assert_eq!(twins, 2, "node at {:?}", m.nodes[i]);
        }
        assert_eq!(m.crack_face_pairs.len() * 2, on_slit.len());
        // the mouth of the slit lies on the Dirichlet boundary and is released
        assert_eq!(m.released.len(), 2);
        assert!((m.total_area() - d.area()).abs() < 1e-10 * d.area());
    }

    #[test]
    fn face_pairs_share_no_triangle() {
        let (d, k) = slit_disk();
        let m = triangulate(&d, &k, MeshParams::new(0.1, 1.0 / 64.0)).unwrap();
        for p in &m.crack_face_pairs {
            assert!(m.nodes[p.plus].dist(m.nodes[p.minus]) <= EPS_GEOM);
            assert!(!m.triangles.iter().any(|t| t.contains(&p.plus) && t.contains(&p.minus)));
        }
    }

    #[test]
    fn euler_characteristic_interior_slit() {
        let d = DomainSpec::unit_disk();
        let k = CrackSet::tight(vec![Polyline::segment(Point2::new(-0.3, 0.1), Point2::new(0.3, -0.1)).unwrap()]);
        let m = triangulate(&d, &k, MeshParams::new(0.1, 1.0 / 64.0)).unwrap();
        assert_eq!(m.tip_nodes.len(), 2);
        let v = m.num_nodes() as i64;
        let e = m.num_edges() as i64;
        let f = m.triangles.len() as i64;
        // cutting the slit open leaves an annulus
        assert_eq!(v - e + f, 0);
    }

    #[test]
    fn deterministic() {
        let (d, k) = slit_disk();
        let p = MeshParams::new(0.1, 1.0 / 64.0);
        let a = triangulate(&d, &k, p).unwrap();
        let b = triangulate(&d, &k, p).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn touches_dirichlet() {
        let d = DomainSpec::unit_square();
        let inner = CrackSet::tight(vec![Polyline::segment(Point2::new(0.2, 0.5), Point2::new(0.6, 0.5)).unwrap()]);
        assert!(crack_touches_dirichlet(&d, &inner).is_empty());
        let edge = CrackSet::tight(vec![Polyline::segment(Point2::new(0.0, 0.5), Point2::new(0.6, 0.5)).unwrap()]);
        assert_eq!(crack_touches_dirichlet(&d, &edge), vec![Point2::new(0.0, 0.5)]);
        let neumann_left = DomainSpec::unit_square().label_edges(BoundaryKind::Neumann, |m| m.x == 0.0);
        assert!(crack_touches_dirichlet(&neumann_left, &edge).is_empty());
    }

    #[test]
    fn tip_zone_is_resolved() {
        let (d, k) = slit_disk();
        let h = 1.0 / 64.0;
        let m = triangulate(&d, &k, MeshParams::new(0.1, h)).unwrap();
        for t in &m.triangles {
            let c = (m.nodes[t[0]] + m.nodes[t[1]] + m.nodes[t[2]]) * (1.0 / 3.0);
            if c.norm() < 8.0 * h {
                for i in 0..3 {
                    let e = m.nodes[t[i]].dist(m.nodes[t[(i + 1) % 3]]);
                    assert!(e <= 1.5 * h, "edge {e} near the tip");
                }
            }
        }
    }
}
