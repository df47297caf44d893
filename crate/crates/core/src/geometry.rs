//! Crack sets as finite unions of polylines.
//!
//! A [`CrackSet`] is the computable stand-in for a compact set with at most
//! `m` connected components and finite length. Everything here is a pure
//! function of immutable values.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};

/// Absolute tolerance for geometric predicates on unit-scaled coordinates.
pub const EPS_GEOM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Point2 {
        let n = self.norm();
        Point2::new(self.x / n, self.y / n)
    }

    /// Counterclockwise rotation by `angle` radians.
    pub fn rotated(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Rotation by +90°, `(y1, y2) -> (-y2, y1)`.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Closed straight segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn at(&self, t: f64) -> Point2 {
        self.a + (self.b - self.a) * t
    }

    /// Parameter of the orthogonal projection of `p`, clamped to `[0, 1]`.
    pub fn project(&self, p: Point2) -> f64 {
        let d = self.b - self.a;
        let l2 = d.norm_sq();
        if l2 == 0.0 {
            return 0.0;
        }
        ((p - self.a).dot(d) / l2).clamp(0.0, 1.0)
    }

    pub fn dist_to_point(&self, p: Point2) -> f64 {
        self.at(self.project(p)).dist(p)
    }
}

/// Distance between two closed segments.
pub fn segment_distance(s: &Segment, t: &Segment) -> f64 {
    if segments_intersect(s, t, 0.0) {
        return 0.0;
    }
    s.dist_to_point(t.a)
        .min(s.dist_to_point(t.b))
        .min(t.dist_to_point(s.a))
        .min(t.dist_to_point(s.b))
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

/// True if the closed segments come within `tol` of each other.
pub fn segments_intersect(s: &Segment, t: &Segment, tol: f64) -> bool {
    let d1 = orient(t.a, t.b, s.a);
    let d2 = orient(t.a, t.b, s.b);
    let d3 = orient(s.a, s.b, t.a);
    let d4 = orient(s.a, s.b, t.b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    s.dist_to_point(t.a) <= tol
        || s.dist_to_point(t.b) <= tol
        || t.dist_to_point(s.a) <= tol
        || t.dist_to_point(s.b) <= tol
}

/// Intersection point of two segments that cross at a single interior point.
pub fn proper_crossing(s: &Segment, t: &Segment) -> Option<Point2> {
    let r = s.b - s.a;
    let q = t.b - t.a;
    let den = r.cross(q);
    if den.abs() <= EPS_GEOM * r.norm() * q.norm() {
        return None;
    }
    let u = (t.a - s.a).cross(q) / den;
    let v = (t.a - s.a).cross(r) / den;
    let eu = EPS_GEOM / r.norm();
    let ev = EPS_GEOM / q.norm();
    if u > eu && u < 1.0 - eu && v > ev && v < 1.0 - ev {
        Some(s.at(u))
    } else {
        None
    }
}

/// A simple polyline; a single vertex is a degenerate component of length 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline {
    vertices: Vec<Point2>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::GeometryViolation("polyline without vertices".into()));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::GeometryViolation("non-finite vertex".into()));
        }
        for w in vertices.windows(2) {
            if w[0].dist(w[1]) <= EPS_GEOM {
                return Err(Error::GeometryViolation(format!(
                    "repeated consecutive vertex at ({}, {})",
                    w[0].x, w[0].y
                )));
            }
        }
        let pl = Self { vertices };
        if !pl.is_simple() {
            return Err(Error::GeometryViolation("polyline self-intersects".into()));
        }
        Ok(pl)
    }

    pub fn point(p: Point2) -> Self {
        Self { vertices: vec![p] }
    }

    pub fn segment(a: Point2, b: Point2) -> Result<Self> {
        Self::new(vec![a, b])
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.vertices.windows(2).map(|w| Segment::new(w[0], w[1]))
    }

    pub fn is_point(&self) -> bool {
        self.vertices.len() == 1
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|s| s.length()).sum()
    }

    pub fn start(&self) -> Point2 {
        self.vertices[0]
    }

    pub fn finish(&self) -> Point2 {
        *self.vertices.last().unwrap()
    }

    pub fn is_simple(&self) -> bool {
        let segs: Vec<Segment> = self.segments().collect();
        for i in 0..segs.len() {
            for j in i + 1..segs.len() {
                if j == i + 1 {
                    // adjacent segments share one vertex; reject fold-backs
                    let u = segs[i].a - segs[i].b;
                    let v = segs[j].b - segs[j].a;
                    if u.cross(v).abs() <= EPS_GEOM * u.norm() * v.norm() && u.dot(v) > 0.0 {
                        return false;
                    }
                    if segs[i].dist_to_point(segs[j].b) <= EPS_GEOM
                        || segs[j].dist_to_point(segs[i].a) <= EPS_GEOM
                    {
                        return false;
                    }
                } else if segments_intersect(&segs[i], &segs[j], EPS_GEOM) {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TipEnd {
    Start,
    Finish,
}

/// A free end of a crack component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tip {
    pub component_id: usize,
    pub end: TipEnd,
    pub position: Point2,
    /// Unit vector along the last segment, pointing out of the crack.
    pub tangent: Point2,
    /// Arc length from the opposite end of the component.
    pub arclength: f64,
}

impl Tip {
    /// Polar coordinates `(rho, theta)` of `p` about the tip, `theta` measured
    /// from the tangent in `(-pi, pi]`.
    pub fn polar(&self, p: Point2) -> (f64, f64) {
        let d = p - self.position;
        let x = d.dot(self.tangent);
        let y = self.tangent.cross(d);
        (d.norm(), y.atan2(x))
    }
}

/// Finite union of at most `m` connected polyline components. Equality and
/// serialization see the components only.
#[derive(Debug, Clone)]
pub struct CrackSet {
    components: Vec<Polyline>,
    budget: usize,
}

impl PartialEq for CrackSet {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
    }
}

impl Serialize for CrackSet {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        self.components.serialize(ser)
    }
}

impl CrackSet {
    pub fn new(components: Vec<Polyline>, budget: usize) -> Result<Self> {
        let k = Self { components, budget };
        let n = k.component_count();
        if n > budget {
            return Err(Error::GeometryViolation(format!(
                "{n} connected components exceed the budget m = {budget}"
            )));
        }
        Ok(k)
    }

    /// Budget equal to the current number of connected components.
    pub fn tight(components: Vec<Polyline>) -> Self {
        let mut k = Self { components, budget: 0 };
        k.budget = k.component_count();
        k
    }

    pub fn empty() -> Self {
        Self { components: Vec::new(), budget: 0 }
    }

    pub fn components(&self) -> &[Polyline] {
        &self.components
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn with_budget(mut self, budget: usize) -> Result<Self> {
        self.budget = budget;
        Self::new(self.components, budget)
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.components.iter().flat_map(|c| c.segments())
    }

    /// Isolated single-vertex components.
    pub fn isolated_points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.components.iter().filter(|c| c.is_point()).map(|c| c.start())
    }

    pub fn vertices(&self) -> impl Iterator<Item = Point2> + '_ {
        self.components.iter().flat_map(|c| c.vertices().iter().copied())
    }

    /// One-dimensional measure of the union. Exactly collinear overlapping
    /// pieces are counted once.
    pub fn length(&self) -> f64 {
        let segs: Vec<Segment> = self.segments().collect();
        let mut total = 0.0;
        for (i, s) in segs.iter().enumerate() {
            let len = s.length();
            let dir = (s.b - s.a) * (1.0 / len);
            let mut covered: Vec<(f64, f64)> = Vec::new();
            for t in &segs[..i] {
                let ta = (t.a - s.a).cross(dir);
                let tb = (t.b - s.a).cross(dir);
                if ta.abs() > EPS_GEOM || tb.abs() > EPS_GEOM {
                    continue;
                }
                let pa = (t.a - s.a).dot(dir);
                let pb = (t.b - s.a).dot(dir);
                let lo = pa.min(pb).max(0.0);
                let hi = pa.max(pb).min(len);
                if hi > lo {
                    covered.push((lo, hi));
                }
            }
            total += len - union_length(&mut covered);
        }
        total
    }

    /// Number of connected components of the union.
    pub fn component_count(&self) -> usize {
        let n = self.components.len();
        let mut uf = UnionFind::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if polylines_touch(&self.components[i], &self.components[j]) {
                    uf.union(i, j);
                }
            }
        }
        uf.count()
    }

    /// Free ends: polyline ends that neither lie on the domain boundary nor
    /// touch another component. Isolated points have no tangent and no tips.
    pub fn tips(&self, domain: Option<&DomainSpec>) -> Vec<Tip> {
        let mut tips = Vec::new();
        for (ci, c) in self.components.iter().enumerate() {
            if c.is_point() {
                continue;
            }
            let v = c.vertices();
            let len = c.length();
            for end in [TipEnd::Start, TipEnd::Finish] {
                let (p, q) = match end {
                    TipEnd::Start => (v[0], v[1]),
                    TipEnd::Finish => (v[v.len() - 1], v[v.len() - 2]),
                };
                if domain.is_some_and(|d| d.boundary_distance(p) <= EPS_GEOM) {
                    continue;
                }
                let touches = self.components.iter().enumerate().any(|(cj, other)| {
                    cj != ci && other_touches_point(other, p)
                });
                if touches {
                    continue;
                }
                tips.push(Tip {
                    component_id: ci,
                    end,
                    position: p,
                    tangent: (p - q).normalized(),
                    arclength: len,
                });
            }
        }
        tips
    }

    pub fn find_tip(&self, domain: Option<&DomainSpec>, component_id: usize, end: TipEnd) -> Option<Tip> {
        self.tips(domain)
            .into_iter()
            .find(|t| t.component_id == component_id && t.end == end)
    }

    /// Distance from `p` to the set; `None` for the empty set.
    pub fn distance_to_point(&self, p: Point2) -> Option<f64> {
        let mut best: Option<f64> = None;
        for c in &self.components {
            let d = if c.is_point() {
                c.start().dist(p)
            } else {
                c.segments().map(|s| s.dist_to_point(p)).fold(f64::INFINITY, f64::min)
            };
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
        best
    }

    /// Extends the named tip by one straight segment of length `step`, turned
    /// by `angle` from the tip tangent. An angle of exactly zero moves the
    /// endpoint instead of adding a collinear vertex. The previous set is
    /// always contained in the result.
    pub fn extend_tip(&self, domain: Option<&DomainSpec>, tip: &Tip, angle: f64, step: f64) -> Result<CrackSet> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::GeometryViolation(format!("non-positive extension {step}")));
        }
        if !angle.is_finite() || angle.abs() >= PI {
            return Err(Error::GeometryViolation(format!("kink angle {angle} out of range")));
        }
        let comp = self
            .components
            .get(tip.component_id)
            .ok_or_else(|| Error::GeometryViolation("unknown component".into()))?;
        if comp.is_point() {
            return Err(Error::GeometryViolation("isolated points have no tip".into()));
        }
        let dir = tip.tangent.rotated(angle);
        let new_end = tip.position + dir * step;
        let new_seg = Segment::new(tip.position, new_end);

        if let Some(d) = domain {
            if !d.contains(new_end) {
                return Err(Error::GeometryViolation("extension leaves the domain".into()));
            }
            if d.boundary_segments().any(|b| proper_crossing(&b, &new_seg).is_some()) {
                return Err(Error::GeometryViolation("extension crosses the boundary".into()));
            }
        }
        // The new segment may only meet the existing crack at its origin, or
        // end on another component.
        for (ci, c) in self.components.iter().enumerate() {
            if c.is_point() {
                if c.start().dist(tip.position) > EPS_GEOM && new_seg.dist_to_point(c.start()) <= EPS_GEOM {
                    if c.start().dist(new_end) > EPS_GEOM {
                        return Err(Error::GeometryViolation("extension passes through a point".into()));
                    }
                }
                continue;
            }
            let segs: Vec<Segment> = c.segments().collect();
            let nseg = segs.len();
            for (si, s) in segs.iter().enumerate() {
                let adjacent = ci == tip.component_id
                    && match tip.end {
                        TipEnd::Finish => si + 1 == nseg,
                        TipEnd::Start => si == 0,
                    };
                if adjacent {
                    let back = -tip.tangent;
                    if back.cross(dir).abs() <= 1e-9 && back.dot(dir) > 0.0 {
                        return Err(Error::GeometryViolation("extension folds back".into()));
                    }
                    continue;
                }
                if proper_crossing(s, &new_seg).is_some() {
                    return Err(Error::GeometryViolation("extension crosses the crack".into()));
                }
                // touching: allowed only at the far end of the new segment
                let touch_origin = s.dist_to_point(tip.position) <= EPS_GEOM;
                if touch_origin && ci == tip.component_id {
                    continue;
                }
                if segments_intersect(s, &new_seg, EPS_GEOM) {
                    let at_end = s.dist_to_point(new_end) <= EPS_GEOM;
                    let interior_touch = new_seg.dist_to_point(s.a) <= EPS_GEOM && s.a.dist(new_end) > EPS_GEOM
                        || new_seg.dist_to_point(s.b) <= EPS_GEOM && s.b.dist(new_end) > EPS_GEOM;
                    if !at_end || interior_touch {
                        return Err(Error::GeometryViolation("extension overlaps the crack".into()));
                    }
                }
            }
        }

        let mut verts = comp.vertices().to_vec();
        match tip.end {
            TipEnd::Finish => {
                if angle == 0.0 {
                    *verts.last_mut().unwrap() = new_end;
                } else {
                    verts.push(new_end);
                }
            }
            TipEnd::Start => {
                if angle == 0.0 {
                    verts[0] = new_end;
                } else {
                    verts.insert(0, new_end);
                }
            }
        }
        let mut components = self.components.clone();
        components[tip.component_id] = Polyline::new(verts)?;
        CrackSet::new(components, self.budget)
    }

    /// Union with another set; the budget becomes the sum of both budgets.
    pub fn union(&self, other: &CrackSet) -> CrackSet {
        let mut components = self.components.clone();
        components.extend(other.components.iter().cloned());
        CrackSet { components, budget: self.budget + other.budget }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.components).expect("points serialize")
    }

    /// Parses the `[[[x, y], ...], ...]` component list; the budget is the
    /// resulting component count.
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: Vec<Vec<Point2>> = serde_json::from_str(s)?;
        let comps = raw.into_iter().map(Polyline::new).collect::<Result<Vec<_>>>()?;
        Ok(Self::tight(comps))
    }
}

impl<'de> Deserialize<'de> for CrackSet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<Vec<Point2>> = Vec::deserialize(de)?;
        let comps = raw
            .into_iter()
            .map(Polyline::new)
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        Ok(Self::tight(comps))
    }
}

fn other_touches_point(c: &Polyline, p: Point2) -> bool {
    if c.is_point() {
        c.start().dist(p) <= EPS_GEOM
    } else {
        c.segments().any(|s| s.dist_to_point(p) <= EPS_GEOM)
    }
}

fn polylines_touch(a: &Polyline, b: &Polyline) -> bool {
    match (a.is_point(), b.is_point()) {
        (true, true) => a.start().dist(b.start()) <= EPS_GEOM,
        (true, false) => other_touches_point(b, a.start()),
        (false, true) => other_touches_point(a, b.start()),
        (false, false) => a
            .segments()
            .any(|s| b.segments().any(|t| segments_intersect(&s, &t, EPS_GEOM))),
    }
}

fn union_length(iv: &mut [(f64, f64)]) -> f64 {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for &(lo, hi) in iv.iter() {
        match cur {
            Some((clo, chi)) if lo <= chi => cur = Some((clo, chi.max(hi))),
            Some((clo, chi)) => {
                total += chi - clo;
                cur = Some((lo, hi));
            }
            None => cur = Some((lo, hi)),
        }
    }
    if let Some((clo, chi)) = cur {
        total += chi - clo;
    }
    total
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Links the larger root under the smaller so roots are minimal members.
    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    pub(crate) fn count(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}

// ---------------------------------------------------------------------------
// Hausdorff metric
// ---------------------------------------------------------------------------

/// Nearest-feature description of the target set used by the exact
/// directed-distance search: its vertices and the supporting lines of its
/// segments.
struct Features {
    points: Vec<Point2>,
    segments: Vec<Segment>,
}

impl Features {
    fn of(k: &CrackSet) -> Self {
        let mut points: Vec<Point2> = k.vertices().collect();
        points.dedup();
        Self { points, segments: k.segments().collect() }
    }

    fn distance(&self, p: Point2) -> f64 {
        let dp = self.points.iter().map(|q| q.dist(p)).fold(f64::INFINITY, f64::min);
        self.segments.iter().map(|s| s.dist_to_point(p)).fold(dp, f64::min)
    }
}

/// Parameters `t` along `seg` where the distances to two features of the
/// target coincide. The lower envelope of the (convex) feature distances can
/// only peak at such points or at the segment ends.
fn bisector_params(seg: &Segment, f: &Features, out: &mut Vec<f64>) {
    let a0 = seg.a;
    let d = seg.b - seg.a;
    // lines as (origin, unit normal)
    let lines: Vec<(Point2, Point2)> = f
        .segments
        .iter()
        .map(|s| (s.a, (s.b - s.a).perp().normalized()))
        .collect();
    let mut push = |t: f64| {
        if t.is_finite() && t > 0.0 && t < 1.0 {
            out.push(t);
        }
    };
    // point-point: linear
    for (i, p) in f.points.iter().enumerate() {
        for q in &f.points[i + 1..] {
            let w = *q - *p;
            let den = 2.0 * d.dot(w);
            if den != 0.0 {
                push((q.norm_sq() - p.norm_sq() - 2.0 * a0.dot(w)) / den);
            }
        }
    }
    // point-line: quadratic |a0 + t d - p|^2 = ((a0 + t d - l0).n)^2
    for p in &f.points {
        for (l0, n) in &lines {
            let e = a0 - *p;
            let g = (a0 - *l0).dot(*n);
            let dn = d.dot(*n);
            let qa = d.norm_sq() - dn * dn;
            let qb = 2.0 * (e.dot(d) - g * dn);
            let qc = e.norm_sq() - g * g;
            for t in solve_quadratic(qa, qb, qc) {
                push(t);
            }
        }
    }
    // line-line: (a - l1).n1 = +-(a - l2).n2
    for (i, (l1, n1)) in lines.iter().enumerate() {
        for (l2, n2) in &lines[i + 1..] {
            let c1 = (a0 - *l1).dot(*n1);
            let c2 = (a0 - *l2).dot(*n2);
            let s1 = d.dot(*n1);
            let s2 = d.dot(*n2);
            for sign in [1.0, -1.0] {
                let den = s1 - sign * s2;
                if den != 0.0 {
                    push((sign * c2 - c1) / den);
                }
            }
        }
    }
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        if disc > -1e-14 * b * b {
            return vec![-b / (2.0 * a)];
        }
        return Vec::new();
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r
}

/// `sup_{x in from} dist(x, to)`, computed exactly. Conventions for empty
/// sets: `dist(x, {}) = diam` and the supremum over `{}` is 0.
pub fn directed_hausdorff(from: &CrackSet, to: &CrackSet, diam: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    if to.is_empty() {
        return diam;
    }
    let f = Features::of(to);
    let mut best = 0.0f64;
    let mut ts = Vec::new();
    for p in from.vertices() {
        best = best.max(f.distance(p));
    }
    for seg in from.segments() {
        ts.clear();
        bisector_params(&seg, &f, &mut ts);
        for &t in &ts {
            best = best.max(f.distance(seg.at(t)));
        }
    }
    best
}

/// Hausdorff distance between two crack sets; `diam` is the domain diameter
/// used for the empty-set convention.
pub fn hausdorff_distance(k1: &CrackSet, k2: &CrackSet, diam: f64) -> f64 {
    directed_hausdorff(k1, k2, diam).max(directed_hausdorff(k2, k1, diam))
}

/// True iff `small` lies within `tol` of `big` (plus the geometric epsilon).
pub fn contains(big: &CrackSet, small: &CrackSet, tol: f64) -> bool {
    if small.is_empty() {
        return true;
    }
    if big.is_empty() {
        return false;
    }
    let tol = tol.max(0.0) + 10.0 * EPS_GEOM;
    let f = Features::of(big);
    if small.vertices().any(|p| f.distance(p) > tol) {
        return false;
    }
    directed_hausdorff(small, big, f64::INFINITY) <= tol
}

/// Length of the part of `k` lying outside the open `eps`-neighbourhood of `h`.
pub fn length_outside_neighborhood(k: &CrackSet, h: &CrackSet, eps: f64) -> f64 {
    let hsegs: Vec<Segment> = h.segments().collect();
    let hpts: Vec<Point2> = h.isolated_points().collect();
    let mut total = 0.0;
    for s in k.segments() {
        let len = s.length();
        let mut covered: Vec<(f64, f64)> = Vec::new();
        for hs in &hsegs {
            if let Some(iv) = capsule_interval(&s, hs, eps) {
                covered.push(iv);
            }
        }
        for p in &hpts {
            if let Some(iv) = disk_interval(&s, *p, eps) {
                covered.push(iv);
            }
        }
        let mut scaled: Vec<(f64, f64)> = covered.into_iter().map(|(a, b)| (a * len, b * len)).collect();
        total += len - union_length(&mut scaled);
    }
    total
}

fn disk_interval(s: &Segment, c: Point2, r: f64) -> Option<(f64, f64)> {
    let d = s.b - s.a;
    let e = s.a - c;
    let qa = d.norm_sq();
    let qb = 2.0 * e.dot(d);
    let qc = e.norm_sq() - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = ((-qb - sq) / (2.0 * qa)).max(0.0);
    let t1 = ((-qb + sq) / (2.0 * qa)).min(1.0);
    (t1 > t0).then_some((t0, t1))
}

/// Parameter interval of `s` inside the `r`-capsule around `h` (convex, so
/// the sublevel set along a line is an interval).
fn capsule_interval(s: &Segment, h: &Segment, r: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in [h.a, h.b] {
        if let Some((a, b)) = disk_interval(s, c, r) {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    // rectangle: |(x - h.a).n| < r and 0 <= (x - h.a).u <= L
    let hl = h.length();
    let u = (h.b - h.a) * (1.0 / hl);
    let n = u.perp();
    let d = s.b - s.a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (c0, c1, a, b) in [
        ((s.a - h.a).dot(n), d.dot(n), -r, r),
        ((s.a - h.a).dot(u), d.dot(u), 0.0, hl),
    ] {
        if c1 == 0.0 {
            if c0 <= a || c0 >= b {
                t1 = -1.0;
            }
        } else {
            let (x, y) = ((a - c0) / c1, (b - c0) / c1);
            t0 = t0.max(x.min(y));
            t1 = t1.min(x.max(y));
        }
    }
    if t1 > t0 {
        lo = lo.min(t0);
        hi = hi.max(t1);
    }
    (hi > lo).then_some((lo.max(0.0), hi.min(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: (f64, f64), b: (f64, f64)) -> Polyline {
        Polyline::segment(Point2::new(a.0, a.1), Point2::new(b.0, b.1)).unwrap()
    }

    fn pt(x: f64, y: f64) -> Polyline {
        Polyline::point(Point2::new(x, y))
    }

    #[test]
    fn lengths() {
        assert_eq!(CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0))]).length(), 1.0);
        assert_eq!(CrackSet::tight(vec![pt(0.0, 0.0)]).length(), 0.0);
        assert_eq!(CrackSet::tight(vec![seg((0.0, 0.0), (3.0, 4.0))]).length(), 5.0);
    }

    #[test]
    fn collinear_overlap_counted_once() {
        let k = CrackSet::tight(vec![seg((0.0, 0.0), (2.0, 0.0)), seg((1.0, 0.0), (3.0, 0.0))]);
        assert!((k.length() - 3.0).abs() < 1e-15);
        let nested = CrackSet::tight(vec![seg((0.0, 0.0), (2.0, 0.0)), seg((1.5, 0.0), (0.5, 0.0))]);
        assert!((nested.length() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn hausdorff_examples() {
        let a = CrackSet::tight(vec![pt(0.0, 0.0)]);
        let b = CrackSet::tight(vec![pt(3.0, 4.0)]);
        assert_eq!(hausdorff_distance(&a, &b, 10.0), 5.0);
        let s = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0))]);
        assert_eq!(hausdorff_distance(&s, &s, 10.0), 0.0);
        let p = CrackSet::tight(vec![pt(0.0, 1.0)]);
        assert!((hausdorff_distance(&s, &p, 10.0) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn hausdorff_empty_conventions() {
        let e = CrackSet::empty();
        let s = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0))]);
        assert_eq!(hausdorff_distance(&e, &e, 7.0), 0.0);
        assert_eq!(hausdorff_distance(&e, &s, 7.0), 7.0);
    }

    #[test]
    fn hausdorff_interior_maximum() {
        // the farthest point of the long segment from the two end points is its midpoint
        let a = CrackSet::tight(vec![seg((0.0, 0.0), (2.0, 0.0))]);
        let b = CrackSet::tight(vec![pt(0.0, 0.0), pt(2.0, 0.0)]);
        assert!((directed_hausdorff(&a, &b, 10.0) - 1.0).abs() < 1e-14);
        assert_eq!(directed_hausdorff(&b, &a, 10.0), 0.0);
    }

    #[test]
    fn component_counts() {
        let disjoint = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0)), seg((0.0, 1.0), (1.0, 1.0))]);
        assert_eq!(disjoint.component_count(), 2);
        let shared = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0)), seg((1.0, 0.0), (1.0, 1.0))]);
        assert_eq!(shared.component_count(), 1);
        assert_eq!(CrackSet::empty().component_count(), 0);
        let crossing = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 1.0)), seg((0.0, 1.0), (1.0, 0.0))]);
        assert_eq!(crossing.component_count(), 1);
    }

    #[test]
    fn budget_enforced() {
        let comps = vec![seg((0.0, 0.0), (1.0, 0.0)), seg((0.0, 1.0), (1.0, 1.0))];
        assert!(matches!(CrackSet::new(comps, 1), Err(Error::GeometryViolation(_))));
    }

    #[test]
    fn containment() {
        let big = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0))]);
        let sub = CrackSet::tight(vec![seg((0.25, 0.0), (0.75, 0.0))]);
        assert!(contains(&big, &sub, 0.0));
        let far = CrackSet::tight(vec![seg((0.0, 1.0), (1.0, 1.0))]);
        assert!(!contains(&big, &far, 0.0));
    }

    #[test]
    fn rejects_bad_polylines() {
        let p = Point2::new(0.0, 0.0);
        assert!(Polyline::new(vec![]).is_err());
        assert!(Polyline::new(vec![p, p]).is_err());
        let bow = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        assert!(Polyline::new(bow).is_err());
        let fold = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.5, 0.0)];
        assert!(Polyline::new(fold).is_err());
    }

    #[test]
    fn extend_straight_and_kinked() {
        let k = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0))]);
        let tip = k.find_tip(None, 0, TipEnd::Finish).unwrap();
        assert_eq!(tip.tangent, Point2::new(1.0, 0.0));
        let straight = k.extend_tip(None, &tip, 0.0, 0.5).unwrap();
        assert_eq!(straight.components()[0].vertices(), &[Point2::new(0.0, 0.0), Point2::new(1.5, 0.0)]);
        let kinked = k.extend_tip(None, &tip, PI / 2.0, 0.5).unwrap();
        let v = kinked.components()[0].vertices();
        assert_eq!(v.len(), 3);
        assert_eq!(v[1], Point2::new(1.0, 0.0));
        assert!(v[2].dist(Point2::new(1.0, 0.5)) < 1e-15);
        assert!(contains(&kinked, &k, 0.0));
        assert!(contains(&straight, &k, 0.0));
    }

    #[test]
    fn extend_start_tip() {
        let k = CrackSet::tight(vec![seg((0.0, 0.0), (1.0, 0.0))]);
        let tip = k.find_tip(None, 0, TipEnd::Start).unwrap();
        assert_eq!(tip.tangent, Point2::new(-1.0, 0.0));
        let e = k.extend_tip(None, &tip, 0.0, 0.25).unwrap();
        assert_eq!(e.components()[0].start(), Point2::new(-0.25, 0.0));
    }

    #[test]
    fn extension_leaving_domain_is_rejected() {
        let dom = DomainSpec::rectangle(0.0, 0.0, 2.0, 1.0);
        let k = CrackSet::tight(vec![seg((0.5, 0.5), (1.5, 0.5))]);
        let tip = k.find_tip(Some(&dom), 0, TipEnd::Finish).unwrap();
        assert!(matches!(
            k.extend_tip(Some(&dom), &tip, 0.0, 1.0),
            Err(Error::GeometryViolation(_))
        ));
        assert!(k.extend_tip(Some(&dom), &tip, 0.0, 0.25).is_ok());
    }

    #[test]
    fn extension_crossing_crack_is_rejected() {
        let k = CrackSet::tight(vec![
            seg((0.0, 0.0), (1.0, 0.0)),
            seg((1.2, -1.0), (1.2, 1.0)),
        ]);
        let tip = k.find_tip(None, 0, TipEnd::Finish).unwrap();
        assert!(k.extend_tip(None, &tip, 0.0, 0.5).is_err());
        // ending exactly on the other component merges them: needs budget
        let touching = k.extend_tip(None, &tip, 0.0, 0.2);
        let merged = touching.unwrap();
        assert_eq!(merged.component_count(), 1);
    }

    #[test]
    fn tips_skip_boundary_ends() {
        let dom = DomainSpec::rectangle(-1.0, -1.0, 1.0, 1.0);
        let k = CrackSet::tight(vec![seg((-1.0, 0.0), (0.0, 0.0))]);
        let tips = k.tips(Some(&dom));
        assert_eq!(tips.len(), 1);
        assert_eq!(tips[0].end, TipEnd::Finish);
        assert_eq!(tips[0].arclength, 1.0);
        assert_eq!(k.tips(None).len(), 2);
    }

    #[test]
    fn polar_about_tip() {
        let k = CrackSet::tight(vec![seg((-1.0, 0.0), (0.0, 0.0))]);
        let tip = k.find_tip(None, 0, TipEnd::Finish).unwrap();
        let (r, th) = tip.polar(Point2::new(0.0, 2.0));
        assert_eq!(r, 2.0);
        assert!((th - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn neighborhood_lengths() {
        let k = CrackSet::tight(vec![seg((0.0, 0.0), (2.0, 0.0))]);
        let h = CrackSet::tight(vec![pt(1.0, 0.0)]);
        assert!((length_outside_neighborhood(&k, &h, 0.25) - 1.5).abs() < 1e-14);
        let hs = CrackSet::tight(vec![seg((0.0, 0.1), (1.0, 0.1))]);
        // covered on [0, 1 + sqrt(0.2^2 - 0.1^2)]
        let expect = 2.0 - (1.0 + (0.04f64 - 0.01).sqrt());
        assert!((length_outside_neighborhood(&k, &hs, 0.2) - expect).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let k = CrackSet::tight(vec![seg((0.1, 0.2), (0.3, 0.7)), pt(0.5, 0.5)]);
        let s = k.to_json();
        assert_eq!(s, "[[[0.1,0.2],[0.3,0.7]],[[0.5,0.5]]]");
        assert_eq!(CrackSet::from_json(&s).unwrap(), k);
    }
}
