//! Polygonal reference configuration with Dirichlet/Neumann boundary labels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{proper_crossing, Point2, Segment, EPS_GEOM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Simple closed polygon, counterclockwise. Edge `i` runs from vertex `i` to
/// vertex `i + 1` and carries `edge_kinds[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainSpec {
    boundary: Vec<Point2>,
    edge_kinds: Vec<BoundaryKind>,
}

#[derive(Deserialize)]
struct RawDomain {
    boundary: Vec<Point2>,
    #[serde(default)]
    edge_kinds: Option<Vec<BoundaryKind>>,
}

impl<'de> Deserialize<'de> for DomainSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = RawDomain::deserialize(de)?;
        let n = raw.boundary.len();
        let kinds = raw.edge_kinds.unwrap_or_else(|| vec![BoundaryKind::Dirichlet; n]);
        DomainSpec::new(raw.boundary, kinds).map_err(serde::de::Error::custom)
    }
}

impl DomainSpec {
    pub fn new(boundary: Vec<Point2>, edge_kinds: Vec<BoundaryKind>) -> Result<Self> {
        let n = boundary.len();
        if n < 3 {
            return Err(Error::Config("domain needs at least 3 vertices".into()));
        }
        if edge_kinds.len() != n {
            return Err(Error::Config(format!(
                "{} edge labels for {n} boundary edges",
                edge_kinds.len()
            )));
        }
        let d = Self { boundary, edge_kinds };
        if d.signed_area() <= 0.0 {
            return Err(Error::Config("boundary must be counterclockwise".into()));
        }
        let segs: Vec<Segment> = d.boundary_segments().collect();
        for i in 0..n {
            if segs[i].length() <= EPS_GEOM {
                return Err(Error::Config("repeated boundary vertex".into()));
            }
            for j in i + 1..n {
                if proper_crossing(&segs[i], &segs[j]).is_some() {
                    return Err(Error::Config("boundary is not simple".into()));
                }
            }
        }
        Ok(d)
    }

    /// Fully Dirichlet polygon.
    pub fn dirichlet(boundary: Vec<Point2>) -> Result<Self> {
        let n = boundary.len();
        Self::new(boundary, vec![BoundaryKind::Dirichlet; n])
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::dirichlet(vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
        .expect("valid rectangle")
    }

    pub fn unit_square() -> Self {
        Self::rectangle(0.0, 0.0, 1.0, 1.0)
    }

    /// Regular `n`-gon inscribed in the circle of the given radius, with a
    /// vertex at angle 0. Vertices on the axes are exact.
    pub fn regular_polygon(center: Point2, radius: f64, n: usize) -> Self {
        let pts = (0..n)
            .map(|k| {
                let (s, c) = if 4 * k % n == 0 {
                    match 4 * k / n {
                        0 => (0.0, 1.0),
                        1 => (1.0, 0.0),
                        2 => (0.0, -1.0),
                        _ => (-1.0, 0.0),
                    }
                } else {
                    (2.0 * PI * k as f64 / n as f64).sin_cos()
                };
                Point2::new(center.x + radius * c, center.y + radius * s)
            })
            .collect();
        Self::dirichlet(pts).expect("valid polygon")
    }

    /// The 128-gon approximation of the unit disk.
    pub fn unit_disk() -> Self {
        Self::regular_polygon(Point2::new(0.0, 0.0), 1.0, 128)
    }

    pub fn with_edge_kinds(mut self, kinds: Vec<BoundaryKind>) -> Result<Self> {
        self.edge_kinds = kinds;
        Self::new(self.boundary, self.edge_kinds)
    }

    /// Relabels every edge whose midpoint satisfies `pred`.
    pub fn label_edges(mut self, kind: BoundaryKind, pred: impl Fn(Point2) -> bool) -> Self {
        let n = self.boundary.len();
        for i in 0..n {
            let mid = (self.boundary[i] + self.boundary[(i + 1) % n]) * 0.5;
            if pred(mid) {
                self.edge_kinds[i] = kind;
            }
        }
        self
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.boundary
    }

    pub fn edge_kinds(&self) -> &[BoundaryKind] {
        &self.edge_kinds
    }

    pub fn edge(&self, i: usize) -> Segment {
        let n = self.boundary.len();
        Segment::new(self.boundary[i], self.boundary[(i + 1) % n])
    }

    pub fn boundary_segments(&self) -> impl Iterator<Item = Segment> + '_ {
        (0..self.boundary.len()).map(|i| self.edge(i))
    }

    fn signed_area(&self) -> f64 {
        let n = self.boundary.len();
        (0..n)
            .map(|i| self.boundary[i].cross(self.boundary[(i + 1) % n]))
            .sum::<f64>()
            * 0.5
    }

    pub fn area(&self) -> f64 {
        self.signed_area()
    }

    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for (i, p) in self.boundary.iter().enumerate() {
            for q in &self.boundary[i + 1..] {
                d = d.max(p.dist(*q));
            }
        }
        d
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.boundary {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }

    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.boundary_segments()
            .map(|s| s.dist_to_point(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of a boundary edge within `tol` of `p`, preferring the lowest.
    pub fn edge_near(&self, p: Point2, tol: f64) -> Option<usize> {
        (0..self.boundary.len()).find(|&i| self.edge(i).dist_to_point(p) <= tol)
    }

    /// Strict interior test by winding number.
    pub fn contains_strict(&self, p: Point2) -> bool {
        let n = self.boundary.len();
        let mut wn = 0i32;
        for i in 0..n {
            let a = self.boundary[i];
            let b = self.boundary[(i + 1) % n];
            let side = (b - a).cross(p - a);
            if a.y <= p.y {
                if b.y > p.y && side > 0.0 {
                    wn += 1;
                }
            } else if b.y <= p.y && side < 0.0 {
                wn -= 1;
            }
        }
        wn != 0
    }

    /// Closed-set membership up to the geometric epsilon.
    pub fn contains(&self, p: Point2) -> bool {
        self.boundary_distance(p) <= EPS_GEOM || self.contains_strict(p)
    }

    /// True if `p` lies on an edge labelled Dirichlet.
    pub fn on_dirichlet(&self, p: Point2, tol: f64) -> bool {
        (0..self.boundary.len())
            .any(|i| self.edge_kinds[i] == BoundaryKind::Dirichlet && self.edge(i).dist_to_point(p) <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_basics() {
        let sq = DomainSpec::unit_square();
        assert_eq!(sq.area(), 1.0);
        assert!((sq.diameter() - 2f64.sqrt()).abs() < 1e-15);
        assert!(sq.contains(Point2::new(0.5, 0.5)));
        assert!(sq.contains(Point2::new(1.0, 0.5)));
        assert!(!sq.contains_strict(Point2::new(1.0 + 1e-9, 0.5)));
    }

    #[test]
    fn disk_has_exact_axis_vertices() {
        let d = DomainSpec::unit_disk();
        assert_eq!(d.vertices()[64], Point2::new(-1.0, 0.0));
        assert_eq!(d.vertices()[32], Point2::new(0.0, 1.0));
        let exact = 64.0 * (2.0 * PI / 128.0).sin();
        assert!((d.area() - exact).abs() < 1e-12);
    }

    #[test]
    fn rejects_clockwise_and_bad_labels() {
        let cw = vec![Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 0.0)];
        assert!(DomainSpec::dirichlet(cw).is_err());
        let tri = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        assert!(DomainSpec::new(tri, vec![BoundaryKind::Neumann]).is_err());
    }

    #[test]
    fn json_defaults_to_dirichlet() {
        let d: DomainSpec = serde_json::from_str(r#"{"boundary": [[0,0],[1,0],[0,1]]}"#).unwrap();
        assert!(d.edge_kinds().iter().all(|k| *k == BoundaryKind::Dirichlet));
        let back: DomainSpec = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
