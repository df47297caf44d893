//! Convergence and consistency checks at desk scale: minimizer convergence
//! under Hausdorff convergence of cracks, energy continuity in time, length
//! lower semicontinuity, and a sampling oracle for the Hausdorff distance.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::Result;
use crate::evolution::EvolutionState;
use crate::geometry::{hausdorff_distance, length_outside_neighborhood, CrackSet, Point2, Polyline};
use crate::mesh::{triangulate, CrackMesh, MeshParams};
use crate::solver::{bulk_energy, solve, BoundaryDatum, ScalarField};

/// A sequence of (crack, datum) pairs converging to a target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceScenario {
    pub name: String,
    pub domain: DomainSpec,
    /// Index of each member.
    pub index: Vec<usize>,
    pub members: Vec<(CrackSet, BoundaryDatum)>,
    pub target: (CrackSet, BoundaryDatum),
}

fn slit(from: Point2, to: Point2) -> CrackSet {
    CrackSet::tight(vec![Polyline::segment(from, to).expect("distinct endpoints")])
}

fn dyadic(n_max: usize) -> Vec<usize> {
    std::iter::successors(Some(2usize), |n| Some(n * 2)).take_while(|n| *n <= n_max).collect()
}

fn slit_datum() -> BoundaryDatum {
    BoundaryDatum::mode_iii(1.0, Point2::new(0.0, 0.0), Point2::new(1.0, 0.0))
}

impl ConvergenceScenario {
    /// `K_n = K` for every `n`.
    pub fn constant(domain: DomainSpec, k: CrackSet, g: BoundaryDatum, n: usize) -> Self {
        Self {
            name: "constant".into(),
            domain,
            index: (1..=n).collect(),
            members: vec![(k.clone(), g.clone()); n],
            target: (k, g),
        }
    }

    /// Slit from the boundary of the unit disk of length `a (1 + 1/n)`,
    /// `n = 2, 4, ..., n_max`.
    pub fn slit_lengthening(a: f64, n_max: usize) -> Self {
        let start = Point2::new(-1.0, 0.0);
        let at = |len: f64| slit(start, Point2::new(-1.0 + len, 0.0));
        let index = dyadic(n_max);
        let members = index.iter().map(|&n| (at(a * (1.0 + 1.0 / n as f64)), slit_datum())).collect();
        Self { name: "slit_lengthening".into(), domain: DomainSpec::unit_disk(), index, members, target: (at(a), slit_datum()) }
    }

    /// Unit-length slit from `(-1, 0)` at angle `theta (1 + 1/n)`.
    pub fn rotating_slit(theta: f64, n_max: usize) -> Self {
        let start = Point2::new(-1.0, 0.0);
        let at = |th: f64| slit(start, start + Point2::new(th.cos(), th.sin()) * 0.9);
        let index = dyadic(n_max);
        let members = index.iter().map(|&n| (at(theta * (1.0 + 1.0 / n as f64)), slit_datum())).collect();
        Self { name: "rotating_slit".into(), domain: DomainSpec::unit_disk(), index, members, target: (at(theta), slit_datum()) }
    }

    /// Hausdorff distance of each member crack to the target crack.
    pub fn distances(&self) -> Vec<f64> {
        let diam = self.domain.diameter();
        self.members.iter().map(|(k, _)| hausdorff_distance(k, &self.target.0, diam)).collect()
    }

    /// The scenario's own hypothesis: distances decrease (non-strictly) and
    /// end below `1e-3`.
    pub fn certifies_hypothesis(&self) -> bool {
        let d = self.distances();
        d.windows(2).all(|w| w[1] <= w[0]) && d.last().is_some_and(|x| *x < 1e-3)
    }
}

/// Uniform-grid point location over the triangles of a mesh.
pub struct Locator {
    mesh: Arc<CrackMesh>,
    origin: Point2,
    cell: f64,
    bins: HashMap<(i64, i64), Vec<usize>>,
}

impl Locator {
    pub fn new(mesh: Arc<CrackMesh>) -> Self {
        let cell = mesh.h_max;
        let origin = mesh.nodes.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |m, p| {
            Point2::new(m.x.min(p.x), m.y.min(p.y))
        });
        let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let ps = tri.map(|v| mesh.nodes[v]);
            let lo = Point2::new(ps[0].x.min(ps[1].x).min(ps[2].x), ps[0].y.min(ps[1].y).min(ps[2].y));
            let hi = Point2::new(ps[0].x.max(ps[1].x).max(ps[2].x), ps[0].y.max(ps[1].y).max(ps[2].y));
            let (i0, j0) = Self::bin_of(origin, cell, lo);
            let (i1, j1) = Self::bin_of(origin, cell, hi);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    bins.entry((i, j)).or_default().push(t);
                }
            }
        }
        Self { mesh, origin, cell, bins }
    }

    fn bin_of(origin: Point2, cell: f64, p: Point2) -> (i64, i64) {
        (((p.x - origin.x) / cell).floor() as i64, ((p.y - origin.y) / cell).floor() as i64)
    }

    /// Triangle containing `p` and its barycentric coordinates.
    pub fn locate(&self, p: Point2) -> Option<(usize, [f64; 3])> {
        let key = Self::bin_of(self.origin, self.cell, p);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in self.bins.get(&key)? {
            let [a, b, c] = self.mesh.triangles[t].map(|v| self.mesh.nodes[v]);
            let det = (b - a).cross(c - a);
            let l1 = (p - a).cross(c - a) / det;
            let l2 = (b - a).cross(p - a) / det;
            let l0 = 1.0 - l1 - l2;
            let worst = l0.min(l1).min(l2);
            if best.is_none_or(|(_, _, w)| worst > w) {
                best = Some((t, [l0, l1, l2], worst));
            }
        }
        best.filter(|b| b.2 >= -1e-9).map(|(t, l, _)| (t, l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub hausdorff: f64,
    pub bulk: f64,
    pub bulk_gap: f64,
    /// `||grad u_n - grad u||` on the reference mesh.
    pub gradient_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub scenario: String,
    pub rows: Vec<ConvergenceRow>,
    /// `||grad u - grad u_ref||` of the target solved at member resolution.
    pub transfer_error: f64,
    pub spearman: f64,
    pub hypothesis: bool,
    pub pass: bool,
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// `||grad u - grad w||` in L2 over the triangles of `reference`, sampling
/// both piecewise-constant gradients at triangle centroids.
fn gradient_distance(reference: &CrackMesh, u: &ScalarField, u_loc: &Locator, w: &ScalarField, w_loc: &Locator) -> f64 {
    let gu = u.gradient();
    let gw = w.gradient();
    let mut sum = 0.0;
    for (t, tri) in reference.triangles.iter().enumerate() {
        let c = (reference.nodes[tri[0]] + reference.nodes[tri[1]] + reference.nodes[tri[2]]) * (1.0 / 3.0);
        let (Some((a, _)), Some((b, _))) = (u_loc.locate(c), w_loc.locate(c)) else { continue };
        sum += reference.triangle_area(t) * (gu.grads[a] - gw.grads[b]).norm_sq();
    }
    sum.sqrt()
}

/// Solves every member and the target, and measures gradient distances on a
/// reference mesh of the target refined by `refine`.
pub fn check_minimizer_convergence(s: &ConvergenceScenario, params: MeshParams, refine: f64) -> Result<ConvergenceReport> {
    let fine = MeshParams::new(params.h_max / refine, params.h_tip / refine);
    let ref_mesh = Arc::new(triangulate(&s.domain, &s.target.0, fine)?);
    let u_ref = solve(ref_mesh.clone(), &s.target.1)?;
    let ref_loc = Locator::new(ref_mesh.clone());
    let coarse = Arc::new(triangulate(&s.domain, &s.target.0, params)?);
    let u_target = solve(coarse.clone(), &s.target.1)?;
    let target_loc = Locator::new(coarse);
    let transfer_error = gradient_distance(&ref_mesh, &u_target, &target_loc, &u_ref, &ref_loc);
    let bulk_target = bulk_energy(&u_target);
    let dist = s.distances();

    let rows: Vec<Result<ConvergenceRow>> = s
        .members
        .par_iter()
        .zip(s.index.par_iter())
        .zip(dist.par_iter())
        .map(|(((k, g), &n), &hausdorff)| {
            let mesh = Arc::new(triangulate(&s.domain, k, params)?);
            let u = solve(mesh.clone(), g)?;
            let loc = Locator::new(mesh);
            let bulk = bulk_energy(&u);
            Ok(ConvergenceRow {
                n,
                hausdorff,
                bulk,
                bulk_gap: (bulk - bulk_target).abs(),
                gradient_distance: gradient_distance(&ref_mesh, &u, &loc, &u_target, &target_loc),
            })
        })
        .collect();
    let rows: Vec<ConvergenceRow> = rows.into_iter().collect::<Result<_>>()?;
    let idx: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let gd: Vec<f64> = rows.iter().map(|r| r.gradient_distance).collect();
    let rho = spearman(&idx, &gd);
    let constant = gd.iter().all(|d| *d == 0.0);
    let hypothesis = s.certifies_hypothesis() || dist.iter().all(|d| *d == 0.0);
    let trend = constant || (rho < 0.0 && gd.last() < gd.first());
    Ok(ConvergenceReport { scenario: s.name.clone(), rows, transfer_error, spearman: rho, hypothesis, pass: hypothesis && trend })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub delta: f64,
    /// Largest `|E(t_{i+1}) - E(t_i)|`.
    pub max_total_jump: f64,
    pub max_surface_jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub coarse: ContinuityRow,
    pub fine: ContinuityRow,
    /// Coarse over fine total-energy jump statistic.
    pub ratio: f64,
    pub pass: bool,
}

fn jumps(state: &EvolutionState) -> ContinuityRow {
    let mut row = ContinuityRow { delta: state.setup.grid.delta, max_total_jump: 0.0, max_surface_jump: 0.0 };
    for w in state.steps.windows(2) {
        row.max_total_jump = row.max_total_jump.max((w[1].energy.total - w[0].energy.total).abs());
        row.max_surface_jump = row.max_surface_jump.max((w[1].energy.surface - w[0].energy.surface).abs());
    }
    row
}

/// Compares a run with its rerun at half the time step: total-energy jumps
/// must shrink; surface jumps are only reported.
pub fn check_energy_continuity(state: &EvolutionState, half: &EvolutionState) -> ContinuityReport {
    let coarse = jumps(state);
    let fine = jumps(half);
    let ratio = if fine.max_total_jump > 0.0 { coarse.max_total_jump / fine.max_total_jump } else { f64::INFINITY };
    let pass = (coarse.max_total_jump == 0.0 && fine.max_total_jump == 0.0) || fine.max_total_jump < coarse.max_total_jump;
    ContinuityReport { coarse, fine, ratio, pass }
}

/// A Hausdorff-convergent family of cracks with `eps_n = 2^{-n}` and a
/// converging family of obstacles for the difference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GolabFamily {
    pub target: CrackSet,
    pub members: Vec<CrackSet>,
    pub obstacle: CrackSet,
    pub obstacles: Vec<CrackSet>,
}

fn random_polyline<R: Rng>(rng: &mut R) -> Polyline {
    loop {
        let n = rng.gen_range(2..=4);
        let mut v = vec![Point2::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8))];
        while v.len() < n {
            let last = v[v.len() - 1];
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let l = rng.gen_range(0.1..0.5);
            v.push(last + Point2::new(a.cos(), a.sin()) * l);
        }
        if let Ok(p) = Polyline::new(v) {
            if p.is_simple() {
                return p;
            }
        }
    }
}

/// Random crack with up to `m` components.
pub fn random_crack<R: Rng>(rng: &mut R, m: usize) -> CrackSet {
    let c = rng.gen_range(1..=m);
    CrackSet::tight((0..c).map(|_| random_polyline(rng)).collect())
}

/// Moves every vertex by at most `eps`.
fn perturb<R: Rng>(k: &CrackSet, eps: f64, rng: &mut R) -> CrackSet {
    let comps = k
        .components()
        .iter()
        .map(|c| {
            for _ in 0..100 {
                let v: Vec<Point2> = c
                    .vertices()
                    .iter()
                    .map(|p| {
                        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                        *p + Point2::new(a.cos(), a.sin()) * (eps * rng.gen_range(0.0..1.0))
                    })
                    .collect();
                if let Ok(p) = Polyline::new(v) {
                    return p;
                }
            }
            c.clone()
        })
        .collect();
    CrackSet::tight(comps)
}

/// Replaces each segment by a zigzag of amplitude `eps` with `teeth` teeth.
fn zigzag(k: &CrackSet, eps: f64, teeth: usize) -> CrackSet {
    let comps = k
        .components()
        .iter()
        .map(|c| {
            let mut amp = eps;
            // shrink near sharp corners until the zigzag stays simple
            while amp > 1e-15 {
                let mut v = vec![c.vertices()[0]];
                for s in c.segments() {
                    let normal = (s.b - s.a).normalized().perp();
                    for i in 1..=2 * teeth {
                        let p = s.at(i as f64 / (2 * teeth) as f64);
                        v.push(if i % 2 == 1 { p + normal * amp } else { p });
                    }
                }
                if let Ok(p) = Polyline::new(v) {
                    return p;
                }
                amp *= 0.5;
            }
            c.clone()
        })
        .collect();
    CrackSet::tight(comps)
}

impl GolabFamily {
    /// Family `n = 1..=n_max`; even seeds perturb vertices, odd seeds use
    /// zigzags.
    pub fn generate<R: Rng>(rng: &mut R, m: usize, n_max: usize, zig: bool) -> Self {
        let target = random_crack(rng, m);
        let obstacle = random_crack(rng, 1);
        let members = (1..=n_max)
            .map(|n| {
                let eps = 0.5f64.powi(n as i32);
                if zig {
                    zigzag(&target, eps, n.min(8))
                } else {
                    perturb(&target, eps, rng)
                }
            })
            .collect();
        let obstacles = (1..=n_max).map(|n| perturb(&obstacle, 0.5f64.powi(n as i32), rng)).collect();
        Self { target, members, obstacle, obstacles }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GolabReport {
    pub target_length: f64,
    /// Minimum length over the last quarter of the family.
    pub liminf_length: f64,
    pub final_hausdorff: f64,
    /// `(eps, target value, liminf)` of the difference check.
    pub difference: Vec<(f64, f64, f64)>,
    pub pass: bool,
}

/// Lower semicontinuity of length and of length outside a neighborhood.
pub fn check_golab(f: &GolabFamily, diam: f64) -> GolabReport {
    let tail = f.members.len() - f.members.len() / 4;
    let target_length = f.target.length();
    let liminf_length = f.members[tail..].iter().map(CrackSet::length).fold(f64::INFINITY, f64::min);
    let final_hausdorff = f.members.last().map_or(0.0, |k| hausdorff_distance(k, &f.target, diam));
    let mut difference = Vec::new();
    let mut pass = liminf_length >= target_length - 1e-8 && final_hausdorff < 1e-3;
    for eps in [1e-2, 1e-3] {
        let limit = length_outside_neighborhood(&f.target, &f.obstacle, eps);
        let liminf = f.members[tail..]
            .iter()
            .zip(&f.obstacles[tail..])
            .map(|(k, h)| length_outside_neighborhood(k, h, eps))
            .fold(f64::INFINITY, f64::min);
        pass &= liminf >= limit - 1e-6;
        difference.push((eps, limit, liminf));
    }
    GolabReport { target_length, liminf_length, final_hausdorff, difference, pass }
}

fn directed_sampled(from: &CrackSet, to: &CrackSet, spacing: f64, diam: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    if to.is_empty() {
        return diam;
    }
    let dist = |p: Point2| to.distance_to_point(p).unwrap_or(diam);
    let mut worst: f64 = 0.0;
    for p in from.isolated_points() {
        worst = worst.max(dist(p));
    }
    for s in from.segments() {
        let n = (s.length() / spacing).ceil().max(1.0) as usize;
        for i in 0..=n {
            worst = worst.max(dist(s.at(i as f64 / n as f64)));
        }
    }
    worst
}

/// Hausdorff distance by sampling both sets at `spacing` and measuring exact
/// point-to-set distances; low by at most `spacing / 2`.
pub fn hausdorff_sampled(k1: &CrackSet, k2: &CrackSet, spacing: f64, diam: f64) -> f64 {
    if k1.is_empty() && k2.is_empty() {
        return 0.0;
    }
    directed_sampled(k1, k2, spacing, diam).max(directed_sampled(k2, k1, spacing, diam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 5.0, 7.0, 9.0]) - 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 2.0], &[4.0, 4.0]), 0.0);
    }

    #[test]
    fn constant_family_has_zero_distance() {
        let s = ConvergenceScenario::constant(
            DomainSpec::unit_disk(),
            slit(Point2::new(-1.0, 0.0), Point2::new(-0.5, 0.0)),
            slit_datum(),
            3,
        );
        let r = check_minimizer_convergence(&s, MeshParams::new(0.25, 1.0 / 16.0), 2.0).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.rows.iter().all(|x| x.gradient_distance == 0.0 && x.bulk_gap == 0.0 && x.hausdorff == 0.0));
    }

    #[test]
    fn scenarios_certify_themselves() {
        assert!(ConvergenceScenario::slit_lengthening(0.5, 1024).certifies_hypothesis());
        assert!(ConvergenceScenario::rotating_slit(0.3, 1024).certifies_hypothesis());
        assert!(!ConvergenceScenario::slit_lengthening(0.5, 16).certifies_hypothesis());
    }

    #[test]
    fn locator_finds_nodes() {
        let d = DomainSpec::unit_square();
        let m = Arc::new(triangulate(&d, &CrackSet::empty(), MeshParams::uniform(0.2)).unwrap());
        let loc = Locator::new(m.clone());
        for (t, tri) in m.triangles.iter().enumerate().step_by(7) {
            let c = (m.nodes[tri[0]] + m.nodes[tri[1]] + m.nodes[tri[2]]) * (1.0 / 3.0);
            let (found, l) = loc.locate(c).unwrap();
            assert_eq!(found, t);
            assert!(l.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-9));
        }
        assert!(loc.locate(Point2::new(2.0, 2.0)).is_none());
    }

    #[test]
    fn sampled_hausdorff_of_parallel_segments() {
        let a = slit(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0));
        let b = slit(Point2::new(0.0, 0.3), Point2::new(1.5, 0.3));
        let exact = (0.25f64 + 0.09).sqrt();
        assert!((hausdorff_sampled(&a, &b, 1e-3, 2.0) - exact).abs() < 1e-3);
    }

    #[test]
    fn golab_families_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..4 {
            let f = GolabFamily::generate(&mut rng, 2, 40, i % 2 == 1);
            let r = check_golab(&f, 4.0);
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn zero_continuity() {
        let row = ContinuityRow { delta: 0.5, max_total_jump: 0.0, max_surface_jump: 0.0 };
        assert_eq!(row.max_total_jump, 0.0);
    }
}
