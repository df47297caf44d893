//! Time-discrete irreversible quasi-static evolution and its audits.
//!
//! At every time `t_i = i * delta` the crack is the minimizer of the total
//! energy `E(g(t_i), K)` over a finite family of cracks containing the
//! previous one: the previous crack itself plus straight or kinked tip
//! extensions from a ladder of lengths, optionally chained.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::energy::{energy_power_of, total_energy, EnergyCache, EnergyRecord};
use crate::error::{Error, Result};
use crate::geometry::{contains, CrackSet, Point2, Tip, TipEnd};
use crate::mesh::MeshParams;
use crate::sif::{default_window, fit_sif, tip_id, SifRow};
use crate::solver::{bulk_energy, BoundaryDatum, ScalarField};

/// Relative energy difference below which two candidates tie.
pub const TIE_TOL: f64 = 1e-12;

/// Scalar load factor `phi(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `slope * t`
    Linear { slope: f64 },
    /// `scale * t^exponent`, `exponent >= 1`
    Power { scale: f64, exponent: f64 },
    Constant { value: f64 },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Profile::Linear { slope } => slope * t,
            Profile::Power { scale, exponent } => scale * t.powf(*exponent),
            Profile::Constant { value } => *value,
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self {
            Profile::Linear { slope } => *slope,
            Profile::Power { scale, exponent } => scale * exponent * t.powf(exponent - 1.0),
            Profile::Constant { .. } => 0.0,
        }
    }

    /// Nonnegative and nondecreasing on `[0, 1]`.
    pub fn is_monotone(&self) -> bool {
        match self {
            Profile::Linear { slope } => *slope >= 0.0,
            Profile::Power { scale, .. } => *scale >= 0.0,
            Profile::Constant { value } => *value >= 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Profile::Linear { slope } => slope.is_finite(),
            Profile::Power { scale, exponent } => scale.is_finite() && *exponent >= 1.0,
            Profile::Constant { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid load profile {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSample {
    pub t: f64,
    pub datum: BoundaryDatum,
}

/// Boundary displacement as a function of time on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LoadingProgram {
    /// `g(t) = phi(t) h`
    Proportional { profile: BoundaryDatum, phi: Profile },
    /// Piecewise-linear interpolation between samples.
    Sampled { samples: Vec<LoadSample> },
}

impl LoadingProgram {
    pub fn proportional(profile: BoundaryDatum, phi: Profile) -> Self {
        LoadingProgram::Proportional { profile, phi }
    }

    pub fn zero() -> Self {
        LoadingProgram::Proportional { profile: BoundaryDatum::Zero, phi: Profile::Constant { value: 0.0 } }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LoadingProgram::Proportional { phi, .. } => phi.validate(),
            LoadingProgram::Sampled { samples } => {
                if samples.len() < 2 {
                    return Err(Error::Config("a sampled program needs at least two samples".into()));
                }
                if samples[0].t != 0.0 || samples[samples.len() - 1].t != 1.0 {
                    return Err(Error::Config("samples must cover t = 0 and t = 1".into()));
                }
                if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
                    return Err(Error::Config("sample times must increase strictly".into()));
                }
                Ok(())
            }
        }
    }

    fn interval(samples: &[LoadSample], t: f64) -> usize {
        let k = samples.partition_point(|s| s.t <= t);
        k.clamp(1, samples.len() - 1) - 1
    }

    pub fn datum(&self, t: f64) -> BoundaryDatum {
        match self {
            LoadingProgram::Proportional { profile, phi } => {
                let f = phi.value(t);
                if f == 0.0 || profile.is_zero() {
                    BoundaryDatum::Zero
                } else {
                    profile.clone().scaled(f)
                }
            }
            LoadingProgram::Sampled { samples } => {
                let k = Self::interval(samples, t);
                let (a, b) = (&samples[k], &samples[k + 1]);
                let w = (t - a.t) / (b.t - a.t);
                if w == 0.0 {
                    a.datum.clone()
                } else if w == 1.0 {
                    b.datum.clone()
                } else {
                    BoundaryDatum::Sum { terms: vec![a.datum.clone().scaled(1.0 - w), b.datum.clone().scaled(w)] }
                }
            }
        }
    }

    /// `g'(t)`: exact for proportional programs; for sampled programs the
    /// difference quotient of the interval, averaged at interior knots.
    pub fn rate(&self, t: f64) -> BoundaryDatum {
        match self {
            LoadingProgram::Proportional { profile, phi } => {
                let r = phi.rate(t);
                if r == 0.0 || profile.is_zero() {
                    BoundaryDatum::Zero
                } else {
                    profile.clone().scaled(r)
                }
            }
            LoadingProgram::Sampled { samples } => {
                let quotient = |k: usize| {
                    let (a, b) = (&samples[k], &samples[k + 1]);
                    let inv = 1.0 / (b.t - a.t);
                    BoundaryDatum::Sum { terms: vec![b.datum.clone().scaled(inv), a.datum.clone().scaled(-inv)] }
                };
                let knot = samples.iter().position(|s| s.t == t);
                match knot {
                    Some(k) if k > 0 && k + 1 < samples.len() => BoundaryDatum::Sum {
                        terms: vec![quotient(k - 1).scaled(0.5), quotient(k).scaled(0.5)],
                    },
                    _ => quotient(Self::interval(samples, t)),
                }
            }
        }
    }

    /// Profile and load factor of a proportional program with nonnegative,
    /// nondecreasing `phi`.
    pub fn monotone_proportional(&self) -> Result<(&BoundaryDatum, &Profile)> {
        match self {
            LoadingProgram::Proportional { profile, phi } if phi.is_monotone() => Ok((profile, phi)),
            _ => Err(Error::NotProportional),
        }
    }
}

/// Uniform grid `t_i = i delta`, `i = 0..=N` with `N delta <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub delta: f64,
}

impl TimeGrid {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Config(format!("time step {delta} outside (0, 1]")));
        }
        Ok(Self { delta })
    }

    pub fn n_steps(&self) -> usize {
        let n = (1.0 / self.delta).floor();
        // guard against 1/delta landing just below an integer
        let n = if ((n + 1.0) * self.delta) <= 1.0 + 1e-12 { n + 1.0 } else { n };
        n as usize
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.delta
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|i| self.time(i)).collect()
    }
}

/// The finite family of candidate cracks searched at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePolicy {
    /// Kink angles in degrees relative to the tip tangent.
    pub angles_deg: Vec<f64>,
    /// Positive extension lengths; the zero (no-growth) candidate is implicit.
    pub step_lengths: Vec<f64>,
    /// Segments appended per tip per step by greedy chaining.
    pub multi_segment: usize,
    /// Combine the extensions of all tips; otherwise tips are handled one by one.
    pub allow_all_tips: bool,
    /// Cap on the number of combined candidates.
    pub budget: usize,
}

impl CandidatePolicy {
    /// `n_angles` (odd) angles evenly spread over `[-theta_max, theta_max]`
    /// and the ladder `l0, 2 l0, ..., l_max`.
    pub fn new(n_angles: usize, theta_max_deg: f64, l0: f64, l_max: f64, multi_segment: usize, budget: usize) -> Result<Self> {
        if n_angles % 2 == 0 {
            return Err(Error::Config("the number of kink angles must be odd".into()));
        }
        if !(theta_max_deg >= 0.0 && theta_max_deg < 180.0) {
            return Err(Error::Config(format!("maximum kink angle {theta_max_deg} outside [0, 180)")));
        }
        if !(l0 > 0.0 && l_max >= l0) {
            return Err(Error::Config(format!("bad step ladder l0 = {l0}, l_max = {l_max}")));
        }
        let half = (n_angles / 2) as i64;
        let angles_deg = (-half..=half)
            .map(|k| if half == 0 { 0.0 } else { theta_max_deg * k as f64 / half as f64 })
            .collect();
        let n = (l_max / l0 + 1e-9).floor() as usize;
        let step_lengths = (1..=n).map(|k| k as f64 * l0).collect();
        let p = Self { angles_deg, step_lengths, multi_segment, allow_all_tips: true, budget };
        p.validate()?;
        Ok(p)
    }

    /// 17 angles up to 80 degrees, `l0 = 2 h_tip`, `l_max = 20 l0`, three
    /// chained segments.
    pub fn default_for(h_tip: f64) -> Self {
        Self::new(17, 80.0, 2.0 * h_tip, 40.0 * h_tip, 3, 10_000).expect("valid default policy")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.angles_deg.len();
        if n % 2 == 0 || n == 0 {
            return Err(Error::Config("the number of kink angles must be odd".into()));
        }
        for (a, b) in self.angles_deg.iter().zip(self.angles_deg.iter().rev()) {
            if (a + b).abs() > 1e-12 {
                return Err(Error::Config("kink angles must be symmetric about zero".into()));
            }
        }
        if self.angles_deg.iter().any(|a| !(a.abs() < 180.0)) {
            return Err(Error::Config("kink angles must lie in (-180, 180)".into()));
        }
        if self.step_lengths.is_empty() || self.step_lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("step lengths must be positive".into()));
        }
        if self.multi_segment == 0 {
            return Err(Error::Config("multi_segment must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("candidate budget must be positive".into()));
        }
        Ok(())
    }

    fn moves(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.angles_deg.len() * self.step_lengths.len());
        for &a in &self.angles_deg {
            for &l in &self.step_lengths {
                out.push((a, l));
            }
        }
        out
    }
}

/// Everything a run needs besides the time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    pub domain: DomainSpec,
    pub initial_crack: CrackSet,
    /// Component bound `m`.
    pub max_components: usize,
    pub loading: LoadingProgram,
    pub grid: TimeGrid,
    pub mesh: MeshParams,
    pub policy: CandidatePolicy,
}

impl RunSetup {
    pub fn validate(&self) -> Result<()> {
        self.loading.validate()?;
        self.policy.validate()?;
        if self.initial_crack.component_count() > self.max_components {
            return Err(Error::Config(format!(
                "initial crack has {} components, more than m = {}",
                self.initial_crack.component_count(),
                self.max_components
            )));
        }
        for p in self.initial_crack.vertices() {
            if !self.domain.contains(p) {
                return Err(Error::Config(format!("initial crack vertex ({}, {}) outside the domain", p.x, p.y)));
            }
        }
        Ok(())
    }
}

/// One tip extension of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub component_id: usize,
    pub end: TipEnd,
    pub angle_deg: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipRecord {
    pub tip_id: usize,
    pub position: Point2,
    pub tangent: Point2,
    /// Initial arc length of the component plus the growth of this tip.
    pub sigma: f64,
    pub delta_sigma: f64,
    /// Kink of the first segment added in this step, degrees.
    pub angle_deg: f64,
    pub kinked: bool,
    pub kappa: Option<f64>,
    pub release_rate: Option<f64>,
    pub fit_residual: Option<f64>,
    pub window_shrunk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub crack: CrackSet,
    pub energy: EnergyRecord,
    /// Power of the crack of this step under the datum of the next step,
    /// `2 (grad u(t_{i+1}; K_i) | grad g'(t_{i+1}))`.
    pub frozen_power_next: Option<f64>,
    pub tips: Vec<TipRecord>,
    pub candidates: usize,
    pub failed_candidates: usize,
    pub budget_exceeded: bool,
}

#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub setup: RunSetup,
    pub steps: Vec<StepRecord>,
    /// Minimizing field of every step.
    pub fields: Vec<ScalarField>,
}

/// Serialized form of a completed run (fields are recomputed on demand).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub setup: RunSetup,
    pub steps: Vec<StepRecord>,
}

/// Line of the evolution JSONL output.
#[derive(Debug, Clone, Serialize)]
struct JsonlLine<'a> {
    step: usize,
    #[serde(flatten)]
    energy: EnergyRecord,
    tips: &'a [TipRecord],
}

impl EvolutionState {
    pub fn to_state_file(&self) -> StateFile {
        StateFile { setup: self.setup.clone(), steps: self.steps.clone() }
    }

    /// Rebuilds the per-step fields by solving again.
    pub fn from_state_file(file: StateFile) -> Result<Self> {
        let mut fields = Vec::with_capacity(file.steps.len());
        for s in &file.steps {
            let g = file.setup.loading.datum(s.t);
            fields.push(total_energy(&file.setup.domain, &s.crack, &g, file.setup.mesh)?.1);
        }
        Ok(Self { setup: file.setup, steps: file.steps, fields })
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.steps {
            let line = JsonlLine { step: r.step, energy: r.energy, tips: &r.tips };
            s.push_str(&serde_json::to_string(&line).expect("serializable"));
            s.push('\n');
        }
        s
    }

    pub fn crack_snapshots_json(&self) -> String {
        #[derive(Serialize)]
        struct Snap<'a> {
            step: usize,
            t: f64,
            crack: &'a CrackSet,
        }
        let snaps: Vec<Snap> = self.steps.iter().map(|s| Snap { step: s.step, t: s.t, crack: &s.crack }).collect();
        serde_json::to_string_pretty(&snaps).expect("serializable")
    }

    pub fn sif_rows(&self) -> Vec<SifRow> {
        let mut rows = Vec::new();
        for s in &self.steps {
            for tr in &s.tips {
                if let (Some(kappa), Some(rr), Some(res)) = (tr.kappa, tr.release_rate, tr.fit_residual) {
                    rows.push(SifRow {
                        step: s.step,
                        t: s.t,
                        tip_id: tr.tip_id,
                        sigma: tr.sigma,
                        kappa,
                        release_rate: rr,
                        fit_residual: res,
                    });
                }
            }
        }
        rows
    }

    /// Index of the first step with crack growth.
    pub fn onset_step(&self) -> Option<usize> {
        self.steps.iter().position(|s| s.tips.iter().any(|t| t.delta_sigma > 0.0))
    }

    /// Largest of `|grad u_i|` (L2 norm) and `length(K_i)` over the run.
    pub fn lambda(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.energy.bulk.sqrt().max(s.energy.surface))
            .fold(0.0, f64::max)
    }
}

struct Candidate {
    crack: CrackSet,
    moves: Vec<Move>,
}

impl Candidate {
    fn surface_increment(&self) -> f64 {
        self.moves.iter().map(|m| m.length).sum()
    }

    fn max_angle(&self) -> f64 {
        self.moves.iter().map(|m| m.angle_deg.abs()).fold(0.0, f64::max)
    }
}

/// Ordering of evaluated candidates: energy, then smaller surface increment,
/// then smaller largest kink, then enumeration order.
fn better(a: (&Candidate, f64, usize), b: (&Candidate, f64, usize)) -> Ordering {
    let scale = a.1.abs().max(b.1.abs()).max(f64::MIN_POSITIVE);
    if (a.1 - b.1).abs() > TIE_TOL * scale {
        return a.1.total_cmp(&b.1);
    }
    a.0.surface_increment()
        .total_cmp(&b.0.surface_increment())
        .then(a.0.max_angle().total_cmp(&b.0.max_angle()))
        .then(a.2.cmp(&b.2))
}

/// Context shared by the steps of one run.
pub struct Stepper<'a> {
    pub domain: &'a DomainSpec,
    pub mesh: MeshParams,
    pub policy: &'a CandidatePolicy,
    pub cache: Arc<EnergyCache>,
}

/// Outcome of one minimization.
#[derive(Debug, Clone)]
pub struct StepChoice {
    pub crack: CrackSet,
    pub energy: EnergyRecord,
    pub moves: Vec<Move>,
    pub candidates: usize,
    pub failed: usize,
    pub budget_exceeded: bool,
}

impl Stepper<'_> {
    fn tip_moves(&self, k: &CrackSet, tip: &Tip) -> Vec<(Move, CrackSet)> {
        self.policy
            .moves()
            .into_iter()
            .filter_map(|(a, l)| {
                k.extend_tip(Some(self.domain), tip, a.to_radians(), l).ok().map(|c| {
                    (Move { component_id: tip.component_id, end: tip.end, angle_deg: a, length: l }, c)
                })
            })
            .collect()
    }

    /// Evaluates all candidates in parallel and returns the best with counts.
    fn pick(&self, cands: Vec<Candidate>, g: &BoundaryDatum) -> Result<(Candidate, EnergyRecord, usize, usize)> {
        let results: Vec<Result<EnergyRecord>> =
            cands.par_iter().map(|c| self.cache.evaluate(self.domain, &c.crack, g, self.mesh)).collect();
        let n = cands.len();
        let mut best: Option<(usize, f64)> = None;
        let mut failed = 0;
        for (i, r) in results.iter().enumerate() {
            match r {
                Ok(rec) => {
                    let better_than_best = match best {
                        None => true,
                        Some((j, e)) => better((&cands[i], rec.total, i), (&cands[j], e, j)) == Ordering::Less,
                    };
                    if better_than_best {
                        best = Some((i, rec.total));
                    }
                }
                Err(e) => {
                    if i == 0 {
                        // the unchanged crack must always be solvable
                        return Err(e.clone_shallow());
                    }
                    failed += 1;
                }
            }
        }
        let (bi, _) = best.expect("the first candidate succeeded");
        let rec = results[bi].as_ref().map(|r| *r).expect("best is ok");
        let chosen = cands.into_iter().nth(bi).expect("index in range");
        Ok((chosen, rec, n, failed))
    }

    /// Minimizes `E(g, K)` over the candidate family grown from `prev`.
    pub fn step_minimize(&self, prev: &CrackSet, g: &BoundaryDatum) -> Result<StepChoice> {
        let tips = prev.tips(Some(self.domain));
        let per_tip: Vec<Vec<(Move, CrackSet)>> = tips.iter().map(|t| self.tip_moves(prev, t)).collect();
        let combined: f64 = per_tip.iter().map(|m| (m.len() + 1) as f64).product();
        let budget_exceeded = self.policy.allow_all_tips && combined > self.policy.budget as f64;
        let mut candidates = 0;
        let mut failed = 0;

        let (mut current, mut energy) = if self.policy.allow_all_tips && !budget_exceeded && tips.len() > 1 {
            // product over tips, built by applying moves tip by tip
            let mut cands = vec![Candidate { crack: prev.clone(), moves: Vec::new() }];
            for (ti, moves) in per_tip.iter().enumerate() {
                let mut next = Vec::with_capacity(cands.len() * (moves.len() + 1));
                for c in &cands {
                    next.push(Candidate { crack: c.crack.clone(), moves: c.moves.clone() });
                    let tip = c
                        .crack
                        .find_tip(Some(self.domain), tips[ti].component_id, tips[ti].end)
                        .unwrap_or(tips[ti]);
                    for (m, _) in moves {
                        if let Ok(k) = c.crack.extend_tip(Some(self.domain), &tip, m.angle_deg.to_radians(), m.length) {
                            let mut mv = c.moves.clone();
                            mv.push(*m);
                            next.push(Candidate { crack: k, moves: mv });
                        }
                    }
                }
                cands = next;
            }
            let (c, e, n, f) = self.pick(cands, g)?;
            candidates += n;
            failed += f;
            (c, e)
        } else {
            // one tip at a time
            let mut current = Candidate { crack: prev.clone(), moves: Vec::new() };
            let mut energy = None;
            if tips.is_empty() {
                let (c, e, n, f) = self.pick(vec![current], g)?;
                candidates += n;
                failed += f;
                current = c;
                energy = Some(e);
            }
            for (ti, tip0) in tips.iter().enumerate() {
                let tip = current.crack.find_tip(Some(self.domain), tip0.component_id, tip0.end);
                let mut cands = vec![Candidate { crack: current.crack.clone(), moves: current.moves.clone() }];
                if let Some(tip) = tip {
                    let moves = if ti == 0 { per_tip[0].clone() } else { self.tip_moves(&current.crack, &tip) };
                    for (m, k) in moves {
                        let mut mv = current.moves.clone();
                        mv.push(m);
                        cands.push(Candidate { crack: k, moves: mv });
                    }
                }
                let (c, e, n, f) = self.pick(cands, g)?;
                candidates += n;
                failed += f;
                current = c;
                energy = Some(e);
            }
            (current, energy.expect("at least one evaluation"))
        };

        // greedy chaining of further segments on tips that grew
        let mut growing: Vec<(usize, TipEnd)> = current.moves.iter().map(|m| (m.component_id, m.end)).collect();
        growing.dedup();
        for _ in 1..self.policy.multi_segment {
            let mut still = Vec::new();
            for &(cid, end) in &growing {
                let Some(tip) = current.crack.find_tip(Some(self.domain), cid, end) else { continue };
                let mut cands = vec![Candidate { crack: current.crack.clone(), moves: current.moves.clone() }];
                for (m, k) in self.tip_moves(&current.crack, &tip) {
                    let mut mv = current.moves.clone();
                    mv.push(m);
                    cands.push(Candidate { crack: k, moves: mv });
                }
                let before = current.moves.len();
                let (c, e, n, f) = self.pick(cands, g)?;
                candidates += n;
                failed += f;
                if c.moves.len() > before {
                    still.push((cid, end));
                }
                current = c;
                energy = e;
            }
            if still.is_empty() {
                break;
            }
            growing = still;
        }
        Ok(StepChoice {
            crack: current.crack,
            energy,
            moves: current.moves,
            candidates,
            failed,
            budget_exceeded,
        })
    }
}

impl Error {
    fn clone_shallow(&self) -> Error {
        match self {
            Error::GeometryViolation(s) => Error::GeometryViolation(s.clone()),
            Error::MeshFailure(s) => Error::MeshFailure(s.clone()),
            Error::SolveFailure(s) => Error::SolveFailure(s.clone()),
            other => Error::SolveFailure(other.to_string()),
        }
    }
}

/// Runs the whole evolution.
pub fn run_evolution(setup: &RunSetup) -> Result<EvolutionState> {
    setup.validate()?;
    let cache = Arc::new(EnergyCache::new());
    let stepper = Stepper { domain: &setup.domain, mesh: setup.mesh, policy: &setup.policy, cache };
    let grid = setup.grid;
    let n = grid.n_steps();
    let (r1, r2) = default_window(setup.mesh.h_tip);

    // sigma bookkeeping per tip id
    let mut sigma: std::collections::BTreeMap<usize, f64> = setup
        .initial_crack
        .tips(Some(&setup.domain))
        .iter()
        .map(|t| (tip_id(t), t.arclength))
        .collect();

    let mut steps: Vec<StepRecord> = Vec::with_capacity(n + 1);
    let mut fields = Vec::with_capacity(n + 1);
    let mut prev = setup.initial_crack.clone();
    for i in 0..=n {
        let t = grid.time(i);
        let g = setup.loading.datum(t);
        let choice = stepper.step_minimize(&prev, &g)?;
        let k = choice.crack.with_budget(setup.max_components)?;
        let (_, u) = total_energy(&setup.domain, &k, &g, setup.mesh)?;
        let power = energy_power_of(&u, &setup.loading.rate(t))?;
        let energy = EnergyRecord::new(t, choice.energy.bulk, choice.energy.surface, power);

        let mut tips = Vec::new();
        for tip in k.tips(Some(&setup.domain)) {
            let id = tip_id(&tip);
            let grown: Vec<&Move> = choice
                .moves
                .iter()
                .filter(|m| m.component_id == tip.component_id && m.end == tip.end)
                .collect();
            let ds = grown.iter().fold(0.0, |s, m| s + m.length);
            let s = sigma.entry(id).or_insert(tip.arclength - ds);
            *s += ds;
            let fit = fit_sif(&u, &k, &tip, r1, r2).ok();
            tips.push(TipRecord {
                tip_id: id,
                position: tip.position,
                tangent: tip.tangent,
                sigma: *s,
                delta_sigma: ds,
                angle_deg: grown.first().map_or(0.0, |m| m.angle_deg),
                kinked: grown.iter().any(|m| m.angle_deg != 0.0),
                kappa: fit.map(|f| f.kappa),
                release_rate: fit.map(|f| f.release_rate),
                fit_residual: fit.map(|f| f.fit_residual),
                window_shrunk: fit.is_some_and(|f| f.shrunk),
            });
        }
        if let Some(last) = steps.last_mut() {
            last.frozen_power_next = Some(frozen_power(setup, &prev, t)?);
        }
        steps.push(StepRecord {
            step: i,
            t,
            crack: k.clone(),
            energy,
            frozen_power_next: None,
            tips,
            candidates: choice.candidates,
            failed_candidates: choice.failed,
            budget_exceeded: choice.budget_exceeded,
        });
        fields.push(u);
        prev = k;
    }
    Ok(EvolutionState { setup: setup.clone(), steps, fields })
}

/// Power of crack `k` under the datum at time `t`.
fn frozen_power(setup: &RunSetup, k: &CrackSet, t: f64) -> Result<f64> {
    let rate = setup.loading.rate(t);
    if rate.is_zero() {
        return Ok(0.0);
    }
    let (_, u) = total_energy(&setup.domain, k, &setup.loading.datum(t), setup.mesh)?;
    energy_power_of(&u, &rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Steps re-enumerated for the minimality checks (growth steps first).
    pub sampled_steps: usize,
    /// Improvement threshold of the stationarity check, relative to the
    /// current total energy.
    pub stationarity_tol: f64,
    /// Absolute slack of the minimality comparisons, relative to the energy.
    pub minimality_tol: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { sampled_steps: 4, stationarity_tol: 1e-6, minimality_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `E_j - E_i - int_{t_i}^{t_j} power`, largest magnitude over all pairs.
    pub max_abs_residual: f64,
    /// Largest signed residual; the discrete inequality asks for it to be
    /// at most the tolerance.
    pub max_residual: f64,
    pub end_to_end_residual: f64,
    /// Per-interval residuals.
    pub step_residuals: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub irreversibility: Check,
    pub surface_monotone: Check,
    /// Minimality against the family grown from the previous crack.
    pub minimality_previous: Check,
    /// Minimality against the family grown from the crack itself; certified
    /// over the candidate family only.
    pub minimality_current: Check,
    pub energy_balance: BalanceReport,
    pub stationarity: Check,
    pub lambda: f64,
    pub pass: bool,
}

/// Integral of the power over each interval along the crack of its left
/// end: trapezoid of `p(t_r; K_r)` and `p(t_{r+1}; K_r)`.
pub fn interval_work(state: &EvolutionState) -> Vec<f64> {
    let d = state.setup.grid.delta;
    state
        .steps
        .windows(2)
        .map(|w| 0.5 * d * (w[0].energy.power + w[0].frozen_power_next.unwrap_or(w[1].energy.power)))
        .collect()
}

pub fn energy_balance(state: &EvolutionState) -> BalanceReport {
    let work = interval_work(state);
    let e: Vec<f64> = state.steps.iter().map(|s| s.energy.total).collect();
    let mut cum = vec![0.0];
    for w in &work {
        cum.push(cum.last().unwrap() + w);
    }
    let mut max_abs = 0.0f64;
    let mut max_signed = f64::NEG_INFINITY;
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            let r = e[j] - e[i] - (cum[j] - cum[i]);
            max_abs = max_abs.max(r.abs());
            max_signed = max_signed.max(r);
        }
    }
    if e.len() < 2 {
        max_signed = 0.0;
    }
    let step_residuals: Vec<f64> = (0..work.len()).map(|r| e[r + 1] - e[r] - work[r]).collect();
    let scale = e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let pmax = state.steps.iter().fold(0.0f64, |m, s| m.max(s.energy.power.abs()));
    let d = state.setup.grid.delta;
    // solver floor plus the trapezoid error of nonlinear load factors
    let tolerance = 1e-6 * scale + d * d * pmax;
    BalanceReport {
        max_abs_residual: max_abs,
        max_residual: max_signed,
        end_to_end_residual: if e.len() > 1 { e[e.len() - 1] - e[0] - cum[cum.len() - 1] } else { 0.0 },
        step_residuals,
        tolerance,
        pass: max_signed <= tolerance,
    }
}

/// Audits a completed run against the properties of the discrete evolution.
pub fn audit_conditions(state: &EvolutionState, opts: &AuditOptions) -> Result<AuditReport> {
    let steps = &state.steps;
    // (a) irreversibility on all pairs
    let mut bad_pairs = Vec::new();
    for j in 0..steps.len() {
        for i in 0..=j {
            if !contains(&steps[j].crack, &steps[i].crack, 0.0) {
                bad_pairs.push((i, j));
            }
        }
    }
    let irreversibility = Check {
        pass: bad_pairs.is_empty() && contains(&steps[0].crack, &state.setup.initial_crack, 0.0),
        detail: format!("{} of {} pairs violate containment", bad_pairs.len(), steps.len() * (steps.len() + 1) / 2),
    };
    let drops = steps.windows(2).filter(|w| w[1].energy.surface < w[0].energy.surface).count();
    let surface_monotone = Check { pass: drops == 0, detail: format!("{drops} decreases of surface energy") };

    // sampled re-enumeration with a fresh cache
    let setup = &state.setup;
    let stepper = Stepper {
        domain: &setup.domain,
        mesh: setup.mesh,
        policy: &setup.policy,
        cache: Arc::new(EnergyCache::new()),
    };
    let growth: Vec<usize> = steps
        .iter()
        .filter(|s| s.tips.iter().any(|t| t.delta_sigma > 0.0))
        .map(|s| s.step)
        .collect();
    let mut sample: Vec<usize> = growth.iter().copied().take(opts.sampled_steps).collect();
    let mut k = 0;
    while sample.len() < opts.sampled_steps.min(steps.len()) {
        let idx = (k * steps.len()) / opts.sampled_steps.max(1);
        if !sample.contains(&idx) && idx < steps.len() {
            sample.push(idx);
        }
        k += 1;
        if k > 4 * steps.len() {
            break;
        }
    }
    sample.sort_unstable();

    let mut worst_prev = f64::NEG_INFINITY;
    let mut worst_cur = f64::NEG_INFINITY;
    let mut worst_stat = 0.0f64;
    for &i in &sample {
        let s = &steps[i];
        let g = setup.loading.datum(s.t);
        let before = if i == 0 { setup.initial_crack.clone() } else { steps[i - 1].crack.clone() };
        let e = s.energy.total;
        let scale = e.abs().max(1e-300);
        let re = stepper.step_minimize(&before, &g)?;
        worst_prev = worst_prev.max((e - re.energy.total) / scale);
        let again = stepper.step_minimize(&s.crack, &g)?;
        worst_cur = worst_cur.max((e - again.energy.total) / scale);
        if growth.contains(&i) {
            worst_stat = worst_stat.max((e - again.energy.total) / scale);
        }
    }
    let minimality_previous = Check {
        pass: worst_prev <= opts.minimality_tol,
        detail: format!("steps {sample:?}: largest relative excess over the re-enumerated minimum {worst_prev:.3e}"),
    };
    let minimality_current = Check {
        pass: worst_cur <= opts.minimality_tol,
        detail: format!(
            "steps {sample:?}: largest relative improvement from the crack itself {worst_cur:.3e}; certified over the candidate family only"
        ),
    };
    let stationarity = Check {
        pass: worst_stat <= opts.stationarity_tol,
        detail: format!("largest relative improvement at growth steps {worst_stat:.3e}"),
    };
    let energy_balance = energy_balance(state);
    let pass = irreversibility.pass
        && surface_monotone.pass
        && minimality_previous.pass
        && minimality_current.pass
        && energy_balance.pass
        && stationarity.pass;
    Ok(AuditReport {
        irreversibility,
        surface_monotone,
        minimality_previous,
        minimality_current,
        energy_balance,
        stationarity,
        lambda: state.lambda(),
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonePair {
    pub s: usize,
    pub t: usize,
    /// `E(g(t), K(t))`
    pub e_tt: f64,
    /// `E(g(t), K(s))`
    pub e_ts: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub tolerance: f64,
    pub pairs: Vec<MonotonePair>,
    pub pass: bool,
}

/// For proportional monotone loading, checks `E(g(t), K(t)) <= E(g(t), K(s))`
/// on `n_pairs` random step pairs `s < t` by fresh solves.
pub fn audit_monotone_loading(state: &EvolutionState, n_pairs: usize, seed: u64) -> Result<MonotoneReport> {
    state.setup.loading.monotone_proportional()?;
    let steps = &state.steps;
    let mut all = Vec::new();
    for t in 0..steps.len() {
        for s in 0..t {
            all.push((s, t));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<(usize, usize)> = all.choose_multiple(&mut rng, n_pairs.min(all.len())).copied().collect();
    audit_monotone_pairs(state, &chosen)
}

pub fn audit_monotone_pairs(state: &EvolutionState, pairs: &[(usize, usize)]) -> Result<MonotoneReport> {
    state.setup.loading.monotone_proportional()?;
    let steps = &state.steps;
    let e1 = steps.last().map_or(0.0, |s| s.energy.total.abs());
    let tolerance = 1e-6 * e1;
    let setup = &state.setup;
    let results: Vec<Result<MonotonePair>> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let g = setup.loading.datum(steps[t].t);
            let e_tt = steps[t].energy.total;
            let e_ts = if steps[s].crack == steps[t].crack {
                e_tt
            } else {
                total_energy(&setup.domain, &steps[s].crack, &g, setup.mesh)?.0.total
            };
            Ok(MonotonePair { s, t, e_tt, e_ts, pass: e_tt <= e_ts + tolerance })
        })
        .collect();
    let pairs: Vec<MonotonePair> = results.into_iter().collect::<Result<_>>()?;
    let pass = pairs.iter().all(|p| p.pass);
    Ok(MonotoneReport { tolerance, pairs, pass })
}

/// Bulk energy of the field of each step, recomputed from the stored field.
pub fn field_bulk(state: &EvolutionState) -> Vec<f64> {
    state.fields.iter().map(bulk_energy).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;

    fn disk_setup(loading: LoadingProgram, delta: f64) -> RunSetup {
        let h_tip = 1.0 / 32.0;
        RunSetup {
            domain: DomainSpec::unit_disk(),
            initial_crack: CrackSet::tight(vec![
                Polyline::segment(Point2::new(-1.0, 0.0), Point2::new(0.0, 0.0)).unwrap(),
            ]),
            max_components: 1,
            loading,
            grid: TimeGrid::new(delta).unwrap(),
            mesh: MeshParams::new(0.25, h_tip),
            policy: CandidatePolicy::new(3, 30.0, 2.0 * h_tip, 8.0 * h_tip, 1, 1000).unwrap(),
        }
    }

    fn mode_iii() -> BoundaryDatum {
        BoundaryDatum::mode_iii(1.0, Point2::new(0.0, 0.0), Point2::new(1.0, 0.0))
    }

    #[test]
    fn grid_counts() {
        assert_eq!(TimeGrid::new(0.25).unwrap().n_steps(), 4);
        assert_eq!(TimeGrid::new(0.3).unwrap().n_steps(), 3);
        assert_eq!(TimeGrid::new(1.0 / 64.0).unwrap().times().len(), 65);
        assert!(TimeGrid::new(0.0).is_err());
    }

    #[test]
    fn policy_shape() {
        let p = CandidatePolicy::default_for(0.01);
        assert_eq!(p.angles_deg.len(), 17);
        assert_eq!(p.angles_deg[8], 0.0);
        assert_eq!(p.angles_deg[16], 80.0);
        assert_eq!(p.step_lengths.len(), 20);
        assert!((p.step_lengths[19] - 0.4).abs() < 1e-12);
        assert!(CandidatePolicy::new(4, 80.0, 0.1, 1.0, 1, 10).is_err());
    }

    #[test]
    fn sampled_program_interpolates() {
        let prog = LoadingProgram::Sampled {
            samples: vec![
                LoadSample { t: 0.0, datum: BoundaryDatum::Zero },
                LoadSample { t: 0.5, datum: BoundaryDatum::Constant { value: 1.0 } },
                LoadSample { t: 1.0, datum: BoundaryDatum::Constant { value: 3.0 } },
            ],
        };
        prog.validate().unwrap();
        let p = Point2::new(0.1, 0.2);
        assert!((prog.datum(0.25).eval(p) - 0.5).abs() < 1e-15);
        assert!((prog.datum(0.75).eval(p) - 2.0).abs() < 1e-15);
        assert!((prog.rate(0.25).eval(p) - 2.0).abs() < 1e-15);
        assert!((prog.rate(0.5).eval(p) - 3.0).abs() < 1e-15);
        assert!(matches!(prog.monotone_proportional(), Err(Error::NotProportional)));
    }

    #[test]
    fn zero_datum_never_grows() {
        let setup = disk_setup(LoadingProgram::zero(), 0.25);
        let state = run_evolution(&setup).unwrap();
        for s in &state.steps {
            assert_eq!(s.crack, setup.initial_crack);
            assert_eq!(s.energy.total, 1.0);
        }
        let audit = audit_conditions(&state, &AuditOptions { sampled_steps: 2, ..Default::default() }).unwrap();
        assert!(audit.pass, "{audit:?}");
        assert_eq!(audit.energy_balance.max_abs_residual, 0.0);
    }

    #[test]
    fn subcritical_load_follows_square_law() {
        let setup = disk_setup(LoadingProgram::proportional(mode_iii(), Profile::Linear { slope: 0.6 }), 0.25);
        let state = run_evolution(&setup).unwrap();
        assert!(state.onset_step().is_none());
        let b1 = state.steps.last().unwrap().energy.bulk;
        for s in &state.steps {
            assert!((s.energy.bulk - s.t * s.t * b1).abs() <= 1e-8 * b1);
        }
        let bal = energy_balance(&state);
        assert!(bal.max_abs_residual <= 1e-6 * state.steps.last().unwrap().energy.total, "{bal:?}");
    }

    #[test]
    fn supercritical_step_grows() {
        let setup = disk_setup(LoadingProgram::zero(), 1.0);
        let stepper = Stepper {
            domain: &setup.domain,
            mesh: setup.mesh,
            policy: &setup.policy,
            cache: Arc::new(EnergyCache::new()),
        };
        let hot = stepper.step_minimize(&setup.initial_crack, &mode_iii().scaled(1.5)).unwrap();
        assert!(!hot.moves.is_empty());
        let cold = stepper.step_minimize(&setup.initial_crack, &mode_iii().scaled(0.3)).unwrap();
        assert!(cold.moves.is_empty());
        assert_eq!(cold.crack, setup.initial_crack);
    }
}
