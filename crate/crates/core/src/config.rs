//! Run configuration (JSON) and the audit bundle written next to a run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::evolution::{
    audit_conditions, audit_monotone_loading, AuditOptions, AuditReport, CandidatePolicy, EvolutionState,
    LoadingProgram, MonotoneReport, RunSetup, TimeGrid,
};
use crate::geometry::CrackSet;
use crate::mesh::MeshParams;
use crate::sif::{griffith_audit, GriffithReport, GriffithTolerances};

/// Either a named domain or an explicit labelled polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainConfig {
    Preset { preset: DomainPreset },
    Polygon(DomainSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainPreset {
    /// 128-gon inscribed in the unit circle.
    UnitDisk,
    /// `[0, 1]^2`
    UnitSquare,
}

impl DomainConfig {
    pub fn build(&self) -> DomainSpec {
        match self {
            DomainConfig::Preset { preset: DomainPreset::UnitDisk } => DomainSpec::unit_disk(),
            DomainConfig::Preset { preset: DomainPreset::UnitSquare } => DomainSpec::unit_square(),
            DomainConfig::Polygon(d) => d.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "default_angles")]
    pub n_angles: usize,
    #[serde(default = "default_theta_max")]
    pub theta_max_deg: f64,
    /// Smallest extension; defaults to `2 h_tip`.
    pub l0: Option<f64>,
    /// Largest extension; defaults to `20 l0`.
    pub l_max: Option<f64>,
    #[serde(default = "default_multi")]
    pub multi_segment: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_true")]
    pub allow_all_tips: bool,
}

fn default_angles() -> usize {
    17
}
fn default_theta_max() -> f64 {
    80.0
}
fn default_multi() -> usize {
    3
}
fn default_budget() -> usize {
    10_000
}
fn default_true() -> bool {
    true
}
fn default_sampled() -> usize {
    4
}
fn default_pairs() -> usize {
    10
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            n_angles: default_angles(),
            theta_max_deg: default_theta_max(),
            l0: None,
            l_max: None,
            multi_segment: default_multi(),
            budget: default_budget(),
            allow_all_tips: true,
        }
    }
}

impl PolicyConfig {
    pub fn build(&self, h_tip: f64) -> Result<CandidatePolicy> {
        let l0 = self.l0.unwrap_or(2.0 * h_tip);
        let l_max = self.l_max.unwrap_or(20.0 * l0);
        let mut p = CandidatePolicy::new(self.n_angles, self.theta_max_deg, l0, l_max, self.multi_segment, self.budget)?;
        p.allow_all_tips = self.allow_all_tips;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_sampled")]
    pub sampled_steps: usize,
    /// Random step pairs of the monotone-loading check; skipped for loads
    /// that are not proportional.
    #[serde(default = "default_pairs")]
    pub monotone_pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub griffith: Option<GriffithTolerances>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { enabled: true, sampled_steps: default_sampled(), monotone_pairs: default_pairs(), seed: 0, griffith: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the minimizing field of every step as VTK.
    #[serde(default)]
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), fields: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub initial_crack: CrackSet,
    /// Component bound; defaults to the components of the initial crack.
    pub max_components: Option<usize>,
    pub loading: LoadingProgram,
    pub delta: f64,
    pub mesh: MeshParams,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn setup(&self) -> Result<RunSetup> {
        let m = &self.mesh;
        if !(m.h_tip > 0.0 && m.h_max >= m.h_tip && m.h_max.is_finite()) {
            return Err(Error::Config(format!("mesh sizes need 0 < h_tip <= h_max, got {} and {}", m.h_tip, m.h_max)));
        }
        if !(m.grading > 0.0 && m.grading < 1.0) {
            return Err(Error::Config(format!("grading {} outside (0, 1)", m.grading)));
        }
        let setup = RunSetup {
            domain: self.domain.build(),
            max_components: self.max_components.unwrap_or(self.initial_crack.component_count()),
            initial_crack: self.initial_crack.clone(),
            loading: self.loading.clone(),
            grid: TimeGrid::new(self.delta)?,
            mesh: self.mesh,
            policy: self.policy.build(m.h_tip)?,
        };
        setup.validate()?;
        Ok(setup)
    }

    /// Same configuration with another time step.
    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }
}

/// Everything the audit of a run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBundle {
    pub conditions: AuditReport,
    pub griffith: GriffithReport,
    /// `None` when the loading is not monotone proportional.
    pub monotone: Option<MonotoneReport>,
    pub pass: bool,
}

pub fn audit_run(state: &EvolutionState, cfg: &AuditConfig) -> Result<AuditBundle> {
    let opts = AuditOptions { sampled_steps: cfg.sampled_steps, ..AuditOptions::default() };
    let conditions = audit_conditions(state, &opts)?;
    let griffith = griffith_audit(state, cfg.griffith.unwrap_or_default());
    let monotone = match audit_monotone_loading(state, cfg.monotone_pairs, cfg.seed) {
        Ok(r) => Some(r),
        Err(Error::NotProportional) => None,
        Err(e) => return Err(e),
    };
    let pass = conditions.pass && griffith.pass && monotone.as_ref().is_none_or(|m| m.pass);
    Ok(AuditBundle { conditions, griffith, monotone, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "domain": {"preset": "unit_disk"},
        "initial_crack": [[[-1.0, 0.0], [0.0, 0.0]]],
        "loading": {"mode": "proportional",
                    "profile": {"kind": "mode_iii", "kappa": 1.0, "tip": [0.0, 0.0], "angle": 0.0},
                    "phi": {"kind": "linear", "slope": 1.5}},
        "delta": 0.0625,
        "mesh": {"h_max": 0.0625, "h_tip": 0.0078125}
    }"#;

    #[test]
    fn minimal_config_builds() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        let s = c.setup().unwrap();
        assert_eq!(s.max_components, 1);
        assert_eq!(s.grid.n_steps(), 16);
        assert_eq!(s.policy.angles_deg.len(), 17);
        assert!((s.policy.step_lengths[0] - 2.0 * 0.0078125).abs() < 1e-15);
        assert_eq!(c.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn polygon_domain() {
        let text = MINIMAL.replace(
            r#"{"preset": "unit_disk"}"#,
            r#"{"boundary": [[-1,-1],[1,-1],[1,1],[-1,1]], "edge_kinds": ["dirichlet","neumann","dirichlet","neumann"]}"#,
        );
        let c = RunConfig::from_json(&text).unwrap();
        assert_eq!(c.setup().unwrap().domain.edge_kinds()[1], crate::domain::BoundaryKind::Neumann);
    }

    #[test]
    fn errors_are_config_errors() {
        for bad in [
            MINIMAL.replace("0.0625,", "0.0,"),
            MINIMAL.replace("\"h_tip\": 0.0078125", "\"h_tip\": 0.5"),
            MINIMAL.replace("\"delta\"", "\"dleta\""),
            MINIMAL.replace("[[[-1.0, 0.0], [0.0, 0.0]]]", "[[[-1.0, 0.0], [3.0, 0.0]]]"),
            MINIMAL.replace("\"slope\": 1.5", "\"slope\": \"fast\""),
        ] {
            let r = RunConfig::from_json(&bad).and_then(|c| c.setup());
            assert!(matches!(r, Err(Error::Config(_))), "{bad}: {r:?}");
        }
    }
}
