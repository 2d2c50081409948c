//! Run configuration: TOML file, then command-line overrides. The resolved
//! result is written next to every command's outputs.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use rgls_core::experiments::REGISTRATION_F_CENTER;
use rgls_core::{AdjointSourceSpec, InversionConfig, LfaKind, MisfitMode, StepRule, SweepSchedule};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub registration: RegistrationSection,
    pub inversion: InversionSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            scenario: ScenarioSection::default(),
            registration: RegistrationSection::default(),
            inversion: InversionSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub case: String,
    pub scale: f64,
    /// Overrides the case default when set.
    pub f_center: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub pml_width: Option<usize>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            case: "H2".into(),
            scale: 0.25,
            f_center: None,
            noise_sigma: None,
            pml_width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSection {
    pub f_center: f64,
    pub n_bands: usize,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
    pub penalty_weight: f64,
    pub n_intervals: usize,
    pub lfa: LfaKind,
    pub stride: usize,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        let s = SweepSchedule::for_source(REGISTRATION_F_CENTER).expect("default schedule");
        RegistrationSection {
            f_center: REGISTRATION_F_CENTER,
            n_bands: s.bands.len(),
            newton_max_iter: s.newton_max_iter,
            newton_tol: s.newton_tol,
            penalty_weight: s.penalty_weight,
            n_intervals: s.n_intervals,
            lfa: LfaKind::HilbertSum,
            stride: 1,
        }
    }
}

impl RegistrationSection {
    pub fn schedule(&self, f_center: f64) -> anyhow::Result<SweepSchedule> {
        let mut s = SweepSchedule::geometric(f_center, self.n_bands)?;
        s.newton_max_iter = self.newton_max_iter;
        s.newton_tol = self.newton_tol;
        s.penalty_weight = self.penalty_weight;
        s.n_intervals = self.n_intervals;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSection {
    pub method: MisfitMode,
    pub max_iter: usize,
    pub step_rule: StepRule,
    pub step_cap: f64,
    pub alpha: f64,
    pub switch_to_ls: bool,
    pub switch_patience: usize,
    pub switch_rel_tol: f64,
    /// Receiver stride for registration; defaults to `round(50·scale)`.
    pub stride: Option<usize>,
    pub v_bounds: Option<(f64, f64)>,
    /// Write the model every this many iterations (0 disables).
    pub snapshot_every: usize,
}

impl Default for InversionSection {
    fn default() -> Self {
        InversionSection {
            method: MisfitMode::Rgls,
            max_iter: 150,
            step_rule: StepRule::FixedCap,
            step_cap: 50.0,
            alpha: rgls_core::adjoint_source::DEFAULT_ALPHA,
            switch_to_ls: false,
            switch_patience: 5,
            switch_rel_tol: 1e-3,
            stride: None,
            v_bounds: None,
            snapshot_every: 10,
        }
    }
}

/// Registration stride for a scenario scale: one anchor per
/// `round(50·s)` receivers.
pub fn default_stride(scale: f64) -> usize {
    (50.0 * scale).round().max(1.0) as usize
}

impl InversionSection {
    pub fn build(
        &self,
        reg: &RegistrationSection,
        f_center: f64,
        scale: f64,
        scenario_bounds: (f64, f64),
    ) -> anyhow::Result<InversionConfig> {
        let mut spec = AdjointSourceSpec::new(self.method, f_center)?;
        spec.alpha = self.alpha;
        spec.lfa_kind = reg.lfa;
        spec.stride = self.stride.unwrap_or_else(|| default_stride(scale));
        spec.sched = reg.schedule(f_center)?;
        let mut cfg = InversionConfig::new(spec, self.v_bounds.unwrap_or(scenario_bounds));
        cfg.max_iter = self.max_iter;
        cfg.step_rule = self.step_rule;
        cfg.step_cap = self.step_cap;
        cfg.switch_to_ls = self.switch_to_ls;
        cfg.switch_patience = self.switch_patience;
        cfg.switch_rel_tol = self.switch_rel_tol;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| BadConfig(format!("{}: {e}", path.display())).into())
    }

    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        let text = toml::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// A configuration the user has to fix (exit code 2).
#[derive(Debug)]
pub struct BadConfig(pub String);

impl std::fmt::Display for BadConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadConfig {}
