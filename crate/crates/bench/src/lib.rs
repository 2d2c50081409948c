//! Shared fixtures for the kernel benchmarks.

use rgls_core::experiments::{Scenario, ScenarioSpec};
use rgls_core::wave::{ShotGather, SourceTerm};
use rgls_core::CaseId;

/// The desk H2 scenario (126×126 grid) and its first shot.
pub struct DeskShot {
    pub scenario: Scenario,
    pub source: SourceTerm,
    pub receivers: Vec<(f64, f64)>,
}

impl DeskShot {
    pub fn new() -> Self {
        let scenario = Scenario::build(&ScenarioSpec::new(CaseId::H2, 0.25, 7)).expect("desk scenario");
        let shot = &scenario.geometry.shots[0];
        let source = SourceTerm {
            position: shot.source,
            wavelet: scenario.wavelet.clone(),
        };
        let receivers = shot.receivers.clone();
        DeskShot {
            scenario,
            source,
            receivers,
        }
    }

    /// Observed gather of the first shot through the true model.
    pub fn observed(&self) -> ShotGather {
        let p = &self.scenario.params;
        rgls_core::wave::forward(
            &self.scenario.true_model,
            &self.source,
            &self.receivers,
            p.nt,
            p.dt,
            p.pml.as_ref(),
            false,
        )
        .expect("forward")
        .0
    }
}

impl Default for DeskShot {
    fn default() -> Self {
        Self::new()
    }
}
