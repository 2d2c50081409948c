//! Residual gathers fed to the adjoint solver.
//!
//! Both flavours return `r = target − pred`; the imaging condition treats
//! the target as fixed data. For RGLS the target is the predicted trace
//! moved a fraction `α` of the way toward the observed one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{register_gather_partial, SweepSchedule};
use crate::signal::{LfaKind, Trace};
use crate::spline::{apply_warp, WarpModel};
use crate::wave::ShotGather;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MisfitMode {
    Ls,
    Rgls,
}

impl MisfitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MisfitMode::Ls => "ls",
            MisfitMode::Rgls => "rgls",
        }
    }
}

impl fmt::Display for MisfitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MisfitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ls" => Ok(MisfitMode::Ls),
            "rgls" => Ok(MisfitMode::Rgls),
            _ => Err(Error::InvalidArgument(format!("unknown misfit mode `{s}` (expected ls or rgls)"))),
        }
    }
}

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointSourceSpec {
    pub mode: MisfitMode,
    /// Fraction of the registered warp applied to the prediction.
    pub alpha: f64,
    pub sched: SweepSchedule,
    pub lfa_kind: LfaKind,
    /// Register every `stride`-th receiver and interpolate the rest.
    pub stride: usize,
    /// Traces are decimated to the coarsest sampling not above this before
    /// registration (0 keeps the recorded sampling). The warp is applied to
    /// the full-rate prediction.
    #[serde(default)]
    pub register_dt: f64,
}

impl AdjointSourceSpec {
    pub fn new(mode: MisfitMode, f_center: f64) -> Result<Self> {
        Ok(AdjointSourceSpec {
            mode,
            alpha: DEFAULT_ALPHA,
            sched: SweepSchedule::for_source(f_center)?,
            lfa_kind: LfaKind::HilbertSum,
            stride: 1,
            register_dt: 1.0 / (10.0 * f_center),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.register_dt >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "register_dt must be non-negative, got {}",
                self.register_dt
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        self.sched.validate()
    }
}

/// Per-trace bookkeeping of one RGLS residual evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RglsOutcome {
    pub residual: ShotGather,
    /// `None` where the trace fell back to the plain difference.
    pub warps: Vec<Option<WarpModel>>,
}

impl RglsOutcome {
    pub fn n_fallback(&self) -> usize {
        self.warps.iter().filter(|w| w.is_none()).count()
    }
}

fn difference(a: &Trace, b: &Trace) -> Trace {
    a.with_samples(a.samples.iter().zip(&b.samples).map(|(x, y)| x - y).collect())
}

/// `obs − pred`, trace by trace.
pub fn ls_residual(obs: &ShotGather, pred: &ShotGather) -> Result<ShotGather> {
    obs.check_aligned(pred)?;
    Ok(pred.with_traces(
        obs.traces
            .iter()
            .zip(&pred.traces)
            .map(|(d, u)| difference(d, u))
            .collect(),
    ))
}

/// Both traces divided by their common peak so the registration penalty
/// weighs the same against every trace pair; zero pairs are left alone.
fn normalize_pair(d: &Trace, u: &Trace) -> (Trace, Trace) {
    let s = d.max_abs().max(u.max_abs());
    if s > 0.0 {
        (d.map(|x| x / s), u.map(|x| x / s))
    } else {
        (d.clone(), u.clone())
    }
}

/// Every `q`-th sample, zero-extended so the coarse record covers the
/// original one.
fn decimate(u: &Trace, q: usize) -> Trace {
    if q <= 1 {
        return u.clone();
    }
    let n = (u.len() - 1).div_ceil(q) + 1;
    let samples = (0..n).map(|j| u.samples.get(j * q).copied().unwrap_or(0.0)).collect();
    Trace {
        samples,
        dt: u.dt * q as f64,
        t0: u.t0,
    }
}

/// `d̃ − pred` with `d̃ = A^α·u((1−α)t + α·p(t))` and `(p, A)` registered
/// from `pred` onto `obs`. Traces whose registration failed use
/// `obs − pred` instead.
pub fn rgls_residual(obs: &ShotGather, pred: &ShotGather, spec: &AdjointSourceSpec) -> Result<RglsOutcome> {
    spec.validate()?;
    obs.check_aligned(pred)?;
    let q = if spec.register_dt > 0.0 {
        ((spec.register_dt / obs.dt * (1.0 + 1e-9)).floor() as usize).max(1)
    } else {
        1
    };
    let (d_norm, u_norm): (Vec<_>, Vec<_>) = obs
        .traces
        .iter()
        .zip(&pred.traces)
        .map(|(d, u)| {
            let (d, u) = normalize_pair(d, u);
            (decimate(&d, q), decimate(&u, q))
        })
        .unzip();
    let coarse = |g: &ShotGather, traces| ShotGather::new(g.source.clone(), g.receiver_positions.clone(), traces);
    let warps = register_gather_partial(
        &coarse(obs, d_norm)?,
        &coarse(pred, u_norm)?,
        &spec.sched,
        spec.lfa_kind,
        spec.stride,
    )?;
    let traces = obs
        .traces
        .iter()
        .zip(&pred.traces)
        .zip(&warps)
        .map(|((d, u), w)| match w {
            Some(w) => Ok(difference(&apply_warp(u, w, spec.alpha)?, u)),
            None => Ok(difference(d, u)),
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = RglsOutcome {
        residual: pred.with_traces(traces),
        warps,
    };
    let fallback = outcome.n_fallback();
    if fallback > 0 {
        log::warn!(
            "{fallback} of {} traces fell back to the plain residual",
            outcome.warps.len()
        );
    }
    Ok(outcome)
}

/// Residual for either mode; warps are empty for LS.
pub fn residual(obs: &ShotGather, pred: &ShotGather, spec: &AdjointSourceSpec) -> Result<RglsOutcome> {
    match spec.mode {
        MisfitMode::Ls => Ok(RglsOutcome {
            residual: ls_residual(obs, pred)?,
            warps: Vec::new(),
        }),
        MisfitMode::Rgls => rgls_residual(obs, pred, spec),
    }
}
