//! Steepest-descent velocity inversion with LS or RGLS adjoint sources.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint_source::{residual, AdjointSourceSpec, MisfitMode};
use crate::error::{Error, Result};
use crate::spline::WarpModel;
use crate::wave::{AcquisitionGeometry, Propagator, ShotGather, SolverParams, SourceTerm, VelocityModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Scale every update so the largest velocity change equals the cap.
    FixedCap,
    /// Fixed cap, halved until `J` decreases. LS mode only.
    Backtracking,
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fixed_cap" => Ok(StepRule::FixedCap),
            "backtracking" => Ok(StepRule::Backtracking),
            _ => Err(Error::InvalidArgument(format!(
                "unknown step rule `{s}` (expected fixed_cap or backtracking)"
            ))),
        }
    }
}

/// Cells within this many grid spacings of a source or receiver get no update.
pub const MASK_RADIUS_CELLS: f64 = 3.0;
/// Relative gradient norm treated as a stationary point.
pub const STATIONARY_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub max_iter: usize,
    pub adjoint_spec: AdjointSourceSpec,
    pub step_rule: StepRule,
    /// Largest per-iteration velocity change, m/s.
    pub step_cap: f64,
    pub switch_to_ls: bool,
    pub switch_patience: usize,
    pub switch_rel_tol: f64,
    pub v_bounds: (f64, f64),
}

impl InversionConfig {
    pub fn new(adjoint_spec: AdjointSourceSpec, v_bounds: (f64, f64)) -> Self {
        InversionConfig {
            max_iter: 150,
            adjoint_spec,
            step_rule: StepRule::FixedCap,
            step_cap: 50.0,
            switch_to_ls: false,
            switch_patience: 5,
            switch_rel_tol: 1e-3,
            v_bounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.step_cap > 0.0 && self.step_cap.is_finite()) {
            return Err(Error::InvalidArgument(format!("step_cap must be positive, got {}", self.step_cap)));
        }
        let (lo, hi) = self.v_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("v_bounds must satisfy 0 < min < max, got {lo}, {hi}")));
        }
        if self.switch_to_ls && self.switch_patience == 0 {
            return Err(Error::InvalidArgument("switch_patience must be at least 1".into()));
        }
        if !(self.switch_rel_tol >= 0.0) {
            return Err(Error::InvalidArgument("switch_rel_tol must be non-negative".into()));
        }
        if self.step_rule == StepRule::Backtracking && self.adjoint_spec.mode == MisfitMode::Rgls {
            return Err(Error::InvalidArgument(
                "backtracking on J is only meaningful in ls mode".into(),
            ));
        }
        self.adjoint_spec.validate()
    }
}

/// One row per evaluated model: `J` and error of iterate `iter`, and the
/// velocity change that produced the next iterate (0 on the last row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mode: MisfitMode,
    pub misfit: f64,
    pub model_rms: Option<f64>,
    pub step_size: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub records: Vec<IterationRecord>,
}

impl ConvergenceLog {
    pub fn misfits(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.misfit).collect()
    }

    pub fn model_rms(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.model_rms).collect()
    }

    /// Index of the first record in LS mode that follows an RGLS record.
    pub fn switch_index(&self) -> Option<usize> {
        self.records
            .windows(2)
            .position(|w| w[0].mode == MisfitMode::Rgls && w[1].mode == MisfitMode::Ls)
            .map(|i| i + 1)
    }

    /// CSV with header `iter,mode,J,model_rms,step_size`; floats are
    /// written in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,mode,J,model_rms,step_size\n");
        for r in &self.records {
            let rms = r.model_rms.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.iter, r.mode, r.misfit, rms, r.step_size));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for ConvergenceLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

/// `½ Σ_{s,r} ∫ |u − d|² dt` with the trapezoidal rule in time.
pub fn misfit(obs: &[ShotGather], pred: &[ShotGather]) -> Result<f64> {
    if obs.len() != pred.len() {
        return Err(Error::MismatchedGather(format!(
            "surveys have {} and {} shots",
            obs.len(),
            pred.len()
        )));
    }
    let mut j = 0.0;
    for (o, p) in obs.iter().zip(pred) {
        j += gather_misfit(o, p)?;
    }
    Ok(j)
}

fn gather_misfit(obs: &ShotGather, pred: &ShotGather) -> Result<f64> {
    obs.check_aligned(pred)?;
    Ok(obs
        .traces
        .iter()
        .zip(&pred.traces)
        .map(|(d, u)| {
            0.5 * d.with_samples(d.samples.iter().zip(&u.samples).map(|(a, b)| a - b).collect()).energy()
        })
        .sum())
}

/// RMS of the pointwise velocity difference.
pub fn model_rms(a: &VelocityModel, b: &VelocityModel) -> Result<f64> {
    a.check_same_grid(b)?;
    let ss: f64 = a.v.iter().zip(&b.v).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.v.len() as f64).sqrt())
}

/// Largest transient rise of a misfit curve, relative to the lowest value
/// seen before it: `(J[k] − min_{m<k} J[m]) / min_{m<k} J[m]`, counted
/// only when some later iterate falls below `J[k]` again.
pub fn hump_height(j: &[f64]) -> f64 {
    let mut best = 0.0f64;
    let mut low = f64::INFINITY;
    for k in 0..j.len() {
        if k > 0 && low > 0.0 && j[k] > low && j[k + 1..].iter().any(|&x| x < j[k]) {
            best = best.max((j[k] - low) / low);
        }
        low = low.min(j[k]);
    }
    best
}

/// First index whose value is at or below `threshold`.
pub fn first_at_or_below(values: &[f64], threshold: f64) -> Option<usize> {
    values.iter().position(|&v| v <= threshold)
}

/// 1 where the model may be updated, 0 on the outer ring of cells (which
/// collects the absorbing-layer part of the gradient) and near any source
/// or receiver.
pub fn gradient_mask(model: &VelocityModel, geometry: &AcquisitionGeometry) -> Vec<f64> {
    let (nx, nz) = (model.nx, model.nz);
    let mut mask = vec![1.0; nx * nz];
    for ix in 0..nx {
        for iz in 0..nz {
            if ix == 0 || iz == 0 || ix + 1 == nx || iz + 1 == nz {
                mask[model.index(ix, iz)] = 0.0;
            }
        }
    }
    let r = MASK_RADIUS_CELLS;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for shot in &geometry.shots {
        points.push(shot.source);
        points.extend(&shot.receivers);
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    points.dedup();
    for (x, z) in points {
        let cx = (x - model.origin.0) / model.dx;
        let cz = (z - model.origin.1) / model.dx;
        let lo_x = (cx - r).ceil().max(0.0) as usize;
        let hi_x = ((cx + r).floor().max(0.0) as usize).min(nx - 1);
        let lo_z = (cz - r).ceil().max(0.0) as usize;
        let hi_z = ((cz + r).floor().max(0.0) as usize).min(nz - 1);
        for ix in lo_x..=hi_x {
            for iz in lo_z..=hi_z {
                if (ix as f64 - cx).hypot(iz as f64 - cz) <= r {
                    mask[model.index(ix, iz)] = 0.0;
                }
            }
        }
    }
    mask
}

/// Everything one iteration produced, handed to the observer.
#[derive(Debug)]
pub struct IterationState<'a> {
    pub iter: usize,
    pub mode: MisfitMode,
    pub model: &'a VelocityModel,
    pub misfit: f64,
    /// Adjoint-source residual per shot.
    pub residuals: &'a [ShotGather],
    /// Per shot, per receiver; empty in LS mode.
    pub warps: &'a [Vec<Option<WarpModel>>],
}

struct ShotResult {
    misfit: f64,
    gradient: Vec<f64>,
    residual: ShotGather,
    warps: Vec<Option<WarpModel>>,
}

fn check_survey(obs: &[ShotGather], geometry: &AcquisitionGeometry, params: &SolverParams) -> Result<()> {
    if obs.len() != geometry.n_shots() {
        return Err(Error::MismatchedGather(format!(
            "{} observed gathers for {} shots",
            obs.len(),
            geometry.n_shots()
        )));
    }
    for (k, (g, shot)) in obs.iter().zip(&geometry.shots).enumerate() {
        if g.nt != params.nt || (g.dt - params.dt).abs() > 1e-12 * params.dt {
            return Err(Error::MismatchedGather(format!(
                "shot {k}: gather sampled {}×{} but solver runs {}×{}",
                g.nt, g.dt, params.nt, params.dt
            )));
        }
        if g.receiver_positions != shot.receivers || g.source.position != shot.source {
            return Err(Error::MismatchedGather(format!("shot {k}: positions differ from the geometry")));
        }
    }
    Ok(())
}

fn predict(prop: &Propagator, obs: &[ShotGather], nt: usize) -> Result<Vec<ShotGather>> {
    obs.par_iter()
        .map(|g| prop.forward(&g.source, &g.receiver_positions, nt, false).map(|(p, _)| p))
        .collect()
}

fn shot_gradient(prop: &Propagator, obs: &ShotGather, nt: usize, spec: &AdjointSourceSpec) -> Result<ShotResult> {
    let source = SourceTerm {
        position: obs.source.position,
        wavelet: obs.source.wavelet.clone(),
    };
    let run = prop.forward_for_imaging(&source, &obs.receiver_positions, nt)?;
    let misfit = gather_misfit(obs, &run.gather)?;
    let out = residual(obs, &run.gather, spec)?;
    let gradient = prop.gradient(&run, &out.residual)?;
    Ok(ShotResult {
        misfit,
        gradient,
        residual: out.residual,
        warps: out.warps,
    })
}

/// Velocity model after moving slowness squared by `−η·g`, clipped.
fn update(model: &VelocityModel, direction: &[f64], eta: f64, bounds: (f64, f64)) -> Result<VelocityModel> {
    let v = model
        .v
        .iter()
        .zip(direction)
        .map(|(&v, &g)| {
            let m = 1.0 / (v * v) - eta * g;
            let nv = if m > 0.0 { 1.0 / m.sqrt() } else { bounds.1 };
            nv.clamp(bounds.0, bounds.1)
        })
        .collect();
    model.with_values(v)
}

fn max_change(a: &VelocityModel, b: &VelocityModel) -> f64 {
    a.v.iter().zip(&b.v).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Stall test on the misfit history of the current mode: relative decrease
/// over the last `patience` iterations below `rel_tol`.
fn stalled(history: &[f64], patience: usize, rel_tol: f64) -> bool {
    if history.len() <= patience {
        return false;
    }
    let now = history[history.len() - 1];
    let then = history[history.len() - 1 - patience];
    then <= 0.0 || (then - now) / then < rel_tol
}

/// [`invert_with`] without an observer.
pub fn invert(
    obs: &[ShotGather],
    geometry: &AcquisitionGeometry,
    params: &SolverParams,
    initial: &VelocityModel,
    cfg: &InversionConfig,
    true_model: Option<&VelocityModel>,
) -> Result<(VelocityModel, ConvergenceLog)> {
    invert_with(obs, geometry, params, initial, cfg, true_model, |_| Ok(()))
}

/// Runs up to `cfg.max_iter` updates. Shots are processed in parallel and
/// their gradients summed in shot order, so the log does not depend on the
/// worker count.
pub fn invert_with(
    obs: &[ShotGather],
    geometry: &AcquisitionGeometry,
    params: &SolverParams,
    initial: &VelocityModel,
    cfg: &InversionConfig,
    true_model: Option<&VelocityModel>,
    mut observe: impl FnMut(&IterationState) -> Result<()>,
) -> Result<(VelocityModel, ConvergenceLog)> {
    cfg.validate()?;
    check_survey(obs, geometry, params)?;
    if let Some(t) = true_model {
        initial.check_same_grid(t)?;
    }
    let mask = gradient_mask(initial, geometry);
    let rms = |m: &VelocityModel| true_model.map(|t| model_rms(m, t)).transpose();
    let mut spec = cfg.adjoint_spec.clone();
    let mut model = initial.clone();
    let mut log = ConvergenceLog::default();
    let mut mode_history: Vec<f64> = Vec::new();

    for iter in 0..cfg.max_iter {
        let prop = Propagator::new(&model, params.pml.as_ref(), params.dt)?;
        let shots = obs
            .par_iter()
            .map(|g| shot_gradient(&prop, g, params.nt, &spec))
            .collect::<Result<Vec<_>>>()?;
        let j: f64 = shots.iter().map(|s| s.misfit).sum();
        if !j.is_finite() {
            return Err(Error::NonFinite { iter });
        }
        let mut grad = vec![0.0; model.len()];
        for s in &shots {
            for (g, x) in grad.iter_mut().zip(&s.gradient) {
                *g += x;
            }
        }
        for (g, m) in grad.iter_mut().zip(&mask) {
            *g *= m;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { iter });
        }
        if spec.mode == MisfitMode::Rgls {
            let fallback: usize = shots.iter().flat_map(|s| &s.warps).filter(|w| w.is_none()).count();
            let shifts: Vec<f64> = shots
                .iter()
                .flat_map(|s| &s.warps)
                .flatten()
                .map(|w| {
                    w.rho
                        .iter()
                        .zip(&w.basis.node_times)
                        .fold(0.0, |m: f64, (p, t)| m.max((p - t).abs()))
                })
                .collect();
            let worst = shifts.iter().fold(0.0, |m: f64, x| m.max(*x));
            log::debug!("iter {iter}: largest registered shift {worst:.4} s, {fallback} fallback traces");
        }
        {
            let residuals: Vec<ShotGather> = shots.iter().map(|s| s.residual.clone()).collect();
            let warps: Vec<Vec<Option<WarpModel>>> = shots.into_iter().map(|s| s.warps).collect();
            observe(&IterationState {
                iter,
                mode: spec.mode,
                model: &model,
                misfit: j,
                residuals: &residuals,
                warps: &warps,
            })?;
        }

        let m_norm: f64 = model.slowness_sq().iter().map(|x| x * x).sum::<f64>().sqrt();
        let g_norm: f64 = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        let model_rms_now = rms(&model)?;
        if g_norm <= STATIONARY_TOL * m_norm || j == 0.0 {
            log::info!("iter {iter}: stationary (|g| = {g_norm:.3e}), stopping");
            log.records.push(IterationRecord {
                iter,
                mode: spec.mode,
                misfit: j,
                model_rms: model_rms_now,
                step_size: 0.0,
            });
            return Ok((model, log));
        }

        // dv = −½ v³ dm, so this η makes the linearized max |Δv| equal the cap
        let dv_per_eta = model
            .v
            .iter()
            .zip(&grad)
            .fold(0.0, |m: f64, (v, g)| m.max(0.5 * v.powi(3) * g.abs()));
        let mut eta = cfg.step_cap / dv_per_eta;
        let mut next = update(&model, &grad, eta, cfg.v_bounds)?;
        if cfg.step_rule == StepRule::Backtracking {
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial = Propagator::new(&next, params.pml.as_ref(), params.dt)?;
                if misfit(obs, &predict(&trial, obs, params.nt)?)? < j {
                    accepted = true;
                    break;
                }
                eta *= 0.5;
                next = update(&model, &grad, eta, cfg.v_bounds)?;
            }
            if !accepted {
                log::info!("iter {iter}: no decrease after {MAX_HALVINGS} halvings, stopping");
                log.records.push(IterationRecord {
                    iter,
                    mode: spec.mode,
                    misfit: j,
                    model_rms: model_rms_now,
                    step_size: 0.0,
                });
                return Ok((model, log));
            }
        }
        let step = max_change(&model, &next);
        log::info!(
            "iter {iter} [{}]: J = {j:.6e}{}, step {step:.2} m/s",
            spec.mode,
            model_rms_now.map(|r| format!(", rms {r:.2}")).unwrap_or_default()
        );
        log.records.push(IterationRecord {
            iter,
            mode: spec.mode,
            misfit: j,
            model_rms: model_rms_now,
            step_size: step,
        });
        model = next;

        mode_history.push(j);
        if cfg.switch_to_ls
            && spec.mode == MisfitMode::Rgls
            && stalled(&mode_history, cfg.switch_patience, cfg.switch_rel_tol)
        {
            log::info!("iter {iter}: misfit stalled, switching to ls");
            spec.mode = MisfitMode::Ls;
            mode_history.clear();
        }
    }

    let prop = Propagator::new(&model, params.pml.as_ref(), params.dt)?;
    let j = misfit(obs, &predict(&prop, obs, params.nt)?)?;
    if !j.is_finite() {
        return Err(Error::NonFinite { iter: cfg.max_iter });
    }
    log.records.push(IterationRecord {
        iter: cfg.max_iter,
        mode: spec.mode,
        misfit: j,
        model_rms: rms(&model)?,
        step_size: 0.0,
    });
    Ok((model, log))
}
