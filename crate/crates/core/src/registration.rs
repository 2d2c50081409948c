//! Trace registration: find a warp `p(t)` and amplitude `A(t)` such that
//! `D(t) ≈ A(t)·U(p(t))`, where `D` and `U` are low-frequency augmented
//! versions of the observed and predicted traces.
//!
//! The fit is nonconvex, so it is solved band by band: both LFA traces are
//! low-passed to `[0, ω_k]` for increasing `ω_k`, and each band is solved by
//! damped Newton iterations warm-started from the previous band.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{lfa, lowpass, trapezoid_weights, BandlimitedSignal, FrequencyBand, LfaKind, Trace};
use crate::spline::{apply_warp, BasisTable, SplineBasis, WarpModel, DEFAULT_INTERVALS};
use crate::wave::ShotGather;

/// Frequency continuation and inner Newton settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSchedule {
    /// Passbands with strictly increasing `omega_max`.
    pub bands: Vec<FrequencyBand>,
    pub newton_max_iter: usize,
    /// Relative parameter-step norm below which a band is converged.
    pub newton_tol: f64,
    /// Weight on `½∫|p − t|² dt`.
    pub penalty_weight: f64,
    /// Spline subintervals spanning the record.
    #[serde(default = "default_intervals")]
    pub n_intervals: usize,
}

fn default_intervals() -> usize {
    DEFAULT_INTERVALS
}

impl SweepSchedule {
    /// `n_bands` passbands geometrically spaced from `f_center/16` to
    /// `f_center/2`.
    pub fn geometric(f_center: f64, n_bands: usize) -> Result<Self> {
        if !(f_center > 0.0) || n_bands == 0 {
            return Err(Error::InvalidArgument(format!(
                "sweep needs a positive center frequency and at least one band, got {f_center}, {n_bands}"
            )));
        }
        let lo = f_center / 16.0;
        let hi = f_center / 2.0;
        let bands = (0..n_bands)
            .map(|k| {
                let w = if n_bands == 1 {
                    hi
                } else {
                    lo * (hi / lo).powf(k as f64 / (n_bands - 1) as f64)
                };
                FrequencyBand::new(w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepSchedule {
            bands,
            newton_max_iter: 20,
            newton_tol: 1e-6,
            penalty_weight: 1.0,
            n_intervals: DEFAULT_INTERVALS,
        })
    }

    /// The default 8-band schedule for a source of the given central frequency.
    pub fn for_source(f_center: f64) -> Result<Self> {
        SweepSchedule::geometric(f_center, 8)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::InvalidArgument("sweep schedule has no bands".into()));
        }
        if self.bands.windows(2).any(|w| !(w[1].omega_max > w[0].omega_max)) {
            return Err(Error::InvalidArgument(
                "sweep bands must have strictly increasing omega_max".into(),
            ));
        }
        if self.n_intervals == 0 {
            return Err(Error::InvalidArgument("n_intervals must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub warp: WarpModel,
    /// `(band index, band objective)` at the start of each band and after
    /// every accepted Newton half-step.
    pub objective_history: Vec<(usize, f64)>,
    pub converged: bool,
    pub fold_warning: bool,
}

/// The registration objective for one passband, with the LFA traces
/// filtered once and the basis functions tabulated on the sample times.
pub struct BandProblem {
    d: Vec<f64>,
    u: BandlimitedSignal,
    times: Vec<f64>,
    weights: Vec<f64>,
    table: BasisTable,
    penalty: f64,
    power: f64,
}

/// Per-sample quantities shared by the objective and its derivatives.
struct SampleEval {
    p: f64,
    a: f64,
    u: f64,
    du: f64,
    ddu: f64,
    r: f64,
}

impl BandProblem {
    /// `d_lfa` and `u_lfa` are already LFA-transformed.
    pub fn new(
        d_lfa: &Trace,
        u_lfa: &Trace,
        basis: &SplineBasis,
        band: &FrequencyBand,
        penalty_weight: f64,
    ) -> Result<Self> {
        d_lfa.check_comparable(u_lfa)?;
        let d = lowpass(d_lfa, band)?.samples;
        let u = BandlimitedSignal::new(u_lfa, band)?;
        let times: Vec<f64> = d_lfa.times().collect();
        let weights = trapezoid_weights(times.len(), d_lfa.dt);
        let table = basis.table(&times);
        let power = weights
            .iter()
            .zip(&d)
            .zip(u.samples())
            .map(|((w, a), b)| w * (a * a + b * b))
            .sum();
        Ok(BandProblem {
            d,
            u,
            times,
            weights,
            table,
            penalty: penalty_weight,
            power,
        })
    }

    /// `∫(D_k² + U_k²) dt`, the scale used to cap Newton damping.
    pub fn power(&self) -> f64 {
        self.power
    }

    fn sample(&self, i: usize, rho: &[f64], amp: &[f64]) -> SampleEval {
        let p = self.table.combine(i, rho);
        let a = self.table.combine(i, amp);
        let (u, du, ddu) = self.u.eval(p);
        SampleEval {
            p,
            a,
            u,
            du,
            ddu,
            r: self.d[i] - a * u,
        }
    }

    pub fn objective(&self, w: &WarpModel) -> f64 {
        self.objective_at(&w.rho, &w.amp)
    }

    fn objective_at(&self, rho: &[f64], amp: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.times.len() {
            let s = self.sample(i, rho, amp);
            let shift = s.p - self.times[i];
            total += self.weights[i] * (s.r * s.r + self.penalty * shift * shift);
        }
        0.5 * total
    }

    /// Data term `½∫|D_k − A·U_k(p)|² dt` alone.
    pub fn data_term(&self, w: &WarpModel) -> f64 {
        0.5 * (0..self.times.len())
            .map(|i| {
                let s = self.sample(i, &w.rho, &w.amp);
                self.weights[i] * s.r * s.r
            })
            .sum::<f64>()
    }

    /// `(∂W/∂ρ, ∂W/∂α)`.
    pub fn gradient(&self, w: &WarpModel) -> (Vec<f64>, Vec<f64>) {
        let nn = w.rho.len();
        let mut g_rho = vec![0.0; nn];
        let mut g_amp = vec![0.0; nn];
        for i in 0..self.times.len() {
            let s = self.sample(i, &w.rho, &w.amp);
            let wi = self.weights[i];
            let c_rho = wi * (-s.r * s.a * s.du + self.penalty * (s.p - self.times[i]));
            let c_amp = -wi * s.r * s.u;
            for (k, phi) in self.table.row(i).iter().enumerate() {
                g_rho[k] += c_rho * phi;
                g_amp[k] += c_amp * phi;
            }
        }
        (g_rho, g_amp)
    }

    /// `(H_ρ, H_α)`; both symmetric by construction.
    pub fn hessian(&self, w: &WarpModel) -> (DMatrix<f64>, DMatrix<f64>) {
        let (_, h_rho) = self.rho_system(&w.rho, &w.amp);
        let (_, h_amp) = self.amp_system(&w.rho, &w.amp);
        (h_rho, h_amp)
    }

    fn rho_system(&self, rho: &[f64], amp: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let nn = rho.len();
        let mut g = DVector::zeros(nn);
        let mut h = DMatrix::zeros(nn, nn);
        for i in 0..self.times.len() {
            let s = self.sample(i, rho, amp);
            let wi = self.weights[i];
            let au1 = s.a * s.du;
            let cg = wi * (-s.r * au1 + self.penalty * (s.p - self.times[i]));
            let ch = wi * (au1 * au1 - s.r * s.a * s.ddu + self.penalty);
            accumulate(self.table.row(i), cg, ch, &mut g, &mut h);
        }
        symmetrize(&mut h);
        (g, h)
    }

    fn amp_system(&self, rho: &[f64], amp: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let nn = rho.len();
        let mut g = DVector::zeros(nn);
        let mut h = DMatrix::zeros(nn, nn);
        for i in 0..self.times.len() {
            let s = self.sample(i, rho, amp);
            let wi = self.weights[i];
            accumulate(self.table.row(i), -wi * s.r * s.u, wi * s.u * s.u, &mut g, &mut h);
        }
        symmetrize(&mut h);
        (g, h)
    }
}

fn accumulate(phi: &[f64], cg: f64, ch: f64, g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
    let nn = phi.len();
    for a in 0..nn {
        g[a] += cg * phi[a];
        let ca = ch * phi[a];
        for b in a..nn {
            h[(a, b)] += ca * phi[b];
        }
    }
}

fn symmetrize(h: &mut DMatrix<f64>) {
    for a in 0..h.nrows() {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
}

fn band_problem(
    d: &Trace,
    u: &Trace,
    w: &WarpModel,
    band: &FrequencyBand,
    lfa_kind: LfaKind,
    penalty_weight: f64,
) -> Result<BandProblem> {
    d.check_comparable(u)?;
    BandProblem::new(&lfa(d, lfa_kind), &lfa(u, lfa_kind), &w.basis, band, penalty_weight)
}

/// `½∫|D_k − A·U_k(p)|² dt + (λ/2)∫|p − t|² dt`.
pub fn objective(
    d: &Trace,
    u: &Trace,
    w: &WarpModel,
    band: &FrequencyBand,
    lfa_kind: LfaKind,
    penalty_weight: f64,
) -> Result<f64> {
    Ok(band_problem(d, u, w, band, lfa_kind, penalty_weight)?.objective(w))
}

pub fn gradient(
    d: &Trace,
    u: &Trace,
    w: &WarpModel,
    band: &FrequencyBand,
    lfa_kind: LfaKind,
    penalty_weight: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(band_problem(d, u, w, band, lfa_kind, penalty_weight)?.gradient(w))
}

pub fn hessian(
    d: &Trace,
    u: &Trace,
    w: &WarpModel,
    band: &FrequencyBand,
    lfa_kind: LfaKind,
    penalty_weight: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok(band_problem(d, u, w, band, lfa_kind, penalty_weight)?.hessian(w))
}

/// Outcome of a Levenberg-damped step.
enum Step {
    Accepted { delta: Vec<f64>, value: f64 },
    /// `H + μI` was positive definite for some `μ` but no trial decreased
    /// the objective before the cap: the iterate is stationary to
    /// working precision.
    Stalled,
}

/// Levenberg damping: try `μ = 0`, then `μ₀·10^j`, until `H + μI` is
/// positive definite and the step does not increase the objective.
fn damped_step(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    current: f64,
    power: f64,
    eval: impl Fn(&[f64]) -> f64,
) -> Result<Step> {
    let n = g.len();
    let diag_max = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    let scale = diag_max.max(power).max(f64::MIN_POSITIVE);
    let cap = 1e8 * scale;
    let mut mu = 0.0;
    let mut any_pd = false;
    loop {
        let mut damped = h.clone();
        for i in 0..n {
            damped[(i, i)] += mu;
        }
        if let Some(ch) = damped.cholesky() {
            any_pd = true;
            let delta: Vec<f64> = (-ch.solve(g)).iter().copied().collect();
            let value = eval(&delta);
            if value.is_finite() && value <= current {
                return Ok(Step::Accepted { delta, value });
            }
        }
        mu = if mu == 0.0 { 1e-6 * scale } else { mu * 10.0 };
        if mu > cap {
            break;
        }
    }
    if any_pd {
        Ok(Step::Stalled)
    } else {
        Err(Error::SingularSystem { mu })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton iterations on one band: a ρ-step then an α-step per iteration.
/// Returns the final warp and whether the step tolerance was met.
pub fn newton_band(
    problem: &BandProblem,
    w0: &WarpModel,
    sched: &SweepSchedule,
    band_index: usize,
    history: &mut Vec<(usize, f64)>,
) -> Result<(WarpModel, bool)> {
    let mut w = w0.clone();
    let mut value = problem.objective(&w);
    history.push((band_index, value));
    for _ in 0..sched.newton_max_iter {
        let (g, h) = problem.rho_system(&w.rho, &w.amp);
        let step_rho = match damped_step(&g, &h, value, problem.power(), |d| {
            let rho: Vec<f64> = w.rho.iter().zip(d).map(|(a, b)| a + b).collect();
            problem.objective_at(&rho, &w.amp)
        })? {
            Step::Accepted { delta, value: v } => {
                w.rho.iter_mut().zip(&delta).for_each(|(a, b)| *a += b);
                value = v;
                history.push((band_index, value));
                norm(&delta)
            }
            Step::Stalled => 0.0,
        };

        let (g, h) = problem.amp_system(&w.rho, &w.amp);
        let step_amp = match damped_step(&g, &h, value, problem.power(), |d| {
            let amp: Vec<f64> = w.amp.iter().zip(d).map(|(a, b)| a + b).collect();
            problem.objective_at(&w.rho, &amp)
        })? {
            Step::Accepted { delta, value: v } => {
                w.amp.iter_mut().zip(&delta).for_each(|(a, b)| *a += b);
                value = v;
                history.push((band_index, value));
                norm(&delta)
            }
            Step::Stalled => 0.0,
        };

        let rel_rho = step_rho / norm(&w.rho).max(f64::MIN_POSITIVE);
        let rel_amp = step_amp / norm(&w.amp).max(f64::MIN_POSITIVE);
        if rel_rho < sched.newton_tol && rel_amp < sched.newton_tol {
            return Ok((w, true));
        }
    }
    Ok((w, false))
}

/// Damped Newton solve of one band starting from `w0`.
pub fn newton_solve(
    d: &Trace,
    u: &Trace,
    w0: &WarpModel,
    band: &FrequencyBand,
    lfa_kind: LfaKind,
    sched: &SweepSchedule,
) -> Result<WarpModel> {
    let problem = band_problem(d, u, w0, band, lfa_kind, sched.penalty_weight)?;
    let mut history = Vec::new();
    Ok(newton_band(&problem, w0, sched, 0, &mut history)?.0)
}

/// Full frequency sweep from the identity warp.
pub fn register(d: &Trace, u: &Trace, sched: &SweepSchedule, lfa_kind: LfaKind) -> Result<RegistrationResult> {
    sched.validate()?;
    d.check_comparable(u)?;
    let basis = SplineBasis::for_trace(d, sched.n_intervals)?;
    let d_lfa = lfa(d, lfa_kind);
    let u_lfa = lfa(u, lfa_kind);
    let mut w = WarpModel::identity(basis);
    let mut history = Vec::new();
    let mut converged = true;
    for (k, band) in sched.bands.iter().enumerate() {
        let problem = BandProblem::new(&d_lfa, &u_lfa, &w.basis, band, sched.penalty_weight)?;
        let (next, ok) = newton_band(&problem, &w, sched, k, &mut history)?;
        w = next;
        converged &= ok;
    }
    let fold_warning = w.folds();
    if fold_warning {
        log::warn!("registered warp folds (p' <= 0 somewhere)");
    }
    Ok(RegistrationResult {
        warp: w,
        objective_history: history,
        converged,
        fold_warning,
    })
}

/// `½∫|d − A·u(p)|² dt` on the raw traces.
pub fn warped_misfit(d: &Trace, u: &Trace, w: &WarpModel) -> Result<f64> {
    d.check_comparable(u)?;
    let moved = apply_warp(u, w, 1.0)?;
    let diff = d.with_samples(d.samples.iter().zip(&moved.samples).map(|(a, b)| a - b).collect());
    Ok(0.5 * diff.energy())
}

/// Registered trace indices for a gather of `n` traces.
pub fn anchor_indices(n: usize, stride: usize) -> Vec<usize> {
    (0..n).step_by(stride.max(1)).collect()
}

/// Fills every receiver index in `0..n` from the registered anchors (sorted
/// by index): linear interpolation of the nodal vectors between anchors,
/// nearest anchor beyond the ends.
fn interpolate_anchors(n: usize, anchors: &[(usize, WarpModel)]) -> Result<Vec<WarpModel>> {
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for r in 0..n {
        while seg + 1 < anchors.len() && anchors[seg + 1].0 <= r {
            seg += 1;
        }
        let (ra, wa) = &anchors[seg];
        if r <= *ra || seg + 1 == anchors.len() {
            out.push(wa.clone());
        } else {
            let (rb, wb) = &anchors[seg + 1];
            out.push(wa.lerp(wb, (r - ra) as f64 / (rb - ra) as f64)?);
        }
    }
    Ok(out)
}

/// Registers every `stride`-th trace and interpolates the nodal vectors
/// linearly in receiver index for the others. A failed anchor is logged,
/// reported as `None` and skipped by the interpolation; every entry is
/// `None` when no anchor succeeded.
pub fn register_gather_partial(
    obs: &ShotGather,
    pred: &ShotGather,
    sched: &SweepSchedule,
    lfa_kind: LfaKind,
    stride: usize,
) -> Result<Vec<Option<WarpModel>>> {
    obs.check_aligned(pred)?;
    let n = obs.traces.len();
    let solved: Vec<(usize, Option<WarpModel>)> = anchor_indices(n, stride)
        .par_iter()
        .map(|&r| match register(&obs.traces[r], &pred.traces[r], sched, lfa_kind) {
            Ok(res) => (r, Some(res.warp)),
            Err(e) => {
                log::warn!("registration of trace {r} failed: {e}");
                (r, None)
            }
        })
        .collect();
    let good: Vec<(usize, WarpModel)> = solved
        .iter()
        .filter_map(|(r, w)| w.clone().map(|w| (*r, w)))
        .collect();
    if good.is_empty() {
        return Ok(vec![None; n]);
    }
    let mut out: Vec<Option<WarpModel>> = interpolate_anchors(n, &good)?.into_iter().map(Some).collect();
    for (r, w) in &solved {
        if w.is_none() {
            out[*r] = None;
        }
    }
    Ok(out)
}

/// [`register_gather_partial`] that fails when any anchor fails.
pub fn register_gather(
    obs: &ShotGather,
    pred: &ShotGather,
    sched: &SweepSchedule,
    lfa_kind: LfaKind,
    stride: usize,
) -> Result<Vec<WarpModel>> {
    obs.check_aligned(pred)?;
    let solved = anchor_indices(obs.traces.len(), stride)
        .par_iter()
        .map(|&r| register(&obs.traces[r], &pred.traces[r], sched, lfa_kind).map(|res| (r, res.warp)))
        .collect::<Result<Vec<_>>>()?;
    interpolate_anchors(obs.traces.len(), &solved)
}
