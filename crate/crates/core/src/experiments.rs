//! Synthetic scenarios: the lens models and acquisition layouts of the
//! inversion cases, and trace pairs for the registration examples.
//!
//! Every case is defined at full scale on a 2500 m square. A scale `s`
//! shrinks the domain (and every position and length in the model
//! formulas) by `s` while keeping the grid spacing and source frequency,
//! so the number of wavelengths across the domain shrinks with it.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ricker, ricker_value, Trace};
use crate::wave::{
    forward_survey, stability_dt, AcquisitionGeometry, PmlConfig, ShotGather, ShotGeometry, SolverParams,
    VelocityModel,
};

/// Full-scale domain side, m.
pub const FULL_EXTENT: f64 = 2500.0;
pub const GRID_SPACING: f64 = 5.0;
/// Ricker central frequency of the inversion sources, Hz.
pub const INVERSION_F_CENTER: f64 = 50.0;
/// Sources per side at full scale, and receivers per side.
const SHOTS_PER_SIDE: usize = 49;
const CROSSHOLE_RECEIVERS: usize = 499;
const RECEIVERS_PER_SIDE: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseId {
    H1,
    L1,
    H2,
    L2,
    R3,
    #[serde(rename = "reg1")]
    Reg1,
    #[serde(rename = "reg2")]
    Reg2,
    #[serde(rename = "reg3")]
    Reg3,
}

impl CaseId {
    pub const ALL: [CaseId; 8] = [
        CaseId::H1,
        CaseId::L1,
        CaseId::H2,
        CaseId::L2,
        CaseId::R3,
        CaseId::Reg1,
        CaseId::Reg2,
        CaseId::Reg3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::H1 => "H1",
            CaseId::L1 => "L1",
            CaseId::H2 => "H2",
            CaseId::L2 => "L2",
            CaseId::R3 => "R3",
            CaseId::Reg1 => "reg1",
            CaseId::Reg2 => "reg2",
            CaseId::Reg3 => "reg3",
        }
    }

    pub fn is_registration(self) -> bool {
        matches!(self, CaseId::Reg1 | CaseId::Reg2 | CaseId::Reg3)
    }

    fn crosshole(self) -> bool {
        matches!(self, CaseId::H1 | CaseId::L1)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownCase(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case_id: CaseId,
    pub scale: f64,
    pub rng_seed: u64,
    /// Trace noise std for the noisy registration pair.
    pub noise_sigma: f64,
    /// Source central frequency of the inversion cases, Hz.
    pub f_center: f64,
    /// Gaussian kernel std of the random model perturbation, cells.
    pub noise_kernel_cells: f64,
    /// Std of the random model perturbation, m/s.
    pub noise_std: f64,
}

impl ScenarioSpec {
    pub fn new(case_id: CaseId, scale: f64, rng_seed: u64) -> Self {
        ScenarioSpec {
            case_id,
            scale,
            rng_seed,
            noise_sigma: if case_id == CaseId::Reg2 { 0.075 } else { 0.0 },
            f_center: INVERSION_F_CENTER,
            noise_kernel_cells: 10.0,
            noise_std: 150.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::InvalidArgument(format!("scale must be in (0, 1], got {}", self.scale)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise levels must be nonnegative".into()));
        }
        if !(self.f_center > 0.0) {
            return Err(Error::InvalidArgument(format!("f_center must be positive, got {}", self.f_center)));
        }
        if !(self.noise_kernel_cells > 0.0) {
            return Err(Error::InvalidArgument("noise kernel width must be positive".into()));
        }
        Ok(())
    }

    fn check_inversion_case(&self) -> Result<()> {
        self.validate()?;
        if self.case_id.is_registration() {
            return Err(Error::InvalidArgument(format!(
                "{} is a registration case and has no velocity model",
                self.case_id
            )));
        }
        Ok(())
    }

    /// Grid nodes per side: `round(500·s) + 1`.
    pub fn grid_size(&self) -> usize {
        (FULL_EXTENT / GRID_SPACING * self.scale).round() as usize + 1
    }
}

fn lens(x: f64, z: f64, scale: f64) -> f64 {
    let c = 1250.0 * scale;
    let r2 = (x - c).powi(2) + (z - c).powi(2);
    (-r2 / (1e6 * scale * scale)).exp()
}

/// Background-plus-lens velocity of a case at a point (m), before any
/// random perturbation.
pub fn lens_velocity(case: CaseId, scale: f64, x: f64, z: f64) -> Result<f64> {
    let g = lens(x, z, scale);
    match case {
        CaseId::H1 | CaseId::H2 => Ok(5200.0 + 900.0 * g),
        CaseId::L1 | CaseId::L2 => Ok(5500.0 - 900.0 * g),
        CaseId::R3 => Ok(5000.0 + 900.0 * g),
        c => Err(Error::InvalidArgument(format!("{c} has no velocity model"))),
    }
}

/// Constant starting velocity of a case.
pub fn initial_velocity(case: CaseId) -> Result<f64> {
    match case {
        CaseId::H1 | CaseId::H2 | CaseId::R3 => Ok(5100.0),
        CaseId::L1 | CaseId::L2 => Ok(6000.0),
        c => Err(Error::InvalidArgument(format!("{c} has no velocity model"))),
    }
}

/// Unit-normal field smoothed by a Gaussian of std `kernel` cells. The
/// kernel is normalized in ℓ2, so each output value has unit variance.
pub fn smooth_random_field(nx: usize, nz: usize, kernel: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..nx * nz).map(|_| StandardNormal.sample(rng)).collect();
    let half = (4.0 * kernel).ceil() as isize;
    let taps: Vec<f64> = (-half..=half)
        .map(|k| (-(k as f64).powi(2) / (2.0 * kernel * kernel)).exp())
        .collect();
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    // Separable pass over z then x, zero outside the grid.
    let mut tmp = vec![0.0; nx * nz];
    for ix in 0..nx {
        for iz in 0..nz {
            let mut acc = 0.0;
            for (t, k) in taps.iter().zip(-half..=half) {
                let j = iz as isize + k;
                if j >= 0 && (j as usize) < nz {
                    acc += t * raw[ix * nz + j as usize];
                }
            }
            tmp[ix * nz + iz] = acc;
        }
    }
    let mut out = vec![0.0; nx * nz];
    for ix in 0..nx {
        for iz in 0..nz {
            let mut acc = 0.0;
            for (t, k) in taps.iter().zip(-half..=half) {
                let i = ix as isize + k;
                if i >= 0 && (i as usize) < nx {
                    acc += t * tmp[i as usize * nz + iz];
                }
            }
            out[ix * nz + iz] = acc;
        }
    }
    out
}

/// True velocity model of an inversion case.
pub fn build_model(spec: &ScenarioSpec) -> Result<VelocityModel> {
    spec.check_inversion_case()?;
    let n = spec.grid_size();
    let mut model = VelocityModel::from_fn(n, n, GRID_SPACING, (0.0, 0.0), |x, z| {
        lens_velocity(spec.case_id, spec.scale, x, z).unwrap_or(f64::NAN)
    })?;
    if spec.case_id == CaseId::R3 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let field = smooth_random_field(n, n, spec.noise_kernel_cells, &mut rng);
        let v: Vec<f64> = model.v.iter().zip(&field).map(|(v, f)| v + spec.noise_std * f).collect();
        model = model.with_values(v)?;
    }
    Ok(model)
}

/// Constant starting model on the case's grid.
pub fn initial_model(spec: &ScenarioSpec) -> Result<VelocityModel> {
    spec.check_inversion_case()?;
    let n = spec.grid_size();
    VelocityModel::homogeneous(n, n, GRID_SPACING, initial_velocity(spec.case_id)?)
}

fn scaled_count(full: usize, scale: f64) -> usize {
    ((full as f64 * scale) - 1e-9).ceil().max(1.0) as usize
}

/// `n` points evenly spaced over `[a, b]`.
fn spread(n: usize, a: f64, b: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Acquisition layout. Crosshole: sources at `x = 10`, receivers at
/// `x = 2490`. Nearly complete: sources on every side, each shot recorded
/// on the three other sides, receivers ordered as one path around them.
/// Full-scale positions are multiplied by `scale`; counts become
/// `⌈49·s⌉` sources per side and `⌈250·s⌉` receivers per side
/// (`⌈499·s⌉` for crosshole).
pub fn build_geometry(case: CaseId, scale: f64) -> Result<AcquisitionGeometry> {
    if case.is_registration() {
        return Err(Error::InvalidArgument(format!("{case} has no acquisition geometry")));
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidArgument(format!("scale must be in (0, 1], got {scale}")));
    }
    let s = scale;
    let n_src = scaled_count(SHOTS_PER_SIDE, s);
    let src_line = spread(n_src, 25.0 * s, 2475.0 * s);
    let near = 10.0 * s;
    let far = (FULL_EXTENT - 10.0) * s;
    if case.crosshole() {
        let recs: Vec<(f64, f64)> = spread(scaled_count(CROSSHOLE_RECEIVERS, s), 5.0 * s, 2495.0 * s)
            .into_iter()
            .map(|z| (far, z))
            .collect();
        let shots = src_line
            .iter()
            .map(|&z| ShotGeometry {
                source: (near, z),
                receivers: recs.clone(),
            })
            .collect();
        return Ok(AcquisitionGeometry { shots });
    }
    let rec_line = spread(scaled_count(RECEIVERS_PER_SIDE, s), 5.0 * s, 2495.0 * s);
    let rev: Vec<f64> = rec_line.iter().rev().copied().collect();
    // Sides as (x, z) maps from a coordinate along the side; the receiver
    // path for a source on side k walks k+1, k+2, k+3 so that consecutive
    // receivers stay adjacent across corners.
    let left = |c: f64| (near, c);
    let bottom = |c: f64| (c, far);
    let right = |c: f64| (far, c);
    let top = |c: f64| (c, near);
    let side_points = |side: usize, reversed: bool| -> Vec<(f64, f64)> {
        let line = if reversed { &rev } else { &rec_line };
        line.iter()
            .map(|&c| match side {
                0 => left(c),
                1 => bottom(c),
                2 => right(c),
                _ => top(c),
            })
            .collect()
    };
    // Walking counterclockwise: left goes down, bottom goes right, right
    // goes up, top goes left.
    let walk = [false, false, true, true];
    let mut shots = Vec::with_capacity(4 * n_src);
    for side in 0..4 {
        let mut receivers = Vec::with_capacity(3 * rec_line.len());
        for k in 1..4 {
            let other = (side + k) % 4;
            receivers.extend(side_points(other, walk[other]));
        }
        for &c in &src_line {
            let source = match side {
                0 => left(c),
                1 => bottom(c),
                2 => right(c),
                _ => top(c),
            };
            shots.push(ShotGeometry {
                source,
                receivers: receivers.clone(),
            });
        }
    }
    Ok(AcquisitionGeometry { shots })
}

/// Default velocity clip `[0.5·min, 1.5·max]` over the true and starting
/// models.
pub fn default_v_bounds(true_model: &VelocityModel, initial: &VelocityModel) -> (f64, f64) {
    let lo = true_model.v_min().min(initial.v_min());
    let hi = true_model.v_max().max(initial.v_max());
    (0.5 * lo, 1.5 * hi)
}

/// Ricker delay: one and a half periods, so the wavelet starts near zero.
pub fn source_delay(f_center: f64) -> f64 {
    1.5 / f_center
}

/// Time step stable for any model clipped to `v_bounds`, and a record long
/// enough for the slowest arrival across the domain diagonal plus two
/// wavelet durations.
pub fn solver_params(spec: &ScenarioSpec, v_bounds: (f64, f64), pml: Option<PmlConfig>) -> Result<SolverParams> {
    spec.check_inversion_case()?;
    let n = spec.grid_size();
    let probe = VelocityModel::homogeneous(n, n, GRID_SPACING, v_bounds.1)?;
    let dt = stability_dt(&probe);
    let truth = build_model(spec)?;
    let init = initial_model(spec)?;
    let v_slow = truth.v_min().min(init.v_min());
    let diagonal = std::f64::consts::SQRT_2 * (n - 1) as f64 * GRID_SPACING;
    let wavelet_len = 2.0 * source_delay(spec.f_center);
    let record = diagonal / v_slow + 2.0 * wavelet_len;
    Ok(SolverParams {
        nt: (record / dt).ceil() as usize + 1,
        dt,
        pml: pml.or_else(|| Some(PmlConfig::for_velocity(v_bounds.1, GRID_SPACING))),
    })
}

pub fn source_wavelet(spec: &ScenarioSpec, params: &SolverParams) -> Result<Trace> {
    ricker(
        spec.f_center,
        params.dt,
        (params.nt - 1) as f64 * params.dt,
        source_delay(spec.f_center),
    )
}

/// Observed data: every shot forward-modeled on `model`, in geometry order.
pub fn make_observed_survey(
    model: &VelocityModel,
    geometry: &AcquisitionGeometry,
    wavelet: &Trace,
    params: &SolverParams,
) -> Result<Vec<ShotGather>> {
    forward_survey(model, geometry, wavelet, params)
}

/// Everything an inversion run needs, fully resolved from a spec.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub true_model: VelocityModel,
    pub initial_model: VelocityModel,
    pub geometry: AcquisitionGeometry,
    pub params: SolverParams,
    pub wavelet: Trace,
    pub v_bounds: (f64, f64),
}

impl Scenario {
    pub fn build(spec: &ScenarioSpec) -> Result<Self> {
        let true_model = build_model(spec)?;
        let initial_model = initial_model(spec)?;
        let geometry = build_geometry(spec.case_id, spec.scale)?;
        let v_bounds = default_v_bounds(&true_model, &initial_model);
        let params = solver_params(spec, v_bounds, None)?;
        let wavelet = source_wavelet(spec, &params)?;
        Ok(Scenario {
            spec: spec.clone(),
            true_model,
            initial_model,
            geometry,
            params,
            wavelet,
            v_bounds,
        })
    }

    pub fn observed(&self) -> Result<Vec<ShotGather>> {
        make_observed_survey(&self.true_model, &self.geometry, &self.wavelet, &self.params)
    }

    pub fn manifest(&self) -> ScenarioManifest {
        let n_receivers = self.geometry.shots.first().map_or(0, |s| s.receivers.len());
        ScenarioManifest {
            spec: self.spec.clone(),
            nx: self.true_model.nx,
            nz: self.true_model.nz,
            dx: self.true_model.dx,
            n_shots: self.geometry.n_shots(),
            n_receivers,
            initial_velocity: initial_velocity(self.spec.case_id).unwrap_or(f64::NAN),
            v_bounds: self.v_bounds,
            params: self.params.clone(),
            source_delay: source_delay(self.spec.f_center),
        }
    }
}

/// Resolved parameters of a scenario, written next to its files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub spec: ScenarioSpec,
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub n_shots: usize,
    pub n_receivers: usize,
    pub initial_velocity: f64,
    pub v_bounds: (f64, f64),
    pub params: SolverParams,
    pub source_delay: f64,
}

/// Trace pair for a registration example; `truth` holds `p*(t)` sampled on
/// the trace times when the warp is known.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationPair {
    pub d: Trace,
    pub u: Trace,
    pub truth: Option<Trace>,
    pub f_center: f64,
}

pub const REGISTRATION_F_CENTER: f64 = 15.0;
pub const REGISTRATION_DT: f64 = 0.002;
pub const REGISTRATION_DURATION: f64 = 2.0;

/// Layer stack standing in for a complex earth model: interval velocities
/// (m/s) and thicknesses (m), top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    pub velocity: Vec<f64>,
    pub thickness: Vec<f64>,
}

impl LayeredModel {
    /// Twelve interfaces with irregular spacing and contrasts under a
    /// 1500 m/s, 0.5 s⁻¹ gradient trend.
    pub fn twelve_layer() -> Self {
        // Two-way time through each layer (s) and its deviation from the trend (m/s).
        const LAYERS: [(f64, f64); 13] = [
            (0.16, 0.0),
            (0.09, 220.0),
            (0.21, -60.0),
            (0.07, 310.0),
            (0.18, 40.0),
            (0.12, -180.0),
            (0.24, 150.0),
            (0.08, -40.0),
            (0.15, 260.0),
            (0.11, 0.0),
            (0.19, -150.0),
            (0.10, 120.0),
            (0.20, 330.0),
        ];
        const STRETCH: f64 = 1.1;
        let mut velocity = Vec::with_capacity(LAYERS.len());
        let mut thickness = Vec::with_capacity(LAYERS.len());
        let mut z = 0.0;
        for (dt2, dev) in LAYERS {
            let v = 1500.0 + 0.5 * z + dev;
            let h = v * STRETCH * dt2 / 2.0;
            velocity.push(v);
            thickness.push(h);
            z += h;
        }
        LayeredModel { velocity, thickness }
    }

    /// Same stack with `v(z) − c·z` evaluated at each layer's mid-depth.
    pub fn perturbed(&self, c: f64) -> Self {
        let mut z = 0.0;
        let velocity = self
            .velocity
            .iter()
            .zip(&self.thickness)
            .map(|(v, h)| {
                let mid = z + 0.5 * h;
                z += h;
                v - c * mid
            })
            .collect();
        LayeredModel {
            velocity,
            thickness: self.thickness.clone(),
        }
    }

    /// Normal-incidence two-way times and reflection coefficients of the
    /// interfaces (unit density).
    pub fn reflections(&self) -> Vec<(f64, f64)> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.velocity.len() - 1);
        for k in 0..self.velocity.len() - 1 {
            t += 2.0 * self.thickness[k] / self.velocity[k];
            let (a, b) = (self.velocity[k], self.velocity[k + 1]);
            out.push((t, (b - a) / (b + a)));
        }
        out
    }

    /// Primary-reflection seismogram `Σ r_k·w(t − t_k)` evaluated at the
    /// (possibly warped) times `times`.
    pub fn seismogram(&self, f_center: f64, times: impl Iterator<Item = f64>) -> Vec<f64> {
        let refl = self.reflections();
        times
            .map(|t| refl.iter().map(|(tk, r)| r * ricker_value(f_center, t - tk)).sum())
            .collect()
    }
}

/// The known warp `p*(t) = t + 0.15·exp(−8(t/T_c − 1)²)`, `T_c` half the
/// record length.
pub fn reference_warp(t: f64, record: f64) -> f64 {
    let tc = 0.5 * record;
    t + 0.15 * (-8.0 * (t / tc - 1.0).powi(2)).exp()
}

/// Registration example traces. `reg1`: `d(t) = u(p*(t))` evaluated in
/// closed form; `reg2`: the same with independent Gaussian noise of std
/// `noise_sigma` on both traces; `reg3`: `d` from the layer stack and `u`
/// from the stack with `v − 0.15·z`. Traces are scaled to unit peak before
/// noise is added.
pub fn build_registration_pair(case: CaseId, rng_seed: u64, noise_sigma: f64) -> Result<RegistrationPair> {
    if !case.is_registration() {
        return Err(Error::InvalidArgument(format!("{case} is not a registration case")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_sigma must be nonnegative, got {noise_sigma}")));
    }
    let n = (REGISTRATION_DURATION / REGISTRATION_DT).round() as usize + 1;
    let record = (n - 1) as f64 * REGISTRATION_DT;
    let times = || (0..n).map(|i| i as f64 * REGISTRATION_DT);
    let layers = LayeredModel::twelve_layer();
    let f = REGISTRATION_F_CENTER;
    let u = layers.seismogram(f, times());
    let (d, truth) = match case {
        CaseId::Reg3 => (layers.perturbed(0.15).seismogram(f, times()), None),
        _ => {
            let p: Vec<f64> = times().map(|t| reference_warp(t, record)).collect();
            (layers.seismogram(f, p.iter().copied()), Some(p))
        }
    };
    let peak = u.iter().chain(&d).fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x / peak).collect::<Vec<_>>();
    let mut d = Trace::new(scale(d), REGISTRATION_DT, 0.0)?;
    let mut u = Trace::new(scale(u), REGISTRATION_DT, 0.0)?;
    if case == CaseId::Reg2 && noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut noisy = |t: &Trace| {
            t.map(|x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x + noise_sigma * e
            })
        };
        d = noisy(&d);
        u = noisy(&u);
    }
    Ok(RegistrationPair {
        d,
        u,
        truth: truth.map(|p| Trace::new(p, REGISTRATION_DT, 0.0)).transpose()?,
        f_center: f,
    })
}
