//! 2D constant-density acoustic propagation `m ∂²u/∂t² = Δu + f`.
//!
//! Fourth-order centered differences in space, second-order leapfrog in
//! time, and a convolutional PML: inside the layer `∂x` becomes
//! `∂x + χ_x ∗ ∂x` with `χ_x(t) = −d_x e^{−d_x t}`, so
//!
//! ```text
//! ∂̃x∂̃x u = ∂xx u + ∂x ψ_x + ζ_x
//! ψ_x = χ_x ∗ ∂x u,   ζ_x = χ_x ∗ (∂xx u + ∂x ψ_x)
//! ```
//!
//! with both convolutions advanced by one-step recursions.
//!
//! The absorbing layer lives outside the model: the padded grid replicates
//! the edge values of `m`, and gradients computed on the padding are folded
//! back onto the edge cells. The adjoint is the exact transpose of the
//! discrete time stepping, so dot-product and gradient checks hold to
//! rounding error.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{trapezoid_weights, Trace};

/// Fourth-order second-derivative stencil, undivided.
const C0: f64 = -5.0 / 2.0;
const C1: f64 = 4.0 / 3.0;
const C2: f64 = -1.0 / 12.0;
/// Zero halo around the padded grid, wide enough for the stencil.
const HALO: usize = 2;

/// Stability constant of the fourth-order stencil, `√(16/3)/2`.
pub fn stencil_constant() -> f64 {
    (16.0f64 / 3.0).sqrt() / 2.0
}

pub const CFL_SAFETY: f64 = 0.9;

/// Gridded velocity on `nx × nz` nodes; node `(ix, iz)` sits at
/// `origin + (ix·dx, iz·dx)` and is stored at `ix·nz + iz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub origin: (f64, f64),
    pub v: Vec<f64>,
}

impl VelocityModel {
    pub fn new(nx: usize, nz: usize, dx: f64, origin: (f64, f64), v: Vec<f64>) -> Result<Self> {
        if nx < 16 || nz < 16 {
            return Err(Error::InvalidArgument(format!(
                "model needs at least 16×16 nodes, got {nx}×{nz}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidArgument(format!("dx must be positive, got {dx}")));
        }
        if v.len() != nx * nz {
            return Err(Error::InvalidArgument(format!(
                "expected {} velocities, got {}",
                nx * nz,
                v.len()
            )));
        }
        if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!("velocity must be positive, found {bad}")));
        }
        Ok(VelocityModel { nx, nz, dx, origin, v })
    }

    pub fn homogeneous(nx: usize, nz: usize, dx: f64, v: f64) -> Result<Self> {
        VelocityModel::new(nx, nz, dx, (0.0, 0.0), vec![v; nx * nz])
    }

    /// Samples `f(x, z)` at every node.
    pub fn from_fn(
        nx: usize,
        nz: usize,
        dx: f64,
        origin: (f64, f64),
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut v = Vec::with_capacity(nx * nz);
        for ix in 0..nx {
            for iz in 0..nz {
                v.push(f(origin.0 + ix as f64 * dx, origin.1 + iz as f64 * dx));
            }
        }
        VelocityModel::new(nx, nz, dx, origin, v)
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn index(&self, ix: usize, iz: usize) -> usize {
        ix * self.nz + iz
    }

    pub fn get(&self, ix: usize, iz: usize) -> f64 {
        self.v[self.index(ix, iz)]
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.origin.0 + ix as f64 * self.dx
    }

    pub fn z(&self, iz: usize) -> f64 {
        self.origin.1 + iz as f64 * self.dx
    }

    /// Far corner of the node grid.
    pub fn extent(&self) -> (f64, f64) {
        (self.x(self.nx - 1), self.z(self.nz - 1))
    }

    pub fn contains(&self, pos: (f64, f64)) -> bool {
        let (xe, ze) = self.extent();
        let tol = 1e-9 * self.dx;
        pos.0 >= self.origin.0 - tol && pos.0 <= xe + tol && pos.1 >= self.origin.1 - tol && pos.1 <= ze + tol
    }

    /// Squared slowness `m = 1/v²`.
    pub fn slowness_sq(&self) -> Vec<f64> {
        self.v.iter().map(|v| 1.0 / (v * v)).collect()
    }

    /// Model on the same grid with `v = 1/√m`.
    pub fn from_slowness_sq(&self, m: &[f64]) -> Result<Self> {
        VelocityModel::new(
            self.nx,
            self.nz,
            self.dx,
            self.origin,
            m.iter().map(|m| 1.0 / m.sqrt()).collect(),
        )
    }

    pub fn with_values(&self, v: Vec<f64>) -> Result<Self> {
        VelocityModel::new(self.nx, self.nz, self.dx, self.origin, v)
    }

    pub fn v_max(&self) -> f64 {
        self.v.iter().fold(0.0, |a, &b| a.max(b))
    }

    pub fn v_min(&self) -> f64 {
        self.v.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn check_same_grid(&self, other: &VelocityModel) -> Result<()> {
        if self.nx != other.nx || self.nz != other.nz || (self.dx - other.dx).abs() > 1e-12 * self.dx {
            return Err(Error::GridMismatch(format!(
                "{}×{} (dx {}) vs {}×{} (dx {})",
                self.nx, self.nz, self.dx, other.nx, other.nz, other.dx
            )));
        }
        Ok(())
    }
}

/// A point source with its time function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    pub position: (f64, f64),
    pub wavelet: Trace,
}

/// Traces recorded for one shot, aligned with `receiver_positions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotGather {
    pub source: SourceTerm,
    pub receiver_positions: Vec<(f64, f64)>,
    pub traces: Vec<Trace>,
    pub dt: f64,
    pub nt: usize,
}

impl ShotGather {
    pub fn new(source: SourceTerm, receiver_positions: Vec<(f64, f64)>, traces: Vec<Trace>) -> Result<Self> {
        if receiver_positions.is_empty() || traces.len() != receiver_positions.len() {
            return Err(Error::MismatchedGather(format!(
                "{} receivers but {} traces",
                receiver_positions.len(),
                traces.len()
            )));
        }
        let (dt, nt) = (traces[0].dt, traces[0].len());
        for t in &traces[1..] {
            traces[0].check_comparable(t).map_err(|e| Error::MismatchedGather(e.to_string()))?;
        }
        Ok(ShotGather {
            source,
            receiver_positions,
            traces,
            dt,
            nt,
        })
    }

    pub fn n_receivers(&self) -> usize {
        self.traces.len()
    }

    /// Same receivers and time axis.
    pub fn check_aligned(&self, other: &ShotGather) -> Result<()> {
        if self.traces.len() != other.traces.len() {
            return Err(Error::MismatchedGather(format!(
                "receiver counts differ: {} vs {}",
                self.traces.len(),
                other.traces.len()
            )));
        }
        if self.nt != other.nt || (self.dt - other.dt).abs() > 1e-12 * self.dt {
            return Err(Error::MismatchedGather(format!(
                "time axes differ: {}×{} vs {}×{}",
                self.nt, self.dt, other.nt, other.dt
            )));
        }
        for (a, b) in self.receiver_positions.iter().zip(&other.receiver_positions) {
            if (a.0 - b.0).abs() > 1e-6 || (a.1 - b.1).abs() > 1e-6 {
                return Err(Error::MismatchedGather(format!(
                    "receiver positions differ: {a:?} vs {b:?}"
                )));
            }
        }
        Ok(())
    }

    /// Gather with the same layout and new traces.
    pub fn with_traces(&self, traces: Vec<Trace>) -> ShotGather {
        debug_assert_eq!(traces.len(), self.traces.len());
        ShotGather {
            source: self.source.clone(),
            receiver_positions: self.receiver_positions.clone(),
            traces,
            dt: self.dt,
            nt: self.nt,
        }
    }

    /// Sum of trace energies `Σ_r ∫ u_r² dt`.
    pub fn energy(&self) -> f64 {
        self.traces.iter().map(Trace::energy).sum()
    }
}

/// Absorbing-layer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlConfig {
    /// Layer thickness in cells, added on every side of the model.
    pub width: usize,
    /// Damping at the outer edge, 1/s.
    pub max_damping: f64,
    pub profile_power: f64,
}

impl PmlConfig {
    pub fn new(width: usize, max_damping: f64, profile_power: f64) -> Result<Self> {
        let cfg = PmlConfig {
            width,
            max_damping,
            profile_power,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Width-20 quadratic layer with damping set from the classical
    /// `(p+1)·v·ln(1/R) / 2L` estimate for a target reflection `R = 1e-4`.
    pub fn for_velocity(v_max: f64, dx: f64) -> Self {
        let width = 20;
        let power = 2.0;
        let thickness = width as f64 * dx;
        PmlConfig {
            width,
            max_damping: (power + 1.0) * v_max * (1e4f64).ln() / (2.0 * thickness),
            profile_power: power,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 {
            return Err(Error::InvalidArgument(format!("PML width must be ≥ 8 cells, got {}", self.width)));
        }
        if !(self.max_damping > 0.0 && self.max_damping.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "PML damping must be positive, got {}",
                self.max_damping
            )));
        }
        if !(self.profile_power >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "PML profile power must be ≥ 1, got {}",
                self.profile_power
            )));
        }
        Ok(())
    }

    fn damping(&self, depth_cells: f64) -> f64 {
        self.max_damping * (depth_cells / self.width as f64).powf(self.profile_power)
    }
}

/// Largest stable time step for a model: `0.9·dx / (v_max·√2·c)` with `c`
/// the stencil constant.
pub fn stability_dt(model: &VelocityModel) -> f64 {
    CFL_SAFETY * model.dx / (model.v_max() * 2f64.sqrt() * stencil_constant())
}

/// Interior snapshots `q[n][ix·nz + iz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefield {
    pub nx: usize,
    pub nz: usize,
    pub nt: usize,
    pub dt: f64,
    pub data: Vec<f64>,
}

impl Wavefield {
    pub fn snapshot(&self, n: usize) -> &[f64] {
        let len = self.nx * self.nz;
        &self.data[n * len..(n + 1) * len]
    }

    pub fn at(&self, n: usize, ix: usize, iz: usize) -> f64 {
        self.snapshot(n)[ix * self.nz + iz]
    }

    /// Time series at one node.
    pub fn node_series(&self, ix: usize, iz: usize) -> Vec<f64> {
        (0..self.nt).map(|n| self.at(n, ix, iz)).collect()
    }
}

/// Bilinear receiver weights on the padded grid.
#[derive(Debug, Clone)]
struct Stencil4 {
    idx: [usize; 4],
    w: [f64; 4],
}

/// Fourth-order first-derivative stencil, undivided.
const D1: f64 = 2.0 / 3.0;
const D2: f64 = -1.0 / 12.0;

/// The `n` cells starting `o` columns away from `base`.
fn column(v: &[f64], base: usize, o: isize, wz: usize, n: usize) -> &[f64] {
    let k = (base as isize + o * wz as isize) as usize;
    &v[k..k + n]
}

/// Per-model propagation operator: padded coefficient tables shared by all
/// shots.
#[derive(Debug, Clone)]
pub struct Propagator {
    nx: usize,
    nz: usize,
    pad: usize,
    /// Padded (active) dimensions.
    px: usize,
    pz: usize,
    /// Row stride of the halo-extended arrays.
    wz: usize,
    n_total: usize,
    dt: f64,
    dx: f64,
    origin: (f64, f64),
    /// Memory-variable recursion `ψ ← b·ψ + a·∂u` per padded column / row.
    ax: Vec<f64>,
    bx: Vec<f64>,
    az: Vec<f64>,
    bz: Vec<f64>,
    /// `dt²/(m·dx²)` per cell.
    g: Vec<f64>,
    minv: Vec<f64>,
    /// Padded column (x) and row (z) ranges carrying absorbing-layer terms,
    /// including the two-cell fringe the stencils reach into the interior.
    x_ranges: Vec<(usize, usize)>,
    z_ranges: Vec<(usize, usize)>,
}

/// Leapfrog state: the field at two time levels plus the layer's memory
/// variables.
#[derive(Debug, Clone)]
pub struct WaveState {
    p: [Vec<f64>; 2],
    psi_x: Vec<f64>,
    zeta_x: Vec<f64>,
    psi_z: Vec<f64>,
    zeta_z: Vec<f64>,
    /// Index of the current level in `p`.
    cur: usize,
    pub step: usize,
}

/// Forward result retaining what the imaging pass needs.
#[derive(Debug)]
pub struct ForwardRun {
    pub gather: ShotGather,
    /// Field `u^n` on the halo-extended grid for `n = 0..nt`.
    snapshots: Vec<f64>,
}

thread_local! {
    /// Snapshot buffers are large; recycling them per worker avoids paging
    /// fresh memory in for every shot.
    static SNAPSHOT_POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

fn take_snapshot_buffer(capacity: usize) -> Vec<f64> {
    let mut buf = SNAPSHOT_POOL.with(|p| p.borrow_mut().pop()).unwrap_or_default();
    buf.clear();
    buf.reserve(capacity);
    buf
}

impl Drop for ForwardRun {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.snapshots);
        if buf.capacity() > 0 {
            SNAPSHOT_POOL.with(|p| {
                let mut p = p.borrow_mut();
                if p.is_empty() {
                    p.push(buf);
                }
            });
        }
    }
}

/// Backward-sweep buffers for one direction of the absorbing layer.
struct LayerAdjoint {
    zeta: Vec<f64>,
    psi: Vec<f64>,
    t_zeta: Vec<f64>,
    t_psi: Vec<f64>,
}

impl LayerAdjoint {
    fn new(n: usize) -> Self {
        LayerAdjoint {
            zeta: vec![0.0; n],
            psi: vec![0.0; n],
            t_zeta: vec![0.0; n],
            t_psi: vec![0.0; n],
        }
    }
}

fn layer_ranges(n: usize, pad: usize, len: usize) -> Vec<(usize, usize)> {
    if pad == 0 {
        return Vec::new();
    }
    let lo = (pad + HALO).min(len);
    let hi = (pad + n).saturating_sub(HALO).max(lo);
    if hi <= lo {
        vec![(0, len)]
    } else {
        vec![(0, lo), (hi, len)]
    }
}

impl Propagator {
    /// `pml = None` gives a rigid (zero-Dirichlet) box around the model.
    pub fn new(model: &VelocityModel, pml: Option<&PmlConfig>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let limit = stability_dt(model) / CFL_SAFETY;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "dt = {dt:.4e} exceeds the stability limit {limit:.4e}"
            )));
        }
        if let Some(p) = pml {
            p.validate()?;
        }
        let pad = pml.map_or(0, |p| p.width);
        let (nx, nz) = (model.nx, model.nz);
        let (px, pz) = (nx + 2 * pad, nz + 2 * pad);
        let wx = px + 2 * HALO;
        let wz = pz + 2 * HALO;
        let n_total = wx * wz;

        let coeffs = |n: usize, len: usize| -> (Vec<f64>, Vec<f64>) {
            (0..len)
                .map(|i| {
                    let depth = if i < pad {
                        (pad - i) as f64
                    } else if i >= pad + n {
                        (i + 1 - pad - n) as f64
                    } else {
                        0.0
                    };
                    let d = match pml {
                        Some(p) if depth > 0.0 => p.damping(depth),
                        _ => 0.0,
                    };
                    let b = (-d * dt).exp();
                    (b - 1.0, b)
                })
                .unzip()
        };
        let (ax, bx) = coeffs(nx, px);
        let (az, bz) = coeffs(nz, pz);

        let mut g = vec![0.0; n_total];
        let mut minv = vec![0.0; n_total];
        let scale = dt * dt / (model.dx * model.dx);
        for i in 0..px {
            let ix = i.saturating_sub(pad).min(nx - 1);
            for j in 0..pz {
                let iz = j.saturating_sub(pad).min(nz - 1);
                let v = model.get(ix, iz);
                let k = (i + HALO) * wz + j + HALO;
                g[k] = scale * v * v;
                minv[k] = v * v;
            }
        }
        Ok(Propagator {
            nx,
            nz,
            pad,
            px,
            pz,
            wz,
            n_total,
            dt,
            dx: model.dx,
            origin: model.origin,
            ax,
            bx,
            az,
            bz,
            g,
            minv,
            x_ranges: layer_ranges(nx, pad, px),
            z_ranges: layer_ranges(nz, pad, pz),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Halo-extended index of interior node `(ix, iz)`.
    fn node(&self, ix: usize, iz: usize) -> usize {
        (ix + self.pad + HALO) * self.wz + iz + self.pad + HALO
    }

    /// Halo-extended index of padded cell `(i, j)`.
    fn cell(&self, i: usize, j: usize) -> usize {
        (i + HALO) * self.wz + j + HALO
    }

    fn check_inside(&self, pos: (f64, f64), what: &str) -> Result<(f64, f64)> {
        let gx = (pos.0 - self.origin.0) / self.dx;
        let gz = (pos.1 - self.origin.1) / self.dx;
        let eps = 1e-9;
        if !(gx >= -eps && gz >= -eps && gx <= (self.nx - 1) as f64 + eps && gz <= (self.nz - 1) as f64 + eps) {
            return Err(Error::InvalidArgument(format!(
                "{what} at ({}, {}) lies outside the model",
                pos.0, pos.1
            )));
        }
        Ok((gx.max(0.0), gz.max(0.0)))
    }

    fn source_node(&self, pos: (f64, f64)) -> Result<usize> {
        let (gx, gz) = self.check_inside(pos, "source")?;
        let ix = (gx.round() as usize).min(self.nx - 1);
        let iz = (gz.round() as usize).min(self.nz - 1);
        Ok(self.node(ix, iz))
    }

    fn receiver_stencil(&self, pos: (f64, f64)) -> Result<Stencil4> {
        let (gx, gz) = self.check_inside(pos, "receiver")?;
        let ix = (gx.floor() as usize).min(self.nx - 2);
        let iz = (gz.floor() as usize).min(self.nz - 2);
        let fx = (gx - ix as f64).clamp(0.0, 1.0);
        let fz = (gz - iz as f64).clamp(0.0, 1.0);
        Ok(Stencil4 {
            idx: [
                self.node(ix, iz),
                self.node(ix + 1, iz),
                self.node(ix, iz + 1),
                self.node(ix + 1, iz + 1),
            ],
            w: [(1.0 - fx) * (1.0 - fz), fx * (1.0 - fz), (1.0 - fx) * fz, fx * fz],
        })
    }

    pub fn zero_state(&self) -> WaveState {
        let z = || vec![0.0; self.n_total];
        WaveState {
            p: [z(), z()],
            psi_x: z(),
            zeta_x: z(),
            psi_z: z(),
            zeta_z: z(),
            cur: 0,
            step: 0,
        }
    }

    /// `next ← 2·cur − next + g·Δ_h(field)`, the interior leapfrog update
    /// (also the adjoint update, since `Δ_h` is symmetric).
    /// `out ← 2·cur − old + Δ_h(field)`.
    fn leapfrog_kernel(&self, field: &[f64], cur: &[f64], old: &[f64], out: &mut [f64]) {
        let wz = self.wz;
        let n = self.pz;
        for i in 0..self.px {
            let base = (i + HALO) * wz + HALO;
            let cm2 = &field[base - 2 * wz..base - 2 * wz + n];
            let cm1 = &field[base - wz..base - wz + n];
            let cp1 = &field[base + wz..base + wz + n];
            let cp2 = &field[base + 2 * wz..base + 2 * wz + n];
            let col = &field[base - 2..base + n + 2];
            let cur = &cur[base..base + n];
            let old = &old[base..base + n];
            let out = &mut out[base..base + n];
            for j in 0..n {
                let c = col[j + 2];
                let lap = 2.0 * C0 * c
                    + C1 * (cm1[j] + cp1[j] + col[j + 1] + col[j + 3])
                    + C2 * (cm2[j] + cp2[j] + col[j] + col[j + 4]);
                out[j] = 2.0 * cur[j] - old[j] + lap;
            }
        }
    }

    /// Absorbing-layer terms of one forward step along x: columns in the
    /// layer carry `ψ_x`, `ζ_x` over every row.
    fn layer_forward_x(&self, p: &[f64], psi: &mut [f64], zeta: &mut [f64], next: &mut [f64]) {
        let (wz, n) = (self.wz, self.pz);
        for &(i0, i1) in &self.x_ranges {
            for i in i0..i1 {
                let base = self.cell(i, 0);
                let (a, b) = (self.ax[i], self.bx[i]);
                let (pm2, pm1, pp1, pp2) = (
                    &p[base - 2 * wz..base - 2 * wz + n],
                    &p[base - wz..base - wz + n],
                    &p[base + wz..base + wz + n],
                    &p[base + 2 * wz..base + 2 * wz + n],
                );
                let psi = &mut psi[base..base + n];
                for j in 0..n {
                    psi[j] = b * psi[j] + a * (D1 * (pp1[j] - pm1[j]) + D2 * (pp2[j] - pm2[j]));
                }
            }
        }
        for &(i0, i1) in &self.x_ranges {
            for i in i0..i1 {
                let base = self.cell(i, 0);
                let (a, b) = (self.ax[i], self.bx[i]);
                let (pm2, pm1, pc, pp1, pp2) = (
                    &p[base - 2 * wz..base - 2 * wz + n],
                    &p[base - wz..base - wz + n],
                    &p[base..base + n],
                    &p[base + wz..base + wz + n],
                    &p[base + 2 * wz..base + 2 * wz + n],
                );
                let (sm2, sm1, sp1, sp2) = (
                    &psi[base - 2 * wz..base - 2 * wz + n],
                    &psi[base - wz..base - wz + n],
                    &psi[base + wz..base + wz + n],
                    &psi[base + 2 * wz..base + 2 * wz + n],
                );
                let g = &self.g[base..base + n];
                let zeta = &mut zeta[base..base + n];
                let next = &mut next[base..base + n];
                for j in 0..n {
                    let dpsi = D1 * (sp1[j] - sm1[j]) + D2 * (sp2[j] - sm2[j]);
                    let lap = C0 * pc[j] + C1 * (pm1[j] + pp1[j]) + C2 * (pm2[j] + pp2[j]);
                    let z = b * zeta[j] + a * (lap + dpsi);
                    zeta[j] = z;
                    next[j] += g[j] * (dpsi + z);
                }
            }
        }
    }

    /// Same along z: rows in the layer, every column.
    fn layer_forward_z(&self, p: &[f64], psi: &mut [f64], zeta: &mut [f64], next: &mut [f64]) {
        for i in 0..self.px {
            for &(j0, j1) in &self.z_ranges {
                let n = j1 - j0;
                let base = self.cell(i, j0);
                let a = &self.az[j0..j1];
                let b = &self.bz[j0..j1];
                let col = &p[base - 2..base + n + 2];
                let psi = &mut psi[base - 2..base + n + 2];
                for j in 0..n {
                    let dp = D1 * (col[j + 3] - col[j + 1]) + D2 * (col[j + 4] - col[j]);
                    psi[j + 2] = b[j] * psi[j + 2] + a[j] * dp;
                }
                let g = &self.g[base..base + n];
                let zeta = &mut zeta[base..base + n];
                let next = &mut next[base..base + n];
                for j in 0..n {
                    let dpsi = D1 * (psi[j + 3] - psi[j + 1]) + D2 * (psi[j + 4] - psi[j]);
                    let lap = C0 * col[j + 2] + C1 * (col[j + 1] + col[j + 3]) + C2 * (col[j] + col[j + 4]);
                    let z = b[j] * zeta[j] + a[j] * (lap + dpsi);
                    zeta[j] = z;
                    next[j] += g[j] * (dpsi + z);
                }
            }
        }
    }

    /// Transpose of [`Propagator::layer_forward_x`] for one backward step;
    /// `y = g·λ^{n+1}` and `out` accumulates into `λ^n`.
    fn layer_backward_x(&self, y: &[f64], st: &mut LayerAdjoint, out: &mut [f64]) {
        let (wz, n) = (self.wz, self.pz);
        let LayerAdjoint {
            zeta,
            psi,
            t_zeta,
            t_psi,
        } = st;
        for &(i0, i1) in &self.x_ranges {
            for i in i0..i1 {
                let base = self.cell(i, 0);
                let (a, b) = (self.ax[i], self.bx[i]);
                let y = &y[base..base + n];
                let zeta = &mut zeta[base..base + n];
                let tz = &mut t_zeta[base..base + n];
                for j in 0..n {
                    let z = y[j] + b * zeta[j];
                    zeta[j] = z;
                    tz[j] = a * z;
                }
            }
        }
        for &(i0, i1) in &self.x_ranges {
            for i in i0..i1 {
                let base = self.cell(i, 0);
                let (a, b) = (self.ax[i], self.bx[i]);
                let s = |v, o| column(v, base, o, wz, n);
                let (ym2, ym1, yp1, yp2) = (s(y, -2), s(y, -1), s(y, 1), s(y, 2));
                let (zm2, zm1, zp1, zp2) = (s(t_zeta, -2), s(t_zeta, -1), s(t_zeta, 1), s(t_zeta, 2));
                let psi = &mut psi[base..base + n];
                let tp = &mut t_psi[base..base + n];
                for j in 0..n {
                    let dy = D1 * (yp1[j] - ym1[j]) + D2 * (yp2[j] - ym2[j]);
                    let dz = D1 * (zp1[j] - zm1[j]) + D2 * (zp2[j] - zm2[j]);
                    let v = b * psi[j] - dy - dz;
                    psi[j] = v;
                    tp[j] = a * v;
                }
            }
        }
        for &(i0, i1) in &self.x_ranges {
            for i in i0..i1 {
                let base = self.cell(i, 0);
                let s = |v, o| column(v, base, o, wz, n);
                let (zm2, zm1, zc, zp1, zp2) = (
                    s(t_zeta, -2),
                    s(t_zeta, -1),
                    s(t_zeta, 0),
                    s(t_zeta, 1),
                    s(t_zeta, 2),
                );
                let (pm2, pm1, pp1, pp2) = (s(t_psi, -2), s(t_psi, -1), s(t_psi, 1), s(t_psi, 2));
                let out = &mut out[base..base + n];
                for j in 0..n {
                    let lap = C0 * zc[j] + C1 * (zm1[j] + zp1[j]) + C2 * (zm2[j] + zp2[j]);
                    let dp = D1 * (pp1[j] - pm1[j]) + D2 * (pp2[j] - pm2[j]);
                    out[j] += lap - dp;
                }
            }
        }
    }

    /// Transpose of [`Propagator::layer_forward_z`].
    fn layer_backward_z(&self, y: &[f64], st: &mut LayerAdjoint, out: &mut [f64]) {
        let LayerAdjoint {
            zeta,
            psi,
            t_zeta,
            t_psi,
        } = st;
        for i in 0..self.px {
            for &(j0, j1) in &self.z_ranges {
                let n = j1 - j0;
                let base = self.cell(i, j0);
                let a = &self.az[j0..j1];
                let b = &self.bz[j0..j1];
                let yc = &y[base - 2..base + n + 2];
                {
                    let zeta = &mut zeta[base..base + n];
                    let tz = &mut t_zeta[base..base + n];
                    for j in 0..n {
                        let z = yc[j + 2] + b[j] * zeta[j];
                        zeta[j] = z;
                        tz[j] = a[j] * z;
                    }
                }
                {
                    let tz = &t_zeta[base - 2..base + n + 2];
                    let psi = &mut psi[base..base + n];
                    let tp = &mut t_psi[base..base + n];
                    for j in 0..n {
                        let dy = D1 * (yc[j + 3] - yc[j + 1]) + D2 * (yc[j + 4] - yc[j]);
                        let dz = D1 * (tz[j + 3] - tz[j + 1]) + D2 * (tz[j + 4] - tz[j]);
                        let v = b[j] * psi[j] - dy - dz;
                        psi[j] = v;
                        tp[j] = a[j] * v;
                    }
                }
                let tz = &t_zeta[base - 2..base + n + 2];
                let tp = &t_psi[base - 2..base + n + 2];
                let out = &mut out[base..base + n];
                for j in 0..n {
                    let lap = C0 * tz[j + 2] + C1 * (tz[j + 1] + tz[j + 3]) + C2 * (tz[j] + tz[j + 4]);
                    let dp = D1 * (tp[j + 3] - tp[j + 1]) + D2 * (tp[j + 4] - tp[j]);
                    out[j] += lap - dp;
                }
            }
        }
    }

    /// Advances `u^n → u^{n+1}` with point source value `s` at a node. The
    /// source density is `s/dx²`, which cancels the `1/dx²` folded into `g`.
    fn step(&self, st: &mut WaveState, src: Option<(usize, f64)>) {
        let cur = st.cur;
        let nxt = 1 - cur;
        let [pa, pb] = &mut st.p;
        let (p, next) = if cur == 0 { (&*pa, pb) } else { (&*pb, pa) };
        // `next` holds u^{n-1} on entry and is updated in place.
        self.scaled_leapfrog(p, next);
        if !self.x_ranges.is_empty() {
            self.layer_forward_x(p, &mut st.psi_x, &mut st.zeta_x, next);
            self.layer_forward_z(p, &mut st.psi_z, &mut st.zeta_z, next);
        }
        if let Some((k, s)) = src {
            next[k] += self.g[k] * s;
        }
        st.cur = nxt;
        st.step += 1;
    }

    /// `next ← 2·p − next + g·Δ_h p`.
    fn scaled_leapfrog(&self, p: &[f64], next: &mut [f64]) {
        let wz = self.wz;
        let n = self.pz;
        for i in 0..self.px {
            let base = (i + HALO) * wz + HALO;
            let cm2 = &p[base - 2 * wz..base - 2 * wz + n];
            let cm1 = &p[base - wz..base - wz + n];
            let cp1 = &p[base + wz..base + wz + n];
            let cp2 = &p[base + 2 * wz..base + 2 * wz + n];
            let col = &p[base - 2..base + n + 2];
            let g = &self.g[base..base + n];
            let next = &mut next[base..base + n];
            for j in 0..n {
                let c = col[j + 2];
                let lap = 2.0 * C0 * c
                    + C1 * (cm1[j] + cp1[j] + col[j + 1] + col[j + 3])
                    + C2 * (cm2[j] + cp2[j] + col[j] + col[j + 4]);
                next[j] = 2.0 * c - next[j] + g[j] * lap;
            }
        }
    }

    fn source_samples(&self, wavelet: &Trace, nt: usize) -> Result<Vec<f64>> {
        if (wavelet.dt - self.dt).abs() > 1e-9 * self.dt {
            return Err(Error::InvalidArgument(format!(
                "wavelet dt {} differs from solver dt {}",
                wavelet.dt, self.dt
            )));
        }
        Ok((0..nt).map(|n| wavelet.samples.get(n).copied().unwrap_or(0.0)).collect())
    }

    fn check_stable(&self, u: &[f64], step: usize, bound: f64) -> Result<()> {
        let max = u.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) });
        if !(max <= bound) {
            return Err(Error::Instability { step, max_abs: max });
        }
        Ok(())
    }

    fn sample(u: &[f64], s: &Stencil4) -> f64 {
        s.idx.iter().zip(&s.w).map(|(&k, w)| w * u[k]).sum()
    }

    /// Runs one shot, optionally keeping the field for imaging.
    fn run_forward(
        &self,
        source: &SourceTerm,
        receivers: &[(f64, f64)],
        nt: usize,
        keep: bool,
        mut on_step: impl FnMut(usize, &[f64]),
    ) -> Result<ForwardRun> {
        if nt < 2 {
            return Err(Error::InvalidArgument(format!("nt must be at least 2, got {nt}")));
        }
        if receivers.is_empty() {
            return Err(Error::InvalidArgument("shot has no receivers".into()));
        }
        let src_node = self.source_node(source.position)?;
        let stencils = receivers
            .iter()
            .map(|&p| self.receiver_stencil(p))
            .collect::<Result<Vec<_>>>()?;
        let s = self.source_samples(&source.wavelet, nt)?;
        let bound = 1e10 * s.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);

        let mut st = self.zero_state();
        let mut rec = vec![vec![0.0; nt]; receivers.len()];
        let mut snaps = if keep { take_snapshot_buffer(self.n_total * nt) } else { Vec::new() };
        for n in 0..nt {
            let u = &st.p[st.cur];
            for (r, sten) in stencils.iter().enumerate() {
                rec[r][n] = Self::sample(u, sten);
            }
            on_step(n, u);
            if keep {
                snaps.extend_from_slice(u);
            }
            if n + 1 == nt {
                break;
            }
            self.step(&mut st, Some((src_node, s[n])));
            if (n + 1) % 50 == 0 || n + 2 == nt {
                self.check_stable(&st.p[st.cur], n + 1, bound)?;
            }
        }
        let traces = rec
            .into_iter()
            .map(|r| Trace::new(r, self.dt, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let gather = ShotGather::new(source.clone(), receivers.to_vec(), traces)?;
        Ok(ForwardRun { gather, snapshots: snaps })
    }

    fn interior(&self, field: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nx * self.nz);
        for ix in 0..self.nx {
            let k = self.node(ix, 0);
            out.extend_from_slice(&field[k..k + self.nz]);
        }
        out
    }

    /// Forward modeling of one shot. With `record_wavefield`, the interior
    /// field at every step is returned as well.
    pub fn forward(
        &self,
        source: &SourceTerm,
        receivers: &[(f64, f64)],
        nt: usize,
        record_wavefield: bool,
    ) -> Result<(ShotGather, Option<Wavefield>)> {
        let mut data = Vec::new();
        let run = self.run_forward(source, receivers, nt, false, |_, u| {
            if record_wavefield {
                data.extend(self.interior(u));
            }
        })?;
        let wf = record_wavefield.then_some(Wavefield {
            nx: self.nx,
            nz: self.nz,
            nt,
            dt: self.dt,
            data,
        });
        Ok((run.gather.clone(), wf))
    }

    /// Forward modeling that keeps what [`Propagator::gradient`] needs.
    pub fn forward_for_imaging(&self, source: &SourceTerm, receivers: &[(f64, f64)], nt: usize) -> Result<ForwardRun> {
        self.run_forward(source, receivers, nt, true, |_, _| {})
    }

    /// Backward sweep of the transposed recursion with receiver forcing
    /// `c_r^n`. `visit(k, [λ^k, λ^{k+1}, λ^{k+2}], g·λ^k)` sees the adjoint
    /// state paired with `u^k` for `k = nt-1 … 1`.
    fn run_backward(
        &self,
        receivers: &[(f64, f64)],
        forcing: &[Vec<f64>],
        nt: usize,
        mut visit: impl FnMut(usize, [&[f64]; 3], &[f64]),
    ) -> Result<()> {
        let stencils = receivers
            .iter()
            .map(|&p| self.receiver_stencil(p))
            .collect::<Result<Vec<_>>>()?;
        let fmax = forcing
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let bound = 1e10 * fmax.max(f64::MIN_POSITIVE);
        let z = || vec![0.0; self.n_total];
        // Rotating levels: `l1` = λ^{k+1}, `l2` = λ^{k+2}, `l0` receives λ^k.
        let (mut l0, mut l1, mut l2) = (z(), z(), z());
        let mut y = z();
        let mut lx = LayerAdjoint::new(if self.pad > 0 { self.n_total } else { 0 });
        let mut lz = LayerAdjoint::new(if self.pad > 0 { self.n_total } else { 0 });
        for k in (1..nt).rev() {
            self.leapfrog_kernel(&y, &l1, &l2, &mut l0);
            if self.pad > 0 {
                self.layer_backward_x(&y, &mut lx, &mut l0);
                self.layer_backward_z(&y, &mut lz, &mut l0);
            }
            for (sten, f) in stencils.iter().zip(forcing) {
                let c = f[k];
                if c != 0.0 {
                    for (&idx, &w) in sten.idx.iter().zip(&sten.w) {
                        l0[idx] += w * c;
                    }
                }
            }
            for ((yv, l), g) in y.iter_mut().zip(&l0).zip(&self.g) {
                *yv = g * l;
            }
            if k % 50 == 0 {
                self.check_stable(&l0, k, bound)?;
            }
            visit(k, [&l0, &l1, &l2], &y);
            std::mem::swap(&mut l2, &mut l1);
            std::mem::swap(&mut l1, &mut l0);
        }
        Ok(())
    }

    /// Adjoint wavefield driven by residual traces injected at the receivers
    /// (time-reversed propagation through the transposed scheme). Snapshot
    /// `n` is the adjoint state paired with `u^{n+1}`; the last is zero.
    pub fn adjoint(&self, residual: &ShotGather, nt: usize) -> Result<Wavefield> {
        let forcing = self.forcing(residual, nt, false)?;
        let mut data = vec![0.0; self.nx * self.nz * nt];
        let len = self.nx * self.nz;
        self.run_backward(&residual.receiver_positions, &forcing, nt, |k, lam, _| {
            data[(k - 1) * len..k * len].copy_from_slice(&self.interior(lam[0]));
        })?;
        Ok(Wavefield {
            nx: self.nx,
            nz: self.nz,
            nt,
            dt: self.dt,
            data,
        })
    }

    /// Transpose of the map from source time function to receiver traces:
    /// returns the time function `Aᵀy` for traces `y` (plain Euclidean inner
    /// products on samples).
    pub fn adjoint_source_trace(&self, position: (f64, f64), traces: &ShotGather, nt: usize) -> Result<Trace> {
        let src = self.source_node(position)?;
        let forcing = self.forcing(traces, nt, false)?;
        let mut out = vec![0.0; nt];
        self.run_backward(&traces.receiver_positions, &forcing, nt, |k, _, y| {
            out[k - 1] = y[src];
        })?;
        Trace::new(out, self.dt, 0.0)
    }

    fn forcing(&self, gather: &ShotGather, nt: usize, weighted: bool) -> Result<Vec<Vec<f64>>> {
        if gather.nt != nt {
            return Err(Error::MismatchedGather(format!(
                "gather has {} samples, solver runs {nt}",
                gather.nt
            )));
        }
        if (gather.dt - self.dt).abs() > 1e-9 * self.dt {
            return Err(Error::MismatchedGather(format!(
                "gather dt {} differs from solver dt {}",
                gather.dt, self.dt
            )));
        }
        let w = trapezoid_weights(nt, self.dt);
        Ok(gather
            .traces
            .iter()
            .map(|t| {
                if weighted {
                    t.samples.iter().zip(&w).map(|(s, w)| -s * w).collect()
                } else {
                    t.samples.clone()
                }
            })
            .collect())
    }

    /// `dJ/dm` per model cell for `J = ½ Σ_r ∫ |r_r(t)|² dt` where the
    /// residual `r = d − u` is supplied as a gather aligned with the run.
    /// This is the zero-lag correlation of the adjoint state with the
    /// centered second difference of the stored field; contributions on the
    /// absorbing layer are folded onto the edge cells.
    pub fn gradient(&self, run: &ForwardRun, residual: &ShotGather) -> Result<Vec<f64>> {
        run.gather.check_aligned(residual)?;
        if run.snapshots.is_empty() {
            return Err(Error::InvalidArgument("forward run kept no wavefield".into()));
        }
        let nt = run.gather.nt;
        let forcing = self.forcing(residual, nt, true)?;
        let mut grad = vec![0.0; self.n_total];
        let len = self.n_total;
        // Σ_n λ^{n+1}·δ²u^n summed by parts as Σ_k u^k·(λ^k − 2λ^{k+1} + λ^{k+2}),
        // so each step touches one stored snapshot (u^0 = 0 drops out).
        self.run_backward(&residual.receiver_positions, &forcing, nt, |k, [l0, l1, l2], _| {
            let u = &run.snapshots[k * len..(k + 1) * len];
            for i in 0..len {
                grad[i] -= self.minv[i] * u[i] * (l0[i] - 2.0 * l1[i] + l2[i]);
            }
        })?;
        Ok(self.fold(&grad))
    }

    /// Sums a padded grid onto the model grid (padding maps to the nearest
    /// edge cell).
    fn fold(&self, padded: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nx * self.nz];
        for i in 0..self.px {
            let ix = i.saturating_sub(self.pad).min(self.nx - 1);
            for j in 0..self.pz {
                let iz = j.saturating_sub(self.pad).min(self.nz - 1);
                out[ix * self.nz + iz] += padded[self.cell(i, j)];
            }
        }
        out
    }

    /// Stepping interface for diagnostics: advances `state` by one step with
    /// an optional point source of time-function value `s` at `position`.
    pub fn advance(&self, state: &mut WaveState, source: Option<((f64, f64), f64)>) -> Result<()> {
        let src = match source {
            Some((pos, s)) => Some((self.source_node(pos)?, s)),
            None => None,
        };
        self.step(state, src);
        Ok(())
    }

    /// Interior part of the current field.
    pub fn current_field(&self, state: &WaveState) -> Vec<f64> {
        self.interior(&state.p[state.cur])
    }
}

/// One-shot forward modeling; see [`Propagator::forward`].
pub fn forward(
    model: &VelocityModel,
    source: &SourceTerm,
    receivers: &[(f64, f64)],
    nt: usize,
    dt: f64,
    pml: Option<&PmlConfig>,
    record_wavefield: bool,
) -> Result<(ShotGather, Option<Wavefield>)> {
    Propagator::new(model, pml, dt)?.forward(source, receivers, nt, record_wavefield)
}

/// See [`Propagator::adjoint`].
pub fn adjoint(
    model: &VelocityModel,
    residual: &ShotGather,
    nt: usize,
    dt: f64,
    pml: Option<&PmlConfig>,
) -> Result<Wavefield> {
    Propagator::new(model, pml, dt)?.adjoint(residual, nt)
}

/// Forward run plus imaging: `dJ/dm` per cell for the given residual
/// gather (`d − u` convention).
pub fn image_gradient(
    model: &VelocityModel,
    source: &SourceTerm,
    residual: &ShotGather,
    nt: usize,
    dt: f64,
    pml: Option<&PmlConfig>,
) -> Result<Vec<f64>> {
    let prop = Propagator::new(model, pml, dt)?;
    let run = prop.forward_for_imaging(source, &residual.receiver_positions, nt)?;
    prop.gradient(&run, residual)
}

/// Source and receiver positions of one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotGeometry {
    pub source: (f64, f64),
    pub receivers: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub shots: Vec<ShotGeometry>,
}

impl AcquisitionGeometry {
    pub fn n_shots(&self) -> usize {
        self.shots.len()
    }
}

/// Time axis and boundary treatment shared by every shot of a survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub nt: usize,
    pub dt: f64,
    /// `None` is a reflecting box.
    pub pml: Option<PmlConfig>,
}

/// Forward-models every shot of a geometry; output order follows the
/// geometry regardless of scheduling.
pub fn forward_survey(
    model: &VelocityModel,
    geometry: &AcquisitionGeometry,
    wavelet: &Trace,
    params: &SolverParams,
) -> Result<Vec<ShotGather>> {
    let prop = Propagator::new(model, params.pml.as_ref(), params.dt)?;
    geometry
        .shots
        .par_iter()
        .map(|shot| {
            let src = SourceTerm {
                position: shot.source,
                wavelet: wavelet.clone(),
            };
            prop.forward(&src, &shot.receivers, params.nt, false).map(|(g, _)| g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::ricker;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_pml() -> PmlConfig {
        PmlConfig::new(10, 600.0, 2.0).unwrap()
    }

    #[test]
    fn stability_dt_scaling() {
        let a = VelocityModel::homogeneous(20, 20, 5.0, 3000.0).unwrap();
        let b = VelocityModel::homogeneous(20, 20, 5.0, 6000.0).unwrap();
        let c = VelocityModel::homogeneous(20, 20, 10.0, 3000.0).unwrap();
        let hand = 0.9 * 5.0 / (3000.0 * 2f64.sqrt() * (16.0f64 / 3.0).sqrt() / 2.0);
        assert!((stability_dt(&a) - hand).abs() < 1e-15);
        assert!((stability_dt(&a) / stability_dt(&b) - 2.0).abs() < 1e-12);
        assert!((stability_dt(&c) / stability_dt(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn model_validation() {
        assert!(VelocityModel::homogeneous(8, 20, 5.0, 3000.0).is_err());
        assert!(VelocityModel::new(16, 16, 5.0, (0.0, 0.0), vec![-1.0; 256]).is_err());
        let m = VelocityModel::from_fn(16, 20, 5.0, (0.0, 0.0), |x, z| 2000.0 + x + z).unwrap();
        let back = m.from_slowness_sq(&m.slowness_sq()).unwrap();
        for (a, b) in m.v.iter().zip(&back.v) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(PmlConfig::new(4, 100.0, 2.0).is_err());
        assert!(PmlConfig::new(10, 0.0, 2.0).is_err());
    }

    #[test]
    fn rejects_unstable_dt_and_outside_positions() {
        let m = VelocityModel::homogeneous(20, 20, 5.0, 3000.0).unwrap();
        let dt = stability_dt(&m);
        assert!(Propagator::new(&m, None, 1.2 * dt / CFL_SAFETY).is_err());
        let w = ricker(25.0, dt, 0.1, 0.05).unwrap();
        let src = SourceTerm {
            position: (200.0, 10.0),
            wavelet: w,
        };
        assert!(forward(&m, &src, &[(10.0, 10.0)], 50, dt, None, false).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_adjoint_and_gradient() {
        let m = VelocityModel::homogeneous(24, 24, 5.0, 3000.0).unwrap();
        let dt = stability_dt(&m);
        let w = ricker(40.0, dt, 0.05, 0.03).unwrap();
        let src = SourceTerm {
            position: (30.0, 60.0),
            wavelet: w,
        };
        let pml = small_pml();
        let (g, _) = forward(&m, &src, &[(90.0, 60.0)], 120, dt, Some(&pml), false).unwrap();
        let zero = g.with_traces(vec![g.traces[0].map(|_| 0.0)]);
        let q = adjoint(&m, &zero, 120, dt, Some(&pml)).unwrap();
        assert!(q.data.iter().all(|&x| x == 0.0));
        let grad = image_gradient(&m, &src, &zero, 120, dt, Some(&pml)).unwrap();
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    fn random_gather(rng: &mut ChaCha8Rng, template: &ShotGather) -> ShotGather {
        template.with_traces(
            template
                .traces
                .iter()
                .map(|t| t.map(|_| rng.random_range(-1.0..1.0)))
                .collect(),
        )
    }

    #[test]
    fn dot_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = VelocityModel::from_fn(24, 20, 5.0, (0.0, 0.0), |x, z| 2500.0 + 4.0 * x + 2.0 * z).unwrap();
        let dt = 0.8 * stability_dt(&m);
        let nt = 150;
        let pml = small_pml();
        let prop = Propagator::new(&m, Some(&pml), dt).unwrap();
        let x = Trace::new((0..nt).map(|_| rng.random_range(-1.0..1.0)).collect(), dt, 0.0).unwrap();
        let src = SourceTerm {
            position: (22.0, 41.0),
            wavelet: x.clone(),
        };
        let receivers = vec![(100.0, 12.0), (63.3, 90.0), (5.0, 5.0)];
        let (ax, _) = prop.forward(&src, &receivers, nt, false).unwrap();
        let y = random_gather(&mut rng, &ax);
        let aty = prop.adjoint_source_trace(src.position, &y, nt).unwrap();
        let lhs: f64 = ax
            .traces
            .iter()
            .zip(&y.traces)
            .map(|(a, b)| a.samples.iter().zip(&b.samples).map(|(p, q)| p * q).sum::<f64>())
            .sum();
        let rhs: f64 = x.samples.iter().zip(&aty.samples).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    }
}
