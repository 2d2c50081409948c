//! Piecewise-cubic warps `p(t)` and amplitudes `A(t)`.
//!
//! Both functions are cardinal cubic Hermite splines: the nodal values are
//! the parameters and the slopes follow from them (Catmull–Rom centered
//! differences inside, one-sided differences at the two ends). This makes
//! `p(t) = Σ ρ_k φ_k(t)` with one coefficient per basis function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Trace;

/// Number of subintervals used when none is given.
pub const DEFAULT_INTERVALS: usize = 4;

/// Lower clamp applied to `A(t)` before raising it to a fractional power.
pub const AMP_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub node_times: Vec<f64>,
}

/// Position of a time inside the node grid.
#[derive(Debug, Clone, Copy)]
struct Located {
    interval: usize,
    s: f64,
    h: f64,
}

impl SplineBasis {
    pub fn new(node_times: Vec<f64>) -> Result<Self> {
        if node_times.len() < 2 {
            return Err(Error::InvalidArgument("spline needs at least 2 nodes".into()));
        }
        if node_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "spline nodes must be strictly increasing".into(),
            ));
        }
        Ok(SplineBasis { node_times })
    }

    /// `n_intervals` equal subintervals of `[t0, t_end]`.
    pub fn uniform(t0: f64, t_end: f64, n_intervals: usize) -> Result<Self> {
        if n_intervals == 0 {
            return Err(Error::InvalidArgument("n_intervals must be at least 1".into()));
        }
        let h = (t_end - t0) / n_intervals as f64;
        let mut nodes: Vec<f64> = (0..=n_intervals).map(|k| t0 + k as f64 * h).collect();
        nodes[n_intervals] = t_end;
        SplineBasis::new(nodes)
    }

    /// Equal subintervals spanning a trace's record.
    pub fn for_trace(trace: &Trace, n_intervals: usize) -> Result<Self> {
        SplineBasis::uniform(trace.t0, trace.t_end(), n_intervals)
    }

    pub fn n_intervals(&self) -> usize {
        self.node_times.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.node_times.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.node_times[0], self.node_times[self.n_intervals()])
    }

    fn locate(&self, t: f64) -> Located {
        let (lo, hi) = self.domain();
        let t = t.clamp(lo, hi);
        let n = self.n_intervals();
        let k = match self
            .node_times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(k) => k.min(n - 1),
            Err(k) => k.saturating_sub(1).min(n - 1),
        };
        let h = self.node_times[k + 1] - self.node_times[k];
        Located {
            interval: k,
            s: (t - self.node_times[k]) / h,
            h,
        }
    }

    /// Catmull–Rom nodal slopes for the given nodal values.
    pub fn slopes(&self, values: &[f64]) -> Vec<f64> {
        let t = &self.node_times;
        let n = self.n_intervals();
        (0..=n)
            .map(|j| {
                let (a, b) = if j == 0 {
                    (0, 1)
                } else if j == n {
                    (n - 1, n)
                } else {
                    (j - 1, j + 1)
                };
                (values[b] - values[a]) / (t[b] - t[a])
            })
            .collect()
    }

    /// Value and first derivative of the cardinal spline through `values`.
    /// Times outside the node range are clamped to it.
    pub fn interpolate(&self, values: &[f64], t: f64) -> (f64, f64) {
        debug_assert_eq!(values.len(), self.n_nodes());
        let slopes = self.slopes(values);
        let loc = self.locate(t);
        hermite(loc, values, &slopes)
    }

    /// `φ_k(t)`.
    pub fn basis_eval(&self, k: usize, t: f64) -> f64 {
        self.interpolate(&unit(self.n_nodes(), k), t).0
    }

    /// `φ_k'(t)`.
    pub fn basis_derivative(&self, k: usize, t: f64) -> f64 {
        self.interpolate(&unit(self.n_nodes(), k), t).1
    }

    /// Dense table of `φ_k(t_i)` for a set of times.
    pub fn table(&self, times: &[f64]) -> BasisTable {
        let nn = self.n_nodes();
        let units: Vec<Vec<f64>> = (0..nn).map(|k| unit(nn, k)).collect();
        let unit_slopes: Vec<Vec<f64>> = units.iter().map(|u| self.slopes(u)).collect();
        let mut values = Vec::with_capacity(times.len() * nn);
        for &t in times {
            let loc = self.locate(t);
            for k in 0..nn {
                values.push(hermite(loc, &units[k], &unit_slopes[k]).0);
            }
        }
        BasisTable { n_nodes: nn, values }
    }
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

fn hermite(loc: Located, y: &[f64], m: &[f64]) -> (f64, f64) {
    let Located { interval: k, s, h } = loc;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let d00 = 6.0 * s2 - 6.0 * s;
    let d10 = 3.0 * s2 - 4.0 * s + 1.0;
    let d11 = 3.0 * s2 - 2.0 * s;
    let v = h00 * y[k] + h10 * h * m[k] + h01 * y[k + 1] + h11 * h * m[k + 1];
    let dv = (d00 * (y[k] - y[k + 1])) / h + d10 * m[k] + d11 * m[k + 1];
    (v, dv)
}

/// `φ_k(t_i)` for a fixed list of times, row-major by time.
#[derive(Debug, Clone)]
pub struct BasisTable {
    n_nodes: usize,
    values: Vec<f64>,
}

impl BasisTable {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_nodes
    }

    /// `Σ_k c_k φ_k(t_i)`.
    pub fn combine(&self, i: usize, coeffs: &[f64]) -> f64 {
        self.row(i).iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }
}

/// `p(t)`, `A(t)` and their time derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub p: f64,
    pub amp: f64,
    pub dp: f64,
    pub damp: f64,
}

/// Warp and amplitude nodal values on a shared node grid.
/// Serializes as `{node_times, rho, amp}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpModel {
    #[serde(flatten)]
    pub basis: SplineBasis,
    pub rho: Vec<f64>,
    pub amp: Vec<f64>,
}

impl WarpModel {
    pub fn new(basis: SplineBasis, rho: Vec<f64>, amp: Vec<f64>) -> Result<Self> {
        if rho.len() != basis.n_nodes() || amp.len() != basis.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "warp needs {} nodal values, got rho {} / amp {}",
                basis.n_nodes(),
                rho.len(),
                amp.len()
            )));
        }
        Ok(WarpModel { basis, rho, amp })
    }

    /// `p(t) = t`, `A(t) = 1`.
    pub fn identity(basis: SplineBasis) -> Self {
        let rho = basis.node_times.clone();
        let amp = vec![1.0; basis.n_nodes()];
        WarpModel { basis, rho, amp }
    }

    /// Warp interpolating `f` at the nodes, unit amplitude.
    pub fn from_fn(basis: SplineBasis, f: impl Fn(f64) -> f64) -> Self {
        let rho = basis.node_times.iter().map(|&t| f(t)).collect();
        let amp = vec![1.0; basis.n_nodes()];
        WarpModel { basis, rho, amp }
    }

    pub fn eval(&self, t: f64) -> WarpSample {
        let (p, dp) = self.basis.interpolate(&self.rho, t);
        let (amp, damp) = self.basis.interpolate(&self.amp, t);
        WarpSample { p, amp, dp, damp }
    }

    pub fn warp(&self, t: f64) -> f64 {
        self.basis.interpolate(&self.rho, t).0
    }

    pub fn amplitude(&self, t: f64) -> f64 {
        self.basis.interpolate(&self.amp, t).0
    }

    /// True when `p'(t) ≤ 0` somewhere on a 64-points-per-interval grid.
    pub fn folds(&self) -> bool {
        let slopes = self.basis.slopes(&self.rho);
        let n = self.basis.n_intervals();
        (0..n).any(|k| {
            let h = self.basis.node_times[k + 1] - self.basis.node_times[k];
            (0..=64).any(|j| {
                let loc = Located {
                    interval: k,
                    s: j as f64 / 64.0,
                    h,
                };
                hermite(loc, &self.rho, &slopes).1 <= 0.0
            })
        })
    }

    /// Nodal blend `(1 − w)·self + w·other`; both must share nodes.
    pub fn lerp(&self, other: &WarpModel, w: f64) -> Result<WarpModel> {
        if self.basis != other.basis {
            return Err(Error::InvalidArgument(
                "cannot blend warps on different node grids".into(),
            ));
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect()
        };
        Ok(WarpModel {
            basis: self.basis.clone(),
            rho: mix(&self.rho, &other.rho),
            amp: mix(&self.amp, &other.amp),
        })
    }
}

/// `φ_k(t)` for a basis.
pub fn basis_eval(basis: &SplineBasis, k: usize, t: f64) -> f64 {
    basis.basis_eval(k, t)
}

/// `(p, A, p', A')` at time `t`.
pub fn eval(w: &WarpModel, t: f64) -> (f64, f64, f64, f64) {
    let s = w.eval(t);
    (s.p, s.amp, s.dp, s.damp)
}

/// Keys cubic convolution (a = −1/2) at fractional sample index `x`;
/// samples outside the record read as zero.
pub fn cubic_convolution(samples: &[f64], x: f64) -> f64 {
    let j = x.floor();
    let s = x - j;
    let j = j as i64;
    let n = samples.len() as i64;
    let at = |i: i64| if (0..n).contains(&i) { samples[i as usize] } else { 0.0 };
    if s == 0.0 {
        return at(j);
    }
    let w = |d: f64| -> f64 {
        let d = d.abs();
        if d <= 1.0 {
            1.5 * d * d * d - 2.5 * d * d + 1.0
        } else if d < 2.0 {
            -0.5 * d * d * d + 2.5 * d * d - 4.0 * d + 2.0
        } else {
            0.0
        }
    };
    at(j - 1) * w(s + 1.0) + at(j) * w(s) + at(j + 1) * w(1.0 - s) + at(j + 2) * w(2.0 - s)
}

/// Fractionally warped trace `[A(t)]^α · u((1−α)t + α·p(t))`.
///
/// `A` is clamped to [`AMP_FLOOR`] before the power; clamping is logged.
pub fn apply_warp(u: &Trace, w: &WarpModel, alpha: f64) -> Result<Trace> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "warp fraction must lie in [0, 1], got {alpha}"
        )));
    }
    let mut clamped = 0usize;
    let samples = u
        .times()
        .map(|t| {
            let s = w.eval(t);
            let a = if s.amp < AMP_FLOOR {
                clamped += 1;
                AMP_FLOOR
            } else {
                s.amp
            };
            let tau = (1.0 - alpha) * t + alpha * s.p;
            a.powf(alpha) * cubic_convolution(&u.samples, (tau - u.t0) / u.dt)
        })
        .collect();
    if clamped > 0 {
        log::warn!("amplitude clamped to {AMP_FLOOR} on {clamped} samples");
    }
    Ok(u.with_samples(samples))
}
