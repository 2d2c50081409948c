//! One-dimensional signal primitives: uniformly sampled traces, discrete
//! spectra, the Hilbert transform, zero-phase low-pass filtering, the
//! low-frequency augmentation (LFA) transforms and trapezoidal quadrature.
//!
//! Spectral operations zero-pad to the next power of two at least twice the
//! trace length (see [`Padding`]) and truncate back, so arrivals near the end
//! of a record do not wrap around onto its start.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// A uniformly sampled time series: sample `i` sits at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub t0: f64,
}

impl Trace {
    pub fn new(samples: Vec<f64>, dt: f64, t0: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trace needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Trace { samples, dt, t0 })
    }

    pub fn zeros(n: usize, dt: f64, t0: f64) -> Result<Self> {
        Trace::new(vec![0.0; n], dt, t0)
    }

    /// Samples a closure on `n` points starting at `t0`.
    pub fn from_fn(n: usize, dt: f64, t0: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Trace::new((0..n).map(|i| f(t0 + i as f64 * dt)).collect(), dt, t0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn duration(&self) -> f64 {
        self.t_end() - self.t0
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    /// New trace on the same time axis.
    pub fn with_samples(&self, samples: Vec<f64>) -> Trace {
        debug_assert_eq!(samples.len(), self.len());
        Trace {
            samples,
            dt: self.dt,
            t0: self.t0,
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Trace {
        self.with_samples(self.samples.iter().map(|&x| f(x)).collect())
    }

    /// `∫ u² dt` by the trapezoidal rule.
    pub fn energy(&self) -> f64 {
        let sq: Vec<f64> = self.samples.iter().map(|x| x * x).collect();
        trapezoid(&sq, self.dt)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }

    /// Same length and sampling interval (start times may differ by rounding).
    pub fn check_comparable(&self, other: &Trace) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::MismatchedTrace(format!(
                "lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if (self.dt - other.dt).abs() > 1e-12 * self.dt.max(other.dt) {
            return Err(Error::MismatchedTrace(format!(
                "sampling differs: {} vs {}",
                self.dt, other.dt
            )));
        }
        Ok(())
    }

    /// Time of the envelope maximum, refined by a parabola through the
    /// three samples around the discrete peak.
    pub fn envelope_peak_time(&self) -> f64 {
        let env = envelope(self);
        let (k, _) = env
            .samples
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bk, bv), (i, &v)| if v > bv { (i, v) } else { (bk, bv) });
        let mut offset = 0.0;
        if k > 0 && k + 1 < env.len() {
            let (a, b, c) = (env.samples[k - 1], env.samples[k], env.samples[k + 1]);
            let denom = a - 2.0 * b + c;
            if denom.abs() > 0.0 {
                offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            }
        }
        self.time(k) + offset * self.dt
    }
}

/// Zero padding applied before a DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Next power of two at least twice the signal length.
    #[default]
    Double,
    /// No padding: the record is treated as one period of a periodic signal.
    None,
}

impl Padding {
    pub fn fft_len(self, n: usize) -> usize {
        match self {
            Padding::Double => (2 * n).next_power_of_two(),
            Padding::None => n,
        }
    }
}

/// Discrete spectrum scaled so that `Σ|X|²·df = Σx²·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub coefficients: Vec<Complex64>,
    /// Hz per bin.
    pub df: f64,
    /// Length of the trace the spectrum came from.
    pub n_time: usize,
}

impl Spectrum {
    pub fn forward(u: &Trace) -> Spectrum {
        Spectrum::forward_with(u, Padding::Double)
    }

    pub fn forward_with(u: &Trace, padding: Padding) -> Spectrum {
        let n_fft = padding.fft_len(u.len());
        let mut buf: Vec<Complex64> = u
            .samples
            .iter()
            .map(|&x| Complex64::new(x * u.dt, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(n_fft)
            .collect();
        plan(n_fft, false).process(&mut buf);
        Spectrum {
            coefficients: buf,
            df: 1.0 / (n_fft as f64 * u.dt),
            n_time: u.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.len() as f64 * self.df)
    }

    /// Signed frequency of bin `k`; the Nyquist bin of an even-length
    /// transform reports `+N/2·df`.
    pub fn frequency(&self, k: usize) -> f64 {
        let n = self.len();
        if k <= n / 2 {
            k as f64 * self.df
        } else {
            (k as f64 - n as f64) * self.df
        }
    }

    /// True for the bin holding the Nyquist frequency (even lengths only).
    pub fn is_nyquist(&self, k: usize) -> bool {
        self.len().is_multiple_of(2) && k == self.len() / 2
    }

    /// `Σ|X_k|²·df`.
    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.df
    }

    /// Real part of the full-length inverse transform (including padding).
    pub fn inverse_full(&self) -> Vec<f64> {
        let mut buf = self.coefficients.clone();
        plan(buf.len(), true).process(&mut buf);
        buf.iter().map(|c| c.re * self.df).collect()
    }

    /// Inverse transform truncated to the original trace length.
    pub fn inverse(&self, t0: f64) -> Trace {
        let mut full = self.inverse_full();
        full.truncate(self.n_time);
        Trace {
            samples: full,
            dt: self.dt(),
            t0,
        }
    }

    /// Frequency (Hz, nonnegative) of the largest-magnitude bin.
    pub fn peak_frequency(&self) -> f64 {
        let half = self.len() / 2;
        let (k, _) = self.coefficients[..=half]
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bk, bv), (k, c)| {
                let a = c.norm();
                if a > bv {
                    (k, a)
                } else {
                    (bk, bv)
                }
            });
        k as f64 * self.df
    }
}

/// Passband `[0, omega_max]` with a raised-cosine rolloff of width
/// `taper_width` above it. Both in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub omega_max: f64,
    pub taper_width: f64,
}

impl FrequencyBand {
    /// Band with the default taper of `0.2 * omega_max`.
    pub fn new(omega_max: f64) -> Result<Self> {
        FrequencyBand::with_taper(omega_max, 0.2 * omega_max)
    }

    pub fn with_taper(omega_max: f64, taper_width: f64) -> Result<Self> {
        if !(omega_max >= 0.0) || !(taper_width >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "band needs omega_max >= 0 and taper_width >= 0, got {omega_max}, {taper_width}"
            )));
        }
        Ok(FrequencyBand {
            omega_max,
            taper_width,
        })
    }

    /// Filter gain at frequency `f` (sign ignored).
    pub fn gain(&self, f: f64) -> f64 {
        let f = f.abs();
        if f <= self.omega_max {
            1.0
        } else if f <= self.omega_max + self.taper_width {
            0.5 * (1.0 + (PI * (f - self.omega_max) / self.taper_width).cos())
        } else {
            0.0
        }
    }
}

/// Ricker wavelet `(1 − 2π²f²τ²)·exp(−π²f²τ²)` with `τ = t − delay`.
pub fn ricker_value(f_center: f64, tau: f64) -> f64 {
    let a = (PI * f_center * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Sampled Ricker wavelet on `[0, duration]`, peaking at `delay`.
pub fn ricker(f_center: f64, dt: f64, duration: f64, delay: f64) -> Result<Trace> {
    if !(f_center > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ricker center frequency must be positive, got {f_center}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if dt >= 1.0 / (10.0 * f_center) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} undersamples a {f_center} Hz Ricker (need dt < {})",
            1.0 / (10.0 * f_center)
        )));
    }
    let n = (duration / dt).round() as usize + 1;
    Trace::from_fn(n.max(2), dt, 0.0, |t| ricker_value(f_center, t - delay))
}

/// Hilbert transform, `Ĥu(ω) = −i·sgn(ω)·û(ω)`, with zero-padded DFTs.
pub fn hilbert(u: &Trace) -> Trace {
    hilbert_with(u, Padding::Double)
}

pub fn hilbert_with(u: &Trace, padding: Padding) -> Trace {
    let mut spec = Spectrum::forward_with(u, padding);
    let n = spec.len();
    for k in 0..n {
        let c = spec.coefficients[k];
        spec.coefficients[k] = if k == 0 || spec.is_nyquist(k) {
            Complex64::new(0.0, 0.0)
        } else if k < n.div_ceil(2) {
            Complex64::new(c.im, -c.re)
        } else {
            Complex64::new(-c.im, c.re)
        };
    }
    spec.inverse(u.t0)
}

/// Magnitude of the analytic signal `|u + iℋu|`.
pub fn envelope(u: &Trace) -> Trace {
    envelope_with(u, Padding::Double)
}

pub fn envelope_with(u: &Trace, padding: Padding) -> Trace {
    let h = hilbert_with(u, padding);
    u.with_samples(
        u.samples
            .iter()
            .zip(&h.samples)
            .map(|(a, b)| a.hypot(*b))
            .collect(),
    )
}

/// Low-frequency augmentation transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfaKind {
    /// `u + |u + iℋu|`
    #[default]
    HilbertSum,
    /// `u²`
    Square,
    /// `|u|`
    Abs,
}

impl LfaKind {
    pub const ALL: [LfaKind; 3] = [LfaKind::HilbertSum, LfaKind::Square, LfaKind::Abs];

    pub fn as_str(self) -> &'static str {
        match self {
            LfaKind::HilbertSum => "hilbert_sum",
            LfaKind::Square => "square",
            LfaKind::Abs => "abs",
        }
    }
}

impl fmt::Display for LfaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LfaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hilbert_sum" | "hilbert" => Ok(LfaKind::HilbertSum),
            "square" => Ok(LfaKind::Square),
            "abs" => Ok(LfaKind::Abs),
            other => Err(Error::InvalidArgument(format!("unknown LFA kind `{other}`"))),
        }
    }
}

pub fn lfa(u: &Trace, kind: LfaKind) -> Trace {
    lfa_with(u, kind, Padding::Double)
}

pub fn lfa_with(u: &Trace, kind: LfaKind, padding: Padding) -> Trace {
    match kind {
        LfaKind::HilbertSum => {
            let env = envelope_with(u, padding);
            u.with_samples(u.samples.iter().zip(&env.samples).map(|(a, e)| a + e).collect())
        }
        LfaKind::Square => u.map(|x| x * x),
        LfaKind::Abs => u.map(f64::abs),
    }
}

/// Zero-phase low-pass filter with a raised-cosine taper.
pub fn lowpass(u: &Trace, band: &FrequencyBand) -> Result<Trace> {
    lowpass_with(u, band, Padding::Double)
}

pub fn lowpass_with(u: &Trace, band: &FrequencyBand, padding: Padding) -> Result<Trace> {
    check_band(u, band)?;
    let mut spec = Spectrum::forward_with(u, padding);
    apply_gain(&mut spec, band);
    Ok(spec.inverse(u.t0))
}

fn check_band(u: &Trace, band: &FrequencyBand) -> Result<()> {
    if band.omega_max > u.nyquist() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "passband edge {} Hz exceeds Nyquist {} Hz",
            band.omega_max,
            u.nyquist()
        )));
    }
    Ok(())
}

fn apply_gain(spec: &mut Spectrum, band: &FrequencyBand) {
    for k in 0..spec.len() {
        let g = band.gain(spec.frequency(k));
        spec.coefficients[k] *= g;
    }
}

/// Trapezoidal rule on uniformly spaced samples.
pub fn trapezoid(f: &[f64], dt: f64) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * (f[0] + f[n - 1]) + f[1..n - 1].iter().sum::<f64>()),
    }
}

/// Quadrature weights matching [`trapezoid`].
pub fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![dt; n];
    if n >= 2 {
        w[0] = 0.5 * dt;
        w[n - 1] = 0.5 * dt;
    }
    w
}

/// A low-passed signal that can be evaluated, with its first two
/// derivatives, at arbitrary times.
///
/// Values and spectral derivatives are kept on the whole padded DFT grid, so
/// the signal is periodic with period `n_fft * dt` and smooth across the
/// record end. Between samples a quintic Hermite interpolant of
/// `(value, d/dt, d²/dt²)` is used; the derivatives returned by [`eval`]
/// are exact derivatives of that interpolant.
///
/// [`eval`]: BandlimitedSignal::eval
#[derive(Debug, Clone)]
pub struct BandlimitedSignal {
    values: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    dt: f64,
    t0: f64,
    n_time: usize,
}

impl BandlimitedSignal {
    pub fn new(u: &Trace, band: &FrequencyBand) -> Result<Self> {
        check_band(u, band)?;
        let mut spec = Spectrum::forward(u);
        apply_gain(&mut spec, band);
        let mut s1 = spec.clone();
        let mut s2 = spec.clone();
        for k in 0..spec.len() {
            let w = 2.0 * PI * spec.frequency(k);
            if spec.is_nyquist(k) {
                s1.coefficients[k] = Complex64::new(0.0, 0.0);
            } else {
                s1.coefficients[k] *= Complex64::new(0.0, w);
            }
            s2.coefficients[k] *= -w * w;
        }
        Ok(BandlimitedSignal {
            values: spec.inverse_full(),
            d1: s1.inverse_full(),
            d2: s2.inverse_full(),
            dt: u.dt,
            t0: u.t0,
            n_time: u.len(),
        })
    }

    /// Filtered samples on the original time axis.
    pub fn samples(&self) -> &[f64] {
        &self.values[..self.n_time]
    }

    pub fn to_trace(&self) -> Trace {
        Trace {
            samples: self.samples().to_vec(),
            dt: self.dt,
            t0: self.t0,
        }
    }

    /// `(U(t), U'(t), U''(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.values.len() as i64;
        let x = (t - self.t0) / self.dt;
        let j = x.floor();
        let s = x - j;
        let j0 = (j as i64).rem_euclid(n) as usize;
        let j1 = (j0 + 1) % n as usize;
        let h = self.dt;
        let (y0, p0, q0) = (self.values[j0], self.d1[j0] * h, self.d2[j0] * h * h);
        let (y1, p1, q1) = (self.values[j1], self.d1[j1] * h, self.d2[j1] * h * h);

        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        let s5 = s4 * s;
        let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
        let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
        let h2 = 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5;
        let h3 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
        let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
        let h5 = 0.5 * s3 - s4 + 0.5 * s5;
        let v = y0 * h0 + p0 * h1 + q0 * h2 + y1 * h3 + p1 * h4 + q1 * h5;

        let dh0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
        let dh1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
        let dh2 = s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4;
        let dh4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
        let dh5 = 1.5 * s2 - 4.0 * s3 + 2.5 * s4;
        let dv = y0 * dh0 + p0 * dh1 + q0 * dh2 - y1 * dh0 + p1 * dh4 + q1 * dh5;

        let ddh0 = -60.0 * s + 180.0 * s2 - 120.0 * s3;
        let ddh1 = -36.0 * s + 96.0 * s2 - 60.0 * s3;
        let ddh2 = 1.0 - 9.0 * s + 18.0 * s2 - 10.0 * s3;
        let ddh4 = -24.0 * s + 84.0 * s2 - 60.0 * s3;
        let ddh5 = 3.0 * s - 12.0 * s2 + 10.0 * s3;
        let ddv = y0 * ddh0 + p0 * ddh1 + q0 * ddh2 - y1 * ddh0 + p1 * ddh4 + q1 * ddh5;

        (v, dv / h, ddv / (h * h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interior(n: usize) -> std::ops::Range<usize> {
        let cut = n / 20;
        cut..n - cut
    }

    #[test]
    fn ricker_peak_and_roots() {
        let w = ricker(50.0, 1e-4, 0.1, 0.05).unwrap();
        assert_eq!(w.samples[500], 1.0);
        let root = 1.0 / (PI * 50.0 * 2f64.sqrt());
        assert!(ricker_value(50.0, root).abs() < 1e-12);
        assert!(ricker_value(50.0, -root).abs() < 1e-12);
        assert!(ricker_value(50.0, 0.9 * root) > 0.0);
        assert!(ricker_value(50.0, 1.1 * root) < 0.0);
    }

    #[test]
    fn ricker_spectral_peak() {
        let w = ricker(15.0, 1e-3, 0.5, 0.25).unwrap();
        let f = Spectrum::forward(&w).peak_frequency();
        assert!((14.0..=16.0).contains(&f), "peak at {f}");
    }

    #[test]
    fn ricker_rejects_bad_arguments() {
        assert!(ricker(0.0, 1e-3, 1.0, 0.5).is_err());
        assert!(ricker(10.0, -1e-3, 1.0, 0.5).is_err());
        assert!(ricker(10.0, 0.02, 1.0, 0.5).is_err());
    }

    #[test]
    fn trace_invariants() {
        assert!(Trace::new(vec![1.0], 0.1, 0.0).is_err());
        assert!(Trace::new(vec![1.0, 2.0], 0.0, 0.0).is_err());
        let a = Trace::zeros(4, 0.1, 0.0).unwrap();
        let b = Trace::zeros(5, 0.1, 0.0).unwrap();
        assert!(a.check_comparable(&b).is_err());
    }

    #[test]
    fn round_trip_and_parseval() {
        let u = Trace::from_fn(300, 2e-3, 0.1, |t| (t * 40.0).sin() * (-(t - 0.4).powi(2) * 50.0).exp())
            .unwrap();
        let spec = Spectrum::forward(&u);
        let back = spec.inverse(u.t0);
        let scale = u.max_abs();
        for (a, b) in u.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
        let e_time: f64 = u.samples.iter().map(|x| x * x).sum::<f64>() * u.dt;
        assert!((e_time - spec.energy()).abs() <= 1e-8 * e_time);
    }

    #[test]
    fn hilbert_of_periodic_cosine_is_sine() {
        let n = 1024;
        let dt = 1.0 / n as f64;
        let u = Trace::from_fn(n, dt, 0.0, |t| (2.0 * PI * 10.0 * t).cos()).unwrap();
        let h = hilbert_with(&u, Padding::None);
        for i in interior(n) {
            let want = (2.0 * PI * 10.0 * u.time(i)).sin();
            assert!((h.samples[i] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn hilbert_of_constant_vanishes() {
        let u = Trace::new(vec![3.0; 100], 0.01, 0.0).unwrap();
        assert!(hilbert_with(&u, Padding::None).max_abs() < 1e-12);
    }

    #[test]
    fn analytic_signal_has_no_negative_frequencies() {
        let u = ricker(15.0, 1e-3, 0.5, 0.25).unwrap();
        let h = hilbert(&u);
        let n_fft = Padding::Double.fft_len(u.len());
        let mut buf: Vec<Complex64> = u
            .samples
            .iter()
            .zip(&h.samples)
            .map(|(&a, &b)| Complex64::new(a, b))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(n_fft)
            .collect();
        plan(n_fft, false).process(&mut buf);
        let pos: f64 = buf[1..n_fft / 2].iter().map(|c| c.norm_sqr()).sum();
        let neg: f64 = buf[n_fft / 2 + 1..].iter().map(|c| c.norm_sqr()).sum();
        assert!(neg < 1e-6 * pos, "neg {neg} pos {pos}");
    }

    #[test]
    fn envelope_dominates_signal() {
        let u = ricker(15.0, 1e-3, 0.5, 0.25).unwrap();
        let env = envelope(&u);
        for (e, x) in env.samples.iter().zip(&u.samples) {
            assert!(*e >= x.abs() - 1e-10);
        }
    }

    #[test]
    fn lfa_of_zero_is_zero() {
        let u = Trace::zeros(64, 0.01, 0.0).unwrap();
        for kind in LfaKind::ALL {
            assert!(lfa(&u, kind).max_abs() == 0.0);
        }
    }

    #[test]
    fn lfa_hilbert_sum_of_cosine() {
        let n = 1000;
        let dt = 1e-3;
        let u = Trace::from_fn(n, dt, 0.0, |t| (2.0 * PI * 20.0 * t).cos()).unwrap();
        let uh = lfa_with(&u, LfaKind::HilbertSum, Padding::None);
        for i in interior(n) {
            assert!((uh.samples[i] - (u.samples[i] + 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn lfa_creates_dc_energy() {
        let u = ricker(15.0, 1e-3, 0.5, 0.25).unwrap();
        let dc_u = Spectrum::forward(&u).coefficients[0].re;
        let dc_h = Spectrum::forward(&lfa(&u, LfaKind::HilbertSum)).coefficients[0].re;
        assert!(dc_h > 0.0);
        assert!(dc_h > dc_u.abs());
        for kind in LfaKind::ALL {
            let m = lfa(&u, kind).samples.iter().sum::<f64>();
            assert!(m >= 0.0, "{kind} has negative mean");
        }
    }

    #[test]
    fn lfa_kind_parses() {
        for kind in LfaKind::ALL {
            assert_eq!(kind.as_str().parse::<LfaKind>().unwrap(), kind);
        }
        assert!("cube".parse::<LfaKind>().is_err());
    }

    fn windowed_sine(f: f64) -> Trace {
        Trace::from_fn(6000, 1e-3, 0.0, move |t| {
            (2.0 * PI * f * t).sin() * (-((t - 3.0) / 0.5).powi(2)).exp()
        })
        .unwrap()
    }

    #[test]
    fn lowpass_passband_identity() {
        let u = windowed_sine(2.0);
        let band = FrequencyBand::with_taper(5.0, 1.0).unwrap();
        let y = lowpass(&u, &band).unwrap();
        for i in interior(u.len()) {
            assert!((y.samples[i] - u.samples[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lowpass_stopband() {
        let u = windowed_sine(20.0);
        let band = FrequencyBand::with_taper(5.0, 1.0).unwrap();
        let y = lowpass(&u, &band).unwrap();
        let rms = |t: &Trace| (t.samples.iter().map(|x| x * x).sum::<f64>() / t.len() as f64).sqrt();
        assert!(rms(&y) < 1e-6 * rms(&u));
    }

    #[test]
    fn lowpass_nested_passbands() {
        let u = windowed_sine(3.0).with_samples(
            windowed_sine(3.0)
                .samples
                .iter()
                .zip(&windowed_sine(9.0).samples)
                .map(|(a, b)| a + b)
                .collect(),
        );
        let inner = FrequencyBand::with_taper(4.0, 2.0).unwrap();
        let outer = FrequencyBand::with_taper(6.5, 1.0).unwrap();
        // Periodic view: nested passbands compose exactly.
        let once = lowpass_with(&u, &inner, Padding::None).unwrap();
        let twice = lowpass_with(&once, &outer, Padding::None).unwrap();
        for i in interior(u.len()) {
            assert!((once.samples[i] - twice.samples[i]).abs() < 1e-10);
        }
        // Padded view: truncating the filter tails at the record ends leaves
        // a small residue.
        let once = lowpass(&u, &inner).unwrap();
        let twice = lowpass(&once, &outer).unwrap();
        for i in interior(u.len()) {
            assert!((once.samples[i] - twice.samples[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn lowpass_rejects_band_above_nyquist() {
        let u = windowed_sine(2.0);
        let band = FrequencyBand::new(600.0).unwrap();
        assert!(lowpass(&u, &band).is_err());
    }

    #[test]
    fn trapezoid_examples() {
        let ones = vec![1.0; 7];
        assert_eq!(trapezoid(&ones, 1.0 / 6.0), 1.0);
        let n = 11;
        let lin: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
        assert!((trapezoid(&lin, 0.1) - 0.5).abs() < 1e-15);
        let s: Vec<f64> = (0..1001).map(|i| (2.0 * PI * i as f64 / 1000.0).sin()).collect();
        assert!(trapezoid(&s, 1e-3).abs() < 1e-6);
        let w = trapezoid_weights(n, 0.1);
        let via_w: f64 = lin.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((via_w - trapezoid(&lin, 0.1)).abs() < 1e-15);
    }

    #[test]
    fn bandlimited_eval_matches_grid_and_derivatives() {
        let u = windowed_sine(4.0);
        let band = FrequencyBand::new(20.0).unwrap();
        let s = BandlimitedSignal::new(&u, &band).unwrap();
        let grid = s.samples().to_vec();
        for i in [10, 2500, 3000, 3500] {
            let (v, _, _) = s.eval(u.time(i));
            assert!((v - grid[i]).abs() < 1e-12);
        }
        // derivatives are consistent with finite differences of eval itself
        let h = 1e-6;
        for t in [2.3337, 2.91, 3.2345] {
            let (_, d1, d2) = s.eval(t);
            let (vp, d1p, _) = s.eval(t + h);
            let (vm, d1m, _) = s.eval(t - h);
            assert!((d1 - (vp - vm) / (2.0 * h)).abs() < 1e-5 * d1.abs().max(1.0));
            assert!((d2 - (d1p - d1m) / (2.0 * h)).abs() < 1e-4 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn quintic_reproduces_quintic_polynomials() {
        // A signal whose samples, slopes and curvatures come from a quintic
        // must be reproduced exactly between samples.
        let p = |x: f64| 0.3 - x + 2.0 * x.powi(2) - 0.5 * x.powi(3) + 0.1 * x.powi(4) - 0.02 * x.powi(5);
        let dp = |x: f64| -1.0 + 4.0 * x - 1.5 * x.powi(2) + 0.4 * x.powi(3) - 0.1 * x.powi(4);
        let ddp = |x: f64| 4.0 - 3.0 * x + 1.2 * x.powi(2) - 0.4 * x.powi(3);
        let s = BandlimitedSignal {
            values: vec![p(0.0), p(1.0)],
            d1: vec![dp(0.0), dp(1.0)],
            d2: vec![ddp(0.0), ddp(1.0)],
            dt: 1.0,
            t0: 0.0,
            n_time: 2,
        };
        for x in [0.1, 0.37, 0.5, 0.81] {
            let (v, d1, d2) = s.eval(x);
            assert!((v - p(x)).abs() < 1e-12);
            assert!((d1 - dp(x)).abs() < 1e-12);
            assert!((d2 - ddp(x)).abs() < 1e-12);
        }
    }
}
