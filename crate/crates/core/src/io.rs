//! On-disk formats: CSV traces, little-endian `f32` blocks with JSON
//! sidecars, and JSON manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Trace;
use crate::wave::{ShotGather, SourceTerm, VelocityModel};

/// `<path>.json`, next to a binary block.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn decode_f32(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::format(path, format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let v = decode_f32(path, &bytes)?;
    if v.len() != expected {
        return Err(Error::format(path, format!("expected {expected} values, found {}", v.len())));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    n: usize,
    dt: f64,
    t0: f64,
}

/// Two columns `t,value`.
pub fn write_trace_csv(path: &Path, u: &Trace) -> Result<()> {
    let mut s = String::from("t,value\n");
    for (t, v) in u.times().zip(&u.samples) {
        s.push_str(&format!("{t},{v}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a `t,value` CSV; the times must be uniformly spaced.
pub fn read_trace_csv(path: &Path) -> Result<Trace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim().eq_ignore_ascii_case("t,value") => {}
        other => {
            return Err(Error::format(path, format!("expected header `t,value`, found {other:?}")));
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let mut cols = line.split(',').map(str::trim);
        let parse = |c: Option<&str>| -> Result<f64> {
            c.and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad number on data line {}", k + 1)))
        };
        times.push(parse(cols.next())?);
        values.push(parse(cols.next())?);
    }
    if times.len() < 2 {
        return Err(Error::format(path, "a trace needs at least 2 samples"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, t) in times.iter().enumerate() {
        if (t - (times[0] + i as f64 * dt)).abs() > 1e-6 * dt.abs().max(1e-12) {
            return Err(Error::format(path, format!("time column is not uniformly spaced at line {}", i + 2)));
        }
    }
    Trace::new(values, dt, times[0]).map_err(|e| Error::format(path, e.to_string()))
}

/// `f32` samples at `path` plus the `{n, dt, t0}` sidecar.
pub fn write_trace_bin(path: &Path, u: &Trace) -> Result<()> {
    fs::write(path, encode_f32(&u.samples)).map_err(|e| Error::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &TraceHeader {
            n: u.len(),
            dt: u.dt,
            t0: u.t0,
        },
    )
}

pub fn read_trace_bin(path: &Path) -> Result<Trace> {
    let h: TraceHeader = read_json(&sidecar_path(path))?;
    Trace::new(read_f32(path, h.n)?, h.dt, h.t0).map_err(|e| Error::format(path, e.to_string()))
}

/// CSV for a `.csv` extension, binary with sidecar otherwise.
pub fn read_trace(path: &Path) -> Result<Trace> {
    if is_csv(path) {
        read_trace_csv(path)
    } else {
        read_trace_bin(path)
    }
}

pub fn write_trace(path: &Path, u: &Trace) -> Result<()> {
    if is_csv(path) {
        write_trace_csv(path, u)
    } else {
        write_trace_bin(path, u)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    nx: usize,
    nz: usize,
    dx: f64,
    origin: (f64, f64),
}

/// Velocities as `f32`, z fastest, plus the `{nx, nz, dx, origin}` sidecar.
pub fn write_model(path: &Path, model: &VelocityModel) -> Result<()> {
    fs::write(path, encode_f32(&model.v)).map_err(|e| Error::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &ModelHeader {
            nx: model.nx,
            nz: model.nz,
            dx: model.dx,
            origin: model.origin,
        },
    )
}

pub fn read_model(path: &Path) -> Result<VelocityModel> {
    let h: ModelHeader = read_json(&sidecar_path(path))?;
    let v = read_f32(path, h.nx * h.nz)?;
    VelocityModel::new(h.nx, h.nz, h.dx, h.origin, v).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotEntry {
    /// Relative to the manifest's directory.
    pub file: String,
    pub source: (f64, f64),
    pub receivers: Vec<(f64, f64)>,
}

/// Index of a survey directory: one binary file per shot holding one
/// `nt`-sample block per receiver, in receiver order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyManifest {
    pub nt: usize,
    pub dt: f64,
    pub t0: f64,
    /// Source time function shared by all shots, full precision.
    pub wavelet: Vec<f64>,
    pub shots: Vec<ShotEntry>,
}

pub const SURVEY_MANIFEST: &str = "survey.json";

pub fn write_survey(dir: &Path, gathers: &[ShotGather]) -> Result<()> {
    let first = gathers
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot write an empty survey".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut shots = Vec::with_capacity(gathers.len());
    for (k, g) in gathers.iter().enumerate() {
        let file = format!("shot_{k:04}.bin");
        let path = dir.join(&file);
        let mut bytes = Vec::with_capacity(4 * g.nt * g.n_receivers());
        for t in &g.traces {
            bytes.extend(encode_f32(&t.samples));
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        shots.push(ShotEntry {
            file,
            source: g.source.position,
            receivers: g.receiver_positions.clone(),
        });
    }
    let manifest = SurveyManifest {
        nt: first.nt,
        dt: first.dt,
        t0: first.traces[0].t0,
        wavelet: first.source.wavelet.samples.clone(),
        shots,
    };
    write_json(&dir.join(SURVEY_MANIFEST), &manifest)
}

pub fn read_survey(dir: &Path) -> Result<Vec<ShotGather>> {
    let mpath = dir.join(SURVEY_MANIFEST);
    let m: SurveyManifest = read_json(&mpath)?;
    let wavelet = Trace::new(m.wavelet.clone(), m.dt, 0.0).map_err(|e| Error::format(&mpath, e.to_string()))?;
    m.shots
        .iter()
        .map(|s| {
            let path = dir.join(&s.file);
            let flat = read_f32(&path, m.nt * s.receivers.len())?;
            let traces = flat
                .chunks_exact(m.nt)
                .map(|c| Trace::new(c.to_vec(), m.dt, m.t0))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::format(&path, e.to_string()))?;
            let source = SourceTerm {
                position: s.source,
                wavelet: wavelet.clone(),
            };
            ShotGather::new(source, s.receivers.clone(), traces).map_err(|e| Error::format(&path, e.to_string()))
        })
        .collect()
}
