//! On-disk formats.
//!
//! Gridded arrays are a JSON header plus an adjacent raw file of
//! little-endian `f32` values; the header names the raw file relative to
//! itself. Either path of the pair may be passed to the readers.
//!
//! | array       | header fields                             | raw order                 |
//! |-------------|-------------------------------------------|---------------------------|
//! | volume      | `dims`, `spacing`, `origin`               | x fastest, then y, then z |
//! | polar image | `n_r`, `dr`, `n_theta`, `dz`, `z_positions` | r fastest, then θ, then z |
//! | feature map | `classes`, `n_theta`, `n_z`               | θ fastest, then z, then class |
//!
//! Centerlines are a JSON array of `{point, u, v, t, arc_mm}` nodes;
//! `arc_mm` is optional and recomputed from the points when absent.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureClass, FeatureMap};
use crate::geometry::{Centerline, Frame, PolarConfig, PolarImage, Vec3, Volume3};
use crate::registration::TraceRow;

const DTYPE: &str = "f32le";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), message: message.into() }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_raw(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != 4 * expected {
        return Err(format_err(path, format!("expected {expected} f32 values, found {} bytes", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

/// Writes `header` to `<path>.json` and `data` to `<path>.bin`, where `path`
/// may carry either extension.
fn write_pair<H: Serialize>(path: &Path, header: &H, data: impl Iterator<Item = f32>) -> Result<()> {
    write_json(&header_path(path), header)?;
    write_raw(&path.with_extension("bin"), data)
}

fn check_dtype(path: &Path, dtype: &str) -> Result<()> {
    if dtype != DTYPE {
        return Err(format_err(path, format!("unsupported dtype `{dtype}`")));
    }
    Ok(())
}

fn data_path(header: &Path, data: &str) -> PathBuf {
    header.parent().unwrap_or(Path::new(".")).join(data)
}

fn raw_name(path: &Path) -> String {
    path.with_extension("bin").file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    data: String,
}

pub fn write_volume(path: &Path, v: &Volume3) -> Result<()> {
    let header = VolumeHeader {
        dims: v.dims(),
        spacing: v.spacing(),
        origin: v.origin(),
        dtype: DTYPE.into(),
        data: raw_name(path),
    };
    write_pair(path, &header, v.data().iter().copied())
}

pub fn read_volume(path: &Path) -> Result<Volume3> {
    let hp = header_path(path);
    let h: VolumeHeader = read_json(&hp)?;
    check_dtype(&hp, &h.dtype)?;
    let data = read_raw(&data_path(&hp, &h.data), h.dims.iter().product())?;
    Volume3::new(h.dims, h.spacing, h.origin, data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolarHeader {
    n_r: usize,
    dr: f64,
    n_theta: usize,
    dz: f64,
    z_positions: Vec<f64>,
    dtype: String,
    data: String,
}

pub fn write_polar(path: &Path, img: &PolarImage) -> Result<()> {
    let c = img.config;
    let header = PolarHeader {
        n_r: c.n_r,
        dr: c.dr,
        n_theta: c.n_theta,
        dz: c.dz,
        z_positions: img.z_positions.clone(),
        dtype: DTYPE.into(),
        data: raw_name(path),
    };
    write_pair(path, &header, img.data.iter().map(|&x| x as f32))
}

pub fn read_polar(path: &Path) -> Result<PolarImage> {
    let hp = header_path(path);
    let h: PolarHeader = read_json(&hp)?;
    check_dtype(&hp, &h.dtype)?;
    let config = PolarConfig { n_r: h.n_r, dr: h.dr, n_theta: h.n_theta, dz: h.dz };
    let data = read_raw(&data_path(&hp, &h.data), h.n_r * h.n_theta * h.z_positions.len())?;
    PolarImage::new(config, h.z_positions, data.into_iter().map(f64::from).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureHeader {
    classes: Vec<FeatureClass>,
    n_theta: usize,
    n_z: usize,
    dtype: String,
    data: String,
}

pub fn write_feature_map(path: &Path, fm: &FeatureMap) -> Result<()> {
    let header = FeatureHeader {
        classes: fm.classes.clone(),
        n_theta: fm.n_theta,
        n_z: fm.n_z,
        dtype: DTYPE.into(),
        data: raw_name(path),
    };
    write_pair(path, &header, fm.probs.iter().map(|&x| x as f32))
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let hp = header_path(path);
    let h: FeatureHeader = read_json(&hp)?;
    check_dtype(&hp, &h.dtype)?;
    let data = read_raw(&data_path(&hp, &h.data), h.classes.len() * h.n_theta * h.n_z)?;
    FeatureMap::new(h.classes, h.n_theta, h.n_z, data.into_iter().map(f64::from).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CenterlineNode {
    point: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
    t: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arc_mm: Option<f64>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn write_centerline(path: &Path, c: &Centerline) -> Result<()> {
    let nodes: Vec<CenterlineNode> = c
        .points()
        .iter()
        .zip(c.frames())
        .zip(c.arc_length())
        .map(|((p, f), &s)| CenterlineNode { point: arr(p), u: arr(&f.u), v: arr(&f.v), t: arr(&f.t), arc_mm: Some(s) })
        .collect();
    write_json(path, &nodes)
}

pub fn read_centerline(path: &Path) -> Result<Centerline> {
    let nodes: Vec<CenterlineNode> = read_json(path)?;
    let points = nodes.iter().map(|n| vec3(n.point)).collect();
    let frames = nodes.iter().map(|n| Frame { u: vec3(n.u), v: vec3(n.v), t: vec3(n.t) }).collect();
    let arcs: Option<Vec<f64>> = nodes.iter().map(|n| n.arc_mm).collect();
    match arcs {
        Some(arcs) => Centerline::with_arc_length(points, frames, arcs),
        None => Centerline::new(points, frames),
    }
}

pub const TRACE_CSV_HEADER: &str = "iter,total,dice_ce,nmi,reg,penalty";

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.iter, r.total, r.dice_ce, r.nmi, r.reg, r.penalty));
    }
    fs::write(path, out).map_err(io_err(path))
}
