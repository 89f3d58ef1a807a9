//! File formats: volumes and signals as a text header plus a raw
//! little-endian payload, poses as key-value text, MAP images as 16-bit PGM
//! and sensor estimates as CSV.
//!
//! Headers hold one `key value...` entry per line; `#` starts a comment.
//! Floats are written in shortest round-trip form, so headers are lossless.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::SensorEstimate;
use crate::metrics::MapImage;
use crate::pose::{Pose, EULER_CONVENTION};
use crate::radiate::{MediumConfig, SignalSet, TimeGrid, VolumeGrid};
use crate::Vec3;

const VOLUME_TAG: &str = "pasfm-volume 1";
const SIGNALS_TAG: &str = "pasfm-signals 1";
const POSE_TAG: &str = "pasfm-pose 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleType {
    #[default]
    Float32Le,
    Float64Le,
}

impl SampleType {
    fn name(self) -> &'static str {
        match self {
            SampleType::Float32Le => "float32_le",
            SampleType::Float64Le => "float64_le",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "float32_le" => Some(SampleType::Float32Le),
            "float64_le" => Some(SampleType::Float64Le),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            SampleType::Float32Le => 4,
            SampleType::Float64Le => 8,
        }
    }
}

fn encode(values: &[f64], ty: SampleType) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * ty.width());
    for &v in values {
        match ty {
            SampleType::Float32Le => out.extend_from_slice(&(v as f32).to_le_bytes()),
            SampleType::Float64Le => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn decode(bytes: &[u8], ty: SampleType) -> Vec<f64> {
    match ty {
        SampleType::Float32Le => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
        SampleType::Float64Le => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    }
}

/// Parsed `key value...` header.
struct Header {
    path: PathBuf,
    entries: HashMap<String, Vec<String>>,
}

impl Header {
    fn read(path: &Path, tag: &str) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let first = lines.next().unwrap_or("");
        let found = first.strip_prefix("format").map(str::trim);
        if found != Some(tag) {
            return Err(Error::format(path, format!("expected `format {tag}`, found `{first}`")));
        }
        let mut entries = HashMap::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("line is not empty").to_string();
            entries.insert(key, parts.map(str::to_string).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn values(&self, key: &str, count: usize) -> Result<&[String]> {
        let v = self
            .entries
            .get(key)
            .ok_or_else(|| Error::format(&self.path, format!("missing `{key}`")))?;
        if v.len() != count {
            return Err(Error::format(
                &self.path,
                format!("`{key}` needs {count} value(s), found {}", v.len()),
            ));
        }
        Ok(v)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, count: usize) -> Result<Vec<T>> {
        self.values(key, count)?
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::format(&self.path, format!("`{key}`: cannot parse `{s}`")))
            })
            .collect()
    }

    fn one<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        Ok(self.parse(key, 1)?.remove(0))
    }

    fn text(&self, key: &str) -> Result<&str> {
        Ok(&self.values(key, 1)?[0])
    }

    fn sample_type(&self) -> Result<SampleType> {
        let s = self.text("sample_type")?;
        SampleType::parse(s).ok_or_else(|| Error::format(&self.path, format!("unknown sample type `{s}`")))
    }

    fn payload(&self, ty: SampleType, count: usize) -> Result<Vec<f64>> {
        let name = self.text("data_file")?;
        let data_path = self.path.parent().unwrap_or(Path::new(".")).join(name);
        let bytes = fs::read(&data_path)?;
        if bytes.len() != count * ty.width() {
            return Err(Error::format(
                &data_path,
                format!("payload has {} bytes, expected {}", bytes.len(), count * ty.width()),
            ));
        }
        Ok(decode(&bytes, ty))
    }
}

/// Payload path next to `header`: same stem, `.raw` extension.
fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes `volume` as a header at `path` plus a `.raw` payload beside it.
pub fn write_volume(path: &Path, volume: &VolumeGrid, sample_type: SampleType) -> Result<()> {
    let data = payload_path(path);
    let [nx, ny, nz] = volume.dims();
    let o = volume.origin();
    let header = format!(
        "format {VOLUME_TAG}\ndims {nx} {ny} {nz}\norigin {} {} {}\npitch {}\nsample_type {}\norder x_fastest\ndata_file {}\n",
        o.x,
        o.y,
        o.z,
        volume.pitch(),
        sample_type.name(),
        file_name(&data)
    );
    write_text(path, &header)?;
    fs::write(data, encode(volume.intensities(), sample_type))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<VolumeGrid> {
    let h = Header::read(path, VOLUME_TAG)?;
    let dims: Vec<usize> = h.parse("dims", 3)?;
    let origin: Vec<f64> = h.parse("origin", 3)?;
    let pitch: f64 = h.one("pitch")?;
    if h.text("order")? != "x_fastest" {
        return Err(Error::format(path, "only x_fastest voxel order is supported"));
    }
    let ty = h.sample_type()?;
    let dims = [dims[0], dims[1], dims[2]];
    let values = h.payload(ty, dims.iter().product())?;
    VolumeGrid::new(dims, Vec3::new(origin[0], origin[1], origin[2]), pitch, values)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `signals` (row-major, one row per detector) as header plus payload.
pub fn write_signals(path: &Path, signals: &SignalSet, sample_type: SampleType) -> Result<()> {
    let data = payload_path(path);
    let t = signals.time();
    let header = format!(
        "format {SIGNALS_TAG}\nn_detectors {}\nn_samples {}\nt0 {}\ndt {}\nspeed_of_sound {}\nsample_type {}\ndata_file {}\n",
        signals.n_detectors(),
        t.n_samples,
        t.t0,
        t.dt,
        signals.medium().speed_of_sound,
        sample_type.name(),
        file_name(&data)
    );
    write_text(path, &header)?;
    fs::write(data, encode(signals.data(), sample_type))?;
    Ok(())
}

pub fn read_signals(path: &Path) -> Result<SignalSet> {
    let h = Header::read(path, SIGNALS_TAG)?;
    let n_d: usize = h.one("n_detectors")?;
    let n_t: usize = h.one("n_samples")?;
    let wrap = |e: Error| Error::format(path, e.to_string());
    let time = TimeGrid::new(h.one("t0")?, h.one("dt")?, n_t).map_err(wrap)?;
    let medium = MediumConfig::new(h.one("speed_of_sound")?).map_err(wrap)?;
    let ty = h.sample_type()?;
    let values = h.payload(ty, n_d * n_t)?;
    SignalSet::from_rows(values, n_d, time, medium).map_err(wrap)
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let [a, b, c] = pose.euler;
    let t = pose.translation;
    write_text(
        path,
        &format!(
            "format {POSE_TAG}\nconvention {EULER_CONVENTION}\neuler_rad {a} {b} {c}\ntranslation_mm {} {} {}\n",
            t.x, t.y, t.z
        ),
    )
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let h = Header::read(path, POSE_TAG)?;
    let conv = h.text("convention")?;
    if conv != EULER_CONVENTION {
        return Err(Error::format(path, format!("unsupported Euler convention `{conv}`")));
    }
    let e: Vec<f64> = h.parse("euler_rad", 3)?;
    let t: Vec<f64> = h.parse("translation_mm", 3)?;
    Ok(Pose {
        euler: [e[0], e[1], e[2]],
        translation: Vec3::new(t[0], t[1], t[2]),
    })
}

/// Binary 16-bit PGM, scaled so the largest pixel maps to 65535. Row `v`
/// of the image is written top to bottom.
pub fn write_pgm16(path: &Path, image: &MapImage) -> Result<()> {
    let peak = image.max_value();
    let scale = if peak > 0.0 { 65535.0 / peak } else { 0.0 };
    let mut bytes = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    for &p in &image.pixels {
        let v = (p.max(0.0) * scale).round().min(65535.0) as u16;
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

const ESTIMATE_COLUMNS: &str = "index,x_mm,y_mm,z_mm,loss,converged";

pub fn write_estimates_csv(path: &Path, estimates: &[SensorEstimate]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{ESTIMATE_COLUMNS}")?;
    for e in estimates {
        let p = e.position;
        writeln!(out, "{},{},{},{},{},{}", e.index, p.x, p.y, p.z, e.final_loss, e.converged)?;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_estimates_csv(path: &Path) -> Result<Vec<SensorEstimate>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(ESTIMATE_COLUMNS) {
        return Err(Error::format(path, format!("expected header `{ESTIMATE_COLUMNS}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::format(path, format!("line {}: malformed row `{line}`", n + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(SensorEstimate::new(
                f[0].parse().map_err(|_| bad())?,
                Vec3::new(num(f[1])?, num(f[2])?, num(f[3])?),
                num(f[4])?,
                f[5].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// Pretty-printed JSON of any serialisable value.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
