//! File formats: raw volumes with JSON sidecars, images, loss traces and reports.
//!
//! Volumes are little-endian `f32` in x-fastest order. The sidecar sits
//! next to the raw file with the extension replaced by `.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DensityVolume;
use crate::math::Aabb;
use crate::renderer::ImageRGBA;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    /// Raw values are mapped from this range to `[0, 1]` on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_range: Option<[f64; 2]>,
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn save_volume(volume: &DensityVolume, raw: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(volume.data.len() * 4);
    for v in &volume.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(raw, bytes)?;
    let sidecar = VolumeSidecar {
        dims: volume.dims,
        box_min: volume.bounds.min,
        box_max: volume.bounds.max,
        value_range: None,
    };
    fs::write(sidecar_path(raw), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_volume(raw: &Path) -> Result<DensityVolume> {
    let side = sidecar_path(raw);
    if !side.exists() {
        return Err(Error::MissingMetadata(side));
    }
    let sidecar: VolumeSidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
    let bytes = fs::read(raw)?;
    let count: usize = sidecar.dims.iter().product();
    if bytes.len() != count * 4 {
        return Err(Error::CorruptFile {
            path: raw.to_path_buf(),
            reason: format!("expected {} bytes for dims {:?}, found {}", count * 4, sidecar.dims, bytes.len()),
        });
    }
    let mut data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some([lo, hi]) = sidecar.value_range {
        if !(hi > lo) {
            return Err(Error::CorruptFile {
                path: side,
                reason: format!("empty value range [{lo}, {hi}]"),
            });
        }
        data.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    }
    let volume = DensityVolume::new(sidecar.dims, data, Aabb::new(sidecar.box_min, sidecar.box_max)).map_err(|e| {
        Error::CorruptFile {
            path: raw.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    Ok(volume)
}

/// Binary P6 with the premultiplied color composited over white.
pub fn ppm_bytes(img: &ImageRGBA) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.data {
        for c in 0..3 {
            let v = p[c] + (1.0 - p[3]);
            out.push((255.0 * v.clamp(0.0, 1.0)).round() as u8);
        }
    }
    out
}

pub fn save_ppm(img: &ImageRGBA, path: &Path) -> Result<()> {
    fs::write(path, ppm_bytes(img))?;
    Ok(())
}

/// `W * H * 4` little-endian `f32`, premultiplied, no header.
pub fn save_rgba(img: &ImageRGBA, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.data.len() * 16);
    for p in &img.data {
        for v in p {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_rgba(path: &Path, width: usize, height: usize) -> Result<ImageRGBA> {
    let bytes = fs::read(path)?;
    if bytes.len() != width * height * 16 {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes for {width}x{height}, found {}", width * height * 16, bytes.len()),
        });
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = vals.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    Ok(ImageRGBA { width, height, data })
}

/// One row of a loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub data: f64,
    pub prior: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("iter,total,data,prior\n");
    for r in rows {
        // `{:?}` prints the shortest representation that round-trips
        s.push_str(&format!("{},{:?},{:?},{:?}\n", r.iter, r.total, r.data, r.prior));
    }
    s
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(trace_csv(rows).as_bytes())?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
