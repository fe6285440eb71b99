//! Core data model for dynamic PET studies, cardiac ROI masks, and the
//! on-disk study container.
//!
//! A study on disk is one directory:
//!
//! ```text
//! study.meta        key = value text, UTF-8, '#' starts a comment line
//! frame_0000.raw    one file per frame, little-endian f32, x-fastest order
//! mask_rvbp.raw     u8 {0,1}, same voxel order as the frames
//! mask_lvbp.raw
//! mask_myo.raw
//! ```
//!
//! Frames are stored and kept in memory as `f32`, so save/load round-trips
//! bit-exactly. Metadata floats are written in shortest round-trip decimal
//! form and parse back to identical values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array3, Array4, ArrayView3};

use crate::error::{Error, Result};

pub const META_FILE: &str = "study.meta";
pub const CONTAINER_VERSION: u32 = 1;

/// A 4-D dynamic frame sequence with calibrated activity in Bq/mL.
///
/// Frame axis order is `(T, X, Y, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicStudy {
    pub study_id: String,
    pub frames: Array4<f32>,
    /// Voxel spacing (dx, dy, dz) in mm.
    pub voxel_spacing: [f64; 3],
    /// Frame start times in seconds, strictly increasing.
    pub frame_start_times: Vec<f64>,
    /// Frame durations in seconds, strictly positive.
    pub frame_durations: Vec<f64>,
    /// Decay correction factor applied to each frame.
    pub decay_correction_factors: Vec<f64>,
}

impl DynamicStudy {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// Spatial grid shape (X, Y, Z).
    pub fn spatial_shape(&self) -> [usize; 3] {
        let s = self.frames.shape();
        [s[1], s[2], s[3]]
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, f32> {
        self.frames.index_axis(ndarray::Axis(0), i)
    }

    /// Frame mid-times in seconds.
    pub fn frame_mid_times(&self) -> Vec<f64> {
        self.frame_start_times
            .iter()
            .zip(&self.frame_durations)
            .map(|(s, d)| s + 0.5 * d)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.num_frames();
        if t == 0 {
            return Err(Error::validation("study has no frames"));
        }
        for (name, len) in [
            ("frame_durations", self.frame_durations.len()),
            ("frame_start_times", self.frame_start_times.len()),
            ("decay_correction_factors", self.decay_correction_factors.len()),
        ] {
            if len != t {
                return Err(Error::validation(format!(
                    "{name} has length {len}, expected {t} (one per frame)"
                )));
            }
        }
        if self.frame_durations.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::validation("frame durations must be strictly positive"));
        }
        if self
            .frame_start_times
            .windows(2)
            .any(|w| !(w[1] > w[0]))
        {
            return Err(Error::validation("frame start times must be strictly increasing"));
        }
        if self.decay_correction_factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::validation("decay correction factors must be positive"));
        }
        if self.spatial_shape().iter().any(|&n| n < 8) {
            return Err(Error::validation("all spatial dims must be >= 8"));
        }
        if self.voxel_spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::validation("voxel spacing must be strictly positive"));
        }
        Ok(())
    }
}

/// Rough RVBP / LVBP / myocardium segmentations on one study's grid,
/// plus the LV inferior wall center used for cardiac cropping.
#[derive(Debug, Clone, PartialEq)]
pub struct CardiacMasks {
    pub rvbp: Array3<u8>,
    pub lvbp: Array3<u8>,
    pub myo: Array3<u8>,
    pub lv_inferior_wall_center: [usize; 3],
}

impl CardiacMasks {
    pub fn shape(&self) -> [usize; 3] {
        let s = self.rvbp.shape();
        [s[0], s[1], s[2]]
    }

    pub fn validate(&self, grid: [usize; 3]) -> Result<()> {
        for (name, m) in [("rvbp", &self.rvbp), ("lvbp", &self.lvbp), ("myo", &self.myo)] {
            let s = m.shape();
            if [s[0], s[1], s[2]] != grid {
                return Err(Error::validation(format!(
                    "mask {name} shape {s:?} does not match study grid {grid:?}"
                )));
            }
            if m.iter().all(|&v| v == 0) {
                return Err(Error::validation(format!("mask {name} is empty")));
            }
            if m.iter().any(|&v| v > 1) {
                return Err(Error::validation(format!("mask {name} is not binary")));
            }
        }
        // Pairwise disjoint.
        let n_overlap = self
            .rvbp
            .iter()
            .zip(self.lvbp.iter())
            .zip(self.myo.iter())
            .filter(|((&r, &l), &m)| (r & l) | (r & m) | (l & m) != 0)
            .count();
        if n_overlap > 0 {
            return Err(Error::validation(format!(
                "masks overlap on {n_overlap} voxels; RVBP/LVBP/myo must be pairwise disjoint"
            )));
        }
        let c = self.lv_inferior_wall_center;
        if c[0] >= grid[0] || c[1] >= grid[1] || c[2] >= grid[2] {
            return Err(Error::validation(format!(
                "lv_inferior_wall_center {c:?} outside grid {grid:?}"
            )));
        }
        Ok(())
    }
}

fn fmt_f64_list(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_frame_raw(path: &Path, frame: &ArrayView3<'_, f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(frame.len() * 4);
    // x-fastest: iterate z, y outer; x inner.
    let (nx, ny, nz) = frame.dim();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                buf.extend_from_slice(&frame[[x, y, z]].to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn read_frame_raw(path: &Path, shape: [usize; 3]) -> Result<Array3<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let expected = shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::parse(
            path.display().to_string(),
            format!("payload has {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mut out = Array3::zeros((shape[0], shape[1], shape[2]));
    let mut i = 0;
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                out[[x, y, z]] = f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
                i += 4;
            }
        }
    }
    Ok(out)
}

fn write_mask_raw(path: &Path, mask: &Array3<u8>) -> Result<()> {
    let (nx, ny, nz) = mask.dim();
    let mut buf = Vec::with_capacity(mask.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                buf.push(mask[[x, y, z]]);
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn read_mask_raw(path: &Path, shape: [usize; 3]) -> Result<Array3<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let expected = shape.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::parse(
            path.display().to_string(),
            format!("mask has {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mut out = Array3::zeros((shape[0], shape[1], shape[2]));
    let mut i = 0;
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                out[[x, y, z]] = bytes[i];
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Persist a study and its masks under `path` (created if absent).
pub fn save_study(study: &DynamicStudy, masks: &CardiacMasks, path: &Path) -> Result<()> {
    study.validate()?;
    masks.validate(study.spatial_shape())?;
    fs::create_dir_all(path)?;

    let [nx, ny, nz] = study.spatial_shape();
    let mut meta = String::new();
    meta.push_str("# dynpet study container\n");
    meta.push_str(&format!("format_version = {CONTAINER_VERSION}\n"));
    meta.push_str(&format!("study_id = {}\n", study.study_id));
    meta.push_str(&format!("shape = {nx} {ny} {nz}\n"));
    meta.push_str(&format!("n_frames = {}\n", study.num_frames()));
    meta.push_str(&format!(
        "voxel_spacing = {}\n",
        fmt_f64_list(&study.voxel_spacing)
    ));
    meta.push_str(&format!(
        "frame_start_times = {}\n",
        fmt_f64_list(&study.frame_start_times)
    ));
    meta.push_str(&format!(
        "frame_durations = {}\n",
        fmt_f64_list(&study.frame_durations)
    ));
    meta.push_str(&format!(
        "decay_correction_factors = {}\n",
        fmt_f64_list(&study.decay_correction_factors)
    ));
    let c = masks.lv_inferior_wall_center;
    meta.push_str(&format!(
        "lv_inferior_wall_center = {} {} {}\n",
        c[0], c[1], c[2]
    ));
    fs::write(path.join(META_FILE), meta)?;

    for i in 0..study.num_frames() {
        write_frame_raw(&path.join(format!("frame_{i:04}.raw")), &study.frame(i))?;
    }
    write_mask_raw(&path.join("mask_rvbp.raw"), &masks.rvbp)?;
    write_mask_raw(&path.join("mask_lvbp.raw"), &masks.lvbp)?;
    write_mask_raw(&path.join("mask_myo.raw"), &masks.myo)?;
    Ok(())
}

fn parse_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(path.display().to_string(), format!("malformed line: {line}"))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn meta_get<'a>(map: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::parse(path.display().to_string(), format!("missing key: {key}")))
}

fn parse_f64_list(s: &str, key: &str, path: &Path) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| {
                Error::parse(
                    path.display().to_string(),
                    format!("key {key}: not a number: {tok}"),
                )
            })
        })
        .collect()
}

fn parse_usize_list(s: &str, key: &str, path: &Path) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| {
                Error::parse(
                    path.display().to_string(),
                    format!("key {key}: not an integer: {tok}"),
                )
            })
        })
        .collect()
}

/// Load a study and masks saved by [`save_study`]. Invariants are re-validated.
pub fn load_study(path: &Path) -> Result<(DynamicStudy, CardiacMasks)> {
    let meta_path = path.join(META_FILE);
    let meta = parse_meta(&meta_path)?;

    let version: u32 = meta_get(&meta, "format_version", &meta_path)?
        .parse()
        .map_err(|_| Error::parse(meta_path.display().to_string(), "bad format_version"))?;
    if version != CONTAINER_VERSION {
        return Err(Error::parse(
            meta_path.display().to_string(),
            format!("unsupported format_version {version}"),
        ));
    }
    let study_id = meta_get(&meta, "study_id", &meta_path)?.to_string();
    let shape = parse_usize_list(meta_get(&meta, "shape", &meta_path)?, "shape", &meta_path)?;
    if shape.len() != 3 {
        return Err(Error::parse(
            meta_path.display().to_string(),
            "shape must have 3 entries",
        ));
    }
    let shape = [shape[0], shape[1], shape[2]];
    let n_frames: usize = meta_get(&meta, "n_frames", &meta_path)?
        .parse()
        .map_err(|_| Error::parse(meta_path.display().to_string(), "bad n_frames"))?;
    let voxel_spacing = parse_f64_list(
        meta_get(&meta, "voxel_spacing", &meta_path)?,
        "voxel_spacing",
        &meta_path,
    )?;
    if voxel_spacing.len() != 3 {
        return Err(Error::parse(
            meta_path.display().to_string(),
            "voxel_spacing must have 3 entries",
        ));
    }
    let frame_start_times = parse_f64_list(
        meta_get(&meta, "frame_start_times", &meta_path)?,
        "frame_start_times",
        &meta_path,
    )?;
    let frame_durations = parse_f64_list(
        meta_get(&meta, "frame_durations", &meta_path)?,
        "frame_durations",
        &meta_path,
    )?;
    let decay_correction_factors = parse_f64_list(
        meta_get(&meta, "decay_correction_factors", &meta_path)?,
        "decay_correction_factors",
        &meta_path,
    )?;
    let center = parse_usize_list(
        meta_get(&meta, "lv_inferior_wall_center", &meta_path)?,
        "lv_inferior_wall_center",
        &meta_path,
    )?;
    if center.len() != 3 {
        return Err(Error::parse(
            meta_path.display().to_string(),
            "lv_inferior_wall_center must have 3 entries",
        ));
    }

    let mut frames = Array4::zeros((n_frames, shape[0], shape[1], shape[2]));
    for i in 0..n_frames {
        let frame = read_frame_raw(&path.join(format!("frame_{i:04}.raw")), shape)?;
        frames.index_axis_mut(ndarray::Axis(0), i).assign(&frame);
    }
    let study = DynamicStudy {
        study_id,
        frames,
        voxel_spacing: [voxel_spacing[0], voxel_spacing[1], voxel_spacing[2]],
        frame_start_times,
        frame_durations,
        decay_correction_factors,
    };
    let masks = CardiacMasks {
        rvbp: read_mask_raw(&path.join("mask_rvbp.raw"), shape)?,
        lvbp: read_mask_raw(&path.join("mask_lvbp.raw"), shape)?,
        myo: read_mask_raw(&path.join("mask_myo.raw"), shape)?,
        lv_inferior_wall_center: [center[0], center[1], center[2]],
    };
    study.validate()?;
    masks.validate(study.spatial_shape())?;
    Ok((study, masks))
}

/// Extract a zero-padded patch of `size` centered at `center`.
///
/// Patch voxel `p` maps to source voxel `center - size/2 + p`; source voxels
/// outside the volume contribute zero (PET background is air).
pub fn crop_patch(
    volume: &ArrayView3<'_, f32>,
    center: [i64; 3],
    size: [usize; 3],
) -> Result<Array3<f32>> {
    if size.iter().any(|&s| s == 0) {
        return Err(Error::validation("crop size must be positive"));
    }
    let dim = volume.dim();
    let bounds = [dim.0 as i64, dim.1 as i64, dim.2 as i64];
    let start = [
        center[0] - (size[0] / 2) as i64,
        center[1] - (size[1] / 2) as i64,
        center[2] - (size[2] / 2) as i64,
    ];
    let mut out = Array3::zeros((size[0], size[1], size[2]));
    for px in 0..size[0] {
        let sx = start[0] + px as i64;
        if sx < 0 || sx >= bounds[0] {
            continue;
        }
        for py in 0..size[1] {
            let sy = start[1] + py as i64;
            if sy < 0 || sy >= bounds[1] {
                continue;
            }
            for pz in 0..size[2] {
                let sz = start[2] + pz as i64;
                if sz < 0 || sz >= bounds[2] {
                    continue;
                }
                out[[px, py, pz]] = volume[[sx as usize, sy as usize, sz as usize]];
            }
        }
    }
    Ok(out)
}
