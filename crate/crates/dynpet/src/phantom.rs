//! Synthetic dynamic cardiac phantom: ellipsoidal RV/LV blood pools and a
//! myocardial shell with known kinetics, painted onto a voxel grid and
//! frame-averaged to a dynamic study with noise.
//!
//! The phantom stands in for clinical acquisitions at desk scale; its realism
//! is deliberately limited to what the downstream pipeline needs (distinct
//! blood-pool and tissue phases, a controllable ground truth). Numbers
//! produced on it are not comparable to clinical values.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kinetics::{self, FrameSchedule, FINE_DT_S};
use crate::preprocess::TimeActivityCurves;
use crate::rng::{rng_from, standard_normal, SeededRng};
use crate::volumes::{save_study, CardiacMasks, DynamicStudy};

/// Rb-82 half-life in seconds; used only to synthesize per-frame decay
/// correction factors.
pub const HALF_LIFE_S: f64 = 75.4;

/// Ellipsoid-based heart geometry, all lengths in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct HeartGeometry {
    pub lv_center_mm: [f64; 3],
    pub lv_outer_radii_mm: [f64; 3],
    /// Myocardial shell thickness; inner (LVBP) radii are outer minus this.
    pub shell_thickness_mm: f64,
    pub rv_center_mm: [f64; 3],
    pub rv_radii_mm: [f64; 3],
    /// In-plane (xy) rotation of both ellipsoids about the LV center, degrees.
    pub orientation_deg: f64,
}

/// Analytic first-pass bolus: gamma-variate rise/decay with peak `amplitude`
/// at `time_to_peak_s`, plus a recirculation plateau that ramps linearly to
/// `recirc_fraction * amplitude` by the peak time and stays constant.
#[derive(Debug, Clone, PartialEq)]
pub struct BolusModel {
    pub amplitude_bq_ml: f64,
    pub time_to_peak_s: f64,
    /// Gamma-variate shape parameter; larger is narrower.
    pub sharpness: f64,
    pub recirc_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub grid: [usize; 3],
    pub voxel_spacing_mm: [f64; 3],
    pub geometry: HeartGeometry,
    pub bolus: BolusModel,
    /// Myocardial uptake rate constant, mL/min/g.
    pub k1_ml_min_g: f64,
    /// Clearance rate constant, 1/min.
    pub k2_per_min: f64,
    /// Blood-volume / spillover fraction mixed into myocardial voxels.
    pub myo_blood_fraction: f64,
    /// RV-to-LV transit delay in seconds.
    pub rv_to_lv_delay_s: f64,
    /// Relative standard deviation of additive Gaussian noise at 1 s frame
    /// duration; scaled by 1/sqrt(duration).
    pub noise_level: f64,
    /// Background tissue activity as a fraction of the myocardium curve.
    pub background_fraction: f64,
    /// Isotropic Gaussian point-spread FWHM in mm applied to each painted
    /// frame before noise; 0 keeps region edges razor sharp. Reconstructed
    /// PET is smooth, so nonzero values are the realistic choice whenever
    /// interpolation behaviour matters.
    pub psf_fwhm_mm: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            grid: [32, 32, 16],
            voxel_spacing_mm: [3.125, 3.125, 3.27],
            geometry: HeartGeometry {
                lv_center_mm: [60.0, 52.0, 25.0],
                lv_outer_radii_mm: [16.0, 16.0, 14.0],
                shell_thickness_mm: 6.0,
                rv_center_mm: [34.0, 48.0, 25.0],
                rv_radii_mm: [11.0, 13.0, 11.0],
                orientation_deg: 0.0,
            },
            bolus: BolusModel {
                amplitude_bq_ml: 5.0e4,
                time_to_peak_s: 25.0,
                sharpness: 3.0,
                recirc_fraction: 0.06,
            },
            k1_ml_min_g: 0.6,
            k2_per_min: 0.2,
            myo_blood_fraction: 0.05,
            rv_to_lv_delay_s: 8.0,
            noise_level: 0.04,
            background_fraction: 0.08,
            psf_fwhm_mm: 6.0,
            seed: 0,
        }
    }
}

/// Per-study ground truth recorded at simulation time.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticTruth {
    pub k1: f64,
    pub k2: f64,
    pub v: f64,
    pub delay_s: f64,
    /// Noise-free frame-averaged region curves.
    pub tacs: TimeActivityCurves,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.iter().any(|&n| n < 8) {
            return Err(Error::validation("phantom grid dims must be >= 8"));
        }
        if self.voxel_spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::validation("voxel spacing must be positive"));
        }
        let g = &self.geometry;
        if g.lv_outer_radii_mm.iter().any(|&r| !(r > 0.0))
            || g.rv_radii_mm.iter().any(|&r| !(r > 0.0))
        {
            return Err(Error::validation("ellipsoid radii must be positive"));
        }
        let min_outer = g.lv_outer_radii_mm.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(g.shell_thickness_mm > 0.0 && g.shell_thickness_mm < min_outer) {
            return Err(Error::validation(
                "shell thickness must be positive and smaller than every LV outer radius",
            ));
        }
        if !(self.k1_ml_min_g > 0.0) || !(self.k2_per_min > 0.0) {
            return Err(Error::validation("K1 and k2 must be positive"));
        }
        if !(0.0..1.0).contains(&self.myo_blood_fraction) {
            return Err(Error::validation("myo blood fraction must lie in [0, 1)"));
        }
        if self.noise_level < 0.0 {
            return Err(Error::validation("noise level must be >= 0"));
        }
        if self.rv_to_lv_delay_s < 0.0 {
            return Err(Error::validation("transit delay must be >= 0"));
        }
        if !(self.bolus.amplitude_bq_ml > 0.0)
            || !(self.bolus.time_to_peak_s > 0.0)
            || !(self.bolus.sharpness > 0.0)
            || self.bolus.recirc_fraction < 0.0
        {
            return Err(Error::validation("bolus parameters out of range"));
        }
        // Both ellipsoids must fit inside the grid irrespective of the
        // in-plane rotation (conservative xy bound: the larger xy radius).
        let extent = [
            (self.grid[0] - 1) as f64 * self.voxel_spacing_mm[0],
            (self.grid[1] - 1) as f64 * self.voxel_spacing_mm[1],
            (self.grid[2] - 1) as f64 * self.voxel_spacing_mm[2],
        ];
        for (center, radii) in [
            (&g.lv_center_mm, &g.lv_outer_radii_mm),
            (&g.rv_center_mm, &g.rv_radii_mm),
        ] {
            let rxy = radii[0].max(radii[1]);
            let reach = [rxy, rxy, radii[2]];
            for d in 0..3 {
                if center[d] - reach[d] < 0.0 || center[d] + reach[d] > extent[d] {
                    return Err(Error::validation(format!(
                        "heart geometry exceeds grid along axis {d}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Analytic arterial input function of the phantom.
///
/// Zero at t = 0, single peak exactly at `time_to_peak_s`, monotone decay
/// toward the recirculation plateau afterwards.
pub fn bolus_input_function(spec: &PhantomSpec, t: f64) -> f64 {
    let b = &spec.bolus;
    if t <= 0.0 {
        return 0.0;
    }
    let tau = t / b.time_to_peak_s;
    let gamma = tau.powf(b.sharpness) * (b.sharpness * (1.0 - tau)).exp();
    let plateau = b.recirc_fraction * tau.min(1.0);
    b.amplitude_bq_ml * (gamma + plateau)
}

/// Noise-free region curves on the fine time grid.
struct RegionCurves {
    rvbp: Vec<f64>,
    lvbp: Vec<f64>,
    myo: Vec<f64>,
    background: Vec<f64>,
}

fn region_curves(spec: &PhantomSpec, end_time_s: f64) -> RegionCurves {
    let n = (end_time_s / FINE_DT_S).ceil() as usize + 1;
    let rvbp: Vec<f64> = (0..n)
        .map(|i| bolus_input_function(spec, i as f64 * FINE_DT_S))
        .collect();
    let lvbp: Vec<f64> = (0..n)
        .map(|i| bolus_input_function(spec, i as f64 * FINE_DT_S - spec.rv_to_lv_delay_s))
        .collect();
    let ct = kinetics::solve_one_tissue(&lvbp, FINE_DT_S, spec.k1_ml_min_g, spec.k2_per_min);
    let v = spec.myo_blood_fraction;
    let myo: Vec<f64> = ct
        .iter()
        .zip(&lvbp)
        .map(|(&t, &p)| (1.0 - v) * t + v * p)
        .collect();
    let background = myo.iter().map(|&m| spec.background_fraction * m).collect();
    RegionCurves {
        rvbp,
        lvbp,
        myo,
        background,
    }
}

/// Voxel region labels.
const BG: u8 = 0;
const RV: u8 = 1;
const LV: u8 = 2;
const MYO: u8 = 3;

fn rotate_xy_inv(p: [f64; 3], center: [f64; 3], angle_rad: f64) -> [f64; 3] {
    let (s, c) = (-angle_rad).sin_cos();
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    [
        center[0] + c * dx - s * dy,
        center[1] + s * dx + c * dy,
        p[2],
    ]
}

fn inside_ellipsoid(p: [f64; 3], center: [f64; 3], radii: [f64; 3]) -> bool {
    let dx = (p[0] - center[0]) / radii[0];
    let dy = (p[1] - center[1]) / radii[1];
    let dz = (p[2] - center[2]) / radii[2];
    dx * dx + dy * dy + dz * dz <= 1.0
}

/// Region label volume from the geometry. Membership is purely a function of
/// position relative to the ellipsoid centers, so translating the whole
/// geometry by an integer number of voxels translates the labels verbatim.
fn label_volume(spec: &PhantomSpec) -> Array3<u8> {
    let g = &spec.geometry;
    let angle = g.orientation_deg.to_radians();
    let inner_radii = [
        g.lv_outer_radii_mm[0] - g.shell_thickness_mm,
        g.lv_outer_radii_mm[1] - g.shell_thickness_mm,
        g.lv_outer_radii_mm[2] - g.shell_thickness_mm,
    ];
    let mut labels = Array3::from_elem((spec.grid[0], spec.grid[1], spec.grid[2]), BG);
    for ((x, y, z), lbl) in labels.indexed_iter_mut() {
        let p = [
            x as f64 * spec.voxel_spacing_mm[0],
            y as f64 * spec.voxel_spacing_mm[1],
            z as f64 * spec.voxel_spacing_mm[2],
        ];
        // Both ellipsoids share the rotation about the LV center.
        let q = rotate_xy_inv(p, g.lv_center_mm, angle);
        let in_lv_outer = inside_ellipsoid(q, g.lv_center_mm, g.lv_outer_radii_mm);
        let in_lv_inner = inside_ellipsoid(q, g.lv_center_mm, inner_radii);
        let in_rv = inside_ellipsoid(q, g.rv_center_mm, g.rv_radii_mm);
        *lbl = if in_lv_inner {
            LV
        } else if in_lv_outer {
            MYO
        } else if in_rv {
            RV
        } else {
            BG
        };
    }
    labels
}

fn masks_from_labels(spec: &PhantomSpec, labels: &Array3<u8>) -> CardiacMasks {
    let g = &spec.geometry;
    let angle = g.orientation_deg.to_radians();
    let r_mid = g.lv_outer_radii_mm[1] - 0.5 * g.shell_thickness_mm;
    // Mid-shell point on the +y (inferior) wall, rotated with the geometry.
    let (s, c) = angle.sin_cos();
    let p = [
        g.lv_center_mm[0] - s * r_mid,
        g.lv_center_mm[1] + c * r_mid,
        g.lv_center_mm[2],
    ];
    let center = [
        (p[0] / spec.voxel_spacing_mm[0]).round() as i64,
        (p[1] / spec.voxel_spacing_mm[1]).round() as i64,
        (p[2] / spec.voxel_spacing_mm[2]).round() as i64,
    ];
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    CardiacMasks {
        rvbp: labels.mapv(|l| u8::from(l == RV)),
        lvbp: labels.mapv(|l| u8::from(l == LV)),
        myo: labels.mapv(|l| u8::from(l == MYO)),
        lv_inferior_wall_center: [
            clamp(center[0], spec.grid[0]),
            clamp(center[1], spec.grid[1]),
            clamp(center[2], spec.grid[2]),
        ],
    }
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma_vox).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with zero padding at the volume boundary.
fn blur_volume(vol: &mut Array3<f64>, fwhm_mm: f64, spacing_mm: [f64; 3]) {
    const FWHM_TO_SIGMA: f64 = 0.42466; // 1 / (2 sqrt(2 ln 2))
    let (nx, ny, nz) = vol.dim();
    let dims = [nx, ny, nz];
    for axis in 0..3 {
        let sigma_vox = fwhm_mm * FWHM_TO_SIGMA / spacing_mm[axis];
        if sigma_vox < 1e-6 {
            continue;
        }
        let kernel = gaussian_kernel(sigma_vox);
        let radius = (kernel.len() / 2) as i64;
        let n = dims[axis] as i64;
        let mut line = vec![0.0f64; dims[axis]];
        // Iterate all lines along `axis`.
        let (na, nb) = match axis {
            0 => (ny, nz),
            1 => (nx, nz),
            _ => (nx, ny),
        };
        for a in 0..na {
            for b in 0..nb {
                for i in 0..dims[axis] {
                    let idx = match axis {
                        0 => [i, a, b],
                        1 => [a, i, b],
                        _ => [a, b, i],
                    };
                    line[i] = vol[idx];
                }
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, &w) in kernel.iter().enumerate() {
                        let src = i + j as i64 - radius;
                        if src >= 0 && src < n {
                            acc += w * line[src as usize];
                        }
                    }
                    let idx = match axis {
                        0 => [i as usize, a, b],
                        1 => [a, i as usize, b],
                        _ => [a, b, i as usize],
                    };
                    vol[idx] = acc;
                }
            }
        }
    }
}

fn decay_correction_factors(schedule: &FrameSchedule) -> Vec<f64> {
    let lambda = std::f64::consts::LN_2 / HALF_LIFE_S;
    schedule
        .mid_times()
        .iter()
        .map(|&t| (lambda * t).exp())
        .collect()
}

/// Simulate one study on the given frame schedule.
pub fn simulate_study(
    spec: &PhantomSpec,
    schedule: &FrameSchedule,
    study_id: &str,
) -> Result<(DynamicStudy, CardiacMasks, KineticTruth)> {
    spec.validate()?;
    schedule.validate()?;

    let curves = region_curves(spec, schedule.end_time());
    let rv_tac = kinetics::frame_average(&curves.rvbp, FINE_DT_S, schedule, 10);
    let lv_tac = kinetics::frame_average(&curves.lvbp, FINE_DT_S, schedule, 10);
    let myo_tac = kinetics::frame_average(&curves.myo, FINE_DT_S, schedule, 10);
    let bg_tac = kinetics::frame_average(&curves.background, FINE_DT_S, schedule, 10);

    let labels = label_volume(spec);
    let masks = masks_from_labels(spec, &labels);
    let t = schedule.len();
    let [nx, ny, nz] = spec.grid;
    let mut frames = Array4::zeros((t, nx, ny, nz));
    let mut rng = rng_from(spec.seed, 0);
    for i in 0..t {
        let dur = schedule.durations[i];
        let noise_scale = spec.noise_level / dur.sqrt();
        let mut painted = Array3::<f64>::zeros((nx, ny, nz));
        for ((x, y, z), v) in painted.indexed_iter_mut() {
            *v = match labels[[x, y, z]] {
                RV => rv_tac[i],
                LV => lv_tac[i],
                MYO => myo_tac[i],
                _ => bg_tac[i],
            };
        }
        if spec.psf_fwhm_mm > 0.0 {
            blur_volume(&mut painted, spec.psf_fwhm_mm, spec.voxel_spacing_mm);
        }
        let mut frame = frames.index_axis_mut(ndarray::Axis(0), i);
        // Fixed x,y,z iteration order keeps the noise stream reproducible.
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let mean = painted[[x, y, z]];
                    let value = if spec.noise_level > 0.0 {
                        mean + noise_scale * mean.abs() * standard_normal(&mut rng)
                    } else {
                        mean
                    };
                    frame[[x, y, z]] = value as f32;
                }
            }
        }
    }

    let study = DynamicStudy {
        study_id: study_id.to_string(),
        frames,
        voxel_spacing: spec.voxel_spacing_mm,
        frame_start_times: schedule.start_times.clone(),
        frame_durations: schedule.durations.clone(),
        decay_correction_factors: decay_correction_factors(schedule),
    };
    study.validate()?;
    masks.validate(study.spatial_shape())?;

    let truth = KineticTruth {
        k1: spec.k1_ml_min_g,
        k2: spec.k2_per_min,
        v: spec.myo_blood_fraction,
        delay_s: spec.rv_to_lv_delay_s,
        tacs: TimeActivityCurves {
            rvbp: rv_tac,
            lvbp: lv_tac,
            myo: myo_tac,
            schedule: schedule.clone(),
        },
    };
    Ok((study, masks, truth))
}

/// Relative / absolute jitter ranges for cohort generation; every parameter
/// is drawn uniformly in +/- its range around the base spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterJitter {
    pub k1_rel: f64,
    pub k2_rel: f64,
    pub delay_rel: f64,
    pub center_mm: f64,
    pub radii_rel: f64,
    pub angle_deg: f64,
    pub amplitude_rel: f64,
}

impl Default for ParameterJitter {
    fn default() -> Self {
        Self {
            k1_rel: 0.25,
            k2_rel: 0.25,
            delay_rel: 0.3,
            center_mm: 4.0,
            radii_rel: 0.10,
            angle_deg: 20.0,
            amplitude_rel: 0.2,
        }
    }
}

impl ParameterJitter {
    pub fn none() -> Self {
        Self {
            k1_rel: 0.0,
            k2_rel: 0.0,
            delay_rel: 0.0,
            center_mm: 0.0,
            radii_rel: 0.0,
            angle_deg: 0.0,
            amplitude_rel: 0.0,
        }
    }
}

fn jittered_spec(base: &PhantomSpec, jitter: &ParameterJitter, rng: &mut SeededRng) -> PhantomSpec {
    let mut spec = base.clone();
    let u = |rng: &mut SeededRng, range: f64| -> f64 {
        if range == 0.0 {
            0.0
        } else {
            rng.gen_range(-range..=range)
        }
    };
    spec.k1_ml_min_g *= 1.0 + u(rng, jitter.k1_rel);
    spec.k2_per_min *= 1.0 + u(rng, jitter.k2_rel);
    spec.rv_to_lv_delay_s *= 1.0 + u(rng, jitter.delay_rel);
    spec.bolus.amplitude_bq_ml *= 1.0 + u(rng, jitter.amplitude_rel);
    spec.geometry.orientation_deg += u(rng, jitter.angle_deg);
    for d in 0..3 {
        let shift = u(rng, jitter.center_mm);
        spec.geometry.lv_center_mm[d] += shift;
        spec.geometry.rv_center_mm[d] += shift;
    }
    let r = 1.0 + u(rng, jitter.radii_rel);
    for d in 0..3 {
        spec.geometry.lv_outer_radii_mm[d] *= r;
        spec.geometry.rv_radii_mm[d] *= r;
    }
    spec.geometry.shell_thickness_mm *= r;
    spec
}

/// One manifest row: where a study lives and what generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub study_id: String,
    /// Study directory, relative to the manifest's directory.
    pub rel_path: PathBuf,
    pub k1: f64,
    pub k2: f64,
    pub v: f64,
    pub delay_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub entries: Vec<CohortEntry>,
    pub schedule: FrameSchedule,
}

pub const MANIFEST_FILE: &str = "cohort.manifest";

/// Generate `n_studies` jittered studies under `dir` and write the manifest.
///
/// Deterministic in `seed`: study `i` draws its spec jitter and noise from
/// independent derived streams, so re-running with the same seed writes
/// byte-identical files.
pub fn make_cohort(
    n_studies: usize,
    base_spec: &PhantomSpec,
    jitter: &ParameterJitter,
    seed: u64,
    schedule: &FrameSchedule,
    dir: &Path,
) -> Result<CohortManifest> {
    if n_studies == 0 {
        return Err(Error::validation("cohort must have at least one study"));
    }
    base_spec.validate()?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(n_studies);
    for i in 0..n_studies {
        let mut rng = rng_from(seed, i as u64);
        let mut spec = jittered_spec(base_spec, jitter, &mut rng);
        spec.seed = derive_noise_seed(seed, i as u64);
        let study_id = format!("study_{i:04}");
        let rel_path = PathBuf::from("studies").join(&study_id);
        let (study, masks, truth) = simulate_study(&spec, schedule, &study_id)?;
        save_study(&study, &masks, &dir.join(&rel_path))?;
        entries.push(CohortEntry {
            study_id,
            rel_path,
            k1: truth.k1,
            k2: truth.k2,
            v: truth.v,
            delay_s: truth.delay_s,
        });
    }
    let manifest = CohortManifest {
        entries,
        schedule: schedule.clone(),
    };
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn derive_noise_seed(seed: u64, index: u64) -> u64 {
    crate::rng::derive_seed(seed ^ 0x6E6F_6973_65u64, index)
}

fn write_manifest(manifest: &CohortManifest, path: &Path) -> Result<()> {
    let mut text = String::new();
    text.push_str("# dynpet cohort manifest\n");
    text.push_str(&format!("n_studies = {}\n", manifest.entries.len()));
    let fmt_list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    text.push_str(&format!(
        "schedule_start_times = {}\n",
        fmt_list(&manifest.schedule.start_times)
    ));
    text.push_str(&format!(
        "schedule_durations = {}\n",
        fmt_list(&manifest.schedule.durations)
    ));
    for e in &manifest.entries {
        let id = &e.study_id;
        text.push_str(&format!("{id}.path = {}\n", e.rel_path.display()));
        text.push_str(&format!("{id}.k1 = {}\n", e.k1));
        text.push_str(&format!("{id}.k2 = {}\n", e.k2));
        text.push_str(&format!("{id}.v = {}\n", e.v));
        text.push_str(&format!("{id}.delay_s = {}\n", e.delay_s));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Parse a manifest written by [`make_cohort`].
pub fn load_manifest(path: &Path) -> Result<CohortManifest> {
    let text = fs::read_to_string(path)?;
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse(path.display().to_string(), format!("malformed line: {line}"))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &str| -> Result<&String> {
        map.get(key)
            .ok_or_else(|| Error::parse(path.display().to_string(), format!("missing key: {key}")))
    };
    let parse_list = |s: &str| -> Result<Vec<f64>> {
        s.split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::parse(path.display().to_string(), format!("not a number: {tok}"))
                })
            })
            .collect()
    };
    let n: usize = get("n_studies")?
        .parse()
        .map_err(|_| Error::parse(path.display().to_string(), "bad n_studies"))?;
    let schedule = FrameSchedule::new(
        parse_list(get("schedule_start_times")?)?,
        parse_list(get("schedule_durations")?)?,
    )?;
    let parse_num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|_| Error::parse(path.display().to_string(), format!("bad number: {key}")))
    };
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("study_{i:04}");
        entries.push(CohortEntry {
            rel_path: PathBuf::from(get(&format!("{id}.path"))?),
            k1: parse_num(&format!("{id}.k1"))?,
            k2: parse_num(&format!("{id}.k2"))?,
            v: parse_num(&format!("{id}.v"))?,
            delay_s: parse_num(&format!("{id}.delay_s"))?,
            study_id: id,
        });
    }
    Ok(CohortManifest { entries, schedule })
}

/// The 27-frame acquisition schedule used throughout: 14x5s, 6x10s, 3x20s,
/// 3x30s, 1x90s.
pub fn standard_schedule() -> FrameSchedule {
    let durations: Vec<f64> = std::iter::repeat(5.0)
        .take(14)
        .chain(std::iter::repeat(10.0).take(6))
        .chain(std::iter::repeat(20.0).take(3))
        .chain(std::iter::repeat(30.0).take(3))
        .chain(std::iter::repeat(90.0).take(1))
        .collect();
    let mut t = 0.0;
    let starts = durations
        .iter()
        .map(|d| {
            let s = t;
            t += d;
            s
        })
        .collect();
    FrameSchedule::new(starts, durations).expect("static schedule is valid")
}
