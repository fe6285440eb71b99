//! TAC extraction, EQ-frame detection, frame selection, intensity and
//! temporal normalization, patch sampling with augmentation, and mask jitter.

use ndarray::{Array2, Array3, ArrayView3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::interp::{nearest_u8, trilinear};
use crate::kinetics::FrameSchedule;
use crate::rng::SeededRng;
use crate::volumes::{CardiacMasks, DynamicStudy};

/// Mean ROI activity per frame for the three cardiac regions.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeActivityCurves {
    pub rvbp: Vec<f64>,
    pub lvbp: Vec<f64>,
    pub myo: Vec<f64>,
    pub schedule: FrameSchedule,
}

impl TimeActivityCurves {
    pub fn len(&self) -> usize {
        self.rvbp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rvbp.is_empty()
    }
}

/// Which frames the conversion pipeline operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    /// Frames to convert, ascending, all before the reference.
    pub included: Vec<usize>,
    /// First frame where LVBP activity >= RVBP activity.
    pub eq_index: usize,
    /// The last frame; conversion target and registration reference.
    pub reference_index: usize,
}

impl FrameSelection {
    /// Included frames strictly before the EQ frame.
    pub fn pre_eq(&self) -> Vec<usize> {
        self.included
            .iter()
            .copied()
            .filter(|&i| i < self.eq_index)
            .collect()
    }

    pub fn eq_minus_one(&self) -> Option<usize> {
        let i = self.eq_index.checked_sub(1)?;
        self.included.contains(&i).then_some(i)
    }

    pub fn eq_plus_one(&self) -> Option<usize> {
        let i = self.eq_index + 1;
        self.included.contains(&i).then_some(i)
    }
}

/// Mean activity inside each mask, per frame. Small negative means from
/// reconstruction-style noise are clamped to zero so curves stay physical.
pub fn extract_tacs(study: &DynamicStudy, masks: &CardiacMasks) -> Result<TimeActivityCurves> {
    masks.validate(study.spatial_shape())?;
    let regions: [(&Array3<u8>, &str); 3] = [
        (&masks.rvbp, "rvbp"),
        (&masks.lvbp, "lvbp"),
        (&masks.myo, "myo"),
    ];
    let mut indices: Vec<Vec<(usize, usize, usize)>> = Vec::with_capacity(3);
    for (mask, name) in regions {
        let idx: Vec<_> = mask
            .indexed_iter()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::validation(format!("mask {name} is empty")));
        }
        indices.push(idx);
    }
    let t = study.num_frames();
    let mut curves = vec![Vec::with_capacity(t), Vec::with_capacity(t), Vec::with_capacity(t)];
    for i in 0..t {
        let frame = study.frame(i);
        for (r, idx) in indices.iter().enumerate() {
            let sum: f64 = idx.iter().map(|&(x, y, z)| frame[[x, y, z]] as f64).sum();
            curves[r].push((sum / idx.len() as f64).max(0.0));
        }
    }
    let myo = curves.pop().unwrap();
    let lvbp = curves.pop().unwrap();
    let rvbp = curves.pop().unwrap();
    Ok(TimeActivityCurves {
        rvbp,
        lvbp,
        myo,
        schedule: FrameSchedule::from_study(study),
    })
}

/// First frame (original indexing) where LVBP activity >= RVBP activity.
///
/// Leading frames where both blood pools are zero are trimmed first, so the
/// tracer-free prelude cannot produce a spurious `0 >= 0` tie.
pub fn find_eq_frame(tacs: &TimeActivityCurves) -> Result<usize> {
    if tacs.is_empty() {
        return Err(Error::validation("TACs are empty"));
    }
    let first_active = tacs
        .rvbp
        .iter()
        .zip(&tacs.lvbp)
        .position(|(&r, &l)| r > 0.0 || l > 0.0)
        .ok_or(Error::NoEqFrame)?;
    (first_active..tacs.len())
        .find(|&i| tacs.lvbp[i] >= tacs.rvbp[i])
        .ok_or(Error::NoEqFrame)
}

/// Frames with LVBP activity above `threshold_fraction` of the LVBP peak,
/// excluding the last (reference) frame.
pub fn select_frames(
    tacs: &TimeActivityCurves,
    threshold_fraction: f64,
) -> Result<FrameSelection> {
    if tacs.is_empty() {
        return Err(Error::validation("TACs are empty"));
    }
    let eq_index = find_eq_frame(tacs)?;
    let t = tacs.len();
    let peak = tacs.lvbp.iter().cloned().fold(f64::MIN, f64::max);
    let threshold = threshold_fraction * peak;
    let included: Vec<usize> = (0..t - 1).filter(|&i| tacs.lvbp[i] > threshold).collect();
    if included.is_empty() {
        return Err(Error::validation(
            "no frame exceeds the LVBP activity threshold",
        ));
    }
    Ok(FrameSelection {
        included,
        eq_index,
        reference_index: t - 1,
    })
}

/// Parameters to undo the per-frame affine map onto [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityRestore {
    pub min: f32,
    pub max: f32,
}

impl IntensityRestore {
    pub fn restore_value(&self, y: f32) -> f32 {
        (y + 1.0) * 0.5 * (self.max - self.min) + self.min
    }

    pub fn restore(&self, normalized: &ArrayView3<'_, f32>) -> Array3<f32> {
        normalized.mapv(|y| self.restore_value(y))
    }
}

/// Affinely map a frame onto [-1, 1]; the returned parameters invert it.
pub fn normalize_intensity(frame: &ArrayView3<'_, f32>) -> Result<(Array3<f32>, IntensityRestore)> {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in frame.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        return Err(Error::validation(
            "cannot normalize a constant frame (max == min)",
        ));
    }
    let scale = 2.0 / (max - min);
    let normalized = frame.mapv(|v| (v - min) * scale - 1.0);
    Ok((normalized, IntensityRestore { min, max }))
}

/// Temporally normalized conditioning inputs for one study.
///
/// Both blood-pool TACs are scaled so the LVBP peak is 1, and the frame-index
/// axis is re-expressed relative to the EQ frame: the one-hot slot of frame
/// `i` is `i - eq_index + T/2` (clamped), so every study's EQ frame lands in
/// the same slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConditioning {
    pub rvbp: Vec<f64>,
    pub lvbp: Vec<f64>,
    pub eq_index: usize,
}

impl TemporalConditioning {
    pub fn num_frames(&self) -> usize {
        self.rvbp.len()
    }

    fn anchor(&self) -> usize {
        self.num_frames() / 2
    }

    /// One-hot EQ-relative frame index, length T, sums to 1.
    pub fn one_hot(&self, frame_index: usize) -> Vec<f64> {
        let t = self.num_frames();
        let slot = (frame_index as i64 - self.eq_index as i64 + self.anchor() as i64)
            .clamp(0, t as i64 - 1) as usize;
        let mut v = vec![0.0; t];
        v[slot] = 1.0;
        v
    }

    /// Flat conditioning vector `[rvbp | lvbp | one-hot]`, length 3T.
    pub fn vector(&self, frame_index: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.num_frames());
        v.extend_from_slice(&self.rvbp);
        v.extend_from_slice(&self.lvbp);
        v.extend(self.one_hot(frame_index));
        v
    }

    /// Sequence view for recurrent encoding: row t is
    /// `[rvbp[t], lvbp[t], one_hot[t]]`.
    pub fn sequence(&self, frame_index: usize) -> Array2<f64> {
        let t = self.num_frames();
        let hot = self.one_hot(frame_index);
        let mut seq = Array2::zeros((t, 3));
        for i in 0..t {
            seq[[i, 0]] = self.rvbp[i];
            seq[[i, 1]] = self.lvbp[i];
            seq[[i, 2]] = hot[i];
        }
        seq
    }
}

/// Scale TACs to unit LVBP peak and fix the EQ-relative index axis.
pub fn normalize_temporal(tacs: &TimeActivityCurves, eq_index: usize) -> Result<TemporalConditioning> {
    if eq_index >= tacs.len() {
        return Err(Error::validation("eq_index out of range"));
    }
    let peak = tacs.lvbp.iter().cloned().fold(f64::MIN, f64::max);
    if !(peak > 0.0) {
        return Err(Error::validation("LVBP TAC has no positive activity"));
    }
    Ok(TemporalConditioning {
        rvbp: tacs.rvbp.iter().map(|v| v / peak).collect(),
        lvbp: tacs.lvbp.iter().map(|v| v / peak).collect(),
        eq_index,
    })
}

/// Augmentation ranges for training patch sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Uniform integer crop shift per axis, voxels.
    pub max_shift_voxels: i64,
    /// Uniform in-plane rotation, degrees.
    pub max_rotation_deg: f64,
    /// Joint rigid mask jitter per axis, voxels.
    pub mask_jitter_voxels: i64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_shift_voxels: 5,
            max_rotation_deg: 45.0,
            mask_jitter_voxels: 3,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self {
            max_shift_voxels: 0,
            max_rotation_deg: 0.0,
            mask_jitter_voxels: 0,
        }
    }
}

/// One augmented training sample: geometrically identical input frame, mask,
/// and target patches, plus the transform that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPatch {
    pub input: Array3<f32>,
    pub target: Array3<f32>,
    pub rvbp: Array3<u8>,
    pub lvbp: Array3<u8>,
    pub myo: Array3<u8>,
    pub rotation_deg: f64,
    pub shift: [i64; 3],
    pub mask_shift: [i64; 3],
}

fn draw_shift(rng: &mut SeededRng, max: i64) -> [i64; 3] {
    if max == 0 {
        return [0, 0, 0];
    }
    [
        rng.gen_range(-max..=max),
        rng.gen_range(-max..=max),
        rng.gen_range(-max..=max),
    ]
}

/// Resample a frame patch under an in-plane rotation about the patch center
/// plus an integer crop shift, trilinear with zero background.
pub fn resample_frame_patch(
    frame: &ArrayView3<'_, f32>,
    center: [i64; 3],
    size: [usize; 3],
    rotation_deg: f64,
    shift: [i64; 3],
) -> Array3<f32> {
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let mut out = Array3::zeros((size[0], size[1], size[2]));
    let half = [
        (size[0] / 2) as f64,
        (size[1] / 2) as f64,
        (size[2] / 2) as f64,
    ];
    for ((px, py, pz), v) in out.indexed_iter_mut() {
        let qx = px as f64 - half[0];
        let qy = py as f64 - half[1];
        let qz = pz as f64 - half[2];
        let rx = cos * qx - sin * qy;
        let ry = sin * qx + cos * qy;
        let sx = (center[0] + shift[0]) as f64 + rx;
        let sy = (center[1] + shift[1]) as f64 + ry;
        let sz = (center[2] + shift[2]) as f64 + qz;
        *v = trilinear(frame, sx, sy, sz);
    }
    out
}

/// Same geometry as [`resample_frame_patch`] but nearest-neighbour, for
/// binary masks; `extra_shift` implements the rigid mask jitter.
pub fn resample_mask_patch(
    mask: &ArrayView3<'_, u8>,
    center: [i64; 3],
    size: [usize; 3],
    rotation_deg: f64,
    shift: [i64; 3],
    extra_shift: [i64; 3],
) -> Array3<u8> {
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let mut out = Array3::zeros((size[0], size[1], size[2]));
    let half = [
        (size[0] / 2) as f64,
        (size[1] / 2) as f64,
        (size[2] / 2) as f64,
    ];
    for ((px, py, pz), v) in out.indexed_iter_mut() {
        let qx = px as f64 - half[0];
        let qy = py as f64 - half[1];
        let qz = pz as f64 - half[2];
        let rx = cos * qx - sin * qy;
        let ry = sin * qx + cos * qy;
        // Sampling at s - J translates the mask by +J.
        let sx = (center[0] + shift[0] - extra_shift[0]) as f64 + rx;
        let sy = (center[1] + shift[1] - extra_shift[1]) as f64 + ry;
        let sz = (center[2] + shift[2] - extra_shift[2]) as f64 + qz;
        *v = nearest_u8(mask, sx, sy, sz);
    }
    out
}

/// Draw one augmented (input, masks, target) patch triple near the LV
/// inferior wall center. The same rotation and crop shift are applied to all
/// three; masks additionally receive a joint rigid jitter.
pub fn sample_training_patch(
    study: &DynamicStudy,
    masks: &CardiacMasks,
    frame_index: usize,
    reference_index: usize,
    size: [usize; 3],
    aug: &AugmentParams,
    rng: &mut SeededRng,
) -> Result<TrainingPatch> {
    if frame_index >= study.num_frames() || reference_index >= study.num_frames() {
        return Err(Error::validation("frame index out of range"));
    }
    let center = [
        masks.lv_inferior_wall_center[0] as i64,
        masks.lv_inferior_wall_center[1] as i64,
        masks.lv_inferior_wall_center[2] as i64,
    ];
    let rotation_deg = if aug.max_rotation_deg == 0.0 {
        0.0
    } else {
        rng.gen_range(-aug.max_rotation_deg..=aug.max_rotation_deg)
    };
    let shift = draw_shift(rng, aug.max_shift_voxels);
    let mask_shift = draw_shift(rng, aug.mask_jitter_voxels);

    let input = resample_frame_patch(&study.frame(frame_index), center, size, rotation_deg, shift);
    let target =
        resample_frame_patch(&study.frame(reference_index), center, size, rotation_deg, shift);
    let rvbp = resample_mask_patch(&masks.rvbp.view(), center, size, rotation_deg, shift, mask_shift);
    let lvbp = resample_mask_patch(&masks.lvbp.view(), center, size, rotation_deg, shift, mask_shift);
    let myo = resample_mask_patch(&masks.myo.view(), center, size, rotation_deg, shift, mask_shift);

    Ok(TrainingPatch {
        input,
        target,
        rvbp,
        lvbp,
        myo,
        rotation_deg,
        shift,
        mask_shift,
    })
}

fn translate_mask(mask: &Array3<u8>, shift: [i64; 3]) -> Array3<u8> {
    let (nx, ny, nz) = mask.dim();
    let mut out = Array3::zeros((nx, ny, nz));
    for ((x, y, z), &v) in mask.indexed_iter() {
        if v == 0 {
            continue;
        }
        let tx = x as i64 + shift[0];
        let ty = y as i64 + shift[1];
        let tz = z as i64 + shift[2];
        if tx >= 0 && ty >= 0 && tz >= 0 && tx < nx as i64 && ty < ny as i64 && tz < nz as i64 {
            out[[tx as usize, ty as usize, tz as usize]] = 1;
        }
    }
    out
}

/// Rigidly shift all three masks by one jointly drawn integer offset.
pub fn jitter_masks(
    masks: &CardiacMasks,
    rng: &mut SeededRng,
    max_shift: i64,
) -> (CardiacMasks, [i64; 3]) {
    let shift = draw_shift(rng, max_shift);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let [nx, ny, nz] = masks.shape();
    let c = masks.lv_inferior_wall_center;
    let jittered = CardiacMasks {
        rvbp: translate_mask(&masks.rvbp, shift),
        lvbp: translate_mask(&masks.lvbp, shift),
        myo: translate_mask(&masks.myo, shift),
        lv_inferior_wall_center: [
            clamp(c[0] as i64 + shift[0], nx),
            clamp(c[1] as i64 + shift[1], ny),
            clamp(c[2] as i64 + shift[2], nz),
        ],
    };
    (jittered, shift)
}

/// Single-channel mask encoding: background 0, RVBP 1/3, LVBP 2/3, myo 1.
pub fn encode_mask_channel(rvbp: &Array3<u8>, lvbp: &Array3<u8>, myo: &Array3<u8>) -> Array3<f32> {
    let mut out = Array3::zeros(rvbp.dim());
    for ((idx, v), (&l, &m)) in out
        .indexed_iter_mut()
        .zip(lvbp.iter().zip(myo.iter()))
    {
        let r = rvbp[idx];
        *v = if m == 1 {
            1.0
        } else if l == 1 {
            2.0 / 3.0
        } else if r == 1 {
            1.0 / 3.0
        } else {
            0.0
        };
    }
    out
}
