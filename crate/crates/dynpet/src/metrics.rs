//! Image-similarity and alignment metrics: NMAE, MSE, SSIM, PSNR, NMI,
//! plus per-set aggregation over a frame selection.
//!
//! SSIM is computed globally over the whole volume from its first and second
//! moments (no sliding window); a windowed variant exists behind
//! [`ssim_windowed`] for diagnostics but is never used in reported tables.

use std::collections::BTreeMap;

use ndarray::ArrayView3;

use crate::error::{Error, Result};
use crate::preprocess::FrameSelection;

/// Number of equal-width histogram bins used for NMI unless overridden.
pub const DEFAULT_NMI_BINS: usize = 64;

fn check_same_shape(pred: &ArrayView3<'_, f32>, reference: &ArrayView3<'_, f32>) -> Result<()> {
    if pred.dim() != reference.dim() {
        return Err(Error::validation(format!(
            "volume shapes differ: {:?} vs {:?}",
            pred.dim(),
            reference.dim()
        )));
    }
    Ok(())
}

fn min_max(v: &ArrayView3<'_, f32>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &x in v.iter() {
        let x = x as f64;
        min = min.min(x);
        max = max.max(x);
    }
    (min, max)
}

/// Mean absolute error normalized by the reference dynamic range.
pub fn nmae(pred: &ArrayView3<'_, f32>, reference: &ArrayView3<'_, f32>) -> Result<f64> {
    check_same_shape(pred, reference)?;
    let (min, max) = min_max(reference);
    if !(max > min) {
        return Err(Error::validation("NMAE undefined for a constant reference"));
    }
    let n = pred.len() as f64;
    let sum_abs: f64 = pred
        .iter()
        .zip(reference.iter())
        .map(|(&p, &r)| (p as f64 - r as f64).abs())
        .sum();
    Ok(sum_abs / n / (max - min))
}

/// Mean squared voxel difference.
pub fn mse_metric(pred: &ArrayView3<'_, f32>, reference: &ArrayView3<'_, f32>) -> Result<f64> {
    check_same_shape(pred, reference)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(reference.iter())
        .map(|(&p, &r)| {
            let d = p as f64 - r as f64;
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Global-statistics SSIM with `C1 = (0.01*DR)^2`, `C2 = (0.03*DR)^2`, where
/// `DR` is the reference dynamic range (unit range if the inputs are
/// constant, so identical constants score 1).
pub fn ssim(pred: &ArrayView3<'_, f32>, reference: &ArrayView3<'_, f32>) -> Result<f64> {
    check_same_shape(pred, reference)?;
    let n = pred.len() as f64;
    let (rmin, rmax) = min_max(reference);
    let dr = if rmax > rmin { rmax - rmin } else { 1.0 };
    let c1 = (0.01 * dr).powi(2);
    let c2 = (0.03 * dr).powi(2);

    let mut mean_p = 0.0;
    let mut mean_r = 0.0;
    for (&p, &r) in pred.iter().zip(reference.iter()) {
        mean_p += p as f64;
        mean_r += r as f64;
    }
    mean_p /= n;
    mean_r /= n;
    let mut var_p = 0.0;
    let mut var_r = 0.0;
    let mut cov = 0.0;
    for (&p, &r) in pred.iter().zip(reference.iter()) {
        let dp = p as f64 - mean_p;
        let dr_ = r as f64 - mean_r;
        var_p += dp * dp;
        var_r += dr_ * dr_;
        cov += dp * dr_;
    }
    var_p /= n;
    var_r /= n;
    cov /= n;

    Ok(((2.0 * mean_r * mean_p + c1) * (2.0 * cov + c2))
        / ((mean_r * mean_r + mean_p * mean_p + c1) * (var_r + var_p + c2)))
}

/// Mean local SSIM over non-overlapping cubic windows; diagnostics only.
pub fn ssim_windowed(
    pred: &ArrayView3<'_, f32>,
    reference: &ArrayView3<'_, f32>,
    window: usize,
) -> Result<f64> {
    check_same_shape(pred, reference)?;
    if window == 0 {
        return Err(Error::validation("window must be positive"));
    }
    let (nx, ny, nz) = pred.dim();
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut x = 0;
    while x < nx {
        let mut y = 0;
        while y < ny {
            let mut z = 0;
            while z < nz {
                let xe = (x + window).min(nx);
                let ye = (y + window).min(ny);
                let ze = (z + window).min(nz);
                let p = pred.slice(ndarray::s![x..xe, y..ye, z..ze]);
                let r = reference.slice(ndarray::s![x..xe, y..ye, z..ze]);
                acc += ssim(&p, &r)?;
                count += 1;
                z += window;
            }
            y += window;
        }
        x += window;
    }
    Ok(acc / count as f64)
}

/// Peak signal-to-noise ratio in dB, `10*log10(max(ref)^2 / MSE)`.
/// Identical volumes return positive infinity.
pub fn psnr(pred: &ArrayView3<'_, f32>, reference: &ArrayView3<'_, f32>) -> Result<f64> {
    let mse = mse_metric(pred, reference)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let (_, rmax) = min_max(reference);
    Ok(10.0 * (rmax * rmax / mse).log10())
}

/// Normalized mutual information `(H(A)+H(B)) / H(A,B)` from a joint
/// histogram with equal-width bins over the union intensity range.
pub fn nmi(
    moving: &ArrayView3<'_, f32>,
    reference: &ArrayView3<'_, f32>,
    bins: usize,
) -> Result<f64> {
    check_same_shape(moving, reference)?;
    if bins < 2 {
        return Err(Error::validation("NMI needs at least 2 bins"));
    }
    let (amin, amax) = min_max(moving);
    let (bmin, bmax) = min_max(reference);
    let lo = amin.min(bmin);
    let hi = amax.max(bmax);
    if !(hi > lo) {
        return Err(Error::validation(
            "NMI undefined: all intensities fall in a single bin",
        ));
    }
    let width = (hi - lo) / bins as f64;
    let bin_of = |v: f64| -> usize { (((v - lo) / width) as usize).min(bins - 1) };

    let mut joint = vec![0.0f64; bins * bins];
    for (&a, &b) in moving.iter().zip(reference.iter()) {
        joint[bin_of(a as f64) * bins + bin_of(b as f64)] += 1.0;
    }
    let n = moving.len() as f64;
    let mut ha = 0.0;
    let mut hb = 0.0;
    let mut hab = 0.0;
    let mut pa = vec![0.0f64; bins];
    let mut pb = vec![0.0f64; bins];
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] / n;
            if p > 0.0 {
                hab -= p * p.ln();
            }
            pa[i] += p;
            pb[j] += p;
        }
    }
    for &p in &pa {
        if p > 0.0 {
            ha -= p * p.ln();
        }
    }
    for &p in &pb {
        if p > 0.0 {
            hb -= p * p.ln();
        }
    }
    if hab == 0.0 {
        return Err(Error::validation(
            "NMI undefined: joint histogram is a single cell",
        ));
    }
    Ok((ha + hb) / hab)
}

/// All five per-frame similarity values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub nmae: f64,
    pub mse: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub nmi: f64,
}

impl Metrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "nmae" => Some(self.nmae),
            "mse" => Some(self.mse),
            "ssim" => Some(self.ssim),
            "psnr" => Some(self.psnr),
            "nmi" => Some(self.nmi),
            _ => None,
        }
    }
}

pub const METRIC_NAMES: [&str; 5] = ["nmae", "mse", "ssim", "psnr", "nmi"];

/// Compute all metrics for one (prediction, reference) pair.
pub fn compute_metrics(
    pred: &ArrayView3<'_, f32>,
    reference: &ArrayView3<'_, f32>,
) -> Result<Metrics> {
    Ok(Metrics {
        nmae: nmae(pred, reference)?,
        mse: mse_metric(pred, reference)?,
        ssim: ssim(pred, reference)?,
        psnr: psnr(pred, reference)?,
        nmi: nmi(pred, reference, DEFAULT_NMI_BINS)?,
    })
}

/// Mean and sample standard deviation per metric over a set of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SetStats {
    pub n: usize,
    pub mean: Metrics,
    pub sd: Metrics,
}

/// Per-frame metrics of one study plus per-set aggregates. Set membership
/// comes from the frame selection: EQ-1, EQ+1, pre-EQ (before the EQ index),
/// and all included frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_frame: BTreeMap<usize, Metrics>,
    pub sets: BTreeMap<String, SetStats>,
}

pub const METRIC_SETS: [&str; 4] = ["eq_minus_1", "eq_plus_1", "pre_eq", "all"];

fn aggregate(values: &[Metrics]) -> Option<SetStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean_of = |f: &dyn Fn(&Metrics) -> f64| values.iter().map(|m| f(m)).sum::<f64>() / n;
    let sd_of = |f: &dyn Fn(&Metrics) -> f64, mean: f64| {
        if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
    };
    let mk = |f: &dyn Fn(&Metrics) -> f64| {
        let mean = mean_of(f);
        (mean, sd_of(f, mean))
    };
    let (m_nmae, s_nmae) = mk(&|m| m.nmae);
    let (m_mse, s_mse) = mk(&|m| m.mse);
    let (m_ssim, s_ssim) = mk(&|m| m.ssim);
    let (m_psnr, s_psnr) = mk(&|m| m.psnr);
    let (m_nmi, s_nmi) = mk(&|m| m.nmi);
    Some(SetStats {
        n: values.len(),
        mean: Metrics {
            nmae: m_nmae,
            mse: m_mse,
            ssim: m_ssim,
            psnr: m_psnr,
            nmi: m_nmi,
        },
        sd: Metrics {
            nmae: s_nmae,
            mse: s_mse,
            ssim: s_ssim,
            psnr: s_psnr,
            nmi: s_nmi,
        },
    })
}

/// Frames of `selection` belonging to a named metric set.
pub fn set_members(selection: &FrameSelection, set: &str) -> Vec<usize> {
    match set {
        "eq_minus_1" => selection.eq_minus_one().into_iter().collect(),
        "eq_plus_1" => selection.eq_plus_one().into_iter().collect(),
        "pre_eq" => selection.pre_eq(),
        "all" => selection.included.clone(),
        _ => Vec::new(),
    }
}

/// Group per-frame metrics into the four reporting sets.
pub fn build_report(
    per_frame: &BTreeMap<usize, Metrics>,
    selection: &FrameSelection,
) -> MetricReport {
    let mut sets = BTreeMap::new();
    for set in METRIC_SETS {
        let values: Vec<Metrics> = set_members(selection, set)
            .iter()
            .filter_map(|i| per_frame.get(i).copied())
            .collect();
        if let Some(stats) = aggregate(&values) {
            sets.insert(set.to_string(), stats);
        }
    }
    MetricReport {
        per_frame: per_frame.clone(),
        sets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::Rng;

    fn vol(values: &[f32], shape: (usize, usize, usize)) -> Array3<f32> {
        Array3::from_shape_vec(shape, values.to_vec()).unwrap()
    }

    fn random_pair(seed: u64, n: usize) -> (Array3<f32>, Array3<f32>) {
        let mut rng = crate::rng::rng_from(seed, 0);
        let a: Vec<f32> = (0..n * n * n).map(|_| rng.gen_range(-3.0..7.0)).collect();
        let b: Vec<f32> = (0..n * n * n).map(|_| rng.gen_range(-1.0..9.0)).collect();
        (vol(&a, (n, n, n)), vol(&b, (n, n, n)))
    }

    #[test]
    fn nmae_arithmetic_cases() {
        let reference = vol(&[0.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], (2, 2, 2));
        let pred = reference.mapv(|v| v + 0.1);
        assert_relative_eq!(
            nmae(&pred.view(), &reference.view()).unwrap(),
            0.05,
            max_relative = 1e-6
        );
        assert_eq!(nmae(&reference.view(), &reference.view()).unwrap(), 0.0);
        let constant = Array3::from_elem((2, 2, 2), 4.0f32);
        assert!(nmae(&pred.view(), &constant.view()).is_err());
    }

    #[test]
    fn mse_constant_difference() {
        let reference = vol(&[0.0, 2.0, 1.0, 5.0, 1.0, 3.0, 1.0, 1.0], (2, 2, 2));
        let pred = reference.mapv(|v| v + 0.5);
        assert_relative_eq!(
            mse_metric(&pred.view(), &reference.view()).unwrap(),
            0.25,
            max_relative = 1e-6
        );
    }

    #[test]
    fn ssim_identity_and_constant_cases() {
        let (a, _) = random_pair(3, 4);
        assert_relative_eq!(ssim(&a.view(), &a.view()).unwrap(), 1.0, max_relative = 1e-12);
        let c1 = Array3::from_elem((3, 3, 3), 2.5f32);
        assert_relative_eq!(ssim(&c1.view(), &c1.view()).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn ssim_constant_offset_is_below_one() {
        let (_, reference) = random_pair(4, 4);
        let pred = reference.mapv(|v| v + 1.5);
        // Direct evaluation of the global formula.
        let n = reference.len() as f64;
        let mean_r: f64 = reference.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mean_p = mean_r + 1.5;
        let var: f64 = reference
            .iter()
            .map(|&v| (v as f64 - mean_r).powi(2))
            .sum::<f64>()
            / n;
        let (rmin, rmax) = min_max(&reference.view());
        let dr = rmax - rmin;
        let c1 = (0.01 * dr).powi(2);
        let c2 = (0.03 * dr).powi(2);
        let expected = ((2.0 * mean_r * mean_p + c1) * (2.0 * var + c2))
            / ((mean_r * mean_r + mean_p * mean_p + c1) * (2.0 * var + c2));
        let got = ssim(&pred.view(), &reference.view()).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-9);
        assert!(got < 1.0);
    }

    #[test]
    fn psnr_arithmetic_and_scale_invariance() {
        // max(ref) = 1, MSE = 0.01 -> 20 dB.
        let mut reference = Array3::from_elem((4, 4, 4), 0.0f32);
        reference[[0, 0, 0]] = 1.0;
        let pred = reference.mapv(|v| v + 0.1);
        assert_relative_eq!(
            psnr(&pred.view(), &reference.view()).unwrap(),
            20.0,
            max_relative = 1e-6
        );
        // Scaling both volumes cancels.
        let (a, b) = random_pair(5, 4);
        let p1 = psnr(&a.view(), &b.view()).unwrap();
        let a2 = a.mapv(|v| 3.0 * v);
        let b2 = b.mapv(|v| 3.0 * v);
        let p2 = psnr(&a2.view(), &b2.view()).unwrap();
        assert_relative_eq!(p1, p2, max_relative = 1e-6);
        // Identical volumes saturate.
        assert!(psnr(&a.view(), &a.view()).unwrap().is_infinite());
    }

    #[test]
    fn nmi_self_similarity_is_two() {
        let (a, _) = random_pair(6, 6);
        let v = nmi(&a.view(), &a.view(), 32).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn nmi_independent_images_near_one() {
        let (a, b) = random_pair(7, 12); // 1728 voxels
        let v = nmi(&a.view(), &b.view(), 16).unwrap();
        assert!((v - 1.0).abs() < 0.05, "NMI {v}");
    }

    #[test]
    fn nmi_invariant_to_bin_preserving_monotone_relabeling() {
        // Values land in distinct bins before and after the monotone map.
        let raw = [0.0f32, 10.0, 20.0, 30.0, 10.0, 20.0, 0.0, 30.0];
        let mapped = raw.map(|v| match v as i32 {
            0 => 2.0f32,
            10 => 9.0,
            20 => 16.0,
            _ => 29.0,
        });
        let reference = vol(&[1.0, 2.0, 1.0, 4.0, 2.0, 4.0, 1.0, 2.0], (2, 2, 2));
        let a = vol(&raw, (2, 2, 2));
        let b = vol(&mapped, (2, 2, 2));
        let v1 = nmi(&a.view(), &reference.view(), 4).unwrap();
        let v2 = nmi(&b.view(), &reference.view(), 4).unwrap();
        assert_relative_eq!(v1, v2, max_relative = 1e-12);
    }

    #[test]
    fn nmi_rejects_degenerate_inputs() {
        let c = Array3::from_elem((2, 2, 2), 1.0f32);
        assert!(nmi(&c.view(), &c.view(), 16).is_err());
        let (a, b) = random_pair(8, 3);
        assert!(nmi(&a.view(), &b.view(), 1).is_err());
    }

    #[test]
    fn mse_is_symmetric_nmae_and_psnr_are_not() {
        let (a, b) = random_pair(9, 5);
        assert_relative_eq!(
            mse_metric(&a.view(), &b.view()).unwrap(),
            mse_metric(&b.view(), &a.view()).unwrap(),
            max_relative = 1e-12
        );
        // The normalizers use the reference only, so swapping changes them.
        let n1 = nmae(&a.view(), &b.view()).unwrap();
        let n2 = nmae(&b.view(), &a.view()).unwrap();
        assert!((n1 - n2).abs() > 1e-9);
        let p1 = psnr(&a.view(), &b.view()).unwrap();
        let p2 = psnr(&b.view(), &a.view()).unwrap();
        assert!((p1 - p2).abs() > 1e-9);
    }

    #[test]
    fn report_sets_follow_selection() {
        let selection = FrameSelection {
            included: vec![2, 3, 4, 5],
            eq_index: 4,
            reference_index: 8,
        };
        let mut per_frame = BTreeMap::new();
        for i in [2usize, 3, 4, 5] {
            per_frame.insert(
                i,
                Metrics {
                    nmae: i as f64,
                    mse: 1.0,
                    ssim: 0.5,
                    psnr: 10.0,
                    nmi: 1.1,
                },
            );
        }
        let report = build_report(&per_frame, &selection);
        assert_eq!(report.sets["all"].n, 4);
        assert_eq!(report.sets["pre_eq"].n, 2); // frames 2, 3
        assert_eq!(report.sets["eq_minus_1"].n, 1); // frame 3
        assert_eq!(report.sets["eq_plus_1"].n, 1); // frame 5
        assert_relative_eq!(report.sets["pre_eq"].mean.nmae, 2.5);
        // Statistics recomputable from per-frame values.
        let vals: Vec<f64> = [2usize, 3].iter().map(|i| report.per_frame[i].nmae).collect();
        let mean = vals.iter().sum::<f64>() / 2.0;
        assert_relative_eq!(report.sets["pre_eq"].mean.nmae, mean);
    }

    proptest! {
        #[test]
        fn brute_force_oracles_match(seed in 0u64..500) {
            let mut rng = crate::rng::rng_from(seed, 1);
            let n = 3 + (seed % 3) as usize;
            let len = n * n * n;
            let a_v: Vec<f32> = (0..len).map(|_| rng.gen_range(-2.0..5.0)).collect();
            let b_v: Vec<f32> = (0..len).map(|_| rng.gen_range(-1.0..6.0)).collect();
            let a = vol(&a_v, (n, n, n));
            let b = vol(&b_v, (n, n, n));

            // Brute-force loops, f64 throughout.
            let bmin = b_v.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
            let bmax = b_v.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut abs_sum = 0.0f64;
            let mut sq_sum = 0.0f64;
            for i in 0..len {
                abs_sum += (a_v[i] as f64 - b_v[i] as f64).abs();
                sq_sum += (a_v[i] as f64 - b_v[i] as f64).powi(2);
            }
            let want_nmae = abs_sum / len as f64 / (bmax - bmin);
            let want_mse = sq_sum / len as f64;
            let want_psnr = 10.0 * (bmax * bmax / want_mse).log10();

            prop_assert!((nmae(&a.view(), &b.view()).unwrap() - want_nmae).abs() <= 1e-6 * want_nmae.abs().max(1e-12));
            prop_assert!((mse_metric(&a.view(), &b.view()).unwrap() - want_mse).abs() <= 1e-6 * want_mse.abs());
            prop_assert!((psnr(&a.view(), &b.view()).unwrap() - want_psnr).abs() <= 1e-6 * want_psnr.abs());
        }
    }
}
