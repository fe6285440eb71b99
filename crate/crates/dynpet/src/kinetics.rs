//! One-tissue compartment modeling, weighted least-squares fitting, and
//! Renkin-Crone conversion of the uptake rate constant to myocardial blood
//! flow.
//!
//! The tissue model is `dCt/dt = K1*Cp - k2*Ct` with a blood-volume /
//! spillover fraction `v` as the third parameter:
//! `C_model = (1-v)*Ct + v*Cp`. Rate constants are per minute internally;
//! frame schedules are given in seconds and converted at the boundary.

use ndarray::ArrayView3;

use crate::error::{Error, Result};
use crate::volumes::DynamicStudy;

/// Fine-grid step used for the compartment convolution, in seconds.
pub const FINE_DT_S: f64 = 0.1;

/// Renkin-Crone parameters for Rb-82: K1 = MBF * (1 - alpha * exp(-beta/MBF)).
pub const RENKIN_CRONE_ALPHA: f64 = 0.74;
pub const RENKIN_CRONE_BETA: f64 = 0.51;

/// Frame timing in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSchedule {
    pub start_times: Vec<f64>,
    pub durations: Vec<f64>,
}

impl FrameSchedule {
    pub fn new(start_times: Vec<f64>, durations: Vec<f64>) -> Result<Self> {
        let s = Self {
            start_times,
            durations,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_study(study: &DynamicStudy) -> Self {
        Self {
            start_times: study.frame_start_times.clone(),
            durations: study.frame_durations.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_times.is_empty() || self.start_times.len() != self.durations.len() {
            return Err(Error::validation("schedule start/duration lengths differ or empty"));
        }
        if self.durations.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::validation("schedule durations must be positive"));
        }
        if self.start_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("schedule start times must be increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.start_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_times.is_empty()
    }

    pub fn mid_times(&self) -> Vec<f64> {
        self.start_times
            .iter()
            .zip(&self.durations)
            .map(|(s, d)| s + 0.5 * d)
            .collect()
    }

    pub fn end_time(&self) -> f64 {
        let i = self.len() - 1;
        self.start_times[i] + self.durations[i]
    }
}

/// Per-frame fitting weights, `w_i = dur_i^2 / (T_i * DCF_i^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitWeights(pub Vec<f64>);

/// Result of a compartment fit.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticFit {
    /// Uptake rate constant, mL/min/g.
    pub k1: f64,
    /// Clearance rate constant, 1/min.
    pub k2: f64,
    /// Blood-volume / spillover fraction.
    pub v: f64,
    /// Myocardial blood flow, mL/min/g.
    pub mbf: f64,
    /// Weighted mean squared residual, `(1/T) * sum_i w_i (model_i - meas_i)^2`.
    pub weighted_residual: f64,
    pub converged: bool,
}

/// Exact one-tissue solution on a uniform grid for piecewise-linear input.
///
/// `cp` is sampled at `t = i*dt_s` seconds; rates are per minute. Returns
/// `Ct` on the same grid with `Ct(0) = 0`.
pub fn solve_one_tissue(cp: &[f64], dt_s: f64, k1_per_min: f64, k2_per_min: f64) -> Vec<f64> {
    let dt = dt_s / 60.0; // minutes
    let k2 = k2_per_min;
    let x = k2 * dt;
    let decay = (-x).exp();
    // i1 = int_0^dt e^{-k2 (dt - s)} ds,  i2 = int_0^dt s e^{-k2 (dt - s)} ds
    let (i1, i2) = if x > 1e-10 {
        let i1 = -(-x).exp_m1() / k2;
        (i1, (dt - i1) / k2)
    } else {
        // series limits: i1 -> dt, i2 -> dt^2/2
        (dt * (1.0 - 0.5 * x), dt * dt * (0.5 - x / 6.0))
    };
    let mut ct = vec![0.0; cp.len()];
    for n in 0..cp.len().saturating_sub(1) {
        let a = cp[n];
        let b = (cp[n + 1] - cp[n]) / dt;
        ct[n + 1] = ct[n] * decay + k1_per_min * (a * i1 + b * i2);
    }
    ct
}

/// Linear interpolation with constant extension outside the sample range.
fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    // xs strictly increasing
    let mut hi = xs.partition_point(|&v| v < x);
    if hi == 0 {
        hi = 1;
    }
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Mean of a fine-grid curve over each frame interval, by composite
/// trapezoid quadrature with at least `min_points` sample intervals.
pub fn frame_average(
    curve: &[f64],
    dt_s: f64,
    schedule: &FrameSchedule,
    min_points: usize,
) -> Vec<f64> {
    let n_fine = curve.len();
    let sample = |t: f64| -> f64 {
        if t <= 0.0 {
            return curve[0];
        }
        let pos = t / dt_s;
        let i = pos.floor() as usize;
        if i + 1 >= n_fine {
            return curve[n_fine - 1];
        }
        let frac = pos - i as f64;
        curve[i] * (1.0 - frac) + curve[i + 1] * frac
    };
    schedule
        .start_times
        .iter()
        .zip(&schedule.durations)
        .map(|(&t0, &dur)| {
            let n = ((dur / dt_s).ceil() as usize).max(min_points);
            let h = dur / n as f64;
            let mut acc = 0.5 * (sample(t0) + sample(t0 + dur));
            for j in 1..n {
                acc += sample(t0 + h * j as f64);
            }
            acc * h / dur
        })
        .collect()
}

/// Build the fine-grid plasma curve from a measured input TAC by linear
/// interpolation at frame mid-times (constant extension at the ends).
pub fn input_to_fine_grid(input_tac: &[f64], schedule: &FrameSchedule) -> Vec<f64> {
    let mids = schedule.mid_times();
    let end = schedule.end_time();
    let n = (end / FINE_DT_S).ceil() as usize + 1;
    (0..n)
        .map(|i| interp_clamped(&mids, input_tac, i as f64 * FINE_DT_S))
        .collect()
}

/// Model TAC for parameters `(k1, k2, v)` given a measured input TAC.
///
/// `C_model = (1-v)*Ct + v*Cp`, frame-averaged to the schedule.
pub fn forward_model(
    k1: f64,
    k2: f64,
    v: f64,
    input_tac: &[f64],
    schedule: &FrameSchedule,
) -> Result<Vec<f64>> {
    if input_tac.len() != schedule.len() {
        return Err(Error::validation("input TAC length does not match schedule"));
    }
    if !(k1 >= 0.0) || !(k2 >= 0.0) {
        return Err(Error::validation("K1 and k2 must be nonnegative"));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::validation("blood fraction v must lie in [0, 1]"));
    }
    let cp = input_to_fine_grid(input_tac, schedule);
    Ok(model_from_fine_input(k1, k2, v, &cp, schedule))
}

/// Same as [`forward_model`] but with the plasma curve already on the fine grid.
pub fn model_from_fine_input(
    k1: f64,
    k2: f64,
    v: f64,
    cp_fine: &[f64],
    schedule: &FrameSchedule,
) -> Vec<f64> {
    let ct = solve_one_tissue(cp_fine, FINE_DT_S, k1, k2);
    let mixed: Vec<f64> = ct
        .iter()
        .zip(cp_fine)
        .map(|(&t, &p)| (1.0 - v) * t + v * p)
        .collect();
    frame_average(&mixed, FINE_DT_S, schedule, 10)
}

/// Eq.-style fitting weights from a study: `w_i = dur_i^2 / (T_i * DCF_i^2)`
/// with `T_i` the total activity of frame `i`. Zero-activity frames get
/// weight zero.
pub fn fit_weights(study: &DynamicStudy) -> FitWeights {
    let weights = (0..study.num_frames())
        .map(|i| {
            let total: f64 = study.frame(i).iter().map(|&v| v as f64).sum();
            weight_for(study.frame_durations[i], total, study.decay_correction_factors[i])
        })
        .collect();
    FitWeights(weights)
}

/// Single-frame weight; exposed for direct-formula checks.
pub fn weight_for(duration: f64, frame_total_activity: f64, dcf: f64) -> f64 {
    if frame_total_activity <= 0.0 {
        0.0
    } else {
        duration * duration / (frame_total_activity * dcf * dcf)
    }
}

/// Multi-start initialization grid for the compartment fit.
#[derive(Debug, Clone)]
pub struct MultiStartGrid {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub v: Vec<f64>,
}

impl Default for MultiStartGrid {
    fn default() -> Self {
        Self {
            k1: vec![0.2, 0.6, 1.2],
            k2: vec![0.05, 0.2, 0.6],
            v: vec![0.0, 0.2],
        }
    }
}

const K1_BOUNDS: (f64, f64) = (1e-6, 5.0);
const K2_BOUNDS: (f64, f64) = (1e-6, 5.0);
const V_BOUNDS: (f64, f64) = (0.0, 0.7);

fn clamp_params(p: &mut [f64; 3]) {
    p[0] = p[0].clamp(K1_BOUNDS.0, K1_BOUNDS.1);
    p[1] = p[1].clamp(K2_BOUNDS.0, K2_BOUNDS.1);
    p[2] = p[2].clamp(V_BOUNDS.0, V_BOUNDS.1);
}

/// Weighted sum of squared residuals (not yet normalized per frame).
fn objective(
    p: &[f64; 3],
    cp_fine: &[f64],
    myo_tac: &[f64],
    w: &[f64],
    schedule: &FrameSchedule,
) -> f64 {
    let model = model_from_fine_input(p[0], p[1], p[2], cp_fine, schedule);
    model
        .iter()
        .zip(myo_tac)
        .zip(w)
        .map(|((&m, &y), &wi)| wi * (m - y) * (m - y))
        .sum()
}

/// Levenberg-Marquardt descent with box projection from one start point.
/// Returns (params, weighted SSR, converged).
fn lm_fit(
    start: [f64; 3],
    cp_fine: &[f64],
    myo_tac: &[f64],
    w: &[f64],
    schedule: &FrameSchedule,
) -> ([f64; 3], f64, bool) {
    let t = myo_tac.len();
    let sqrt_w: Vec<f64> = w.iter().map(|&x| x.sqrt()).collect();
    let residuals = |p: &[f64; 3]| -> Vec<f64> {
        let model = model_from_fine_input(p[0], p[1], p[2], cp_fine, schedule);
        (0..t).map(|i| sqrt_w[i] * (model[i] - myo_tac[i])).collect()
    };

    let mut p = start;
    clamp_params(&mut p);
    let mut r = residuals(&p);
    let mut ssr: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut small_drops = 0u32;

    for _ in 0..300 {
        // Numerical Jacobian, central differences.
        let mut jac = vec![[0.0f64; 3]; t];
        for j in 0..3 {
            let step = 1e-5 * p[j].abs().max(1e-3);
            let mut ph = p;
            ph[j] += step;
            clamp_params(&mut ph);
            let mut pl = p;
            pl[j] -= step;
            clamp_params(&mut pl);
            let denom = ph[j] - pl[j];
            if denom.abs() < 1e-300 {
                continue;
            }
            let rh = residuals(&ph);
            let rl = residuals(&pl);
            for i in 0..t {
                jac[i][j] = (rh[i] - rl[i]) / denom;
            }
        }
        // Normal equations.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for i in 0..t {
            for a in 0..3 {
                jtr[a] += jac[i][a] * r[i];
                for b in 0..3 {
                    jtj[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        let grad_norm = jtr.iter().map(|x| x * x).sum::<f64>().sqrt();
        if grad_norm < 1e-12 * (1.0 + ssr) {
            converged = true;
            break;
        }

        let mut improved = false;
        for _ in 0..25 {
            // (JtJ + lambda * diag(JtJ)) delta = -Jtr
            let mut a = jtj;
            for d in 0..3 {
                a[d][d] += lambda * jtj[d][d].max(1e-12);
            }
            let delta = match solve3(&a, &[-jtr[0], -jtr[1], -jtr[2]]) {
                Some(d) => d,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut p_new = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
            clamp_params(&mut p_new);
            let r_new = residuals(&p_new);
            let ssr_new: f64 = r_new.iter().map(|x| x * x).sum();
            if ssr_new.is_finite() && ssr_new < ssr {
                let rel_drop = (ssr - ssr_new) / ssr.max(1e-300);
                p = p_new;
                r = r_new;
                ssr = ssr_new;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_drop < 1e-12 {
                    converged = true;
                } else if rel_drop < 1e-9 {
                    // Sustained negligible progress counts as converged; this
                    // covers flat valleys where a parameter is unidentifiable.
                    small_drops += 1;
                    if small_drops >= 3 {
                        converged = true;
                    }
                } else {
                    small_drops = 0;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !improved {
            converged = true; // no downhill direction left at this scale
            break;
        }
        if converged {
            break;
        }
    }
    (p, ssr, converged)
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = *a;
    let mut rhs = *b;
    for col in 0..3 {
        let mut piv = col;
        for row in col + 1..3 {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Weighted least-squares compartment fit from a coarse multi-start grid.
pub fn fit_compartment(
    myo_tac: &[f64],
    lvbp_tac: &[f64],
    weights: &FitWeights,
    schedule: &FrameSchedule,
    init_grid: &MultiStartGrid,
) -> Result<KineticFit> {
    schedule.validate()?;
    let t = schedule.len();
    if myo_tac.len() != t || lvbp_tac.len() != t || weights.0.len() != t {
        return Err(Error::validation("TAC / weight / schedule lengths differ"));
    }
    if weights.0.iter().filter(|&&w| w > 0.0).count() < 4 {
        return Err(Error::validation(
            "need at least 4 frames with positive weight to fit 3 parameters",
        ));
    }
    let cp_fine = input_to_fine_grid(lvbp_tac, schedule);

    let mut best: Option<([f64; 3], f64, bool)> = None;
    for &k1 in &init_grid.k1 {
        for &k2 in &init_grid.k2 {
            for &v in &init_grid.v {
                let (p, ssr, conv) = lm_fit([k1, k2, v], &cp_fine, myo_tac, &weights.0, schedule);
                if !ssr.is_finite() {
                    continue;
                }
                if best.as_ref().map_or(true, |(_, s, _)| ssr < *s) {
                    best = Some((p, ssr, conv));
                }
            }
        }
    }
    let (p, ssr, converged) =
        best.ok_or_else(|| Error::NonConvergence("all multi-start fits diverged".into()))?;
    let mbf = if p[0] > 0.0 {
        k1_to_mbf(p[0], RENKIN_CRONE_ALPHA, RENKIN_CRONE_BETA)?
    } else {
        0.0
    };
    Ok(KineticFit {
        k1: p[0],
        k2: p[1],
        v: p[2],
        mbf,
        weighted_residual: ssr / t as f64,
        converged,
    })
}

/// Renkin-Crone forward map: `K1 = MBF * (1 - alpha * exp(-beta / MBF))`.
pub fn renkin_crone_forward(mbf: f64, alpha: f64, beta: f64) -> f64 {
    mbf * (1.0 - alpha * (-beta / mbf).exp())
}

/// Invert the Renkin-Crone map by bracketed bisection.
///
/// The map is strictly increasing for `alpha` in (0,1), so the positive root
/// is unique; the result satisfies `|forward(MBF) - K1| < 1e-8`.
pub fn k1_to_mbf(k1: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(k1 > 0.0) {
        return Err(Error::validation("K1 must be positive for MBF conversion"));
    }
    if alpha == 0.0 {
        return Ok(k1); // extraction fraction is 1
    }
    if !(0.0..1.0).contains(&alpha) || !(beta > 0.0) {
        return Err(Error::validation("alpha must lie in [0,1) and beta > 0"));
    }
    // g(m) <= m, so the root is >= k1; g(m) >= m*(1-alpha) bounds it above.
    let mut lo = k1;
    let mut hi = k1 / (1.0 - alpha) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = renkin_crone_forward(mid, alpha, beta);
        if (g - k1).abs() < 1e-10 {
            return Ok(mid);
        }
        if g < k1 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Percentage differences (Eq.-style): `100 * (corrected - baseline) / baseline`
/// for K1 and MBF.
pub fn percent_diff(corrected: &KineticFit, baseline: &KineticFit) -> Result<(f64, f64)> {
    if !(baseline.k1 > 0.0) || !(baseline.mbf > 0.0) {
        return Err(Error::validation("baseline K1 and MBF must be positive"));
    }
    Ok((
        100.0 * (corrected.k1 - baseline.k1) / baseline.k1,
        100.0 * (corrected.mbf - baseline.mbf) / baseline.mbf,
    ))
}

/// Total activity of one frame (sum over voxels), used by Eq.-style weights.
pub fn frame_total_activity(frame: &ArrayView3<'_, f32>) -> f64 {
    frame.iter().map(|&v| v as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn paper_schedule() -> FrameSchedule {
        let durations: Vec<f64> = [5.0; 14]
            .iter()
            .chain([10.0; 6].iter())
            .chain([20.0; 3].iter())
            .chain([30.0; 3].iter())
            .chain([90.0; 1].iter())
            .copied()
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
        FrameSchedule::new(starts, durations).unwrap()
    }

    /// Independent oracle: classic RK4 on dCt/dt = k1*Cp - k2*Ct (per minute).
    fn rk4_one_tissue(cp: &[f64], dt_s: f64, k1: f64, k2: f64) -> Vec<f64> {
        let dt = dt_s / 60.0;
        let sample = |idx_f: f64| -> f64 {
            let i = idx_f.floor() as usize;
            if i + 1 >= cp.len() {
                return cp[cp.len() - 1];
            }
            let frac = idx_f - i as f64;
            cp[i] * (1.0 - frac) + cp[i + 1] * frac
        };
        let mut ct = vec![0.0; cp.len()];
        for n in 0..cp.len() - 1 {
            let f = |idx_f: f64, y: f64| k1 * sample(idx_f) - k2 * y;
            let y = ct[n];
            let k_1 = f(n as f64, y);
            let k_2 = f(n as f64 + 0.5, y + 0.5 * dt * k_1);
            let k_3 = f(n as f64 + 0.5, y + 0.5 * dt * k_2);
            let k_4 = f(n as f64 + 1.0, y + dt * k_3);
            ct[n + 1] = y + dt / 6.0 * (k_1 + 2.0 * k_2 + 2.0 * k_3 + k_4);
        }
        ct
    }

    #[test]
    fn solver_matches_rk4_oracle() {
        // A bolus-like input on the fine grid.
        let n = 3000;
        let cp: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * FINE_DT_S;
                let tp = 25.0;
                (t / tp).powf(3.0) * (3.0 * (1.0 - t / tp)).exp() * 1e4
            })
            .collect();
        let ours = solve_one_tissue(&cp, FINE_DT_S, 0.7, 0.25);
        let oracle = rk4_one_tissue(&cp, FINE_DT_S, 0.7, 0.25);
        let peak = oracle.iter().cloned().fold(0.0, f64::max);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-5 * peak, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_input_analytic_solution() {
        let c = 5000.0;
        let (k1, k2) = (0.6, 0.2);
        let n = 4000;
        let cp = vec![c; n];
        let ct = solve_one_tissue(&cp, FINE_DT_S, k1, k2);
        for (i, &v) in ct.iter().enumerate().step_by(500) {
            let t_min = i as f64 * FINE_DT_S / 60.0;
            let expected = k1 * c / k2 * (1.0 - (-k2 * t_min).exp());
            assert_relative_eq!(v, expected, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_k1_gives_zero_tac() {
        let schedule = paper_schedule();
        let input = vec![1000.0; schedule.len()];
        let model = forward_model(0.0, 0.3, 0.0, &input, &schedule).unwrap();
        assert!(model.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn blood_only_limit_reproduces_input() {
        // Linear input: frame-averaging the interpolant is exact.
        let schedule = FrameSchedule::new(
            (0..8).map(|i| 10.0 * i as f64).collect(),
            vec![10.0; 8],
        )
        .unwrap();
        let mids = schedule.mid_times();
        let input: Vec<f64> = mids.iter().map(|&t| 3.0 * t + 40.0).collect();
        let model = forward_model(0.5, 0.2, 1.0, &input, &schedule).unwrap();
        // Edge frames see the constant end-extension of the interpolant, so
        // only interior frames reproduce the input exactly.
        for i in 1..input.len() - 1 {
            assert_relative_eq!(model[i], input[i], max_relative = 1e-9);
        }
    }

    #[test]
    fn forward_is_linear_in_k1_at_zero_v() {
        let schedule = paper_schedule();
        let mids = schedule.mid_times();
        let input: Vec<f64> = mids
            .iter()
            .map(|&t| 1e4 * (t / 30.0) * (-t / 40.0).exp())
            .collect();
        let m1 = forward_model(0.3, 0.2, 0.0, &input, &schedule).unwrap();
        let m2 = forward_model(0.9, 0.2, 0.0, &input, &schedule).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            assert_relative_eq!(3.0 * a, *b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_formula_arithmetic() {
        assert_relative_eq!(weight_for(10.0, 1000.0, 1.0), 0.1);
        assert_relative_eq!(weight_for(10.0, 1000.0, 2.0), 0.025);
        assert_eq!(weight_for(10.0, 0.0, 1.0), 0.0);
    }

    fn synthetic_input(schedule: &FrameSchedule) -> Vec<f64> {
        let mids = schedule.mid_times();
        mids.iter()
            .map(|&t| {
                let tp = 25.0;
                let g = (t / tp).powf(3.0) * (3.0 * (1.0 - t / tp)).exp();
                1e4 * (g + 0.05 * (t / tp).min(1.0))
            })
            .collect()
    }

    #[test]
    fn noise_free_fit_recovers_parameters() {
        let schedule = paper_schedule();
        let input = synthetic_input(&schedule);
        let (k1, k2, v) = (0.6, 0.2, 0.05);
        let myo = forward_model(k1, k2, v, &input, &schedule).unwrap();
        let w = FitWeights(vec![1.0; schedule.len()]);
        let fit = fit_compartment(&myo, &input, &w, &schedule, &MultiStartGrid::default()).unwrap();
        assert_relative_eq!(fit.k1, k1, max_relative = 1e-3);
        assert_relative_eq!(fit.k2, k2, max_relative = 1e-3);
        assert_relative_eq!(fit.v, v, max_relative = 1e-3);
        assert!(fit.mbf > fit.k1);
    }

    #[test]
    fn noisy_fit_k1_within_ten_percent_median() {
        let schedule = paper_schedule();
        let input = synthetic_input(&schedule);
        let (k1, k2, v) = (0.8, 0.25, 0.1);
        let clean = forward_model(k1, k2, v, &input, &schedule).unwrap();
        let peak = clean.iter().cloned().fold(0.0, f64::max);
        let w = FitWeights(vec![1.0; schedule.len()]);
        let small_grid = MultiStartGrid {
            k1: vec![0.2, 1.2],
            k2: vec![0.1, 0.5],
            v: vec![0.0, 0.2],
        };
        let mut errs: Vec<f64> = (0..50)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noisy: Vec<f64> = clean
                    .iter()
                    .map(|&c| {
                        // Box-Muller normal sample
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        let z = (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos();
                        c + 0.05 * peak * z
                    })
                    .collect();
                let fit =
                    fit_compartment(&noisy, &input, &w, &schedule, &small_grid).unwrap();
                (fit.k1 - k1).abs() / k1
            })
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errs[errs.len() / 2];
        assert!(median < 0.10, "median relative K1 error {median}");
    }

    #[test]
    fn flat_tac_fits_to_near_zero_k1() {
        let schedule = paper_schedule();
        let input = synthetic_input(&schedule);
        let myo = vec![0.0; schedule.len()];
        let w = FitWeights(vec![1.0; schedule.len()]);
        let fit = fit_compartment(&myo, &input, &w, &schedule, &MultiStartGrid::default()).unwrap();
        assert!(fit.k1 < 1e-3, "k1 = {}", fit.k1);
        assert!(fit.converged);
    }

    #[test]
    fn weight_scaling_leaves_argmin_unchanged() {
        let schedule = paper_schedule();
        let input = synthetic_input(&schedule);
        let myo = forward_model(0.5, 0.3, 0.08, &input, &schedule).unwrap();
        // Perturb so the minimum is not exactly zero.
        let myo: Vec<f64> = myo
            .iter()
            .enumerate()
            .map(|(i, &m)| m + if i % 2 == 0 { 20.0 } else { -20.0 })
            .collect();
        let w1 = FitWeights(vec![1.0; schedule.len()]);
        let w2 = FitWeights(vec![3.7; schedule.len()]);
        let grid = MultiStartGrid::default();
        let f1 = fit_compartment(&myo, &input, &w1, &schedule, &grid).unwrap();
        let f2 = fit_compartment(&myo, &input, &w2, &schedule, &grid).unwrap();
        assert_relative_eq!(f1.k1, f2.k1, max_relative = 1e-5);
        assert_relative_eq!(f1.k2, f2.k2, max_relative = 1e-5);
        assert_relative_eq!(f1.v, f2.v, max_relative = 1e-4, epsilon = 1e-7);
        assert_relative_eq!(
            f2.weighted_residual,
            3.7 * f1.weighted_residual,
            max_relative = 1e-6
        );
    }

    #[test]
    fn renkin_crone_forward_value_at_unit_flow() {
        let k1 = renkin_crone_forward(1.0, RENKIN_CRONE_ALPHA, RENKIN_CRONE_BETA);
        assert_relative_eq!(k1, 0.5556, max_relative = 1e-3);
    }

    #[test]
    fn renkin_crone_round_trips() {
        for &mbf in &[0.3, 1.0, 3.0] {
            let k1 = renkin_crone_forward(mbf, RENKIN_CRONE_ALPHA, RENKIN_CRONE_BETA);
            let back = k1_to_mbf(k1, RENKIN_CRONE_ALPHA, RENKIN_CRONE_BETA).unwrap();
            assert_relative_eq!(back, mbf, max_relative = 1e-6);
        }
    }

    #[test]
    fn renkin_crone_alpha_zero_identity() {
        assert_eq!(k1_to_mbf(0.73, 0.0, RENKIN_CRONE_BETA).unwrap(), 0.73);
    }

    #[test]
    fn renkin_crone_map_is_monotone() {
        let mut prev = 0.0;
        for i in 1..500 {
            let m = i as f64 * 0.01;
            let g = renkin_crone_forward(m, RENKIN_CRONE_ALPHA, RENKIN_CRONE_BETA);
            assert!(g > prev, "not increasing at MBF={m}");
            prev = g;
        }
    }

    #[test]
    fn k1_to_mbf_rejects_nonpositive() {
        assert!(k1_to_mbf(0.0, RENKIN_CRONE_ALPHA, RENKIN_CRONE_BETA).is_err());
        assert!(k1_to_mbf(-1.0, RENKIN_CRONE_ALPHA, RENKIN_CRONE_BETA).is_err());
    }

    #[test]
    fn percent_diff_cases() {
        let base = KineticFit {
            k1: 0.6,
            k2: 0.2,
            v: 0.05,
            mbf: 1.1,
            weighted_residual: 0.0,
            converged: true,
        };
        let same = base.clone();
        assert_eq!(percent_diff(&same, &base).unwrap(), (0.0, 0.0));
        let mut up = base.clone();
        up.k1 = 0.66;
        let (k1d, _) = percent_diff(&up, &base).unwrap();
        assert_relative_eq!(k1d, 10.0, max_relative = 1e-12);
        let mut zero = base.clone();
        zero.k1 = 0.0;
        assert!(percent_diff(&base, &zero).is_err());
    }
}
