//! Small descriptive-statistics helpers and the paired two-tailed t-test
//! used for method comparisons in the report tables.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub t: f64,
    pub degrees_of_freedom: f64,
    /// Two-tailed p-value.
    pub p: f64,
    pub mean_difference: f64,
}

/// Paired two-tailed t-test on matched samples.
///
/// Degenerate cases: identical samples give p = 1; a constant nonzero
/// difference gives p = 0 (infinite t).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::validation("paired t-test requires equal lengths"));
    }
    if a.len() < 2 {
        return Err(Error::validation("paired t-test requires at least 2 pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let md = mean(&diffs);
    let sdd = sd(&diffs);
    let df = n - 1.0;
    if sdd == 0.0 {
        return Ok(PairedTTest {
            t: if md == 0.0 { 0.0 } else { f64::INFINITY * md.signum() },
            degrees_of_freedom: df,
            p: if md == 0.0 { 1.0 } else { 0.0 },
            mean_difference: md,
        });
    }
    let t = md / (sdd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::validation(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTest {
        t,
        degrees_of_freedom: df,
        p: p.clamp(0.0, 1.0),
        mean_difference: md,
    })
}
