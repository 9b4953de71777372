//! Error bars: batch means, delete-one jackknife, weighted linear fits.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Default number of batches.
pub const DEFAULT_BATCHES: usize = 30;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Point estimate with a standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCI {
    pub estimate: f64,
    pub std_error: f64,
    /// Degrees of freedom behind `std_error` plus one.
    pub batches: usize,
    pub level: f64,
    pub replicas: usize,
    /// Master seed the replicas were derived from.
    pub seed: u64,
    /// Steps (or time horizon) per replica.
    pub n: f64,
}

impl EstimateCI {
    /// Two-sided Student-t critical value at `level`.
    pub fn critical_value(&self) -> f64 {
        critical_value(self.level, self.batches)
    }

    pub fn half_width(&self) -> f64 {
        self.critical_value() * self.std_error
    }

    pub fn interval(&self) -> (f64, f64) {
        let h = self.half_width();
        (self.estimate - h, self.estimate + h)
    }

    pub fn covers(&self, value: f64) -> bool {
        let (lo, hi) = self.interval();
        lo <= value && value <= hi
    }

    /// `|estimate - value| / std_error`; infinite for a mismatch with zero error.
    pub fn z_score(&self, value: f64) -> f64 {
        let d = (self.estimate - value).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

pub fn critical_value(level: f64, batches: usize) -> f64 {
    let dof = batches.saturating_sub(1).max(1) as f64;
    StudentsT::new(0.0, 1.0, dof).map(|t| t.inverse_cdf(0.5 + level / 2.0)).unwrap_or(f64::INFINITY)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

/// Mean of `values` with its batch-means standard error.
///
/// The values are cut into `batches` contiguous groups whose sizes differ by
/// at most one; fewer values than batches gives one value per batch.
/// Returns `(mean, std_error, batches_used)`.
pub fn batch_means(values: &[f64], batches: usize) -> Result<(f64, f64, usize)> {
    if values.len() < 2 {
        return Err(Error::invalid("batch means needs at least two values"));
    }
    if batches < 2 {
        return Err(Error::invalid("batch means needs at least two batches"));
    }
    let b = batches.min(values.len());
    let n = values.len();
    let total = mean(values);
    let mut acc = 0.0;
    for g in 0..b {
        let (s, e) = (g * n / b, (g + 1) * n / b);
        let m = mean(&values[s..e]);
        acc += (e - s) as f64 * (m - total).powi(2);
    }
    let var = acc / ((b as f64 - 1.0) * n as f64);
    Ok((total, var.sqrt(), b))
}

/// Delete-one jackknife of a statistic on paired samples.
/// Returns `(full-sample value, jackknife standard error)`.
pub fn jackknife<F>(a: &[f64], b: &[f64], stat: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let n = a.len();
    if n < 3 || b.len() != n {
        return Err(Error::invalid("jackknife needs at least three paired samples"));
    }
    let full = stat(a, b);
    let mut ra = Vec::with_capacity(n - 1);
    let mut rb = Vec::with_capacity(n - 1);
    let mut leave = Vec::with_capacity(n);
    for i in 0..n {
        ra.clear();
        rb.clear();
        ra.extend(a.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v));
        rb.extend(b.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v));
        leave.push(stat(&ra, &rb));
    }
    let m = mean(&leave);
    let var = (n as f64 - 1.0) / n as f64 * leave.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    Ok((full, var.sqrt()))
}

/// Weighted least squares `y = a + b x` with weights `1/σ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub intercept_se: f64,
    pub slope: f64,
    pub slope_se: f64,
    /// `Σ ((y - a - b x)/σ)²`.
    pub chi2: f64,
}

pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<LinearFit> {
    if x.len() < 2 || y.len() != x.len() || sigma.len() != x.len() {
        return Err(Error::invalid("linear fit needs at least two matched points"));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("fit uncertainties must be positive"));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &yi), &si) in x.iter().zip(y).zip(sigma) {
        let w = 1.0 / (si * si);
        s += w;
        sx += w * xi;
        sy += w * yi;
        sxx += w * xi * xi;
        sxy += w * xi * yi;
    }
    let det = s * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::Singular("fit abscissae are degenerate".into()));
    }
    let intercept = (sxx * sy - sx * sxy) / det;
    let slope = (s * sxy - sx * sy) / det;
    let chi2 = x.iter().zip(y).zip(sigma).map(|((&xi, &yi), &si)| ((yi - intercept - slope * xi) / si).powi(2)).sum();
    Ok(LinearFit { intercept, intercept_se: (sxx / det).sqrt(), slope, slope_se: (s / det).sqrt(), chi2 })
}

/// Ordinary least squares through `(x, y)`; returns `(intercept, slope)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let f = weighted_linear_fit(x, y, &vec![1.0; x.len()])?;
    Ok((f.intercept, f.slope))
}

/// Empirical coverage of batch-means intervals on a two-state chain.
#[derive(Clone, Debug, Serialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub covered: usize,
    pub coverage: f64,
    pub level: f64,
    pub truth: f64,
}

/// Chain on `{0, 1}` flipping `0 → 1` with probability `a` and `1 → 0` with
/// probability `b`; the Birkhoff average of `1{state = 1}` over `n` steps
/// estimates `a / (a + b)`.
pub fn two_state_coverage(a: f64, b: f64, n: usize, trials: usize, batches: usize, seed: u64) -> Result<CoverageReport> {
    if !(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0) {
        return Err(Error::invalid("flip probabilities must lie in (0, 1]"));
    }
    let truth = a / (a + b);
    let mut covered = 0;
    let mut xs = vec![0.0; n];
    for t in 0..trials {
        let mut rng = stream(seed, "coverage", t as u64);
        let mut s = usize::from(rng.random::<f64>() < truth);
        for x in xs.iter_mut() {
            *x = s as f64;
            let u: f64 = rng.random();
            s = match s {
                0 if u < a => 1,
                1 if u < b => 0,
                _ => s,
            };
        }
        let (m, se, used) = batch_means(&xs, batches)?;
        let ci = EstimateCI {
            estimate: m,
            std_error: se,
            batches: used,
            level: DEFAULT_LEVEL,
            replicas: 1,
            seed,
            n: n as f64,
        };
        if ci.covers(truth) {
            covered += 1;
        }
    }
    Ok(CoverageReport { trials, covered, coverage: covered as f64 / trials as f64, level: DEFAULT_LEVEL, truth })
}
