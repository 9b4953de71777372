//! Monte Carlo estimators with error bars: stationary expectations via
//! Birkhoff averages, velocities, diffusion coefficients, CLT covariances
//! and the small-bias mobility fit.
//!
//! Replicas run in parallel on derived seeds and are reduced in replica
//! order, so results do not depend on the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_environment, GeneratorSpec, PeriodicEnvironment};
use crate::error::{Error, Result};
use crate::kernel::{JumpLaw, DEFAULT_TAIL_TOL};
use crate::rng::derive_seed;
use crate::stats::{self, batch_means, EstimateCI, DEFAULT_BATCHES, DEFAULT_LEVEL};
use crate::walk::{Medium, Walker};

/// Where replica environments come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSource {
    /// One fixed periodic environment shared by all replicas.
    Periodic(PeriodicEnvironment),
    /// A fresh i.i.d. environment per replica, seeded from `spec.seed`.
    Random(GeneratorSpec),
}

impl EnvSource {
    pub fn medium(&self, replica: u64) -> Result<Medium> {
        Ok(match self {
            EnvSource::Periodic(p) => Medium::Periodic(p.clone()),
            EnvSource::Random(spec) => {
                let mut s = spec.clone();
                s.seed = derive_seed(spec.seed, "environment", replica);
                Medium::Windowed(sample_environment(&s)?)
            }
        })
    }

    fn period(&self) -> Option<usize> {
        match self {
            EnvSource::Periodic(p) => Some(p.period()),
            EnvSource::Random(_) => None,
        }
    }
}

/// Registered observables of the environment seen from the walker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    One,
    /// `π^λ`.
    Rate,
    /// `1/π^λ`.
    InverseRate,
    /// `φ_λ`.
    Drift,
    /// `1{lo <= Z_0 < hi}`.
    GapBin { lo: f64, hi: f64 },
    /// Explicit values on the states of a periodic environment.
    State { values: Vec<f64> },
}

impl Observable {
    fn check(&self, src: &EnvSource) -> Result<()> {
        if let Observable::State { values } = self {
            match src.period() {
                Some(n) if n == values.len() => {}
                Some(n) => return Err(Error::invalid(format!("state observable has {} values, period is {n}", values.len()))),
                None => return Err(Error::invalid("state observables need a periodic environment")),
            }
        }
        Ok(())
    }

    pub fn eval(&self, medium: &Medium, index: i64, law: &JumpLaw) -> Result<f64> {
        Ok(match self {
            Observable::One => 1.0,
            Observable::Rate => law.total_rate,
            Observable::InverseRate => 1.0 / law.total_rate,
            Observable::Drift => law.drift(),
            Observable::GapBin { lo, hi } => {
                let z = medium.position(index + 1)? - medium.position(index)?;
                f64::from(u8::from(*lo <= z && z < *hi))
            }
            Observable::State { values } => match medium {
                Medium::Periodic(p) => values[p.state_of(index)],
                Medium::Windowed(_) => return Err(Error::invalid("state observables need a periodic environment")),
            },
        })
    }
}

/// Knobs shared by all estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McSettings {
    pub seed: u64,
    pub batches: usize,
    pub level: f64,
    pub tail_tol: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings { seed: 0, batches: DEFAULT_BATCHES, level: DEFAULT_LEVEL, tail_tol: DEFAULT_TAIL_TOL }
    }
}

impl McSettings {
    fn ci(&self, (estimate, std_error, batches): (f64, f64, usize), replicas: usize, n: f64) -> EstimateCI {
        EstimateCI { estimate, std_error, batches, level: self.level, replicas, seed: self.seed, n }
    }

    fn replica_seed(&self, r: u64) -> u64 {
        derive_seed(self.seed, "replica", r)
    }
}

/// Runs `job` for replicas `0..replicas` in parallel, results in replica order.
fn replicas<T, F>(count: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..count as u64).into_par_iter().map(&job).collect()
}

fn need(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(msg))
    }
}

/// `ℚ_λ(f)` from Birkhoff averages `n⁻¹ Σ_{j<n} f(ω_j)`.
///
/// Each replica contributes `⌈batches / replicas⌉` time segments; the
/// segment means are pooled and batch-meaned.
pub fn estimate_q(
    src: &EnvSource,
    lambda: f64,
    f: &Observable,
    n: u64,
    reps: usize,
    s: &McSettings,
) -> Result<EstimateCI> {
    f.check(src)?;
    need(n >= 1 && reps >= 1, "steps and replicas must be at least 1")?;
    let segs = s.batches.div_ceil(reps).clamp(1, n as usize);
    need(segs * reps >= 2, "need at least two batches: raise steps or replicas")?;
    let per = replicas(reps, |r| {
        let mut w = Walker::new(src.medium(r)?, lambda, s.tail_tol)?;
        let medium = w.medium().clone();
        let mut sums = vec![0.0; segs];
        w.run_discrete_with(n, s.replica_seed(r), |v| {
            let seg = (v.step as u128 * segs as u128 / n as u128) as usize;
            sums[seg] += f.eval(&medium, v.index, v.law)?;
            Ok(())
        })?;
        Ok((0..segs)
            .map(|g| {
                let len = ((g + 1) as u64 * n / segs as u64) - (g as u64 * n / segs as u64);
                sums[g] / len as f64
            })
            .collect::<Vec<f64>>())
    })?;
    let values: Vec<f64> = per.into_iter().flatten().collect();
    Ok(s.ci(batch_means(&values, s.batches)?, reps, n as f64))
}

/// `Y_n / n` over replicas.
pub fn estimate_velocity(src: &EnvSource, lambda: f64, n: u64, reps: usize, s: &McSettings) -> Result<EstimateCI> {
    need(n >= 1 && reps >= 2, "need n >= 1 and at least two replicas")?;
    let v = replicas(reps, |r| {
        let t = Walker::new(src.medium(r)?, lambda, s.tail_tol)?.run_discrete_with(n, s.replica_seed(r), |_| Ok(()))?;
        Ok(t.displacement / n as f64)
    })?;
    Ok(s.ci(batch_means(&v, s.batches)?, reps, n as f64))
}

/// `𝕐_t / t` over replicas.
pub fn estimate_velocity_ct(src: &EnvSource, lambda: f64, t_max: f64, reps: usize, s: &McSettings) -> Result<EstimateCI> {
    need(t_max > 0.0 && reps >= 2, "need t > 0 and at least two replicas")?;
    let v = replicas(reps, |r| {
        let t = Walker::new(src.medium(r)?, lambda, s.tail_tol)?.run_continuous_with(t_max, s.replica_seed(r), |_| Ok(()))?;
        Ok(t.displacement / t_max)
    })?;
    Ok(s.ci(batch_means(&v, s.batches)?, reps, t_max))
}

/// Velocities together with the identity `v_𝕐 = v_Y / ℚ_λ[1/π^λ]`.
#[derive(Clone, Debug, Serialize)]
pub struct VelocityReport {
    pub lambda: f64,
    pub discrete: EstimateCI,
    pub continuous: EstimateCI,
    /// `ℚ_λ[1/π^λ]` from the discrete runs.
    pub inverse_rate: EstimateCI,
    /// `v̂_Y / ℚ̂_λ[1/π^λ]` with delta-method error.
    pub predicted_continuous: f64,
    pub predicted_continuous_se: f64,
    /// `|v̂_𝕐 - prediction|` over the combined error.
    pub consistency_z: f64,
}

pub fn estimate_velocities(
    src: &EnvSource,
    lambda: f64,
    n: u64,
    t_max: f64,
    reps: usize,
    s: &McSettings,
) -> Result<VelocityReport> {
    let discrete = estimate_velocity(src, lambda, n, reps, s)?;
    let continuous = estimate_velocity_ct(src, lambda, t_max, reps, s)?;
    let inverse_rate = estimate_q(src, lambda, &Observable::InverseRate, n, reps, s)?;
    let pred = discrete.estimate / inverse_rate.estimate;
    let pred_se =
        pred.abs() * ((discrete.std_error / discrete.estimate).powi(2) + (inverse_rate.std_error / inverse_rate.estimate).powi(2)).sqrt();
    let pred_se = if pred_se.is_finite() { pred_se } else { discrete.std_error / inverse_rate.estimate };
    let combined = (pred_se.powi(2) + continuous.std_error.powi(2)).sqrt();
    Ok(VelocityReport {
        lambda,
        consistency_z: (continuous.estimate - pred).abs() / combined,
        discrete,
        continuous,
        inverse_rate,
        predicted_continuous: pred,
        predicted_continuous_se: pred_se,
    })
}

/// OLS weights `w` with `slope = Σ w_g y_g`; a single point gives `y / x`.
fn slope_weights(x: &[f64]) -> Vec<f64> {
    if x.len() == 1 {
        return vec![1.0 / x[0]];
    }
    let m = stats::mean(x);
    let sxx: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    x.iter().map(|v| (v - m) / sxx).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    need(!grid.is_empty(), "checkpoint grid is empty")?;
    need(grid.windows(2).all(|w| w[0] < w[1]) && grid[0] > 0.0, "checkpoints must be positive and increasing")
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffusionEstimate {
    /// `D̂_Y`: slope of `E[Y_n²]` against `n`.
    pub discrete: EstimateCI,
    /// `D̂_𝕐`: slope of `E[𝕐_t²]` against `t`.
    pub continuous: EstimateCI,
    pub ratio: f64,
    pub ratio_se: f64,
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    /// `E[Y_n²]/n` at each checkpoint.
    pub msd_over_n: Vec<f64>,
}

/// Unbiased diffusion coefficients from mean squared displacements.
///
/// The slope of a least-squares line through `(n_g, mean Y²(n_g))` is linear
/// in the per-replica squares, so it is computed per replica and batch-meaned.
pub fn estimate_diffusion(src: &EnvSource, steps: &[u64], times: &[f64], reps: usize, s: &McSettings) -> Result<DiffusionEstimate> {
    need(reps >= 2, "need at least two replicas")?;
    let xs: Vec<f64> = steps.iter().map(|&n| n as f64).collect();
    check_grid(&xs)?;
    check_grid(times)?;
    let wd = slope_weights(&xs);
    let wc = slope_weights(times);
    let n_max = *steps.last().unwrap();
    let t_max = *times.last().unwrap();
    let per = replicas(reps, |r| {
        let medium = src.medium(r)?;
        let seed = s.replica_seed(r);
        let mut sq = Vec::with_capacity(steps.len());
        let mut w = Walker::new(medium.clone(), 0.0, s.tail_tol)?;
        let mut next = 0;
        let t = w.run_discrete_with(n_max, seed, |v| {
            if next < steps.len() && v.step == steps[next] {
                sq.push(v.position * v.position);
                next += 1;
            }
            Ok(())
        })?;
        sq.resize(steps.len(), t.displacement * t.displacement);
        let mut sqc = Vec::with_capacity(times.len());
        let mut last = 0.0;
        let mut w = Walker::new(medium, 0.0, s.tail_tol)?;
        let t = w.run_continuous_with(t_max, seed, |v| {
            while sqc.len() < times.len() && times[sqc.len()] < v.time {
                sqc.push(last * last);
            }
            last = v.position;
            Ok(())
        })?;
        sqc.resize(times.len(), t.displacement * t.displacement);
        let sd: f64 = wd.iter().zip(&sq).map(|(a, b)| a * b).sum();
        let sc: f64 = wc.iter().zip(&sqc).map(|(a, b)| a * b).sum();
        Ok((sd, sc, sq))
    })?;
    let sd: Vec<f64> = per.iter().map(|p| p.0).collect();
    let sc: Vec<f64> = per.iter().map(|p| p.1).collect();
    let msd_over_n =
        (0..steps.len()).map(|g| per.iter().map(|p| p.2[g]).sum::<f64>() / reps as f64 / steps[g] as f64).collect();
    let discrete = s.ci(batch_means(&sd, s.batches)?, reps, n_max as f64);
    let continuous = s.ci(batch_means(&sc, s.batches)?, reps, t_max);
    let ratio = continuous.estimate / discrete.estimate;
    let ratio_se = ratio.abs()
        * ((discrete.std_error / discrete.estimate).powi(2) + (continuous.std_error / continuous.estimate).powi(2)).sqrt();
    Ok(DiffusionEstimate {
        discrete,
        continuous,
        ratio,
        ratio_se,
        steps: steps.to_vec(),
        times: times.to_vec(),
        msd_over_n,
    })
}

/// Empirical covariance of `n^{-1/2}(Σ f(ω_j), Σ φ(ω_j))` at `λ = 0`.
#[derive(Clone, Debug, Serialize)]
pub struct CltEstimate {
    pub var_f: EstimateCI,
    pub var_phi: EstimateCI,
    pub cov: EstimateCI,
    /// Pooled Birkhoff mean of `f` removed before forming the sums;
    /// a nonzero value flags an observable that is not centered under `ℚ₀`.
    pub f_mean: f64,
    pub phi_mean: f64,
}

pub fn estimate_clt(src: &EnvSource, f: &Observable, n: u64, reps: usize, s: &McSettings) -> Result<CltEstimate> {
    f.check(src)?;
    need(n >= 1 && reps >= 3, "need n >= 1 and at least three replicas")?;
    let sums = replicas(reps, |r| {
        let mut w = Walker::new(src.medium(r)?, 0.0, s.tail_tol)?;
        let medium = w.medium().clone();
        let (mut sf, mut sp) = (0.0, 0.0);
        w.run_discrete_with(n, s.replica_seed(r), |v| {
            sf += f.eval(&medium, v.index, v.law)?;
            sp += v.law.drift();
            Ok(())
        })?;
        Ok((sf, sp))
    })?;
    let root = (n as f64).sqrt();
    let a: Vec<f64> = sums.iter().map(|p| p.0 / root).collect();
    let b: Vec<f64> = sums.iter().map(|p| p.1 / root).collect();
    let jk = |st: fn(&[f64], &[f64]) -> f64| -> Result<EstimateCI> {
        let (est, se) = stats::jackknife(&a, &b, st)?;
        Ok(s.ci((est, se, reps), reps, n as f64))
    };
    Ok(CltEstimate {
        var_f: jk(|x, _| stats::variance(x))?,
        var_phi: jk(|_, y| stats::variance(y))?,
        cov: jk(stats::covariance)?,
        f_mean: stats::mean(&a) / root,
        phi_mean: stats::mean(&b) / root,
    })
}

/// Default small-bias grid for the mobility fit.
pub const EINSTEIN_GRID: [f64; 4] = [0.02, 0.04, 0.08, 0.16];

#[derive(Clone, Debug, Serialize)]
pub struct MobilityRow {
    pub lambda: f64,
    pub velocity: EstimateCI,
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EinsteinMcReport {
    pub rows: Vec<MobilityRow>,
    /// Weighted fit of `v̂/λ` against `λ`.
    pub fit: stats::LinearFit,
    pub diffusion: EstimateCI,
    /// `|intercept - D̂_Y|` over the combined standard error.
    pub z: f64,
}

/// Extrapolates `v̂_Y(λ)/λ` to `λ = 0` and compares with `D̂_Y`.
pub fn einstein_mc(src: &EnvSource, grid: &[f64], n: u64, reps: usize, s: &McSettings) -> Result<EinsteinMcReport> {
    need(grid.len() >= 2, "mobility fit needs at least two biases")?;
    need(grid.iter().all(|&l| l > 0.0 && l <= 0.2), "small-bias grid must lie in (0, 0.2]")?;
    let mut rows = Vec::with_capacity(grid.len());
    for (g, &lambda) in grid.iter().enumerate() {
        let sub = McSettings { seed: derive_seed(s.seed, "bias", g as u64), ..s.clone() };
        let velocity = estimate_velocity(src, lambda, n, reps, &sub)?;
        rows.push(MobilityRow { lambda, ratio: velocity.estimate / lambda, ratio_se: velocity.std_error / lambda, velocity });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let sig: Vec<f64> = rows.iter().map(|r| r.ratio_se).collect();
    let fit = stats::weighted_linear_fit(&x, &y, &sig)?;
    let sub = McSettings { seed: derive_seed(s.seed, "diffusion", 0), ..s.clone() };
    let steps = [n / 4, n / 2, n];
    let times: Vec<f64> = steps.iter().map(|&v| v as f64).collect();
    let diffusion = estimate_diffusion(src, &steps, &times, reps, &sub)?.discrete;
    let z = (fit.intercept - diffusion.estimate).abs() / (fit.intercept_se.powi(2) + diffusion.std_error.powi(2)).sqrt();
    Ok(EinsteinMcReport { rows, fit, diffusion, z })
}

/// One line of an estimator CSV.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateRow {
    pub quantity: String,
    pub lambda: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n: f64,
    pub replicas: usize,
    pub batches: usize,
    pub seed: u64,
}

impl EstimateRow {
    pub fn new(quantity: &str, lambda: f64, ci: &EstimateCI) -> Self {
        EstimateRow {
            quantity: quantity.to_string(),
            lambda,
            estimate: ci.estimate,
            stderr: ci.std_error,
            n: ci.n,
            replicas: ci.replicas,
            batches: ci.batches,
            seed: ci.seed,
        }
    }
}

pub fn write_estimates_csv<W: Write>(rows: &[EstimateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
