//! Jump rates, conductances and the truncated jump law.
//!
//! Rows are always evaluated in the frame centered at the jumping site, so
//! the normalization `π^λ(τ_i ω) = Σ_k r^λ_{i,i+k}` never overflows for sites
//! far from the origin. The truncation radius is chosen per site from an
//! analytic tail bound that only uses the gap floor `d` and `sup |u|`.

use std::io::Write;

use serde::Serialize;

use crate::env::Landscape;
use crate::error::{Error, Result};

pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Hard cap on the truncation radius.
pub const MAX_RADIUS: usize = 1 << 20;

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("bias must satisfy |λ| < 1, got {lambda}")))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tail tolerance must be positive, got {tol}")))
    }
}

/// `log r^λ_{i,k}`; `-∞` when `i == k`.
pub fn log_rate<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, k: i64) -> Result<f64> {
    check_lambda(lambda)?;
    if i == k {
        return Ok(f64::NEG_INFINITY);
    }
    let dx = env.position(k)? - env.position(i)?;
    let u = env.pair().eval(env.energy(i)?, env.energy(k)?);
    Ok(-dx.abs() + lambda * dx + u)
}

/// `r^λ_{i,k} = exp{-|x_i - x_k| + λ(x_k - x_i) + u(E_i, E_k)}`, zero on the diagonal.
pub fn rate<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, k: i64) -> Result<f64> {
    Ok(log_rate(env, lambda, i, k)?.exp())
}

/// `log c^λ_{i,j}`; `-∞` when `i == j`.
pub fn log_conductance<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, j: i64) -> Result<f64> {
    check_lambda(lambda)?;
    if i == j {
        return Ok(f64::NEG_INFINITY);
    }
    let (xi, xj) = (env.position(i)?, env.position(j)?);
    let u = env.pair().eval(env.energy(i)?, env.energy(j)?);
    Ok(-(xj - xi).abs() + lambda * (xi + xj) + u)
}

/// `c^λ_{i,j} = exp{-|x_j - x_i| + λ(x_i + x_j) + u(E_i, E_j)}`, symmetric in `(i, j)`.
pub fn conductance<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, j: i64) -> Result<f64> {
    Ok(log_conductance(env, lambda, i, j)?.exp())
}

/// Bound on `Σ_{|k|>K} c^λ_{0,k}` valid for any environment with gap floor
/// `d` and `|u| <= u_bound`.
pub fn tail_bound(d: f64, lambda: f64, u_bound: f64, k: usize) -> f64 {
    let a = (1.0 - lambda.abs()) * d;
    if a <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * (2.0 * u_bound).exp() * (-a * k as f64).exp() / (-(-a).exp_m1())
}

/// Bound on `Σ_{|k|>K} |x_k|^m c^λ_{0,k}` for `m ∈ {0, 1, 2}`.
pub fn moment_tail_bound(d: f64, lambda: f64, u_bound: f64, k: usize, m: u32) -> f64 {
    if m == 0 {
        return tail_bound(d, lambda, u_bound, k);
    }
    let a = 1.0 - lambda.abs();
    if a <= 0.0 {
        return f64::INFINITY;
    }
    let n = (k + 1) as f64;
    let pre = 2.0 * u_bound.exp();
    if a * d * n >= m as f64 {
        // t^m e^{-at} is decreasing for t >= m/a, and |x_j| >= d|j|
        let r = (-a * d).exp();
        let s = 1.0 - r;
        let rn = r.powf(n);
        let series = match m {
            1 => rn * (n - (n - 1.0) * r) / (s * s),
            _ => rn * (n * n - (2.0 * n * n - 2.0 * n - 1.0) * r + (n - 1.0).powi(2) * r * r) / (s * s * s),
        };
        pre * d.powi(m as i32) * series
    } else {
        // t^m e^{-at} <= (2m/(ae))^m e^{-at/2}
        let r = (-0.5 * a * d).exp();
        let c = (2.0 * m as f64 / (a * std::f64::consts::E)).powi(m as i32);
        pre * c * r.powf(n) / (1.0 - r)
    }
}

/// Smallest radius `K` whose zeroth, first and second moment tails are all
/// below `tol · π_lower · d^m`, where `π_lower = c_{i,i-1} + c_{i,i+1}`.
pub fn truncation_radius<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, tol: f64) -> Result<usize> {
    check_lambda(lambda)?;
    check_tol(tol)?;
    let pi_lower = rate(env, lambda, i, i - 1)? + rate(env, lambda, i, i + 1)?;
    let (d, ub) = (env.floor(), env.u_bound());
    let ok = |k: usize| {
        (0..=2u32).all(|m| moment_tail_bound(d, lambda, ub, k, m) <= tol * pi_lower * d.powi(m as i32))
    };
    for k in 1..=MAX_RADIUS {
        if ok(k) {
            return Ok(k);
        }
    }
    let a = (1.0 - lambda.abs()) * d;
    let required = ((2.0 * (2.0 * ub).exp() / (tol * pi_lower * -(-a).exp_m1())).ln() / a).ceil();
    Err(Error::TailUnreachable { tolerance: tol, required: required as usize })
}

/// Truncated jump distribution of the walk at site `center`.
#[derive(Clone, Debug, Serialize)]
pub struct JumpLaw {
    pub center: i64,
    pub radius: usize,
    pub lambda: f64,
    /// `p(k)` at index `k + radius`; `p(0) = 0`.
    pub probs: Vec<f64>,
    /// `x_{center+k} - x_center` at index `k + radius`.
    pub displacements: Vec<f64>,
    /// `π^λ(τ_center ω)` over the retained offsets.
    pub total_rate: f64,
    /// Certified bound on the discarded probability mass.
    pub tail_mass: f64,
    #[serde(skip)]
    cdf: Vec<f64>,
}

/// Jump law at site `i`, truncated at the radius given by [`truncation_radius`].
pub fn jump_law<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, tail_tol: f64) -> Result<JumpLaw> {
    let radius = truncation_radius(env, lambda, i, tail_tol)?;
    jump_law_with_radius(env, lambda, i, radius)
}

/// Jump law at site `i` over offsets `[-radius, radius]`.
pub fn jump_law_with_radius<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, radius: usize) -> Result<JumpLaw> {
    check_lambda(lambda)?;
    if radius == 0 {
        return Err(Error::invalid("truncation radius must be at least 1"));
    }
    let r = radius as i64;
    let x0 = env.position(i)?;
    let e0 = env.energy(i)?;
    let pair = env.pair();
    let mut logs = Vec::with_capacity(2 * radius + 1);
    let mut displacements = Vec::with_capacity(2 * radius + 1);
    for k in -r..=r {
        let dx = env.position(i + k)? - x0;
        displacements.push(dx);
        logs.push(if k == 0 {
            f64::NEG_INFINITY
        } else {
            -dx.abs() + lambda * dx + pair.eval(e0, env.energy(i + k)?)
        });
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    let total_rate = top.exp() * sum;
    let tail_mass = tail_bound(env.floor(), lambda, env.u_bound(), radius) / total_rate;
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    *cdf.last_mut().unwrap() = 1.0;
    Ok(JumpLaw { center: i, radius, lambda, probs, displacements, total_rate, tail_mass, cdf })
}

impl JumpLaw {
    /// `p(k)`, zero outside the retained range.
    pub fn p(&self, k: i64) -> f64 {
        let r = self.radius as i64;
        if k.abs() > r {
            0.0
        } else {
            self.probs[(k + r) as usize]
        }
    }

    pub fn displacement(&self, k: i64) -> f64 {
        self.displacements[(k + self.radius as i64) as usize]
    }

    pub fn offsets(&self) -> impl Iterator<Item = i64> {
        let r = self.radius as i64;
        -r..=r
    }

    /// Offset drawn by inverse CDF from a uniform `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> i64 {
        let j = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        j as i64 - self.radius as i64
    }

    /// `φ_λ(τ_center ω) = Σ_k (x_{center+k} - x_center) p(k)`.
    pub fn drift(&self) -> f64 {
        self.probs.iter().zip(&self.displacements).map(|(p, x)| p * x).sum()
    }

    /// `Σ_k (x_{center+k} - x_center)^2 p(k)`.
    pub fn second_moment(&self) -> f64 {
        self.probs.iter().zip(&self.displacements).map(|(p, x)| p * x * x).sum()
    }

    /// CSV with columns `offset,displacement,probability`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["offset", "displacement", "probability"])?;
        for k in self.offsets() {
            w.write_record([k.to_string(), format!("{:e}", self.displacement(k)), format!("{:e}", self.p(k))])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `π^λ(τ_i ω)`: the total jump rate out of site `i`.
pub fn total_rate<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, tail_tol: f64) -> Result<f64> {
    Ok(jump_law(env, lambda, i, tail_tol)?.total_rate)
}

/// Local drift `φ_λ(τ_i ω)`.
pub fn local_drift<L: Landscape + ?Sized>(env: &L, lambda: f64, i: i64, tail_tol: f64) -> Result<f64> {
    Ok(jump_law(env, lambda, i, tail_tol)?.drift())
}

/// First and second λ-derivatives of the jump probabilities at one site.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeTables {
    pub radius: usize,
    pub dp: Vec<f64>,
    pub d2p: Vec<f64>,
    pub drift: f64,
    pub second_moment: f64,
}

impl DerivativeTables {
    pub fn from_law(law: &JumpLaw) -> Self {
        let phi = law.drift();
        let m2 = law.second_moment();
        let dp = law.probs.iter().zip(&law.displacements).map(|(p, x)| p * (x - phi)).collect();
        let d2p = law
            .probs
            .iter()
            .zip(&law.displacements)
            .map(|(p, x)| p * (x * x - 2.0 * x * phi + 2.0 * phi * phi - m2))
            .collect();
        DerivativeTables { radius: law.radius, dp, d2p, drift: phi, second_moment: m2 }
    }

    pub fn dp(&self, k: i64) -> f64 {
        let r = self.radius as i64;
        if k.abs() > r { 0.0 } else { self.dp[(k + r) as usize] }
    }

    pub fn d2p(&self, k: i64) -> f64 {
        let r = self.radius as i64;
        if k.abs() > r { 0.0 } else { self.d2p[(k + r) as usize] }
    }
}

pub fn derivative_tables<L: Landscape + ?Sized>(
    env: &L,
    lambda: f64,
    i: i64,
    tail_tol: f64,
) -> Result<DerivativeTables> {
    Ok(DerivativeTables::from_law(&jump_law(env, lambda, i, tail_tol)?))
}
