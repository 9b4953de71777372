//! Environments: marked point processes `{(x_k, E_k)}` on the line.
//!
//! An environment is the double-sided sequence of gaps `Z_k = x_{k+1} - x_k`
//! and energy marks `E_k`, anchored so that `x_0 = 0`. Two concrete kinds
//! exist:
//!
//! * [`Environment`]: a finite window `[lo, hi]` of sites. Windows sampled
//!   from a [`GeneratorSpec`] remember their generator and can grow on
//!   demand; every coordinate is drawn from a counter-keyed uniform, so
//!   growing never changes sites already present.
//! * [`PeriodicEnvironment`]: period-`N` gap and energy arrays, unrolled
//!   arithmetically to any index.
//!
//! Downstream code reads sites through the [`Landscape`] trait.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::coordinate_uniform;

/// The symmetric bounded pair function `u(E_i, E_k)` entering the jump rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairPotential {
    /// `u ≡ 0`.
    Zero,
    /// Low-temperature Mott form at inverse temperature `beta`.
    Mott { beta: f64 },
}

impl Default for PairPotential {
    fn default() -> Self {
        PairPotential::Mott { beta: 1.0 }
    }
}

/// `-(β/2)(|a| + |b| + |a - b|)`.
pub fn mott_u(a: f64, b: f64, beta: f64) -> f64 {
    -0.5 * beta * (a.abs() + b.abs() + (a - b).abs())
}

impl PairPotential {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match *self {
            PairPotential::Zero => 0.0,
            PairPotential::Mott { beta } => mott_u(a, b, beta),
        }
    }

    /// Bound on `|u|` when all energies satisfy `|E| <= energy_bound`.
    pub fn bound(&self, energy_bound: f64) -> f64 {
        match *self {
            PairPotential::Zero => 0.0,
            // |a| + |b| + |a-b| <= 4A
            PairPotential::Mott { beta } => 2.0 * beta.abs() * energy_bound,
        }
    }

    fn validate(&self) -> Result<()> {
        if let PairPotential::Mott { beta } = *self {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::invalid(format!("inverse temperature must be >= 0, got {beta}")));
            }
        }
        Ok(())
    }
}

/// Law of the i.i.d. gaps `Z_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GapLaw {
    Constant { value: f64 },
    /// `shift + Exp(rate)`.
    ShiftedExponential { shift: f64, rate: f64 },
    /// `shift + min(Lomax(scale, alpha), cap)`: polynomial tail up to `cap`.
    TruncatedPareto { shift: f64, scale: f64, alpha: f64, cap: f64 },
}

impl GapLaw {
    /// Smallest value in the support.
    pub fn support_min(&self) -> f64 {
        match *self {
            GapLaw::Constant { value } => value,
            GapLaw::ShiftedExponential { shift, .. } | GapLaw::TruncatedPareto { shift, .. } => shift,
        }
    }

    /// Inverse-CDF draw from a uniform in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            GapLaw::Constant { value } => value,
            GapLaw::ShiftedExponential { shift, rate } => shift - u.ln() / rate,
            GapLaw::TruncatedPareto { shift, scale, alpha, cap } => {
                shift + (scale * (u.powf(-1.0 / alpha) - 1.0)).min(cap)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            GapLaw::Constant { value } => value,
            GapLaw::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            GapLaw::TruncatedPareto { shift, scale, alpha, cap } => {
                // E[min(L, cap)] = ∫_0^cap P(L > t) dt with P(L > t) = (1 + t/scale)^-alpha
                let tail = if (alpha - 1.0).abs() < 1e-12 {
                    scale * (1.0 + cap / scale).ln()
                } else {
                    scale / (alpha - 1.0) * (1.0 - (1.0 + cap / scale).powf(1.0 - alpha))
                };
                shift + tail
            }
        }
    }

    /// Declared exponential-moment order: `E[e^{pZ}] < ∞` exactly for `p < p_max`
    /// (all `p` when infinite).
    pub fn exponential_moment_order(&self) -> f64 {
        match *self {
            GapLaw::ShiftedExponential { rate, .. } => rate,
            _ => f64::INFINITY,
        }
    }

    /// Closed-form `E[e^{pZ}]` where one exists; `None` on divergence or when
    /// the law has no closed form.
    pub fn exponential_moment(&self, p: f64) -> Option<f64> {
        match *self {
            GapLaw::Constant { value } => Some((p * value).exp()),
            GapLaw::ShiftedExponential { shift, rate } => {
                (p < rate).then(|| (p * shift).exp() * rate / (rate - p))
            }
            GapLaw::TruncatedPareto { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            GapLaw::Constant { value } => value > 0.0 && value.is_finite(),
            GapLaw::ShiftedExponential { shift, rate } => shift > 0.0 && rate > 0.0 && rate.is_finite(),
            GapLaw::TruncatedPareto { shift, scale, alpha, cap } => {
                shift > 0.0 && scale > 0.0 && alpha > 0.0 && cap > 0.0 && cap.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("malformed gap law {self:?}")))
        }
    }
}

/// Law of the i.i.d. energy marks `E_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyLaw {
    Constant { value: f64 },
    Uniform { amplitude: f64 },
}

impl EnergyLaw {
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            EnergyLaw::Constant { value } => value,
            EnergyLaw::Uniform { amplitude } => amplitude * (2.0 * u - 1.0),
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            EnergyLaw::Constant { value } => value.abs(),
            EnergyLaw::Uniform { amplitude } => amplitude.abs(),
        }
    }
}

/// Recipe for an i.i.d. environment window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Almost-sure lower bound `d` on the gaps.
    pub floor: f64,
    pub gaps: GapLaw,
    pub energies: EnergyLaw,
    #[serde(default)]
    pub pair: PairPotential,
    pub seed: u64,
    /// Window radius `W`: sites `-W..=W` are materialized up front.
    pub window: usize,
}

impl GeneratorSpec {
    /// Constant gaps 1, energies 0.
    pub fn lattice(window: usize, pair: PairPotential) -> Self {
        GeneratorSpec {
            floor: 1.0,
            gaps: GapLaw::Constant { value: 1.0 },
            energies: EnergyLaw::Constant { value: 0.0 },
            pair,
            seed: 0,
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::invalid(format!("gap floor must be positive, got {}", self.floor)));
        }
        self.gaps.validate()?;
        self.pair.validate()?;
        if self.gaps.support_min() < self.floor {
            return Err(Error::invalid(format!(
                "gap law support starts at {} below the floor {}",
                self.gaps.support_min(),
                self.floor
            )));
        }
        if self.window < 1 {
            return Err(Error::invalid("window radius must be at least 1"));
        }
        Ok(())
    }

    /// Gap `Z_c` at absolute coordinate `c`.
    pub fn gap_at(&self, c: i64) -> f64 {
        self.gaps.quantile(coordinate_uniform(self.seed, "gap", c))
    }

    /// Energy `E_c` at absolute coordinate `c`.
    pub fn energy_at(&self, c: i64) -> f64 {
        self.energies.quantile(coordinate_uniform(self.seed, "energy", c))
    }
}

/// Read access to sites of an environment.
pub trait Landscape {
    /// `x_k`, or [`Error::WindowExceeded`] when `k` is not materialized.
    fn position(&self, k: i64) -> Result<f64>;
    fn energy(&self, k: i64) -> Result<f64>;
    /// The floor `d` with `Z_k >= d`.
    fn floor(&self) -> f64;
    fn pair(&self) -> PairPotential;
    /// Bound on `|u|` over all pairs of sites.
    fn u_bound(&self) -> f64;

    fn gap(&self, k: i64) -> Result<f64> {
        Ok(self.position(k + 1)? - self.position(k)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Source {
    spec: GeneratorSpec,
    /// Absolute coordinate of local index 0.
    base: i64,
    /// Local index `k` maps to `base - k` instead of `base + k`.
    mirrored: bool,
}

impl Source {
    fn absolute(&self, k: i64) -> i64 {
        if self.mirrored {
            self.base - k
        } else {
            self.base + k
        }
    }

    fn energy(&self, k: i64) -> f64 {
        self.spec.energy_at(self.absolute(k))
    }

    /// Gap between local sites `k` and `k + 1`.
    fn gap(&self, k: i64) -> f64 {
        let c = if self.mirrored { self.absolute(k) - 1 } else { self.absolute(k) };
        self.spec.gap_at(c)
    }
}

/// A finite window `[lo, hi]` of an environment, with `lo <= 0 <= hi` and `x_0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    lo: i64,
    hi: i64,
    /// `Z_k` for `k in [lo, hi)`.
    gaps: Vec<f64>,
    /// `E_k` for `k in [lo, hi]`.
    energies: Vec<f64>,
    positions: Vec<f64>,
    floor: f64,
    pair: PairPotential,
    energy_bound: f64,
    source: Option<Source>,
}

/// Draw an i.i.d. environment window from `spec`.
pub fn sample_environment(spec: &GeneratorSpec) -> Result<Environment> {
    spec.validate()?;
    let source = Source { spec: spec.clone(), base: 0, mirrored: false };
    let w = spec.window as i64;
    Ok(Environment::from_source(source, -w, w))
}

impl Environment {
    /// Build a window from explicit arrays. `gaps[j]` is `Z_{lo+j}` and
    /// `energies[j]` is `E_{lo+j}`; `energies` has one more entry than `gaps`.
    pub fn from_parts(
        lo: i64,
        gaps: Vec<f64>,
        energies: Vec<f64>,
        floor: f64,
        pair: PairPotential,
    ) -> Result<Self> {
        pair.validate()?;
        if energies.len() != gaps.len() + 1 {
            return Err(Error::invalid("need exactly one more energy than gaps"));
        }
        let hi = lo + gaps.len() as i64;
        if lo > 0 || hi < 0 {
            return Err(Error::invalid("window must contain the origin"));
        }
        if !(floor > 0.0) {
            return Err(Error::invalid("gap floor must be positive"));
        }
        if let Some(z) = gaps.iter().find(|&&z| !(z >= floor) || !z.is_finite()) {
            return Err(Error::invalid(format!("gap {z} below floor {floor}")));
        }
        let energy_bound = energies.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let positions = prefix_positions(lo, &gaps);
        Ok(Environment { lo, hi, gaps, energies, positions, floor, pair, energy_bound, source: None })
    }

    fn from_source(source: Source, lo: i64, hi: i64) -> Self {
        let gaps: Vec<f64> = (lo..hi).map(|k| source.gap(k)).collect();
        let energies: Vec<f64> = (lo..=hi).map(|k| source.energy(k)).collect();
        let positions = prefix_positions(lo, &gaps);
        let spec = &source.spec;
        Environment {
            lo,
            hi,
            gaps,
            energies,
            positions,
            floor: spec.floor,
            pair: spec.pair,
            energy_bound: spec.energies.bound(),
            source: Some(source),
        }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn contains(&self, k: i64) -> bool {
        (self.lo..=self.hi).contains(&k)
    }

    pub fn energy_bound(&self) -> f64 {
        self.energy_bound
    }

    /// Whether the window can be extended with fresh generator draws.
    pub fn is_extendable(&self) -> bool {
        self.source.is_some()
    }

    /// Grow the window so it contains `k`, at least doubling its extent on
    /// the side that needs it. Existing sites are unchanged.
    pub fn grow_to(&mut self, k: i64) -> Result<()> {
        if self.contains(k) {
            return Ok(());
        }
        let Some(source) = self.source.clone() else {
            return Err(Error::WindowExceeded { needed: k, lo: self.lo, hi: self.hi });
        };
        let (mut lo, mut hi) = (self.lo, self.hi);
        if k < lo {
            lo = k.min(2 * lo - 1);
        }
        if k > hi {
            hi = k.max(2 * hi + 1);
        }
        *self = Environment::from_source(source, lo, hi);
        Ok(())
    }

    /// `τ_ℓ ω`: coordinate `k` of the result is coordinate `k + ℓ` of `self`.
    pub fn shift(&self, shift: i64) -> Result<Environment> {
        if !self.contains(shift) {
            return Err(Error::WindowExceeded { needed: shift, lo: self.lo, hi: self.hi });
        }
        let origin = self.positions[(shift - self.lo) as usize];
        let positions = self.positions.iter().map(|x| x - origin).collect();
        let source = self.source.as_ref().map(|s| Source {
            spec: s.spec.clone(),
            base: s.absolute(shift),
            mirrored: s.mirrored,
        });
        Ok(Environment {
            lo: self.lo - shift,
            hi: self.hi - shift,
            gaps: self.gaps.clone(),
            energies: self.energies.clone(),
            positions,
            floor: self.floor,
            pair: self.pair,
            energy_bound: self.energy_bound,
            source,
        })
    }

    /// Space reflection through the origin: `x'_k = -x_{-k}`, `E'_k = E_{-k}`.
    pub fn reflect(&self) -> Environment {
        let gaps: Vec<f64> = self.gaps.iter().rev().copied().collect();
        let energies: Vec<f64> = self.energies.iter().rev().copied().collect();
        let positions = self.positions.iter().rev().map(|x| -x).collect();
        let source = self.source.as_ref().map(|s| Source {
            spec: s.spec.clone(),
            base: s.base,
            mirrored: !s.mirrored,
        });
        Environment {
            lo: -self.hi,
            hi: -self.lo,
            gaps,
            energies,
            positions,
            floor: self.floor,
            pair: self.pair,
            energy_bound: self.energy_bound,
            source,
        }
    }

    /// CSV with columns `k,Z_k,E_k,x_k` for `k in [lo, hi)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "Z_k", "E_k", "x_k"])?;
        for k in self.lo..self.hi {
            let j = (k - self.lo) as usize;
            w.write_record([
                k.to_string(),
                format!("{:e}", self.gaps[j]),
                format!("{:e}", self.energies[j]),
                format!("{:e}", self.positions[j]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn prefix_positions(lo: i64, gaps: &[f64]) -> Vec<f64> {
    // accumulate outward from the origin so x_0 is exactly 0
    let origin = (-lo) as usize;
    let mut positions = vec![0.0; gaps.len() + 1];
    for j in origin..gaps.len() {
        positions[j + 1] = positions[j] + gaps[j];
    }
    for j in (0..origin).rev() {
        positions[j] = positions[j + 1] - gaps[j];
    }
    positions
}

impl Landscape for Environment {
    fn position(&self, k: i64) -> Result<f64> {
        if self.contains(k) {
            Ok(self.positions[(k - self.lo) as usize])
        } else {
            Err(Error::WindowExceeded { needed: k, lo: self.lo, hi: self.hi })
        }
    }

    fn energy(&self, k: i64) -> Result<f64> {
        if self.contains(k) {
            Ok(self.energies[(k - self.lo) as usize])
        } else {
            Err(Error::WindowExceeded { needed: k, lo: self.lo, hi: self.hi })
        }
    }

    fn floor(&self) -> f64 {
        self.floor
    }

    fn pair(&self) -> PairPotential {
        self.pair
    }

    fn u_bound(&self) -> f64 {
        self.pair.bound(self.energy_bound)
    }
}

/// Environment with `Z_{k+N} = Z_k` and `E_{k+N} = E_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PeriodicParts", into = "PeriodicParts")]
pub struct PeriodicEnvironment {
    gaps: Vec<f64>,
    energies: Vec<f64>,
    floor: f64,
    pair: PairPotential,
    /// `x_j` for `j in 0..=N`.
    prefix: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PeriodicParts {
    gaps: Vec<f64>,
    energies: Vec<f64>,
    floor: f64,
    #[serde(default)]
    pair: PairPotential,
}

impl TryFrom<PeriodicParts> for PeriodicEnvironment {
    type Error = Error;
    fn try_from(p: PeriodicParts) -> Result<Self> {
        make_periodic(p.gaps, p.energies, p.floor, p.pair)
    }
}

impl From<PeriodicEnvironment> for PeriodicParts {
    fn from(p: PeriodicEnvironment) -> Self {
        PeriodicParts { gaps: p.gaps, energies: p.energies, floor: p.floor, pair: p.pair }
    }
}

/// Periodic environment with one period given by `gaps` and `energies`.
pub fn make_periodic(
    gaps: Vec<f64>,
    energies: Vec<f64>,
    floor: f64,
    pair: PairPotential,
) -> Result<PeriodicEnvironment> {
    pair.validate()?;
    if gaps.is_empty() {
        return Err(Error::invalid("periodic environment needs at least one site"));
    }
    if gaps.len() != energies.len() {
        return Err(Error::invalid("gap and energy arrays must have the same length"));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("gap floor must be positive"));
    }
    if let Some(z) = gaps.iter().find(|&&z| !(z >= floor) || !z.is_finite()) {
        return Err(Error::invalid(format!("gap {z} below floor {floor}")));
    }
    let mut prefix = Vec::with_capacity(gaps.len() + 1);
    prefix.push(0.0);
    for z in &gaps {
        prefix.push(prefix.last().unwrap() + z);
    }
    Ok(PeriodicEnvironment { gaps, energies, floor, pair, prefix })
}

impl PeriodicEnvironment {
    /// The unit lattice `x_k = k` with zero energies.
    pub fn lattice(pair: PairPotential) -> Self {
        make_periodic(vec![1.0], vec![0.0], 1.0, pair).expect("lattice is valid")
    }

    pub fn period(&self) -> usize {
        self.gaps.len()
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Length of one period, `x_N`.
    pub fn length(&self) -> f64 {
        self.prefix[self.gaps.len()]
    }

    pub fn state_of(&self, k: i64) -> usize {
        k.rem_euclid(self.period() as i64) as usize
    }

    /// Rotate so that old site `ℓ` becomes the origin.
    pub fn shift(&self, shift: i64) -> PeriodicEnvironment {
        let n = self.period();
        let s = self.state_of(shift);
        let rot = |v: &[f64]| (0..n).map(|j| v[(j + s) % n]).collect::<Vec<_>>();
        make_periodic(rot(&self.gaps), rot(&self.energies), self.floor, self.pair)
            .expect("rotation preserves validity")
    }

    pub fn reflect(&self) -> PeriodicEnvironment {
        let n = self.period();
        let gaps = (0..n).map(|j| self.gaps[n - 1 - j]).collect();
        let energies = (0..n).map(|j| self.energies[(n - j) % n]).collect();
        make_periodic(gaps, energies, self.floor, self.pair).expect("reflection preserves validity")
    }

    /// Materialize the window `[-radius, radius]`.
    pub fn unroll(&self, radius: usize) -> Environment {
        let r = radius as i64;
        let n = self.period() as i64;
        let gaps = (-r..r).map(|k| self.gaps[k.rem_euclid(n) as usize]).collect();
        let energies = (-r..=r).map(|k| self.energies[k.rem_euclid(n) as usize]).collect();
        Environment::from_parts(-r, gaps, energies, self.floor, self.pair).expect("unrolled period is valid")
    }
}

impl Landscape for PeriodicEnvironment {
    fn position(&self, k: i64) -> Result<f64> {
        let n = self.period() as i64;
        let (q, r) = (k.div_euclid(n), k.rem_euclid(n) as usize);
        Ok(q as f64 * self.length() + self.prefix[r])
    }

    fn energy(&self, k: i64) -> Result<f64> {
        Ok(self.energies[self.state_of(k)])
    }

    fn floor(&self) -> f64 {
        self.floor
    }

    fn pair(&self) -> PairPotential {
        self.pair
    }

    fn u_bound(&self) -> f64 {
        let eb = self.energies.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        self.pair.bound(eb)
    }
}

/// Empirical check of the environment assumptions for a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n_samples: usize,
    pub floor: f64,
    pub min_gap: f64,
    pub mean_gap: f64,
    pub law_mean_gap: f64,
    pub moment_order: f64,
    /// Sample mean of `e^{p Z_0}`.
    pub exp_moment_estimate: f64,
    /// Closed form of `E[e^{p Z_0}]` when the law has one and it is finite.
    pub exp_moment_exact: Option<f64>,
    pub declared_p_max: f64,
    /// `p` is at or beyond the declared exponential-moment order.
    pub diverges: bool,
}

pub fn check_assumptions(spec: &GeneratorSpec, n_samples: usize, p: f64) -> Result<AssumptionReport> {
    spec.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut min_gap = f64::INFINITY;
    let mut sum = 0.0;
    let mut sum_exp = 0.0;
    for c in 0..n_samples as i64 {
        let z = spec.gap_at(c);
        min_gap = min_gap.min(z);
        sum += z;
        sum_exp += (p * z).exp();
    }
    let declared = spec.gaps.exponential_moment_order();
    Ok(AssumptionReport {
        n_samples,
        floor: spec.floor,
        min_gap,
        mean_gap: sum / n_samples as f64,
        law_mean_gap: spec.gaps.mean(),
        moment_order: p,
        exp_moment_estimate: sum_exp / n_samples as f64,
        exp_moment_exact: spec.gaps.exponential_moment(p),
        declared_p_max: declared,
        diverges: p >= declared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn exp_spec(seed: u64, window: usize) -> GeneratorSpec {
        GeneratorSpec {
            floor: 1.0,
            gaps: GapLaw::ShiftedExponential { shift: 1.0, rate: 3.0 },
            energies: EnergyLaw::Uniform { amplitude: 0.5 },
            pair: PairPotential::Mott { beta: 1.0 },
            seed,
            window,
        }
    }

    #[test]
    fn lattice_positions_are_integers() {
        let env = sample_environment(&GeneratorSpec::lattice(8, PairPotential::Zero)).unwrap();
        for k in -8..=8 {
            assert_eq!(env.position(k).unwrap(), k as f64);
        }
        assert!(env.position(9).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = exp_spec(5, 50);
        assert_eq!(sample_environment(&spec).unwrap(), sample_environment(&spec).unwrap());
        let other = GeneratorSpec { seed: 6, ..spec.clone() };
        assert_ne!(sample_environment(&spec).unwrap(), sample_environment(&other).unwrap());
    }

    #[test]
    fn exponential_gap_mean_matches_law() {
        // law of large numbers: mean d + 1/rate, sd of one gap = 1/rate
        let spec = exp_spec(17, 5_000);
        let env = sample_environment(&spec).unwrap();
        let n = (env.hi() - env.lo()) as f64;
        let mean = (env.position(env.hi()).unwrap() - env.position(env.lo()).unwrap()) / n;
        let se = (1.0 / 3.0) / n.sqrt();
        assert!((mean - (1.0 + 1.0 / 3.0)).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn gap_law_below_floor_is_rejected() {
        let mut spec = exp_spec(1, 4);
        spec.gaps = GapLaw::ShiftedExponential { shift: 0.5, rate: 3.0 };
        assert!(matches!(sample_environment(&spec), Err(Error::InvalidParameter(_))));
        spec.gaps = GapLaw::Constant { value: 0.9 };
        assert!(sample_environment(&spec).is_err());
        let mut spec = exp_spec(1, 0);
        spec.window = 0;
        assert!(sample_environment(&spec).is_err());
    }

    #[test]
    fn make_periodic_prefix_sums() {
        let p = make_periodic(vec![1.0], vec![0.0], 1.0, PairPotential::Zero).unwrap();
        assert_eq!(p.position(-3).unwrap(), -3.0);
        let p = make_periodic(vec![1.0, 2.0], vec![0.0, 0.0], 1.0, PairPotential::Zero).unwrap();
        let xs: Vec<f64> = (-2..=4).map(|k| p.position(k).unwrap()).collect();
        assert_eq!(xs, vec![-3.0, -2.0, 0.0, 1.0, 3.0, 4.0, 6.0]);
        assert!(make_periodic(vec![0.5], vec![0.0], 1.0, PairPotential::Zero).is_err());
        assert!(make_periodic(vec![], vec![], 1.0, PairPotential::Zero).is_err());
        assert!(make_periodic(vec![1.0], vec![0.0, 1.0], 1.0, PairPotential::Zero).is_err());
    }

    #[test]
    fn periodic_shift_by_period_is_identity() {
        let p = make_periodic(vec![1.0, 2.5, 1.2], vec![0.1, -0.3, 0.2], 1.0, PairPotential::Zero).unwrap();
        assert_eq!(p.shift(3), p);
        assert_eq!(p.shift(-6), p);
        let s = p.shift(1);
        for k in -5..5 {
            let expect = p.position(k + 1).unwrap() - p.position(1).unwrap();
            assert_relative_eq!(s.position(k).unwrap(), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn periodic_reflection_negates_positions() {
        let p = make_periodic(vec![1.0, 2.5, 1.2], vec![0.1, -0.3, 0.2], 1.0, PairPotential::Zero).unwrap();
        let r = p.reflect();
        for k in -7..7 {
            assert_relative_eq!(r.position(k).unwrap(), -p.position(-k).unwrap(), epsilon = 1e-12);
            assert_eq!(r.energy(k).unwrap(), p.energy(-k).unwrap());
        }
        assert_eq!(r.reflect(), p);
        let lat = PeriodicEnvironment::lattice(PairPotential::Zero);
        assert_eq!(lat.reflect(), lat);
    }

    #[test]
    fn shift_zero_and_lattice_invariance() {
        let env = sample_environment(&exp_spec(3, 20)).unwrap();
        assert_eq!(env.shift(0).unwrap(), env);
        let lat = sample_environment(&GeneratorSpec::lattice(10, PairPotential::Zero)).unwrap();
        let s = lat.shift(3).unwrap();
        for k in -13..=7 {
            assert_eq!(s.position(k).unwrap(), k as f64);
        }
        assert!(env.shift(21).is_err());
    }

    #[test]
    fn reflect_is_an_involution() {
        let env = sample_environment(&exp_spec(9, 15)).unwrap();
        assert_eq!(env.reflect().reflect(), env);
        let r = env.reflect();
        for k in -15..=15 {
            assert_eq!(r.position(k).unwrap(), -env.position(-k).unwrap());
            assert_eq!(r.energy(k).unwrap(), env.energy(-k).unwrap());
        }
        let lat = sample_environment(&GeneratorSpec::lattice(5, PairPotential::Zero)).unwrap();
        let rl = lat.reflect();
        for k in -5..=5 {
            assert_eq!(rl.position(k).unwrap(), k as f64);
        }
    }

    #[test]
    fn growth_preserves_existing_sites_even_after_transforms() {
        let spec = exp_spec(21, 10);
        let big = sample_environment(&GeneratorSpec { window: 80, ..spec.clone() }).unwrap();
        let mut env = sample_environment(&spec).unwrap();
        env.grow_to(47).unwrap();
        env.grow_to(-33).unwrap();
        for k in -33..=47 {
            assert_relative_eq!(env.position(k).unwrap(), big.position(k).unwrap(), epsilon = 1e-9);
            assert_eq!(env.energy(k).unwrap(), big.energy(k).unwrap());
        }
        let mut moved = sample_environment(&spec).unwrap().shift(4).unwrap().reflect();
        moved.grow_to(40).unwrap();
        let expect = big.shift(4).unwrap().reflect();
        assert!(moved.hi() >= 40);
        for k in moved.lo()..=40 {
            assert_relative_eq!(moved.position(k).unwrap(), expect.position(k).unwrap(), epsilon = 1e-9);
            assert_eq!(moved.energy(k).unwrap(), expect.energy(k).unwrap());
        }
        let mut fixed = PeriodicEnvironment::lattice(PairPotential::Zero).unroll(3);
        assert!(matches!(fixed.grow_to(10), Err(Error::WindowExceeded { .. })));
    }

    #[test]
    fn mott_u_values() {
        assert_eq!(mott_u(0.0, 0.0, 3.0), 0.0);
        assert_eq!(mott_u(1.0, -1.0, 2.0), -4.0);
        assert_eq!(mott_u(0.3, -0.7, 1.5), mott_u(-0.7, 0.3, 1.5));
    }

    #[test]
    fn assumption_report_lattice_and_exponential() {
        let lat = GeneratorSpec::lattice(1, PairPotential::Zero);
        let r = check_assumptions(&lat, 100, 2.0).unwrap();
        assert_eq!(r.min_gap, 1.0);
        assert_eq!(r.mean_gap, 1.0);
        assert_eq!(r.exp_moment_exact, Some(2.0f64.exp()));
        assert!(!r.diverges);

        let spec = exp_spec(2, 1);
        let r = check_assumptions(&spec, 200_000, 2.0).unwrap();
        let exact = 2.0f64.exp() * 3.0 / (3.0 - 2.0);
        assert_relative_eq!(r.exp_moment_exact.unwrap(), exact, max_relative = 1e-14);
        assert!(!r.diverges);
        assert!((r.exp_moment_estimate - exact).abs() / exact < 0.05);
        assert!(r.min_gap >= 1.0);

        let heavy = GeneratorSpec { gaps: GapLaw::ShiftedExponential { shift: 1.0, rate: 1.5 }, ..spec };
        let r = check_assumptions(&heavy, 1000, 2.0).unwrap();
        assert!(r.diverges);
        assert_eq!(r.exp_moment_exact, None);
    }

    #[test]
    fn truncated_pareto_mean_matches_samples() {
        let law = GapLaw::TruncatedPareto { shift: 1.0, scale: 0.5, alpha: 2.5, cap: 20.0 };
        let n = 200_000;
        let mean: f64 = (0..n).map(|c| law.quantile(coordinate_uniform(4, "gap", c))).sum::<f64>() / n as f64;
        assert!((mean - law.mean()).abs() < 0.01, "{mean} vs {}", law.mean());
    }

    proptest! {
        #[test]
        fn positions_respect_floor(seed in 0u64..1000, w in 1usize..40) {
            let env = sample_environment(&exp_spec(seed, w)).unwrap();
            prop_assert_eq!(env.position(0).unwrap(), 0.0);
            for k in env.lo()..env.hi() {
                let z = env.position(k + 1).unwrap() - env.position(k).unwrap();
                prop_assert!(z >= 1.0 - 1e-12);
                prop_assert!(env.position(k).unwrap().abs() >= (k.abs() as f64) * (1.0 - 1e-12));
            }
        }

        #[test]
        fn shift_is_a_group_action(seed in 0u64..1000, a in -5i64..5, b in -5i64..5) {
            let env = sample_environment(&exp_spec(seed, 30)).unwrap();
            let two = env.shift(a).unwrap().shift(b).unwrap();
            let one = env.shift(a + b).unwrap();
            prop_assert_eq!(two.lo(), one.lo());
            for k in one.lo()..=one.hi() {
                prop_assert!((two.position(k).unwrap() - one.position(k).unwrap()).abs() < 1e-9);
                prop_assert_eq!(two.energy(k).unwrap(), one.energy(k).unwrap());
            }
        }

        #[test]
        fn pair_potential_is_symmetric_and_bounded(a in -2.0f64..2.0, b in -2.0f64..2.0, beta in 0.0f64..3.0) {
            let u = PairPotential::Mott { beta };
            prop_assert_eq!(u.eval(a, b), u.eval(b, a));
            prop_assert!(u.eval(a, b).abs() <= u.bound(2.0) + 1e-12);
        }
    }
}
