//! Simulation of the discrete walk `Y_n`, the continuous-time walk `𝕐_t`
//! and the ρ-truncated walk `X^ρ_n`.
//!
//! A [`Walker`] owns its medium and caches the jump law of every visited
//! site. Jump targets and holding times come from two separate streams
//! derived from the run seed, so the embedded jump chain of a continuous
//! run coincides with the discrete run under the same seed.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::env::{Environment, Landscape, PeriodicEnvironment};
use crate::error::{Error, Result};
use crate::kernel::{check_lambda, jump_law_with_radius, truncation_radius, JumpLaw};
use crate::rng::{stream, Stream};

/// Default step budget for hitting-time samples.
pub const DEFAULT_HITTING_BUDGET: u64 = 100_000_000;

/// Where the walk lives.
#[derive(Clone, Debug)]
pub enum Medium {
    Periodic(PeriodicEnvironment),
    Windowed(Environment),
}

impl Medium {
    pub fn position(&self, k: i64) -> Result<f64> {
        match self {
            Medium::Periodic(p) => p.position(k),
            Medium::Windowed(e) => e.position(k),
        }
    }
}

impl From<PeriodicEnvironment> for Medium {
    fn from(p: PeriodicEnvironment) -> Self {
        Medium::Periodic(p)
    }
}

impl From<Environment> for Medium {
    fn from(e: Environment) -> Self {
        Medium::Windowed(e)
    }
}

/// One recorded point of a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathPoint {
    pub step: u64,
    pub index: i64,
    pub position: f64,
    pub time: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Record every `record_every`-th step (0 records nothing but the endpoints).
    pub record_every: u64,
    pub track_occupation: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub steps: u64,
    pub final_index: i64,
    /// `x_{final} - x_0`.
    pub displacement: f64,
    /// Elapsed real time; equals `steps` for discrete runs.
    pub time: f64,
    /// Sum of the per-step position increments.
    pub increment_sum: f64,
    pub path: Vec<PathPoint>,
    /// Visits per index, including the starting site.
    pub occupation: BTreeMap<i64, u64>,
}

/// Outcome of one hitting-time sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HittingSample {
    pub steps: u64,
    pub landing_index: i64,
    /// `X_T - target` in index units.
    pub overshoot: i64,
}

pub struct Walker {
    medium: Medium,
    lambda: f64,
    tail_tol: f64,
    by_state: Vec<Option<JumpLaw>>,
    by_site: HashMap<i64, JumpLaw>,
}

impl Walker {
    pub fn new(medium: impl Into<Medium>, lambda: f64, tail_tol: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let medium = medium.into();
        let states = match &medium {
            Medium::Periodic(p) => p.period(),
            Medium::Windowed(_) => 0,
        };
        Ok(Walker { medium, lambda, tail_tol, by_state: vec![None; states], by_site: HashMap::new() })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    /// Jump law at site `i`, growing an extendable window as needed.
    pub fn law(&mut self, i: i64) -> Result<&JumpLaw> {
        let (lambda, tol) = (self.lambda, self.tail_tol);
        match &mut self.medium {
            Medium::Periodic(p) => {
                let s = p.state_of(i);
                if self.by_state[s].is_none() {
                    self.by_state[s] = Some(crate::kernel::jump_law(p, lambda, s as i64, tol)?);
                }
                Ok(self.by_state[s].as_ref().unwrap())
            }
            Medium::Windowed(env) => {
                if !self.by_site.contains_key(&i) {
                    env.grow_to(i - 1)?;
                    env.grow_to(i + 1)?;
                    let radius = truncation_radius(env, lambda, i, tol)?;
                    env.grow_to(i - radius as i64)?;
                    env.grow_to(i + radius as i64)?;
                    let law = jump_law_with_radius(env, lambda, i, radius)?;
                    self.by_site.insert(i, law);
                }
                Ok(&self.by_site[&i])
            }
        }
    }

    fn start(&self, opts: &RunOptions, index: i64) -> Result<(Trajectory, f64)> {
        let x0 = self.medium.position(index)?;
        let mut t = Trajectory { final_index: index, ..Default::default() };
        if opts.track_occupation {
            t.occupation.insert(index, 1);
        }
        t.path.push(PathPoint { step: 0, index, position: 0.0, time: 0.0 });
        Ok((t, x0))
    }

    fn record(&self, t: &mut Trajectory, opts: &RunOptions, x0: f64) -> Result<()> {
        if opts.track_occupation {
            *t.occupation.entry(t.final_index).or_insert(0) += 1;
        }
        if opts.record_every > 0 && t.steps % opts.record_every == 0 {
            let position = self.medium.position(t.final_index)? - x0;
            t.path.push(PathPoint { step: t.steps, index: t.final_index, position, time: t.time });
        }
        Ok(())
    }

    fn finish(&self, t: &mut Trajectory, x0: f64) -> Result<()> {
        t.displacement = self.medium.position(t.final_index)? - x0;
        let last = PathPoint { step: t.steps, index: t.final_index, position: t.displacement, time: t.time };
        if t.path.last() != Some(&last) {
            t.path.push(last);
        }
        Ok(())
    }

    /// One draw from the law at `i`: `(offset, increment, total_rate)`.
    fn draw(&mut self, i: i64, rng: &mut Stream) -> Result<(i64, f64, f64)> {
        let u: f64 = rng.random();
        let law = self.law(i)?;
        let k = law.sample(u);
        Ok((k, law.displacement(k), law.total_rate))
    }

    /// `n_steps` steps of `Y^λ_n` from the origin.
    pub fn run_discrete(&mut self, n_steps: u64, seed: u64, opts: &RunOptions) -> Result<Trajectory> {
        self.run_truncated(None, n_steps, seed, opts)
    }

    /// `n_steps` steps of the ρ-truncated walk; `rho = None` is the full walk.
    pub fn run_truncated(
        &mut self,
        rho: Option<usize>,
        n_steps: u64,
        seed: u64,
        opts: &RunOptions,
    ) -> Result<Trajectory> {
        if rho == Some(0) {
            return Err(Error::invalid("truncation radius ρ must be at least 1"));
        }
        let mut jumps = stream(seed, "jump", 0);
        let (mut t, x0) = self.start(opts, 0)?;
        for _ in 0..n_steps {
            let (k, dx, _) = self.draw(t.final_index, &mut jumps)?;
            if rho.is_none_or(|r| k.unsigned_abs() as usize <= r) {
                t.final_index += k;
                t.increment_sum += dx;
            }
            t.steps += 1;
            t.time += 1.0;
            self.record(&mut t, opts, x0)?;
        }
        self.finish(&mut t, x0)?;
        Ok(t)
    }

    /// `𝕐_t` on `[0, t_max]` with exponential holding times of rate `π^λ`.
    pub fn run_continuous(&mut self, t_max: f64, seed: u64, opts: &RunOptions) -> Result<Trajectory> {
        if !(t_max > 0.0) {
            return Err(Error::invalid("time horizon must be positive"));
        }
        let mut jumps = stream(seed, "jump", 0);
        let mut clock = stream(seed, "clock", 0);
        let (mut t, x0) = self.start(opts, 0)?;
        loop {
            let rate = self.law(t.final_index)?.total_rate;
            let e: f64 = -(1.0 - clock.random::<f64>()).ln();
            let hold = e / rate;
            if t.time + hold > t_max {
                break;
            }
            t.time += hold;
            let (k, dx, _) = self.draw(t.final_index, &mut jumps)?;
            t.final_index += k;
            t.increment_sum += dx;
            t.steps += 1;
            self.record(&mut t, opts, x0)?;
        }
        t.time = t_max;
        self.finish(&mut t, x0)?;
        Ok(t)
    }

    /// `T_target = inf{n >= 0 : X^ρ_n >= target}` from `start`.
    pub fn sample_hitting_time(
        &mut self,
        rho: Option<usize>,
        start: i64,
        target: i64,
        seed: u64,
        max_steps: u64,
    ) -> Result<HittingSample> {
        if rho == Some(0) {
            return Err(Error::invalid("truncation radius ρ must be at least 1"));
        }
        let mut jumps = stream(seed, "jump", 0);
        let mut i = start;
        let mut n = 0u64;
        while i < target {
            if n == max_steps {
                return Err(Error::BudgetExhausted { budget: max_steps });
            }
            let (k, _, _) = self.draw(i, &mut jumps)?;
            if rho.is_none_or(|r| k.unsigned_abs() as usize <= r) {
                i += k;
            }
            n += 1;
        }
        Ok(HittingSample { steps: n, landing_index: i, overshoot: i - target })
    }

    /// Probability that the ρ-truncated walk stays put at site `i`.
    pub fn self_loop_probability(&mut self, i: i64, rho: usize) -> Result<f64> {
        let law = self.law(i)?;
        let r = rho as i64;
        let kept: f64 = law.offsets().filter(|k| k.abs() <= r).map(|k| law.p(k)).sum();
        Ok((1.0 - kept).max(0.0))
    }
}

/// State seen by a visitor just before the walk leaves it.
#[derive(Clone, Copy, Debug)]
pub struct Visit<'a> {
    /// Number of jumps made so far.
    pub step: u64,
    pub index: i64,
    /// `x_index - x_0`.
    pub position: f64,
    /// Time at which the state was entered (equals `step` in discrete runs).
    pub time: f64,
    pub law: &'a JumpLaw,
}

impl Walker {
    /// `n_steps` steps of `Y^λ_n`, calling `visit` on `ω_0, …, ω_{n-1}`.
    /// Uses the same stream as [`Walker::run_discrete`].
    pub fn run_discrete_with<F>(&mut self, n_steps: u64, seed: u64, mut visit: F) -> Result<Trajectory>
    where
        F: FnMut(&Visit) -> Result<()>,
    {
        let mut jumps = stream(seed, "jump", 0);
        let (mut t, x0) = self.start(&RunOptions::default(), 0)?;
        for step in 0..n_steps {
            let position = self.medium.position(t.final_index)? - x0;
            let u: f64 = jumps.random();
            let i = t.final_index;
            let law = self.law(i)?;
            visit(&Visit { step, index: i, position, time: step as f64, law })?;
            let k = law.sample(u);
            t.increment_sum += law.displacement(k);
            t.final_index += k;
            t.steps += 1;
        }
        t.time = n_steps as f64;
        t.path.clear();
        self.finish(&mut t, x0)?;
        Ok(t)
    }

    /// `𝕐_t` on `[0, t_max]`, calling `visit` on every state entered before
    /// `t_max`. Uses the same streams as [`Walker::run_continuous`].
    pub fn run_continuous_with<F>(&mut self, t_max: f64, seed: u64, mut visit: F) -> Result<Trajectory>
    where
        F: FnMut(&Visit) -> Result<()>,
    {
        if !(t_max > 0.0) {
            return Err(Error::invalid("time horizon must be positive"));
        }
        let mut jumps = stream(seed, "jump", 0);
        let mut clock = stream(seed, "clock", 0);
        let (mut t, x0) = self.start(&RunOptions::default(), 0)?;
        loop {
            let position = self.medium.position(t.final_index)? - x0;
            let (step, time, i) = (t.steps, t.time, t.final_index);
            let law = self.law(i)?;
            visit(&Visit { step, index: i, position, time, law })?;
            let e: f64 = -(1.0 - clock.random::<f64>()).ln();
            let hold = e / law.total_rate;
            if t.time + hold > t_max {
                break;
            }
            t.time += hold;
            let u: f64 = jumps.random();
            let k = law.sample(u);
            t.increment_sum += law.displacement(k);
            t.final_index += k;
            t.steps += 1;
        }
        t.time = t_max;
        t.path.clear();
        self.finish(&mut t, x0)?;
        Ok(t)
    }
}

/// Fixed-width little-endian records `(step: u64, index: i64, time: f64)`.
pub fn write_path_log<W: Write>(path: &[PathPoint], mut out: W) -> Result<()> {
    for p in path {
        out.write_all(&p.step.to_le_bytes())?;
        out.write_all(&p.index.to_le_bytes())?;
        out.write_all(&p.time.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_path_log(bytes: &[u8]) -> Result<Vec<(u64, i64, f64)>> {
    if bytes.len() % 24 != 0 {
        return Err(Error::invalid("path log length is not a multiple of 24 bytes"));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| {
            (
                u64::from_le_bytes(c[0..8].try_into().unwrap()),
                i64::from_le_bytes(c[8..16].try_into().unwrap()),
                f64::from_le_bytes(c[16..24].try_into().unwrap()),
            )
        })
        .collect())
}

/// One summary row per replica.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub replica: u64,
    pub n: u64,
    pub displacement: f64,
    pub time: f64,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_periodic, sample_environment, EnergyLaw, GapLaw, GeneratorSpec, PairPotential};
    use crate::kernel::DEFAULT_TAIL_TOL;
    use std::f64::consts::E;

    fn lattice_walker(lambda: f64) -> Walker {
        Walker::new(PeriodicEnvironment::lattice(PairPotential::Zero), lambda, DEFAULT_TAIL_TOL).unwrap()
    }

    fn iid_walker(lambda: f64, seed: u64) -> Walker {
        let env = sample_environment(&GeneratorSpec {
            floor: 1.0,
            gaps: GapLaw::ShiftedExponential { shift: 1.0, rate: 2.0 },
            energies: EnergyLaw::Uniform { amplitude: 0.5 },
            pair: PairPotential::Mott { beta: 1.0 },
            seed,
            window: 20,
        })
        .unwrap();
        Walker::new(env, lambda, DEFAULT_TAIL_TOL).unwrap()
    }

    #[test]
    fn zero_steps_stay_at_origin() {
        let t = lattice_walker(0.3).run_discrete(0, 1, &RunOptions::default()).unwrap();
        assert_eq!(t.displacement, 0.0);
        assert_eq!(t.steps, 0);
    }

    #[test]
    fn runs_are_deterministic_and_additive() {
        let opts = RunOptions { record_every: 7, track_occupation: true };
        let a = iid_walker(0.4, 2).run_discrete(5_000, 9, &opts).unwrap();
        let b = iid_walker(0.4, 2).run_discrete(5_000, 9, &opts).unwrap();
        assert_eq!(a.final_index, b.final_index);
        assert_eq!(a.path, b.path);
        assert!((a.displacement - a.increment_sum).abs() < 1e-9 * a.displacement.abs().max(1.0));
        assert_eq!(a.occupation.values().sum::<u64>(), a.steps + 1);
    }

    #[test]
    fn window_grows_with_ballistic_walk() {
        let mut w = iid_walker(0.8, 4);
        let t = w.run_discrete(2_000, 1, &RunOptions::default()).unwrap();
        assert!(t.final_index > 20);
        let Medium::Windowed(env) = w.medium() else { unreachable!() };
        assert!(env.hi() > t.final_index);
    }

    #[test]
    fn fixed_window_reports_excursion() {
        let env = PeriodicEnvironment::lattice(PairPotential::Zero).unroll(40);
        let mut w = Walker::new(env, 0.8, DEFAULT_TAIL_TOL).unwrap();
        let r = w.run_discrete(10_000, 1, &RunOptions::default());
        assert!(matches!(r, Err(Error::WindowExceeded { .. })));
    }

    #[test]
    fn embedded_chain_reproduces_discrete_walk() {
        let opts = RunOptions { record_every: 1, track_occupation: false };
        let c = iid_walker(0.3, 5).run_continuous(300.0, 11, &opts).unwrap();
        let d = iid_walker(0.3, 5).run_discrete(c.steps, 11, &opts).unwrap();
        let ci: Vec<i64> = c.path[..c.path.len() - 1].iter().map(|p| p.index).collect();
        let di: Vec<i64> = d.path.iter().map(|p| p.index).collect();
        assert_eq!(ci, di);
    }

    #[test]
    fn short_horizon_means_no_jump() {
        let t = lattice_walker(0.0).run_continuous(1e-12, 3, &RunOptions::default()).unwrap();
        assert_eq!(t.displacement, 0.0);
        assert_eq!(t.time, 1e-12);
    }

    #[test]
    fn infinite_rho_matches_discrete() {
        let a = iid_walker(0.2, 8).run_truncated(None, 1000, 4, &RunOptions::default()).unwrap();
        let b = iid_walker(0.2, 8).run_discrete(1000, 4, &RunOptions::default()).unwrap();
        assert_eq!(a.final_index, b.final_index);
        let every = RunOptions { record_every: 1, track_occupation: false };
        let c = iid_walker(0.2, 8).run_truncated(Some(2), 1000, 4, &every).unwrap();
        assert!(c.path.windows(2).all(|w| (w[1].index - w[0].index).abs() <= 2));
    }

    #[test]
    fn nearest_neighbour_truncation_on_lattice() {
        let mut w = lattice_walker(0.0);
        let pi = 2.0 / (E - 1.0);
        let stay = w.self_loop_probability(0, 1).unwrap();
        assert!((stay - (1.0 - 2.0 * (-1.0f64).exp() / pi)).abs() < 1e-12);
        let law = w.law(0).unwrap();
        assert!((law.p(1) - law.p(-1)).abs() < 1e-15);
        assert!(law.p(1) > 0.0);
        for i in -3..3 {
            let s = iid_walker(0.5, 1).self_loop_probability(i, 3).unwrap();
            assert!((0.0..1.0).contains(&s));
        }
    }

    #[test]
    fn hitting_time_edge_cases() {
        let mut w = lattice_walker(0.5);
        assert_eq!(w.sample_hitting_time(Some(3), 5, 5, 1, 10).unwrap().steps, 0);
        let s = w.sample_hitting_time(Some(3), 0, 50, 1, DEFAULT_HITTING_BUDGET).unwrap();
        assert!(s.overshoot >= 0 && s.overshoot < 3);
        assert!(s.landing_index >= 50);
        let mut slow = lattice_walker(0.0);
        assert!(matches!(
            slow.sample_hitting_time(Some(1), 0, 1_000_000, 1, 100),
            Err(Error::BudgetExhausted { budget: 100 })
        ));
    }

    #[test]
    fn unbiased_lattice_has_zero_mean_velocity() {
        // 100 replicas of length 1e5: mean of Y_n/n vanishes within 3 standard errors
        let n = 100_000u64;
        let v: Vec<f64> = (0..100)
            .map(|r| {
                let t = lattice_walker(0.0)
                    .run_discrete(n, crate::rng::derive_seed(1, "replica", r), &RunOptions::default())
                    .unwrap();
                t.displacement / n as f64
            })
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!(m.abs() < 3.0 * sd / 10.0, "mean {m}, sd {sd}");
    }

    #[test]
    fn path_log_roundtrip() {
        let t = make_periodic(vec![1.0, 2.0], vec![0.0, 0.0], 1.0, PairPotential::Zero)
            .map(|p| Walker::new(p, 0.1, 1e-10).unwrap())
            .unwrap()
            .run_continuous(20.0, 3, &RunOptions { record_every: 1, track_occupation: false })
            .unwrap();
        let mut buf = Vec::new();
        write_path_log(&t.path, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 * t.path.len());
        let back = read_path_log(&buf).unwrap();
        for (p, (s, i, time)) in t.path.iter().zip(back) {
            assert_eq!((p.step, p.index, p.time), (s, i, time));
        }
    }

    #[test]
    fn visiting_runs_match_plain_runs() {
        let env = make_periodic(vec![1.0, 2.5, 1.5], vec![0.1, -0.2, 0.3], 1.0, PairPotential::Mott { beta: 1.0 }).unwrap();
        let opts = RunOptions { record_every: 0, track_occupation: true };
        let plain = Walker::new(env.clone(), 0.3, 1e-12).unwrap().run_discrete(5000, 11, &opts).unwrap();
        let mut counts = BTreeMap::new();
        let seen = Walker::new(env.clone(), 0.3, 1e-12)
            .unwrap()
            .run_discrete_with(5000, 11, |v| {
                *counts.entry(v.index).or_insert(0u64) += 1;
                Ok(())
            })
            .unwrap();
        assert_eq!(seen.final_index, plain.final_index);
        assert_eq!(seen.displacement, plain.displacement);
        // plain occupation also counts the final site
        *counts.entry(plain.final_index).or_insert(0) += 1;
        assert_eq!(counts, plain.occupation);

        let plain = Walker::new(env.clone(), 0.3, 1e-12).unwrap().run_continuous(800.0, 5, &opts).unwrap();
        let mut visits = 0u64;
        let mut last_time = -1.0;
        let seen = Walker::new(env, 0.3, 1e-12)
            .unwrap()
            .run_continuous_with(800.0, 5, |v| {
                assert!(v.time > last_time);
                last_time = v.time;
                visits += 1;
                Ok(())
            })
            .unwrap();
        assert_eq!(seen.final_index, plain.final_index);
        assert_eq!(seen.steps, plain.steps);
        assert_eq!(visits, plain.steps + 1);
    }
}
