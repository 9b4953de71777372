//! Resistor networks of the ρ-truncated walk.
//!
//! A [`Network`] holds the conductances `c^λ_{i,j}`, `0 < |i - j| <= ρ`, on
//! a window of sites. All conductances are divided by the common factor
//! `e^{2λ x_mid}` (midpoint of the window), which leaves harmonic functions
//! and effective-conductance ratios unchanged while keeping the entries in
//! floating-point range. Effective conductances are reported in true units.
//!
//! Dirichlet problems are solved by banded subtraction-free elimination up
//! to [`DIRECT_LIMIT`] unknowns and by Jacobi-preconditioned conjugate
//! gradients beyond. [`FiniteChain`] covers small dense reversible chains
//! such as the reduced chain on `{0, ..., ρ}`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::Landscape;
use crate::error::{Error, Result};
use crate::kernel::{check_lambda, log_conductance, total_rate, DEFAULT_TAIL_TOL};

pub const DIRECT_LIMIT: usize = 10_000;
const CG_TOL: f64 = 1e-12;

/// A set of sites, possibly half-infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSet {
    Sites(Vec<i64>),
    /// Inclusive range.
    Range(i64, i64),
    /// `(-∞, a]`.
    AtMost(i64),
    /// `[b, ∞)`.
    AtLeast(i64),
    Union(Vec<NodeSet>),
}

impl NodeSet {
    pub fn single(k: i64) -> Self {
        NodeSet::Sites(vec![k])
    }

    pub fn contains(&self, k: i64) -> bool {
        match self {
            NodeSet::Sites(v) => v.contains(&k),
            NodeSet::Range(a, b) => (*a..=*b).contains(&k),
            NodeSet::AtMost(a) => k <= *a,
            NodeSet::AtLeast(b) => k >= *b,
            NodeSet::Union(v) => v.iter().any(|s| s.contains(k)),
        }
    }

    /// Bounded part that a window must contain, if any.
    fn finite_hull(&self) -> Option<(i64, i64)> {
        match self {
            NodeSet::Sites(v) => Some((*v.iter().min()?, *v.iter().max()?)),
            NodeSet::Range(a, b) => Some((*a, *b)),
            NodeSet::AtMost(a) | NodeSet::AtLeast(a) => Some((*a, *a)),
            NodeSet::Union(v) => v.iter().filter_map(|s| s.finite_hull()).reduce(|x, y| (x.0.min(y.0), x.1.max(y.1))),
        }
    }
}

/// Grounded weighted Laplacian `A f = b` with
/// `A = diag(Σ_j c_{i,j} + g_i) - (c_{i,j})` on a band of half-width `b`.
///
/// The direct solver eliminates unknowns by star-mesh transforms: every
/// update adds nonnegative conductance, and pivots are recomputed as sums of
/// the remaining conductances, never by subtraction. This keeps it accurate
/// when conductances span many orders of magnitude.
struct Laplacian {
    n: usize,
    b: usize,
    /// `c[i * b + (d - 1)] = c_{i, i+d}`.
    c: Vec<f64>,
    /// Conductance from each unknown to pinned sites.
    g: Vec<f64>,
}

impl Laplacian {
    fn new(n: usize, b: usize) -> Self {
        let b = b.max(1);
        Laplacian { n, b, c: vec![0.0; n * b], g: vec![0.0; n] }
    }

    fn add_edge(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        debug_assert!(j - i <= self.b && i != j);
        self.c[i * self.b + (j - i - 1)] += v;
    }

    fn edge(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        if i == j || j - i > self.b { 0.0 } else { self.c[i * self.b + (j - i - 1)] }
    }

    fn diag(&self, i: usize) -> f64 {
        let lo = i.saturating_sub(self.b);
        let hi = (i + self.b).min(self.n - 1);
        (lo..=hi).map(|j| self.edge(i, j)).sum::<f64>() + self.g[i]
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = (0..self.n).map(|i| self.g[i] * x[i]).collect();
        for i in 0..self.n {
            for d in 1..=self.b {
                if i + d < self.n {
                    let c = self.c[i * self.b + d - 1];
                    y[i] += c * (x[i] - x[i + d]);
                    y[i + d] += c * (x[i + d] - x[i]);
                }
            }
        }
        y
    }

    fn eliminate_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (n, b) = (self.n, self.b);
        let mut c = self.c.clone();
        let mut g = self.g.clone();
        let mut r = rhs.to_vec();
        let mut pivots = vec![0.0; n];
        for p in 0..n {
            let reach = b.min(n - 1 - p);
            let row = &c[p * b..p * b + reach];
            let d: f64 = row.iter().sum::<f64>() + g[p];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular(format!("unknown {p} is not connected to any pinned site")));
            }
            pivots[p] = d;
            let row: Vec<f64> = row.to_vec();
            for (d1, &cpi) in row.iter().enumerate() {
                if cpi == 0.0 {
                    continue;
                }
                let i = p + d1 + 1;
                let w = cpi / d;
                g[i] += w * g[p];
                r[i] += w * r[p];
                for (d2, &cpj) in row.iter().enumerate().skip(d1 + 1) {
                    c[i * b + (d2 - d1 - 1)] += w * cpj;
                }
            }
        }
        let mut x = vec![0.0; n];
        for p in (0..n).rev() {
            let reach = b.min(n - 1 - p);
            let mut acc = r[p];
            for d in 1..=reach {
                acc += c[p * b + d - 1] * x[p + d];
            }
            x[p] = acc / pivots[p];
        }
        Ok(x)
    }

    fn cg_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let diag: Vec<f64> = (0..n).map(|i| self.diag(i)).collect();
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let norm_b = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_b == 0.0 {
            return Ok(x);
        }
        for _ in 0..(20 * n).max(1000) {
            let ap = self.matvec(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(Error::Singular("conjugate gradient lost positive definiteness".into()));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= CG_TOL * norm_b {
                return Ok(x);
            }
            z = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::Singular("conjugate gradient did not converge".into()))
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.n == 0 {
            return Ok(Vec::new());
        }
        if self.n <= DIRECT_LIMIT { self.eliminate_solve(rhs) } else { self.cg_solve(rhs) }
    }

    /// `‖A x - b‖∞ / (‖A‖∞ ‖x‖∞ + ‖b‖∞)`.
    fn residual(&self, x: &[f64], rhs: &[f64]) -> f64 {
        let ax = self.matvec(x);
        let err = ax.iter().zip(rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let anorm = (0..self.n).fold(0.0f64, |m, i| m.max(2.0 * self.diag(i)));
        let xnorm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bnorm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = anorm * xnorm + bnorm;
        if denom > 0.0 { err / denom } else { 0.0 }
    }
}

/// Solution of a Dirichlet problem on a [`Network`].
#[derive(Clone, Debug)]
pub struct Potential {
    pub lo: i64,
    /// Values on every window site, pinned ones included.
    pub values: Vec<f64>,
    /// `‖A f - b‖∞ / (‖A‖∞ ‖f‖∞ + ‖b‖∞)` over the free sites.
    pub residual: f64,
}

impl Potential {
    pub fn at(&self, k: i64) -> f64 {
        self.values[(k - self.lo) as usize]
    }
}

/// Conductances of the ρ-truncated walk on the window `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct Network {
    lo: i64,
    hi: i64,
    rho: usize,
    lambda: f64,
    log_scale: f64,
    /// `cond[(i - lo) * rho + (m - 1)]` is the scaled `c_{i, i+m}`.
    cond: Vec<f64>,
}

impl Network {
    pub fn new<L: Landscape + ?Sized>(env: &L, lambda: f64, rho: usize, lo: i64, hi: i64) -> Result<Self> {
        check_lambda(lambda)?;
        if rho == 0 {
            return Err(Error::invalid("truncation radius ρ must be at least 1"));
        }
        if hi <= lo {
            return Err(Error::invalid("window must contain at least two sites"));
        }
        let mid = lo + (hi - lo) / 2;
        let log_scale = 2.0 * lambda * env.position(mid)?;
        let n = (hi - lo + 1) as usize;
        let mut cond = vec![0.0; n * rho];
        for i in lo..=hi {
            for m in 1..=rho as i64 {
                if i + m <= hi {
                    cond[(i - lo) as usize * rho + (m as usize - 1)] =
                        (log_conductance(env, lambda, i, i + m)? - log_scale).exp();
                }
            }
        }
        Ok(Network { lo, hi, rho, lambda, log_scale, cond })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Common factor removed from every conductance.
    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Scaled `c_{i,j}`; zero beyond range or window.
    pub fn scaled_conductance(&self, i: i64, j: i64) -> f64 {
        let (a, b) = (i.min(j), i.max(j));
        let m = (b - a) as usize;
        if m == 0 || m > self.rho || a < self.lo || b > self.hi {
            0.0
        } else {
            self.cond[(a - self.lo) as usize * self.rho + (m - 1)]
        }
    }

    pub fn conductance(&self, i: i64, j: i64) -> f64 {
        (self.scaled_conductance(i, j).ln() + self.log_scale).exp()
    }

    fn neighbours(&self, i: i64) -> impl Iterator<Item = i64> + '_ {
        let r = self.rho as i64;
        ((i - r).max(self.lo)..=(i + r).min(self.hi)).filter(move |&j| j != i)
    }

    /// Solve `Σ_j c_{i,j}(f_i - f_j) = source(i)` on unpinned sites.
    pub fn solve_dirichlet(
        &self,
        pinned: impl Fn(i64) -> Option<f64>,
        source: impl Fn(i64) -> f64,
    ) -> Result<Potential> {
        let mut slot = vec![usize::MAX; (self.hi - self.lo + 1) as usize];
        let mut free = Vec::new();
        let mut values = vec![0.0; slot.len()];
        for k in self.lo..=self.hi {
            let j = (k - self.lo) as usize;
            match pinned(k) {
                Some(v) => values[j] = v,
                None => {
                    slot[j] = free.len();
                    free.push(k);
                }
            }
        }
        if free.len() == slot.len() {
            return Err(Error::Singular("no pinned sites inside the window".into()));
        }
        let mut lap = Laplacian::new(free.len(), self.rho);
        let mut rhs = vec![0.0; free.len()];
        for (s, &i) in free.iter().enumerate() {
            rhs[s] = source(i);
            for j in self.neighbours(i) {
                let c = self.scaled_conductance(i, j);
                let sj = slot[(j - self.lo) as usize];
                if sj == usize::MAX {
                    lap.g[s] += c;
                    rhs[s] += c * values[(j - self.lo) as usize];
                } else if sj < s {
                    lap.add_edge(s, sj, c);
                }
            }
        }
        let x = lap.solve(&rhs)?;
        for (s, &i) in free.iter().enumerate() {
            values[(i - self.lo) as usize] = x[s];
        }
        let residual = if free.is_empty() { 0.0 } else { lap.residual(&x, &rhs) };
        Ok(Potential { lo: self.lo, values, residual })
    }

    /// Minimizer with `f = 0` on `a` and `f = 1` on `b`.
    pub fn harmonic(&self, a: &NodeSet, b: &NodeSet) -> Result<Potential> {
        self.check_sets(a, b)?;
        self.solve_dirichlet(
            |k| {
                if a.contains(k) {
                    Some(0.0)
                } else if b.contains(k) {
                    Some(1.0)
                } else {
                    None
                }
            },
            |_| 0.0,
        )
    }

    fn check_sets(&self, a: &NodeSet, b: &NodeSet) -> Result<()> {
        let inside = |s: &NodeSet| (self.lo..=self.hi).any(|k| s.contains(k));
        if !inside(a) || !inside(b) {
            return Err(Error::invalid("both node sets must meet the window"));
        }
        if (self.lo..=self.hi).any(|k| a.contains(k) && b.contains(k)) {
            return Err(Error::invalid("node sets must be disjoint"));
        }
        for s in [a, b] {
            if let Some((x, y)) = s.finite_hull() {
                if x > self.hi || y < self.lo {
                    return Err(Error::WindowExceeded { needed: x, lo: self.lo, hi: self.hi });
                }
            }
        }
        Ok(())
    }

    /// Dirichlet energy `Σ_{i<j} c_{i,j}(f_j - f_i)^2` in true units.
    pub fn energy(&self, f: &Potential) -> f64 {
        let mut e = 0.0;
        for i in self.lo..=self.hi {
            for m in 1..=self.rho as i64 {
                if i + m <= self.hi {
                    e += self.scaled_conductance(i, i + m) * (f.at(i + m) - f.at(i)).powi(2);
                }
            }
        }
        e * self.scale()
    }

    /// `C^ρ_eff(A, B)` restricted to the window, as the current leaving `A`.
    /// Equal to the Dirichlet energy of the harmonic potential, but only the
    /// edges leaving `A` enter, so far-away high-conductance clusters whose
    /// potentials agree up to rounding cannot pollute the sum.
    pub fn effective_conductance(&self, a: &NodeSet, b: &NodeSet) -> Result<(f64, f64)> {
        let f = self.harmonic(a, b)?;
        let mut current = 0.0;
        for i in (self.lo..=self.hi).filter(|&i| a.contains(i)) {
            for j in self.neighbours(i) {
                if !a.contains(j) {
                    current += self.scaled_conductance(i, j) * (f.at(j) - f.at(i));
                }
            }
        }
        Ok((current * self.scale(), f.residual))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EffectiveConductance {
    pub value: f64,
    pub residual: f64,
    /// Largest relative change when the window is shrunk or grown by 25%.
    pub window_sensitivity: Option<f64>,
}

/// `C^ρ_eff(A, B)` on the window `[lo, hi]`, with a window-sensitivity re-solve.
pub fn effective_conductance<L: Landscape + ?Sized>(
    env: &L,
    lambda: f64,
    rho: usize,
    a: &NodeSet,
    b: &NodeSet,
    window: (i64, i64),
) -> Result<EffectiveConductance> {
    let (lo, hi) = window;
    let (value, residual) = Network::new(env, lambda, rho, lo, hi)?.effective_conductance(a, b)?;
    let eighth = ((hi - lo) / 8).max(1);
    let mut sensitivity: Option<f64> = None;
    for (l, h) in [(lo + eighth, hi - eighth), (lo - eighth, hi + eighth)] {
        let other = Network::new(env, lambda, rho, l, h).and_then(|n| n.effective_conductance(a, b));
        if let Ok((v, _)) = other {
            let rel = (v - value).abs() / value.abs().max(f64::MIN_POSITIVE);
            sensitivity = Some(sensitivity.map_or(rel, |s| s.max(rel)));
        }
    }
    Ok(EffectiveConductance { value, residual, window_sensitivity: sensitivity })
}

/// `Σ_{j=k}^{ρ-1} 1 / c_{j,j+1}`.
pub fn nn_series<L: Landscape + ?Sized>(env: &L, lambda: f64, k: i64, rho: i64) -> Result<f64> {
    if !(0 < k && k < rho) {
        return Err(Error::invalid("need 0 < k < ρ"));
    }
    let mut s = 0.0;
    for j in k..rho {
        s += (-log_conductance(env, lambda, j, j + 1)?).exp();
    }
    Ok(s)
}

/// Exact `P_k(X_{T_i} = i)` for the ρ-truncated walk, with sites below the
/// window's lower end treated as absent.
pub fn landing_probability<L: Landscape + ?Sized>(
    env: &L,
    lambda: f64,
    rho: usize,
    start: i64,
    target: i64,
    lo: i64,
) -> Result<f64> {
    if start >= target {
        return Ok(if start == target { 1.0 } else { 0.0 });
    }
    let net = Network::new(env, lambda, rho, lo, target + rho as i64)?;
    let f = net.solve_dirichlet(
        |k| match k.cmp(&target) {
            std::cmp::Ordering::Less => None,
            std::cmp::Ordering::Equal => Some(1.0),
            std::cmp::Ordering::Greater => Some(0.0),
        },
        |_| 0.0,
    )?;
    Ok(f.at(start))
}

/// Exact `E_start[T^ρ_target]`, self-loops included, on the window
/// `[lo, target + ρ]`.
pub fn expected_crossing_time<L: Landscape + ?Sized>(
    env: &L,
    lambda: f64,
    rho: usize,
    start: i64,
    target: i64,
    lo: i64,
) -> Result<f64> {
    if start >= target {
        return Ok(0.0);
    }
    let net = Network::new(env, lambda, rho, lo, target + rho as i64)?;
    let mut weight = Vec::with_capacity((target - lo) as usize);
    for i in lo..target {
        let pi = total_rate(env, lambda, i, DEFAULT_TAIL_TOL)?;
        weight.push((pi.ln() + 2.0 * lambda * env.position(i)? - net.log_scale).exp());
    }
    let f = net.solve_dirichlet(|k| (k >= target).then_some(0.0), |i| weight[(i - lo) as usize])?;
    Ok(f.at(start))
}

/// Reversible chain on `{0, ..., m}` given by symmetric conductances.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteChain {
    c: DMatrix<f64>,
    pi: DVector<f64>,
}

impl FiniteChain {
    pub fn from_conductances(c: DMatrix<f64>) -> Result<Self> {
        let n = c.nrows();
        if n < 2 || c.ncols() != n {
            return Err(Error::invalid("conductance table must be square with at least two states"));
        }
        for i in 0..n {
            if c[(i, i)] != 0.0 {
                return Err(Error::invalid("conductance table must vanish on the diagonal"));
            }
            for j in 0..n {
                let (a, b) = (c[(i, j)], c[(j, i)]);
                if !(a >= 0.0) || (a - b).abs() > 1e-14 * a.max(b) {
                    return Err(Error::invalid("conductances must be symmetric and nonnegative"));
                }
            }
        }
        let pi = DVector::from_iterator(n, c.row_iter().map(|r| r.sum()));
        if pi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::NotIrreducible("isolated state".into()));
        }
        Ok(FiniteChain { c, pi })
    }

    pub fn size(&self) -> usize {
        self.c.nrows()
    }

    pub fn conductance(&self, i: usize, j: usize) -> f64 {
        self.c[(i, j)]
    }

    pub fn pi(&self, i: usize) -> f64 {
        self.pi[i]
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.c[(i, j)] / self.pi[i]
    }

    /// CSV edge list `i,j,conductance` with `i < j`.
    pub fn write_edges_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "conductance"])?;
        for i in 0..self.size() {
            for j in (i + 1)..self.size() {
                if self.c[(i, j)] > 0.0 {
                    w.write_record([i.to_string(), j.to_string(), format!("{:e}", self.c[(i, j)])])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Solve `Σ_j c_{i,j}(f_i - f_j) = source_i` for `i` not pinned.
    fn dirichlet(&self, pinned: &[Option<f64>], source: &[f64]) -> Result<Vec<f64>> {
        let n = self.size();
        let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
        let mut f: Vec<f64> = pinned.iter().map(|p| p.unwrap_or(0.0)).collect();
        if free.is_empty() {
            return Ok(f);
        }
        let m = free.len();
        let mut lap = Laplacian::new(m, m.saturating_sub(1));
        let mut b = vec![0.0; m];
        for (s, &i) in free.iter().enumerate() {
            b[s] = source[i];
            for j in 0..n {
                if j == i {
                    continue;
                }
                match pinned[j] {
                    Some(v) => {
                        lap.g[s] += self.c[(i, j)];
                        b[s] += self.c[(i, j)] * v;
                    }
                    None => {
                        let t = free.binary_search(&j).unwrap();
                        if t < s {
                            lap.add_edge(s, t, self.c[(i, j)]);
                        }
                    }
                }
            }
        }
        let x = lap.solve(&b)?;
        for (s, &i) in free.iter().enumerate() {
            f[i] = x[s];
        }
        Ok(f)
    }

    fn check_states(&self, sets: &[&[usize]]) -> Result<()> {
        for s in sets {
            if s.is_empty() || s.iter().any(|&i| i >= self.size()) {
                return Err(Error::invalid("state set empty or out of range"));
            }
        }
        if sets.len() == 2 && sets[0].iter().any(|i| sets[1].contains(i)) {
            return Err(Error::invalid("state sets must be disjoint"));
        }
        Ok(())
    }

    /// `P_x(τ_a < τ_b)` for every state `x`.
    pub fn hitting_probabilities(&self, a: &[usize], b: &[usize]) -> Result<Vec<f64>> {
        self.check_states(&[a, b])?;
        let mut pinned = vec![None; self.size()];
        a.iter().for_each(|&i| pinned[i] = Some(1.0));
        b.iter().for_each(|&i| pinned[i] = Some(0.0));
        self.dirichlet(&pinned, &vec![0.0; self.size()])
    }

    /// `C_eff(a, b)`.
    pub fn effective_conductance(&self, a: &[usize], b: &[usize]) -> Result<f64> {
        let h = self.hitting_probabilities(a, b)?;
        let mut flux = 0.0;
        for &i in a {
            for j in 0..self.size() {
                flux += self.c[(i, j)] * (1.0 - h[j]);
            }
        }
        Ok(flux)
    }

    /// `E_x[τ_target]` for every state `x`.
    pub fn expected_hitting_times(&self, target: &[usize]) -> Result<Vec<f64>> {
        self.check_states(&[target])?;
        let mut pinned = vec![None; self.size()];
        target.iter().for_each(|&i| pinned[i] = Some(0.0));
        let source: Vec<f64> = self.pi.iter().copied().collect();
        self.dirichlet(&pinned, &source)
    }
}

/// Reduced chain on `{0, ..., ρ}` whose boundary states absorb all
/// conductance towards `(-∞, 0]` and `[ρ, ∞)`.
pub fn reduce_chain<L: Landscape + ?Sized>(env: &L, lambda: f64, rho: usize) -> Result<FiniteChain> {
    check_lambda(lambda)?;
    if rho < 2 {
        return Err(Error::invalid("reduced chain needs ρ >= 2"));
    }
    let r = rho as i64;
    let c = |i: i64, j: i64| -> Result<f64> { crate::kernel::conductance(env, lambda, i, j) };
    let mut m = DMatrix::zeros(rho + 1, rho + 1);
    for i in 1..r {
        for j in 1..r {
            if i != j {
                m[(i as usize, j as usize)] = c(i, j)?;
            }
        }
        let mut left = 0.0;
        for k in (i - r)..=0 {
            left += c(i, k)?;
        }
        let mut right = 0.0;
        for k in r..=(i + r) {
            right += c(i, k)?;
        }
        m[(i as usize, 0)] = left;
        m[(0, i as usize)] = left;
        m[(i as usize, rho)] = right;
        m[(rho, i as usize)] = right;
    }
    let direct = c(0, r)?;
    m[(0, rho)] = direct;
    m[(rho, 0)] = direct;
    FiniteChain::from_conductances(m)
}

/// `P_k(τ'_{a} < τ'_{b})` on a finite chain.
pub fn hitting_probability(chain: &FiniteChain, k: usize, a: usize, b: usize) -> Result<f64> {
    Ok(chain.hitting_probabilities(&[a], &[b])?[k])
}

pub fn expected_hitting_time(chain: &FiniteChain, start: usize, target: &[usize]) -> Result<f64> {
    Ok(chain.expected_hitting_times(target)?[start])
}

/// Both sides of `E_a[τ_B] = (1 / C_eff(a, B)) Σ_x π(x) P_x(τ_a < τ_B)`.
#[derive(Clone, Debug, Serialize)]
pub struct HittingTimeIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_residual: f64,
}

pub fn hitting_time_identity(chain: &FiniteChain, a: usize, target: &[usize]) -> Result<HittingTimeIdentity> {
    let lhs = expected_hitting_time(chain, a, target)?;
    let h = chain.hitting_probabilities(&[a], target)?;
    let ceff = chain.effective_conductance(&[a], target)?;
    let rhs = (0..chain.size()).map(|x| chain.pi(x) * h[x]).sum::<f64>() / ceff;
    Ok(HittingTimeIdentity { lhs, rhs, relative_residual: (lhs - rhs).abs() / lhs.abs().max(rhs.abs()) })
}

/// Per-`k` comparison of `P_k(τ_0 < τ_{[ρ,∞)})` with the conductance ratio
/// `C^ρ_eff(k, (-∞,0]) / C^ρ_eff(k, (-∞,0] ∪ [ρ,∞))`.
#[derive(Clone, Debug, Serialize)]
pub struct DromedarioReport {
    pub rho: usize,
    pub lambda: f64,
    pub window: (i64, i64),
    pub ks: Vec<i64>,
    /// `P_k(τ_0 < τ_{[ρ,∞)})`, exact on the window.
    pub lhs: Vec<f64>,
    /// `P_k(τ_{(-∞,0]} < τ_{[ρ,∞)})`, which the reduced chain reproduces.
    pub half_line: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub argmin: i64,
    pub window_sensitivity: f64,
}

fn dromedario_on(env: &(impl Landscape + ?Sized), lambda: f64, rho: usize, lo: i64, hi: i64) -> Result<DromedarioReport> {
    let r = rho as i64;
    let net = Network::new(env, lambda, rho, lo, hi)?;
    let a = NodeSet::AtMost(0);
    let b = NodeSet::AtLeast(r);
    // P_k(τ_0 < τ_B): pinned 1 at 0, 0 on B, free elsewhere (including k < 0)
    let exact = net.solve_dirichlet(
        |k| {
            if k == 0 {
                Some(1.0)
            } else if k >= r {
                Some(0.0)
            } else {
                None
            }
        },
        |_| 0.0,
    )?;
    let half = net.harmonic(&b, &a)?;
    let both = NodeSet::Union(vec![a.clone(), b.clone()]);
    let mut report = DromedarioReport {
        rho,
        lambda,
        window: (lo, hi),
        ks: Vec::new(),
        lhs: Vec::new(),
        half_line: Vec::new(),
        rhs: Vec::new(),
        ratios: Vec::new(),
        min_ratio: f64::INFINITY,
        argmin: 0,
        window_sensitivity: 0.0,
    };
    for k in 1..r {
        let ks = NodeSet::single(k);
        let (num, _) = net.effective_conductance(&ks, &a)?;
        let (den, _) = net.effective_conductance(&ks, &both)?;
        let rhs = num / den;
        let lhs = exact.at(k);
        let ratio = lhs / rhs;
        report.ks.push(k);
        report.lhs.push(lhs);
        report.half_line.push(half.at(k));
        report.rhs.push(rhs);
        report.ratios.push(ratio);
        if ratio < report.min_ratio {
            report.min_ratio = ratio;
            report.argmin = k;
        }
    }
    Ok(report)
}

/// Exact check of the lower bound `P_k(τ_0 < τ_{[ρ,∞)}) >= const · ratio`
/// on the window `[-margin·ρ, (1 + margin)·ρ]`.
pub fn check_dromedario<L: Landscape + ?Sized>(env: &L, lambda: f64, rho: usize, margin: usize) -> Result<DromedarioReport> {
    if rho < 2 {
        return Err(Error::invalid("need ρ >= 2"));
    }
    let r = rho as i64;
    let m = margin.max(1) as i64;
    let mut report = dromedario_on(env, lambda, rho, -m * r, (1 + m) * r)?;
    let wide = dromedario_on(env, lambda, rho, -2 * m * r, (1 + 2 * m) * r)?;
    report.window_sensitivity = report
        .ratios
        .iter()
        .zip(&wide.ratios)
        .fold(0.0f64, |s, (a, b)| s.max((a - b).abs() / a.abs()));
    Ok(report)
}
