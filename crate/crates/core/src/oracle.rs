//! Exact finite-chain oracles on periodic environments.
//!
//! For a period-`N` environment the environment seen from the walker is a
//! Markov chain on the `N` shifts. Offsets are folded mod `N` into the
//! transition matrix but kept unfolded in the displacement table, so
//! velocities and diffusion coefficients use true displacements. All states
//! share one truncation radius (the largest needed by any state), which
//! keeps offset-level detailed balance `ℚ₀(i)p_i(k) = ℚ₀(i+k)p_{i+k}(-k)`
//! exact.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::env::{Landscape, PeriodicEnvironment};
use crate::error::{Error, Result};
use crate::kernel::{check_lambda, jump_law_with_radius, truncation_radius};

/// Tolerance on `|ℚ₀(f)|` relative to `max |f|` for admitting `f` to `H₋₁`.
pub const MEAN_ZERO_TOL: f64 = 1e-10;

/// Transition structure of the environment chain at bias `λ`.
#[derive(Clone, Debug)]
pub struct ChainMatrices {
    pub lambda: f64,
    pub radius: usize,
    /// `p_i(k)` at `[i][k + radius]`.
    pub probs: Vec<Vec<f64>>,
    /// `x_{i+k} - x_i` at `[i][k + radius]`.
    pub displacements: Vec<Vec<f64>>,
    /// `π^λ(τ_i ω)`.
    pub pi: Vec<f64>,
    /// `φ_λ(τ_i ω)`.
    pub drift: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Folded transition matrix.
    pub p: DMatrix<f64>,
}

pub fn build_chain(penv: &PeriodicEnvironment, lambda: f64, tail_tol: f64) -> Result<ChainMatrices> {
    check_lambda(lambda)?;
    let n = penv.period();
    let mut radius = 1;
    for i in 0..n as i64 {
        radius = radius.max(truncation_radius(penv, lambda, i, tail_tol)?);
    }
    let mut chain = ChainMatrices {
        lambda,
        radius,
        probs: Vec::with_capacity(n),
        displacements: Vec::with_capacity(n),
        pi: Vec::with_capacity(n),
        drift: Vec::with_capacity(n),
        second_moment: Vec::with_capacity(n),
        p: DMatrix::zeros(n, n),
    };
    let r = radius as i64;
    for i in 0..n {
        let law = jump_law_with_radius(penv, lambda, i as i64, radius)?;
        for k in -r..=r {
            let j = (i as i64 + k).rem_euclid(n as i64) as usize;
            chain.p[(i, j)] += law.p(k);
        }
        chain.pi.push(law.total_rate);
        chain.drift.push(law.drift());
        chain.second_moment.push(law.second_moment());
        chain.probs.push(law.probs);
        chain.displacements.push(law.displacements);
    }
    Ok(chain)
}

impl ChainMatrices {
    pub fn size(&self) -> usize {
        self.pi.len()
    }

    pub fn target(&self, i: usize, k: i64) -> usize {
        (i as i64 + k).rem_euclid(self.size() as i64) as usize
    }

    pub fn offsets(&self) -> impl Iterator<Item = i64> + use<> {
        let r = self.radius as i64;
        -r..=r
    }

    pub fn prob(&self, i: usize, k: i64) -> f64 {
        self.probs[i][(k + self.radius as i64) as usize]
    }

    pub fn displacement(&self, i: usize, k: i64) -> f64 {
        self.displacements[i][(k + self.radius as i64) as usize]
    }

    /// `max_i |Σ_j P(i,j) - 1|`.
    pub fn row_sum_error(&self) -> f64 {
        self.p.row_iter().fold(0.0f64, |m, r| m.max((r.sum() - 1.0).abs()))
    }

    /// `max_{i,j} |w_i P(i,j) - w_j P(j,i)|` for weights `w`.
    pub fn balance_residual(&self, w: &DVector<f64>) -> f64 {
        let n = self.size();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                m = m.max((w[i] * self.p[(i, j)] - w[j] * self.p[(j, i)]).abs());
            }
        }
        m
    }
}

/// Invariant law `ℚ_λ` of the chain.
pub fn stationary(chain: &ChainMatrices) -> Result<DVector<f64>> {
    let n = chain.size();
    let mut a = chain.p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let q = a.lu().solve(&b).ok_or_else(|| Error::NotIrreducible("stationary system is singular".into()))?;
    if q.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NotIrreducible("stationary vector is not strictly positive".into()));
    }
    Ok(q)
}

/// `‖ℚ P - ℚ‖∞`.
pub fn stationarity_residual(chain: &ChainMatrices, q: &DVector<f64>) -> f64 {
    (chain.p.transpose() * q - q).amax()
}

/// Form on (state, offset) pairs; `values[i][k + radius]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormTable {
    pub radius: usize,
    pub values: Vec<Vec<f64>>,
}

impl FormTable {
    pub fn at(&self, i: usize, k: i64) -> f64 {
        self.values[i][(k + self.radius as i64) as usize]
    }
}

/// Self-adjoint structure of the unbiased chain: `ℚ₀`, `L₀` and the
/// mean-zero Poisson solver.
#[derive(Clone, Debug)]
pub struct ReversibleChain {
    pub chain: ChainMatrices,
    pub q0: DVector<f64>,
    /// LU of `-L₀ + 𝟙ℚ₀ᵀ`.
    poisson: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ReversibleChain {
    pub fn new(penv: &PeriodicEnvironment, tail_tol: f64) -> Result<Self> {
        let chain = build_chain(penv, 0.0, tail_tol)?;
        let total: f64 = chain.pi.iter().sum();
        let q0 = DVector::from_iterator(chain.size(), chain.pi.iter().map(|p| p / total));
        let n = chain.size();
        let mut a = DMatrix::identity(n, n) - &chain.p;
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += q0[j];
            }
        }
        Ok(ReversibleChain { chain, q0, poisson: a.lu() })
    }

    pub fn size(&self) -> usize {
        self.chain.size()
    }

    /// `ℚ₀(f)`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        f.iter().zip(self.q0.iter()).map(|(a, q)| a * q).sum()
    }

    /// `⟨f, g⟩_{ℚ₀}`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(self.q0.iter()).map(|((a, b), q)| a * b * q).sum()
    }

    /// `f - ℚ₀(f)`.
    pub fn center(&self, f: &[f64]) -> Vec<f64> {
        let m = self.mean(f);
        f.iter().map(|v| v - m).collect()
    }

    /// `L₀ g`.
    pub fn generator(&self, g: &[f64]) -> Vec<f64> {
        let gv = DVector::from_column_slice(g);
        (&self.chain.p * &gv - &gv).iter().copied().collect()
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.size() {
            return Err(Error::invalid(format!("state function has {} entries, chain has {}", f.len(), self.size())));
        }
        Ok(())
    }

    pub fn check_mean_zero(&self, f: &[f64]) -> Result<()> {
        self.check_len(f)?;
        let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean = self.mean(f);
        if mean.abs() > MEAN_ZERO_TOL * scale {
            return Err(Error::NonzeroMean { mean });
        }
        Ok(())
    }

    /// Mean-zero `g` with `-L₀ g = f`.
    pub fn poisson(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_mean_zero(f)?;
        let g = self
            .poisson
            .solve(&DVector::from_column_slice(f))
            .ok_or_else(|| Error::Singular("Poisson system".into()))?;
        Ok(g.iter().copied().collect())
    }

    /// `g_ε` with `(ε - L₀) g_ε = f`.
    pub fn resolvent(&self, f: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.check_len(f)?;
        if !(eps > 0.0) {
            return Err(Error::invalid("resolvent parameter must be positive"));
        }
        let n = self.size();
        let a = DMatrix::identity(n, n) * (1.0 + eps) - &self.chain.p;
        let g = a.lu().solve(&DVector::from_column_slice(f)).ok_or_else(|| Error::Singular("resolvent".into()))?;
        Ok(g.iter().copied().collect())
    }

    /// `∇g(i, k) = g(i + k) - g(i)`.
    pub fn gradient(&self, g: &[f64]) -> FormTable {
        let values = (0..self.size())
            .map(|i| self.chain.offsets().map(|k| g[self.chain.target(i, k)] - g[i]).collect())
            .collect();
        FormTable { radius: self.chain.radius, values }
    }

    /// `‖u‖²_{L²(M)}` with `M(i, k) = ℚ₀(i) p_i(k)`.
    pub fn form_norm2(&self, u: &FormTable) -> f64 {
        let mut s = 0.0;
        for i in 0..self.size() {
            for k in self.chain.offsets() {
                s += self.q0[i] * self.chain.prob(i, k) * u.at(i, k).powi(2);
            }
        }
        s
    }

    /// `h^f = ∇g` with `-L₀ g = f`.
    pub fn corrector_form(&self, f: &[f64]) -> Result<FormTable> {
        Ok(self.gradient(&self.poisson(f)?))
    }

    /// `‖∇g_ε - h^f‖_{L²(M)}`.
    pub fn corrector_gap(&self, f: &[f64], eps: f64) -> Result<f64> {
        let h = self.corrector_form(f)?;
        let ge = self.gradient(&self.resolvent(f, eps)?);
        let diff = FormTable {
            radius: h.radius,
            values: h
                .values
                .iter()
                .zip(&ge.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        };
        Ok(self.form_norm2(&diff).sqrt())
    }

    /// `‖f‖²₋₁ = ⟨f, (-L₀)⁻¹ f⟩`.
    pub fn h_minus1_norm2(&self, f: &[f64]) -> Result<f64> {
        let g = self.poisson(f)?;
        Ok(self.inner(f, &g))
    }

    /// Eigen-decomposition of `-L₀` in the `ℚ₀` inner product.
    pub fn spectrum(&self) -> Spectrum {
        let n = self.size();
        let s = DVector::from_iterator(n, self.q0.iter().map(|q| q.sqrt()));
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let id = if i == j { 1.0 } else { 0.0 };
                m[(i, j)] = s[i] * (id - self.chain.p[(i, j)]) / s[j];
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        let asym = (&m - m.transpose()).amax();
        let eig = SymmetricEigen::new(sym);
        Spectrum { sqrt_q0: s, eigenvalues: eig.eigenvalues, vectors: eig.eigenvectors, asymmetry: asym }
    }

    /// Drift with its roundoff-level `ℚ₀` mean removed.
    pub fn centered_drift(&self) -> Vec<f64> {
        self.center(&self.chain.drift)
    }

    /// Unbiased diffusion coefficient by minimizing
    /// `Σ_i ℚ₀(i) Σ_k p_i(k)(x_k + ∇_k g)²` over `g`.
    pub fn diffusion_variational(&self) -> Result<f64> {
        let n = self.size();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for i in 0..n {
            for k in self.chain.offsets() {
                let j = self.chain.target(i, k);
                if j == i {
                    continue;
                }
                let w = self.q0[i] * self.chain.prob(i, k);
                let d = self.chain.displacement(i, k);
                a[(i, i)] += w;
                a[(j, j)] += w;
                a[(i, j)] -= w;
                a[(j, i)] -= w;
                b[i] += w * d;
                b[j] -= w * d;
            }
        }
        // pin the free constant
        a.add_scalar_mut(1.0);
        let g = a.lu().solve(&b).ok_or_else(|| Error::Singular("variational normal equations".into()))?;
        let mut value = 0.0;
        for i in 0..n {
            for k in self.chain.offsets() {
                let j = self.chain.target(i, k);
                let v = self.chain.displacement(i, k) + g[j] - g[i];
                value += self.q0[i] * self.chain.prob(i, k) * v * v;
            }
        }
        Ok(value)
    }

    /// `(D_Y, D_𝕐)` from `ℚ₀[Σ p x²] - 2‖φ‖²₋₁` and `D_𝕐 = 𝔼[π] D_Y`.
    pub fn diffusion_spectral(&self) -> Result<(f64, f64)> {
        let m2 = self.mean(&self.chain.second_moment);
        let dy = m2 - 2.0 * self.h_minus1_norm2(&self.centered_drift())?;
        let mean_pi = self.chain.pi.iter().sum::<f64>() / self.size() as f64;
        Ok((dy, mean_pi * dy))
    }

    /// `‖φ‖₋₁` with the checks that come with it.
    pub fn drift_in_h_minus1(&self) -> Result<DriftReport> {
        let norm2 = self.h_minus1_norm2(&self.centered_drift())?;
        let n = self.size();
        // Σ_k 𝔼[x_k c_{0,k} h] + Σ_k 𝔼[x_k c_{0,k} h(τ_k ·)] for every indicator h
        let mut residual = 0.0f64;
        for s in 0..n {
            let (mut lhs, mut rhs) = (0.0, 0.0);
            let mut scale = 0.0f64;
            for i in 0..n {
                for k in self.chain.offsets() {
                    let w = self.chain.displacement(i, k) * self.chain.pi[i] * self.chain.prob(i, k) / n as f64;
                    scale = scale.max(w.abs());
                    if i == s {
                        lhs += w;
                    }
                    if self.chain.target(i, k) == s {
                        rhs += w;
                    }
                }
            }
            residual = residual.max((lhs + rhs).abs() / scale.max(f64::MIN_POSITIVE));
        }
        Ok(DriftReport { norm: norm2.sqrt(), norm2, mean: self.mean(&self.chain.drift), antisymmetry_residual: residual })
    }

    /// Derivative of `λ ↦ ℚ_λ(f)` at zero by both representations.
    pub fn derivative_two_ways(&self, f: &[f64]) -> Result<SpectralReport> {
        self.check_mean_zero(f)?;
        let phi = self.centered_drift();
        let h = self.corrector_form(f)?;
        let mut sole = 0.0;
        let mut ballo1_lhs = 0.0;
        let mut ballo2_lhs = 0.0;
        for i in 0..self.size() {
            let mut s_x = 0.0;
            let mut s_1 = 0.0;
            for k in self.chain.offsets() {
                let p = self.chain.prob(i, k);
                let x = self.chain.displacement(i, k);
                s_x += p * x * h.at(i, k);
                s_1 += p * h.at(i, k);
            }
            sole += self.q0[i] * (s_x - phi[i] * s_1);
            ballo1_lhs += self.q0[i] * phi[i] * s_1;
            ballo2_lhs -= self.q0[i] * s_x;
        }
        let f_phi: Vec<f64> = f.iter().zip(&phi).map(|(a, b)| a + b).collect();
        let nf = self.h_minus1_norm2(f)?;
        let nphi = self.h_minus1_norm2(&phi)?;
        let nsum = self.h_minus1_norm2(&f_phi)?;
        let ip = self.inner(f, &phi);
        let cov = nsum - nf - nphi - ip;
        let luna = -cov;
        let var_f = 2.0 * nf - self.inner(f, f);
        let var_phi = 2.0 * nphi - self.inner(&phi, &phi);
        let scale = nsum.abs() + nf.abs() + nphi.abs() + ip.abs();
        let spectrum = self.spectrum();
        Ok(SpectralReport {
            h_minus1_f: nf,
            h_minus1_phi: nphi,
            h_minus1_sum: nsum,
            h_minus1_f_spectral: spectrum.h_minus1_norm2(f),
            var_f,
            var_phi,
            cov,
            sole,
            luna,
            scale,
            ballo1_residual: (ballo1_lhs + ip).abs(),
            ballo2_residual: (ballo2_lhs - (nsum - nf - nphi)).abs(),
            eigenvalues: spectrum.eigenvalues.iter().copied().collect(),
            spectral_weights_f: spectrum.weights(f),
        })
    }
}

/// Orthonormal eigenbasis of `D^{1/2}(-L₀)D^{-1/2}`, `D = diag(ℚ₀)`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    sqrt_q0: DVector<f64>,
    pub eigenvalues: DVector<f64>,
    pub vectors: DMatrix<f64>,
    /// Largest asymmetry of the symmetrized operator before symmetrization.
    pub asymmetry: f64,
}

impl Spectrum {
    /// Spectral weights of `f` under `-L₀`, one per eigenvalue.
    pub fn weights(&self, f: &[f64]) -> Vec<f64> {
        let v = DVector::from_iterator(f.len(), f.iter().zip(self.sqrt_q0.iter()).map(|(a, s)| a * s));
        (self.vectors.transpose() * v).iter().map(|c| c * c).collect()
    }

    /// `∫ x⁻¹ e_f(dx)` over the nonzero spectrum.
    pub fn h_minus1_norm2(&self, f: &[f64]) -> f64 {
        let top = self.eigenvalues.amax().max(1e-300);
        self.weights(f)
            .iter()
            .zip(self.eigenvalues.iter())
            .filter(|(_, &e)| e > 1e-12 * top)
            .map(|(w, e)| w / e)
            .sum()
    }

    pub fn zero_multiplicity(&self) -> usize {
        let top = self.eigenvalues.amax().max(1e-300);
        self.eigenvalues.iter().filter(|e| e.abs() <= 1e-10 * top.max(1.0)).count()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub norm: f64,
    pub norm2: f64,
    pub mean: f64,
    pub antisymmetry_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub h_minus1_f: f64,
    pub h_minus1_phi: f64,
    pub h_minus1_sum: f64,
    pub h_minus1_f_spectral: f64,
    /// `Var N^f = 2‖f‖²₋₁ - ‖f‖²`.
    pub var_f: f64,
    pub var_phi: f64,
    pub cov: f64,
    pub sole: f64,
    pub luna: f64,
    /// Magnitude of the terms entering `luna`, for relative comparisons.
    pub scale: f64,
    pub ballo1_residual: f64,
    pub ballo2_residual: f64,
    pub eigenvalues: Vec<f64>,
    pub spectral_weights_f: Vec<f64>,
}

/// `(v_Y, v_𝕐)` at bias `λ`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Velocities {
    pub discrete: f64,
    pub continuous: f64,
    /// `ℚ_λ[1/π^λ]`.
    pub mean_inverse_rate: f64,
}

pub fn exact_velocities(penv: &PeriodicEnvironment, lambda: f64, tail_tol: f64) -> Result<Velocities> {
    let chain = build_chain(penv, lambda, tail_tol)?;
    let q = stationary(&chain)?;
    let discrete: f64 = q.iter().zip(&chain.drift).map(|(a, b)| a * b).sum();
    let mean_inverse_rate: f64 = q.iter().zip(&chain.pi).map(|(a, b)| a / b).sum();
    Ok(Velocities { discrete, continuous: discrete / mean_inverse_rate, mean_inverse_rate })
}

pub fn exact_velocity(penv: &PeriodicEnvironment, lambda: f64, tail_tol: f64) -> Result<f64> {
    Ok(exact_velocities(penv, lambda, tail_tol)?.discrete)
}

pub fn exact_velocity_ct(penv: &PeriodicEnvironment, lambda: f64, tail_tol: f64) -> Result<f64> {
    Ok(exact_velocities(penv, lambda, tail_tol)?.continuous)
}

#[derive(Clone, Debug, Serialize)]
pub struct EinsteinReport {
    pub h: f64,
    pub d_y: f64,
    pub d_yy: f64,
    pub mean_pi: f64,
    /// `(v_Y(h) - v_Y(-h)) / 2h` with `v_Y(-h)` read off the reflected environment.
    pub fd_discrete: f64,
    pub fd_continuous: f64,
    /// `(4 FD(h/2) - FD(h)) / 3`.
    pub richardson_discrete: f64,
    pub richardson_continuous: f64,
    pub gap_discrete: f64,
    pub gap_continuous: f64,
    pub relative_gap_discrete: f64,
    pub relative_gap_continuous: f64,
}

fn central_difference(penv: &PeriodicEnvironment, mirror: &PeriodicEnvironment, h: f64, tol: f64) -> Result<(f64, f64)> {
    let plus = exact_velocities(penv, h, tol)?;
    let minus = exact_velocities(mirror, h, tol)?;
    Ok(((plus.discrete + minus.discrete) / (2.0 * h), (plus.continuous + minus.continuous) / (2.0 * h)))
}

/// Finite-difference mobility against the unbiased diffusion coefficients.
pub fn einstein_check(penv: &PeriodicEnvironment, h: f64, tail_tol: f64) -> Result<EinsteinReport> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::invalid("finite-difference step must lie in (0, 1)"));
    }
    let rev = ReversibleChain::new(penv, tail_tol)?;
    let (d_y, d_yy) = rev.diffusion_spectral()?;
    let mirror = penv.reflect();
    let (fd, fdc) = central_difference(penv, &mirror, h, tail_tol)?;
    let (fd2, fdc2) = central_difference(penv, &mirror, h / 2.0, tail_tol)?;
    let mean_pi = rev.chain.pi.iter().sum::<f64>() / rev.size() as f64;
    Ok(EinsteinReport {
        h,
        d_y,
        d_yy,
        mean_pi,
        fd_discrete: fd,
        fd_continuous: fdc,
        richardson_discrete: (4.0 * fd2 - fd) / 3.0,
        richardson_continuous: (4.0 * fdc2 - fdc) / 3.0,
        gap_discrete: (fd - d_y).abs(),
        gap_continuous: (fdc - d_yy).abs(),
        relative_gap_discrete: (fd - d_y).abs() / d_y.abs(),
        relative_gap_continuous: (fdc - d_yy).abs() / d_yy.abs(),
    })
}

/// `(λ, ℚ_λ(f))` along a grid.
pub fn continuity_scan(penv: &PeriodicEnvironment, f: &[f64], grid: &[f64], tail_tol: f64) -> Result<Vec<(f64, f64)>> {
    if f.len() != penv.period() {
        return Err(Error::invalid("observable length must equal the period"));
    }
    grid.iter()
        .map(|&l| {
            let q = stationary(&build_chain(penv, l, tail_tol)?)?;
            Ok((l, q.iter().zip(f).map(|(a, b)| a * b).sum()))
        })
        .collect()
}

/// Weight `g(τ_i ω, λ)` with unit prefactor, summed in closed form over periods.
pub fn meta_weight(penv: &PeriodicEnvironment, lambda: f64, i: i64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid("meta weight needs 0 < λ < 1"));
    }
    let n = penv.period() as i64;
    let x0 = penv.position(i)?;
    let pair = penv.pair();
    let e0 = penv.energy(i)?;
    let zl = penv.gap(i - 1)?;
    let zr = penv.gap(i)?;
    let c_left = (-(1.0 + lambda) * zl + pair.eval(penv.energy(i - 1)?, e0)).exp();
    let c_right = (-(1.0 - lambda) * zr + pair.eval(e0, penv.energy(i + 1)?)).exp();
    let mut period_sum = 0.0;
    for s in 0..n {
        let x = penv.position(i + s)? - x0;
        period_sum += (-2.0 * lambda * x + (1.0 - lambda) * penv.gap(i + s)?).exp();
    }
    let ratio = -(-2.0 * lambda * penv.length()).exp_m1();
    Ok((c_left + c_right) * period_sum / ratio)
}

#[derive(Clone, Debug, Serialize)]
pub struct RnRow {
    pub lambda: f64,
    /// `‖dℚ_λ/dℚ₀‖_{L^p(ℚ₀)}`.
    pub lp_norm: f64,
    pub max_density: f64,
    pub min_density: f64,
    /// `max_i N ℚ_λ(i) / (λ g(τ_i ω, λ))`.
    pub meta_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RnReport {
    pub p: f64,
    pub rows: Vec<RnRow>,
    pub sup_lp_norm: f64,
    pub sup_meta_ratio: f64,
}

pub fn rn_diagnostics(penv: &PeriodicEnvironment, grid: &[f64], p: f64, tail_tol: f64) -> Result<RnReport> {
    if !(p >= 1.0) {
        return Err(Error::invalid("norm exponent must be at least 1"));
    }
    let rev = ReversibleChain::new(penv, tail_tol)?;
    let n = rev.size();
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let q = stationary(&build_chain(penv, lambda, tail_tol)?)?;
        let dens: Vec<f64> = (0..n).map(|i| q[i] / rev.q0[i]).collect();
        let lp = (0..n).map(|i| rev.q0[i] * dens[i].powf(p)).sum::<f64>().powf(1.0 / p);
        let mut meta = 0.0f64;
        if lambda > 0.0 {
            for i in 0..n {
                meta = meta.max(n as f64 * q[i] / (lambda * meta_weight(penv, lambda, i as i64)?));
            }
        }
        rows.push(RnRow {
            lambda,
            lp_norm: lp,
            max_density: dens.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_density: dens.iter().copied().fold(f64::INFINITY, f64::min),
            meta_ratio: meta,
        });
    }
    let sup_lp_norm = rows.iter().map(|r| r.lp_norm).fold(0.0, f64::max);
    let sup_meta_ratio = rows.iter().map(|r| r.meta_ratio).fold(0.0, f64::max);
    Ok(RnReport { p, rows, sup_lp_norm, sup_meta_ratio })
}
