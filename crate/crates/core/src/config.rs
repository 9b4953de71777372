//! Experiment configuration: one serializable record per run, read from
//! TOML or assembled from command-line flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{make_periodic, EnergyLaw, GapLaw, GeneratorSpec, PairPotential, PeriodicEnvironment};
use crate::error::{Error, Result};
use crate::kernel::DEFAULT_TAIL_TOL;
use crate::mc::{EnvSource, Observable};
use crate::rng::derive_seed;
use crate::walk::DEFAULT_HITTING_BUDGET;

/// Largest bias accepted from a config.
pub const LAMBDA_MAX: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    GenEnv,
    KernelDump,
    Simulate,
    Conductance,
    Oracle,
    Einstein,
    EinsteinMc,
    RnScan,
    Clt,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::GenEnv => "gen-env",
            CommandKind::KernelDump => "kernel-dump",
            CommandKind::Simulate => "simulate",
            CommandKind::Conductance => "conductance",
            CommandKind::Oracle => "oracle",
            CommandKind::Einstein => "einstein",
            CommandKind::EinsteinMc => "einstein-mc",
            CommandKind::RnScan => "rn-scan",
            CommandKind::Clt => "clt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OracleCheck {
    Stationary,
    Velocity,
    Diffusion,
    Derivatives,
    Einstein,
    All,
}

/// Environment section of a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Preset { name: String },
    Periodic {
        gaps: Vec<f64>,
        energies: Vec<f64>,
        #[serde(default)]
        floor: Option<f64>,
        #[serde(default)]
        pair: PairPotential,
    },
    Random {
        floor: f64,
        gaps: GapLaw,
        energies: EnergyLaw,
        #[serde(default)]
        pair: PairPotential,
        #[serde(default)]
        seed: Option<u64>,
        window: usize,
    },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Preset { name: "period1-lattice".into() }
    }
}

pub const PRESETS: [&str; 5] = ["period1-lattice", "period2", "period4", "iid-exp", "iid-mott"];

impl EnvConfig {
    pub fn preset(name: &str) -> Self {
        EnvConfig::Preset { name: name.into() }
    }

    fn expand(&self) -> Result<EnvConfig> {
        let EnvConfig::Preset { name } = self else {
            return Ok(self.clone());
        };
        let mott = PairPotential::Mott { beta: 1.0 };
        Ok(match name.as_str() {
            "period1-lattice" => {
                EnvConfig::Periodic { gaps: vec![1.0], energies: vec![0.0], floor: Some(1.0), pair: PairPotential::Zero }
            }
            "period2" => EnvConfig::Periodic { gaps: vec![1.0, 2.0], energies: vec![0.2, -0.3], floor: Some(1.0), pair: mott },
            "period4" => EnvConfig::Periodic {
                gaps: vec![1.0, 1.8, 1.2, 2.5],
                energies: vec![0.3, -0.1, 0.4, -0.4],
                floor: Some(1.0),
                pair: mott,
            },
            "iid-exp" => EnvConfig::Random {
                floor: 1.0,
                gaps: GapLaw::ShiftedExponential { shift: 1.0, rate: 3.0 },
                energies: EnergyLaw::Constant { value: 0.0 },
                pair: PairPotential::Zero,
                seed: None,
                window: 256,
            },
            "iid-mott" => EnvConfig::Random {
                floor: 1.0,
                gaps: GapLaw::ShiftedExponential { shift: 1.0, rate: 1.0 },
                energies: EnergyLaw::Uniform { amplitude: 0.5 },
                pair: mott,
                seed: None,
                window: 256,
            },
            other => {
                return Err(Error::Config(format!("unknown environment preset `{other}` (known: {})", PRESETS.join(", "))))
            }
        })
    }

    /// Resolves to a replica source; random environments without an explicit
    /// seed derive one from the run seed.
    pub fn source(&self, run_seed: u64) -> Result<EnvSource> {
        Ok(match self.expand()? {
            EnvConfig::Periodic { gaps, energies, floor, pair } => {
                let floor = floor.unwrap_or_else(|| gaps.iter().copied().fold(f64::INFINITY, f64::min));
                EnvSource::Periodic(make_periodic(gaps, energies, floor, pair)?)
            }
            EnvConfig::Random { floor, gaps, energies, pair, seed, window } => {
                let spec = GeneratorSpec {
                    floor,
                    gaps,
                    energies,
                    pair,
                    seed: seed.unwrap_or_else(|| derive_seed(run_seed, "environment", 0)),
                    window,
                };
                spec.validate()?;
                EnvSource::Random(spec)
            }
            EnvConfig::Preset { .. } => unreachable!(),
        })
    }

    pub fn periodic(&self) -> Result<PeriodicEnvironment> {
        match self.source(0)? {
            EnvSource::Periodic(p) => Ok(p),
            EnvSource::Random(_) => Err(Error::Config("this command needs a periodic environment".into())),
        }
    }
}

/// Fully resolved experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub environment: EnvConfig,
    pub seed: u64,
    pub lambda: f64,
    /// Bias grid for scans and fits; empty selects the command default.
    pub lambdas: Vec<f64>,
    pub tail_tol: f64,
    pub steps: u64,
    /// Time horizon of continuous-time runs.
    pub time: Option<f64>,
    pub replicas: usize,
    pub batches: usize,
    /// Site for kernel dumps.
    pub site: i64,
    pub rho: usize,
    /// Node sets `{from}` and `{to}` for effective conductances.
    pub from: i64,
    pub to: i64,
    /// Network window; `None` picks `[from - 4ρ, to + 4ρ]`.
    pub window: Option<(i64, i64)>,
    pub margin: usize,
    pub check: OracleCheck,
    /// Finite-difference step.
    pub h: f64,
    /// Norm exponent for Radon-Nikodym scans.
    pub p: f64,
    pub observable: Observable,
    pub budget: u64,
    pub record_every: u64,
    /// Root directory under which run directories are created.
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: CommandKind::Simulate,
            environment: EnvConfig::default(),
            seed: 0,
            lambda: 0.0,
            lambdas: Vec::new(),
            tail_tol: DEFAULT_TAIL_TOL,
            steps: 10_000,
            time: None,
            replicas: 32,
            batches: crate::stats::DEFAULT_BATCHES,
            site: 0,
            rho: 4,
            from: 0,
            to: 10,
            window: None,
            margin: 4,
            check: OracleCheck::All,
            h: 1e-3,
            p: 2.0,
            observable: Observable::Rate,
            budget: DEFAULT_HITTING_BUDGET,
            record_every: 0,
            output: PathBuf::from("runs"),
        }
    }
}

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

impl ExperimentConfig {
    pub fn new(command: CommandKind) -> Self {
        ExperimentConfig { command, ..Default::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Bias grid, falling back to the command default.
    pub fn grid(&self) -> Vec<f64> {
        if !self.lambdas.is_empty() {
            return self.lambdas.clone();
        }
        match self.command {
            CommandKind::EinsteinMc => crate::mc::EINSTEIN_GRID.to_vec(),
            _ => (1..=25).map(|k| 0.02 * k as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |l: f64| (0.0..=LAMBDA_MAX).contains(&l);
        if !in_range(self.lambda) {
            return Err(bad(format!("lambda must lie in [0, {LAMBDA_MAX}], got {}", self.lambda)));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !in_range(**l)) {
            return Err(bad(format!("grid value {l} outside [0, {LAMBDA_MAX}]")));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return Err(bad(format!("tail_tol must lie in (0, 1), got {}", self.tail_tol)));
        }
        if self.replicas == 0 {
            return Err(bad("replicas must be at least 1".into()));
        }
        if self.batches < 2 {
            return Err(bad("batches must be at least 2".into()));
        }
        if let Some(t) = self.time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(bad(format!("time must be positive, got {t}")));
            }
        }
        if self.rho == 0 {
            return Err(bad("rho must be at least 1".into()));
        }
        if !(self.h > 0.0 && self.h < 0.5) {
            return Err(bad(format!("h must lie in (0, 0.5), got {}", self.h)));
        }
        if !(self.p >= 1.0) {
            return Err(bad(format!("p must be at least 1, got {}", self.p)));
        }
        if let Some((lo, hi)) = self.window {
            if !(lo <= self.from.min(self.to) && self.from.max(self.to) <= hi) {
                return Err(bad("window must contain both node sets".into()));
            }
        }
        self.environment.source(self.seed)?;
        match self.command {
            CommandKind::Oracle | CommandKind::Einstein | CommandKind::RnScan => {
                self.environment.periodic()?;
            }
            CommandKind::EinsteinMc => {
                if self.grid().iter().any(|&l| !(l > 0.0 && l <= 0.2)) || self.grid().len() < 2 {
                    return Err(bad("einstein-mc needs at least two biases in (0, 0.2]".into()));
                }
            }
            CommandKind::Clt if self.replicas < 3 => {
                return Err(bad("clt needs at least three replicas".into()));
            }
            CommandKind::Conductance if self.from == self.to => {
                return Err(bad("conductance needs distinct nodes".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without the output root.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            command = "oracle"
            seed = 7
            lambda = 0.3

            [environment]
            kind = "periodic"
            gaps = [1.0, 2.0]
            energies = [0.0, 0.1]
            pair = { kind = "mott", beta = 1.0 }
            "#,
        )
        .unwrap();
        assert_eq!(c.command, CommandKind::Oracle);
        assert_eq!(c.replicas, 32);
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn schema_violations() {
        assert!(matches!(ExperimentConfig::from_toml("stepz = 3"), Err(Error::Config(_))));
        let mut c = ExperimentConfig::new(CommandKind::Simulate);
        c.lambda = 0.95;
        assert!(c.validate().is_err());
        c.lambda = 0.1;
        c.environment = EnvConfig::preset("nope");
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(CommandKind::Oracle);
        c.environment = EnvConfig::preset("iid-exp");
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_root_only() {
        let a = ExperimentConfig::new(CommandKind::Simulate);
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            EnvConfig::preset(name).source(3).unwrap();
        }
        assert_eq!(EnvConfig::preset("period4").periodic().unwrap().period(), 4);
    }
}
