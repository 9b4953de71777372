//! Command-line front end: flag parsing, run directories, artifacts and
//! manifests.
//!
//! Every run lands in `<output>/<command>-<hash>` where `hash` is the first
//! 16 hex digits of the config hash; an existing directory is never touched
//! and a numbered sibling is created instead.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{CommandKind, EnvConfig, ExperimentConfig, OracleCheck};
use crate::env::{check_assumptions, sample_environment, Environment, Landscape, PeriodicEnvironment};
use crate::error::{Error, Result};
use crate::kernel::{DerivativeTables, JumpLaw};
use crate::mc::{self, EnvSource, EstimateRow, McSettings, Observable};
use crate::network::{self, NodeSet};
use crate::oracle::{self, ReversibleChain};
use crate::rng::derive_seed;
use crate::walk::{write_path_log, write_summary_csv, Medium, RunOptions, SummaryRow, Walker};

#[derive(Debug, Parser)]
#[command(name = "mott-vrh", version, about = "Biased Mott variable-range hopping in one dimension")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample or unroll an environment and export it as CSV.
    GenEnv {
        #[command(flatten)]
        common: Common,
        /// Unroll a periodic environment over [-radius, radius].
        #[arg(long)]
        radius: Option<i64>,
    },
    /// Dump the jump law and its λ-derivatives at one site.
    KernelDump {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        site: Option<i64>,
    },
    /// Run replicas of the discrete (or, with --time, continuous) walk.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        budget: Budget,
        #[arg(long)]
        time: Option<f64>,
        /// Log every k-th step of replica 0 to path.bin.
        #[arg(long)]
        record_every: Option<u64>,
    },
    /// Effective ρ-conductance between two sites, reduced chain and hitting bounds.
    Conductance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        from: Option<i64>,
        #[arg(long, allow_hyphen_values = true)]
        to: Option<i64>,
        #[arg(long, allow_hyphen_values = true, requires = "window_hi")]
        window_lo: Option<i64>,
        #[arg(long, allow_hyphen_values = true, requires = "window_lo")]
        window_hi: Option<i64>,
        #[arg(long)]
        margin: Option<usize>,
        /// Hitting-time samples from `from` to `to` (0 skips sampling).
        #[arg(long)]
        replicas: Option<usize>,
        /// Step budget per hitting-time sample.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Exact finite-chain computations on a periodic environment.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        check: Option<OracleCheck>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, value_enum)]
        observable: Option<ObservableArg>,
    },
    /// Central-difference mobility against the exact diffusion coefficients.
    Einstein {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Monte Carlo mobility fit at small biases against the estimated diffusivity.
    EinsteinMc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        budget: Budget,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Radon-Nikodym density and continuity scan over a bias grid.
    RnScan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_enum)]
        observable: Option<ObservableArg>,
    },
    /// Monte Carlo CLT variances and covariance at zero bias.
    Clt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        budget: Budget,
        #[arg(long, value_enum)]
        observable: Option<ObservableArg>,
    },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Output root; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment preset (period1-lattice, period2, period4, iid-exp, iid-mott).
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tail_tol: Option<f64>,
    /// Root directory for run directories.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap on worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct Budget {
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ObservableArg {
    One,
    Rate,
    InverseRate,
    Drift,
}

impl From<ObservableArg> for Observable {
    fn from(o: ObservableArg) -> Self {
        match o {
            ObservableArg::One => Observable::One,
            ObservableArg::Rate => Observable::Rate,
            ObservableArg::InverseRate => Observable::InverseRate,
            ObservableArg::Drift => Observable::Drift,
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Common {
    fn base(&self, kind: CommandKind) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let c = ExperimentConfig::from_toml(&fs::read_to_string(p)?)?;
                if c.command != kind {
                    return Err(Error::Config(format!(
                        "config is for `{}`, not `{}`",
                        c.command.name(),
                        kind.name()
                    )));
                }
                c
            }
            None => ExperimentConfig::new(kind),
        };
        if let Some(e) = &self.env {
            c.environment = EnvConfig::preset(e);
        }
        set(&mut c.seed, self.seed);
        set(&mut c.lambda, self.lambda);
        set(&mut c.tail_tol, self.tail_tol);
        set(&mut c.output, self.out.clone());
        Ok(c)
    }
}

impl Budget {
    fn apply(&self, c: &mut ExperimentConfig) {
        set(&mut c.steps, self.steps);
        set(&mut c.replicas, self.replicas);
        set(&mut c.batches, self.batches);
    }
}

impl Command {
    /// Resolved config and thread cap.
    pub fn resolve(&self) -> Result<(ExperimentConfig, usize)> {
        let obs = |c: &mut ExperimentConfig, o: &Option<ObservableArg>| {
            if let Some(o) = o {
                c.observable = (*o).into();
            }
        };
        Ok(match self {
            Command::GenEnv { common, radius } => {
                let mut c = common.base(CommandKind::GenEnv)?;
                if let Some(r) = radius {
                    c.window = Some((-r, *r));
                    c.from = 0;
                    c.to = 0;
                }
                (c, common.threads)
            }
            Command::KernelDump { common, site } => {
                let mut c = common.base(CommandKind::KernelDump)?;
                set(&mut c.site, *site);
                (c, common.threads)
            }
            Command::Simulate { common, budget, time, record_every } => {
                let mut c = common.base(CommandKind::Simulate)?;
                budget.apply(&mut c);
                if time.is_some() {
                    c.time = *time;
                }
                set(&mut c.record_every, *record_every);
                (c, common.threads)
            }
            Command::Conductance { common, rho, from, to, window_lo, window_hi, margin, replicas, budget } => {
                let mut c = common.base(CommandKind::Conductance)?;
                set(&mut c.replicas, *replicas);
                set(&mut c.budget, *budget);
                set(&mut c.rho, *rho);
                set(&mut c.from, *from);
                set(&mut c.to, *to);
                set(&mut c.margin, *margin);
                if let (Some(lo), Some(hi)) = (window_lo, window_hi) {
                    c.window = Some((*lo, *hi));
                }
                (c, common.threads)
            }
            Command::Oracle { common, check, h, observable } => {
                let mut c = common.base(CommandKind::Oracle)?;
                set(&mut c.check, *check);
                set(&mut c.h, *h);
                obs(&mut c, observable);
                (c, common.threads)
            }
            Command::Einstein { common, h } => {
                let mut c = common.base(CommandKind::Einstein)?;
                set(&mut c.h, *h);
                (c, common.threads)
            }
            Command::EinsteinMc { common, budget, lambdas } => {
                let mut c = common.base(CommandKind::EinsteinMc)?;
                budget.apply(&mut c);
                set(&mut c.lambdas, lambdas.clone());
                (c, common.threads)
            }
            Command::RnScan { common, lambdas, p, observable } => {
                let mut c = common.base(CommandKind::RnScan)?;
                set(&mut c.lambdas, lambdas.clone());
                set(&mut c.p, *p);
                obs(&mut c, observable);
                (c, common.threads)
            }
            Command::Clt { common, budget, observable } => {
                let mut c = common.base(CommandKind::Clt)?;
                budget.apply(&mut c);
                obs(&mut c, observable);
                (c, common.threads)
            }
            Command::Rerun { manifest, out, threads } => {
                let m: Value = serde_json::from_str(&fs::read_to_string(manifest)?)?;
                let mut c: ExperimentConfig = serde_json::from_value(m["config"].clone())
                    .map_err(|e| Error::Config(format!("manifest config: {e}")))?;
                set(&mut c.output, out.clone());
                (c, threads.unwrap_or(0))
            }
        })
    }
}

/// Result of one run.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub exit_code: i32,
    pub run_dir: Option<PathBuf>,
    pub summary: Value,
}

/// Files written by a run, with their SHA-256 digests.
pub struct RunDir {
    path: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl RunDir {
    fn create(root: &Path, stem: &str) -> Result<Self> {
        fs::create_dir_all(root)?;
        let mut k = 0;
        loop {
            let name = if k == 0 { stem.to_string() } else { format!("{stem}-{k}") };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path, artifacts: BTreeMap::new() }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        fs::write(self.path.join(name), data)?;
        self.artifacts.insert(name.to_string(), hex::encode(Sha256::digest(data)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut data = serde_json::to_vec_pretty(value)?;
        data.push(b'\n');
        self.bytes(name, &data)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let data = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.bytes(name, &data)
    }

    fn with<F: FnOnce(&mut Vec<u8>) -> Result<()>>(&mut self, name: &str, write: F) -> Result<()> {
        let mut data = Vec::new();
        write(&mut data)?;
        self.bytes(name, &data)
    }
}

/// Validates, runs and records `cfg` with at most `threads` workers.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Outcome {
    if let Err(e) = cfg.validate() {
        return Outcome { exit_code: e.exit_code(), run_dir: None, summary: error_json(&e) };
    }
    let hash = cfg.hash();
    let mut dir = match RunDir::create(&cfg.output, &format!("{}-{}", cfg.command.name(), &hash[..16])) {
        Ok(d) => d,
        Err(e) => return Outcome { exit_code: e.exit_code(), run_dir: None, summary: error_json(&e) },
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| dispatch(cfg, &mut dir)),
        Err(e) => Err(Error::Config(format!("thread pool: {e}"))),
    };
    let (exit_code, summary) = match result {
        Ok(s) => (0, s),
        Err(e) => {
            let diag = error_json(&e);
            let _ = dir.json("error.json", &diag);
            (e.exit_code(), diag)
        }
    };
    let manifest = json!({
        "command": cfg.command.name(),
        "config": cfg,
        "config_hash": hash,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "exit_code": exit_code,
        "artifacts": dir.artifacts,
    });
    let written = serde_json::to_vec_pretty(&manifest)
        .map_err(Error::from)
        .and_then(|b| fs::write(dir.path.join("manifest.json"), b).map_err(Error::from));
    if let Err(e) = written {
        return Outcome { exit_code: e.exit_code(), run_dir: Some(dir.path), summary: error_json(&e) };
    }
    Outcome { exit_code, run_dir: Some(dir.path), summary }
}

fn error_json(e: &Error) -> Value {
    json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() })
}

/// Parses `args`, runs, prints a one-line JSON summary and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command.resolve() {
        Ok((cfg, threads)) => run(&cfg, threads),
        Err(e) => Outcome { exit_code: e.exit_code(), run_dir: None, summary: error_json(&e) },
    };
    let line = json!({ "exit_code": outcome.exit_code, "run_dir": outcome.run_dir, "summary": outcome.summary });
    if outcome.exit_code == 0 {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    outcome.exit_code
}

fn dispatch(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Value> {
    let src = cfg.environment.source(cfg.seed)?;
    match cfg.command {
        CommandKind::GenEnv => gen_env(cfg, &src, out),
        CommandKind::KernelDump => kernel_dump(cfg, &src, out),
        CommandKind::Simulate => simulate(cfg, &src, out),
        CommandKind::Conductance => match &src {
            EnvSource::Periodic(p) => conductance(cfg, p, Medium::Periodic(p.clone()), out),
            EnvSource::Random(spec) => {
                let (lo, hi) = network_window(cfg);
                let mut env = sample_environment(spec)?;
                env.grow_to(lo - cfg.rho as i64)?;
                env.grow_to(hi + cfg.rho as i64)?;
                conductance(cfg, &env, Medium::Windowed(env.clone()), out)
            }
        },
        CommandKind::Oracle => oracle_cmd(cfg, &cfg.environment.periodic()?, out),
        CommandKind::Einstein => einstein(cfg, &cfg.environment.periodic()?, out),
        CommandKind::EinsteinMc => einstein_mc(cfg, &src, out),
        CommandKind::RnScan => rn_scan(cfg, &cfg.environment.periodic()?, out),
        CommandKind::Clt => clt(cfg, &src, out),
    }
}

fn settings(cfg: &ExperimentConfig) -> McSettings {
    McSettings { seed: cfg.seed, batches: cfg.batches, tail_tol: cfg.tail_tol, ..Default::default() }
}

fn gen_env(cfg: &ExperimentConfig, src: &EnvSource, out: &mut RunDir) -> Result<Value> {
    let (env, extra): (Environment, Value) = match src {
        EnvSource::Periodic(p) => {
            let r = cfg.window.map_or(32, |(lo, hi)| lo.abs().max(hi.abs()).max(1));
            (p.unroll(r as usize), json!({ "period": p.period(), "length": p.length() }))
        }
        EnvSource::Random(spec) => {
            let p = (0.5 * spec.gaps.exponential_moment_order()).min(1.0);
            let report = check_assumptions(spec, 100_000, p)?;
            out.json("assumptions.json", &report)?;
            (sample_environment(spec)?, json!({ "generator": spec }))
        }
    };
    out.with("environment.csv", |w| env.write_csv(w))?;
    let summary = json!({ "lo": env.lo(), "hi": env.hi(), "source": extra });
    out.json("environment.json", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct DerivativeRow {
    offset: i64,
    dp: f64,
    d2p: f64,
}

fn kernel_dump(cfg: &ExperimentConfig, src: &EnvSource, out: &mut RunDir) -> Result<Value> {
    let mut walker = Walker::new(src.medium(0)?, cfg.lambda, cfg.tail_tol)?;
    let law: JumpLaw = walker.law(cfg.site)?.clone();
    out.with("kernel.csv", |w| law.write_csv(w))?;
    let d = DerivativeTables::from_law(&law);
    let rows: Vec<DerivativeRow> = law.offsets().map(|k| DerivativeRow { offset: k, dp: d.dp(k), d2p: d.d2p(k) }).collect();
    out.csv("derivatives.csv", &rows)?;
    let summary = json!({
        "site": cfg.site,
        "lambda": cfg.lambda,
        "radius": law.radius,
        "total_rate": law.total_rate,
        "drift": law.drift(),
        "second_moment": law.second_moment(),
        "tail_mass": law.tail_mass,
    });
    out.json("kernel.json", &summary)?;
    Ok(summary)
}

fn simulate(cfg: &ExperimentConfig, src: &EnvSource, out: &mut RunDir) -> Result<Value> {
    use rayon::prelude::*;
    let runs: Vec<(SummaryRow, Vec<crate::walk::PathPoint>)> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut w = Walker::new(src.medium(r)?, cfg.lambda, cfg.tail_tol)?;
            let opts = RunOptions { record_every: if r == 0 { cfg.record_every } else { 0 }, track_occupation: false };
            let seed = derive_seed(cfg.seed, "replica", r);
            let t = match cfg.time {
                Some(t_max) => w.run_continuous(t_max, seed, &opts)?,
                None => w.run_discrete(cfg.steps, seed, &opts)?,
            };
            Ok((SummaryRow { replica: r, n: t.steps, displacement: t.displacement, time: t.time }, t.path))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SummaryRow> = runs.iter().map(|r| r.0.clone()).collect();
    out.with("summary.csv", |w| write_summary_csv(&rows, w))?;
    if cfg.record_every > 0 {
        out.with("path.bin", |w| write_path_log(&runs[0].1, w))?;
    }
    let horizon = rows[0].time;
    let mean = rows.iter().map(|r| r.displacement).sum::<f64>() / rows.len() as f64;
    let mut summary = json!({
        "replicas": cfg.replicas,
        "steps": cfg.steps,
        "time": cfg.time,
        "mean_displacement": mean,
    });
    if horizon > 0.0 && rows.len() >= 2 {
        let v: Vec<f64> = rows.iter().map(|r| r.displacement / horizon).collect();
        let (est, se, b) = crate::stats::batch_means(&v, cfg.batches)?;
        let ci = crate::stats::EstimateCI {
            estimate: est,
            std_error: se,
            batches: b,
            level: crate::stats::DEFAULT_LEVEL,
            replicas: rows.len(),
            seed: cfg.seed,
            n: horizon,
        };
        let name = if cfg.time.is_some() { "velocity_continuous" } else { "velocity_discrete" };
        out.csv("estimates.csv", &[EstimateRow::new(name, cfg.lambda, &ci)])?;
        summary["velocity"] = json!(ci);
    }
    out.json("simulate.json", &summary)?;
    Ok(summary)
}

fn network_window(cfg: &ExperimentConfig) -> (i64, i64) {
    cfg.window.unwrap_or_else(|| {
        let pad = 4 * cfg.rho as i64;
        (cfg.from.min(cfg.to) - pad, cfg.from.max(cfg.to) + pad)
    })
}

#[derive(Serialize)]
struct DromedarioRow {
    k: i64,
    lhs: f64,
    half_line: f64,
    rhs: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct HittingRow {
    replica: u64,
    steps: u64,
    landing_index: i64,
    overshoot: i64,
}

fn conductance<L: Landscape + ?Sized>(cfg: &ExperimentConfig, env: &L, medium: Medium, out: &mut RunDir) -> Result<Value> {
    let window = network_window(cfg);
    let (a, b) = (NodeSet::single(cfg.from), NodeSet::single(cfg.to));
    let c = network::effective_conductance(env, cfg.lambda, cfg.rho, &a, &b, window)?;
    let c1 = network::effective_conductance(env, cfg.lambda, 1, &a, &b, window)?;
    let mut summary = json!({
        "rho": cfg.rho,
        "lambda": cfg.lambda,
        "window": window,
        "effective_conductance": c,
        "nearest_neighbour_conductance": c1.value,
        "monotone_in_rho": c1.value <= c.value * (1.0 + 1e-10),
    });
    let reduced = network::reduce_chain(env, cfg.lambda, cfg.rho)?;
    out.with("reduced_chain.csv", |w| reduced.write_edges_csv(w))?;
    if cfg.rho >= 2 {
        let d = network::check_dromedario(env, cfg.lambda, cfg.rho, cfg.margin)?;
        let rows: Vec<DromedarioRow> = (0..d.ks.len())
            .map(|j| DromedarioRow { k: d.ks[j], lhs: d.lhs[j], half_line: d.half_line[j], rhs: d.rhs[j], ratio: d.ratios[j] })
            .collect();
        out.csv("dromedario.csv", &rows)?;
        summary["dromedario"] =
            json!({ "min_ratio": d.min_ratio, "argmin": d.argmin, "window_sensitivity": d.window_sensitivity });
    }
    if cfg.replicas > 0 && cfg.to > cfg.from {
        use rayon::prelude::*;
        let rho = cfg.rho;
        let rows: Vec<HittingRow> = (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|r| {
                let mut w = Walker::new(medium.clone(), cfg.lambda, cfg.tail_tol)?;
                let seed = derive_seed(cfg.seed, "hitting", r);
                let s = w.sample_hitting_time(Some(rho), cfg.from, cfg.to, seed, cfg.budget)?;
                Ok(HittingRow { replica: r, steps: s.steps, landing_index: s.landing_index, overshoot: s.overshoot })
            })
            .collect::<Result<_>>()?;
        out.csv("hitting.csv", &rows)?;
        let n = rows.len() as f64;
        summary["hitting"] = json!({
            "samples": rows.len(),
            "mean_steps": rows.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            "landing_fraction": rows.iter().filter(|r| r.overshoot == 0).count() as f64 / n,
            "exact_landing_probability": network::landing_probability(env, cfg.lambda, rho, cfg.from, cfg.to, window.0)?,
            "exact_mean_steps_reflected": network::expected_crossing_time(env, cfg.lambda, rho, cfg.from, cfg.to, window.0)?,
        });
    }
    out.json("conductance.json", &summary)?;
    Ok(summary)
}

/// Values of a registered observable on the states of a periodic chain.
fn state_values(obs: &Observable, penv: &PeriodicEnvironment, chain: &oracle::ChainMatrices) -> Result<Vec<f64>> {
    let n = penv.period();
    Ok(match obs {
        Observable::One => vec![1.0; n],
        Observable::Rate => chain.pi.clone(),
        Observable::InverseRate => chain.pi.iter().map(|p| 1.0 / p).collect(),
        Observable::Drift => chain.drift.clone(),
        Observable::GapBin { lo, hi } => penv.gaps().iter().map(|z| f64::from(u8::from(lo <= z && z < hi))).collect(),
        Observable::State { values } => {
            if values.len() != n {
                return Err(Error::Config(format!("state observable has {} values, period is {n}", values.len())));
            }
            values.clone()
        }
    })
}

#[derive(Serialize)]
struct StateRow {
    state: usize,
    q_lambda: f64,
    q0: f64,
    pi: f64,
    drift: f64,
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    eigenvalue: f64,
    weight: f64,
}

fn oracle_cmd(cfg: &ExperimentConfig, penv: &PeriodicEnvironment, out: &mut RunDir) -> Result<Value> {
    let wants = |c: OracleCheck| cfg.check == c || cfg.check == OracleCheck::All;
    let rev = ReversibleChain::new(penv, cfg.tail_tol)?;
    let mut summary = json!({ "period": penv.period(), "lambda": cfg.lambda, "radius": rev.chain.radius });
    if wants(OracleCheck::Stationary) {
        let chain = oracle::build_chain(penv, cfg.lambda, cfg.tail_tol)?;
        let q = oracle::stationary(&chain)?;
        let q0 = oracle::stationary(&rev.chain)?;
        let prop = (0..penv.period()).fold(0.0f64, |m, i| m.max((q0[i] - rev.q0[i]).abs() / rev.q0[i]));
        let rows: Vec<StateRow> = (0..penv.period())
            .map(|i| StateRow { state: i, q_lambda: q[i], q0: rev.q0[i], pi: chain.pi[i], drift: chain.drift[i] })
            .collect();
        out.csv("stationary.csv", &rows)?;
        summary["stationary"] = json!({
            "residual": oracle::stationarity_residual(&chain, &q),
            "row_sum_error": chain.row_sum_error(),
            "balance_residual_unbiased": rev.chain.balance_residual(&rev.q0),
            "q0_proportional_to_pi": prop,
        });
    }
    if wants(OracleCheck::Velocity) {
        summary["velocity"] = json!(oracle::exact_velocities(penv, cfg.lambda, cfg.tail_tol)?);
    }
    if wants(OracleCheck::Diffusion) {
        let (dy, dyy) = rev.diffusion_spectral()?;
        summary["diffusion"] = json!({
            "d_y": dy,
            "d_yy": dyy,
            "d_y_variational": rev.diffusion_variational()?,
            "drift_h_minus1": rev.drift_in_h_minus1()?,
        });
    }
    if wants(OracleCheck::Derivatives) {
        let f = rev.center(&state_values(&cfg.observable, penv, &rev.chain)?);
        let r = rev.derivative_two_ways(&f)?;
        let rows: Vec<SpectrumRow> = r
            .eigenvalues
            .iter()
            .zip(&r.spectral_weights_f)
            .enumerate()
            .map(|(index, (e, w))| SpectrumRow { index, eigenvalue: *e, weight: *w })
            .collect();
        out.csv("spectrum.csv", &rows)?;
        summary["derivatives"] = json!(r);
    }
    if wants(OracleCheck::Einstein) {
        summary["einstein"] = json!(oracle::einstein_check(penv, cfg.h, cfg.tail_tol)?);
    }
    out.json("oracle.json", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct EinsteinRow {
    h: f64,
    fd_discrete: f64,
    fd_continuous: f64,
    gap_discrete: f64,
    gap_continuous: f64,
}

fn einstein(cfg: &ExperimentConfig, penv: &PeriodicEnvironment, out: &mut RunDir) -> Result<Value> {
    let mut rows = Vec::new();
    let mut first = None;
    for j in 0..3 {
        let h = cfg.h / f64::from(1 << j);
        let r = oracle::einstein_check(penv, h, cfg.tail_tol)?;
        rows.push(EinsteinRow {
            h,
            fd_discrete: r.fd_discrete,
            fd_continuous: r.fd_continuous,
            gap_discrete: r.gap_discrete,
            gap_continuous: r.gap_continuous,
        });
        first.get_or_insert(r);
    }
    out.csv("einstein.csv", &rows)?;
    let summary = json!(first.unwrap());
    out.json("einstein.json", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct MobilityCsv {
    lambda: f64,
    velocity: f64,
    stderr: f64,
    ratio: f64,
    ratio_se: f64,
}

fn einstein_mc(cfg: &ExperimentConfig, src: &EnvSource, out: &mut RunDir) -> Result<Value> {
    let r = mc::einstein_mc(src, &cfg.grid(), cfg.steps, cfg.replicas, &settings(cfg))?;
    let rows: Vec<MobilityCsv> = r
        .rows
        .iter()
        .map(|m| MobilityCsv {
            lambda: m.lambda,
            velocity: m.velocity.estimate,
            stderr: m.velocity.std_error,
            ratio: m.ratio,
            ratio_se: m.ratio_se,
        })
        .collect();
    out.csv("mobility.csv", &rows)?;
    let summary = json!(r);
    out.json("einstein_mc.json", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct ContinuityRow {
    lambda: f64,
    expectation: f64,
}

fn rn_scan(cfg: &ExperimentConfig, penv: &PeriodicEnvironment, out: &mut RunDir) -> Result<Value> {
    let grid = cfg.grid();
    let report = oracle::rn_diagnostics(penv, &grid, cfg.p, cfg.tail_tol)?;
    out.csv("rn_scan.csv", &report.rows)?;
    let rev = ReversibleChain::new(penv, cfg.tail_tol)?;
    let f = rev.center(&state_values(&cfg.observable, penv, &rev.chain)?);
    let mut scan_grid = vec![0.0, cfg.h];
    scan_grid.extend(grid.iter().copied().filter(|&l| l > cfg.h));
    let scan = oracle::continuity_scan(penv, &f, &scan_grid, cfg.tail_tol)?;
    let rows: Vec<ContinuityRow> = scan.iter().map(|&(lambda, expectation)| ContinuityRow { lambda, expectation }).collect();
    out.csv("continuity.csv", &rows)?;
    let slope = (scan[1].1 - scan[0].1) / cfg.h;
    let sole = rev.derivative_two_ways(&f)?.sole;
    let summary = json!({
        "p": report.p,
        "sup_lp_norm": report.sup_lp_norm,
        "sup_meta_ratio": report.sup_meta_ratio,
        "slope_at_zero": slope,
        "sole": sole,
        "slope_relative_gap": if sole != 0.0 { ((slope - sole) / sole).abs() } else { slope.abs() },
    });
    out.json("rn_scan.json", &summary)?;
    Ok(summary)
}

fn clt(cfg: &ExperimentConfig, src: &EnvSource, out: &mut RunDir) -> Result<Value> {
    // on periodic environments the observable is centered exactly under ℚ₀
    let (obs, exact) = match src {
        EnvSource::Periodic(p) => {
            let rev = ReversibleChain::new(p, cfg.tail_tol)?;
            let f = rev.center(&state_values(&cfg.observable, p, &rev.chain)?);
            let r = rev.derivative_two_ways(&f)?;
            let exact = json!({ "var_f": r.var_f, "var_phi": r.var_phi, "cov": r.cov, "sole": r.sole });
            (Observable::State { values: f }, Some(exact))
        }
        EnvSource::Random(_) => (cfg.observable.clone(), None),
    };
    let c = mc::estimate_clt(src, &obs, cfg.steps, cfg.replicas, &settings(cfg))?;
    let rows =
        [EstimateRow::new("var_f", 0.0, &c.var_f), EstimateRow::new("var_phi", 0.0, &c.var_phi), EstimateRow::new("cov", 0.0, &c.cov)];
    out.csv("clt.csv", &rows)?;
    let summary = json!({ "estimate": c, "exact": exact });
    out.json("clt.json", &summary)?;
    Ok(summary)
}
