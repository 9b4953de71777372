use std::fs;
use std::path::{Path, PathBuf};

use mott_vrh::cli::{main_with, run};
use mott_vrh::config::{CommandKind, EnvConfig, ExperimentConfig};
use serde_json::Value;

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn header(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap().lines().next().unwrap().to_string()
}

fn run_ok(cfg: &ExperimentConfig) -> PathBuf {
    let o = run(cfg, 2);
    assert_eq!(o.exit_code, 0, "{}", o.summary);
    o.run_dir.unwrap()
}

fn config(kind: CommandKind, env: &str, root: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind);
    c.environment = EnvConfig::preset(env);
    c.output = root.to_path_buf();
    c.steps = 2000;
    c.replicas = 8;
    c
}

#[test]
fn golden_csv_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cases: Vec<(ExperimentConfig, Vec<(&str, &str)>)> = vec![
        (config(CommandKind::GenEnv, "iid-mott", root), vec![("environment.csv", "k,Z_k,E_k,x_k")]),
        (
            config(CommandKind::KernelDump, "period2", root),
            vec![("kernel.csv", "offset,displacement,probability"), ("derivatives.csv", "offset,dp,d2p")],
        ),
        (
            config(CommandKind::Simulate, "period4", root),
            vec![
                ("summary.csv", "replica,n,displacement,time"),
                ("estimates.csv", "quantity,lambda,estimate,stderr,n,replicas,batches,seed"),
            ],
        ),
        (
            {
                let mut c = config(CommandKind::Conductance, "period2", root);
                c.lambda = 0.3;
                c
            },
            vec![
                ("reduced_chain.csv", "i,j,conductance"),
                ("dromedario.csv", "k,lhs,half_line,rhs,ratio"),
                ("hitting.csv", "replica,steps,landing_index,overshoot"),
            ],
        ),
        (
            config(CommandKind::Oracle, "period4", root),
            vec![("stationary.csv", "state,q_lambda,q0,pi,drift"), ("spectrum.csv", "index,eigenvalue,weight")],
        ),
        (
            config(CommandKind::Einstein, "period1-lattice", root),
            vec![("einstein.csv", "h,fd_discrete,fd_continuous,gap_discrete,gap_continuous")],
        ),
        (config(CommandKind::EinsteinMc, "period1-lattice", root), vec![("mobility.csv", "lambda,velocity,stderr,ratio,ratio_se")]),
        (
            config(CommandKind::RnScan, "period4", root),
            vec![("rn_scan.csv", "lambda,lp_norm,max_density,min_density,meta_ratio"), ("continuity.csv", "lambda,expectation")],
        ),
        (config(CommandKind::Clt, "period4", root), vec![("clt.csv", "quantity,lambda,estimate,stderr,n,replicas,batches,seed")]),
    ];
    for (cfg, files) in cases {
        let dir = run_ok(&cfg);
        let m = manifest(&dir);
        for (name, expect) in files {
            assert_eq!(header(&dir, name), expect, "{name}");
            assert!(m["artifacts"][name].is_string(), "{name} missing from manifest");
        }
    }
}

#[test]
fn identical_config_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for (kind, env) in [(CommandKind::Simulate, "iid-mott"), (CommandKind::Clt, "period4"), (CommandKind::Oracle, "period2")] {
        let cfg = config(kind, env, tmp.path());
        let a = run_ok(&cfg);
        let b = run(&cfg, 1).run_dir.unwrap();
        assert_ne!(a, b, "run directories must not be reused");
        assert_eq!(manifest(&a)["artifacts"], manifest(&b)["artifacts"]);
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
    }
}

#[test]
fn rerun_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(CommandKind::Simulate, "period2", tmp.path());
    cfg.lambda = 0.2;
    let first = run_ok(&cfg);
    let code = main_with(["mott-vrh", "rerun", first.join("manifest.json").to_str().unwrap()]);
    assert_eq!(code, 0);
    let second = tmp.path().join(format!("{}-1", first.file_name().unwrap().to_str().unwrap()));
    assert_eq!(manifest(&first)["artifacts"], manifest(&second)["artifacts"]);
}

#[test]
fn flags_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(main_with(["mott-vrh", "simulate", "--lambda", "0", "--steps", "0", "--out", out]), 0);
    assert_eq!(main_with(["mott-vrh", "simulate", "--lambda", "0.95", "--out", out]), 2);
    assert_eq!(main_with(["mott-vrh", "simulate", "--bogus", "--out", out]), 2);
    assert_eq!(main_with(["mott-vrh", "oracle", "--env", "iid-exp", "--out", out]), 2);
    assert_eq!(main_with(["mott-vrh", "oracle", "--env", "nowhere", "--out", out]), 2);
    let code = main_with([
        "mott-vrh", "conductance", "--env", "period2", "--rho", "2", "--to", "40", "--budget", "5", "--replicas", "2", "--out", out,
    ]);
    assert_eq!(code, 4);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "command = \"oracle\"\ntail_tol = 1e-300\n[environment]\nkind = \"periodic\"\ngaps = [1e-6]\nenergies = [0.0]\n")
        .unwrap();
    assert_eq!(main_with(["mott-vrh", "oracle", "--config", bad.to_str().unwrap(), "--out", out]), 3);
    let failed = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.join("error.json").exists())
        .expect("numerical failure leaves a diagnostic");
    let diag: Value = serde_json::from_str(&fs::read_to_string(failed.join("error.json")).unwrap()).unwrap();
    assert_eq!(diag["error"], "tail_unreachable");
    assert_eq!(manifest(&failed)["exit_code"], 3);
}

#[test]
fn zero_step_simulation_has_zero_displacement() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(CommandKind::Simulate, "period1-lattice", tmp.path());
    cfg.steps = 0;
    let dir = run_ok(&cfg);
    let text = fs::read_to_string(dir.join("summary.csv")).unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(2).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn oracle_einstein_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let code = main_with(["mott-vrh", "oracle", "--env", "period1-lattice", "--check", "einstein", "--h", "1e-3", "--out", out]);
    assert_eq!(code, 0);
    let dir = fs::read_dir(tmp.path()).unwrap().next().unwrap().unwrap().path();
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.join("oracle.json")).unwrap()).unwrap();
    assert!(r["einstein"]["gap_discrete"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("run.toml");
    fs::write(
        &path,
        "command = \"simulate\"\nsteps = 100\nreplicas = 4\nseed = 3\n[environment]\nkind = \"random\"\nfloor = 1.0\nwindow = 64\ngaps = { kind = \"shifted_exponential\", shift = 1.0, rate = 2.0 }\nenergies = { kind = \"uniform\", amplitude = 0.5 }\n",
    )
    .unwrap();
    let out = tmp.path().join("runs");
    let code = main_with(["mott-vrh", "simulate", "--config", path.to_str().unwrap(), "--lambda", "0.4", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let dir = fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let m = manifest(&dir);
    assert_eq!(m["config"]["lambda"], 0.4);
    assert_eq!(m["config"]["steps"], 100);
    assert_eq!(m["seed"], 3);
    let code = main_with(["mott-vrh", "oracle", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
}
