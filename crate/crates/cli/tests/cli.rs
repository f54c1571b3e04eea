use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pcpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcpo")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const PARAMS: &str = r#"
cluster_sizes = [2, 2]
heterogeneity = 4.0
[base]
A = [[0.5]]
B = [[1.0]]
Q = [[1.0]]
R = [[1.0]]
"#;

fn spec(budget: u64) -> String {
    format!(
        r#"
seeds = [0, 1]
algorithms = ["pcpo", "local_only"]

[scenario]
source = "generated"
scenario_seed = 3
[scenario.params]
{PARAMS}

[config]
delta0 = 16.0
budget = {budget}
[config.practical]
minibatch = 50
rounds = 2
step_size = 0.01
radius = 0.1
radius_cap = 0.5
"#
    )
    .replace("[base]", "[scenario.params.base]")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn generate_then_probe() {
    let d = tempfile::tempdir().unwrap();
    let params = write(d.path(), "params.toml", PARAMS);
    let scenario = d.path().join("scenario.json");
    let o = pcpo(&["generate", "--config", &params, "--seed", "5", "--out", scenario.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("separation gap 4.0"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&scenario).unwrap()).unwrap();
    assert_eq!(json["assignment"], serde_json::json!([0, 0, 1, 1]));

    let probe = write(d.path(), "probe.toml", "points = 5\nrollouts_per_point = 10\n");
    let o = pcpo(&["probe-constants", "--scenario", scenario.to_str().unwrap(), "--config", &probe]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let constants: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["mu", "phi", "lambda", "rho", "g_inf", "delta_tilde0"] {
        assert!(constants[key].as_f64().unwrap() > 0.0, "{key}");
    }
}

#[test]
fn run_writes_reproducible_outputs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.toml", &spec(3000));
    let outs = [d.path().join("a"), d.path().join("b")];
    for out in &outs {
        let o = pcpo(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--budget", "2000"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("clustering success"));
    }
    let metrics = fs::read_to_string(outs[0].join("budget_2000/metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "algorithm,seed,agent,cluster,final_gap,clustering_correct,first_correct_epoch,rollouts_used,comm_rounds\n"
    ));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2 * 4);
    for rel in ["budget_2000/metrics.csv", "budget_2000/summary.csv", "comm.csv"] {
        assert_eq!(fs::read(outs[0].join(rel)).unwrap(), fs::read(outs[1].join(rel)).unwrap(), "{rel}");
    }

    let summary_dir = d.path().join("summary");
    let o = pcpo(&[
        "summarize",
        outs[0].join("budget_2000/metrics.csv").to_str().unwrap(),
        "--comm",
        outs[0].join("comm.csv").to_str().unwrap(),
        "--out",
        summary_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("median gap ratio against local_only"));
    assert!(summary_dir.join("summary.csv").exists() && summary_dir.join("summary.txt").exists());
}

#[test]
fn single_seed_and_algorithm_overrides() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.toml", &spec(2000));
    let out = d.path().join("o");
    let o = pcpo(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
        "--algo",
        "oracle_clustered,naive_global",
        "--mode",
        "practical",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("budget_2000/metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.contains(",9,")));
    assert!(metrics.contains("oracle_clustered") && metrics.contains("naive_global"));
    assert!(!metrics.contains("pcpo,"));
}

#[test]
fn budget_errors_exit_3() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.toml", &spec(10));
    let o = pcpo(&["run", "--config", &cfg, "--out", d.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("minimum per-agent budget 250"));
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let bad = write(d.path(), "bad.toml", &format!("{}\nunknown_key = 1\n", spec(2000)));
    assert_eq!(code(&pcpo(&["run", "--config", &bad])), 2);
    assert_eq!(code(&pcpo(&["run", "--config", "/nonexistent/spec.toml"])), 2);
    let cfg = write(d.path(), "spec.toml", &spec(2000));
    assert_eq!(code(&pcpo(&["run", "--config", &cfg, "--algo", "greedy"])), 2);
    assert_eq!(code(&pcpo(&["run", "--config", &cfg, "--mode", "theory"])), 2);
    let params = write(d.path(), "p.json", "{\"cluster_sizes\": [1], \"heterogeneity\": -1}");
    assert_eq!(code(&pcpo(&["generate", "--config", &params])), 1);
    let junk = write(d.path(), "junk.json", "not json");
    assert_eq!(code(&pcpo(&["probe-constants", "--scenario", &junk])), 2);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.toml", "mixed_dynamics.toml"] {
        let spec = pcpo_core::harness::ExperimentSpec::load(&dir.join(name)).unwrap();
        spec.validate().unwrap();
    }
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("sc.json");
    let params = dir.join("desk_params.toml");
    let o = pcpo(&["generate", "--config", params.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
