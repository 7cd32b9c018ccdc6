use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_libor-bsde");

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments/smoke.cfg")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> PathBuf {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const ARTIFACTS: [&str; 5] = [
    "results.csv",
    "deltas.csv",
    "convergence.csv",
    "delta_convergence.csv",
    "benchmark.csv",
];

#[test]
fn smoke_price_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = smoke_config();
    let dir = run_ok(&["price", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(dir, out);
    for name in ARTIFACTS.iter().chain(&["manifest.cfg"]) {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    assert!(!dir.join("sweep.csv").exists());
    let results = read(&dir, "results.csv");
    assert!(results.starts_with("instrument_id,method,seed,expiry,tenor,npv,std_error,rel_diff_vs_mc"));
    for needle in ["eu,mc,", "eu,forward,1,", "eu,forward,2,", "eu,backward,1,", "cap,mc,", "cap,black,"] {
        assert!(results.contains(needle), "no {needle} row in\n{results}");
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let dirs: Vec<PathBuf> = ["1", "2"]
        .iter()
        .map(|t| {
            let out = tmp.path().join(format!("t{t}"));
            run_ok(&[
                "price",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                t,
            ])
        })
        .collect();
    for name in ARTIFACTS {
        assert_eq!(read(&dirs[0], name), read(&dirs[1], name), "{name} differs");
    }
}

#[test]
fn rerun_from_manifest_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let first = run_ok(&[
        "price",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("a").to_str().unwrap(),
        "--seed",
        "7",
    ]);
    let manifest = first.join("manifest.cfg");
    assert!(read(&first, "manifest.cfg").contains("seeds = [7]"));
    let second = run_ok(&[
        "price",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        tmp.path().join("b").to_str().unwrap(),
    ]);
    for name in ARTIFACTS {
        assert_eq!(read(&first, name), read(&second, name), "{name} differs");
    }
}

#[test]
fn malformed_config_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "[solver]\nn_paths = \"many\"\n").unwrap();
    let out = run(&["price", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let missing = tmp.path().join("missing.cfg");
    fs::write(
        &missing,
        "[curve]\nkind = \"libors\"\nfile = \"nowhere.csv\"\n[tenor]\ndates = [0.0, 0.5, 1.0]\n",
    )
    .unwrap();
    let out = run(&["price", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_instrument_list_writes_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.cfg");
    fs::write(
        &cfg,
        "[curve]\nkind = \"flat\"\nrate = 0.03\n[tenor]\ndates = [0.0, 0.5, 1.0]\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    let dir = run_ok(&["price", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let files: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(files, vec!["manifest.cfg".to_string()]);
}

#[test]
fn simulate_and_plotdata() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let sim = run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("sim").to_str().unwrap(),
    ]);
    let paths = read(&sim, "paths.csv");
    assert!(paths.lines().count() > 1);

    let run_dir = run_ok(&[
        "price",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    let plot = run_ok(&["plotdata", "--out", run_dir.to_str().unwrap()]);
    let text = fs::read_to_string(&plot).unwrap();
    assert!(text.starts_with("series,iteration,value"));
    assert!(text.contains("eu/forward/seed1/loss,0,"));
    assert!(text.contains("eu/backward/seed2/npv,19,"));
    assert!(text.contains("/delta_L1,"));

    let out = run(&["plotdata", "--out", tmp.path().join("nothing").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn sweep_reports_increments() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sweep.cfg");
    fs::write(
        &cfg,
        r#"
[curve]
kind = "flat"
rate = 0.04
[tenor]
dates = [0.0, 0.5, 1.0, 1.5, 2.0]
[grid]
spacing = "quarterly"
[solver]
methods = ["backward", "lsmc", "mc"]
seeds = [3]
n_paths = 64
n_iterations = 10
heldout_paths = 64
mc_paths = 1000
[[instrument]]
id = "berm"
strike = 0.04
exercise = [1, 2, 3]
end = 4
"#,
    )
    .unwrap();
    let dir = run_ok(&["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("s").to_str().unwrap()]);
    let sweep = read(&dir, "sweep.csv");
    let mut lines = sweep.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instrument_id,seed,n_exercises,npv,std_error,diff_npv,runtime_s"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][5], "");
    let npv = |r: &Vec<&str>| r[3].parse::<f64>().unwrap();
    let diff: f64 = rows[1][5].parse().unwrap();
    assert!((diff - (npv(&rows[1]) - npv(&rows[0]))).abs() < 1e-15);

    let results = read(&dir, "results.csv");
    for id in ["berm_1,backward", "berm_3,lsmc", "berm_eu1,mc", "berm_eu3,mc"] {
        assert!(results.contains(id), "no {id} in\n{results}");
    }
    assert!(read(&dir, "convergence.csv").lines().next().unwrap().ends_with("exercise_count"));
}
