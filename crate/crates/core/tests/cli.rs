use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn robin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robin")).args(args).output().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_history_profile_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let res = robin(&["run", "--example", "5.1", "--seed", "7", "--out", &out_arg(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let history = lines(&out.join("history.csv"));
    assert_eq!(history[0], "iter,residual,beta,rel_change,rel_error");
    let rows = history.len() - 1;
    assert!((8..=30).contains(&rows), "{rows} iterations");
    let last: Vec<f64> = history[rows].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!(last[3] <= 0.05);
    assert!(last[2] <= 2e-3);

    let profile = lines(&out.join("profile.csv"));
    assert_eq!(profile[0], "y,gamma_exact,gamma_reconstructed");
    assert_eq!(profile.len(), 34);

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["stop"], "relative_change");
    assert_eq!(summary["iterations"], rows);
    assert_eq!(summary["spec"]["seed"], 7);
}

#[test]
fn parabolic_profile_has_one_row_per_boundary_node() {
    let tmp = tempfile::tempdir().unwrap();
    let res = robin(&["run", "--example", "5.3", "--nt", "16", "--out", &out_arg(tmp.path())]);
    assert!(res.status.success());
    assert_eq!(lines(&tmp.path().join("profile.csv")).len(), 34);
}

#[test]
fn exact_start_without_noise_takes_one_step() {
    let tmp = tempfile::tempdir().unwrap();
    let res = robin(&["run", "--example", "5.1", "--delta", "0", "--gamma0", "exact", "--out", &out_arg(tmp.path())]);
    assert!(res.status.success());
    assert_eq!(lines(&tmp.path().join("history.csv")).len(), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(robin(&["run", "--example", "5.9"]).status.code(), Some(2));
    assert_eq!(robin(&["run", "--nx", "many"]).status.code(), Some(2));
    assert_eq!(robin(&["sweep", "--example", "5.1"]).status.code(), Some(2));
    assert_eq!(robin(&["run", "--gamma0", "50"]).status.code(), Some(2));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "example = \"5.2\"\nnx = 8\nny = 16\nmax_iters = 3\n").unwrap();
    let out = tmp.path().join("o");
    let res = robin(&["run", "--config", cfg.to_str().unwrap(), "--max-iters", "2", "--out", &out_arg(&out)]);
    assert!(res.status.success());
    assert_eq!(lines(&out.join("profile.csv")).len(), 18);
    assert_eq!(lines(&out.join("history.csv")).len(), 3);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["spec"]["example"], "5.2");
    assert_eq!(summary["stop"], "max_iters");

    fs::write(&cfg, "mesh = 4\n").unwrap();
    assert_eq!(robin(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_job() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path());
    let res = robin(&["sweep", "--example", "5.1", "--nx", "8", "--ny", "16", "--delta", "0,0.01,0.02", "--seed", "3", "--jobs", "2", "--out", &out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = lines(&tmp.path().join("sweep.csv"));
    assert_eq!(rows[0], "delta,seed,status,iterations,stop,final_error,final_residual");
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.contains(",ok,")));
    assert!(tmp.path().join("delta_0.02_seed_3").join("history.csv").exists());

    let tmp2 = tempfile::tempdir().unwrap();
    let res = robin(&["sweep", "--example", "5.1", "--nx", "8", "--ny", "16", "--delta", "0.02", "--seed", "1,2", "--out", &out_arg(tmp2.path())]);
    assert!(res.status.success());
    let rows = lines(&tmp2.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_ne!(rows[1].split_once(',').unwrap().1, rows[2].split_once(',').unwrap().1);
}

#[test]
fn verify_filters_by_group() {
    let res = robin(&["verify", "--only", "adjoint"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS [adjoint]")).count(), 2);
    assert!(!text.contains("[fem]"));

    let res = robin(&["verify", "--only", "oracle"]);
    assert!(res.status.success());
    assert!(String::from_utf8(res.stdout).unwrap().contains("PASS [oracle]"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        assert!(robin(&["run", "--example", "5.2", "--seed", "5", "--out", &out_arg(&out)]).status.success());
    }
    for file in ["history.csv", "profile.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(file)).unwrap(),
            fs::read(tmp.path().join("b").join(file)).unwrap()
        );
    }
}
