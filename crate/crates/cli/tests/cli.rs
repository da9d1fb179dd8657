use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dissrabi(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dissrabi"));
    c.args(args).env_remove("DISSRABI_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const CONFIG: &str = r#"version = 1
bath = "structured"
couplings = [0.4]
betas = [5.0, 10.0]
n_therm = 100
n_sweeps = 1000
bin_len = 100
n_chains = 2
seed = 3
checkpoint_every = 250
kernel_points = 256
"#;

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn resistance_subcommand() {
    let out = dissrabi(&["resistance", "--alpha-cav", "0.2"], &[]);
    assert!(out.status.success());
    assert_eq!(text(&out.stdout).trim(), "1.2 kOhm");
    let out = dissrabi(&["resistance", "--alpha-cav", "0"], &[]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("alpha_cav"));
}

#[test]
fn sweep_halt_resume_and_override_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let straight = dir.path().join("straight");
    let out = dissrabi(&["sweep", "--config", &cfg, "--out", straight.to_str().unwrap()], &[("DISSRABI_THREADS", "1")]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("threads = 1 (DISSRABI_THREADS)"));
    let run = fs::read_to_string(straight.join("run.json")).unwrap();
    assert!(run.contains("\"threads_source\": \"DISSRABI_THREADS\""));

    let halted = dir.path().join("halted");
    let cfg_halt = write_config(dir.path(), &format!("{CONFIG}halt_after = 500\n"));
    let out = dissrabi(&["sweep", "--config", &cfg_halt, "--out", halted.to_str().unwrap(), "--threads", "2"], &[]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    let cfg = write_config(dir.path(), CONFIG);
    let out = dissrabi(&["sweep", "--config", &cfg, "--out", halted.to_str().unwrap(), "--resume"], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(fs::read(straight.join("results.csv")).unwrap(), fs::read(halted.join("results.csv")).unwrap());

    let fit_dir = dir.path().join("fit");
    let out = dissrabi(
        &["bkt-fit", straight.join("results.csv").to_str().unwrap(), "--out", fit_dir.to_str().unwrap()],
        &[],
    );
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("invalid parameters"), "{}", text(&out.stderr));
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(dissrabi(&["sweep", "--config", &cfg, "--out", a.to_str().unwrap()], &[]).status.success());
    let out = dissrabi(&["sweep", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "4"], &[]);
    assert!(out.status.success());
    assert!(text(&out.stderr).contains("seed = 4 (--seed, config had 3)"));
    assert_ne!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn malformed_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("seed = 3", "sed = 3"));
    let out = dissrabi(&["kernel-table", "--config", &cfg], &[]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("line 9") && err.contains("`sed`"), "{err}");
}

#[test]
fn kernel_table_and_relax_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{CONFIG}ed_modes = 1\nn_max = [8]\nrelax_t_max = 10.0\nrelax_points = 11\n");
    let cfg = write_config(dir.path(), &body);
    let out_dir = dir.path().join("o");
    let out = dissrabi(&["kernel-table", "--config", &cfg, "--out", out_dir.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().count(), 2);
    let out = dissrabi(&["relax", "--config", &cfg, "--out", out_dir.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(out_dir.join("relax_c0.csv").exists());
}
