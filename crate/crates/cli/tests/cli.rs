use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_reflectionless"));
    c.env_remove("REFLECTIONLESS_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn help_documents_common_flags() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for flag in ["--config", "--seed", "--out", "--threads", "--overwrite", "REFLECTIONLESS_THREADS"] {
        assert!(text.contains(flag), "missing {flag}");
    }
    for sub in ["spectrum", "scatter", "wkb", "ep", "sweep", "noise", "repro"] {
        assert!(text.contains(sub), "missing {sub}");
    }
}

#[test]
fn repro_lists_figures() {
    let o = run(&["repro", "--list"]);
    assert_eq!(code(&o), 0);
    let ids = String::from_utf8(o.stdout).unwrap();
    assert!(ids.lines().any(|l| l == "fig2a"));
    assert!(ids.lines().any(|l| l == "noise-quadratic"));

    let o = run(&["repro", "fig99"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "p = 4\nbogus = 1\n");
    let o = run(&["spectrum", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let cfg = write(dir.path(), "both.toml", "L = 4\nvmax = 100\n");
    assert_eq!(code(&run(&["spectrum", "--config", &cfg])), 2);

    let o = run(&["wkb", "-p", "-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn wkb_run_writes_csv_and_sidecar_and_refuses_to_clobber() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let o = run(&["wkb", "-p", "4", "-L", "5", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("run/wkb.csv")).unwrap();
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/wkb.json")).unwrap()).unwrap();
    assert_eq!(side["config"]["p"], 4.0);
    assert!(csv.lines().count() > 100);

    let o = run(&["wkb", "-p", "4", "-L", "5", "--out", out]);
    assert_eq!(code(&o), 5);
    assert_eq!(fs::read_to_string(dir.path().join("run/wkb.csv")).unwrap(), csv);

    let o = run(&["wkb", "-p", "4", "-L", "5", "--out", out, "--overwrite"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(dir.path().join("run/wkb.csv")).unwrap(), csv);
}

#[test]
fn sidecar_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = write(
        dir.path(),
        "scan.toml",
        "p = 4\nL = 4\n[scatter]\ne_min = 1\ne_max = 3\npoints = 21\n",
    );
    let o = run(&["scatter", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sidecar = a.join("scatter.json");
    let o = bin()
        .args(["scatter", "--config", sidecar.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .env("REFLECTIONLESS_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(a.join("scatter.csv")).unwrap(), fs::read(b.join("scatter.csv")).unwrap());
}

#[test]
fn missing_real_rzero_for_envelope_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "broken.toml",
        "p = 1.5\nL = 16\n[spectrum]\ne_max = 6\n[envelope]\nenabled = true\n",
    );
    let o = run(&["spectrum", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
