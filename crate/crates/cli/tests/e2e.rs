use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn roughctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughctl")).args(args).output().expect("binary runs")
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../default.toml")
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn verify_default_config_passes_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = default_config();
    let args = ["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];

    let first = roughctl(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stdout));
    let before = snapshot(&out);
    let second = roughctl(&args);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(before, snapshot(&out));

    let stdout = String::from_utf8_lossy(&first.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 12);
    let table = String::from_utf8_lossy(&before["checks.csv"]).into_owned();
    assert_eq!(table.lines().count(), 13);
    assert!(table.lines().skip(1).all(|l| l.contains(",pass,")));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["tool"], "roughctl");
    assert_eq!(manifest["subcommand"], "verify");
}

#[test]
fn integrating_one_gives_the_increment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seed = 4\n[driver]\nkind = \"fbm\"\nhurst = 0.7\nn_steps = 512\n[integrate]\nintegrand = \"one\"\n",
    );
    let out = tmp.path().join("out");
    let o = roughctl(&["integrate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let s = json(&out.join("summary.json"));
    let inc = s["increment"].as_f64().unwrap();
    assert!((s["riemann_left"].as_f64().unwrap() - inc).abs() < 1e-12);
    for f in s["fractional"].as_array().unwrap() {
        let v = f["value"].as_f64().unwrap();
        assert!((v - inc).abs() <= 1e-2 * inc.abs().max(1e-2), "{v} vs {inc}");
    }
}

#[test]
fn linear_solve_matches_exponential() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[driver]\nkind = \"fbm\"\nhurst = 0.7\nn_steps = 1024\n[problem]\nname = \"linear\"\n\
         [solve.control]\nshape = \"constant\"\noffset = 0.0\n",
    );
    let out = tmp.path().join("out");
    let o = roughctl(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("summary.json"));
    assert!(s["closed_form_rel_error"].as_f64().unwrap() < 1e-6, "{s}");
    assert_eq!(json(&out.join("manifest.json"))["config"]["seed"], 9);
}

#[test]
fn bad_config_exits_two_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[driver]\nkind = \"fbm\"\nhurst = 0.7\nn_steps = 4\n");
    let o = roughctl(&["gen", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config.toml:4:"));
}

#[test]
fn runtime_failure_exits_one_with_error_file() {
    let tmp = tempfile::tempdir().unwrap();
    // tracking has no relaxed atoms, so chattering has nothing to work on
    let cfg = write_config(
        tmp.path(),
        "[driver]\nkind = \"fbm\"\nhurst = 0.7\nn_steps = 64\n[problem]\nname = \"tracking\"\n\
         [solve.control]\nshape = \"constant\"\n",
    );
    let out = tmp.path().join("out");
    let o = roughctl(&["chatter", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&out.join("error.json"))["subcommand"], "chatter");
}
