//! Acceptance suite: runs `verify` on the shipped default config twice and
//! prints one line per criterion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use roughcontrol::experiment::{load_config, run, Subcommand};

fn snapshot(dir: &Path, files: &[String]) -> BTreeMap<String, Vec<u8>> {
    files.iter().map(|f| (f.clone(), fs::read(dir.join(f)).expect("output file exists"))).collect()
}

#[test]
fn acceptance() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../default.toml");
    let cfg = load_config(&config).expect("default config parses");

    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let a = run(Subcommand::Verify, &cfg, first.path()).expect("verify runs");
    let b = run(Subcommand::Verify, &cfg, second.path()).expect("verify reruns");
    assert_eq!(a.files, b.files);
    let identical = snapshot(first.path(), &a.files) == snapshot(second.path(), &b.files);

    let mut failed = Vec::new();
    for line in &a.lines {
        let line = if line.contains(" 12 ") {
            let ok = identical && a.success && line.starts_with("PASS");
            let rest = line.split_once(": ").map(|(_, r)| r).unwrap_or("");
            format!(
                "{} 12 end-to-end determinism: {rest} verify_rerun_identical={identical} exit_ok={}",
                if ok { "PASS" } else { "FAIL" },
                a.success
            )
        } else {
            line.clone()
        };
        println!("{line}");
        if line.starts_with("FAIL") {
            failed.push(line);
        }
    }
    assert_eq!(a.lines.len(), 12, "one line per criterion");
    assert!(failed.is_empty(), "failing criteria: {failed:#?}");
}
