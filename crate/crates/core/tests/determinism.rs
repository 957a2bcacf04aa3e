mod common;

use std::path::Path;

use common::{pifl, write_config, SMALL};

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}\n[profiler]\nvariant = \"normalized\"\n").replace("rounds = 4", "rounds = 6\nbaselines = [\"local-only\", \"global-fedavg\"]"),
    );
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = pifl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            files(&out)
        })
        .collect();
    assert!(runs[0].len() >= 8);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut seen = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(threads);
        let o = pifl(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--set", &format!("run.threads={threads}")]);
        assert_eq!(o.status.code(), Some(0));
        seen.push(files(&out));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn seed_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    pifl(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]);
    pifl(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "12"]);
    assert_ne!(std::fs::read(a.join("selections.csv")).unwrap(), std::fs::read(b.join("selections.csv")).unwrap());
}
