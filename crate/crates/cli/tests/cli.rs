use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn uinav(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uinav"))
        .args(args)
        .env("UINAV_DATA_DIR", dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = uinav(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = uinav(dir.path(), &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = uinav(dir.path(), &["eval", "--ckpt", "x.ckpt", "--task", "search", "--episodes", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = uinav(dir.path(), &["eval", "--ckpt", "x.ckpt", "--task", "search", "--episodes", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x.ckpt"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--instances", "4", "--coords", "100"]);
    let last = out.lines().last().unwrap();
    let err: f64 = last.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-4, "{out}");
}

/// script → augment → train → eval → iterate, all through relative paths
/// resolved against the data directory.
#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["script-demos", "--task", "search", "--count", "3", "--seed", "5", "--out", "demos.jsonl", "--rare-screenshots", "2"]);
    let demos = lines(&d.join("demos.jsonl"));
    assert_eq!(demos.len(), 5);
    assert!(demos.iter().all(|r| r["schema_version"] == 1));

    ok(d, &["augment", "--in", "demos.jsonl", "--out", "aug.jsonl", "--copies", "4", "--seed", "1"]);
    let aug = lines(&d.join("aug.jsonl"));
    assert_eq!(aug.len(), 3 + 3 * 4 + 2);
    assert_eq!(aug.iter().filter(|r| r["augmented"] == true).count(), 12);

    let out = ok(d, &["train", "--algo", "bc", "--demos", "aug.jsonl", "--steps", "20", "--seed", "2", "--out", "bc.ckpt", "--log", "log.jsonl"]);
    assert!(out.contains("final loss"), "{out}");
    assert_eq!(lines(&d.join("log.jsonl")).last().unwrap()["step"], 20);
    let again = ok(d, &["train", "--algo", "bc", "--demos", "aug.jsonl", "--steps", "20", "--seed", "2", "--out", "bc2.ckpt"]);
    assert_eq!(out, again);
    assert_eq!(std::fs::read(d.join("bc.ckpt")).unwrap(), std::fs::read(d.join("bc2.ckpt")).unwrap());

    ok(d, &["train", "--algo", "dqfd", "--demos", "demos.jsonl", "--steps", "10", "--interaction-episodes", "1", "--out", "dqfd.ckpt"]);

    let out = ok(d, &["eval", "--ckpt", "bc.ckpt", "--task", "search", "--episodes", "5", "--seed", "3", "--failures-out", "fail.jsonl"]);
    let report: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["episodes"], 5);
    let failures = lines(&d.join("fail.jsonl"));
    assert_eq!(failures.len() as u64, 5 - report["successes"].as_u64().unwrap());

    let out = ok(d, &["iterate", "--state", "loop", "--demos", "demos.jsonl", "--steps", "10", "--eval-episodes", "4"]);
    assert!(out.starts_with("iteration 1:"), "{out}");
    let out = ok(d, &["iterate", "--state", "loop", "--demos", "demos.jsonl", "--steps", "10", "--eval-episodes", "4"]);
    assert!(out.starts_with("iteration 2: admitted 0 rejected 5"), "{out}");
    assert!(d.join("loop/current.ckpt").exists());
    assert!(d.join("loop/report-2.json").exists());
}

#[test]
fn serve_answers_requests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("none.jsonl"), "").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_uinav"))
        .args(["serve", "--port", "0", "--failures", "none.jsonl", "--demos-out", "out.jsonl"])
        .env("UINAV_DATA_DIR", d)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").unwrap().to_string();
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /failures HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains(r#""failures":[]"#), "{resp}");
}
