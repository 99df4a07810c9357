use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noncesuch"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/attack").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn attack_audit(extra: &[&str], out: &Path) -> Output {
    let mut cmd = bin();
    cmd.args(["audit", "--contests", s(&fixture("contests.json"))])
        .args(["--cvrs", s(&fixture("cvrs.json"))])
        .args(["--manifest", s(&fixture("manifest.csv"))])
        .args(["--config", s(&fixture("audit.toml"))])
        .args(["--out", s(out)])
        .args(extra);
    run(&mut cmd)
}

fn gen(dir: &Path, spec: &str, seed: &str) -> PathBuf {
    let spec_path = dir.join("spec.toml");
    std::fs::write(&spec_path, spec).unwrap();
    let out = dir.join("election");
    let o = run(bin().args(["gen", "--spec", s(&spec_path), "--seed", seed, "--out", s(&out)]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_audit_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let e = gen(dir.path(), "candidates = [\"Alice\", \"Bob\"]\nn_cards = 1000\nmargin = 0.3\n", "99");
    for f in ["contests.json", "cvrs.json", "manifest.csv", "cards.json"] {
        assert!(e.join(f).exists(), "{f} missing");
    }
    let config = dir.path().join("audit.json");
    std::fs::write(&config, r#"{"seed": "12345"}"#).unwrap();
    let out = dir.path().join("audit");
    let o = run(bin()
        .args(["audit", "--contests", s(&e.join("contests.json")), "--cvrs", s(&e.join("cvrs.json"))])
        .args(["--manifest", s(&e.join("manifest.csv")), "--cards", s(&e.join("cards.json"))])
        .args(["--config", s(&config), "--out", s(&out)]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["verdict"], "all_confirmed");
    let draws = report["total_draws"].as_u64().unwrap();
    let log = std::fs::read_to_string(out.join("draws.jsonl")).unwrap();
    assert_eq!(log.lines().count() as u64, draws);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["outcome"], "card_with_requested_id");
    assert!(first["assertions"][0]["L"].is_number());

    let csv = dir.path().join("table.csv");
    let o = run(bin().args(["report", s(&out), "--csv", s(&csv)]));
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("verdict: all_confirmed"));
    assert!(text.contains("risk trajectory: Alice beats Bob"));
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("contest,assertion,margin"));
}

#[test]
fn attack_ends_in_full_count_with_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audit");
    let o = attack_audit(
        &["--cards", s(&fixture("cards.json")), "--adversary", s(&fixture("adversary.json"))],
        &out,
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["verdict"], "full_hand_count");
    assert_eq!(report["hand_count"]["mayor"][0], "Alice");
    let log = std::fs::read_to_string(out.join("draws.jsonl")).unwrap();
    let missing: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|d| d["id"] == "202")
        .collect();
    for d in missing {
        assert_eq!(d["outcome"], "no_card");
        assert_eq!(d["assertions"][0]["L"], 0.0);
    }
}

#[test]
fn mvr_file_must_cover_every_request() {
    let dir = tempfile::tempdir().unwrap();
    let mvrs = dir.path().join("mvrs.json");
    std::fs::write(&mvrs, r#"{"17": {"imprinted_id": "17", "votes": {"mayor": "Alice"}}}"#).unwrap();
    let o = attack_audit(&["--mvr-file", s(&mvrs)], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manual vote record required"));

    std::fs::write(
        &mvrs,
        r#"{"17": {"imprinted_id": "17", "votes": {"mayor": "Alice"}},
            "91": {"imprinted_id": "91", "votes": {"mayor": "Bob"}},
            "202": null}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = attack_audit(&["--mvr-file", s(&mvrs)], &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["reason"], "population_exhausted");
    assert!(report.get("hand_count").is_none(), "no ground truth in a live audit");
}

#[test]
fn interactive_escalation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut child = bin()
        .args(["audit", "--contests", s(&fixture("contests.json"))])
        .args(["--cvrs", s(&fixture("cvrs.json")), "--manifest", s(&fixture("manifest.csv"))])
        .args(["--config", s(&fixture("audit.toml")), "--interactive", "--out", s(&out)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"!\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let prompt = String::from_utf8(o.stdout).unwrap();
    assert!(prompt.contains("retrieve the card imprinted"));
    // The CVR's votes are never shown to the person reading the card.
    assert!(!prompt.contains("Alice") && !prompt.contains("Bob"));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["reason"], "operator_escalation");
}

#[test]
fn duplicate_ids_force_full_count_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let cvrs = dir.path().join("cvrs.json");
    std::fs::write(
        &cvrs,
        r#"[{"id": "1", "votes": {"mayor": "Bob"}}, {"id": "1", "votes": {"mayor": "Bob"}},
            {"id": "2", "votes": {"mayor": "Alice"}}]"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(bin()
        .args(["audit", "--contests", s(&fixture("contests.json")), "--cvrs", s(&cvrs)])
        .args(["--manifest", s(&fixture("manifest.csv")), "--cards", s(&fixture("cards.json"))])
        .args(["--config", s(&fixture("audit.toml")), "--out", s(&out)]));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["reason"], "duplicate_ids");
    assert_eq!(report["total_draws"], 0);
    assert_eq!(std::fs::read_to_string(out.join("draws.jsonl")).unwrap(), "");
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("exp.json");
    std::fs::write(
        &spec,
        r#"{"seed": "8", "reps": 5, "scenarios": [
            {"name": "easy", "election": {"candidates": ["Bob", "Alice"], "n_cards": 500, "margin": 0.4}}
        ]}"#,
    )
    .unwrap();
    let out = dir.path().join("sim");
    let o = run(bin().args(["simulate", "--spec", s(&spec), "--jobs", "1", "--out", s(&out)]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.jsonl", "summary.json", "summary.csv", "timing.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let o = run(bin().args(["simulate", "--spec", s(&spec), "--reps", "3", "--seed", "9", "--out", s(&out)]));
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(out.join("results.jsonl")).unwrap().lines().count(), 3);

    let o = run(bin().args(["report", s(&out)]));
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("easy"));

    // A hand-edited summary no longer matches the results.
    std::fs::write(out.join("summary.json"), "[]").unwrap();
    let o = run(bin().args(["report", s(&out)]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "seed = \"0x1f\"\n").unwrap();
    let o = run(bin()
        .args(["audit", "--contests", s(&fixture("contests.json")), "--cvrs", s(&fixture("cvrs.json"))])
        .args(["--manifest", s(&fixture("manifest.csv")), "--cards", s(&fixture("cards.json"))])
        .args(["--config", s(&config), "--out", s(&dir.path().join("o"))]));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = run(bin().args(["report", s(&dir.path().join("nothing"))]));
    assert_eq!(o.status.code(), Some(1));

    let o = attack_audit(&[], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1), "an audit needs cards, an MVR file or a terminal");
}
