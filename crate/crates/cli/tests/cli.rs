use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_msp-dst"));
    cmd.env("MSP_DST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, n: &str) {
    ok(&["gen-data", "--data", p(dir), "--dialogues", n, "--seed", "3"]);
}

const TINY: [&str; 10] = [
    "--dim", "8", "--ffn-dim", "16", "--max-len", "48", "--epochs", "1", "--learning-rate", "0.003",
];

fn train_tiny(data: &Path, out: &Path, strategy: &str) {
    let mut args = vec!["train", "--data", p(data), "--out", p(out), "--strategy", strategy];
    args.extend_from_slice(&TINY);
    ok(&args);
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "20");
    gen(b.path(), "20");
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "events.jsonl", "schema.json", "manifest.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn bad_rate_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--data", p(dir.path()), "--correction-rate", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_field_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"dialogs": 5}"#).unwrap();
    let out = run(&["gen-data", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flag_is_a_usage_error() {
    assert_eq!(run(&["eval", "--pool-mode", "half"]).status.code(), Some(2));
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data", p(&dir.path().join("none"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_values_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let data = dir.path().join("data");
    std::fs::write(&cfg, serde_json::json!({"dialogues": 10, "data": p(&data)}).to_string()).unwrap();
    ok(&["gen-data", "--config", p(&cfg)]);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let total = ["train", "dev", "test"].iter().map(|k| manifest[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(total, 10);
}

#[test]
fn oracle_eval_is_exact_and_analyzable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    gen(&data, "40");
    ok(&["eval", "--oracle", "true", "--max-len", "512", "--data", p(&data), "--out", p(&out)]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["jga"].as_f64(), Some(1.0));
    let turns = report["turns"].as_u64().unwrap() as usize;
    let slots = report["slots"].as_array().unwrap().len();
    assert_eq!(read_lines(&out.join("trace.jsonl")).len(), turns * slots);

    let analyzed = ok(&["analyze", "--data", p(&data), "--out", p(&out)]);
    let analysis: Value = serde_json::from_str(&std::fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(analysis["inherit"]["error_count"].as_u64(), Some(0));
    let text = String::from_utf8(analyzed.stdout).unwrap();
    assert!(text.contains("indirect mentions tracked"));
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "10");
    let runs = dir.path().join("runs");
    let out = run(&["compare", "--data", p(&data), "--runs", p(&runs), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["eval", "--data", p(&data), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_compare_and_repl_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "12");
    let runs = dir.path().join("runs");
    let msp = runs.join("msp").join("seed-0");
    train_tiny(&data, &msp, "msp");
    train_tiny(&data, &runs.join("pure_context").join("seed-0"), "pure_context");
    assert!(msp.join("checkpoint.json").is_file());
    assert_eq!(read_lines(&msp.join("history.jsonl")).len(), 1);

    let mismatch = run(&["eval", "--data", p(&data), "--out", p(&msp), "--strategy", "pure_context"]);
    assert_eq!(mismatch.status.code(), Some(2));

    ok(&["eval", "--data", p(&data), "--out", p(&msp)]);
    let states = read_lines(&msp.join("states.jsonl"));
    let first = &states[0];

    let cmp_out = dir.path().join("cmp");
    let shown = ok(&[
        "compare", "--data", p(&data), "--runs", p(&runs), "--out", p(&cmp_out),
        "--strategies", "msp,pure_context", "--seeds", "0",
    ]);
    let shown = String::from_utf8(shown.stdout).unwrap();
    assert!(shown.contains("pure_context"));
    assert!(shown.contains("median ordering: "));
    let cmp: Value = serde_json::from_str(&std::fs::read_to_string(cmp_out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["rows"].as_array().unwrap().len(), 2);

    let test_line = std::fs::read_to_string(data.join("test.jsonl")).unwrap();
    let record: Value = serde_json::from_str(test_line.lines().next().unwrap()).unwrap();
    assert_eq!(record["id"], first["dialogue_id"]);
    let mut script = String::new();
    for turn in record["turns"].as_array().unwrap() {
        script.push_str(&format!("{}\n{}\n", turn["agent"].as_str().unwrap(), turn["user"].as_str().unwrap()));
    }
    let session = |input: String| {
        let mut child = bin()
            .args(["repl", "--checkpoint", p(&msp.join("checkpoint.json")), "--data", p(&data)])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        let out = child.wait_with_output().unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let states_of = |text: &str| -> Vec<Value> {
        text.lines()
            .filter(|l| l.starts_with("turn "))
            .map(|l| serde_json::from_str(l.split_once(' ').unwrap().1.split_once(' ').unwrap().1).unwrap())
            .collect()
    };
    let batch: Vec<Value> = first["states"].as_array().unwrap().clone();

    let text = session(script.clone());
    assert_eq!(states_of(&text), batch);

    // a reset in the middle starts the dialogue afresh
    let text = session(format!("{script}:reset\n{script}:quit\nignored\nignored\n"));
    let seen = states_of(&text);
    assert_eq!(seen.len(), 2 * batch.len());
    assert_eq!(seen[..batch.len()], batch[..]);
    assert_eq!(seen[batch.len()..], batch[..]);
}

#[test]
fn repl_quits_on_command() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "8");
    let out_dir = dir.path().join("m");
    train_tiny(&data, &out_dir, "msp");
    let mut child = bin()
        .args(["repl", "--data", p(&data), "--out", p(&out_dir)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b":quit\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}
