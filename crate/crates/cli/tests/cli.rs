use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axprune_core::harness::{load_episodes, save_episodes};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn axprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_axprune"))
        .args(args)
        .env_remove("AXPRUNE_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    let line = err.lines().last().expect("metrics line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {err}"))
}

const TREE: &str = "RootWebArea 'Shop'\n\t[a1] navigation 'Main'\n\t\t[a2] link 'Home'\n\t\t[a3] link 'Cart'\n\t[b1] main ''\n\t\t[b2] button 'Buy now'";

fn tree_file(dir: &Path) -> PathBuf {
    let p = dir.join("tree.txt");
    fs::write(&p, TREE).unwrap();
    p
}

fn script_file(dir: &Path, answer: &str) -> PathBuf {
    let p = dir.join("script.json");
    fs::write(&p, serde_json::json!({ "default_response": answer }).to_string()).unwrap();
    p
}

#[test]
fn prune_structure_keeps_ancestor_skeleton() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = tree_file(tmp.path());
    let script = script_file(tmp.path(), "<think>buy</think><answer>[(6,6)]</answer>");
    let o = axprune(&[
        "prune", "--mode", "structure", "--goal", "Buy it",
        "--axtree", tree.to_str().unwrap(),
        "--transport", "scripted", "--fixture", script.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "RootWebArea\n\t[b1] main\n\t\t[b2] button 'Buy now'\n");
    let m = stderr_json(&o);
    assert_eq!(m["mode"], "structure");
    assert_eq!(m["kept_lines"], 3);
    assert!(m["reduction"].as_f64().unwrap() > 0.0);
}

#[test]
fn prune_remove_with_history_file() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = tree_file(tmp.path());
    let history = tmp.path().join("history.txt");
    fs::write(&history, "click('a3')\n\nscroll(0, 200)\n").unwrap();
    let script = tmp.path().join("script.json");
    // only answers when both actions reached the prompt
    fs::write(
        &script,
        r#"{"chat_rules": [{"contains": "click('a3')\nscroll(0, 200)", "response": "<answer>[(3,4)]</answer>"}]}"#,
    )
    .unwrap();
    let o = axprune(&[
        "prune", "--mode", "remove", "--goal", "Go home",
        "--axtree", tree.to_str().unwrap(),
        "--history", history.to_str().unwrap(),
        "--transport", "scripted", "--fixture", script.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "\t\t[a2] link 'Home'\n\t\t[a3] link 'Cart'\n");
}

#[test]
fn prune_truncate_and_passthrough_need_no_transport() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = tree_file(tmp.path());
    let o = axprune(&["prune", "--mode", "truncate", "--goal", "g", "--axtree", tree.to_str().unwrap(), "--budget", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 4 + 7 tokens would exceed 9
    assert_eq!(stdout(&o), "RootWebArea 'Shop'\n");
    assert_eq!(stderr_json(&o)["pruned_tokens"], 4);

    let o = axprune(&["prune", "--mode", "passthrough", "--goal", "g", "--axtree", tree.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), format!("{TREE}\n"));
    assert_eq!(stderr_json(&o)["reduction"], 0.0);
}

#[test]
fn prune_embed_with_scripted_vectors() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = tree_file(tmp.path());
    let config = tmp.path().join("axprune.toml");
    // the first five lines hold 31 tokens, so two chunks split at the last line
    fs::write(&config, "chunk_size = 31\nchunk_overlap = 0\ntop_k = 1\n").unwrap();
    let first: String = TREE.lines().take(5).collect::<Vec<_>>().join("\n");
    let script = tmp.path().join("script.json");
    let vectors = serde_json::json!({
        "vectors": { "buy": [1.0, 0.0], first: [0.0, 1.0], "[b2] button 'Buy now'": [1.0, 0.1] },
        "embedding_dim": 2,
    });
    fs::write(&script, vectors.to_string()).unwrap();
    let o = axprune(&[
        "prune", "--mode", "embed", "--goal", "buy",
        "--axtree", tree.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--transport", "scripted", "--fixture", script.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "[b2] button 'Buy now'\n");
    assert_eq!(stderr_json(&o)["mode"], "embed");
}

#[test]
fn prune_falls_back_on_garbage_answer() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = tree_file(tmp.path());
    let script = script_file(tmp.path(), "I could not decide.");
    let o = axprune(&[
        "prune", "--mode", "remove", "--goal", "g", "--axtree", tree.to_str().unwrap(),
        "--transport", "scripted", "--fixture", script.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), format!("{TREE}\n"));
    let m = stderr_json(&o);
    assert_eq!(m["mode"], "passthrough");
    assert!(m["warnings"][0].as_str().unwrap().starts_with("fallback to passthrough"));
}

#[test]
fn live_transport_without_key_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = tree_file(tmp.path());
    let config = tmp.path().join("axprune.toml");
    // unroutable endpoint; the missing key must be reported before any request
    fs::write(&config, "endpoint = \"http://127.0.0.1:9\"\nmax_retries = 0\n").unwrap();
    let o = axprune(&[
        "prune", "--mode", "remove", "--goal", "g", "--axtree", tree.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("AXPRUNE_API_KEY"), "{err}");
}

#[test]
fn replay_structure_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = fixtures().join("replay");
    let out = tmp.path().join("out");
    let o = axprune(&[
        "replay",
        "--episodes", dir.join("episodes.jsonl").to_str().unwrap(),
        "--strategy", "line_structure",
        "--out", out.to_str().unwrap(),
        "--transport", "scripted",
        "--fixture", dir.join("script.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(out.join("report.csv")).unwrap(),
        fs::read_to_string(dir.join("golden_structure/report.csv")).unwrap()
    );
}

#[test]
fn replay_passthrough_and_cost_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = fixtures().join("replay");
    let out = tmp.path().join("out");
    let o = axprune(&[
        "replay", "--episodes", dir.join("episodes.jsonl").to_str().unwrap(),
        "--strategy", "passthrough", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 11);
    assert!(report.lines().skip(1).all(|l| l.contains(",passthrough,800,800,0.000000,")));

    let o = axprune(&["cost", "--c-small", "0.4", "--c-large", "2.0", "--report", out.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["alpha_threshold"], 0.8);
    assert_eq!(v["fraction_cost_effective"], 0.0);
    assert_eq!(v["steps"].as_array().unwrap().len(), 10);
}

#[test]
fn cost_table_on_line_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = fixtures().join("replay");
    let out = tmp.path().join("out");
    let o = axprune(&[
        "replay", "--episodes", dir.join("episodes.jsonl").to_str().unwrap(),
        "--strategy", "line", "--out", out.to_str().unwrap(),
        "--transport", "scripted", "--fixture", dir.join("script.json").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = axprune(&["cost", "--c-small", "0.4", "--c-large", "2.0", "--report", out.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["fraction_cost_effective"], 1.0);
    // 10 steps of 800 tokens kept down to 216, prices per million tokens
    let retriever = 10.0 * (0.4 * 800.0 + 2.0 * 216.0) / 1e6;
    let plain = 10.0 * 2.0 * 800.0 / 1e6;
    assert!((v["total_retriever_cost"].as_f64().unwrap() - retriever).abs() < 1e-9);
    assert!((v["total_plain_cost"].as_f64().unwrap() - plain).abs() < 1e-9);
}

#[test]
fn cost_without_report_prints_threshold_table() {
    let o = axprune(&["cost", "--c-small", "0.4", "--c-large", "2.0"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["alpha_threshold"], 0.8);
    let table = v["table"].as_array().unwrap();
    assert_eq!(table.len(), 11);
    let effective: Vec<bool> = table.iter().map(|r| r["cost_effective"].as_bool().unwrap()).collect();
    assert_eq!(effective, [true, true, true, true, true, true, true, true, true, false, false]);

    let o = axprune(&["cost", "--c-small", "1", "--c-large", "0"]);
    assert!(!o.status.success());
}

#[test]
fn bad_episode_line_is_reported_with_its_number() {
    let tmp = tempfile::tempdir().unwrap();
    let eps = tmp.path().join("eps.jsonl");
    fs::write(
        &eps,
        "{\"task_id\":\"a\",\"benchmark\":\"b\",\"goal\":\"g\",\"steps\":[{\"axtree_text\":\"x\",\"action_taken\":null}],\"success\":true}\n{\"task_id\":\"b\",\"benchmark\":\"b\",\"steps\":[]}\n",
    )
    .unwrap();
    let o = axprune(&["replay", "--episodes", eps.to_str().unwrap(), "--strategy", "passthrough", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":2:"), "{err}");

    let o = axprune(&["replay", "--episodes", "/nonexistent/eps.jsonl", "--strategy", "passthrough", "--out", tmp.path().to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("file not found"));
}

#[test]
fn fixture_episodes_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("replay/episodes.jsonl");
    let episodes = load_episodes(&src).unwrap();
    assert_eq!(episodes.len(), 5);
    let copy = tmp.path().join("copy.jsonl");
    save_episodes(&copy, &episodes).unwrap();
    assert_eq!(load_episodes(&copy).unwrap(), episodes);
    let a: Vec<serde_json::Value> = fs::read_to_string(&src).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let b: Vec<serde_json::Value> = fs::read_to_string(&copy).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(a, b);
}
