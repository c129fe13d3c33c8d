//! CLI behavior: command round-trips, determinism of printed output, and
//! error surfaces.

use std::path::Path;
use std::process::Command;

fn rcts(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rcts"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write_fixture(dir: &Path) {
    let mut kb = String::new();
    for i in 0..10 {
        kb.push_str(
            &serde_json::json!({
                "id": format!("kb{i:02}"),
                "image": if i % 2 == 0 { Some(format!("img/{i:02}.png")) } else { None },
                "question": format!("[KB {i:02}] what lies beyond marker {i:02}?"),
                "options": ["ridge", "valley", "plain"],
                "answer": "B",
                "reasoning": null,
                "meta": {"split": "train"}
            })
            .to_string(),
        );
        kb.push('\n');
    }
    std::fs::write(dir.join("kb.jsonl"), kb).unwrap();
    let mock = concat!(
        r#"{"match": {"contains": ["[KB"]}, "response": "The answer is B."}"#,
        "\n",
        r#"{"fallback": "The answer is A."}"#,
        "\n",
    );
    std::fs::write(dir.join("mock.jsonl"), mock).unwrap();
}

#[test]
fn kb_build_rejects_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    let line = r#"{"id":"dup","image":null,"question":"q","options":null,"answer":"x","reasoning":null,"meta":{}}"#;
    std::fs::write(dir.path().join("bad.jsonl"), format!("{line}\n{line}\n")).unwrap();
    let out = rcts(dir.path(), &["kb", "build", "--dataset", "bad.jsonl", "--out", "kb.jsonl"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dup"), "stderr: {stderr}");
}

#[test]
fn rerank_is_deterministic_and_dumps_the_tree() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let build = rcts(
        dir.path(),
        &["index", "build", "--kb", "kb.jsonl", "--out", "kb.rcte"],
    );
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));

    let args = [
        "rerank",
        "--kb",
        "kb.jsonl",
        "--index",
        "kb.rcte",
        "--question",
        "[USER] what lies beyond the far marker?",
        "--k",
        "2",
        "--n",
        "6",
        "--seed",
        "3",
        "--mock-script",
        "mock.jsonl",
        "--dump-tree",
        "tree.json",
    ];
    let first = rcts(dir.path(), &args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = rcts(dir.path(), &args);
    assert_eq!(first.stdout, second.stdout, "rerank output must be seed-stable");

    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("termination:"), "stdout: {stdout}");
    assert!(stdout.contains("answer: B"), "stdout: {stdout}");

    let tree: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tree.json")).unwrap())
            .unwrap();
    let nodes = tree["nodes"].as_array().unwrap();
    let tree_size: usize = stdout
        .lines()
        .find_map(|l| l.strip_prefix("tree_size: "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(nodes.len(), tree_size);
}

#[test]
fn retrieve_lists_ranked_hits() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    rcts(dir.path(), &["index", "build", "--kb", "kb.jsonl", "--out", "kb.rcte"]);
    let out = rcts(
        dir.path(),
        &[
            "retrieve",
            "--index",
            "kb.rcte",
            "--question",
            "what lies beyond marker 03?",
            "--n",
            "4",
        ],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    // 4 hits plus the header, best-first
    assert_eq!(stdout.lines().count(), 5, "stdout: {stdout}");
    assert!(stdout.lines().nth(1).unwrap().starts_with('1'));
}

#[test]
fn kb_reason_fills_missing_reasoning_only() {
    let dir = tempfile::tempdir().unwrap();
    let kb = concat!(
        r#"{"id":"a","image":null,"question":"[KB a] first query","options":["x","y"],"answer":"B","reasoning":null,"meta":{}}"#,
        "\n",
        r#"{"id":"b","image":null,"question":"[KB b] second query","options":["x","y"],"answer":"B","reasoning":"already derived","meta":{}}"#,
        "\n",
    );
    std::fs::write(dir.path().join("kb.jsonl"), kb).unwrap();
    let mock = concat!(
        r#"{"match": {"contains": ["**Answer:**"]}, "response": "trace the marker to the answer"}"#,
        "\n",
        r#"{"fallback": "The answer is B."}"#,
        "\n",
    );
    std::fs::write(dir.path().join("mock.jsonl"), mock).unwrap();
    let out = rcts(
        dir.path(),
        &[
            "kb", "reason", "--kb", "kb.jsonl", "--out", "enriched.jsonl", "--mock-script",
            "mock.jsonl",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let enriched = std::fs::read_to_string(dir.path().join("enriched.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = enriched
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["reasoning"], "trace the marker to the answer");
    assert_eq!(lines[1]["reasoning"], "already derived");
}

#[test]
fn mcq_build_produces_six_option_questions() {
    let dir = tempfile::tempdir().unwrap();
    let mut dataset = String::new();
    let relations = [
        "under", "above", "behind", "facing", "beside", "within", "beyond", "near",
    ];
    for (i, rel) in relations.iter().enumerate() {
        dataset.push_str(
            &serde_json::json!({
                "id": format!("s{i:02}"),
                "image": null,
                "statement": format!("the lamp is {rel} the shelf"),
                "relation": rel,
            })
            .to_string(),
        );
        dataset.push('\n');
    }
    std::fs::write(dir.path().join("statements.jsonl"), dataset).unwrap();
    let out = rcts(
        dir.path(),
        &[
            "mcq-build",
            "--dataset",
            "statements.jsonl",
            "--seed",
            "9",
            "--out",
            "mc.jsonl",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let built = std::fs::read_to_string(dir.path().join("mc.jsonl")).unwrap();
    assert_eq!(built.lines().count(), relations.len());
    for (line, rel) in built.lines().zip(&relations) {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let options = record["options"].as_array().unwrap();
        assert_eq!(options.len(), 6);
        assert_eq!(options.iter().filter(|o| o.as_str() == Some(rel)).count(), 1);
        let answer = record["answer"].as_str().unwrap();
        let idx = (answer.as_bytes()[0] - b'A') as usize;
        assert_eq!(options[idx].as_str(), Some(*rel));
        assert!(record["question"].as_str().unwrap().contains("[MASK]"));
    }
}

#[test]
fn eval_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    rcts(dir.path(), &["index", "build", "--kb", "kb.jsonl", "--out", "kb.rcte"]);
    let out = rcts(
        dir.path(),
        &[
            "eval", "--dataset", "kb.jsonl", "--kb", "kb.jsonl", "--index", "kb.rcte",
            "--method", "telepathy", "--out", "r.json", "--mock-script", "mock.jsonl",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("telepathy"));
}
