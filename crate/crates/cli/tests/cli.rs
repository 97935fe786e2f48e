use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const Q_FILM: &str = "Who directed The Girl in White?";
const Q_TEAM: &str = "what team does michael jordan play for?";

fn ela(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ela"));
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("ELA_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().expect("ela runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_lines(path: &Path, values: &[Value]) {
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

/// Pages, script and dataset for two questions; the script links the film
/// question correctly and the team question to the wrong candidate.
fn workspace() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    write_lines(
        &root.join("pages.jsonl"),
        &[
            json!({"title": "The Girl in White", "text": "1952 American film directed by John Sturges.\n\nIt stars June Allyson."}),
            json!({"title": "The Girl in White (painting)", "text": "1890 painting by Vincent van Gogh."}),
            json!({"title": "Michael Jordan", "text": "American basketball player.\n\nHe played for the Chicago Bulls."}),
            json!({"title": "Michael Jordan (footballer)", "text": "English footballer."}),
            json!({"title": "Chicago Bulls", "text": "Basketball team in Chicago."}),
        ],
    );
    let script = json!([
        {"match": "Mention 1: The Girl in White", "response": "<think>The film.</think>\nAnswers:\nThe Girl in White -> 1"},
        {"match": "Mention 1: michael jordan", "response": "<think>Picking the footballer.</think>\nAnswers:\nmichael jordan -> 2"},
        {"match": "Article:", "response": "Answer: John Sturges"},
        {"match": "Question:", "response": "Answer: unknown"},
        {"match": Q_FILM, "response": "Search(\"The Girl in White\")"},
        {"match": Q_TEAM, "response": "Search(\"michael jordan\")"},
    ]);
    fs::write(root.join("script.json"), script.to_string()).unwrap();
    write_lines(
        &root.join("dataset.jsonl"),
        &[
            json!({"id": "q1", "question": Q_FILM, "gold_entities": ["The Girl in White"],
                   "answers": ["John Sturges"], "gold_document": "The Girl in White"}),
            json!({"id": "q2", "question": Q_TEAM, "gold_entities": ["Michael Jordan"],
                   "answers": ["Chicago Bulls"], "gold_document": "Michael Jordan"}),
        ],
    );
    let out = ela(&root, &["index", "build", "--pages", "pages.jsonl", "--out", "idx"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("indexed 5 documents"));
    (dir, root)
}

const SCRIPTED: [&str; 6] = ["--backend", "scripted", "--script", "script.json", "--index", "idx"];

fn with_backend<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SCRIPTED).collect()
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--help"],
        vec!["index", "build", "--help"],
        vec!["link", "--help"],
        vec!["eval", "el", "--help"],
        vec!["eval", "qa", "--help"],
        vec!["trajectories", "generate", "--help"],
        vec!["trajectories", "export", "--help"],
        vec!["map-freebase", "--help"],
    ] {
        let out = ela(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(stdout(&out).contains("Usage"), "{args:?}");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ela(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ela(dir.path(), &["link"]).status.code(), Some(2));
    assert_eq!(ela(dir.path(), &["index", "build", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_one_with_path() {
    let (_dir, root) = workspace();
    let out = ela(&root, &with_backend(&["eval", "el", "--dataset", "nope.jsonl"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.jsonl"), "{}", stderr(&out));
}

#[test]
fn link_prints_result_json() {
    let (_dir, root) = workspace();
    let out = ela(&root, &with_backend(&["link", "--question", Q_FILM]));
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["predicted_set"], json!([{"namespace": "article_title", "key": "the girl in white"}]));
    assert_eq!(v["think_reader"], "The film.");
}

#[test]
fn scripted_mode_needs_script() {
    let (_dir, root) = workspace();
    let out = ela(&root, &["link", "--question", Q_FILM, "--backend", "scripted", "--index", "idx"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--script"));
}

#[test]
fn eval_el_reports_and_is_deterministic() {
    let (_dir, root) = workspace();
    let args = with_backend(&[
        "eval", "el", "--dataset", "dataset.jsonl", "--results", "el.jsonl", "--summary", "el.json", "--workers", "2",
    ]);
    let out = ela(&root, &args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("50.00 / 50.00 / 50.00"), "{}", stdout(&out));
    assert!(stdout(&out).contains("queries: 2"));
    let lines: Vec<Value> = fs::read_to_string(root.join("el.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["id"], "q1");
    assert_eq!(lines[1]["predicted"], json!(["michael jordan (footballer)"]));
    assert_eq!(lines[1]["scores"]["accuracy"], 0.0);

    let first = fs::read(root.join("el.json")).unwrap();
    let json_out = ela(&root, &with_backend(&["eval", "el", "--dataset", "dataset.jsonl", "--json"]));
    assert_eq!(json_out.stdout, first);
    let again = ela(&root, &with_backend(&["eval", "el", "--dataset", "dataset.jsonl", "--json"]));
    assert_eq!(again.stdout, json_out.stdout);
}

#[test]
fn config_file_env_and_flags_layer() {
    let (_dir, root) = workspace();
    fs::write(root.join("ela.toml"), "[backend]\nkind = \"scripted\"\nscript = \"missing.json\"\n").unwrap();
    let base = ["--config", "ela.toml", "link", "--question", Q_FILM, "--index", "idx"];
    // File alone points at a missing script.
    let out = ela(&root, &base);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.json"));
    // The environment overrides the file.
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ela"));
    let out = cmd.current_dir(&root).args(base).env("ELA_SCRIPT", "script.json").output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    // A flag overrides the environment.
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ela"));
    let out = cmd
        .current_dir(&root)
        .args(base)
        .args(["--script", "script.json"])
        .env("ELA_SCRIPT", "other.json")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn eval_qa_uses_index_corpus() {
    let (_dir, root) = workspace();
    let out = ela(&root, &with_backend(&["eval", "qa", "--dataset", "dataset.jsonl", "--results", "qa.jsonl"]));
    assert!(out.status.success(), "{}", stderr(&out));
    // q1: right article, right answer. q2: wrong article, "John Sturges" again.
    assert!(stdout(&out).contains("Hit@1 / EM / F1\n50.00 / 50.00 / 50.00"), "{}", stdout(&out));
    let text = fs::read_to_string(root.join("qa.jsonl")).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["answer"], "John Sturges");
    assert_eq!(first["context_document"], "The Girl in White");
}

#[test]
fn trajectories_generate_and_export() {
    let (_dir, root) = workspace();
    let out = ela(
        &root,
        &with_backend(&["trajectories", "generate", "--dataset", "dataset.jsonl", "--out", "t.jsonl", "--checkpoint", "cp"]),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("2 trajectories, 1 matched gold"));
    assert!(root.join("cp/completed.txt").exists());
    let out = ela(&root, &["trajectories", "export", "--trajectories", "t.jsonl", "--out", "train.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("wrote 2 training records"));
    assert_eq!(fs::read_to_string(root.join("train.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn map_freebase_writes_dataset_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("map.tsv"), "m.01\tQ1\nm.02\tQ2\n").unwrap();
    write_lines(
        &root.join("raw.jsonl"),
        &[
            json!({"id": "a", "question": "x?", "gold_entities": ["m.01"]}),
            json!({"id": "b", "question": "y?", "gold_entities": ["m.99"]}),
            json!({"id": "c", "question": "z?", "sparql": "SELECT ?x WHERE { ns:m.02 ns:p.q ?x . }"}),
        ],
    );
    let out = ela(
        root,
        &["map-freebase", "--dataset", "raw.jsonl", "--mapping", "map.tsv", "--out", "mapped.jsonl", "--report", "r.json"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("kept 2 of 3 records"));
    let mapped = fs::read_to_string(root.join("mapped.jsonl")).unwrap();
    assert!(mapped.contains("\"Q1\"") && mapped.contains("\"Q2\""));
    let report: Value = serde_json::from_str(&fs::read_to_string(root.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["unmapped"], json!({"m.99": 1}));
}
