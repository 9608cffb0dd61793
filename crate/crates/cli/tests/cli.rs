use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../testdata/fixture")
        .canonicalize()
        .unwrap()
}

fn write_config(dir: &Path, corpus: &Path) -> PathBuf {
    let f = fixture();
    let text = fs::read_to_string(f.join("config.toml"))
        .unwrap()
        .replace("corpus = \"corpus.jsonl\"", &format!("corpus = {:?}", corpus.display().to_string()))
        .replace("cache_dir = \"cache\"", &format!("cache_dir = {:?}", f.join("cache").display().to_string()))
        .replace("output_dir = \"out\"", &format!("output_dir = {:?}", dir.join("out").display().to_string()));
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refsource"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn dry_run_reports_planned_requests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fixture().join("corpus.jsonl"));
    let o = run(&cfg, &["llm", "--dry-run"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "planned requests: 240 (40 papers)");
}

#[test]
fn featurize_counts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fixture().join("corpus.jsonl"));
    let o = run(&cfg, &["featurize"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("440 rows for 40 papers"), "{}", stdout(&o));
}

#[test]
fn empty_corpus_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    fs::write(&corpus, "").unwrap();
    let cfg = write_config(dir.path(), &corpus);
    let o = run(&cfg, &["featurize"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, "corpus = \"x.jsonl\"\nunknown_key = 1\n").unwrap();
    assert_eq!(run(&cfg, &["featurize"]).status.code(), Some(2));
}

#[test]
fn scoring_without_models_is_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fixture().join("corpus.jsonl"));
    assert!(run(&cfg, &["featurize"]).status.success());
    let o = run(&cfg, &["score"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("refsource train"));
}

#[test]
fn replay_without_cache_is_a_cache_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fixture().join("corpus.jsonl"));
    let text = fs::read_to_string(&cfg).unwrap();
    let missing = dir.path().join("nowhere");
    let text = text.replace(
        &format!("cache_dir = {:?}", fixture().join("cache").display().to_string()),
        &format!("cache_dir = {:?}", missing.display().to_string()),
    );
    fs::write(&cfg, text).unwrap();
    assert_eq!(run(&cfg, &["llm"]).status.code(), Some(4));
}

#[test]
fn jobs_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fixture().join("corpus.jsonl"));
    assert!(!run(&cfg, &["featurize", "--jobs", "0"]).status.success());
}

#[test]
fn eval_output_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fixture().join("corpus.jsonl"));
    let one = run(&cfg, &["pipeline", "--ablate", "combined", "--jobs", "1"]);
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    let report = fs::read(dir.path().join("out/report.txt")).unwrap();
    let many = run(&cfg, &["pipeline", "--ablate", "combined", "--jobs", "8"]);
    assert!(many.status.success());
    assert_eq!(stdout(&one), stdout(&many));
    assert_eq!(report, fs::read(dir.path().join("out/report.txt")).unwrap());
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_equals_stages_run_by_hand() {
    let corpus = fixture().join("corpus.jsonl");
    let whole = tempfile::tempdir().unwrap();
    let cfg = write_config(whole.path(), &corpus);
    assert!(run(&cfg, &["pipeline", "--ablate", "combined"]).status.success());

    let staged = tempfile::tempdir().unwrap();
    let cfg = write_config(staged.path(), &corpus);
    for stage in ["featurize", "train", "llm", "score", "eval"] {
        let o = run(&cfg, &[stage]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(snapshot(&whole.path().join("out")), snapshot(&staged.path().join("out")));
}

#[test]
fn training_needs_labels() {
    let dir = tempfile::tempdir().unwrap();
    let unlabeled: String = fs::read_to_string(fixture().join("corpus.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("source_labels");
            format!("{v}\n")
        })
        .collect();
    let corpus = dir.path().join("unlabeled.jsonl");
    fs::write(&corpus, unlabeled).unwrap();
    let cfg = write_config(dir.path(), &corpus);
    assert!(run(&cfg, &["featurize"]).status.success());
    let o = run(&cfg, &["train"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn featurize_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &fixture().join("corpus.jsonl"));
    assert!(run(&cfg, &["featurize"]).status.success());
    let first = fs::read(dir.path().join("out/features.csv")).unwrap();
    assert!(run(&cfg, &["featurize"]).status.success());
    assert_eq!(first, fs::read(dir.path().join("out/features.csv")).unwrap());
}
