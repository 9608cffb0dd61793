use std::fs;
use std::path::{Path, PathBuf};

use refsource_core::config::{Overrides, RunConfig};
use refsource_core::ensemble::{read_scores, Ablation};
use refsource_core::pipeline::{self, PipelineError};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../testdata/fixture")
        .canonicalize()
        .unwrap()
}

/// Fixture config with outputs (and optionally the cache) redirected into `dir`.
fn config_in(dir: &Path, cache: Option<&Path>) -> RunConfig {
    let f = fixture();
    let cache = cache.map(Path::to_path_buf).unwrap_or_else(|| f.join("cache"));
    let text = fs::read_to_string(f.join("config.toml"))
        .unwrap()
        .replace("corpus = \"corpus.jsonl\"", &format!("corpus = {:?}", f.join("corpus.jsonl").display().to_string()))
        .replace("cache_dir = \"cache\"", &format!("cache_dir = {:?}", cache.display().to_string()))
        .replace("output_dir = \"out\"", &format!("output_dir = {:?}", dir.join("out").display().to_string()));
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    RunConfig::load(&path, &Overrides::default()).unwrap()
}

#[test]
fn stages_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), None);

    let f = pipeline::cmd_featurize(&cfg).unwrap();
    assert_eq!(f.papers, 40);
    assert!(f.path.is_file());

    let trained = pipeline::cmd_train(&cfg).unwrap();
    assert_eq!(trained.len(), 2);
    assert!(pipeline::model_path(&cfg, 'a').is_file());
    assert!(pipeline::model_path(&cfg, 'b').is_file());

    let llm = pipeline::cmd_llm(&cfg, false).unwrap();
    assert_eq!(llm.planned, 240);
    assert_eq!(llm.answered_slots + llm.missing_slots, 240);

    let scored = pipeline::cmd_score(&cfg, Ablation::Combined).unwrap();
    assert_eq!(scored.len(), f.rows);
    let on_disk = read_scores(pipeline::scores_path(&cfg, Ablation::Combined)).unwrap();
    assert_eq!(on_disk.len(), scored.len());

    let report = pipeline::cmd_eval(&cfg, Ablation::Combined).unwrap();
    assert!(report.map > 0.0 && report.map <= 1.0);
    assert_eq!(report.skipped, 2);
    assert!(pipeline::report_path(&cfg, Ablation::Combined).is_file());
}

#[test]
fn score_before_train_is_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), None);
    pipeline::cmd_featurize(&cfg).unwrap();
    let err = pipeline::cmd_score(&cfg, Ablation::Combined).unwrap_err();
    assert!(matches!(err, PipelineError::MissingArtifact { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn llm_only_needs_no_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), None);
    pipeline::cmd_llm(&cfg, false).unwrap();
    let scored = pipeline::cmd_score(&cfg, Ablation::LlmOnly).unwrap();
    assert!(scored.iter().all(|r| r.p_base == 0.0 && r.p_final == r.score_bonus));
}

#[test]
fn replay_miss_names_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    fs::create_dir(&cache).unwrap();
    let mut removed = None;
    for e in fs::read_dir(fixture().join("cache")).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if removed.is_none() && name.ends_with(".json") {
            removed = Some(name.trim_end_matches(".json").to_string());
            continue;
        }
        fs::copy(&p, cache.join(&name)).unwrap();
    }
    let digest = removed.unwrap();
    let cfg = config_in(dir.path(), Some(&cache));
    let err = pipeline::cmd_llm(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains(&digest), "{err}");
}

#[test]
fn dry_run_sends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), Some(&dir.path().join("no-cache")));
    let s = pipeline::cmd_llm(&cfg, true).unwrap();
    assert_eq!((s.planned, s.papers), (240, 40));
    assert!(!pipeline::answers_dir(&cfg).exists());
}

#[test]
fn split_is_deterministic_and_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), None);
    let papers = pipeline::load_papers(&cfg).unwrap();
    let a = pipeline::training_papers(&papers, 0.7, 7);
    assert_eq!(a, pipeline::training_papers(&papers, 0.7, 7));
    assert_ne!(a, pipeline::training_papers(&papers, 0.7, 8));
    // 38 labeled papers
    assert_eq!(a.len(), 27);
    for p in pipeline::evaluation_papers(&cfg, &papers) {
        assert!(!a.contains(&p.paper_id));
    }
}

#[test]
fn ingest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_in(dir.path(), None);
    cfg.corpus = dir.path().join("ingested.jsonl");
    let n = pipeline::cmd_ingest(&cfg, &fixture().join("corpus.jsonl")).unwrap();
    assert_eq!(n, 40);
    let again = pipeline::load_papers(&cfg).unwrap();
    assert_eq!(again.len(), 40);
}
