//! Stage orchestration. Each stage reads the artifacts of the previous ones
//! from the output directory, so running the stages one by one gives the
//! same files as a full pipeline run.
//!
//! ```text
//! out/features.csv
//! out/model_a.gbdt, out/model_b.gbdt
//! out/answers/<paper_id>.json
//! out/scores.csv, out/scores.base-only.csv, out/scores.llm-only.csv
//! out/report.txt (or .json), out/report.base-only.txt, ...
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, EvalSplit, RunConfig, ScorerSection};
use crate::corpus::{load_corpus, write_corpus, CorpusError, PaperRecord};
use crate::ensemble::{read_scores, score_paper_ablated, write_scores, Ablation, EnsembleError, ScoredReference};
use crate::eval::{average_precision, mean_average_precision, roc_auc, EvalError, EvalReport, PaperAp, RankedList, ReportFormat};
use crate::features::{featurize_corpus, read_matrix, write_matrix, FeatureError, FeatureSchema, FeatureVector};
use crate::gbdt::{fit, load_model, save_model, BaseScorer, ExternalScores, GbdtError};
use crate::llm::{
    generate_answers, planned_requests, AnswerSet, CacheStore, HttpProvider, LlmError, Mode, PromptTemplate,
    Provider, RenderOptions, RunOptions,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Validation(String),
    #[error("missing {what} {path}; {hint}")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    /// 2 validation, 3 missing upstream artifact, 4 provider or cache, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Corpus(CorpusError::Malformed { .. })
            | PipelineError::Corpus(CorpusError::Invalid { .. })
            | PipelineError::Corpus(CorpusError::DuplicateId { .. })
            | PipelineError::Validation(_) => 2,
            PipelineError::Corpus(CorpusError::Io { .. }) => 1,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Llm(LlmError::MissingPlaceholder { .. } | LlmError::Config(_)) => 2,
            PipelineError::Llm(_) => 4,
            PipelineError::Io { .. } | PipelineError::Other(_) => 1,
        }
    }
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

fn validation(e: impl ToString) -> PipelineError {
    PipelineError::Validation(e.to_string())
}

impl From<FeatureError> for PipelineError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Io(source) => PipelineError::Io {
                context: "feature matrix".into(),
                source,
            },
            other => validation(other),
        }
    }
}

impl From<EnsembleError> for PipelineError {
    fn from(e: EnsembleError) -> Self {
        validation(e)
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        validation(e)
    }
}

/// Caps the worker pool used by parallel stages. Only the first call in a
/// process takes effect.
pub fn configure_threads(jobs: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
}

pub fn features_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("features.csv")
}

pub fn model_path(cfg: &RunConfig, which: char) -> PathBuf {
    cfg.output_dir.join(format!("model_{which}.gbdt"))
}

pub fn answers_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("answers")
}

fn answer_path(cfg: &RunConfig, paper_id: &str) -> PathBuf {
    answers_dir(cfg).join(format!("{paper_id}.json"))
}

fn suffix(ablation: Ablation) -> String {
    match ablation {
        Ablation::Combined => String::new(),
        other => format!(".{}", other.as_str()),
    }
}

pub fn scores_path(cfg: &RunConfig, ablation: Ablation) -> PathBuf {
    cfg.output_dir.join(format!("scores{}.csv", suffix(ablation)))
}

pub fn report_path(cfg: &RunConfig, ablation: Ablation) -> PathBuf {
    let ext = match cfg.report.format {
        ReportFormat::Plain => "txt",
        ReportFormat::Machine => "json",
    };
    cfg.output_dir.join(format!("report{}.{ext}", suffix(ablation)))
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<(), PipelineError> {
    fs::create_dir_all(&cfg.output_dir).map_err(io(format!("creating {}", cfg.output_dir.display())))
}

fn require(path: &Path, what: &'static str, hint: &'static str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact {
            what,
            path: path.to_path_buf(),
            hint,
        })
    }
}

pub fn load_papers(cfg: &RunConfig) -> Result<Vec<PaperRecord>, PipelineError> {
    let papers = load_corpus(&cfg.corpus)?;
    if papers.is_empty() {
        return Err(validation(format!("corpus {} is empty", cfg.corpus.display())));
    }
    Ok(papers)
}

/// Ids of the labeled papers used for base-scorer training. The remaining
/// labeled papers form the held-out set.
pub fn training_papers(papers: &[PaperRecord], train_fraction: f64, seed: u64) -> BTreeSet<String> {
    let mut labeled: Vec<&str> = papers
        .iter()
        .filter(|p| p.source_labels.is_some())
        .map(|p| p.paper_id.as_str())
        .collect();
    labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (labeled.len() as f64 * train_fraction).round() as usize;
    labeled[..n_train].iter().map(|s| s.to_string()).collect()
}

/// Papers scored by `eval` under the configured split.
pub fn evaluation_papers<'a>(cfg: &RunConfig, papers: &'a [PaperRecord]) -> Vec<&'a PaperRecord> {
    match cfg.split.eval {
        EvalSplit::All => papers.iter().collect(),
        EvalSplit::Heldout => {
            let train = training_papers(papers, cfg.split.train_fraction, cfg.seed);
            papers.iter().filter(|p| !train.contains(&p.paper_id)).collect()
        }
    }
}

fn schema(cfg: &RunConfig) -> Result<FeatureSchema, PipelineError> {
    Ok(cfg.features.schema()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizeSummary {
    pub papers: usize,
    pub rows: usize,
    pub path: PathBuf,
}

pub fn cmd_featurize(cfg: &RunConfig) -> Result<FeaturizeSummary, PipelineError> {
    let papers = load_papers(cfg)?;
    let schema = schema(cfg)?;
    let rows = featurize_corpus(&papers, &schema, cfg.features.context_window)?;
    ensure_output_dir(cfg)?;
    let path = features_path(cfg);
    write_matrix(&path, &schema, &rows)?;
    info!("wrote {} feature rows to {}", rows.len(), path.display());
    Ok(FeaturizeSummary {
        papers: papers.len(),
        rows: rows.len(),
        path,
    })
}

fn read_features(cfg: &RunConfig, schema: &FeatureSchema) -> Result<Vec<FeatureVector>, PipelineError> {
    let path = features_path(cfg);
    require(&path, "feature matrix", "run `refsource featurize` first")?;
    Ok(read_matrix(&path, schema)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScorer {
    pub name: char,
    /// `None` when the scorer reads an external score file.
    pub path: Option<PathBuf>,
    pub validation_auc: Option<f64>,
}

fn train_error(name: char, e: GbdtError) -> PipelineError {
    match e {
        GbdtError::Io(source) => PipelineError::Io {
            context: format!("model {name}"),
            source,
        },
        other => validation(format!("training model {name}: {other}")),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainedScorer>, PipelineError> {
    let papers = load_papers(cfg)?;
    let schema = schema(cfg)?;
    let rows = read_features(cfg, &schema)?;
    let train_ids = training_papers(&papers, cfg.split.train_fraction, cfg.seed);
    let (train, heldout): (Vec<FeatureVector>, Vec<FeatureVector>) = rows
        .into_iter()
        .filter(|r| r.label.is_some())
        .partition(|r| train_ids.contains(&r.paper_id));
    if train.is_empty() {
        return Err(validation("no labeled rows to train on"));
    }
    ensure_output_dir(cfg)?;
    let mut out = Vec::new();
    for (name, section, tc) in [
        ('a', &cfg.base.a, cfg.base.train_a()),
        ('b', &cfg.base.b, cfg.base.train_b()),
    ] {
        if section.scores.is_some() {
            info!("scorer {name} uses an external score file; nothing to train");
            out.push(TrainedScorer {
                name,
                path: None,
                validation_auc: None,
            });
            continue;
        }
        let model = fit(&train, &schema, &tc).map_err(|e| train_error(name, e))?;
        let path = model_path(cfg, name);
        save_model(&model, &path).map_err(|e| train_error(name, e))?;
        let scored: Vec<(f64, bool)> = heldout
            .iter()
            .map(|r| Ok((model.predict_proba(r)?, r.label == Some(1))))
            .collect::<Result<_, GbdtError>>()
            .map_err(|e| train_error(name, e))?;
        let validation_auc = roc_auc(&scored).ok();
        match validation_auc {
            Some(auc) => info!("model {name}: {} trees, validation AUC {auc:.4}", model.trees.len()),
            None => info!("model {name}: validation AUC undefined (held-out rows lack a class)"),
        }
        out.push(TrainedScorer {
            name,
            path: Some(path),
            validation_auc,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSummary {
    pub planned: usize,
    pub papers: usize,
    pub answered_slots: usize,
    pub missing_slots: usize,
    pub dry_run: bool,
}

fn templates(cfg: &RunConfig) -> Vec<PromptTemplate> {
    cfg.llm.variants.iter().map(|&v| PromptTemplate::builtin(v)).collect()
}

fn providers(cfg: &RunConfig) -> Result<Vec<Provider>, PipelineError> {
    cfg.llm
        .providers
        .iter()
        .map(|p| match cfg.mode {
            Mode::Replay => Ok(Provider::replay(p.clone())),
            Mode::Live => {
                let client = HttpProvider::from_env(p).map_err(|source| LlmError::Provider {
                    provider_id: p.provider_id.clone(),
                    source,
                })?;
                Ok(Provider::live(p.clone(), Arc::new(client)))
            }
        })
        .collect()
}

pub fn cmd_llm(cfg: &RunConfig, dry_run: bool) -> Result<LlmSummary, PipelineError> {
    let papers = load_papers(cfg)?;
    let planned = planned_requests(
        papers.len(),
        cfg.llm.providers.len(),
        cfg.llm.variants.len(),
        cfg.llm.samples,
    );
    let mut summary = LlmSummary {
        planned,
        papers: papers.len(),
        answered_slots: 0,
        missing_slots: 0,
        dry_run,
    };
    if dry_run {
        return Ok(summary);
    }
    let cache = match cfg.mode {
        Mode::Replay => CacheStore::open_existing(&cfg.cache_dir),
        Mode::Live => CacheStore::open(&cfg.cache_dir),
    }
    .map_err(LlmError::from)?;
    let providers = providers(cfg)?;
    let templates = templates(cfg);
    let opts = RunOptions {
        mode: cfg.mode,
        samples: cfg.llm.samples,
        render: RenderOptions {
            char_budget: cfg.llm.char_budget,
        },
        jobs: cfg.jobs,
    };
    let dir = answers_dir(cfg);
    fs::create_dir_all(&dir).map_err(io(format!("creating {}", dir.display())))?;
    for paper in &papers {
        let set = generate_answers(paper, &providers, &templates, &cache, &opts)?;
        summary.answered_slots += set.answered();
        summary.missing_slots += set.slots.len() - set.answered();
        let path = answer_path(cfg, &paper.paper_id);
        fs::write(&path, set.to_json()).map_err(io(format!("writing {}", path.display())))?;
    }
    info!(
        "{} answer slots filled, {} missing, over {} papers",
        summary.answered_slots, summary.missing_slots, summary.papers
    );
    Ok(summary)
}

fn load_scorer(cfg: &RunConfig, name: char, section: &ScorerSection) -> Result<Box<dyn BaseScorer>, PipelineError> {
    if let Some(p) = &section.scores {
        let s = ExternalScores::load(p).map_err(|e| validation(format!("{}: {e}", p.display())))?;
        return Ok(Box::new(s));
    }
    let path = model_path(cfg, name);
    require(&path, "model file", "run `refsource train` first")?;
    let model = load_model(&path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    Ok(Box::new(model))
}

fn read_answers(cfg: &RunConfig, paper_id: &str) -> Result<AnswerSet, PipelineError> {
    let path = answer_path(cfg, paper_id);
    require(&path, "answer set", "run `refsource llm` first")?;
    let text = fs::read_to_string(&path).map_err(io(format!("reading {}", path.display())))?;
    let set = AnswerSet::from_json(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    if set.paper_id != paper_id {
        return Err(validation(format!("{} belongs to paper {}", path.display(), set.paper_id)));
    }
    Ok(set)
}

pub fn cmd_score(cfg: &RunConfig, ablation: Ablation) -> Result<Vec<ScoredReference>, PipelineError> {
    let papers = load_papers(cfg)?;
    let mut base: BTreeMap<String, BTreeMap<u32, (f64, f64)>> = BTreeMap::new();
    if ablation != Ablation::LlmOnly {
        let schema = schema(cfg)?;
        let rows = read_features(cfg, &schema)?;
        let a = load_scorer(cfg, 'a', &cfg.base.a)?;
        let b = load_scorer(cfg, 'b', &cfg.base.b)?;
        let probs: Vec<(f64, f64)> = rows
            .par_iter()
            .map(|r| Ok((a.score(r)?, b.score(r)?)))
            .collect::<Result<_, GbdtError>>()
            .map_err(validation)?;
        let known: BTreeSet<&str> = papers.iter().map(|p| p.paper_id.as_str()).collect();
        for (r, p) in rows.into_iter().zip(probs) {
            if !known.contains(r.paper_id.as_str()) {
                return Err(validation(format!("feature matrix row for unknown paper {}", r.paper_id)));
            }
            base.entry(r.paper_id).or_default().insert(r.ref_index, p);
        }
    }
    let answers: Vec<AnswerSet> = papers
        .iter()
        .map(|p| match ablation {
            Ablation::BaseOnly => Ok(AnswerSet::empty(&p.paper_id)),
            _ => read_answers(cfg, &p.paper_id),
        })
        .collect::<Result<_, _>>()?;
    let empty = BTreeMap::new();
    let per_paper: Vec<Vec<ScoredReference>> = papers
        .par_iter()
        .zip(&answers)
        .map(|(p, set)| {
            let b = base.get(&p.paper_id).unwrap_or(&empty);
            score_paper_ablated(p, b, set, &cfg.ensemble, ablation)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<ScoredReference> = per_paper.into_iter().flatten().collect();
    ensure_output_dir(cfg)?;
    let path = scores_path(cfg, ablation);
    write_scores(&path, &rows).map_err(io(format!("writing {}", path.display())))?;
    info!("wrote {} {} scores to {}", rows.len(), ablation.as_str(), path.display());
    Ok(rows)
}

/// Per-paper AP over the evaluation split; papers without gold labels are
/// skipped.
pub fn evaluate(papers: &[&PaperRecord], scores: &[ScoredReference]) -> Result<EvalReport, PipelineError> {
    let mut by_paper: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for s in scores {
        by_paper.entry(s.paper_id.as_str()).or_default().push((s.ref_index, s.p_final));
    }
    let mut aps = Vec::with_capacity(papers.len());
    for p in papers {
        let ap = match &p.source_labels {
            Some(labels) if !labels.is_empty() => {
                let rows = by_paper
                    .get(p.paper_id.as_str())
                    .ok_or_else(|| validation(format!("scores file has no rows for paper {}", p.paper_id)))?;
                let ranking = RankedList::from_scores(rows.iter().copied())?;
                Some(average_precision(&ranking, labels)?)
            }
            _ => None,
        };
        aps.push(PaperAp {
            paper_id: p.paper_id.clone(),
            ap,
        });
    }
    Ok(mean_average_precision(aps)?)
}

pub fn cmd_eval(cfg: &RunConfig, ablation: Ablation) -> Result<EvalReport, PipelineError> {
    let papers = load_papers(cfg)?;
    let path = scores_path(cfg, ablation);
    require(&path, "scores file", "run `refsource score` with the same --ablate first")?;
    let scores = read_scores(&path).map_err(validation)?;
    let report = evaluate(&evaluation_papers(cfg, &papers), &scores)?;
    let out = report_path(cfg, ablation);
    fs::write(&out, report.render(cfg.report.format)).map_err(io(format!("writing {}", out.display())))?;
    info!("{} MAP {:.4} over {} papers", ablation.as_str(), report.map, report.evaluated);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub featurize: FeaturizeSummary,
    pub trained: Vec<TrainedScorer>,
    pub llm: Option<LlmSummary>,
    pub reports: Vec<(Ablation, EvalReport)>,
}

/// Runs every stage in order. Without an explicit ablation all three
/// variants are scored and evaluated.
pub fn cmd_pipeline(cfg: &RunConfig, ablation: Option<Ablation>) -> Result<PipelineSummary, PipelineError> {
    let ablations: Vec<Ablation> = match ablation {
        Some(a) => vec![a],
        None => vec![Ablation::Combined, Ablation::BaseOnly, Ablation::LlmOnly],
    };
    let featurize = cmd_featurize(cfg)?;
    let needs_base = ablations.iter().any(|&a| a != Ablation::LlmOnly);
    let needs_llm = ablations.iter().any(|&a| a != Ablation::BaseOnly);
    let trained = if needs_base { cmd_train(cfg)? } else { Vec::new() };
    let llm = if needs_llm { Some(cmd_llm(cfg, false)?) } else { None };
    let mut reports = Vec::new();
    for a in ablations {
        cmd_score(cfg, a)?;
        reports.push((a, cmd_eval(cfg, a)?));
    }
    Ok(PipelineSummary {
        featurize,
        trained,
        llm,
        reports,
    })
}

/// Validates `input` and writes it, re-serialized, to the configured corpus
/// path.
pub fn cmd_ingest(cfg: &RunConfig, input: &Path) -> Result<usize, PipelineError> {
    let papers = load_corpus(input)?;
    write_corpus(&cfg.corpus, &papers)?;
    Ok(papers.len())
}
