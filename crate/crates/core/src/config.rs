//! The TOML run configuration. Relative paths resolve against the directory
//! holding the config file; command-line flags override file values.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::DEFAULT_CONTEXT_WINDOW;
use crate::ensemble::EnsembleConfig;
use crate::eval::ReportFormat;
use crate::features::FeatureSchema;
use crate::gbdt::TrainConfig;
use crate::llm::{Mode, PromptVariant, ProviderProfile, DEFAULT_CHAR_BUDGET};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "d_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    /// Seeds the train/held-out paper split.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub base: BaseSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub report: ReportSection,
}

fn d_output_dir() -> PathBuf {
    "out".into()
}
fn d_cache_dir() -> PathBuf {
    "cache".into()
}
fn d_jobs() -> usize {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    #[serde(default = "d_window")]
    pub context_window: usize,
    /// Catalog features to keep; all when absent.
    #[serde(default)]
    pub include: Option<Vec<String>>,
    #[serde(default)]
    pub exclude: Vec<String>,
}

fn d_window() -> usize {
    DEFAULT_CONTEXT_WINDOW
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            context_window: d_window(),
            include: None,
            exclude: Vec::new(),
        }
    }
}

impl FeatureSection {
    pub fn schema(&self) -> Result<FeatureSchema, ConfigError> {
        FeatureSchema::catalog_subset(self.include.as_deref(), &self.exclude)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// Only papers held out from base-scorer training.
    #[default]
    Heldout,
    All,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Share of labeled papers used to train the base scorers.
    #[serde(default = "d_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub eval: EvalSplit,
}

fn d_train_fraction() -> f64 {
    0.8
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: d_train_fraction(),
            eval: EvalSplit::Heldout,
        }
    }
}

/// One base scorer: a boosted model trained from a preset with optional
/// overrides, or an external score file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSection {
    /// `paper_id,ref_index,prob` file used instead of training.
    pub scores: Option<PathBuf>,
    pub trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub learning_rate: Option<f64>,
    pub min_samples_leaf: Option<usize>,
    pub feature_subsample: Option<f64>,
    pub row_subsample: Option<f64>,
    pub bins: Option<usize>,
    pub seed: Option<u64>,
}

impl ScorerSection {
    pub fn train_config(&self, preset: TrainConfig) -> TrainConfig {
        TrainConfig {
            trees: self.trees.unwrap_or(preset.trees),
            max_depth: self.max_depth.unwrap_or(preset.max_depth),
            learning_rate: self.learning_rate.unwrap_or(preset.learning_rate),
            min_samples_leaf: self.min_samples_leaf.unwrap_or(preset.min_samples_leaf),
            feature_subsample: self.feature_subsample.unwrap_or(preset.feature_subsample),
            row_subsample: self.row_subsample.unwrap_or(preset.row_subsample),
            bins: self.bins.unwrap_or(preset.bins),
            seed: self.seed.unwrap_or(preset.seed),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    #[serde(default)]
    pub a: ScorerSection,
    #[serde(default)]
    pub b: ScorerSection,
}

impl BaseSection {
    pub fn train_a(&self) -> TrainConfig {
        self.a.train_config(TrainConfig::preset_a())
    }

    pub fn train_b(&self) -> TrainConfig {
        self.b.train_config(TrainConfig::preset_b())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default = "d_variants")]
    pub variants: Vec<PromptVariant>,
    #[serde(default = "d_samples")]
    pub samples: u32,
    #[serde(default = "d_char_budget")]
    pub char_budget: usize,
    #[serde(default)]
    pub providers: Vec<ProviderProfile>,
}

fn d_variants() -> Vec<PromptVariant> {
    vec![PromptVariant::Base]
}
fn d_samples() -> u32 {
    1
}
fn d_char_budget() -> usize {
    DEFAULT_CHAR_BUDGET
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            variants: d_variants(),
            samples: d_samples(),
            char_budget: d_char_budget(),
            providers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default)]
    pub format: ReportFormat,
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub jobs: Option<usize>,
    pub format: Option<ReportFormat>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads, resolves paths, applies overrides and validates.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let cfg = Self::load_unvalidated(path, overrides)?;
        cfg.checked()
    }

    /// As [`RunConfig::load`] but without checking that the corpus exists,
    /// for commands that create it.
    pub fn load_for_ingest(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = Self::load_unvalidated(path, overrides)?;
        cfg.validate_settings()?;
        Ok(cfg)
    }

    fn checked(mut self) -> Result<Self, ConfigError> {
        self.validate()?;
        Ok(self)
    }

    fn load_unvalidated(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus);
        resolve(base, &mut self.output_dir);
        resolve(base, &mut self.cache_dir);
        for s in [&mut self.base.a, &mut self.base.b] {
            if let Some(p) = s.scores.as_mut() {
                resolve(base, p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(f) = o.format {
            self.report.format = f;
        }
    }

    /// Checks invariants and normalizes the ensemble group weights.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        if !self.corpus.is_file() {
            return Err(ConfigError::Invalid(format!(
                "corpus {} does not exist",
                self.corpus.display()
            )));
        }
        self.validate_settings()
    }

    fn validate_settings(&mut self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.jobs == 0 {
            return invalid("jobs must be at least 1".into());
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return invalid(format!("split.train_fraction {f} must be in (0, 1)"));
        }
        self.features.schema()?;
        for (name, s, t) in [
            ("a", &self.base.a, self.base.train_a()),
            ("b", &self.base.b, self.base.train_b()),
        ] {
            match &s.scores {
                Some(p) if !p.is_file() => {
                    return invalid(format!("base.{name}.scores {} does not exist", p.display()))
                }
                Some(_) => {}
                None => t
                    .validate()
                    .map_err(|e| ConfigError::Invalid(format!("base.{name}: {e}")))?,
            }
        }
        let mut ids = BTreeSet::new();
        for p in &self.llm.providers {
            p.validate()
                .map_err(|e| ConfigError::Invalid(format!("provider {}: {e}", p.provider_id)))?;
            if !ids.insert(p.provider_id.as_str()) {
                return invalid(format!("duplicate provider_id {}", p.provider_id));
            }
        }
        let variants: BTreeSet<_> = self.llm.variants.iter().collect();
        if variants.len() != self.llm.variants.len() {
            return invalid("llm.variants lists a variant twice".into());
        }
        if self.llm.samples == 0 {
            return invalid("llm.samples must be at least 1".into());
        }
        if self.llm.char_budget == 0 {
            return invalid("llm.char_budget must be positive".into());
        }
        self.ensemble = self
            .ensemble
            .clone()
            .normalized()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        fs::write(dir.join("corpus.jsonl"), "").unwrap();
        let p = dir.join("run.toml");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "corpus = \"corpus.jsonl\"\n");
        let cfg = RunConfig::load(&p, &Overrides::default()).unwrap();
        assert_eq!(cfg.corpus, dir.path().join("corpus.jsonl"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.mode, Mode::Replay);
        assert_eq!(cfg.ensemble, EnsembleConfig::default());
        assert_eq!(cfg.base.train_a(), TrainConfig::preset_a());
        assert_eq!(cfg.base.train_b(), TrainConfig::preset_b());
        assert_eq!(cfg.llm.variants, vec![PromptVariant::Base]);
    }

    #[test]
    fn flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "corpus = \"corpus.jsonl\"\nmode = \"live\"\njobs = 2\n[report]\nformat = \"machine\"\n",
        );
        let cfg = RunConfig::load(&p, &Overrides::default()).unwrap();
        assert_eq!((cfg.mode, cfg.jobs), (Mode::Live, 2));
        let o = Overrides {
            mode: Some(Mode::Replay),
            jobs: Some(8),
            format: Some(ReportFormat::Plain),
        };
        let cfg = RunConfig::load(&p, &o).unwrap();
        assert_eq!((cfg.mode, cfg.jobs, cfg.report.format), (Mode::Replay, 8, ReportFormat::Plain));
    }

    #[test]
    fn overrides_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "corpus = \"corpus.jsonl\"\n[base.a]\ntrees = 10\n[ensemble]\nw_f = 0.1\n",
        );
        let cfg = RunConfig::load(&p, &Overrides::default()).unwrap();
        assert_eq!(cfg.base.train_a().trees, 10);
        assert_eq!(cfg.base.train_a().max_depth, 6);
        assert_eq!(cfg.ensemble.w_f, 0.1);

        for bad in [
            "corpus = \"missing.jsonl\"\n",
            "corpus = \"corpus.jsonl\"\n[ensemble]\nw_lgb = 0.9\n",
            "corpus = \"corpus.jsonl\"\nunknown = 1\n",
            "corpus = \"corpus.jsonl\"\n[features]\nexclude = [\"nope\"]\n",
            "corpus = \"corpus.jsonl\"\n[llm]\nvariants = [\"base\", \"base\"]\n",
            "corpus = \"corpus.jsonl\"\n[split]\ntrain_fraction = 1.0\n",
        ] {
            let p = write(dir.path(), bad);
            assert!(RunConfig::load(&p, &Overrides::default()).is_err(), "{bad}");
        }
    }
}
