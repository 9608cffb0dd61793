//! Gradient-boosted decision trees for binary classification.
//!
//! One engine backs both base scorers; [`TrainConfig::preset_a`] and
//! [`TrainConfig::preset_b`] differ in depth, rate and sampling so that the
//! two scorers disagree enough to be worth blending.

mod external;
mod io;
mod train;

pub use external::ExternalScores;
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use train::{fit, fit_traced, FitTrace};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, SchemaFingerprint};

/// Log-odds are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 15.0;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training matrix is empty")]
    EmptyMatrix,
    #[error("training labels contain a single class ({0})")]
    SingleClass(u8),
    #[error("row {row} ({paper_id}, {ref_index}) has no label")]
    MissingLabel {
        row: usize,
        paper_id: String,
        ref_index: u32,
    },
    #[error("row {0} has a non-finite feature value")]
    NonFinite(usize),
    #[error("schema mismatch: model expects {expected}, got {found}")]
    SchemaMismatch {
        expected: SchemaFingerprint,
        found: SchemaFingerprint,
    },
    #[error("row length {found} does not match schema length {expected}")]
    Width { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u8, found: u8 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("no external score for ({paper_id}, {ref_index})")]
    MissingScore { paper_id: String, ref_index: u32 },
    #[error("external scores line {line}: {message}")]
    BadScoreLine { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub feature_subsample: f64,
    pub row_subsample: f64,
    pub bins: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset_a()
    }
}

impl TrainConfig {
    pub fn preset_a() -> Self {
        Self {
            trees: 400,
            max_depth: 6,
            learning_rate: 0.05,
            min_samples_leaf: 5,
            feature_subsample: 0.8,
            row_subsample: 0.8,
            bins: 64,
            seed: 1,
        }
    }

    pub fn preset_b() -> Self {
        Self {
            trees: 600,
            max_depth: 4,
            learning_rate: 0.03,
            min_samples_leaf: 5,
            feature_subsample: 0.9,
            row_subsample: 0.7,
            bins: 64,
            seed: 2,
        }
    }

    pub fn validate(&self) -> Result<(), GbdtError> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if self.max_depth == 0 {
            return Err(GbdtError::Config("max_depth must be positive".into()));
        }
        if !unit(self.learning_rate) {
            return Err(GbdtError::Config("learning_rate must be in (0, 1]".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(GbdtError::Config("min_samples_leaf must be positive".into()));
        }
        if !unit(self.feature_subsample) || !unit(self.row_subsample) {
            return Err(GbdtError::Config("subsample ratios must be in (0, 1]".into()));
        }
        if self.bins < 2 || self.bins > usize::from(u16::MAX) {
            return Err(GbdtError::Config("bins must be in 2..=65535".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// A regression tree stored as a node arena with the root at position 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn stump(feature: usize, threshold: f64, below: f64, above: f64) -> Self {
        Self {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: below },
                Node::Leaf { value: above },
            ],
        }
    }

    pub(crate) fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    fn check(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(format!("non-finite leaf at node {i}"))
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features {
                        return Err(format!("node {i} uses feature {feature} >= {n_features}"));
                    }
                    if threshold.is_nan() {
                        return Err(format!("node {i} has NaN threshold"));
                    }
                    // children strictly after parents rules out cycles
                    if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() {
                        return Err(format!("node {i} has invalid children"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Log-odds of the training positive rate.
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub schema: SchemaFingerprint,
    pub trees: Vec<Tree>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl BoostedModel {
    pub fn from_parts(
        base_score: f64,
        learning_rate: f64,
        n_features: usize,
        schema: SchemaFingerprint,
        trees: Vec<Tree>,
    ) -> Result<Self, GbdtError> {
        let model = Self {
            base_score,
            learning_rate,
            n_features,
            schema,
            trees,
        };
        model.check()?;
        Ok(model)
    }

    pub(crate) fn check(&self) -> Result<(), GbdtError> {
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return Err(GbdtError::InvalidModel("non-finite base score or rate".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.check(self.n_features)
                .map_err(|e| GbdtError::InvalidModel(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }

    /// Unclamped log-odds for a raw row.
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Probability for a raw row; strictly inside (0, 1).
    pub fn predict_row(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if x.len() != self.n_features {
            return Err(GbdtError::Width {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(sigmoid(self.raw_score(x).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
    }

    pub fn predict_proba(&self, v: &FeatureVector) -> Result<f64, GbdtError> {
        if v.schema != self.schema {
            return Err(GbdtError::SchemaMismatch {
                expected: self.schema,
                found: v.schema,
            });
        }
        self.predict_row(&v.values)
    }
}

/// Anything that turns a feature vector into a source probability.
pub trait BaseScorer: Sync {
    fn score(&self, v: &FeatureVector) -> Result<f64, GbdtError>;
}

impl BaseScorer for BoostedModel {
    fn score(&self, v: &FeatureVector) -> Result<f64, GbdtError> {
        self.predict_proba(v)
    }
}
