//! Confidence judgments from completion providers.
//!
//! Each (provider, prompt variant, sample) triple is one answer slot. A slot
//! either holds a parsed map of reference index to confidence, or is missing
//! (request failed, response unparsable, prompt not applicable). Missing is
//! never the same thing as a confidence of zero.

mod cache;
mod generate;
mod parse;
mod prompt;
mod provider;

pub use cache::{cache_key, CacheError, CacheStore, CompletionRecord};
pub use generate::{generate_answers, planned_requests, Mode, Provider, RunOptions};
pub use parse::{parse_answer, ParseWarning, ParsedAnswer, INSPIRATION_LABELS};
pub use prompt::{render_prompt, PromptTemplate, RenderOptions, DEFAULT_CHAR_BUDGET};
pub use provider::{
    ApiKind, CompletionProvider, CompletionRequest, HttpProvider, ProviderError, ProviderProfile,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("cannot render {variant} prompt for {paper_id}: {message}")]
    MissingPlaceholder {
        variant: PromptVariant,
        paper_id: String,
        message: String,
    },
    #[error("replay cache miss for {paper_id} ({provider_id}, {variant}, sample {sample}): digest {digest}")]
    CacheMiss {
        paper_id: String,
        provider_id: String,
        variant: PromptVariant,
        sample: u32,
        digest: String,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("provider {provider_id}: {source}")]
    Provider {
        provider_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("invalid answer set: {0}")]
    InvalidAnswers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Base,
    Inspiration,
    TitleEnriched,
    MetaOptimized,
    NotesBased,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 5] = [
        PromptVariant::Base,
        PromptVariant::Inspiration,
        PromptVariant::TitleEnriched,
        PromptVariant::MetaOptimized,
        PromptVariant::NotesBased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Base => "base",
            PromptVariant::Inspiration => "inspiration",
            PromptVariant::TitleEnriched => "title_enriched",
            PromptVariant::MetaOptimized => "meta_optimized",
            PromptVariant::NotesBased => "notes_based",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown prompt variant {s:?}"))
    }
}

/// Group id shared by all samples of one provider under one prompt variant.
pub fn group_id(provider_id: &str, variant: PromptVariant) -> String {
    format!("{provider_id}/{variant}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SlotOutcome {
    Answered {
        #[serde(with = "index_keys")]
        confidences: BTreeMap<u32, f64>,
    },
    Missing { reason: String },
}

// Internally tagged enums buffer their content, which loses serde_json's
// string-to-integer key coercion; keys go through strings explicitly.
mod index_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|k| (k, v))
                    .map_err(|_| D::Error::custom(format!("reference key {k:?} is not an index")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSlot {
    /// 1-based slot number k.
    pub slot: usize,
    pub provider_id: String,
    pub variant: PromptVariant,
    pub sample: u32,
    pub group: String,
    pub outcome: SlotOutcome,
}

impl AnswerSlot {
    pub fn confidences(&self) -> Option<&BTreeMap<u32, f64>> {
        match &self.outcome {
            SlotOutcome::Answered { confidences } => Some(confidences),
            SlotOutcome::Missing { .. } => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self.outcome, SlotOutcome::Missing { .. })
    }
}

/// All answer slots for one paper, ordered provider-major, then variant,
/// then sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub paper_id: String,
    pub slots: Vec<AnswerSlot>,
}

impl AnswerSet {
    pub fn empty(paper_id: impl Into<String>) -> Self {
        Self {
            paper_id: paper_id.into(),
            slots: Vec::new(),
        }
    }

    pub fn group_of(&self) -> BTreeMap<usize, &str> {
        self.slots.iter().map(|s| (s.slot, s.group.as_str())).collect()
    }

    /// Distinct group ids in first-seen order.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.slots {
            if !out.contains(&s.group.as_str()) {
                out.push(&s.group);
            }
        }
        out
    }

    pub fn answered(&self) -> usize {
        self.slots.iter().filter(|s| !s.is_missing()).count()
    }

    /// Checks slot numbering and that every confidence lies in [0, 1].
    pub fn validate(&self) -> Result<(), LlmError> {
        for (i, s) in self.slots.iter().enumerate() {
            if s.slot != i + 1 {
                return Err(LlmError::InvalidAnswers(format!(
                    "{}: slot {} at position {}",
                    self.paper_id,
                    s.slot,
                    i + 1
                )));
            }
            if let Some(c) = s.confidences() {
                if let Some((r, p)) = c.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
                    return Err(LlmError::InvalidAnswers(format!(
                        "{}: slot {} confidence {p} for reference {r}",
                        self.paper_id, s.slot
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("answer sets serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let set: Self =
            serde_json::from_str(text).map_err(|e| LlmError::InvalidAnswers(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in PromptVariant::ALL {
            assert_eq!(v.as_str().parse::<PromptVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert!("nope".parse::<PromptVariant>().is_err());
    }

    #[test]
    fn answer_set_json_and_validation() {
        let set = AnswerSet {
            paper_id: "p".into(),
            slots: vec![
                AnswerSlot {
                    slot: 1,
                    provider_id: "a".into(),
                    variant: PromptVariant::Base,
                    sample: 0,
                    group: group_id("a", PromptVariant::Base),
                    outcome: SlotOutcome::Answered {
                        confidences: [(3, 0.5)].into_iter().collect(),
                    },
                },
                AnswerSlot {
                    slot: 2,
                    provider_id: "b".into(),
                    variant: PromptVariant::Base,
                    sample: 0,
                    group: group_id("b", PromptVariant::Base),
                    outcome: SlotOutcome::Missing {
                        reason: "timeout".into(),
                    },
                },
            ],
        };
        let back = AnswerSet::from_json(&set.to_json()).unwrap();
        assert_eq!(back, set);
        assert_eq!(set.groups(), vec!["a/base", "b/base"]);
        assert_eq!(set.answered(), 1);
        // missing is its own state, not an empty or zero map
        assert!(set.to_json().contains("\"status\": \"missing\""));

        let mut bad = set.clone();
        bad.slots[0].outcome = SlotOutcome::Answered {
            confidences: [(3, 1.5)].into_iter().collect(),
        };
        assert!(bad.validate().is_err());
    }
}
