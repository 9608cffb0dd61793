//! Score fusion: the weighted base blend plus a bonus derived from bucketed
//! LLM confidences, reduced for references the LLMs collectively rate low.
//!
//! ```text
//! p_base  = w_lgb * p_a + w_cb * p_b
//! bonus   = sum_g w_g * mean_{k in g} prob2score(p_k)   (weights renormalized
//!                                                        over usable groups)
//! bonus  /= c_neg   if percentile(confidences, p_neg) < p_threshold_neg
//! p_final = p_base + w_f * bonus
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PaperRecord;
use crate::llm::AnswerSet;
use crate::numfmt::fmt_sig9;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("percentile of an empty list")]
    EmptyPercentile,
    #[error("invalid ensemble config: {0}")]
    Config(String),
    #[error("no weight configured for LLM group {0}")]
    UnweightedGroup(String),
    #[error("paper {paper_id}: no base score for reference {ref_index}")]
    MissingBaseScore { paper_id: String, ref_index: u32 },
}

fn d_w_lgb() -> f64 {
    0.4
}
fn d_w_cb() -> f64 {
    0.6
}
fn d_w_f() -> f64 {
    0.035
}
fn d_p_neg() -> f64 {
    0.4
}
fn d_p_threshold_neg() -> f64 {
    0.2
}
fn d_c_neg() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "d_w_lgb")]
    pub w_lgb: f64,
    #[serde(default = "d_w_cb")]
    pub w_cb: f64,
    #[serde(default = "d_w_f")]
    pub w_f: f64,
    #[serde(default = "d_p_neg")]
    pub p_neg: f64,
    #[serde(default = "d_p_threshold_neg")]
    pub p_threshold_neg: f64,
    #[serde(default = "d_c_neg")]
    pub c_neg: f64,
    /// Per-group weights; empty means uniform.
    #[serde(default)]
    pub group_weights: BTreeMap<String, f64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            w_lgb: d_w_lgb(),
            w_cb: d_w_cb(),
            w_f: d_w_f(),
            p_neg: d_p_neg(),
            p_threshold_neg: d_p_threshold_neg(),
            c_neg: d_c_neg(),
            group_weights: BTreeMap::new(),
        }
    }
}

impl EnsembleConfig {
    /// Checks ranges and rescales group weights to sum to 1.
    pub fn normalized(mut self) -> Result<Self, EnsembleError> {
        let bad = |m: &str| Err(EnsembleError::Config(m.to_string()));
        let finite = [
            self.w_lgb,
            self.w_cb,
            self.w_f,
            self.p_neg,
            self.p_threshold_neg,
            self.c_neg,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.w_lgb < 0.0 || self.w_cb < 0.0 || (self.w_lgb + self.w_cb - 1.0).abs() > 1e-9 {
            return bad("w_lgb and w_cb must be non-negative and sum to 1");
        }
        if self.w_f < 0.0 {
            return bad("w_f must be non-negative");
        }
        if !(self.p_neg > 0.0 && self.p_neg <= 1.0) {
            return bad("p_neg must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.p_threshold_neg) {
            return bad("p_threshold_neg must be in [0, 1]");
        }
        if self.c_neg <= 1.0 {
            return bad("c_neg must be greater than 1");
        }
        if !self.group_weights.is_empty() {
            if self.group_weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad("group weights must be finite and non-negative");
            }
            let total: f64 = self.group_weights.values().sum();
            if total <= 0.0 {
                return bad("group weights sum to zero");
            }
            for w in self.group_weights.values_mut() {
                *w /= total;
            }
        }
        Ok(self)
    }

    fn group_weight(&self, group: &str) -> Result<f64, EnsembleError> {
        if self.group_weights.is_empty() {
            return Ok(1.0);
        }
        self.group_weights
            .get(group)
            .copied()
            .ok_or_else(|| EnsembleError::UnweightedGroup(group.to_string()))
    }
}

/// Buckets a confidence: 3 for `x >= 0.9`, 2 for `[0.5, 0.9)`, 1 for
/// `(0.4, 0.5)`, 0 for `x <= 0.4`.
pub fn prob2score(x: f64) -> Result<u8, EnsembleError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(EnsembleError::OutOfRange(x));
    }
    Ok(if x >= 0.9 {
        3
    } else if x >= 0.5 {
        2
    } else if x > 0.4 {
        1
    } else {
        0
    })
}

pub fn combine_base(p_a: f64, p_b: f64, cfg: &EnsembleConfig) -> Result<f64, EnsembleError> {
    for p in [p_a, p_b] {
        if !(0.0..=1.0).contains(&p) {
            return Err(EnsembleError::OutOfRange(p));
        }
    }
    Ok(cfg.w_lgb * p_a + cfg.w_cb * p_b)
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(p * n)` of the
/// ascending sort.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Result<f64, EnsembleError> {
    if values.is_empty() {
        return Err(EnsembleError::EmptyPercentile);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(EnsembleError::OutOfRange(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // tolerance keeps e.g. 0.35 * 20 from rounding up to rank 8
    let rank = ((p * n as f64) - 1e-9).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    /// Mean bucket score over the group's answered slots; `None` when every
    /// slot in the group is missing.
    pub aggregate: Option<f64>,
}

/// Group-weighted mean bucket score for one reference. Slots that answered
/// but left the reference out count as confidence 0.
pub fn group_bonus(
    answers: &AnswerSet,
    ref_index: u32,
    cfg: &EnsembleConfig,
) -> Result<(f64, Vec<GroupScore>), EnsembleError> {
    let mut breakdown = Vec::new();
    let mut weighted = 0.0;
    let mut weight_total = 0.0;
    for group in answers.groups() {
        let weight = cfg.group_weight(group)?;
        let mut sum = 0u32;
        let mut n = 0u32;
        for slot in answers.slots.iter().filter(|s| s.group == group) {
            if let Some(conf) = slot.confidences() {
                let p = conf.get(&ref_index).copied().unwrap_or(0.0);
                sum += u32::from(prob2score(p)?);
                n += 1;
            }
        }
        let aggregate = (n > 0).then(|| f64::from(sum) / f64::from(n));
        if let Some(a) = aggregate {
            weighted += weight * a;
            weight_total += weight;
        }
        breakdown.push(GroupScore {
            group: group.to_string(),
            aggregate,
        });
    }
    let bonus = if weight_total > 0.0 {
        weighted / weight_total
    } else {
        0.0
    };
    Ok((bonus, breakdown))
}

/// Confidences stated for `ref_index` by answered slots. Slots that left the
/// reference out contribute nothing here.
pub fn stated_confidences(answers: &AnswerSet, ref_index: u32) -> Vec<f64> {
    answers
        .slots
        .iter()
        .filter_map(|s| s.confidences()?.get(&ref_index).copied())
        .collect()
}

/// Divides the bonus by `c_neg` when the `p_neg` percentile of the stated
/// confidences falls below `p_threshold_neg`.
pub fn apply_negative_adjustment(bonus: f64, ref_probs: &[f64], cfg: &EnsembleConfig) -> (f64, bool) {
    match percentile_nearest_rank(ref_probs, cfg.p_neg) {
        Ok(q) if q < cfg.p_threshold_neg => (bonus / cfg.c_neg, true),
        _ => (bonus, false),
    }
}

pub fn final_score(p_base: f64, bonus: f64, cfg: &EnsembleConfig) -> f64 {
    p_base + cfg.w_f * bonus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredReference {
    pub paper_id: String,
    pub ref_index: u32,
    pub p_base: f64,
    /// Bonus after any demotion.
    pub score_bonus: f64,
    pub demoted: bool,
    pub p_final: f64,
    pub breakdown: Vec<GroupScore>,
}

/// Which evidence reaches the final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Combined,
    /// Base scorers only (`w_f = 0`).
    BaseOnly,
    /// Rank by the bonus alone (`p_base = 0`, `w_f = 1`).
    LlmOnly,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Combined => "combined",
            Ablation::BaseOnly => "base-only",
            Ablation::LlmOnly => "llm-only",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "combined" => Ok(Ablation::Combined),
            "base-only" => Ok(Ablation::BaseOnly),
            "llm-only" => Ok(Ablation::LlmOnly),
            _ => Err(format!("unknown ablation {s:?} (combined, base-only, llm-only)")),
        }
    }
}

/// Fuses base scores `(p_a, p_b)` per reference with the paper's answers.
pub fn score_paper(
    paper: &PaperRecord,
    base: &BTreeMap<u32, (f64, f64)>,
    answers: &AnswerSet,
    cfg: &EnsembleConfig,
) -> Result<Vec<ScoredReference>, EnsembleError> {
    score_paper_ablated(paper, base, answers, cfg, Ablation::Combined)
}

pub fn score_paper_ablated(
    paper: &PaperRecord,
    base: &BTreeMap<u32, (f64, f64)>,
    answers: &AnswerSet,
    cfg: &EnsembleConfig,
    ablation: Ablation,
) -> Result<Vec<ScoredReference>, EnsembleError> {
    let mut effective = cfg.clone();
    match ablation {
        Ablation::Combined => {}
        Ablation::BaseOnly => effective.w_f = 0.0,
        Ablation::LlmOnly => effective.w_f = 1.0,
    }
    paper
        .references
        .iter()
        .map(|r| {
            let p_base = match ablation {
                Ablation::LlmOnly => 0.0,
                _ => {
                    let &(p_a, p_b) =
                        base.get(&r.index)
                            .ok_or_else(|| EnsembleError::MissingBaseScore {
                                paper_id: paper.paper_id.clone(),
                                ref_index: r.index,
                            })?;
                    combine_base(p_a, p_b, &effective)?
                }
            };
            let (raw_bonus, breakdown) = group_bonus(answers, r.index, &effective)?;
            let (score_bonus, demoted) =
                apply_negative_adjustment(raw_bonus, &stated_confidences(answers, r.index), &effective);
            Ok(ScoredReference {
                paper_id: paper.paper_id.clone(),
                ref_index: r.index,
                p_base,
                score_bonus,
                demoted,
                p_final: final_score(p_base, score_bonus, &effective),
                breakdown,
            })
        })
        .collect()
}

pub fn write_scores(path: impl AsRef<Path>, rows: &[ScoredReference]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "paper_id,ref_index,p_base,score_bonus,demoted,p_final")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.paper_id,
            r.ref_index,
            fmt_sig9(r.p_base),
            fmt_sig9(r.score_bonus),
            r.demoted,
            fmt_sig9(r.p_final)
        )?;
    }
    w.flush()
}

#[derive(Deserialize)]
struct ScoreRow {
    paper_id: String,
    ref_index: u32,
    p_base: f64,
    score_bonus: f64,
    demoted: bool,
    p_final: f64,
}

/// Reads a file written by [`write_scores`]. Group breakdowns are not
/// stored there, so they come back empty.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredReference>, String> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    reader
        .deserialize::<ScoreRow>()
        .map(|row| {
            let r = row.map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(ScoredReference {
                paper_id: r.paper_id,
                ref_index: r.ref_index,
                p_base: r.p_base,
                score_bonus: r.score_bonus,
                demoted: r.demoted,
                p_final: r.p_final,
                breakdown: Vec::new(),
            })
        })
        .collect()
}
