//! Ranking metrics: per-paper average precision, mean average precision and
//! ROC AUC.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt_sig9;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("relevant index {0} is not in the ranking")]
    UnknownRelevant(u32),
    #[error("no paper could be evaluated")]
    NothingEvaluated,
    #[error("AUC needs both classes")]
    SingleClass,
    #[error("score is NaN")]
    NanScore,
}

/// References ordered by descending score, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    items: Vec<(u32, f64)>,
}

impl RankedList {
    pub fn from_scores(scores: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, EvalError> {
        let mut items: Vec<(u32, f64)> = scores.into_iter().collect();
        if items.iter().any(|(_, s)| s.is_nan()) {
            return Err(EvalError::NanScore);
        }
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(Self { items })
    }

    pub fn items(&self) -> &[(u32, f64)] {
        &self.items
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().map(|(i, _)| *i)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn average_precision(ranking: &RankedList, relevant: &BTreeSet<u32>) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let present: BTreeSet<u32> = ranking.indices().collect();
    if let Some(&missing) = relevant.iter().find(|r| !present.contains(r)) {
        return Err(EvalError::UnknownRelevant(missing));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, idx) in ranking.indices().enumerate() {
        if relevant.contains(&idx) {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperAp {
    pub paper_id: String,
    /// `None` when the paper was skipped.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub papers: Vec<PaperAp>,
    pub map: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

pub fn mean_average_precision(papers: Vec<PaperAp>) -> Result<EvalReport, EvalError> {
    let aps: Vec<f64> = papers.iter().filter_map(|p| p.ap).collect();
    if aps.is_empty() {
        return Err(EvalError::NothingEvaluated);
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok(EvalReport {
        evaluated: aps.len(),
        skipped: papers.len() - aps.len(),
        papers,
        map,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Plain,
    Machine,
}

impl EvalReport {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Machine => {
                let mut s = serde_json::to_string_pretty(&MachineReport::from(self))
                    .expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Plain => {
                let mut s = String::new();
                let width = self
                    .papers
                    .iter()
                    .map(|p| p.paper_id.len())
                    .max()
                    .unwrap_or(0)
                    .max("paper_id".len());
                let _ = writeln!(s, "{:<width$}  ap", "paper_id");
                for p in &self.papers {
                    let ap = p.ap.map_or_else(|| "skipped".to_string(), fmt_sig9);
                    let _ = writeln!(s, "{:<width$}  {ap}", p.paper_id);
                }
                let _ = writeln!(s);
                let _ = writeln!(s, "evaluated  {}", self.evaluated);
                let _ = writeln!(s, "skipped    {}", self.skipped);
                let _ = writeln!(s, "MAP        {}", fmt_sig9(self.map));
                s
            }
        }
    }
}

// Decimal strings keep the machine layout byte-stable.
#[derive(Serialize)]
struct MachineReport {
    papers: Vec<MachinePaper>,
    summary: MachineSummary,
}

#[derive(Serialize)]
struct MachinePaper {
    paper_id: String,
    ap: Option<String>,
}

#[derive(Serialize)]
struct MachineSummary {
    evaluated: usize,
    skipped: usize,
    map: String,
}

impl From<&EvalReport> for MachineReport {
    fn from(r: &EvalReport) -> Self {
        Self {
            papers: r
                .papers
                .iter()
                .map(|p| MachinePaper {
                    paper_id: p.paper_id.clone(),
                    ap: p.ap.map(fmt_sig9),
                })
                .collect(),
            summary: MachineSummary {
                evaluated: r.evaluated,
                skipped: r.skipped,
                map: fmt_sig9(r.map),
            },
        }
    }
}

/// Rank-based ROC AUC; tied scores give half credit.
pub fn roc_auc(scored: &[(f64, bool)]) -> Result<f64, EvalError> {
    if scored.iter().any(|(s, _)| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let pos = scored.iter().filter(|(_, l)| *l).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_here = sorted[i..j].iter().filter(|(_, l)| *l).count();
        rank_sum += avg_rank * pos_here as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[u32]) -> BTreeSet<u32> {
        xs.iter().copied().collect()
    }

    #[test]
    fn perfect_ranking() {
        let r = RankedList::from_scores([(1, 0.1), (2, 0.9), (3, 0.8), (4, 0.2)]).unwrap();
        assert_eq!(average_precision(&r, &set(&[2, 3])).unwrap(), 1.0);
    }

    #[test]
    fn relevant_at_one_and_three() {
        let r = RankedList::from_scores([(1, 0.9), (2, 0.5), (3, 0.1)]).unwrap();
        let ap = average_precision(&r, &set(&[1, 3])).unwrap();
        assert!((ap - 0.833333333).abs() < 1e-9);
        assert_eq!(ap, 0.5 * (1.0 + 2.0 / 3.0));
    }

    #[test]
    fn single_relevant_at_rank_four() {
        let r = RankedList::from_scores((1..=6).map(|i| (i, 1.0 / f64::from(i)))).unwrap();
        assert_eq!(average_precision(&r, &set(&[4])).unwrap(), 0.25);
    }

    #[test]
    fn errors() {
        let r = RankedList::from_scores([(1, 0.9)]).unwrap();
        assert_eq!(average_precision(&r, &set(&[])), Err(EvalError::EmptyRelevant));
        assert_eq!(average_precision(&r, &set(&[2])), Err(EvalError::UnknownRelevant(2)));
        assert_eq!(RankedList::from_scores([(1, f64::NAN)]), Err(EvalError::NanScore));
    }

    #[test]
    fn ties_break_by_index() {
        let a = RankedList::from_scores([(3, 0.5), (1, 0.5), (2, 0.7)]).unwrap();
        let b = RankedList::from_scores([(1, 0.5), (2, 0.7), (3, 0.5)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.indices().collect::<Vec<_>>(), vec![2, 1, 3]);
    }

    #[test]
    fn map_and_skip_policy() {
        let r = mean_average_precision(vec![
            PaperAp { paper_id: "a".into(), ap: Some(1.0) },
            PaperAp { paper_id: "b".into(), ap: Some(0.5) },
        ])
        .unwrap();
        assert_eq!(r.map, 0.75);

        let r = mean_average_precision(vec![
            PaperAp { paper_id: "a".into(), ap: Some(0.6) },
            PaperAp { paper_id: "b".into(), ap: None },
        ])
        .unwrap();
        assert_eq!((r.map, r.evaluated, r.skipped), (0.6, 1, 1));

        let r = mean_average_precision(
            (0..7).map(|i| PaperAp { paper_id: i.to_string(), ap: Some(0.29) }).collect(),
        )
        .unwrap();
        assert!((r.map - 0.29).abs() < 1e-15);

        assert_eq!(
            mean_average_precision(vec![PaperAp { paper_id: "a".into(), ap: None }]),
            Err(EvalError::NothingEvaluated)
        );
    }

    #[test]
    fn report_layouts() {
        let r = mean_average_precision(vec![
            PaperAp { paper_id: "a".into(), ap: Some(2.0 / 3.0) },
            PaperAp { paper_id: "bb".into(), ap: None },
        ])
        .unwrap();
        let plain = r.render(ReportFormat::Plain);
        assert!(plain.contains("a         0.666666667\n"));
        assert!(plain.contains("bb        skipped\n"));
        assert!(plain.ends_with("MAP        0.666666667\n"));
        let machine: serde_json::Value =
            serde_json::from_str(&r.render(ReportFormat::Machine)).unwrap();
        assert_eq!(machine["summary"]["map"], "0.666666667");
        assert_eq!(machine["papers"][1]["ap"], serde_json::Value::Null);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[(0.9, true), (0.8, true), (0.1, false)]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[(0.5, true), (0.5, false), (0.5, false)]).unwrap(), 0.5);
        let hand = [(0.9, true), (0.8, false), (0.4, true), (0.3, false)];
        assert_eq!(roc_auc(&hand).unwrap(), 0.75);
        assert_eq!(roc_auc(&[(0.1, true)]), Err(EvalError::SingleClass));
    }

    // Pair-counting oracle for AUC.
    fn auc_pairs(scored: &[(f64, bool)]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(sp, lp) in scored {
            if !lp {
                continue;
            }
            for &(sn, ln) in scored {
                if ln {
                    continue;
                }
                den += 1.0;
                num += if sp > sn { 1.0 } else if sp == sn { 0.5 } else { 0.0 };
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            pts in prop::collection::vec((0u8..6, any::<bool>()), 2..30)
        ) {
            let scored: Vec<(f64, bool)> = pts.iter().map(|&(s, l)| (f64::from(s) / 5.0, l)).collect();
            prop_assume!(scored.iter().any(|p| p.1) && scored.iter().any(|p| !p.1));
            prop_assert!((roc_auc(&scored).unwrap() - auc_pairs(&scored)).abs() < 1e-12);
        }

        #[test]
        fn ap_invariant_under_affine_map(
            scores in prop::collection::vec(0.0f64..1.0, 1..12),
            mask in prop::collection::vec(any::<bool>(), 12),
        ) {
            let rel: BTreeSet<u32> = (1..=scores.len() as u32).filter(|&i| mask[i as usize - 1]).collect();
            prop_assume!(!rel.is_empty());
            let a = RankedList::from_scores(scores.iter().enumerate().map(|(i, &s)| (i as u32 + 1, s))).unwrap();
            let b = RankedList::from_scores(scores.iter().enumerate().map(|(i, &s)| (i as u32 + 1, 2.0 * s + 1.0))).unwrap();
            prop_assert_eq!(average_precision(&a, &rel).unwrap(), average_precision(&b, &rel).unwrap());
        }

        #[test]
        fn map_ignores_paper_order(aps in prop::collection::vec(0.0f64..1.0, 1..10)) {
            let papers: Vec<PaperAp> = aps.iter().enumerate()
                .map(|(i, &ap)| PaperAp { paper_id: i.to_string(), ap: Some(ap) }).collect();
            let mut rev = papers.clone();
            rev.reverse();
            let a = mean_average_precision(papers).unwrap().map;
            let b = mean_average_precision(rev).unwrap().map;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
