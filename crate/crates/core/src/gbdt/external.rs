//! Scores produced by an outside model, read from
//! `paper_id,ref_index,prob` rows.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{BaseScorer, GbdtError};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores {
    scores: HashMap<(String, u32), f64>,
}

impl ExternalScores {
    pub fn parse(text: &str) -> Result<Self, GbdtError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header_ok = reader
            .headers()
            .map(|h| h.iter().eq(["paper_id", "ref_index", "prob"]))
            .unwrap_or(false);
        if !header_ok {
            return Err(GbdtError::BadScoreLine {
                line: 1,
                message: "expected header paper_id,ref_index,prob".into(),
            });
        }
        let mut scores = HashMap::new();
        for record in reader.deserialize::<(String, u32, f64)>() {
            let (pid, idx, prob) = record.map_err(|e| GbdtError::BadScoreLine {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = scores.len() + 2;
            let bad = |message: String| GbdtError::BadScoreLine { line, message };
            if !(0.0..=1.0).contains(&prob) {
                return Err(bad(format!("prob {prob} outside [0, 1]")));
            }
            if scores.insert((pid.clone(), idx), prob).is_some() {
                return Err(bad(format!("duplicate row for ({pid}, {idx})")));
            }
        }
        Ok(Self { scores })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GbdtError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, paper_id: &str, ref_index: u32) -> Option<f64> {
        self.scores.get(&(paper_id.to_string(), ref_index)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl BaseScorer for ExternalScores {
    fn score(&self, v: &FeatureVector) -> Result<f64, GbdtError> {
        self.get(&v.paper_id, v.ref_index)
            .ok_or_else(|| GbdtError::MissingScore {
                paper_id: v.paper_id.clone(),
                ref_index: v.ref_index,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SchemaFingerprint;

    #[test]
    fn parses_rows() {
        let s = ExternalScores::parse("paper_id,ref_index,prob\np1,1,0.25\np1,2,1\n\np2,1,0\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.get("p1", 1), Some(0.25));
        let v = FeatureVector {
            paper_id: "p2".into(),
            ref_index: 1,
            values: vec![],
            label: None,
            schema: SchemaFingerprint(0),
        };
        assert_eq!(s.score(&v).unwrap(), 0.0);
        let missing = FeatureVector {
            ref_index: 7,
            ..v
        };
        assert!(matches!(s.score(&missing), Err(GbdtError::MissingScore { .. })));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExternalScores::parse("id,prob\n").is_err());
        assert!(ExternalScores::parse("paper_id,ref_index,prob\np,1,1.5\n").is_err());
        assert!(ExternalScores::parse("paper_id,ref_index,prob\np,x,0.5\n").is_err());
        assert!(ExternalScores::parse("paper_id,ref_index,prob\np,1,0.5\np,1,0.6\n").is_err());
    }
}
