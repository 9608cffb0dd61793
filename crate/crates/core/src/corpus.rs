//! Corpus records, the line-delimited corpus file format, and citation
//! marker extraction.
//!
//! A corpus file holds one JSON object per line. Field names follow
//! [`PaperRecord`]; optional fields are omitted rather than written as null.
//! See `corpus.md` at the repository root for the full schema.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Context characters kept on each side of a marker when none is configured.
pub const DEFAULT_CONTEXT_WINDOW: usize = 150;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: paper {paper_id}: {violations}")]
    Invalid {
        line: usize,
        paper_id: String,
        violations: ViolationList,
    },
    #[error("line {line}: duplicate paper_id {paper_id} (first seen on line {first})")]
    DuplicateId {
        line: usize,
        first: usize,
        paper_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorInfo {
    pub name: String,
    #[serde(default)]
    pub affiliation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionText {
    pub heading: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    /// 1-based position in the reference list.
    pub index: u32,
    #[serde(default)]
    pub ref_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub venue: String,
    #[serde(default)]
    pub year: i32,
    #[serde(default)]
    pub authors: Vec<AuthorInfo>,
    #[serde(default)]
    pub citation_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub venue: String,
    #[serde(default)]
    pub year: i32,
    #[serde(default)]
    pub citation_count: u64,
    #[serde(default)]
    pub authors: Vec<AuthorInfo>,
    #[serde(default)]
    pub sections: Vec<SectionText>,
    #[serde(default)]
    pub references: Vec<ReferenceEntry>,
    /// Gold source references, as reference indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_labels: Option<BTreeSet<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl PaperRecord {
    /// Number of entries in the reference list.
    pub fn reference_count(&self) -> usize {
        self.references.len()
    }

    pub fn reference(&self, index: u32) -> Option<&ReferenceEntry> {
        let pos = usize::try_from(index).ok()?.checked_sub(1)?;
        self.references.get(pos).filter(|r| r.index == index)
    }

    /// True when the paper carries a non-empty gold label set.
    pub fn is_labeled(&self) -> bool {
        self.source_labels.as_ref().is_some_and(|s| !s.is_empty())
    }

    /// Section bodies joined with blank lines, markers left intact.
    pub fn body_text(&self) -> String {
        self.sections
            .iter()
            .map(|s| {
                if s.heading.is_empty() {
                    s.body.clone()
                } else {
                    format!("{}\n{}", s.heading, s.body)
                }
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationMention {
    pub ref_index: u32,
    pub section_ordinal: usize,
    /// Character (not byte) offset of the opening bracket within the section body.
    pub char_offset: usize,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyPaperId,
    /// Ids become file names and CSV fields.
    UnsafePaperId,
    EmptyAuthorName { reference: Option<u32> },
    NonContiguousIndex { position: usize, expected: u32, found: u32 },
    DanglingMarker { section: usize, index: u32 },
    LabelOutOfRange { index: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPaperId => write!(f, "empty paper_id"),
            Violation::UnsafePaperId => write!(
                f,
                "paper_id may only use ASCII letters, digits, '.', '_' and '-', and must not start with '.'"
            ),
            Violation::EmptyAuthorName { reference: None } => write!(f, "paper author with empty name"),
            Violation::EmptyAuthorName { reference: Some(r) } => {
                write!(f, "reference {r} has an author with empty name")
            }
            Violation::NonContiguousIndex {
                position,
                expected,
                found,
            } => write!(
                f,
                "reference indices not contiguous: entry {position} has index {found}, expected {expected}"
            ),
            Violation::DanglingMarker { section, index } => {
                write!(f, "dangling marker [{index}] in section {section}")
            }
            Violation::LabelOutOfRange { index } => write!(f, "label out of range: {index}"),
        }
    }
}

/// Display helper for a list of violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationList(pub Vec<Violation>);

impl fmt::Display for ViolationList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every record invariant. An empty result means the record is valid.
pub fn validate_record(paper: &PaperRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if paper.paper_id.trim().is_empty() {
        out.push(Violation::EmptyPaperId);
    } else if paper.paper_id.starts_with('.')
        || !paper
            .paper_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
    {
        out.push(Violation::UnsafePaperId);
    }
    if paper.authors.iter().any(|a| a.name.trim().is_empty()) {
        out.push(Violation::EmptyAuthorName { reference: None });
    }
    for (pos, r) in paper.references.iter().enumerate() {
        let expected = pos as u32 + 1;
        if r.index != expected {
            out.push(Violation::NonContiguousIndex {
                position: pos + 1,
                expected,
                found: r.index,
            });
        }
        if r.authors.iter().any(|a| a.name.trim().is_empty()) {
            out.push(Violation::EmptyAuthorName {
                reference: Some(r.index),
            });
        }
    }
    let valid: HashSet<u32> = paper.references.iter().map(|r| r.index).collect();
    for (ordinal, section) in paper.sections.iter().enumerate() {
        let mut reported = BTreeSet::new();
        for marker in scan_markers(&section.body) {
            for idx in marker.indices {
                if !valid.contains(&idx) && reported.insert(idx) {
                    out.push(Violation::DanglingMarker {
                        section: ordinal,
                        index: idx,
                    });
                }
            }
        }
    }
    if let Some(labels) = &paper.source_labels {
        for &idx in labels {
            if !valid.contains(&idx) {
                out.push(Violation::LabelOutOfRange { index: idx });
            }
        }
    }
    out
}

/// Reads a corpus file. Every record is validated and paper ids must be unique.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<PaperRecord>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut papers = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let paper: PaperRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let violations = validate_record(&paper);
        if !violations.is_empty() {
            return Err(CorpusError::Invalid {
                line: line_no,
                paper_id: paper.paper_id,
                violations: ViolationList(violations),
            });
        }
        if let Some(&first) = seen.get(&paper.paper_id) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                first,
                paper_id: paper.paper_id,
            });
        }
        seen.insert(paper.paper_id.clone(), line_no);
        papers.push(paper);
    }
    Ok(papers)
}

/// Writes records in the corpus format, one per line.
pub fn write_corpus(path: impl AsRef<Path>, papers: &[PaperRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for p in papers {
        let line = serde_json::to_string(p).expect("paper records always serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// One bracketed marker found in a body, e.g. `[3]`, `[3, 5]` or `[2-4]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Marker {
    /// Character offset of `[`.
    pub start: usize,
    /// Character offset one past `]`.
    pub end: usize,
    pub indices: Vec<u32>,
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[\s*\d+(?:\s*[-\u{2013}]\s*\d+)?(?:\s*,\s*\d+(?:\s*[-\u{2013}]\s*\d+)?)*\s*\]")
            .expect("marker regex")
    })
}

// Ranges wider than this are treated as prose, not citations.
const MAX_RANGE_SPAN: u32 = 1000;

fn parse_marker_body(body: &str) -> Option<Vec<u32>> {
    let mut out = Vec::new();
    for item in body.split(',') {
        let item = item.trim();
        if let Some((a, b)) = item.split_once(['-', '\u{2013}']) {
            let a: u32 = a.trim().parse().ok()?;
            let b: u32 = b.trim().parse().ok()?;
            if a > b || b - a > MAX_RANGE_SPAN {
                return None;
            }
            out.extend(a..=b);
        } else {
            out.push(item.parse().ok()?);
        }
    }
    Some(out)
}

pub(crate) fn scan_markers(body: &str) -> Vec<Marker> {
    let mut markers = Vec::new();
    // Byte offsets from the regex are mapped to char offsets incrementally.
    let mut byte_cursor = 0;
    let mut char_cursor = 0;
    for m in marker_regex().find_iter(body) {
        char_cursor += body[byte_cursor..m.start()].chars().count();
        let start = char_cursor;
        let len = m.as_str().chars().count();
        byte_cursor = m.start();
        let inner = &m.as_str()[1..m.as_str().len() - 1];
        if let Some(indices) = parse_marker_body(inner) {
            markers.push(Marker {
                start,
                end: start + len,
                indices,
            });
        }
    }
    markers
}

/// Lists every citation occurrence in document order. Each index named by a
/// marker (including each member of a list or range) yields one mention.
/// `context` covers `window` characters on both sides of the marker, clipped
/// to the section body.
pub fn extract_mentions(paper: &PaperRecord, window: usize) -> Vec<CitationMention> {
    let mut out = Vec::new();
    for (ordinal, section) in paper.sections.iter().enumerate() {
        let markers = scan_markers(&section.body);
        if markers.is_empty() {
            continue;
        }
        let chars: Vec<char> = section.body.chars().collect();
        for marker in markers {
            let lo = marker.start.saturating_sub(window);
            let hi = (marker.end + window).min(chars.len());
            let context: String = chars[lo..hi].iter().collect();
            for idx in marker.indices {
                out.push(CitationMention {
                    ref_index: idx,
                    section_ordinal: ordinal,
                    char_offset: marker.start,
                    context: context.clone(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal_paper() -> PaperRecord {
        PaperRecord {
            paper_id: "p1".into(),
            title: "A paper".into(),
            abstract_text: String::new(),
            venue: "KDD".into(),
            year: 2020,
            citation_count: 3,
            authors: vec![AuthorInfo {
                name: "Ada Lovelace".into(),
                affiliation: String::new(),
            }],
            sections: vec![SectionText {
                heading: "Introduction".into(),
                body: "X [1] Y".into(),
            }],
            references: vec![ReferenceEntry {
                index: 1,
                ref_id: String::new(),
                title: "Ref one".into(),
                venue: "ICML".into(),
                year: 2015,
                authors: vec![],
                citation_count: 10,
            }],
            source_labels: None,
            notes: None,
        }
    }

    fn with_refs(mut p: PaperRecord, n: u32) -> PaperRecord {
        p.references = (1..=n)
            .map(|i| ReferenceEntry {
                index: i,
                ref_id: String::new(),
                title: format!("Ref {i}"),
                venue: String::new(),
                year: 2010,
                authors: vec![],
                citation_count: 0,
            })
            .collect();
        p
    }

    #[test]
    fn minimal_is_valid() {
        assert!(validate_record(&minimal_paper()).is_empty());
    }

    #[test]
    fn paper_id_charset() {
        for bad in ["a/b", "a,b", "..", " x", "ü"] {
            let mut p = minimal_paper();
            p.paper_id = bad.into();
            assert_eq!(validate_record(&p), vec![Violation::UnsafePaperId], "{bad:?}");
        }
        let mut p = minimal_paper();
        p.paper_id = "W2963-x_1.v2".into();
        assert!(validate_record(&p).is_empty());
    }

    #[test]
    fn zero_label_is_out_of_range() {
        let mut p = minimal_paper();
        p.source_labels = Some([0].into_iter().collect());
        let v = validate_record(&p);
        assert_eq!(v, vec![Violation::LabelOutOfRange { index: 0 }]);
        assert!(v[0].to_string().contains("label out of range"));
    }

    #[test]
    fn gap_in_indices_is_named() {
        let mut p = with_refs(minimal_paper(), 2);
        p.references[1].index = 3;
        let v = validate_record(&p);
        assert_eq!(
            v,
            vec![Violation::NonContiguousIndex {
                position: 2,
                expected: 2,
                found: 3
            }]
        );
    }

    #[test]
    fn dangling_marker_names_index() {
        let mut p = with_refs(minimal_paper(), 8);
        p.sections[0].body = "see [9] and [2]".into();
        let v = validate_record(&p);
        assert_eq!(v, vec![Violation::DanglingMarker { section: 0, index: 9 }]);
        assert!(v[0].to_string().contains('9'));
    }

    #[test]
    fn mentions_in_document_order() {
        let mut p = with_refs(minimal_paper(), 5);
        p.sections[0].body = "as shown in [2]. Inspired by [5], we…".into();
        let m = extract_mentions(&p, 10);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].ref_index, m[0].char_offset), (2, 12));
        assert_eq!((m[1].ref_index, m[1].char_offset), (5, 29));
        // 10 chars either side of "[2]" (12..15)
        assert_eq!(m[0].context, " shown in [2]. Inspired");
        // clipped at end of body
        assert_eq!(m[1].context, "spired by [5], we…");
    }

    #[test]
    fn list_and_range_markers() {
        let mut p = with_refs(minimal_paper(), 6);
        p.sections[0].body = "a [3,5] b [2-4] c [ 1 , 6 ]".into();
        let m = extract_mentions(&p, 0);
        let idx: Vec<u32> = m.iter().map(|x| x.ref_index).collect();
        assert_eq!(idx, vec![3, 5, 2, 3, 4, 1, 6]);
        assert_eq!(m[0].char_offset, 2);
        assert_eq!(m[1].char_offset, 2);
        assert_eq!(m[0].context, "[3,5]");
        assert!(m[2..5].iter().all(|x| x.char_offset == 10));
    }

    #[test]
    fn no_markers_no_mentions() {
        let mut p = minimal_paper();
        p.sections[0].body = "plain text (2020) and [a] or [] here".into();
        assert!(extract_mentions(&p, 150).is_empty());
    }

    #[test]
    fn reversed_range_is_not_a_marker() {
        assert!(scan_markers("x [5-3] y").is_empty());
    }

    #[test]
    fn offsets_count_chars_not_bytes() {
        let mut p = with_refs(minimal_paper(), 1);
        p.sections[0].body = "héllo wörld [1]".into();
        let m = extract_mentions(&p, 3);
        assert_eq!(m[0].char_offset, 12);
        assert_eq!(m[0].context, "ld [1]");
    }

    #[test]
    fn serialization_omits_absent_optionals() {
        let p = minimal_paper();
        let s = serde_json::to_string(&p).unwrap();
        assert!(!s.contains("source_labels"));
        assert!(!s.contains("notes"));
        assert!(!s.contains("null"));
        assert!(s.contains("\"abstract\""));
    }
}
