//! Fixed-schema feature vectors for (paper, reference) pairs.
//!
//! The catalog covers four families: paper metadata, citation statistics,
//! reference metadata and cue phrases found near citation markers. Venue is
//! frequency-encoded against the whole corpus; that is the only corpus-level
//! input to an otherwise per-pair computation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{extract_mentions, AuthorInfo, CitationMention, PaperRecord};
use crate::numfmt::fmt_sig9;

/// Cue phrases counted in citation context windows.
pub const DEFAULT_CUES: [&str; 11] = [
    "inspired by",
    "motivated by",
    "inspired us",
    "motivated us",
    "take inspiration",
    "pioneering",
    "previous work",
    "following",
    "based on",
    "we adopt",
    "we use",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("reference index {ref_index} not in paper {paper_id}")]
    UnknownReference { paper_id: String, ref_index: u32 },
    #[error("non-finite value for feature {name} ({paper_id}, {ref_index})")]
    NonFinite {
        name: String,
        paper_id: String,
        ref_index: u32,
    },
    #[error("cannot write feature matrix: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Count,
    Ratio,
    Indicator,
    Delta,
    EncodedCategory,
}

impl FeatureKind {
    fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Count => "count",
            FeatureKind::Ratio => "ratio",
            FeatureKind::Indicator => "indicator",
            FeatureKind::Delta => "delta",
            FeatureKind::EncodedCategory => "encoded_category",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionClass {
    Intro,
    Related,
    Method,
    Experiment,
    Conclusion,
    Other,
}

impl SectionClass {
    pub const COUNTED: [SectionClass; 5] = [
        SectionClass::Intro,
        SectionClass::Related,
        SectionClass::Method,
        SectionClass::Experiment,
        SectionClass::Conclusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SectionClass::Intro => "intro",
            SectionClass::Related => "related",
            SectionClass::Method => "method",
            SectionClass::Experiment => "experiment",
            SectionClass::Conclusion => "conclusion",
            SectionClass::Other => "other",
        }
    }
}

// Checked in order; first class with a matching keyword wins.
const SECTION_KEYWORDS: [(SectionClass, &[&str]); 5] = [
    (SectionClass::Related, &["related work", "background"]),
    (SectionClass::Intro, &["introduction"]),
    (SectionClass::Method, &["method", "approach", "model"]),
    (SectionClass::Experiment, &["experiment", "evaluation", "result"]),
    (SectionClass::Conclusion, &["conclusion", "discussion"]),
];

pub fn classify_section(heading: &str) -> SectionClass {
    let h = heading.to_lowercase();
    SECTION_KEYWORDS
        .iter()
        .find(|(_, kws)| kws.iter().any(|k| h.contains(k)))
        .map(|(c, _)| *c)
        .unwrap_or(SectionClass::Other)
}

/// For each cue, the number of mentions whose lowercased context contains it.
pub fn keyword_context_counts<'a>(
    mentions: &[CitationMention],
    cues: &[&'a str],
) -> BTreeMap<&'a str, u32> {
    let lowered: Vec<String> = mentions.iter().map(|m| m.context.to_lowercase()).collect();
    cues.iter()
        .map(|&cue| {
            let n = lowered.iter().filter(|c| c.contains(cue)).count() as u32;
            (cue, n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
}

/// Stable 64-bit digest of a schema's names and kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemaFingerprint(pub u64);

impl fmt::Display for SchemaFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureDef>,
}

fn cue_feature_name(cue: &str) -> String {
    format!("cue_{}", cue.replace(' ', "_"))
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDef>) -> Result<Self, FeatureError> {
        let mut seen = BTreeSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(FeatureError::SchemaMismatch(format!(
                    "duplicate feature name {}",
                    f.name
                )));
            }
            if f.name.contains(',') || f.name.is_empty() {
                return Err(FeatureError::SchemaMismatch(format!(
                    "invalid feature name {:?}",
                    f.name
                )));
            }
        }
        Ok(Self { features })
    }

    /// Anonymous schema of `n` ratio features, for data that does not come
    /// from the citation catalog.
    pub fn numbered(n: usize) -> Self {
        Self {
            features: (0..n)
                .map(|i| FeatureDef {
                    name: format!("f{i}"),
                    kind: FeatureKind::Ratio,
                })
                .collect(),
        }
    }

    /// The full pipeline catalog in its fixed order.
    pub fn catalog() -> Self {
        use FeatureKind::*;
        let mut defs: Vec<(String, FeatureKind)> = vec![
            ("paper_citation_count_log1p".into(), Count),
            ("ref_citation_count_log1p".into(), Count),
            ("venue_match".into(), Indicator),
            ("paper_venue_freq".into(), EncodedCategory),
            ("ref_venue_freq".into(), EncodedCategory),
            ("author_overlap".into(), Count),
            ("affiliation_overlap".into(), Count),
            ("year_delta".into(), Delta),
            ("total_mentions".into(), Count),
            ("mention_share".into(), Ratio),
        ];
        for class in SectionClass::COUNTED {
            defs.push((format!("{}_mentions", class.as_str()), Count));
        }
        defs.push(("first_mention_position".into(), Ratio));
        defs.push(("reference_count".into(), Count));
        for cue in DEFAULT_CUES {
            defs.push((cue_feature_name(cue), Count));
        }
        Self {
            features: defs
                .into_iter()
                .map(|(name, kind)| FeatureDef { name, kind })
                .collect(),
        }
    }

    /// Catalog restricted to `include` (catalog order kept) minus `exclude`.
    pub fn catalog_subset(
        include: Option<&[String]>,
        exclude: &[String],
    ) -> Result<Self, FeatureError> {
        let catalog = Self::catalog();
        let known: BTreeSet<&str> = catalog.features.iter().map(|f| f.name.as_str()).collect();
        for name in include.into_iter().flatten().chain(exclude) {
            if !known.contains(name.as_str()) {
                return Err(FeatureError::SchemaMismatch(format!(
                    "unknown feature {name}"
                )));
            }
        }
        let features: Vec<FeatureDef> = catalog
            .features
            .into_iter()
            .filter(|f| include.is_none_or(|inc| inc.contains(&f.name)))
            .filter(|f| !exclude.contains(&f.name))
            .collect();
        if features.is_empty() {
            return Err(FeatureError::SchemaMismatch("schema has no features".into()));
        }
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureDef] {
        &self.features
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn fingerprint(&self) -> SchemaFingerprint {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.name.as_bytes());
            h.update([0u8]);
            h.update(f.kind.as_str().as_bytes());
            h.update([0u8]);
        }
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        SchemaFingerprint(u64::from_be_bytes(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub paper_id: String,
    pub ref_index: u32,
    pub values: Vec<f64>,
    pub label: Option<u8>,
    pub schema: SchemaFingerprint,
}

/// Venue occurrence frequencies over every paper and reference in a corpus.
#[derive(Debug, Clone, Default)]
pub struct VenueStats {
    counts: HashMap<String, u64>,
    total: u64,
}

pub(crate) fn normalize_name(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl VenueStats {
    pub fn from_corpus(papers: &[PaperRecord]) -> Self {
        let mut stats = Self::default();
        for p in papers {
            stats.add(&p.venue);
            for r in &p.references {
                stats.add(&r.venue);
            }
        }
        stats
    }

    fn add(&mut self, venue: &str) {
        let v = normalize_name(venue);
        if v.is_empty() {
            return;
        }
        *self.counts.entry(v).or_default() += 1;
        self.total += 1;
    }

    /// Share of all venue occurrences taken by `venue`; 0 for empty or unseen.
    pub fn frequency(&self, venue: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let v = normalize_name(venue);
        self.counts.get(&v).copied().unwrap_or(0) as f64 / self.total as f64
    }
}

fn name_set(authors: &[AuthorInfo]) -> BTreeSet<String> {
    authors
        .iter()
        .map(|a| normalize_name(&a.name))
        .filter(|n| !n.is_empty())
        .collect()
}

fn affiliation_set(authors: &[AuthorInfo]) -> BTreeSet<String> {
    authors
        .iter()
        .map(|a| normalize_name(&a.affiliation))
        .filter(|n| !n.is_empty())
        .collect()
}

/// Paper-level quantities shared by every reference of one paper.
#[derive(Debug, Clone)]
pub struct PaperContext {
    pub mentions: Vec<CitationMention>,
    section_classes: Vec<SectionClass>,
    section_starts: Vec<usize>,
    total_body_chars: usize,
}

impl PaperContext {
    pub fn new(paper: &PaperRecord, window: usize) -> Self {
        let mut starts = Vec::with_capacity(paper.sections.len());
        let mut total = 0;
        for s in &paper.sections {
            starts.push(total);
            total += s.body.chars().count();
        }
        Self {
            mentions: extract_mentions(paper, window),
            section_classes: paper
                .sections
                .iter()
                .map(|s| classify_section(&s.heading))
                .collect(),
            section_starts: starts,
            total_body_chars: total,
        }
    }

    pub fn mentions_of(&self, ref_index: u32) -> Vec<CitationMention> {
        self.mentions
            .iter()
            .filter(|m| m.ref_index == ref_index)
            .cloned()
            .collect()
    }
}

/// Computes every catalog feature for one pair, keyed by name.
fn catalog_values(
    paper: &PaperRecord,
    ref_index: u32,
    mentions: &[CitationMention],
    ctx: &PaperContext,
    venues: &VenueStats,
) -> Result<HashMap<String, f64>, FeatureError> {
    let reference = paper
        .reference(ref_index)
        .ok_or_else(|| FeatureError::UnknownReference {
            paper_id: paper.paper_id.clone(),
            ref_index,
        })?;
    let mut v = HashMap::new();
    v.insert(
        "paper_citation_count_log1p".to_string(),
        (paper.citation_count as f64).ln_1p(),
    );
    v.insert(
        "ref_citation_count_log1p".to_string(),
        (reference.citation_count as f64).ln_1p(),
    );
    let pv = normalize_name(&paper.venue);
    let venue_match = !pv.is_empty() && pv == normalize_name(&reference.venue);
    v.insert("venue_match".to_string(), f64::from(u8::from(venue_match)));
    v.insert("paper_venue_freq".to_string(), venues.frequency(&paper.venue));
    v.insert("ref_venue_freq".to_string(), venues.frequency(&reference.venue));
    let authors = name_set(&paper.authors)
        .intersection(&name_set(&reference.authors))
        .count();
    v.insert("author_overlap".to_string(), authors as f64);
    let affils = affiliation_set(&paper.authors)
        .intersection(&affiliation_set(&reference.authors))
        .count();
    v.insert("affiliation_overlap".to_string(), affils as f64);
    v.insert(
        "year_delta".to_string(),
        f64::from(paper.year) - f64::from(reference.year),
    );

    let total = mentions.len();
    v.insert("total_mentions".to_string(), total as f64);
    let share = if ctx.mentions.is_empty() {
        0.0
    } else {
        total as f64 / ctx.mentions.len() as f64
    };
    v.insert("mention_share".to_string(), share);
    for class in SectionClass::COUNTED {
        let n = mentions
            .iter()
            .filter(|m| ctx.section_classes.get(m.section_ordinal) == Some(&class))
            .count();
        v.insert(format!("{}_mentions", class.as_str()), n as f64);
    }
    let first = mentions
        .iter()
        .map(|m| ctx.section_starts.get(m.section_ordinal).copied().unwrap_or(0) + m.char_offset)
        .min();
    let position = match first {
        Some(offset) if ctx.total_body_chars > 0 => offset as f64 / ctx.total_body_chars as f64,
        _ => 1.0,
    };
    v.insert("first_mention_position".to_string(), position);
    v.insert("reference_count".to_string(), paper.references.len() as f64);
    for (cue, n) in keyword_context_counts(mentions, &DEFAULT_CUES) {
        v.insert(cue_feature_name(cue), f64::from(n));
    }
    Ok(v)
}

/// Builds the vector for one (paper, reference) pair under `schema`.
/// `mentions` must already be filtered to `ref_index`.
pub fn build_features(
    paper: &PaperRecord,
    ref_index: u32,
    mentions: &[CitationMention],
    ctx: &PaperContext,
    venues: &VenueStats,
    schema: &FeatureSchema,
) -> Result<FeatureVector, FeatureError> {
    if let Some(m) = mentions.iter().find(|m| m.ref_index != ref_index) {
        return Err(FeatureError::SchemaMismatch(format!(
            "mention for reference {} passed with reference {ref_index}",
            m.ref_index
        )));
    }
    let all = catalog_values(paper, ref_index, mentions, ctx, venues)?;
    let mut values = Vec::with_capacity(schema.len());
    for def in schema.features() {
        let x = *all.get(&def.name).ok_or_else(|| {
            FeatureError::SchemaMismatch(format!("feature {} is not in the catalog", def.name))
        })?;
        if !x.is_finite() {
            return Err(FeatureError::NonFinite {
                name: def.name.clone(),
                paper_id: paper.paper_id.clone(),
                ref_index,
            });
        }
        values.push(x);
    }
    let label = paper
        .source_labels
        .as_ref()
        .map(|s| u8::from(s.contains(&ref_index)));
    Ok(FeatureVector {
        paper_id: paper.paper_id.clone(),
        ref_index,
        values,
        label,
        schema: schema.fingerprint(),
    })
}

/// Feature vectors for every reference of every paper, in corpus order.
pub fn featurize_corpus(
    papers: &[PaperRecord],
    schema: &FeatureSchema,
    window: usize,
) -> Result<Vec<FeatureVector>, FeatureError> {
    use rayon::prelude::*;
    let venues = VenueStats::from_corpus(papers);
    let per_paper: Vec<Result<Vec<FeatureVector>, FeatureError>> = papers
        .par_iter()
        .map(|p| {
            let ctx = PaperContext::new(p, window);
            p.references
                .iter()
                .map(|r| build_features(p, r.index, &ctx.mentions_of(r.index), &ctx, &venues, schema))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for rows in per_paper {
        out.extend(rows?);
    }
    Ok(out)
}

/// Writes the matrix as CSV: `paper_id,ref_index,<features...>,label`.
pub fn write_matrix(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    rows: &[FeatureVector],
) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "paper_id,ref_index")?;
    for name in schema.names() {
        write!(w, ",{name}")?;
    }
    writeln!(w, ",label")?;
    for row in rows {
        write!(w, "{},{}", row.paper_id, row.ref_index)?;
        for &x in &row.values {
            write!(w, ",{}", fmt_sig9(x))?;
        }
        match row.label {
            Some(l) => writeln!(w, ",{l}")?,
            None => writeln!(w, ",")?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`]; the header must name exactly
/// the features of `schema`, in order.
pub fn read_matrix(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
) -> Result<Vec<FeatureVector>, FeatureError> {
    let to_feature_error = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => FeatureError::Io(e),
        other => FeatureError::SchemaMismatch(format!("feature matrix: {other:?}")),
    };
    let mut reader = csv::Reader::from_path(path).map_err(to_feature_error)?;
    let expected: Vec<&str> = ["paper_id", "ref_index"]
        .into_iter()
        .chain(schema.names())
        .chain(["label"])
        .collect();
    let header = reader.headers().map_err(to_feature_error)?;
    if !header.iter().eq(expected.iter().copied()) {
        return Err(FeatureError::SchemaMismatch(format!(
            "matrix header does not match the configured schema ({} columns, expected {})",
            header.len(),
            expected.len()
        )));
    }
    let fingerprint = schema.fingerprint();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(to_feature_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| FeatureError::SchemaMismatch(format!("matrix line {line}: {what}"));
        let ref_index = record[1].parse().map_err(|_| bad("bad ref_index"))?;
        let values = (2..record.len() - 1)
            .map(|i| record[i].parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("bad feature value"))?;
        let label = match &record[record.len() - 1] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            _ => return Err(bad("bad label")),
        };
        rows.push(FeatureVector {
            paper_id: record[0].to_string(),
            ref_index,
            values,
            label,
            schema: fingerprint,
        });
    }
    Ok(rows)
}
