//! Prompt catalog and rendering.
//!
//! Templates use the placeholders `{text}`, `{ref_titles}` and `{notes}`.
//! Substitution is a single pass over the template, so placeholder-like
//! strings inside paper text are left alone.
//!
//! Only the base template is a fixed reference text. The inspiration,
//! title-enriched, meta-optimized and notes-based templates are
//! reconstructions from their descriptions; the meta-optimized text is a
//! frozen rewrite of the base prompt.

use serde::{Deserialize, Serialize};

use super::{LlmError, PromptVariant};
use crate::corpus::PaperRecord;

pub const DEFAULT_CHAR_BUDGET: usize = 60_000;
const ELISION: &str = "\n[...]\n";

const BASE: &str = include_str!("../../prompts/base.txt");
const INSPIRATION: &str = include_str!("../../prompts/inspiration.txt");
const TITLE_ENRICHED: &str = include_str!("../../prompts/title_enriched.txt");
const META_OPTIMIZED: &str = include_str!("../../prompts/meta_optimized.txt");
const NOTES_BASED: &str = include_str!("../../prompts/notes_based.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub variant: PromptVariant,
    pub text: String,
}

impl PromptTemplate {
    pub fn builtin(variant: PromptVariant) -> Self {
        let text = match variant {
            PromptVariant::Base => BASE,
            PromptVariant::Inspiration => INSPIRATION,
            PromptVariant::TitleEnriched => TITLE_ENRICHED,
            PromptVariant::MetaOptimized => META_OPTIMIZED,
            PromptVariant::NotesBased => NOTES_BASED,
        };
        Self {
            variant,
            text: text.to_string(),
        }
    }

    pub fn catalog() -> Vec<Self> {
        PromptVariant::ALL.into_iter().map(Self::builtin).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Upper bound on rendered prompt length, in characters.
    pub char_budget: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            char_budget: DEFAULT_CHAR_BUDGET,
        }
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Text,
    Titles,
    Notes,
}

fn split_template(template: &str) -> Vec<Piece<'_>> {
    const NAMES: [(&str, fn() -> Piece<'static>); 3] = [
        ("{text}", || Piece::Text),
        ("{ref_titles}", || Piece::Titles),
        ("{notes}", || Piece::Notes),
    ];
    let mut out = Vec::new();
    let mut rest = template;
    'outer: while !rest.is_empty() {
        if let Some(pos) = rest.find('{') {
            for (name, make) in NAMES {
                if rest[pos..].starts_with(name) {
                    if pos > 0 {
                        out.push(Piece::Literal(&rest[..pos]));
                    }
                    out.push(make());
                    rest = &rest[pos + name.len()..];
                    continue 'outer;
                }
            }
            out.push(Piece::Literal(&rest[..=pos]));
            rest = &rest[pos + 1..];
        } else {
            out.push(Piece::Literal(rest));
            break;
        }
    }
    out
}

/// Keeps the first and last halves of `body` so that the result, including
/// the elision marker, has at most `limit` characters.
fn truncate_middle(body: &str, limit: usize) -> String {
    let n = body.chars().count();
    if n <= limit {
        return body.to_string();
    }
    let marker = ELISION.chars().count();
    if limit <= marker {
        return String::new();
    }
    let keep = limit - marker;
    let head = keep.div_ceil(2);
    let tail = keep - head;
    let chars: Vec<char> = body.chars().collect();
    let mut out: String = chars[..head].iter().collect();
    out.push_str(ELISION);
    out.extend(&chars[n - tail..]);
    out
}

/// Fills a template for one paper. Only the paper body is ever shortened to
/// meet the character budget.
pub fn render_prompt(
    template: &PromptTemplate,
    paper: &PaperRecord,
    opts: &RenderOptions,
) -> Result<String, LlmError> {
    let missing = |message: &str| LlmError::MissingPlaceholder {
        variant: template.variant,
        paper_id: paper.paper_id.clone(),
        message: message.to_string(),
    };
    let pieces = split_template(&template.text);
    let mut fixed = String::new();
    let mut text_slots = 0usize;
    let mut titles = None;
    let mut notes = None;
    for p in &pieces {
        match p {
            Piece::Titles if titles.is_none() => {
                if paper.references.iter().all(|r| r.title.trim().is_empty()) {
                    return Err(missing("no reference has a title"));
                }
                let list = paper
                    .references
                    .iter()
                    .map(|r| {
                        let t = r.title.trim();
                        format!("{}. {}", r.index, if t.is_empty() { "(untitled)" } else { t })
                    })
                    .collect::<Vec<_>>()
                    .join("\n");
                titles = Some(list);
            }
            Piece::Notes if notes.is_none() => match &paper.notes {
                Some(n) if !n.trim().is_empty() => notes = Some(n.clone()),
                _ => return Err(missing("paper has no notes")),
            },
            _ => {}
        }
    }
    for p in &pieces {
        match p {
            Piece::Literal(s) => fixed.push_str(s),
            Piece::Text => text_slots += 1,
            Piece::Titles => fixed.push_str(titles.as_deref().unwrap_or_default()),
            Piece::Notes => fixed.push_str(notes.as_deref().unwrap_or_default()),
        }
    }
    let body = paper.body_text();
    let body = if text_slots == 0 {
        String::new()
    } else {
        let room = opts.char_budget.saturating_sub(fixed.chars().count()) / text_slots;
        truncate_middle(&body, room)
    };
    let mut out = String::with_capacity(fixed.len() + body.len() * text_slots);
    for p in &pieces {
        match p {
            Piece::Literal(s) => out.push_str(s),
            Piece::Text => out.push_str(&body),
            Piece::Titles => out.push_str(titles.as_deref().unwrap_or_default()),
            Piece::Notes => out.push_str(notes.as_deref().unwrap_or_default()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ReferenceEntry, SectionText};

    fn paper(body: &str) -> PaperRecord {
        PaperRecord {
            paper_id: "p".into(),
            title: "T".into(),
            abstract_text: String::new(),
            venue: String::new(),
            year: 2020,
            citation_count: 0,
            authors: vec![],
            sections: vec![SectionText {
                heading: String::new(),
                body: body.into(),
            }],
            references: vec![
                ReferenceEntry {
                    index: 1,
                    ref_id: String::new(),
                    title: "Deep Residual Learning".into(),
                    venue: String::new(),
                    year: 2016,
                    authors: vec![],
                    citation_count: 0,
                },
                ReferenceEntry {
                    index: 2,
                    ref_id: String::new(),
                    title: "Attention Is All You Need".into(),
                    venue: String::new(),
                    year: 2017,
                    authors: vec![],
                    citation_count: 0,
                },
            ],
            source_labels: None,
            notes: None,
        }
    }

    #[test]
    fn base_contains_return_limit() {
        let out = render_prompt(
            &PromptTemplate::builtin(PromptVariant::Base),
            &paper("X [1] Y"),
            &RenderOptions::default(),
        )
        .unwrap();
        assert!(out.contains("Normally you should return less than 8 source papers"));
        assert!(out.ends_with("**** The text of the paper is:X [1] Y"));
    }

    #[test]
    fn notes_required() {
        let err = render_prompt(
            &PromptTemplate::builtin(PromptVariant::NotesBased),
            &paper("X"),
            &RenderOptions::default(),
        );
        assert!(matches!(err, Err(LlmError::MissingPlaceholder { .. })));
        let mut p = paper("X");
        p.notes = Some("builds on residual nets".into());
        let out = render_prompt(
            &PromptTemplate::builtin(PromptVariant::NotesBased),
            &p,
            &RenderOptions::default(),
        )
        .unwrap();
        assert!(out.contains("builds on residual nets"));
    }

    #[test]
    fn titles_listed() {
        let out = render_prompt(
            &PromptTemplate::builtin(PromptVariant::TitleEnriched),
            &paper("X [1] Y [2]"),
            &RenderOptions::default(),
        )
        .unwrap();
        assert!(out.contains("\n1. Deep Residual Learning\n"));
        assert!(out.ends_with("\n2. Attention Is All You Need"));
    }

    #[test]
    fn body_placeholders_are_not_expanded() {
        let out = render_prompt(
            &PromptTemplate::builtin(PromptVariant::Base),
            &paper("weird {notes} and {text} [1]"),
            &RenderOptions::default(),
        )
        .unwrap();
        assert!(out.ends_with("weird {notes} and {text} [1]"));
    }

    #[test]
    fn budget_truncates_body_middle() {
        let body: String = (0..1000).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let t = PromptTemplate {
            variant: PromptVariant::Base,
            text: "INSTR:{text}".into(),
        };
        let out = render_prompt(&t, &paper(&body), &RenderOptions { char_budget: 106 }).unwrap();
        assert_eq!(out.chars().count(), 106);
        assert!(out.starts_with("INSTR:"));
        let kept = &out["INSTR:".len()..];
        // 100 chars of room: 7 for the marker, 47 head, 46 tail
        assert!(kept.starts_with(&body[..47]));
        assert!(kept.ends_with(&body[1000 - 46..]));
        assert!(kept.contains("[...]"));

        // instruction text survives even when there is no room for the body
        let out = render_prompt(&t, &paper(&body), &RenderOptions { char_budget: 3 }).unwrap();
        assert_eq!(out, "INSTR:");
    }

    #[test]
    fn template_splitting_keeps_stray_braces() {
        let t = PromptTemplate {
            variant: PromptVariant::Base,
            text: "{\"a\": {x}} {text}".into(),
        };
        let out = render_prompt(&t, &paper("B"), &RenderOptions::default()).unwrap();
        assert_eq!(out, "{\"a\": {x}} B");
    }
}
