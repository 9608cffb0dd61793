//! Answer generation over the provider × variant × sample grid.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::cache::{cache_key, CacheStore, CompletionRecord};
use super::parse::parse_answer;
use super::prompt::{render_prompt, PromptTemplate, RenderOptions};
use super::provider::{complete_with_retry, CompletionProvider, CompletionRequest, RateLimiter};
use super::{group_id, AnswerSet, AnswerSlot, LlmError, ProviderProfile, SlotOutcome};
use crate::corpus::PaperRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    #[default]
    Replay,
}

/// A configured provider. Replay-only providers carry no client.
pub struct Provider {
    pub profile: ProviderProfile,
    client: Option<Arc<dyn CompletionProvider>>,
    limiter: RateLimiter,
}

impl Provider {
    pub fn replay(profile: ProviderProfile) -> Self {
        let limiter = RateLimiter::per_minute(profile.requests_per_minute);
        Self {
            profile,
            client: None,
            limiter,
        }
    }

    pub fn live(profile: ProviderProfile, client: Arc<dyn CompletionProvider>) -> Self {
        let limiter = RateLimiter::per_minute(profile.requests_per_minute);
        Self {
            profile,
            client: Some(client),
            limiter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: Mode,
    /// Samples per (provider, variant) pair.
    pub samples: u32,
    pub render: RenderOptions,
    /// Maximum number of providers queried concurrently.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Replay,
            samples: 1,
            render: RenderOptions::default(),
            jobs: 4,
        }
    }
}

/// Number of answer slots (and hence requests at most) for a run.
pub fn planned_requests(papers: usize, providers: usize, variants: usize, samples: u32) -> usize {
    papers * providers * variants * samples as usize
}

struct PlannedSlot {
    provider: usize,
    variant: usize,
    sample: u32,
    prompt: Result<Arc<String>, String>,
    key: Option<String>,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Produces the answer set for one paper.
///
/// Replay mode reads every response from `cache` and fails on the first
/// missing digest. Live mode reuses cached responses, queries providers for
/// the rest (one thread per provider, at most `jobs` at a time) and stores
/// each new response before parsing it. Failed requests leave their slot
/// missing.
pub fn generate_answers(
    paper: &PaperRecord,
    providers: &[Provider],
    variants: &[PromptTemplate],
    cache: &CacheStore,
    opts: &RunOptions,
) -> Result<AnswerSet, LlmError> {
    let prompts: Vec<Result<Arc<String>, String>> = variants
        .iter()
        .map(|t| {
            render_prompt(t, paper, &opts.render)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut plan = Vec::new();
    for (pi, provider) in providers.iter().enumerate() {
        for (vi, _) in variants.iter().enumerate() {
            for sample in 0..opts.samples {
                let prompt = prompts[vi].clone();
                let key = prompt.as_ref().ok().map(|text| {
                    cache_key(
                        &provider.profile.provider_id,
                        &provider.profile.model_id,
                        text,
                        provider.profile.temperature,
                        sample,
                    )
                });
                plan.push(PlannedSlot {
                    provider: pi,
                    variant: vi,
                    sample,
                    prompt,
                    key,
                });
            }
        }
    }

    // Raw text per slot, or the reason it is missing.
    let mut raw: Vec<Option<Result<String, String>>> = Vec::with_capacity(plan.len());
    for slot in &plan {
        let entry = match (&slot.prompt, &slot.key) {
            (Err(reason), _) => Some(Err(reason.clone())),
            (Ok(_), Some(key)) => match cache.get(key)? {
                Some(rec) => Some(Ok(rec.raw_response)),
                None if opts.mode == Mode::Replay => {
                    let p = &providers[slot.provider].profile;
                    return Err(LlmError::CacheMiss {
                        paper_id: paper.paper_id.clone(),
                        provider_id: p.provider_id.clone(),
                        variant: variants[slot.variant].variant,
                        sample: slot.sample,
                        digest: key.clone(),
                    });
                }
                None => None,
            },
            (Ok(_), None) => unreachable!("rendered prompts always have a key"),
        };
        raw.push(entry);
    }

    if opts.mode == Mode::Live {
        let fetched = fetch_pending(paper, providers, variants, &plan, &raw, opts)?;
        for (i, result) in fetched {
            let slot = &plan[i];
            let profile = &providers[slot.provider].profile;
            match result {
                Ok(text) => {
                    let valid: BTreeSet<u32> = paper.references.iter().map(|r| r.index).collect();
                    let status = match parse_answer(&text, &valid) {
                        Some(_) => "ok".to_string(),
                        None => "unparsable".to_string(),
                    };
                    let rec = CompletionRecord {
                        key: slot.key.clone().expect("requested slots have keys"),
                        provider_id: profile.provider_id.clone(),
                        model_id: profile.model_id.clone(),
                        paper_id: paper.paper_id.clone(),
                        variant: variants[slot.variant].variant,
                        sample: slot.sample,
                        temperature: profile.temperature,
                        requested_at: now_secs(),
                        raw_response: text.clone(),
                        parse_status: status,
                    };
                    cache.put(&rec)?;
                    raw[i] = Some(Ok(text));
                }
                Err(e) => {
                    warn!(
                        "{}: {} {} sample {} failed: {e}",
                        paper.paper_id,
                        profile.provider_id,
                        variants[slot.variant].variant,
                        slot.sample
                    );
                    raw[i] = Some(Err(format!("request failed: {e}")));
                }
            }
        }
    }

    let valid: BTreeSet<u32> = paper.references.iter().map(|r| r.index).collect();
    let mut slots = Vec::with_capacity(plan.len());
    for (i, (slot, text)) in plan.iter().zip(raw).enumerate() {
        let profile = &providers[slot.provider].profile;
        let variant = variants[slot.variant].variant;
        let outcome = match text.expect("every slot resolved") {
            Err(reason) => SlotOutcome::Missing { reason },
            Ok(text) => match parse_answer(&text, &valid) {
                Some(parsed) => {
                    for w in &parsed.warnings {
                        debug!("{} slot {}: {w:?}", paper.paper_id, i + 1);
                    }
                    SlotOutcome::Answered {
                        confidences: parsed.confidences,
                    }
                }
                None => SlotOutcome::Missing {
                    reason: "no parsable answer object".into(),
                },
            },
        };
        slots.push(AnswerSlot {
            slot: i + 1,
            provider_id: profile.provider_id.clone(),
            variant,
            sample: slot.sample,
            group: group_id(&profile.provider_id, variant),
            outcome,
        });
    }
    Ok(AnswerSet {
        paper_id: paper.paper_id.clone(),
        slots,
    })
}

type Fetched = Vec<(usize, Result<String, String>)>;

fn fetch_pending(
    paper: &PaperRecord,
    providers: &[Provider],
    variants: &[PromptTemplate],
    plan: &[PlannedSlot],
    raw: &[Option<Result<String, String>>],
    opts: &RunOptions,
) -> Result<Fetched, LlmError> {
    let mut by_provider: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, slot) in plan.iter().enumerate() {
        if raw[i].is_none() {
            by_provider.entry(slot.provider).or_default().push(i);
        }
    }
    for &pi in by_provider.keys() {
        if providers[pi].client.is_none() {
            return Err(LlmError::Config(format!(
                "provider {} has no client for live mode",
                providers[pi].profile.provider_id
            )));
        }
    }
    let work: Vec<(usize, Vec<usize>)> = by_provider.into_iter().collect();
    let mut out = Vec::new();
    for batch in work.chunks(opts.jobs.max(1)) {
        let results: Vec<Fetched> = thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|(pi, slots)| {
                    let provider = &providers[*pi];
                    s.spawn(move || {
                        let client = provider.client.as_deref().expect("checked above");
                        slots
                            .iter()
                            .map(|&i| {
                                let prompt = plan[i].prompt.as_ref().expect("pending slots rendered");
                                let request = CompletionRequest::new(
                                    &provider.profile.model_id,
                                    prompt.as_str().to_string(),
                                    provider.profile.temperature,
                                );
                                debug!(
                                    "{}: querying {} ({})",
                                    paper.paper_id,
                                    provider.profile.provider_id,
                                    variants[plan[i].variant].variant
                                );
                                let r = complete_with_retry(
                                    client,
                                    &provider.profile,
                                    &provider.limiter,
                                    &request,
                                )
                                .map_err(|e| e.to_string());
                                (i, r)
                            })
                            .collect::<Fetched>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("provider worker panicked"))
                .collect()
        });
        out.extend(results.into_iter().flatten());
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}
