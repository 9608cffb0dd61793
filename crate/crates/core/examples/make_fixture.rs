//! Regenerates the synthetic fixture under `testdata/fixture`: a corpus, a
//! replay cache of provider responses, and the run config.
//!
//!     cargo run -p refsource-core --example make_fixture [-- <dir>]
//!
//! Papers mix references that are easy to spot from citation context,
//! sources that only a careful reader notices, and look-alike decoys. The
//! simulated providers see through some of each, with their own mistakes,
//! so the base scorers and the LLM answers err on different references.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsource_core::config::{Overrides, RunConfig};
use refsource_core::corpus::{write_corpus, AuthorInfo, PaperRecord, ReferenceEntry, SectionText};
use refsource_core::llm::{cache_key, render_prompt, CacheStore, CompletionRecord, PromptTemplate, PromptVariant, RenderOptions};

const SEED: u64 = 20240611;
const PAPERS: usize = 40;
const UNLABELED: usize = 2;

const CONFIG: &str = r#"# Synthetic fixture; regenerate with
#   cargo run -p refsource-core --example make_fixture
corpus = "corpus.jsonl"
cache_dir = "cache"
output_dir = "out"
mode = "replay"
seed = 7
jobs = 4

[split]
train_fraction = 0.7
eval = "heldout"

[llm]
variants = ["base", "inspiration"]
samples = 1

[[llm.providers]]
provider_id = "alpha"
model_id = "alpha-large-2"
endpoint = "http://127.0.0.1:8401/v1/chat/completions"
api = "openai_chat"
auth_env = "ALPHA_API_KEY"

[[llm.providers]]
provider_id = "beta"
model_id = "beta-pro"
endpoint = "http://127.0.0.1:8402/v1/messages"
api = "anthropic_messages"
auth_env = "BETA_API_KEY"

[[llm.providers]]
provider_id = "gamma"
model_id = "gamma-instruct"
endpoint = "http://127.0.0.1:8403/v1/chat/completions"
api = "openai_chat"
auth_env = "GAMMA_API_KEY"

[ensemble]
w_lgb = 0.4
w_cb = 0.6
w_f = 0.035
p_neg = 0.4
p_threshold_neg = 0.2
c_neg = 4.0
"#;

const TOPICS: [&str; 24] = [
    "graph", "attention", "contrastive", "retrieval", "embedding", "transformer", "sparse", "kernel",
    "bayesian", "temporal", "adversarial", "diffusion", "hashing", "clustering", "ranking", "citation",
    "hierarchical", "federated", "causal", "multimodal", "neural", "spectral", "metric", "curriculum",
];
const NOUNS: [&str; 16] = [
    "networks", "learning", "inference", "representations", "models", "search", "estimation", "alignment",
    "pretraining", "sampling", "regularization", "transfer", "objectives", "encoders", "prediction", "matching",
];
const VENUES: [&str; 8] = ["KDD", "WWW", "NeurIPS", "ICML", "ACL", "SIGIR", "AAAI", "ICLR"];
const SURNAMES: [&str; 30] = [
    "Chen", "Garcia", "Okafor", "Novak", "Tanaka", "Silva", "Kumar", "Moreau", "Ivanova", "Haddad",
    "Lindqvist", "Osei", "Petrov", "Nakamura", "Rossi", "Dubois", "Kowalski", "Mendes", "Yilmaz", "Fischer",
    "Santos", "Park", "Ahmed", "Larsen", "Costa", "Wright", "Zhou", "Kim", "Bauer", "Singh",
];
const AFFILIATIONS: [&str; 6] = [
    "Northfield University", "Lakeside Institute of Technology", "Harbor Research Lab",
    "Eastgate University", "Summit AI Center", "Riverbend College",
];

#[derive(Clone, Copy, PartialEq)]
enum Role {
    /// Source introduced with explicit cue phrases.
    Overt,
    /// Source described neutrally; context features miss it.
    Subtle,
    /// Non-source cited the way sources usually are.
    Decoy,
    Background,
}

struct Plan {
    paper: PaperRecord,
    /// Whether the providers, reading the same text, take the reference for
    /// a source. Shared by all providers, so their mistakes correlate.
    believed: Vec<bool>,
}

fn title(rng: &mut ChaCha8Rng) -> String {
    let t = TOPICS.choose(rng).unwrap();
    let u = TOPICS.choose(rng).unwrap();
    let n = NOUNS.choose(rng).unwrap();
    let mut s = format!("{t} {u} {n}");
    s[..1].make_ascii_uppercase();
    s
}

fn authors(rng: &mut ChaCha8Rng, n: usize) -> Vec<AuthorInfo> {
    (0..n)
        .map(|_| {
            let initial = (b'A' + rng.gen_range(0..26u8)) as char;
            AuthorInfo {
                name: format!("{initial}. {}", SURNAMES.choose(rng).unwrap()),
                affiliation: AFFILIATIONS.choose(rng).unwrap().to_string(),
            }
        })
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options.choose(rng).unwrap()
}

fn plan_paper(rng: &mut ChaCha8Rng, i: usize) -> Plan {
    let j: usize = rng.gen_range(8..=14);
    let n_sources = rng.gen_range(1..=3usize);
    let mut roles: Vec<Role> = (0..j)
        .map(|k| {
            if k < n_sources {
                if rng.gen_bool(0.7) {
                    Role::Overt
                } else {
                    Role::Subtle
                }
            } else if rng.gen_bool(0.25) {
                Role::Decoy
            } else {
                Role::Background
            }
        })
        .collect();
    roles.shuffle(rng);
    let believed: Vec<bool> = roles
        .iter()
        .map(|role| {
            rng.gen_bool(match role {
                Role::Overt => 0.8,
                Role::Subtle => 0.6,
                Role::Decoy => 0.3,
                Role::Background => 0.1,
            })
        })
        .collect();

    let year = rng.gen_range(2018..=2023);
    let n_authors = rng.gen_range(2..=4);
    let paper_authors = authors(rng, n_authors);
    let venue = VENUES.choose(rng).unwrap().to_string();
    let references: Vec<ReferenceEntry> = roles
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let n_ref_authors = rng.gen_range(1..=3);
            let mut ra = authors(rng, n_ref_authors);
            if rng.gen_bool(0.15) {
                ra[0] = paper_authors[0].clone();
            }
            let cites: u64 = rng.gen_range(0..2000);
            ReferenceEntry {
                index: k as u32 + 1,
                ref_id: format!("R{:03}-{:02}", i + 1, k + 1),
                title: title(rng),
                venue: if rng.gen_bool(0.35) { venue.clone() } else { VENUES.choose(rng).unwrap().to_string() },
                year: year - rng.gen_range(0..12),
                authors: ra,
                citation_count: cites,
            }
        })
        .collect();

    let topic = title(rng).to_lowercase();
    let mut intro = vec![format!(
        "We study {topic}, a problem that has received growing attention in recent years."
    )];
    let mut related = vec![format!("Work on {topic} spans several lines of research.")];
    let mut method = vec![format!("We now describe our approach to {topic}.")];
    let mut experiments = vec!["We evaluate on three public benchmarks.".to_string()];
    let mut conclusion = vec!["We presented a new method and analysed its behaviour.".to_string()];

    // Decoys borrow the cue phrases of overt sources but sit in the
    // experiments; subtle sources are cited exactly like background work.
    let mut listed: Vec<u32> = Vec::new();
    for (k, role) in roles.iter().enumerate() {
        let r = k as u32 + 1;
        match role {
            Role::Decoy => {
                experiments.push(format!(
                    "{} [{r}], {} its public implementation for preprocessing.",
                    pick(rng, &["Following", "Based on"]),
                    pick(rng, &["we use", "we adopt"])
                ));
                if rng.gen_bool(0.4) {
                    intro.push(format!("Motivated by practical concerns raised in [{r}], we report runtime."));
                }
            }
            Role::Overt => {
                let in_intro = rng.gen_bool(0.7);
                if in_intro {
                    intro.push(format!(
                        "{} [{r}], we revisit how {} can be learned end to end.",
                        pick(rng, &["Inspired by", "Motivated by", "Following the pioneering work"]),
                        pick(rng, &TOPICS)
                    ));
                }
                if !in_intro || rng.gen_bool(0.6) {
                    method.push(format!(
                        "{} [{r}], {} the same {} objective and extend it with a {} term.",
                        pick(rng, &["Following", "Based on", "Building on"]),
                        pick(rng, &["we adopt", "we use"]),
                        pick(rng, &TOPICS),
                        pick(rng, &TOPICS)
                    ));
                }
                if rng.gen_bool(0.4) {
                    experiments.push(format!("Our model improves over [{r}] on all datasets."));
                }
            }
            Role::Subtle | Role::Background => {
                if rng.gen_bool(0.55) {
                    listed.push(r);
                    continue;
                }
                let sentence = format!(
                    "{}",
                    match rng.gen_range(0..3) {
                        0 => format!("[{r}] formulates {} {} as a {} problem.", pick(rng, &TOPICS), pick(rng, &NOUNS), pick(rng, &TOPICS)),
                        1 => format!("The {} variant of [{r}] scales to large graphs.", pick(rng, &TOPICS)),
                        _ => format!("A related analysis of {} appears in [{r}].", pick(rng, &NOUNS)),
                    }
                );
                match rng.gen_range(0..3) {
                    0 => intro.push(sentence),
                    1 => related.push(sentence),
                    _ => method.push(sentence),
                }
            }
        }
    }
    listed.shuffle(rng);
    for chunk in listed.chunks(3) {
        let list = chunk.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(", ");
        let sentence = format!(
            "Prior studies of {} {} include [{list}].",
            pick(rng, &TOPICS),
            pick(rng, &NOUNS)
        );
        if rng.gen_bool(0.5) {
            intro.push(sentence);
        } else {
            related.push(sentence);
        }
    }
    conclusion.push("Future work will extend the approach to larger corpora.".into());

    let sections = [
        ("1 Introduction", intro),
        ("2 Related Work", related),
        ("3 Method", method),
        ("4 Experiments", experiments),
        ("5 Conclusion", conclusion),
    ]
    .into_iter()
    .map(|(h, body)| SectionText {
        heading: h.into(),
        body: body.join(" "),
    })
    .collect();

    let labels: BTreeSet<u32> = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Role::Overt | Role::Subtle))
        .map(|(k, _)| k as u32 + 1)
        .collect();
    let paper = PaperRecord {
        paper_id: format!("P{:03}", i + 1),
        title: title(rng),
        abstract_text: format!("We propose a method for {topic}."),
        venue,
        year,
        citation_count: rng.gen_range(0..300),
        authors: paper_authors,
        sections,
        references,
        source_labels: (i >= UNLABELED).then_some(labels),
        notes: None,
    };
    Plan { paper, believed }
}

/// One simulated provider judgment for a reference, or `None` to leave it out.
fn judge(rng: &mut ChaCha8Rng, believed: bool) -> Option<f64> {
    let x: f64 = rng.gen();
    if believed {
        match x {
            x if x < 0.55 => Some(rng.gen_range(0.86..0.99)),
            x if x < 0.85 => Some(rng.gen_range(0.5..0.85)),
            _ => None,
        }
    } else {
        match x {
            x if x < 0.08 => Some(rng.gen_range(0.5..0.8)),
            x if x < 0.35 => Some(rng.gen_range(0.03..0.16)),
            _ => None,
        }
    }
}

fn label_for(p: f64) -> &'static str {
    if p >= 0.86 {
        "direct inspiration"
    } else if p >= 0.5 {
        "indirect inspiration"
    } else {
        "other inspiration"
    }
}

fn response(rng: &mut ChaCha8Rng, plan: &Plan, variant: PromptVariant) -> String {
    if rng.gen_bool(0.04) {
        return "I could not identify the source papers from the provided text.".into();
    }
    let mut entries = Vec::new();
    for (k, &believed) in plan.believed.iter().enumerate() {
        if let Some(p) = judge(rng, believed) {
            let value = match variant {
                PromptVariant::Inspiration => format!("\"{}\"", label_for(p)),
                _ => format!("{:.2}", p),
            };
            entries.push((k + 1, value));
        }
    }
    let body = entries
        .iter()
        .map(|(r, v)| format!("\"{r}\": {v}"))
        .collect::<Vec<_>>()
        .join(", ");
    match rng.gen_range(0..4) {
        0 => format!("{{{body}}}"),
        1 => format!("Here are the source papers:\n```json\n{{{body}}}\n```"),
        2 => format!("{{{}}}", body.replace('"', "'")),
        _ => format!("Based on the key phrases in the text, my answer is {{{body}}}."),
    }
}

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../testdata/fixture")));
    fs::create_dir_all(&dir).unwrap();
    let dir = dir.canonicalize().unwrap();
    let cache_dir = dir.join("cache");
    if cache_dir.exists() {
        fs::remove_dir_all(&cache_dir).unwrap();
    }
    let config_path = dir.join("config.toml");
    fs::write(&config_path, CONFIG).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let plans: Vec<Plan> = (0..PAPERS).map(|i| plan_paper(&mut rng, i)).collect();
    let papers: Vec<PaperRecord> = plans.iter().map(|p| p.paper.clone()).collect();
    write_corpus(dir.join("corpus.jsonl"), &papers).unwrap();

    let cfg = RunConfig::load(&config_path, &Overrides::default()).unwrap();
    let cache = CacheStore::open(&cfg.cache_dir).unwrap();
    let render = RenderOptions {
        char_budget: cfg.llm.char_budget,
    };
    let mut records = 0;
    for plan in &plans {
        for profile in &cfg.llm.providers {
            for &variant in &cfg.llm.variants {
                let prompt = render_prompt(&PromptTemplate::builtin(variant), &plan.paper, &render).unwrap();
                for sample in 0..cfg.llm.samples {
                    let key = cache_key(&profile.provider_id, &profile.model_id, &prompt, profile.temperature, sample);
                    let raw = response(&mut rng, plan, variant);
                    cache
                        .put(&CompletionRecord {
                            key,
                            provider_id: profile.provider_id.clone(),
                            model_id: profile.model_id.clone(),
                            paper_id: plan.paper.paper_id.clone(),
                            variant,
                            sample,
                            temperature: profile.temperature,
                            requested_at: 0,
                            raw_response: raw,
                            parse_status: "synthetic".into(),
                        })
                        .unwrap();
                    records += 1;
                }
            }
        }
    }
    println!("{} papers, {records} cached responses -> {}", papers.len(), dir.display());
}
