//! Candidate discovery: iterative keyword search with channel-coherence
//! expansion, the 8-rule quality predicate, and title/description
//! classifiers (keyword fallback, optional LLM client).
//!
//! The expansion policy is normative and deterministic given a seed:
//! per round, (1) search the sorted frontier keywords and fold in related
//! videos carried over from the previous round, (2) quality-check the hits
//! and nominate channels that produced at least one passing hit, (3) for
//! each nominated channel (sorted, never re-sampled once decided) sample
//! `sample_n` videos with a per-channel RNG and accept the whole channel
//! iff the sampled pass rate reaches the threshold, (4) harvest tags of the
//! sampled passing videos of accepted channels as next-round keywords and
//! their related videos (capped) as next-round hits.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Months, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::llm::{LlmClient, LlmError};
use crate::types::VideoMeta;

#[derive(Debug, thiserror::Error)]
pub enum DiscoveryError {
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("video {0} not found in catalog")]
    NotFound(String),
    #[error("title must be non-empty")]
    EmptyTitle,
    #[error("classifier returned {response:?}, not one of the schema labels")]
    BadLabel { response: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("invalid discovery config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("fixture parse: {0}")]
    Fixture(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Quality predicate
// ---------------------------------------------------------------------------

/// The 8 acceptance rules for instructional screen recordings. Rules 2 and 3
/// are both driven by the `is_screen_recording` flag (the metadata cannot
/// distinguish focus from capture method).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityRule {
    MinimalOverlays,
    ScreenRecordingFocus,
    DirectCapture,
    English,
    Stable,
    Captions,
    Horizontal,
    Recency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub pass: bool,
    pub failed_rules: Vec<QualityRule>,
}

/// Evaluates all 8 rules against catalog metadata. `pass` iff every rule
/// holds.
pub fn quality_check(m: &VideoMeta, reference_date: NaiveDate) -> QualityVerdict {
    let mut failed = Vec::new();
    if m.overlay_fraction > 0.1 {
        failed.push(QualityRule::MinimalOverlays);
    }
    if !m.is_screen_recording {
        failed.push(QualityRule::ScreenRecordingFocus);
        failed.push(QualityRule::DirectCapture);
    }
    if !m.language.to_ascii_lowercase().starts_with("en") {
        failed.push(QualityRule::English);
    }
    if !m.is_stable {
        failed.push(QualityRule::Stable);
    }
    if !m.has_captions {
        failed.push(QualityRule::Captions);
    }
    if m.width_px <= m.height_px {
        failed.push(QualityRule::Horizontal);
    }
    let fresh = m
        .published_date
        .checked_add_months(Months::new(60))
        .map(|limit| limit >= reference_date)
        .unwrap_or(false);
    if !fresh {
        failed.push(QualityRule::Recency);
    }
    QualityVerdict { pass: failed.is_empty(), failed_rules: failed }
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContentLabel {
    #[serde(rename = "A_tutorial")]
    ATutorial,
    #[serde(rename = "B_background")]
    BBackground,
    #[serde(rename = "C_tech_talk")]
    CTechTalk,
    #[serde(rename = "D_unrelated")]
    DUnrelated,
}

impl ContentLabel {
    pub fn name(self) -> &'static str {
        match self {
            ContentLabel::ATutorial => "A_tutorial",
            ContentLabel::BBackground => "B_background",
            ContentLabel::CTechTalk => "C_tech_talk",
            ContentLabel::DUnrelated => "D_unrelated",
        }
    }
}

/// A label schema for metadata classification: ordered labels with keyword
/// signals, a default, and the instruction used on the LLM path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub name: String,
    pub labels: Vec<LabelDef>,
    pub default_label: String,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDef {
    pub name: String,
    pub keywords: Vec<String>,
}

/// The four content-form labels with their keyword signals.
pub fn content_schema() -> LabelSchema {
    let kw = |s: &[&str]| s.iter().map(|k| k.to_string()).collect();
    LabelSchema {
        name: "content_form".into(),
        labels: vec![
            LabelDef {
                name: "A_tutorial".into(),
                keywords: kw(&[
                    "how to", "tutorial", "install", "create", "fix", "setup", "set up",
                    "configure", "step by step", "guide", "enable", "disable", "upgrade",
                    "download", "open", "click", "type",
                ]),
            },
            LabelDef {
                name: "B_background".into(),
                keywords: kw(&[
                    "overview", "history", "comparison", "review", "market share", "explained",
                    "explainer", "versus", " vs ",
                ]),
            },
            LabelDef {
                name: "C_tech_talk".into(),
                keywords: kw(&[
                    "keynote", "webinar", "seminar", "lecture", "conference", "talk",
                    "presentation",
                ]),
            },
        ],
        default_label: "D_unrelated".into(),
        instruction: "Classify the video by its title and description. Choose exactly one of \
                      the four labels and answer with the label only: A_tutorial (hands-on \
                      screen tutorials with step-by-step UI operations), B_background \
                      (expository background with incidental screen use), C_tech_talk (talks \
                      or presentations with slides), D_unrelated (off-topic for computer-use \
                      learning)."
            .into(),
    }
}

/// The six domain labels used for topical audits.
pub fn domain_schema() -> LabelSchema {
    let kw = |s: &[&str]| s.iter().map(|k| k.to_string()).collect();
    LabelSchema {
        name: "domain".into(),
        labels: vec![
            LabelDef {
                name: "office".into(),
                keywords: kw(&[
                    "excel", "word", "powerpoint", "outlook", "spreadsheet", "slides", "docs",
                    "onenote", "office",
                ]),
            },
            LabelDef {
                name: "workflow".into(),
                keywords: kw(&["automation", "workflow", "zapier", "n8n", "airtable", "automate"]),
            },
            LabelDef {
                name: "professional".into(),
                keywords: kw(&[
                    "photoshop", "autocad", "blender", "premiere", "illustrator", "figma",
                    "matlab", "solidworks", "unity", "davinci",
                ]),
            },
            LabelDef {
                name: "os".into(),
                keywords: kw(&[
                    "windows", "macos", "linux", "ubuntu", "settings", "control panel",
                    "file explorer", "finder", "registry", "bios", "driver",
                ]),
            },
            LabelDef {
                name: "daily".into(),
                keywords: kw(&[
                    "browser", "email", "gmail", "youtube", "facebook", "photos", "shopping",
                    "maps", "netflix", "spotify", "whatsapp", "chrome",
                ]),
            },
        ],
        default_label: "other".into(),
        instruction: "Classify the video by its title and description into exactly one domain \
                      label and answer with the label only: daily, office, workflow, \
                      professional, os, other."
            .into(),
    }
}

pub enum Classifier<'a> {
    /// Keyword-rule fallback: first label (in schema order) with any signal
    /// match wins, word-boundary matched, case-insensitive.
    Keyword,
    Llm(&'a dyn LlmClient),
}

fn phrase_matches(haystack: &str, phrase: &str) -> bool {
    let re = regex::Regex::new(&format!(r"(?i)\b{}\b", regex::escape(phrase.trim())))
        .expect("escaped phrase regex");
    re.is_match(haystack)
}

/// Classifies against an arbitrary schema; returns the chosen label name.
pub fn classify_with_schema(
    schema: &LabelSchema,
    title: &str,
    description: &str,
    classifier: &Classifier<'_>,
) -> Result<String, DiscoveryError> {
    if title.trim().is_empty() {
        return Err(DiscoveryError::EmptyTitle);
    }
    match classifier {
        Classifier::Keyword => {
            let text = format!("{title}\n{description}");
            for label in &schema.labels {
                if label.keywords.iter().any(|k| phrase_matches(&text, k)) {
                    return Ok(label.name.clone());
                }
            }
            Ok(schema.default_label.clone())
        }
        Classifier::Llm(client) => {
            let prompt = format!(
                "{}\n\nTitle: {title}\nDescription: {description}\n\nLabel:",
                schema.instruction
            );
            let response = client.complete(&prompt)?;
            let answer = response.trim();
            let valid = schema
                .labels
                .iter()
                .map(|l| l.name.as_str())
                .chain([schema.default_label.as_str()])
                .any(|l| l == answer);
            if !valid {
                return Err(DiscoveryError::BadLabel { response: answer.to_string() });
            }
            Ok(answer.to_string())
        }
    }
}

/// Four-way content classification of a title/description pair.
pub fn classify_content(
    title: &str,
    description: &str,
    classifier: &Classifier<'_>,
) -> Result<ContentLabel, DiscoveryError> {
    let name = classify_with_schema(&content_schema(), title, description, classifier)?;
    Ok(match name.as_str() {
        "A_tutorial" => ContentLabel::ATutorial,
        "B_background" => ContentLabel::BBackground,
        "C_tech_talk" => ContentLabel::CTechTalk,
        _ => ContentLabel::DUnrelated,
    })
}

// ---------------------------------------------------------------------------
// Catalog access
// ---------------------------------------------------------------------------

/// Abstract catalog queries. Implementations must answer deterministically
/// for a fixed fixture/backend state.
pub trait Catalog {
    fn search(&self, keyword: &str) -> Result<Vec<String>, DiscoveryError>;
    fn channel_videos(&self, channel_id: &str) -> Result<Vec<String>, DiscoveryError>;
    fn related(&self, video_id: &str) -> Result<Vec<String>, DiscoveryError>;
    fn meta(&self, video_id: &str) -> Result<VideoMeta, DiscoveryError>;
}

/// File-backed synthetic catalog: metadata plus related edges. Search
/// matches keywords against titles and tags, word-boundary insensitive to
/// case; all listings are sorted by video id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogFixture {
    pub videos: Vec<VideoMeta>,
    #[serde(default)]
    pub related: BTreeMap<String, Vec<String>>,
}

#[derive(Debug)]
pub struct SyntheticCatalog {
    by_id: BTreeMap<String, VideoMeta>,
    by_channel: BTreeMap<String, Vec<String>>,
    related: BTreeMap<String, Vec<String>>,
}

impl SyntheticCatalog {
    pub fn new(fixture: CatalogFixture) -> SyntheticCatalog {
        let mut by_id = BTreeMap::new();
        let mut by_channel: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for v in fixture.videos {
            by_channel.entry(v.channel_id.clone()).or_default().push(v.video_id.clone());
            by_id.insert(v.video_id.clone(), v);
        }
        for vids in by_channel.values_mut() {
            vids.sort();
        }
        SyntheticCatalog { by_id, by_channel, related: fixture.related }
    }

    pub fn load(path: &std::path::Path) -> Result<SyntheticCatalog, DiscoveryError> {
        let raw = std::fs::read_to_string(path)?;
        Ok(SyntheticCatalog::new(serde_json::from_str(&raw)?))
    }

    pub fn video_count(&self) -> usize {
        self.by_id.len()
    }
}

impl Catalog for SyntheticCatalog {
    fn search(&self, keyword: &str) -> Result<Vec<String>, DiscoveryError> {
        let mut hits = Vec::new();
        for (id, meta) in &self.by_id {
            let in_title = phrase_matches(&meta.title, keyword);
            let in_tags = meta.tags.iter().any(|t| phrase_matches(t, keyword));
            if in_title || in_tags {
                hits.push(id.clone());
            }
        }
        Ok(hits)
    }

    fn channel_videos(&self, channel_id: &str) -> Result<Vec<String>, DiscoveryError> {
        Ok(self.by_channel.get(channel_id).cloned().unwrap_or_default())
    }

    fn related(&self, video_id: &str) -> Result<Vec<String>, DiscoveryError> {
        Ok(self.related.get(video_id).cloned().unwrap_or_default())
    }

    fn meta(&self, video_id: &str) -> Result<VideoMeta, DiscoveryError> {
        self.by_id
            .get(video_id)
            .cloned()
            .ok_or_else(|| DiscoveryError::NotFound(video_id.to_string()))
    }
}

/// Endpoint templates for a generic HTTP catalog service. `{query}`,
/// `{channel_id}`, and `{video_id}` are substituted per call; the API key
/// is read from the environment, never from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpCatalogConfig {
    pub search_url: String,
    pub channel_url: String,
    pub related_url: String,
    pub meta_url: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_catalog_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_api_key_env() -> String {
    "TRAJMINE_CATALOG_KEY".into()
}

fn default_catalog_timeout_ms() -> u64 {
    30_000
}

pub struct HttpCatalog {
    config: HttpCatalogConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct VideoIdList {
    video_ids: Vec<String>,
}

impl HttpCatalog {
    pub fn new(config: HttpCatalogConfig) -> Result<HttpCatalog, DiscoveryError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| DiscoveryError::Catalog(e.to_string()))?;
        Ok(HttpCatalog { config, client })
    }

    fn get(&self, url: &str) -> Result<String, DiscoveryError> {
        let key = std::env::var(&self.config.api_key_env).unwrap_or_default();
        let mut req = self.client.get(url);
        if !key.is_empty() {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| DiscoveryError::Catalog(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(DiscoveryError::Catalog(format!("{url}: status {}", resp.status())));
        }
        resp.text().map_err(|e| DiscoveryError::Catalog(e.to_string()))
    }

    fn id_list(&self, url: &str) -> Result<Vec<String>, DiscoveryError> {
        let body = self.get(url)?;
        let list: VideoIdList =
            serde_json::from_str(&body).map_err(|e| DiscoveryError::Catalog(e.to_string()))?;
        Ok(list.video_ids)
    }
}

impl Catalog for HttpCatalog {
    fn search(&self, keyword: &str) -> Result<Vec<String>, DiscoveryError> {
        self.id_list(&self.config.search_url.replace("{query}", keyword))
    }

    fn channel_videos(&self, channel_id: &str) -> Result<Vec<String>, DiscoveryError> {
        self.id_list(&self.config.channel_url.replace("{channel_id}", channel_id))
    }

    fn related(&self, video_id: &str) -> Result<Vec<String>, DiscoveryError> {
        self.id_list(&self.config.related_url.replace("{video_id}", video_id))
    }

    fn meta(&self, video_id: &str) -> Result<VideoMeta, DiscoveryError> {
        let body = self.get(&self.config.meta_url.replace("{video_id}", video_id))?;
        serde_json::from_str(&body).map_err(|e| DiscoveryError::Catalog(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Expansion policy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// Videos sampled per nominated channel.
    pub sample_n: usize,
    /// Channel acceptance threshold on the sampled pass rate.
    pub pass_threshold: f64,
    pub max_rounds: usize,
    pub seed: u64,
    pub reference_date: NaiveDate,
    /// Cap on related videos carried into the next round.
    pub related_cap_per_round: usize,
}

impl DiscoveryConfig {
    pub fn new(seed: u64, max_rounds: usize, reference_date: NaiveDate) -> DiscoveryConfig {
        DiscoveryConfig {
            sample_n: 10,
            pass_threshold: 0.8,
            max_rounds,
            seed,
            reference_date,
            related_cap_per_round: 50,
        }
    }

    pub fn check(&self) -> Result<(), DiscoveryError> {
        if self.sample_n == 0 {
            return Err(DiscoveryError::Config("sample_n must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pass_threshold) {
            return Err(DiscoveryError::Config("pass_threshold outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryState {
    pub frontier: Vec<String>,
    pub used_keywords: BTreeSet<String>,
    pub visited_videos: BTreeSet<String>,
    pub accepted_channels: BTreeSet<String>,
    pub rejected_channels: BTreeSet<String>,
    pub candidates: BTreeSet<String>,
    pub rounds_run: usize,
}

/// The per-channel sampling seed; part of the normative policy so
/// independent simulations can reproduce the sampling.
pub fn channel_sample_seed(seed: u64, round: usize, channel_id: &str) -> u64 {
    let hex = crate::llm::sha256_hex(&format!("{seed}:{round}:{channel_id}"));
    u64::from_str_radix(&hex[..16], 16).expect("hex digest")
}

/// Samples `k` of `len` indices uniformly without replacement, ascending.
pub fn sample_indices(seed: u64, len: usize, k: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, k.min(len)).into_vec();
    idx.sort_unstable();
    idx
}

/// Runs the iterative discovery policy against a catalog.
pub fn expand(
    catalog: &dyn Catalog,
    seeds: &[String],
    config: &DiscoveryConfig,
) -> Result<DiscoveryState, DiscoveryError> {
    config.check()?;
    if seeds.is_empty() {
        return Err(DiscoveryError::Config("seed keyword list is empty".into()));
    }
    let mut state = DiscoveryState::default();
    let mut frontier: Vec<String> = {
        let set: BTreeSet<String> = seeds.iter().map(|s| s.to_lowercase()).collect();
        set.into_iter().collect()
    };
    let mut pending_related: BTreeSet<String> = BTreeSet::new();

    for round in 0..config.max_rounds {
        if frontier.is_empty() && pending_related.is_empty() {
            break;
        }
        state.rounds_run = round + 1;
        state.used_keywords.extend(frontier.iter().cloned());

        // (1) Gather this round's hits.
        let mut hits: BTreeSet<String> = std::mem::take(&mut pending_related);
        for kw in &frontier {
            hits.extend(catalog.search(kw)?);
        }

        // (2) Quality-check hits; passing hits nominate their channels.
        let mut nominated: BTreeSet<String> = BTreeSet::new();
        for vid in &hits {
            state.visited_videos.insert(vid.clone());
            let meta = catalog.meta(vid)?;
            if quality_check(&meta, config.reference_date).pass {
                nominated.insert(meta.channel_id);
            }
        }

        // (3) Sample each new channel once; accept or reject permanently.
        let mut round_tags: BTreeSet<String> = BTreeSet::new();
        let mut round_related: BTreeSet<String> = BTreeSet::new();
        for channel in nominated {
            if state.accepted_channels.contains(&channel)
                || state.rejected_channels.contains(&channel)
            {
                continue;
            }
            let vids = catalog.channel_videos(&channel)?;
            if vids.is_empty() {
                state.rejected_channels.insert(channel);
                continue;
            }
            let sample_seed = channel_sample_seed(config.seed, round, &channel);
            let indices = sample_indices(sample_seed, vids.len(), config.sample_n);
            let mut passing: Vec<String> = Vec::new();
            for &i in &indices {
                let meta = catalog.meta(&vids[i])?;
                if quality_check(&meta, config.reference_date).pass {
                    passing.push(vids[i].clone());
                }
            }
            let rate = passing.len() as f64 / indices.len() as f64;
            if rate >= config.pass_threshold {
                state.accepted_channels.insert(channel);
                state.candidates.extend(vids.iter().cloned());
                // (4) Harvest follow-up signals from the inspected passing
                // videos.
                for vid in &passing {
                    let meta = catalog.meta(vid)?;
                    round_tags.extend(meta.tags.iter().map(|t| t.to_lowercase()));
                    round_related.extend(catalog.related(vid)?);
                }
            } else {
                state.rejected_channels.insert(channel);
            }
        }

        frontier = round_tags
            .into_iter()
            .filter(|t| !state.used_keywords.contains(t))
            .collect();
        pending_related = round_related
            .into_iter()
            .filter(|v| !state.visited_videos.contains(v))
            .take(config.related_cap_per_round)
            .collect();
    }
    state.frontier = frontier;
    Ok(state)
}
