//! Named-entity recognition: a provider interface, tag normalization and the
//! ensemble union of several providers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kb::Transport;
use crate::text;

/// Normalized labels that count as locations.
pub const LOCATION_LABELS: [&str; 3] = ["LOC", "location", "geopolitical area"];

#[derive(Debug, Error)]
pub enum NerError {
    #[error("no NER provider configured")]
    NoProviders,
    #[error("provider {provider} failed: {message}")]
    Provider { provider: String, message: String },
    #[error("all NER providers failed")]
    AllProvidersFailed,
    #[error("cannot load gazetteer {path}: {message}")]
    Gazetteer { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerSpan {
    pub surface: String,
    /// Char offsets into the text.
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub is_location: bool,
}

impl NerSpan {
    pub fn new(surface: &str, start: usize, end: usize, label: &str) -> Self {
        Self { surface: surface.to_string(), start, end, label: label.to_string(), is_location: is_location_label(label) }
    }
}

pub fn is_location_label(label: &str) -> bool {
    LOCATION_LABELS.contains(&label)
}

/// A black-box recognizer. Offsets in the returned spans are char offsets.
pub trait NerProvider: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, text: &str) -> Result<Vec<NerSpan>, NerError>;
}

/// Maps provider tag vocabularies (CoNLL, OntoNotes, ...) onto one label
/// set. BIO prefixes are stripped; unknown tags pass through unchanged and
/// are never locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMap {
    pub tags: BTreeMap<String, String>,
}

impl Default for TagMap {
    fn default() -> Self {
        let pairs = [
            ("LOC", "LOC"),
            ("LOCATION", "location"),
            ("GPE", "geopolitical area"),
            ("GEOPOLITICAL AREA", "geopolitical area"),
            ("PER", "person"),
            ("PERSON", "person"),
            ("ORG", "organization"),
            ("ORGANIZATION", "organization"),
            ("MISC", "MISC"),
            ("FAC", "facility"),
            ("FACILITY", "facility"),
            ("NORP", "group"),
            ("GROUP", "group"),
            ("EVENT", "event"),
        ];
        Self { tags: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl TagMap {
    pub fn normalize(&self, raw: &str) -> String {
        let trimmed = raw.trim();
        let bare = trimmed
            .strip_prefix("B-")
            .or_else(|| trimmed.strip_prefix("I-"))
            .or_else(|| trimmed.strip_prefix("E-"))
            .or_else(|| trimmed.strip_prefix("S-"))
            .unwrap_or(trimmed);
        self.tags.get(&bare.to_uppercase()).cloned().unwrap_or_else(|| bare.to_string())
    }
}

/// Runs every provider and takes the union of their spans, deduplicated on
/// `(start, end, label)` after tag normalization and sorted by offset.
/// Overlapping spans with different boundaries or labels are all kept.
/// A failing provider is skipped; if all fail, the call fails.
pub fn extract_entities(text: &str, providers: &[&dyn NerProvider], tags: &TagMap) -> Result<Vec<NerSpan>, NerError> {
    if providers.is_empty() {
        return Err(NerError::NoProviders);
    }
    let len = text::char_len(text);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut failures = 0;
    for provider in providers {
        let spans = match provider.extract(text) {
            Ok(spans) => spans,
            Err(e) => {
                log::warn!("NER provider {} failed: {e}", provider.name());
                failures += 1;
                continue;
            }
        };
        for span in spans {
            if span.end <= span.start || span.end > len {
                log::warn!("{}: span {}..{} outside the text, dropped", provider.name(), span.start, span.end);
                continue;
            }
            let label = tags.normalize(&span.label);
            if seen.insert((span.start, span.end, label.clone())) {
                let surface = text::slice_chars(text, span.start, span.end).unwrap_or(&span.surface).to_string();
                out.push(NerSpan::new(&surface, span.start, span.end, &label));
            }
        }
    }
    if failures == providers.len() {
        return Err(NerError::AllProvidersFailed);
    }
    out.sort_by(|a, b| (a.start, a.end, &a.label).cmp(&(b.start, b.end, &b.label)));
    Ok(out)
}

/// Dictionary lookup over surface forms, matching whole words only.
/// Deterministic stand-in for transformer NER in tests and offline runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerProvider {
    pub name: String,
    /// Surface form to raw label.
    pub entries: BTreeMap<String, String>,
}

impl GazetteerProvider {
    pub fn new<I, S, L>(name: &str, entries: I) -> Self
    where
        I: IntoIterator<Item = (S, L)>,
        S: Into<String>,
        L: Into<String>,
    {
        Self { name: name.to_string(), entries: entries.into_iter().map(|(s, l)| (s.into(), l.into())).collect() }
    }

    /// Reads `{"name": ..., "entries": {"surface": "LABEL", ...}}`.
    pub fn load(path: &Path) -> Result<Self, NerError> {
        let err = |message: String| NerError::Gazetteer { path: path.display().to_string(), message };
        let raw = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&raw).map_err(|e| err(e.to_string()))
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

impl NerProvider for GazetteerProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, text: &str) -> Result<Vec<NerSpan>, NerError> {
        let mut spans = Vec::new();
        for (surface, label) in &self.entries {
            if surface.is_empty() {
                continue;
            }
            for (byte, _) in text.match_indices(surface.as_str()) {
                let before = text[..byte].chars().next_back();
                let after = text[byte + surface.len()..].chars().next();
                if is_word_char(before) || is_word_char(after) {
                    continue;
                }
                let start = text::char_offset(text, byte);
                let end = start + text::char_len(surface);
                spans.push(NerSpan::new(surface, start, end, label));
            }
        }
        spans.sort_by_key(|s| (s.start, s.end));
        Ok(spans)
    }
}

/// A token-classification model behind an HTTP inference endpoint. The
/// request is `{"inputs": text}`; the response is a list of
/// `{"entity_group" | "entity", "start", "end", "word"}` with char offsets.
pub struct RemoteNerProvider {
    name: String,
    url: String,
    transport: Box<dyn Transport>,
}

impl RemoteNerProvider {
    /// `endpoint` may contain `{model}`, replaced by the model identifier.
    pub fn new(model: &str, endpoint: &str, transport: Box<dyn Transport>) -> Self {
        Self { name: model.to_string(), url: endpoint.replace("{model}", model), transport }
    }
}

impl NerProvider for RemoteNerProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, text: &str) -> Result<Vec<NerSpan>, NerError> {
        let fail = |message: String| NerError::Provider { provider: self.name.clone(), message };
        let resp = self.transport.post_json(&self.url, &json!({ "inputs": text })).map_err(|e| fail(e.0))?;
        if !(200..300).contains(&resp.status) {
            return Err(fail(format!("HTTP {}", resp.status)));
        }
        let body: Value = serde_json::from_str(&resp.body).map_err(|e| fail(e.to_string()))?;
        let items = body.as_array().ok_or_else(|| fail("expected a JSON array".into()))?;
        let mut spans = Vec::new();
        for it in items {
            let label = it["entity_group"].as_str().or_else(|| it["entity"].as_str());
            let (Some(label), Some(start), Some(end)) = (label, it["start"].as_u64(), it["end"].as_u64()) else {
                return Err(fail(format!("malformed entity {it}")));
            };
            let (start, end) = (start as usize, end as usize);
            let surface = text::slice_chars(text, start, end).unwrap_or_default();
            spans.push(NerSpan::new(surface, start, end, label));
        }
        Ok(spans)
    }
}
