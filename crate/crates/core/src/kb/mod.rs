//! Knowledge-base access: WikiData items, DBpedia records and Wikipedia
//! search, all served through a persistent cache.
//!
//! [`KbClient`] is the one implementation of [`KnowledgeBase`] the pipeline
//! uses. In [`FetchPolicy::CacheOnly`] mode it never touches the network, so a
//! cache file doubles as an offline fixture backend.

mod cache;
mod remote;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Language;

pub use cache::KbCache;
pub use remote::{Endpoints, HttpResponse, HttpTransport, RateLimiter, Remote, RetryPolicy, Transport, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KbError {
    #[error("invalid WikiData ID `{0}`")]
    InvalidQid(String),
    #[error("empty DBpedia title")]
    EmptyTitle,
    #[error("empty search query")]
    EmptyQuery,
    #[error("{origin} entry `{key}` not found")]
    NotFound { origin: KbSource, key: String },
    #[error("{origin} entry `{key}` is not cached and the network is disabled")]
    CacheMiss { origin: KbSource, key: String },
    #[error("remote request to {url} failed: {message}")]
    Remote { url: String, message: String },
    #[error("cache error: {0}")]
    Cache(String),
}

/// A WikiData item identifier, `Q` followed by digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Qid(String);

impl Qid {
    pub fn new(raw: &str) -> Result<Self, KbError> {
        let digits = raw.strip_prefix('Q').unwrap_or("");
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(KbError::InvalidQid(raw.to_string()));
        }
        Ok(Qid(raw.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Qid {
    type Error = KbError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Qid::new(&value)
    }
}

impl From<Qid> for String {
    fn from(q: Qid) -> Self {
        q.0
    }
}

impl FromStr for Qid {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Qid::new(s)
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbSource {
    Wikidata,
    Dbpedia,
    Search,
}

impl fmt::Display for KbSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KbSource::Wikidata => "wikidata",
            KbSource::Dbpedia => "dbpedia",
            KbSource::Search => "search",
        })
    }
}

/// A P31 ("instance of") value with its English label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceOf {
    pub qid: Qid,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikidataItem {
    pub qid: Qid,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    /// country
    #[serde(default)]
    pub p17: Vec<Qid>,
    /// instance of
    #[serde(default)]
    pub p31: Vec<InstanceOf>,
    /// located in the administrative territorial entity
    #[serde(default)]
    pub p131: Vec<Qid>,
}

impl WikidataItem {
    pub fn new(qid: Qid) -> Self {
        Self { qid, labels: BTreeMap::new(), p17: vec![], p31: vec![], p131: vec![] }
    }

    /// English label, else any label.
    pub fn english_label(&self) -> Option<&str> {
        self.labels.get("en").or_else(|| self.labels.values().next()).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbpediaRecord {
    pub title: String,
    pub language: Language,
    /// Property local names, lowercased, to their values in document order.
    #[serde(default)]
    pub properties: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub ontology_types: Vec<String>,
    #[serde(default, rename = "abstract")]
    pub abstract_text: Option<String>,
}

impl DbpediaRecord {
    pub fn new(title: &str, language: Language) -> Self {
        Self { title: title.to_string(), language, properties: BTreeMap::new(), ontology_types: vec![], abstract_text: None }
    }

    /// Adds a value, normalizing the property name to lowercase.
    pub fn add_property(&mut self, name: &str, value: impl Into<String>) {
        self.properties.entry(name.to_lowercase()).or_default().push(value.into());
    }

    pub fn property(&self, name: &str) -> Option<&[String]> {
        self.properties.get(&name.to_lowercase()).map(Vec::as_slice)
    }

    pub fn has_type(&self, ty: &str) -> bool {
        self.ontology_types.iter().any(|t| t.eq_ignore_ascii_case(ty))
    }

    /// Target of a redirect page, if this record is one.
    pub fn redirect_target(&self) -> Option<&str> {
        self.property("wikiPageRedirects").and_then(|v| v.first()).map(String::as_str)
    }
}

/// The first hit of a Wikipedia search and the WikiData ID of that page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub page_title: String,
    pub qid: Option<Qid>,
    /// Zero-based position of the page in the search results.
    #[serde(default)]
    pub rank: usize,
}

/// Per-entity lookups the location procedures need.
pub trait KnowledgeBase: Send + Sync {
    fn wikidata(&self, qid: &Qid) -> Result<WikidataItem, KbError>;

    /// DBpedia record for a page in one language edition. Redirect pages
    /// are followed one hop.
    fn dbpedia(&self, title: &str, language: Language) -> Result<DbpediaRecord, KbError>;

    /// First Wikipedia search result for `query`; `None` when the search is empty.
    fn search(&self, query: &str, language: Language) -> Result<Option<SearchHit>, KbError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FetchPolicy {
    /// Serve from cache, fetch and record misses remotely.
    #[default]
    OnlineThenCache,
    CacheOnly,
}

impl FromStr for FetchPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "online" | "online-then-cache" => Ok(FetchPolicy::OnlineThenCache),
            "cache-only" | "offline" => Ok(FetchPolicy::CacheOnly),
            other => Err(format!("unknown network policy `{other}` (expected online or cache-only)")),
        }
    }
}

pub(crate) fn dbpedia_key(language: Language, title: &str) -> String {
    format!("{language}:{title}")
}

pub(crate) fn search_key(language: Language, query: &str) -> String {
    format!("{language}:{query}")
}

pub struct KbClient {
    cache: KbCache,
    policy: FetchPolicy,
    remote: Option<Remote>,
    misses: Mutex<BTreeSet<String>>,
}

impl KbClient {
    pub fn cache_only(cache: KbCache) -> Self {
        Self { cache, policy: FetchPolicy::CacheOnly, remote: None, misses: Mutex::default() }
    }

    pub fn online(cache: KbCache, remote: Remote) -> Self {
        Self { cache, policy: FetchPolicy::OnlineThenCache, remote: Some(remote), misses: Mutex::default() }
    }

    /// Cache-only mode with a transport attached; used to prove the
    /// transport is never touched.
    pub fn with_policy(cache: KbCache, policy: FetchPolicy, remote: Option<Remote>) -> Self {
        Self { cache, policy, remote, misses: Mutex::default() }
    }

    pub fn policy(&self) -> FetchPolicy {
        self.policy
    }

    pub fn cache(&self) -> &KbCache {
        &self.cache
    }

    /// Keys requested in cache-only mode that the cache did not hold,
    /// formatted as `source/key`.
    pub fn missing_keys(&self) -> Vec<String> {
        self.misses.lock().expect("miss set poisoned").iter().cloned().collect()
    }

    /// Cache lookup, else remote fetch (storing the outcome, including a
    /// negative one, as `null`).
    fn lookup<F>(&self, source: KbSource, key: &str, fetch: F) -> Result<Option<serde_json::Value>, KbError>
    where
        F: FnOnce(&Remote) -> Result<Option<serde_json::Value>, KbError>,
    {
        if let Some(v) = self.cache.get(source, key) {
            return Ok((!v.is_null()).then_some(v));
        }
        let remote = match (self.policy, &self.remote) {
            (FetchPolicy::OnlineThenCache, Some(remote)) => remote,
            _ => {
                self.misses.lock().expect("miss set poisoned").insert(format!("{source}/{key}"));
                return Err(KbError::CacheMiss { origin: source, key: key.to_string() });
            }
        };
        let fetched = fetch(remote)?;
        let stored = fetched.clone().unwrap_or(serde_json::Value::Null);
        if let Err(e) = self.cache.insert(source, key, stored) {
            log::warn!("could not persist {source}/{key}: {e}");
        }
        Ok(fetched)
    }

    fn decode<T: serde::de::DeserializeOwned>(source: KbSource, key: &str, value: serde_json::Value) -> Result<T, KbError> {
        serde_json::from_value(value).map_err(|e| KbError::Cache(format!("corrupt {source}/{key}: {e}")))
    }

    fn dbpedia_raw(&self, title: &str, language: Language) -> Result<DbpediaRecord, KbError> {
        let key = dbpedia_key(language, title);
        match self.lookup(KbSource::Dbpedia, &key, |r| r.fetch_dbpedia(title, language))? {
            Some(v) => Self::decode(KbSource::Dbpedia, &key, v),
            None => Err(KbError::NotFound { origin: KbSource::Dbpedia, key }),
        }
    }
}

impl KnowledgeBase for KbClient {
    fn wikidata(&self, qid: &Qid) -> Result<WikidataItem, KbError> {
        let key = qid.as_str();
        match self.lookup(KbSource::Wikidata, key, |r| r.fetch_wikidata(qid))? {
            Some(v) => Self::decode(KbSource::Wikidata, key, v),
            None => Err(KbError::NotFound { origin: KbSource::Wikidata, key: key.to_string() }),
        }
    }

    fn dbpedia(&self, title: &str, language: Language) -> Result<DbpediaRecord, KbError> {
        if title.trim().is_empty() {
            return Err(KbError::EmptyTitle);
        }
        let record = self.dbpedia_raw(title, language)?;
        match record.redirect_target() {
            Some(target) if target != title => self.dbpedia_raw(target, language),
            _ => Ok(record),
        }
    }

    fn search(&self, query: &str, language: Language) -> Result<Option<SearchHit>, KbError> {
        if query.trim().is_empty() {
            return Err(KbError::EmptyQuery);
        }
        let key = search_key(language, query);
        match self.lookup(KbSource::Search, &key, |r| r.search(query, language))? {
            Some(v) => Self::decode(KbSource::Search, &key, v).map(Some),
            None => Ok(None),
        }
    }
}

/// Validates the ID before any lookup.
pub fn fetch_wikidata(kb: &dyn KnowledgeBase, qid: &str) -> Result<WikidataItem, KbError> {
    kb.wikidata(&Qid::new(qid)?)
}

pub fn fetch_dbpedia(kb: &dyn KnowledgeBase, title: &str, language: Language) -> Result<DbpediaRecord, KbError> {
    if title.trim().is_empty() {
        return Err(KbError::EmptyTitle);
    }
    kb.dbpedia(title, language)
}
