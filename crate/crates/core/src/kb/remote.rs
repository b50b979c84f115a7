use std::collections::BTreeMap;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{DbpediaRecord, InstanceOf, KbError, Qid, SearchHit, WikidataItem};
use crate::corpus::Language;

const QUERY: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');
const PATH_SEGMENT: &AsciiSet = &QUERY.remove(b'(').remove(b')').remove(b',').remove(b'\'');

const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
const ONTOLOGY_NS: &str = "http://dbpedia.org/ontology/";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct TransportError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Blocking HTTP, abstracted so tests can script or forbid network use.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
    fn post_json(&self, url: &str, body: &Value) -> Result<HttpResponse, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(user_agent: &str, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(user_agent)
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(Self { client })
    }

    fn finish(resp: reqwest::Result<reqwest::blocking::Response>) -> Result<HttpResponse, TransportError> {
        let resp = resp.map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        Self::finish(self.client.get(url).send())
    }

    fn post_json(&self, url: &str, body: &Value) -> Result<HttpResponse, TransportError> {
        Self::finish(
            self.client
                .post(url)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.to_string())
                .send(),
        )
    }
}

/// Enforces a minimum interval between requests across all threads.
pub struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(requests: f64) -> Self {
        let min_interval = if requests > 0.0 { Duration::from_secs_f64(1.0 / requests) } else { Duration::ZERO };
        Self { min_interval, last: Mutex::new(None) }
    }

    pub fn acquire(&self) {
        let mut last = self.last.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            if let Some(wait) = (prev + self.min_interval).checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 500 }
    }
}

/// URL templates. `{qid}`, `{ids}`, `{lang}`, `{host}`, `{title}` and `{query}`
/// are substituted; values are percent-encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub wikidata_entity: String,
    pub wikidata_labels: String,
    /// `{host}` is `dbpedia.org` for English and `{lang}.dbpedia.org` otherwise.
    pub dbpedia_data: String,
    pub wikipedia_search: String,
    pub wikipedia_pageprops: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            wikidata_entity: "https://www.wikidata.org/wiki/Special:EntityData/{qid}.json".into(),
            wikidata_labels: "https://www.wikidata.org/w/api.php?action=wbgetentities&ids={ids}&props=labels&languages=en&format=json".into(),
            dbpedia_data: "https://{host}/data/{title}.json".into(),
            wikipedia_search: "https://{lang}.wikipedia.org/w/api.php?action=query&list=search&srlimit=max&srnamespace=0&format=json&srsearch={query}".into(),
            wikipedia_pageprops: "https://{lang}.wikipedia.org/w/api.php?action=query&prop=pageprops&ppprop=wikibase_item&redirects=1&format=json&titles={title}".into(),
        }
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter().fold(template.to_string(), |acc, (name, value)| acc.replace(&format!("{{{name}}}"), value))
}

fn encode_query(s: &str) -> String {
    utf8_percent_encode(s, QUERY).to_string()
}

/// DBpedia resource names use underscores for spaces.
fn resource_name(title: &str) -> String {
    utf8_percent_encode(&title.replace(' ', "_"), PATH_SEGMENT).to_string()
}

fn local_name(uri: &str) -> &str {
    uri.rsplit(['/', '#']).next().unwrap_or(uri)
}

fn resource_label(uri: &str) -> String {
    percent_decode_str(local_name(uri)).decode_utf8_lossy().replace('_', " ")
}

/// Remote WikiData, DBpedia and Wikipedia clients sharing one transport,
/// one rate limiter and one retry policy.
pub struct Remote {
    transport: Box<dyn Transport>,
    endpoints: Endpoints,
    limiter: RateLimiter,
    retry: RetryPolicy,
}

impl Remote {
    pub fn new(transport: Box<dyn Transport>, endpoints: Endpoints) -> Self {
        Self { transport, endpoints, limiter: RateLimiter::per_second(10.0), retry: RetryPolicy::default() }
    }

    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        self.limiter = RateLimiter::per_second(requests_per_second);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// GET with rate limiting and exponential backoff on transport errors,
    /// 429 and 5xx. `Ok(None)` for 404.
    fn get_json(&self, url: &str) -> Result<Option<Value>, KbError> {
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            let outcome = self.transport.get(url);
            let retryable = match &outcome {
                Ok(resp) if resp.status == 404 => return Ok(None),
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return serde_json::from_str(&resp.body)
                        .map(Some)
                        .map_err(|e| KbError::Remote { url: url.to_string(), message: format!("invalid JSON: {e}") });
                }
                Ok(resp) => resp.status == 429 || resp.status >= 500,
                Err(_) => true,
            };
            if !retryable || attempt >= self.retry.max_retries {
                let message = match outcome {
                    Ok(resp) => format!("HTTP {}", resp.status),
                    Err(e) => e.0,
                };
                return Err(KbError::Remote { url: url.to_string(), message });
            }
            let delay = self.retry.base_delay_ms.saturating_mul(1 << attempt.min(16));
            log::debug!("retrying {url} in {delay} ms");
            thread::sleep(Duration::from_millis(delay));
            attempt += 1;
        }
    }

    pub(super) fn fetch_wikidata(&self, qid: &Qid) -> Result<Option<Value>, KbError> {
        let url = fill(&self.endpoints.wikidata_entity, &[("qid", qid.as_str())]);
        let Some(body) = self.get_json(&url)? else { return Ok(None) };
        let Some(mut item) = parse_wikidata_entity(&body) else { return Ok(None) };
        let ids: Vec<&str> = item.p31.iter().map(|p| p.qid.as_str()).collect();
        if !ids.is_empty() {
            let url = fill(&self.endpoints.wikidata_labels, &[("ids", &encode_query(&ids.join("|")))]);
            if let Some(labels) = self.get_json(&url)? {
                for p in &mut item.p31 {
                    if let Some(label) = labels["entities"][p.qid.as_str()]["labels"]["en"]["value"].as_str() {
                        p.label = label.to_string();
                    }
                }
            }
        }
        serde_json::to_value(&item).map(Some).map_err(|e| KbError::Cache(e.to_string()))
    }

    pub(super) fn fetch_dbpedia(&self, title: &str, language: Language) -> Result<Option<Value>, KbError> {
        let host = match language {
            Language::En => "dbpedia.org".to_string(),
            other => format!("{other}.dbpedia.org"),
        };
        let url = fill(&self.endpoints.dbpedia_data, &[("host", &host), ("lang", language.code()), ("title", &resource_name(title))]);
        let Some(body) = self.get_json(&url)? else { return Ok(None) };
        match parse_dbpedia(&body, title, language) {
            Some(record) => serde_json::to_value(&record).map(Some).map_err(|e| KbError::Cache(e.to_string())),
            None => Ok(None),
        }
    }

    pub(super) fn search(&self, query: &str, language: Language) -> Result<Option<Value>, KbError> {
        let url = fill(&self.endpoints.wikipedia_search, &[("lang", language.code()), ("query", &encode_query(query))]);
        let Some(body) = self.get_json(&url)? else { return Ok(None) };
        let Some(title) = body["query"]["search"][0]["title"].as_str() else { return Ok(None) };
        let url = fill(&self.endpoints.wikipedia_pageprops, &[("lang", language.code()), ("title", &encode_query(title))]);
        let qid = self.get_json(&url)?.and_then(|props| parse_pageprops_qid(&props));
        let hit = SearchHit { page_title: title.to_string(), qid, rank: 0 };
        serde_json::to_value(&hit).map(Some).map_err(|e| KbError::Cache(e.to_string()))
    }
}

fn claim_ids(entity: &Value, property: &str) -> Vec<Qid> {
    entity["claims"][property]
        .as_array()
        .into_iter()
        .flatten()
        .filter(|c| c["rank"].as_str() != Some("deprecated"))
        .filter_map(|c| c["mainsnak"]["datavalue"]["value"]["id"].as_str())
        .filter_map(|id| Qid::new(id).ok())
        .collect()
}

/// Parses a `Special:EntityData` document. P31 labels are left empty.
pub(crate) fn parse_wikidata_entity(body: &Value) -> Option<WikidataItem> {
    let entity = body["entities"].as_object()?.values().next()?;
    let mut item = WikidataItem::new(Qid::new(entity["id"].as_str()?).ok()?);
    if let Some(labels) = entity["labels"].as_object() {
        for lang in ["en", "de", "es", "fr", "it"] {
            if let Some(v) = labels.get(lang).and_then(|l| l["value"].as_str()) {
                item.labels.insert(lang.to_string(), v.to_string());
            }
        }
    }
    item.p17 = claim_ids(entity, "P17");
    item.p31 = claim_ids(entity, "P31").into_iter().map(|qid| InstanceOf { qid, label: String::new() }).collect();
    item.p131 = claim_ids(entity, "P131");
    Some(item)
}

/// Parses DBpedia's `/data/{title}.json` RDF-in-JSON for the page's own subject.
pub(crate) fn parse_dbpedia(body: &Value, title: &str, language: Language) -> Option<DbpediaRecord> {
    let wanted = title.replace(' ', "_");
    let (_, props) = body
        .as_object()?
        .iter()
        .find(|(subject, _)| subject.contains("/resource/") && percent_decode_str(local_name(subject)).decode_utf8_lossy() == wanted)?;
    let props = props.as_object()?;
    let mut record = DbpediaRecord::new(title, language);
    let mut abstracts: BTreeMap<String, String> = BTreeMap::new();
    for (predicate, values) in props {
        let values = values.as_array().map(Vec::as_slice).unwrap_or_default();
        if predicate == RDF_TYPE {
            for v in values {
                if let Some(uri) = v["value"].as_str().filter(|u| u.starts_with(ONTOLOGY_NS)) {
                    record.ontology_types.push(local_name(uri).to_string());
                }
            }
            continue;
        }
        let name = local_name(predicate);
        if name == "abstract" {
            for v in values {
                if let (Some(lang), Some(text)) = (v["lang"].as_str(), v["value"].as_str()) {
                    abstracts.insert(lang.to_string(), text.to_string());
                }
            }
            continue;
        }
        for v in values {
            let Some(raw) = v["value"].as_str() else { continue };
            let value = if v["type"].as_str() == Some("uri") { resource_label(raw) } else { raw.to_string() };
            record.add_property(name, value);
        }
    }
    record.abstract_text = abstracts.remove(language.code()).or_else(|| abstracts.remove("en"));
    Some(record)
}

fn parse_pageprops_qid(body: &Value) -> Option<Qid> {
    body["query"]["pages"]
        .as_object()?
        .values()
        .find_map(|page| page["pageprops"]["wikibase_item"].as_str())
        .and_then(|id| Qid::new(id).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{KbCache, KbClient, KnowledgeBase};
    use serde_json::json;
    use std::collections::HashMap;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves canned bodies by URL prefix; unknown URLs are 404.
    struct Scripted {
        routes: HashMap<String, (u16, String)>,
        calls: Arc<AtomicUsize>,
    }

    impl Transport for Scripted {
        fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let (status, body) = self.routes.get(url).cloned().unwrap_or((404, String::new()));
            Ok(HttpResponse { status, body })
        }

        fn post_json(&self, url: &str, _body: &Value) -> Result<HttpResponse, TransportError> {
            self.get(url)
        }
    }

    struct Flaky {
        failures_left: AtomicUsize,
    }

    impl Transport for Flaky {
        fn get(&self, _url: &str) -> Result<HttpResponse, TransportError> {
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Ok(HttpResponse { status: 503, body: String::new() });
            }
            Ok(HttpResponse { status: 200, body: json!({"query": {"search": []}}).to_string() })
        }

        fn post_json(&self, url: &str, _body: &Value) -> Result<HttpResponse, TransportError> {
            self.get(url)
        }
    }

    fn no_wait() -> RetryPolicy {
        RetryPolicy { max_retries: 2, base_delay_ms: 0 }
    }

    #[test]
    fn wikidata_entity_parsing_keeps_order_and_drops_deprecated() {
        let body = json!({"entities": {"Q90": {
            "id": "Q90",
            "labels": {"en": {"language": "en", "value": "Paris"}, "ja": {"language": "ja", "value": "パリ"}},
            "claims": {
                "P17": [{"mainsnak": {"datavalue": {"value": {"id": "Q142"}}}, "rank": "normal"}],
                "P31": [
                    {"mainsnak": {"datavalue": {"value": {"id": "Q515"}}}, "rank": "normal"},
                    {"mainsnak": {"datavalue": {"value": {"id": "Q1"}}}, "rank": "deprecated"},
                    {"mainsnak": {"datavalue": {"value": {"id": "Q5119"}}}, "rank": "preferred"}
                ]
            }
        }}});
        let item = parse_wikidata_entity(&body).unwrap();
        assert_eq!(item.labels.len(), 1);
        assert_eq!(item.p17, vec![Qid::new("Q142").unwrap()]);
        let p31: Vec<_> = item.p31.iter().map(|p| p.qid.as_str()).collect();
        assert_eq!(p31, ["Q515", "Q5119"]);
        assert!(item.p131.is_empty());
    }

    #[test]
    fn dbpedia_parsing_normalizes_names_and_values() {
        let body = json!({
            "http://dbpedia.org/resource/Eiffel_Tower": {
                "http://dbpedia.org/ontology/location": [{"type": "uri", "value": "http://dbpedia.org/resource/Paris"}],
                "http://dbpedia.org/property/openingDate": [{"type": "literal", "value": "1889"}],
                "http://www.w3.org/1999/02/22-rdf-syntax-ns#type": [
                    {"type": "uri", "value": "http://dbpedia.org/ontology/Place"},
                    {"type": "uri", "value": "http://www.w3.org/2002/07/owl#Thing"}
                ],
                "http://dbpedia.org/ontology/abstract": [
                    {"type": "literal", "lang": "fr", "value": "La tour Eiffel"},
                    {"type": "literal", "lang": "en", "value": "The Eiffel Tower"}
                ]
            },
            "http://dbpedia.org/resource/Gustave_Eiffel": {
                "http://dbpedia.org/ontology/birthPlace": [{"type": "uri", "value": "http://dbpedia.org/resource/Dijon"}]
            }
        });
        let rec = parse_dbpedia(&body, "Eiffel Tower", Language::En).unwrap();
        assert_eq!(rec.property("location").unwrap(), ["Paris"]);
        assert_eq!(rec.property("openingdate").unwrap(), ["1889"]);
        assert!(rec.property("birthplace").is_none());
        assert_eq!(rec.ontology_types, ["Place"]);
        assert_eq!(rec.abstract_text.as_deref(), Some("The Eiffel Tower"));
        assert!(parse_dbpedia(&json!({}), "Eiffel Tower", Language::En).is_none());
    }

    #[test]
    fn online_search_resolves_qid_and_caches_it() {
        let endpoints = Endpoints::default();
        let search_url = fill(&endpoints.wikipedia_search, &[("lang", "en"), ("query", &encode_query("U.S.A."))]);
        let props_url = fill(&endpoints.wikipedia_pageprops, &[("lang", "en"), ("title", &encode_query("United States"))]);
        let routes = HashMap::from([
            (search_url, (200, json!({"query": {"search": [{"title": "United States"}, {"title": "USA Today"}]}}).to_string())),
            (props_url, (200, json!({"query": {"pages": {"3434750": {"title": "United States", "pageprops": {"wikibase_item": "Q30"}}}}}).to_string())),
        ]);
        let calls = Arc::new(AtomicUsize::new(0));
        let remote = Remote::new(Box::new(Scripted { routes, calls: calls.clone() }), endpoints).with_rate_limit(0.0).with_retry(no_wait());
        let kb = KbClient::online(KbCache::in_memory(), remote);

        let hit = kb.search("U.S.A.", Language::En).unwrap().unwrap();
        assert_eq!(hit.page_title, "United States");
        assert_eq!(hit.qid, Some(Qid::new("Q30").unwrap()));
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        kb.search("U.S.A.", Language::En).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2, "second lookup is served from cache");
        assert_eq!(kb.search("nothing here", Language::En).unwrap(), None);
    }

    #[test]
    fn retries_then_gives_up_with_remote_error() {
        let kb = |failures| {
            let remote = Remote::new(Box::new(Flaky { failures_left: AtomicUsize::new(failures) }), Endpoints::default())
                .with_rate_limit(0.0)
                .with_retry(no_wait());
            KbClient::online(KbCache::in_memory(), remote)
        };
        assert_eq!(kb(2).search("x", Language::En).unwrap(), None);
        assert!(matches!(kb(3).search("x", Language::En), Err(KbError::Remote { .. })));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::per_second(200.0);
        let start = Instant::now();
        for _ in 0..5 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn url_encoding() {
        assert_eq!(resource_name("Queen Elizabeth II"), "Queen_Elizabeth_II");
        assert_eq!(resource_name("Zürich"), "Z%C3%BCrich");
        assert_eq!(encode_query("a b&c"), "a%20b%26c");
        assert_eq!(resource_label("http://dbpedia.org/resource/City_of_Westminster"), "City of Westminster");
    }
}
