//! Location tuples and the knowledge-base procedures that produce them:
//! deciding whether a category names a place, walking the administrative
//! hierarchy to a city, and locating non-location entities through their
//! DBpedia properties.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Article, Language};
use crate::kb::{DbpediaRecord, KbError, KnowledgeBase, Qid, WikidataItem};
use crate::linking::link_entity;

/// Substrings of a P31 label that make an item a city.
pub const CITY_KEYWORDS: [&str; 6] = ["city", "capital", "municipality", "town", "village", "commune"];

/// Substrings of a DBpedia property name that point at a location, most
/// specific first.
pub const PROPERTY_KEYWORDS: [&str; 4] = ["location", "city", "country", "place"];

/// DBpedia markers of a place: a property name or an ontology class.
pub const DBPEDIA_PLACE_PROPERTY: &str = "populationTotal";
pub const DBPEDIA_PLACE_TYPES: [&str; 4] = ["PopulatedPlace", "Location", "Place", "Settlement"];

pub const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("`{surface}` is unresolvable: {source}")]
    Unresolvable { surface: String, source: KbError },
}

/// A `(city, country)` pair. Gold rows may lack IDs, so both are optional
/// here; tuples built from the knowledge base always carry `country_qid`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocationTuple {
    #[serde(default)]
    pub city: Option<String>,
    #[serde(default)]
    pub city_qid: Option<Qid>,
    pub country: String,
    #[serde(default)]
    pub country_qid: Option<Qid>,
}

impl LocationTuple {
    pub fn country_only(country: &str, country_qid: Qid) -> Self {
        Self { city: None, city_qid: None, country: country.to_string(), country_qid: Some(country_qid) }
    }

    pub fn city_in(city: &str, city_qid: Qid, country: &str, country_qid: Qid) -> Self {
        Self { city: Some(city.to_string()), city_qid: Some(city_qid), country: country.to_string(), country_qid: Some(country_qid) }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.country.trim().is_empty() && self.country_qid.is_none() {
            return Err("location without a country".into());
        }
        if self.city_qid.is_some() && self.city.is_none() {
            return Err("city ID without a city name".into());
        }
        Ok(())
    }

    /// `"City, Country"`, or `"Country"` without a city.
    pub fn render(&self) -> String {
        match &self.city {
            Some(city) if !city.eq_ignore_ascii_case(&self.country) => format!("{city}, {}", self.country),
            _ => self.country.clone(),
        }
    }
}

/// A non-location entity placed on the map through one of its properties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedEntity {
    pub surface: String,
    pub source_qid: Option<Qid>,
    /// The property value that was located, e.g. a birthplace.
    pub place: String,
    pub location: LocationTuple,
    pub via_property: String,
}

impl LocatedEntity {
    /// The place followed by its city and country, skipping repeats:
    /// `"Mayfair, London, United Kingdom"`, `"Paris, France"`.
    pub fn render(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        for part in [Some(self.place.as_str()), self.location.city.as_deref(), Some(self.location.country.as_str())].into_iter().flatten() {
            if !part.trim().is_empty() && !parts.iter().any(|p| p.eq_ignore_ascii_case(part)) {
                parts.push(part);
            }
        }
        parts.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryRef {
    pub name: String,
    pub qid: Qid,
    /// The country item or its label could not be fetched; `name` is empty.
    pub label_missing: bool,
}

pub fn is_city(item: &WikidataItem) -> bool {
    item.p31.iter().any(|p| {
        let label = p.label.to_lowercase();
        CITY_KEYWORDS.iter().any(|k| label.contains(k))
    })
}

fn label_or_id(item: &WikidataItem) -> String {
    item.english_label().map_or_else(|| item.qid.to_string(), str::to_string)
}

/// Ordering key for keyword properties: exact keyword names first (in
/// keyword priority), then names merely containing a keyword.
fn property_rank(name: &str) -> Option<usize> {
    let lower = name.to_lowercase();
    if let Some(i) = PROPERTY_KEYWORDS.iter().position(|k| lower == *k) {
        return Some(i);
    }
    PROPERTY_KEYWORDS.iter().position(|k| lower.contains(k)).map(|i| PROPERTY_KEYWORDS.len() + i)
}

/// Keyword-bearing property names of a record in the order they are tried.
pub fn location_properties(record: &DbpediaRecord) -> Vec<&str> {
    let mut names: Vec<(usize, &str)> = record.properties.keys().filter_map(|n| property_rank(n).map(|r| (r, n.as_str()))).collect();
    names.sort();
    names.into_iter().map(|(_, n)| n).collect()
}

/// Location procedures over a knowledge base.
#[derive(Clone, Copy)]
pub struct Locator<'a> {
    kb: &'a dyn KnowledgeBase,
    max_depth: usize,
}

impl<'a> Locator<'a> {
    pub fn new(kb: &'a dyn KnowledgeBase) -> Self {
        Self { kb, max_depth: DEFAULT_MAX_DEPTH }
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn kb(&self) -> &'a dyn KnowledgeBase {
        self.kb
    }

    /// First P17 value and its English label.
    pub fn resolve_country(&self, item: &WikidataItem) -> Option<CountryRef> {
        let qid = item.p17.first()?.clone();
        let label = if qid == item.qid {
            item.english_label().map(str::to_string)
        } else {
            match self.kb.wikidata(&qid) {
                Ok(country) => country.english_label().map(str::to_string),
                Err(e) => {
                    log::warn!("country {qid} of {}: {e}", item.qid);
                    None
                }
            }
        };
        Some(match label {
            Some(name) => CountryRef { name, qid, label_missing: false },
            None => CountryRef { name: String::new(), qid, label_missing: true },
        })
    }

    /// The nearest city reachable over P131 edges, the item itself included.
    ///
    /// Targets are visited level by level in listing order, so among cities
    /// at equal distance the one reached through earlier-listed edges wins.
    /// Each item is expanded once, which bounds the walk on cyclic graphs,
    /// and no more than `max_depth` edges are followed.
    pub fn resolve_city(&self, item: &WikidataItem, max_depth: usize) -> Option<(String, Qid)> {
        if is_city(item) {
            return Some((label_or_id(item), item.qid.clone()));
        }
        let mut visited: HashSet<Qid> = HashSet::from([item.qid.clone()]);
        let mut queue: VecDeque<(Qid, usize)> = item.p131.iter().map(|q| (q.clone(), 1)).collect();
        while let Some((qid, depth)) = queue.pop_front() {
            if depth > max_depth || !visited.insert(qid.clone()) {
                continue;
            }
            let next = match self.kb.wikidata(&qid) {
                Ok(next) => next,
                Err(e) => {
                    log::debug!("P131 target {qid} skipped: {e}");
                    continue;
                }
            };
            if is_city(&next) {
                return Some((label_or_id(&next), next.qid));
            }
            queue.extend(next.p131.iter().filter(|q| !visited.contains(*q)).map(|q| (q.clone(), depth + 1)));
        }
        None
    }

    /// City and country of an item; `None` when it has no country.
    pub fn locate_item(&self, item: &WikidataItem) -> Option<LocationTuple> {
        let country = self.resolve_country(item)?;
        let city = self.resolve_city(item, self.max_depth);
        Some(LocationTuple {
            city_qid: city.as_ref().map(|(_, q)| q.clone()),
            city: city.map(|(name, _)| name),
            country: country.name,
            country_qid: Some(country.qid),
        })
    }

    pub fn locate_qid(&self, qid: &Qid) -> Result<Option<LocationTuple>, KbError> {
        Ok(self.locate_item(&self.kb.wikidata(qid)?))
    }

    /// Links a surface form and locates the linked item.
    pub fn locate_surface(&self, surface: &str, language: Language) -> Result<Option<LocationTuple>, KbError> {
        match link_entity(self.kb, surface, language)?.qid {
            Some(qid) => self.locate_qid(&qid),
            None => Ok(None),
        }
    }

    /// The page in the article's language edition, else the English one.
    pub fn dbpedia_with_fallback(&self, title: &str, language: Language) -> Result<DbpediaRecord, KbError> {
        match self.kb.dbpedia(title, language) {
            Err(KbError::NotFound { .. }) if language != Language::En => self.kb.dbpedia(title, Language::En),
            other => other,
        }
    }

    /// A category names a location when its linked page carries a DBpedia
    /// place marker or its WikiData item has P17 or P131.
    pub fn classify_category(&self, category: &str, language: Language) -> Result<Option<LocationTuple>, ResolveError> {
        let unresolvable = |source| ResolveError::Unresolvable { surface: category.to_string(), source };
        let link = link_entity(self.kb, category, language).map_err(unresolvable)?;
        let (Some(qid), Some(title)) = (link.qid, link.page_title) else { return Ok(None) };
        let item = self.kb.wikidata(&qid).map_err(unresolvable)?;
        let dbpedia_marker = match self.dbpedia_with_fallback(&title, language) {
            Ok(record) => record.property(DBPEDIA_PLACE_PROPERTY).is_some() || DBPEDIA_PLACE_TYPES.iter().any(|t| record.has_type(t)),
            Err(KbError::NotFound { .. }) => false,
            Err(e) => return Err(unresolvable(e)),
        };
        let wikidata_marker = !item.p17.is_empty() || !item.p131.is_empty();
        if !(dbpedia_marker || wikidata_marker) {
            return Ok(None);
        }
        let tuple = self.locate_item(&item);
        if tuple.is_none() {
            log::info!("category `{category}` ({qid}) is a place without a country");
        }
        Ok(tuple)
    }

    /// Distinct locations among an article's categories. Unresolvable
    /// categories are logged and skipped.
    pub fn classify_categories(&self, article: &Article) -> Vec<LocationTuple> {
        let mut out: Vec<LocationTuple> = Vec::new();
        for category in &article.categories {
            match self.classify_category(category, article.language) {
                Ok(Some(t)) if !out.contains(&t) => out.push(t),
                Ok(_) => {}
                Err(e) => log::warn!("article {}: {e}", article.id),
            }
        }
        out
    }

    /// Locates a (typically non-location) entity through the keyword
    /// properties of its DBpedia page. Properties are tried in priority
    /// order, taking the first value of each, until one resolves.
    pub fn implicit_locate(&self, surface: &str, language: Language) -> Option<LocatedEntity> {
        let link = match link_entity(self.kb, surface, language) {
            Ok(link) => link,
            Err(e) => {
                log::warn!("cannot link `{surface}`: {e}");
                return None;
            }
        };
        let title = link.page_title?;
        let record = match self.dbpedia_with_fallback(&title, language) {
            Ok(r) => r,
            Err(KbError::NotFound { .. }) => return None,
            Err(e) => {
                log::warn!("no DBpedia page for `{title}`: {e}");
                return None;
            }
        };
        for name in location_properties(&record) {
            let Some(value) = record.properties[name].first() else { continue };
            match self.locate_surface(value, record.language) {
                Ok(Some(location)) => {
                    return Some(LocatedEntity {
                        surface: surface.to_string(),
                        source_qid: link.qid,
                        place: value.clone(),
                        location,
                        via_property: name.to_string(),
                    });
                }
                Ok(None) => log::debug!("`{surface}`: {name} = `{value}` does not resolve to a place"),
                Err(e) => log::warn!("`{surface}`: cannot resolve {name} = `{value}`: {e}"),
            }
        }
        None
    }
}
