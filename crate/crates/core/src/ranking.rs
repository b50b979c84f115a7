//! Candidate representations, cosine ranking against the document, and the
//! first-location baselines.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Article;
use crate::embedding::{cosine, embed_document, ChunkingConfig, EmbedError, Embedding, EmbeddingProvider};
use crate::kb::{KbError, Qid};
use crate::linking::link_entity;
use crate::location::{LocatedEntity, LocationTuple, Locator};
use crate::ner::NerSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationMode {
    OnlyLocations,
    NonLocations,
    LocatedNonLocations,
    NonLocationInLocation,
    LocationAbstracts,
    NonLocationAbstracts,
}

impl RepresentationMode {
    pub const ALL: [RepresentationMode; 6] = [
        RepresentationMode::OnlyLocations,
        RepresentationMode::NonLocations,
        RepresentationMode::LocatedNonLocations,
        RepresentationMode::NonLocationInLocation,
        RepresentationMode::LocationAbstracts,
        RepresentationMode::NonLocationAbstracts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RepresentationMode::OnlyLocations => "only_locations",
            RepresentationMode::NonLocations => "non_locations",
            RepresentationMode::LocatedNonLocations => "located_non_locations",
            RepresentationMode::NonLocationInLocation => "non_location_in_location",
            RepresentationMode::LocationAbstracts => "location_abstracts",
            RepresentationMode::NonLocationAbstracts => "non_location_abstracts",
        }
    }

    /// Whether the mode draws on location entities (else non-locations).
    pub fn uses_locations(self) -> bool {
        matches!(self, RepresentationMode::OnlyLocations | RepresentationMode::LocationAbstracts)
    }
}

impl fmt::Display for RepresentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RepresentationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().replace('-', "_");
        Self::ALL.into_iter().find(|m| m.as_str() == norm).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
            format!("unknown mode `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// One or more modes whose candidates share a single pool, written
/// `a+b`. Defaults to locations plus located non-locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModeSelection(Vec<RepresentationMode>);

impl ModeSelection {
    pub fn new(modes: Vec<RepresentationMode>) -> Result<Self, String> {
        let mut out: Vec<RepresentationMode> = Vec::new();
        for m in modes {
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err("no representation mode given".into());
        }
        Ok(Self(out))
    }

    pub fn single(mode: RepresentationMode) -> Self {
        Self(vec![mode])
    }

    pub fn modes(&self) -> &[RepresentationMode] {
        &self.0
    }
}

impl Default for ModeSelection {
    fn default() -> Self {
        Self(vec![RepresentationMode::OnlyLocations, RepresentationMode::LocatedNonLocations])
    }
}

impl fmt::Display for ModeSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|m| m.as_str()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for ModeSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s.split(['+', ',']).filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_, _>>()?)
    }
}

impl TryFrom<String> for ModeSelection {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModeSelection> for String {
    fn from(m: ModeSelection) -> String {
        m.to_string()
    }
}

/// An entity rendered as text for the ranker, with the location it stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity: NerSpan,
    pub mode: RepresentationMode,
    pub text: String,
    /// How a non-location entity was placed.
    pub located: Option<LocatedEntity>,
    /// `None` when the entity could not be resolved yet.
    pub resolved: Option<LocationTuple>,
}

fn abstract_of(surface: &str, article: &Article, locator: &Locator<'_>) -> Option<String> {
    let title = match link_entity(locator.kb(), surface, article.language) {
        Ok(link) => link.page_title?,
        Err(e) => {
            log::warn!("article {}: cannot link `{surface}`: {e}", article.id);
            return None;
        }
    };
    match locator.dbpedia_with_fallback(&title, article.language) {
        Ok(record) => record.abstract_text.filter(|a| !a.trim().is_empty()),
        Err(KbError::NotFound { .. }) => None,
        Err(e) => {
            log::warn!("article {}: no abstract for `{title}`: {e}", article.id);
            None
        }
    }
}

fn resolve_location(surface: &str, article: &Article, locator: &Locator<'_>) -> Option<LocationTuple> {
    match locator.locate_surface(surface, article.language) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("article {}: cannot resolve `{surface}`: {e}", article.id);
            None
        }
    }
}

/// Renders one entity under one mode; `None` when the entity does not
/// belong to the mode or the needed knowledge is unavailable.
pub fn build_representation(entity: &NerSpan, mode: RepresentationMode, article: &Article, locator: &Locator<'_>) -> Option<Candidate> {
    if entity.is_location != mode.uses_locations() {
        return None;
    }
    let surface = entity.surface.as_str();
    let candidate = |text: String, located: Option<LocatedEntity>, resolved: Option<LocationTuple>| Candidate {
        entity: entity.clone(),
        mode,
        text,
        located,
        resolved,
    };
    let dropped = |why: &str| {
        log::debug!("article {}: `{surface}` dropped from {mode}: {why}", article.id);
        None
    };
    match mode {
        RepresentationMode::OnlyLocations => Some(candidate(surface.to_string(), None, resolve_location(surface, article, locator))),
        RepresentationMode::LocationAbstracts => match abstract_of(surface, article, locator) {
            Some(text) => Some(candidate(text, None, resolve_location(surface, article, locator))),
            None => dropped("no abstract"),
        },
        RepresentationMode::NonLocations => {
            let located = locator.implicit_locate(surface, article.language);
            let resolved = located.as_ref().map(|l| l.location.clone());
            Some(candidate(surface.to_string(), located, resolved))
        }
        RepresentationMode::LocatedNonLocations | RepresentationMode::NonLocationInLocation => {
            let Some(located) = locator.implicit_locate(surface, article.language) else { return dropped("not locatable") };
            let text = match mode {
                RepresentationMode::LocatedNonLocations => located.render(),
                _ => format!("{surface} in {}", located.render()),
            };
            let resolved = Some(located.location.clone());
            Some(candidate(text, Some(located), resolved))
        }
        RepresentationMode::NonLocationAbstracts => match abstract_of(surface, article, locator) {
            Some(text) => {
                let located = locator.implicit_locate(surface, article.language);
                let resolved = located.as_ref().map(|l| l.location.clone());
                Some(candidate(text, located, resolved))
            }
            None => dropped("no abstract"),
        },
    }
}

/// Candidates of every selected mode, in mode then offset order. Repeated
/// texts keep their first (earliest) occurrence.
pub fn build_candidates(article: &Article, entities: &[NerSpan], modes: &ModeSelection, locator: &Locator<'_>) -> Vec<Candidate> {
    let mut sorted: Vec<&NerSpan> = entities.iter().collect();
    sorted.sort_by_key(|e| (e.start, e.end));
    let mut out: Vec<Candidate> = Vec::new();
    for &mode in modes.modes() {
        for entity in &sorted {
            if let Some(c) = build_representation(entity, mode, article, locator) {
                if c.text.trim().is_empty() {
                    continue;
                }
                match out.iter_mut().find(|o| o.text == c.text) {
                    Some(existing) if c.entity.start < existing.entity.start => *existing = c,
                    Some(_) => {}
                    None => out.push(c),
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    /// Cosine with the document embedding, in `[-1, 1]`.
    pub score: f64,
    /// A zero-norm embedding was involved; the score is forced to -1.
    pub degenerate: bool,
}

/// Descending score, then earliest offset, then text.
fn rank_order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.candidate.entity.start.cmp(&b.candidate.entity.start))
        .then_with(|| a.candidate.text.cmp(&b.candidate.text))
}

/// Scores candidates against a precomputed document embedding.
pub fn rank_with_embeddings(document: &Embedding, candidates: Vec<(Candidate, Embedding)>) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = candidates
        .into_iter()
        .map(|(candidate, emb)| match cosine(&document.values, &emb.values) {
            Some(score) => RankedCandidate { candidate, score: score.clamp(-1.0, 1.0), degenerate: false },
            None => {
                log::warn!("zero-norm embedding for `{}`, scored -1", candidate.text);
                RankedCandidate { candidate, score: -1.0, degenerate: true }
            }
        })
        .collect();
    ranked.sort_by(rank_order);
    ranked
}

pub fn rank_candidates(
    article: &Article,
    candidates: Vec<Candidate>,
    provider: &dyn EmbeddingProvider,
    chunking: &ChunkingConfig,
) -> Result<Vec<RankedCandidate>, EmbedError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let document = embed_document(&article.text, provider, chunking)?;
    let embedded = candidates
        .into_iter()
        .map(|c| embed_document(&c.text, provider, chunking).map(|e| (c, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank_with_embeddings(&document, embedded))
}

/// The location of the best candidate that has one. Location candidates
/// without a tuple are resolved here.
pub fn predict_location(ranked: &[RankedCandidate], article: &Article, locator: &Locator<'_>) -> Option<LocationTuple> {
    for r in ranked {
        let c = &r.candidate;
        let tuple = c.resolved.clone().or_else(|| if c.mode.uses_locations() { resolve_location(&c.entity.surface, article, locator) } else { None });
        match tuple {
            Some(t) => return Some(t),
            None => log::warn!("article {}: candidate `{}` has no location, trying the next", article.id, c.text),
        }
    }
    None
}

/// The first entity by offset that resolves to a location. With
/// `include_located`, non-location entities that can be located count too.
pub fn baseline_first_location(article: &Article, entities: &[NerSpan], include_located: bool, locator: &Locator<'_>) -> Option<LocationTuple> {
    let mut sorted: Vec<&NerSpan> = entities.iter().collect();
    sorted.sort_by_key(|e| (e.start, e.end));
    for e in sorted {
        let tuple = if e.is_location {
            resolve_location(&e.surface, article, locator)
        } else if include_located {
            locator.implicit_locate(&e.surface, article.language).map(|l| l.location)
        } else {
            continue;
        };
        if tuple.is_some() {
            return tuple;
        }
        log::debug!("article {}: `{}` unresolved, trying the next entity", article.id, e.surface);
    }
    None
}

/// Ranking output record, one per article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub article_id: String,
    pub mode: String,
    pub candidates: Vec<RankingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub text: String,
    pub score: f64,
    pub city_qid: Option<Qid>,
    pub country_qid: Option<Qid>,
}

impl RankingRecord {
    pub fn new(article_id: &str, modes: &ModeSelection, ranked: &[RankedCandidate]) -> Self {
        Self {
            article_id: article_id.to_string(),
            mode: modes.to_string(),
            candidates: ranked
                .iter()
                .map(|r| RankingRow {
                    text: r.candidate.text.clone(),
                    score: r.score,
                    city_qid: r.candidate.resolved.as_ref().and_then(|t| t.city_qid.clone()),
                    country_qid: r.candidate.resolved.as_ref().and_then(|t| t.country_qid.clone()),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;
    use crate::embedding::MockEmbedder;
    use crate::kb::{DbpediaRecord, InstanceOf, KbCache, KbClient, SearchHit, WikidataItem};
    use proptest::prelude::*;
    use std::ops::Range;

    fn q(s: &str) -> Qid {
        Qid::new(s).unwrap()
    }

    fn kb() -> KbClient {
        let cache = KbCache::in_memory();
        let add = |id: &str, label: &str, p31: &str, p17: &str, p131: &[&str]| {
            let mut it = WikidataItem::new(q(id));
            it.labels.insert("en".into(), label.into());
            it.p31.push(InstanceOf { qid: q("Q1"), label: p31.into() });
            if !p17.is_empty() {
                it.p17.push(q(p17));
            }
            it.p131 = p131.iter().map(|s| q(s)).collect();
            cache.insert_wikidata(&it).unwrap();
            cache.insert_search(Language::En, label, Some(&SearchHit { page_title: label.into(), qid: Some(q(id)), rank: 0 })).unwrap();
        };
        add("Q90", "Paris", "capital", "Q142", &[]);
        add("Q142", "France", "sovereign state", "Q142", &[]);
        add("Q64", "Berlin", "city", "Q183", &[]);
        add("Q183", "Germany", "sovereign state", "Q183", &[]);
        add("Q145", "United Kingdom", "sovereign state", "Q145", &[]);
        add("Q84", "London", "city", "Q145", &[]);
        add("Q179351", "City of Westminster", "London borough", "Q145", &["Q84"]);
        add("Q1143346", "Mayfair", "district", "Q145", &["Q179351"]);
        add("Q9682", "Elizabeth II", "human", "", &[]);
        add("Q243", "Eiffel Tower", "lattice tower", "Q142", &["Q90"]);
        cache.insert_search(Language::En, "Queen Elizabeth II", Some(&SearchHit { page_title: "Elizabeth II".into(), qid: Some(q("Q9682")), rank: 0 })).unwrap();
        cache.insert_search(Language::En, "Atlantis", None).unwrap();
        let mut rec = DbpediaRecord::new("Elizabeth II", Language::En);
        rec.add_property("birthPlace", "Mayfair");
        rec.abstract_text = Some("Elizabeth II was Queen of the United Kingdom.".into());
        cache.insert_dbpedia(&rec).unwrap();
        let mut tower = DbpediaRecord::new("Eiffel Tower", Language::En);
        tower.add_property("location", "Paris");
        cache.insert_dbpedia(&tower).unwrap();
        let mut paris = DbpediaRecord::new("Paris", Language::En);
        paris.abstract_text = Some("Paris is the capital of France.".into());
        cache.insert_dbpedia(&paris).unwrap();
        for t in ["Berlin", "France", "Atlantis"] {
            cache.insert_missing(crate::kb::KbSource::Dbpedia, &format!("en:{t}")).unwrap();
        }
        KbClient::cache_only(cache)
    }

    fn article(text: &str) -> Article {
        Article {
            id: "a1".into(),
            language: Language::En,
            title: text.lines().next().unwrap().into(),
            text: text.into(),
            categories: vec![],
            mentions: vec![],
            source_url: None,
        }
    }

    fn span(text: &str, surface: &str, label: &str) -> NerSpan {
        let byte = text.find(surface).unwrap();
        let start = crate::text::char_offset(text, byte);
        NerSpan::new(surface, start, start + crate::text::char_len(surface), label)
    }

    fn paris() -> LocationTuple {
        LocationTuple::city_in("Paris", q("Q90"), "France", q("Q142"))
    }

    #[test]
    fn representations() {
        let kb = kb();
        let loc = Locator::new(&kb);
        let text = "Royal visit\nQueen Elizabeth II visited Paris.";
        let a = article(text);
        let p = span(text, "Paris", "LOC");
        let queen = span(text, "Queen Elizabeth II", "person");

        assert_eq!(build_representation(&p, RepresentationMode::OnlyLocations, &a, &loc).unwrap().text, "Paris");
        assert!(build_representation(&p, RepresentationMode::NonLocations, &a, &loc).is_none());
        let located = build_representation(&queen, RepresentationMode::LocatedNonLocations, &a, &loc).unwrap();
        assert_eq!(located.text, "Mayfair, London, United Kingdom");
        assert_eq!(located.resolved.unwrap().city_qid, Some(q("Q84")));
        assert_eq!(
            build_representation(&queen, RepresentationMode::NonLocationInLocation, &a, &loc).unwrap().text,
            "Queen Elizabeth II in Mayfair, London, United Kingdom"
        );
        assert_eq!(build_representation(&p, RepresentationMode::LocationAbstracts, &a, &loc).unwrap().text, "Paris is the capital of France.");
        assert!(build_representation(&queen, RepresentationMode::NonLocationAbstracts, &a, &loc).unwrap().text.starts_with("Elizabeth II was"));
        let atl = span("Atlantis", "Atlantis", "person");
        assert!(build_representation(&atl, RepresentationMode::LocatedNonLocations, &a, &loc).is_none());
    }

    #[test]
    fn mode_selection_parsing() {
        let m: ModeSelection = "located_non_locations+only_locations".parse().unwrap();
        assert_eq!(m.modes(), [RepresentationMode::LocatedNonLocations, RepresentationMode::OnlyLocations]);
        assert_eq!(ModeSelection::default().to_string(), "only_locations+located_non_locations");
        assert!("bogus".parse::<ModeSelection>().is_err());
        assert!("".parse::<ModeSelection>().is_err());
    }

    fn fake(text: &str, start: usize) -> Candidate {
        Candidate {
            entity: NerSpan::new(text, start, start + text.len(), "LOC"),
            mode: RepresentationMode::OnlyLocations,
            text: text.into(),
            located: None,
            resolved: None,
        }
    }

    #[test]
    fn orthogonal_candidates() {
        let doc = Embedding::new(vec![1.0, 0.0]);
        let ranked = rank_with_embeddings(&doc, vec![(fake("b", 5), Embedding::new(vec![0.0, 1.0])), (fake("a", 9), Embedding::new(vec![1.0, 0.0]))]);
        assert_eq!(ranked[0].candidate.text, "a");
        assert_eq!(ranked[0].score, 1.0);
        assert_eq!(ranked[1].score, 0.0);
    }

    #[test]
    fn single_candidate_and_zero_norm() {
        let doc = Embedding::new(vec![1.0, 0.0]);
        let ranked = rank_with_embeddings(&doc, vec![(fake("z", 0), Embedding::new(vec![0.0, 0.0]))]);
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].score, -1.0);
        assert!(ranked[0].degenerate);
    }

    #[test]
    fn ties_break_on_offset() {
        let doc = Embedding::new(vec![1.0, 1.0]);
        let e = Embedding::new(vec![2.0, 2.0]);
        let ranked = rank_with_embeddings(&doc, vec![(fake("late", 30), e.clone()), (fake("early", 3), e)]);
        assert_eq!(ranked[0].candidate.text, "early");
    }

    #[test]
    fn order_matches_independent_cosines() {
        let doc = Embedding::new(vec![0.3, -1.2, 0.5]);
        let vecs = [[1.0, 0.0, 0.0], [0.1, -1.0, 0.4], [-0.5, 0.5, 0.5], [0.0, 0.0, 1.0], [0.2, -0.2, 0.9]];
        let cands: Vec<_> = vecs.iter().enumerate().map(|(i, v)| (fake(&format!("c{i}"), i), Embedding::new(v.to_vec()))).collect();
        let ranked = rank_with_embeddings(&doc, cands);
        let mut oracle: Vec<(f64, String)> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = doc.values.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                let n = doc.values.iter().map(|x| x * x).sum::<f64>().sqrt() * v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (d / n, format!("c{i}"))
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let got: Vec<&str> = ranked.iter().map(|r| r.candidate.text.as_str()).collect();
        let want: Vec<&str> = oracle.iter().map(|(_, t)| t.as_str()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn prediction_falls_through() {
        let kb = kb();
        let loc = Locator::new(&kb);
        let a = article("t\nAtlantis and France");
        assert_eq!(predict_location(&[], &a, &loc), None);
        let doc = Embedding::new(vec![1.0, 0.0]);
        let ranked = rank_with_embeddings(
            &doc,
            vec![(fake("Atlantis", 2), Embedding::new(vec![1.0, 0.0])), (fake("France", 15), Embedding::new(vec![1.0, 1.0]))],
        );
        let got = predict_location(&ranked, &a, &loc).unwrap();
        assert_eq!((got.city, got.country_qid), (None, Some(q("Q142"))));
        let top = rank_with_embeddings(&doc, vec![(fake("Paris", 0), Embedding::new(vec![1.0, 0.0]))]);
        assert_eq!(predict_location(&top, &a, &loc), Some(paris()));
    }

    #[test]
    fn baselines() {
        let kb = kb();
        let loc = Locator::new(&kb);
        let text = "News\nBerlin officials met colleagues from Paris.";
        let a = article(text);
        let ents = vec![span(text, "Paris", "LOC"), span(text, "Berlin", "LOC")];
        let got = baseline_first_location(&a, &ents, false, &loc).unwrap();
        assert_eq!(got.city_qid, Some(q("Q64")));
        assert_eq!(baseline_first_location(&a, &ents, true, &loc), Some(got));

        let text = "News\nEiffel Tower lights honour the Berlin victims.";
        let a = article(text);
        let ents = vec![span(text, "Eiffel Tower", "facility"), span(text, "Berlin", "LOC")];
        assert_eq!(baseline_first_location(&a, &ents, true, &loc), Some(paris()));
        assert_eq!(baseline_first_location(&a, &ents, false, &loc).unwrap().city_qid, Some(q("Q64")));
        assert_eq!(baseline_first_location(&a, &[], true, &loc), None);
    }

    #[test]
    fn candidates_are_deduplicated() {
        let kb = kb();
        let loc = Locator::new(&kb);
        let text = "Paris\nParis said Paris.";
        let a = article(text);
        let ents = vec![NerSpan::new("Paris", 6, 11, "LOC"), NerSpan::new("Paris", 0, 5, "LOC"), NerSpan::new("Paris", 17, 22, "LOC")];
        let c = build_candidates(&a, &ents, &ModeSelection::default(), &loc);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].entity.start, 0);
    }

    struct Scaled<'a>(&'a MockEmbedder, f64);

    impl EmbeddingProvider for Scaled<'_> {
        fn name(&self) -> &str {
            "scaled"
        }
        fn dimension(&self) -> usize {
            self.0.dimension()
        }
        fn max_tokens(&self) -> usize {
            self.0.max_tokens()
        }
        fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
            self.0.token_spans(text)
        }
        fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
            Ok(self.0.embed(text)?.scaled(self.1))
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ranking_is_a_scale_invariant_permutation(seed in 0u64..1000, n in 1usize..8, lambda in 0.01f64..100.0) {
            let base = MockEmbedder::new(16, seed);
            let a = article("Title\nSome body text about a place.");
            let cands: Vec<Candidate> = (0..n).map(|i| fake(&format!("entity {i}"), i)).collect();
            let chunking = ChunkingConfig::default();
            let plain = rank_candidates(&a, cands.clone(), &base, &chunking).unwrap();
            let scaled = rank_candidates(&a, cands.clone(), &Scaled(&base, lambda), &chunking).unwrap();
            let order = |r: &[RankedCandidate]| r.iter().map(|c| c.candidate.text.clone()).collect::<Vec<_>>();
            prop_assert_eq!(order(&plain), order(&scaled));
            let mut sorted_in: Vec<String> = cands.iter().map(|c| c.text.clone()).collect();
            let mut sorted_out = order(&plain);
            sorted_in.sort();
            sorted_out.sort();
            prop_assert_eq!(sorted_in, sorted_out);
        }

        #[test]
        fn cosine_is_symmetric_and_reflexive(u in prop::collection::vec(-10.0f64..10.0, 4), v in prop::collection::vec(-10.0f64..10.0, 4)) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((cosine(&u, &v).unwrap() - cosine(&v, &u).unwrap()).abs() < 1e-12);
        }
    }
}
