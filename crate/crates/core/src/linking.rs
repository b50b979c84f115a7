//! Entity linking through the Wikipedia search API, and normalization of
//! location tuples to their WikiData IDs.

use serde::{Deserialize, Serialize};

use crate::corpus::Language;
use crate::kb::{KbError, KnowledgeBase, Qid};
use crate::location::LocationTuple;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkResult {
    pub surface: String,
    pub language: Language,
    pub page_title: Option<String>,
    pub qid: Option<Qid>,
    /// Position of the chosen page in the search results; always the first
    /// hit, kept for auditing disambiguation mistakes.
    pub rank_in_results: usize,
}

/// Links `surface` to the first search result of its language edition and
/// that page's WikiData ID. An empty search yields a result without a qid.
pub fn link_entity(kb: &dyn KnowledgeBase, surface: &str, language: Language) -> Result<LinkResult, KbError> {
    let surface = surface.trim();
    if surface.is_empty() {
        return Err(KbError::EmptyQuery);
    }
    let hit = kb.search(surface, language)?;
    let (page_title, qid, rank) = match hit {
        // a page without a WikiData item cannot be normalized, treat as unlinked
        Some(h) if h.qid.is_some() => (Some(h.page_title), h.qid, h.rank),
        Some(h) => (Some(h.page_title), None, h.rank),
        None => (None, None, 0),
    };
    Ok(LinkResult { surface: surface.to_string(), language, page_title, qid, rank_in_results: rank })
}

/// Whether two tuples agree at each granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelMatch {
    pub country: bool,
    pub city: bool,
}

fn same_name(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    !a.is_empty() && a.to_lowercase() == b.to_lowercase()
}

fn same(a_qid: Option<&Qid>, a_name: &str, b_qid: Option<&Qid>, b_name: &str) -> bool {
    match (a_qid, b_qid) {
        (Some(x), Some(y)) => x == y,
        _ => same_name(a_name, b_name),
    }
}

/// Compares tuples by WikiData ID, falling back to case-insensitive names
/// when either side lacks the ID. A tuple without a city never matches at
/// city level.
pub fn normalize(a: &LocationTuple, b: &LocationTuple) -> LevelMatch {
    let country = same(a.country_qid.as_ref(), &a.country, b.country_qid.as_ref(), &b.country);
    let city = match (&a.city, &b.city) {
        (Some(ca), Some(cb)) => same(a.city_qid.as_ref(), ca, b.city_qid.as_ref(), cb),
        _ => false,
    };
    LevelMatch { country, city }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{KbCache, KbClient, SearchHit};
    use proptest::prelude::*;

    fn q(s: &str) -> Qid {
        Qid::new(s).unwrap()
    }

    fn paris() -> LocationTuple {
        LocationTuple::city_in("Paris", q("Q90"), "France", q("Q142"))
    }

    fn kb() -> KbClient {
        let cache = KbCache::in_memory();
        let us = SearchHit { page_title: "United States".into(), qid: Some(q("Q30")), rank: 0 };
        for query in ["U.S.A.", "the United States", "United States"] {
            cache.insert_search(Language::En, query, Some(&us)).unwrap();
        }
        cache.insert_search(Language::En, "zzqx-nonexistent-entity", None).unwrap();
        KbClient::cache_only(cache)
    }

    #[test]
    fn surface_variants_link_to_the_same_item() {
        let kb = kb();
        let a = link_entity(&kb, "U.S.A.", Language::En).unwrap();
        let b = link_entity(&kb, "the United States", Language::En).unwrap();
        assert_eq!(a.qid, Some(q("Q30")));
        assert_eq!(a.qid, b.qid);
        let again = link_entity(&kb, a.page_title.as_deref().unwrap(), Language::En).unwrap();
        assert_eq!(again.qid, a.qid);
    }

    #[test]
    fn no_results_gives_empty_qid() {
        let r = link_entity(&kb(), "zzqx-nonexistent-entity", Language::En).unwrap();
        assert_eq!((r.page_title, r.qid), (None, None));
        assert!(matches!(link_entity(&kb(), "Berlin", Language::En), Err(KbError::CacheMiss { .. })));
    }

    #[test]
    fn city_and_country_levels() {
        let france = LocationTuple::country_only("France", q("Q142"));
        assert_eq!(normalize(&paris(), &france), LevelMatch { country: true, city: false });

        let mut a = LocationTuple::country_only("FRANCE", q("Q142"));
        let mut b = LocationTuple::country_only("France", q("Q142"));
        a.country_qid = None;
        b.country_qid = None;
        assert!(normalize(&a, &b).country);

        let x = LocationTuple::country_only("USA", q("Q30"));
        let y = LocationTuple::country_only("United States of America", q("Q30"));
        assert!(normalize(&x, &y).country);
    }

    fn arb_tuple() -> impl Strategy<Value = LocationTuple> {
        let name = prop::sample::select(vec!["Paris", "paris", "Lyon", "France", "Spain"]);
        let qid = prop::option::of(prop::sample::select(vec!["Q90", "Q456", "Q142", "Q29"]));
        (prop::option::of((name.clone(), qid.clone())), name, qid).prop_map(|(city, country, country_qid)| LocationTuple {
            city_qid: city.as_ref().and_then(|(_, q)| q.map(|s| Qid::new(s).unwrap())),
            city: city.map(|(n, _)| n.to_string()),
            country: country.to_string(),
            country_qid: country_qid.map(|s| Qid::new(s).unwrap()),
        })
    }

    proptest! {
        #[test]
        fn normalize_is_reflexive_and_symmetric(a in arb_tuple(), b in arb_tuple()) {
            let aa = normalize(&a, &a);
            prop_assert!(aa.country);
            prop_assert_eq!(aa.city, a.city.is_some());
            prop_assert_eq!(normalize(&a, &b), normalize(&b, &a));
        }
    }
}
