use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use newsloc_core::corpus::{compute_stats, load_corpus, read_corpus, write_corpus};
use newsloc_core::kb::{KbCache, KbClient};
use newsloc_core::linking::link_entity;
use newsloc_core::training::generate_pairs;
use newsloc_core::{Language, LocationTuple, Locator};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn kb() -> KbClient {
    KbClient::cache_only(KbCache::load_file(&fixtures().join("kb/kb.jsonl")).unwrap())
}

#[test]
fn corpus_loads_cleanly() {
    let (corpus, report) = load_corpus(&fixtures().join("corpus_en.jsonl"), None).unwrap();
    assert_eq!(corpus.len(), 10);
    assert_eq!((report.loaded, report.skipped), (10, 0));
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    for a in &corpus {
        assert_eq!(a.language, Language::En);
        assert!(!a.categories.is_empty(), "{} has no categories", a.id);
        assert!(a.text.starts_with(&a.title));
        for m in &a.mentions {
            let chars: String = a.text.chars().skip(m.start).take(m.end - m.start).collect();
            assert_eq!(chars, m.surface, "{}", a.id);
        }
    }
    let (only_fr, _) = load_corpus(&fixtures().join("corpus_en.jsonl"), Some(Language::Fr)).unwrap();
    assert!(only_fr.is_empty());
}

#[test]
fn corpus_round_trips() {
    let (corpus, _) = load_corpus(&fixtures().join("corpus_en.jsonl"), None).unwrap();
    let mut buf = Vec::new();
    write_corpus(&mut buf, &corpus).unwrap();
    let (again, _) = read_corpus(buf.as_slice(), None).unwrap();
    assert_eq!(again, corpus);
}

#[test]
fn stats_match_a_direct_count() {
    let (corpus, _) = load_corpus(&fixtures().join("corpus_en.jsonl"), None).unwrap();
    let kb = kb();
    let locator = Locator::new(&kb);
    let locations: HashMap<String, Vec<LocationTuple>> = corpus.iter().map(|a| (a.id.clone(), locator.classify_categories(a))).collect();
    assert!(kb.missing_keys().is_empty(), "{:?}", kb.missing_keys());
    let stats = compute_stats(&corpus, &locations);

    let mentions: usize = corpus.iter().map(|a| a.mentions.len()).sum();
    let ids: BTreeSet<String> = corpus.iter().flat_map(|a| a.mentions.iter().filter_map(|m| m.qid.as_ref().map(|q| q.to_string()))).collect();
    let located: usize = locations.values().map(Vec::len).sum();
    let with: usize = locations.values().filter(|l| !l.is_empty()).count();
    let en = &stats.per_language[&Language::En];
    assert_eq!(en.documents, 10);
    assert_eq!(en.mentions, mentions);
    assert_eq!(en.unique_entity_ids, ids.len());
    assert_eq!(en.locations_in_categories, located);
    assert_eq!(en.documents_with_locations, with);
    assert!((en.documents_with_locations_pct - 100.0 * with as f64 / 10.0).abs() < 0.01);
    assert_eq!(stats.total, *en);
    // The science story only carries topical categories.
    assert!(locations.values().any(Vec::is_empty));
    assert!(with < 10 && with > 0);
}

#[test]
fn aliases_link_to_the_same_item() {
    let kb = kb();
    for surface in ["U.S.A.", "the United States", "USA", "United States"] {
        let link = link_entity(&kb, surface, Language::En).unwrap();
        assert_eq!(link.qid.map(|q| q.to_string()).as_deref(), Some("Q30"), "{surface}");
        assert_eq!(link.rank_in_results, 0);
    }
}

#[test]
fn unknown_entity_links_to_nothing() {
    let kb = kb();
    let link = link_entity(&kb, "zzqx-nonexistent-entity", Language::En).unwrap();
    assert_eq!(link.qid, None);
    assert_eq!(link.page_title, None);
    assert!(kb.missing_keys().is_empty());
}

#[test]
fn fixture_pairs_never_contradict_themselves() {
    let (corpus, _) = load_corpus(&fixtures().join("corpus_en.jsonl"), None).unwrap();
    let kb = kb();
    let locator = Locator::new(&kb);
    let locations: HashMap<String, Vec<LocationTuple>> = corpus.iter().map(|a| (a.id.clone(), locator.classify_categories(a))).collect();
    let pairs = generate_pairs(&corpus, &locations, &locator, 7);
    assert!(pairs.iter().any(|p| p.is_positive()) && pairs.iter().any(|p| !p.is_positive()));
    let mut per_doc: HashMap<&str, (BTreeSet<&str>, BTreeSet<&str>)> = HashMap::new();
    for p in &pairs {
        let e = per_doc.entry(p.article_id.as_str()).or_default();
        if p.is_positive() {
            e.0.insert(&p.entity_text);
        } else {
            e.1.insert(&p.entity_text);
        }
    }
    for (doc, (pos, neg)) in &per_doc {
        assert!(pos.is_disjoint(neg), "{doc}");
        assert!(neg.len() <= pos.len(), "{doc}");
    }
    assert_eq!(pairs, generate_pairs(&corpus, &locations, &locator, 7));
}
