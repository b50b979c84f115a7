//! Precision of the top prediction at country and city level, averaged
//! per language and then across languages.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Article, GoldAnnotation, Language};
use crate::linking::normalize;
use crate::location::LocationTuple;
use crate::pipeline::{Pipeline, PipelineError, System};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the gold standard is empty")]
    EmptyGold,
    #[error("gold documents missing from the corpus: {}", .0.join(", "))]
    MissingArticles(Vec<String>),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Country,
    City,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Country => "country",
            Level::City => "city",
        })
    }
}

/// Whether a prediction matches any gold tuple at a level.
pub fn is_hit(prediction: Option<&LocationTuple>, gold: &[LocationTuple], level: Level) -> bool {
    let Some(p) = prediction else { return false };
    gold.iter().any(|g| {
        let m = normalize(p, g);
        match level {
            Level::Country => m.country,
            Level::City => m.city,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageScore {
    pub documents: usize,
    pub hits: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub level: Level,
    pub per_language: BTreeMap<Language, LanguageScore>,
    /// Unweighted mean over the languages present.
    #[serde(rename = "macro")]
    pub macro_avg: f64,
    /// Hits over all documents.
    #[serde(rename = "micro")]
    pub micro_avg: f64,
}

/// Scores predictions at one level. Predictions for unknown articles are
/// ignored with a warning; gold articles without a prediction are misses.
/// `languages` must cover every gold article.
pub fn precision_at_1(
    predictions: &HashMap<String, Option<LocationTuple>>,
    gold: &BTreeMap<String, GoldAnnotation>,
    languages: &HashMap<String, Language>,
    level: Level,
) -> Result<LevelScores, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let missing: Vec<String> = gold.keys().filter(|id| !languages.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingArticles(missing));
    }
    let mut unknown: Vec<&String> = predictions.keys().filter(|id| !gold.contains_key(*id)).collect();
    unknown.sort();
    for id in unknown {
        log::warn!("prediction for `{id}` has no gold annotation, ignored");
    }
    let mut per_language: BTreeMap<Language, LanguageScore> = BTreeMap::new();
    for (id, g) in gold {
        let hit = is_hit(predictions.get(id).and_then(Option::as_ref), &g.locations, level);
        let s = per_language.entry(languages[id]).or_insert(LanguageScore { documents: 0, hits: 0, value: 0.0 });
        s.documents += 1;
        s.hits += usize::from(hit);
    }
    for s in per_language.values_mut() {
        s.value = s.hits as f64 / s.documents as f64;
    }
    let macro_avg = per_language.values().map(|s| s.value).sum::<f64>() / per_language.len() as f64;
    let hits: usize = per_language.values().map(|s| s.hits).sum();
    let micro_avg = hits as f64 / gold.len() as f64;
    Ok(LevelScores { level, per_language, macro_avg, micro_avg })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub article_id: String,
    pub language: Language,
    pub prediction: Option<LocationTuple>,
    pub gold: Vec<LocationTuple>,
    pub country_hit: bool,
    pub city_hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub documents: usize,
    pub country: LevelScores,
    pub city: LevelScores,
    pub trace: Vec<TraceEntry>,
}

impl EvalReport {
    pub fn level(&self, level: Level) -> &LevelScores {
        match level {
            Level::Country => &self.country,
            Level::City => &self.city,
        }
    }

    /// Aligned plain-text table: a header and one row with per-language and
    /// averaged MP@1 (in percent) at both levels.
    pub fn to_table(&self) -> String {
        let langs: Vec<Language> = self.country.per_language.keys().copied().collect();
        let mut header = vec!["system".to_string()];
        let mut row = vec![self.system.clone()];
        for level in [Level::Country, Level::City] {
            let scores = self.level(level);
            for l in &langs {
                header.push(format!("{l} {level}"));
                row.push(format!("{:.2}", scores.per_language[l].value * 100.0));
            }
            header.push(format!("macro {level}"));
            row.push(format!("{:.2}", scores.macro_avg * 100.0));
            header.push(format!("micro {level}"));
            row.push(format!("{:.2}", scores.micro_avg * 100.0));
        }
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let mut out = String::new();
        for line in [&header, &row] {
            let cells: Vec<String> = line.iter().zip(&widths).enumerate().map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") }).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// Scores predictions at both levels and builds the per-document trace.
pub fn evaluate(
    system: &str,
    predictions: &HashMap<String, Option<LocationTuple>>,
    errors: &HashMap<String, String>,
    gold: &[GoldAnnotation],
    languages: &HashMap<String, Language>,
) -> Result<EvalReport, EvalError> {
    let gold_map: BTreeMap<String, GoldAnnotation> = gold.iter().map(|g| (g.article_id.clone(), g.clone())).collect();
    let country = precision_at_1(predictions, &gold_map, languages, Level::Country)?;
    let city = precision_at_1(predictions, &gold_map, languages, Level::City)?;
    let trace = gold_map
        .values()
        .map(|g| {
            let prediction = predictions.get(&g.article_id).cloned().flatten();
            TraceEntry {
                article_id: g.article_id.clone(),
                language: languages[&g.article_id],
                country_hit: is_hit(prediction.as_ref(), &g.locations, Level::Country),
                city_hit: is_hit(prediction.as_ref(), &g.locations, Level::City),
                prediction,
                gold: g.locations.clone(),
                error: errors.get(&g.article_id).cloned(),
            }
        })
        .collect();
    Ok(EvalReport { system: system.to_string(), documents: gold_map.len(), country, city, trace })
}

/// Predicts every gold document with `system` and scores the result.
/// A document whose prediction fails counts as a miss.
pub fn run_experiment(pipeline: &Pipeline, corpus: &[Article], gold: &[GoldAnnotation], system: &System) -> Result<EvalReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let wanted: HashMap<&str, ()> = gold.iter().map(|g| (g.article_id.as_str(), ())).collect();
    let docs: Vec<Article> = corpus.iter().filter(|a| wanted.contains_key(a.id.as_str())).cloned().collect();
    let languages: HashMap<String, Language> = docs.iter().map(|a| (a.id.clone(), a.language)).collect();
    let mut predictions = HashMap::new();
    let mut errors = HashMap::new();
    for (article, result) in docs.iter().zip(pipeline.predict_corpus(&docs, system)?) {
        match result {
            Ok(p) => {
                predictions.insert(article.id.clone(), p);
            }
            Err(e) => {
                log::warn!("article {}: {e}", article.id);
                errors.insert(article.id.clone(), e.to_string());
                predictions.insert(article.id.clone(), None);
            }
        }
    }
    evaluate(&system.to_string(), &predictions, &errors, gold, &languages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Qid;
    use proptest::prelude::*;

    fn q(s: &str) -> Qid {
        Qid::new(s).unwrap()
    }

    fn paris() -> LocationTuple {
        LocationTuple::city_in("Paris", q("Q90"), "France", q("Q142"))
    }

    fn gold(id: &str, locs: Vec<LocationTuple>) -> GoldAnnotation {
        GoldAnnotation { article_id: id.into(), locations: locs }
    }

    #[test]
    fn country_hit_city_miss() {
        let preds = HashMap::from([("a".to_string(), Some(LocationTuple::country_only("France", q("Q142"))))]);
        let langs = HashMap::from([("a".to_string(), Language::Fr)]);
        let r = evaluate("t", &preds, &HashMap::new(), &[gold("a", vec![paris()])], &langs).unwrap();
        assert_eq!(r.country.macro_avg, 1.0);
        assert_eq!(r.city.macro_avg, 0.0);
    }

    #[test]
    fn no_predictions_score_zero() {
        let langs = HashMap::from([("a".to_string(), Language::En), ("b".to_string(), Language::De)]);
        let preds = HashMap::from([("a".to_string(), None)]);
        let r = evaluate("t", &preds, &HashMap::new(), &[gold("a", vec![paris()]), gold("b", vec![paris()])], &langs).unwrap();
        assert_eq!((r.country.macro_avg, r.city.macro_avg), (0.0, 0.0));
    }

    #[test]
    fn empty_gold_is_an_error() {
        assert!(matches!(evaluate("t", &HashMap::new(), &HashMap::new(), &[], &HashMap::new()), Err(EvalError::EmptyGold)));
    }

    #[test]
    fn two_languages_macro() {
        let germany = LocationTuple::country_only("Germany", q("Q183"));
        let mut preds = HashMap::new();
        let mut langs = HashMap::new();
        let mut golds = Vec::new();
        for (lang, hits) in [(Language::En, 3), (Language::Fr, 4)] {
            for i in 0..5 {
                let id = format!("{lang}{i}");
                preds.insert(id.clone(), Some(if i < hits { paris() } else { germany.clone() }));
                langs.insert(id.clone(), lang);
                golds.push(gold(&id, vec![paris()]));
            }
        }
        preds.insert("stray".into(), Some(paris()));
        let r = evaluate("t", &preds, &HashMap::new(), &golds, &langs).unwrap();
        assert_eq!(r.country.per_language[&Language::En].value, 0.6);
        assert_eq!(r.country.per_language[&Language::Fr].value, 0.8);
        assert!((r.country.macro_avg - 0.7).abs() < 1e-15);
        assert!((r.country.micro_avg - 0.7).abs() < 1e-15);
        assert_eq!(r.trace.len(), 10);
        let table = r.to_table();
        assert_eq!(table.lines().count(), 2);
        assert!(table.contains("70.00"));
    }

    #[test]
    fn missing_language_is_reported() {
        let err = evaluate("t", &HashMap::new(), &HashMap::new(), &[gold("x", vec![paris()])], &HashMap::new());
        assert!(matches!(err, Err(EvalError::MissingArticles(ids)) if ids == ["x"]));
    }

    fn tuple_strategy() -> impl Strategy<Value = LocationTuple> {
        (0u32..4, prop::option::of(0u32..4)).prop_map(|(country, city)| LocationTuple {
            city: city.map(|c| format!("City{country}-{c}")),
            city_qid: city.map(|c| q(&format!("Q{}", 100 + country * 10 + c))),
            country: format!("Country{country}"),
            country_qid: Some(q(&format!("Q{}", country + 1))),
        })
    }

    proptest! {
        #[test]
        fn city_hit_implies_country_hit(p in tuple_strategy(), gold in prop::collection::vec(tuple_strategy(), 1..4)) {
            for g in &gold {
                let m = normalize(&p, g);
                prop_assert!(!m.city || m.country);
            }
            prop_assert!(!is_hit(Some(&p), &gold, Level::City) || is_hit(Some(&p), &gold, Level::Country));
        }

        #[test]
        fn order_of_predictions_does_not_matter(
            entries in prop::collection::vec((prop::option::of(tuple_strategy()), tuple_strategy(), prop::bool::ANY), 1..12),
        ) {
            let ids: Vec<String> = (0..entries.len()).map(|i| format!("d{i}")).collect();
            let golds: Vec<GoldAnnotation> = ids.iter().zip(&entries).map(|(id, e)| gold(id, vec![e.1.clone()])).collect();
            let langs: HashMap<String, Language> =
                ids.iter().zip(&entries).map(|(id, e)| (id.clone(), if e.2 { Language::En } else { Language::It })).collect();
            let forward: HashMap<String, Option<LocationTuple>> = ids.iter().cloned().zip(entries.iter().map(|e| e.0.clone())).collect();
            let mut reversed_pairs: Vec<_> = forward.clone().into_iter().collect();
            reversed_pairs.reverse();
            let reversed: HashMap<_, _> = reversed_pairs.into_iter().collect();
            let mut rev_gold = golds.clone();
            rev_gold.reverse();
            let a = evaluate("t", &forward, &HashMap::new(), &golds, &langs).unwrap();
            let b = evaluate("t", &reversed, &HashMap::new(), &rev_gold, &langs).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
