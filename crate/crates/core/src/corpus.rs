//! Articles, gold annotations, JSONL persistence and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::Qid;
use crate::location::LocationTuple;
use crate::text;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("validation fraction must lie strictly between 0 and 1, got {0}")]
    Fraction(f64),
}

/// The five Wikinews editions the pipeline supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    De,
    En,
    Es,
    Fr,
    It,
}

impl Language {
    pub const ALL: [Language; 5] = [Language::De, Language::En, Language::Es, Language::Fr, Language::It];

    pub fn code(self) -> &'static str {
        match self {
            Language::De => "de",
            Language::En => "en",
            Language::Es => "es",
            Language::Fr => "fr",
            Language::It => "it",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Language::De => "German",
            Language::En => "English",
            Language::Es => "Spanish",
            Language::Fr => "French",
            Language::It => "Italian",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "de" => Ok(Language::De),
            "en" => Ok(Language::En),
            "es" => Ok(Language::Es),
            "fr" => Ok(Language::Fr),
            "it" => Ok(Language::It),
            other => Err(format!("unsupported language code `{other}` (expected one of de, en, es, fr, it)")),
        }
    }
}

/// An entity-linked mention produced by the dump parser. Offsets are in chars.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedMention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub qid: Option<Qid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    #[serde(rename = "lang")]
    pub language: Language,
    pub title: String,
    /// Title followed by the body.
    pub text: String,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<ParsedMention>,
    #[serde(rename = "url", default)]
    pub source_url: Option<String>,
}

impl Article {
    /// Prepends `title` and a newline to the body unless the text already
    /// starts with the title. Mention offsets are shifted accordingly.
    pub fn ensure_title_prefix(&mut self) {
        if self.text.starts_with(&self.title) {
            return;
        }
        let shift = text::char_len(&self.title) + 1;
        self.text = format!("{}\n{}", self.title, self.text);
        for m in &mut self.mentions {
            m.start += shift;
            m.end += shift;
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty article id".into());
        }
        if self.text.is_empty() {
            return Err(format!("article {}: empty text", self.id));
        }
        if !self.text.starts_with(&self.title) {
            return Err(format!("article {}: title is not a prefix of the text", self.id));
        }
        let len = text::char_len(&self.text);
        for m in &self.mentions {
            if m.end <= m.start {
                return Err(format!("article {}: mention `{}` has empty span {}..{}", self.id, m.surface, m.start, m.end));
            }
            if m.end > len {
                return Err(format!(
                    "article {}: mention `{}` span {}..{} exceeds text length {len}",
                    self.id, m.surface, m.start, m.end
                ));
            }
            let slice = text::slice_chars(&self.text, m.start, m.end).unwrap_or_default();
            if slice != m.surface {
                return Err(format!(
                    "article {}: mention surface `{}` does not match text `{slice}` at {}..{}",
                    self.id, m.surface, m.start, m.end
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub article_id: String,
    pub locations: Vec<LocationTuple>,
}

impl GoldAnnotation {
    pub fn validate(&self) -> Result<(), String> {
        if self.locations.is_empty() {
            return Err(format!("gold {}: no locations", self.article_id));
        }
        for loc in &self.locations {
            loc.validate().map_err(|e| format!("gold {}: {e}", self.article_id))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: usize,
    pub warnings: Vec<LoadWarning>,
}

/// Loads a JSONL corpus. Records that fail to parse or violate an article
/// invariant are skipped and reported; only a missing file is fatal.
/// With `language` set, records in other languages are skipped too.
pub fn load_corpus(path: &Path, language: Option<Language>) -> Result<(Vec<Article>, LoadReport), CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Open { path: path.display().to_string(), source })?;
    read_corpus(BufReader::new(file), language)
}

pub fn read_corpus<R: BufRead>(reader: R, language: Option<Language>) -> Result<(Vec<Article>, LoadReport), CorpusError> {
    let mut articles = Vec::new();
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<Article>(&line)
            .map_err(|e| e.to_string())
            .and_then(|mut a| {
                a.ensure_title_prefix();
                a.validate()?;
                if let Some(lang) = language {
                    if a.language != lang {
                        return Err(format!("article {} is `{}`, expected `{lang}`", a.id, a.language));
                    }
                }
                if !seen.insert(a.id.clone()) {
                    return Err(format!("duplicate article id {}", a.id));
                }
                Ok(a)
            });
        match outcome {
            Ok(a) => articles.push(a),
            Err(message) => {
                log::warn!("corpus line {lineno}: {message}");
                report.skipped += 1;
                report.warnings.push(LoadWarning { line: lineno, message });
            }
        }
    }
    report.loaded = articles.len();
    Ok((articles, report))
}

pub fn write_corpus<W: Write>(mut out: W, articles: &[Article]) -> io::Result<()> {
    for a in articles {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Gold files are small and hand-curated, so any bad record is an error.
pub fn load_gold(path: &Path) -> Result<Vec<GoldAnnotation>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Open { path: path.display().to_string(), source })?;
    read_gold(BufReader::new(file))
}

pub fn read_gold<R: BufRead>(reader: R) -> Result<Vec<GoldAnnotation>, CorpusError> {
    let mut gold = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<GoldAnnotation>(&line)
            .map_err(|e| e.to_string())
            .and_then(|g| g.validate().map(|_| g))
            .map_err(|message| CorpusError::Record { line: idx + 1, message })?;
        gold.push(record);
    }
    Ok(gold)
}

/// One row of the corpus statistics table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub documents: usize,
    pub mentions: usize,
    pub unique_entity_ids: usize,
    pub locations_in_categories: usize,
    pub documents_with_locations: usize,
    /// Percentage of documents with at least one category location.
    pub documents_with_locations_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_language: BTreeMap<Language, LanguageStats>,
    /// Entity IDs are language-independent, so the total counts distinct IDs
    /// across all languages rather than summing the rows.
    pub total: LanguageStats,
}

#[derive(Default)]
struct StatsAccumulator {
    documents: usize,
    mentions: usize,
    ids: BTreeSet<Qid>,
    locations: usize,
    with_locations: usize,
}

impl StatsAccumulator {
    fn add(&mut self, article: &Article, locations: usize) {
        self.documents += 1;
        self.mentions += article.mentions.len();
        self.ids.extend(article.mentions.iter().filter_map(|m| m.qid.clone()));
        self.locations += locations;
        if locations > 0 {
            self.with_locations += 1;
        }
    }

    fn finish(&self) -> LanguageStats {
        let pct = if self.documents == 0 { 0.0 } else { 100.0 * self.with_locations as f64 / self.documents as f64 };
        LanguageStats {
            documents: self.documents,
            mentions: self.mentions,
            unique_entity_ids: self.ids.len(),
            locations_in_categories: self.locations,
            documents_with_locations: self.with_locations,
            documents_with_locations_pct: pct,
        }
    }
}

pub fn compute_stats(corpus: &[Article], category_locations: &HashMap<String, Vec<LocationTuple>>) -> CorpusStats {
    let mut per_language: BTreeMap<Language, StatsAccumulator> = BTreeMap::new();
    let mut total = StatsAccumulator::default();
    for article in corpus {
        let locations = category_locations.get(&article.id).map_or(0, Vec::len);
        per_language.entry(article.language).or_default().add(article, locations);
        total.add(article, locations);
    }
    CorpusStats {
        per_language: per_language.into_iter().map(|(lang, acc)| (lang, acc.finish())).collect(),
        total: total.finish(),
    }
}

impl CorpusStats {
    /// Plain-text table, one row per language plus the total.
    pub fn to_table(&self) -> String {
        let header = ["Language", "Documents", "Mentions", "Unique entity IDs", "Locations in categories", "Documents with locations"];
        let mut rows: Vec<[String; 6]> = Vec::new();
        let row = |name: &str, s: &LanguageStats| {
            [
                name.to_string(),
                s.documents.to_string(),
                s.mentions.to_string(),
                s.unique_entity_ids.to_string(),
                s.locations_in_categories.to_string(),
                format!("{} ({:.2}%)", s.documents_with_locations, s.documents_with_locations_pct),
            ]
        };
        for (lang, s) in &self.per_language {
            rows.push(row(lang.name(), s));
        }
        rows.push(row("Total", &self.total));
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let fmt_row = |cells: &[String], out: &mut String| {
            let line: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        };
        fmt_row(&header.map(String::from), &mut out);
        for r in &rows {
            fmt_row(r, &mut out);
        }
        out
    }
}

/// Marks which of `n` items go to validation. Deterministic for a seed.
fn validation_mask(n: usize, fraction: f64, seed: u64) -> Result<Vec<bool>, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::Fraction(fraction));
    }
    let k = if n >= 2 { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) } else { 0 };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut mask = vec![false; n];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Splits articles into `(train, validation)`, preserving corpus order in both.
pub fn split_train_validation(corpus: &[Article], validation_fraction: f64, seed: u64) -> Result<(Vec<Article>, Vec<Article>), CorpusError> {
    split_by_document(corpus, |a| a.id.as_str(), validation_fraction, seed)
}

/// Splits any per-document items so that all items of one document land on
/// the same side. Documents are drawn in order of first appearance.
pub fn split_by_document<T: Clone, F>(items: &[T], doc_id: F, validation_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), CorpusError>
where
    F: Fn(&T) -> &str,
{
    let mut docs: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for item in items {
        let id = doc_id(item);
        index.entry(id).or_insert_with(|| {
            docs.push(id);
            docs.len() - 1
        });
    }
    let mask = validation_mask(docs.len(), validation_fraction, seed)?;
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for item in items {
        if mask[index[doc_id(item)]] {
            validation.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, validation))
}
