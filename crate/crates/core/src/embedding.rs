//! Sentence-embedding providers and document embeddings.
//!
//! A provider accepts at most `max_tokens` tokens. Long documents are either
//! truncated or split at sentence boundaries into chunks that each fit, in
//! which case the document embedding is the mean of the chunk embeddings.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kb::Transport;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("provider {provider} failed: {message}")]
    Provider { provider: String, message: String },
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite embedding from {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * factor).collect() }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Byte ranges of whitespace-separated tokens.
pub fn whitespace_tokens(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..text.len());
    }
    out
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Longest input, in tokens, the model accepts.
    fn max_tokens(&self) -> usize;
    /// Byte ranges of the tokens of `text`, in order.
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;

    fn token_count(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn max_tokens(&self) -> usize {
        (**self).max_tokens()
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        (**self).token_spans(text)
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        (**self).embed(text)
    }

    fn token_count(&self, text: &str) -> usize {
        (**self).token_count(text)
    }
}

/// Splits text into sentences whose concatenation is the original text.
pub trait SentenceSplitter: Send + Sync {
    fn split<'t>(&self, text: &'t str) -> Vec<&'t str>;
}

/// Breaks after `.`, `!`, `?` or `…` (plus closing quotes or brackets) when
/// followed by whitespace, and after every newline. Trailing whitespace
/// stays with the sentence it follows.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSplitter;

impl SentenceSplitter for RuleSplitter {
    fn split<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i].1;
            let mut j = i + 1;
            let boundary = if c == '\n' {
                true
            } else if matches!(c, '.' | '!' | '?' | '…') {
                while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | ']' | '»' | '”' | '’' | '.' | '!' | '?') {
                    j += 1;
                }
                j < chars.len() && chars[j].1.is_whitespace()
            } else {
                false
            };
            if boundary {
                while j < chars.len() && chars[j].1.is_whitespace() {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |(b, _)| *b);
                out.push(&text[start..end]);
                start = end;
            }
            i = j;
        }
        if start < text.len() {
            out.push(&text[start..]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMode {
    /// Embed only the first `max_tokens` tokens.
    #[default]
    Truncate,
    /// Embed sentence-boundary chunks and average them.
    AverageSubdivisions,
}

impl FromStr for ChunkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truncate" => Ok(ChunkMode::Truncate),
            "average_subdivisions" | "average-subdivisions" | "average" => Ok(ChunkMode::AverageSubdivisions),
            other => Err(format!("unknown chunking mode `{other}` (expected truncate or average_subdivisions)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub mode: ChunkMode,
    /// Sentence segmenter; only `rule` is built in.
    pub segmenter: String,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { mode: ChunkMode::Truncate, segmenter: "rule".into() }
    }
}

impl ChunkingConfig {
    pub fn average() -> Self {
        Self { mode: ChunkMode::AverageSubdivisions, ..Self::default() }
    }

    pub fn splitter(&self) -> Box<dyn SentenceSplitter> {
        if self.segmenter != "rule" {
            log::warn!("unknown segmenter `{}`, using the rule-based one", self.segmenter);
        }
        Box::new(RuleSplitter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunks {
    pub pieces: Vec<String>,
    /// Sentences longer than the token limit that had to be cut.
    pub hard_splits: usize,
}

/// Packs sentences greedily into chunks of at most `max_tokens` tokens. A
/// sentence longer than the limit is cut at token boundaries. The pieces
/// concatenate back to `text`.
pub fn chunk_document(text: &str, provider: &dyn EmbeddingProvider, splitter: &dyn SentenceSplitter) -> Result<Chunks, EmbedError> {
    if text.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let limit = provider.max_tokens().max(1);
    let mut pieces: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut hard_splits = 0;
    for sentence in splitter.split(text) {
        let spans = provider.token_spans(sentence);
        if spans.len() > limit {
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
            log::warn!("sentence of {} tokens exceeds the {limit}-token limit, splitting it", spans.len());
            hard_splits += 1;
            let cuts: Vec<usize> = spans.iter().step_by(limit).skip(1).map(|r| r.start).collect();
            let mut from = 0;
            for cut in cuts {
                pieces.push(sentence[from..cut].to_string());
                from = cut;
            }
            current = sentence[from..].to_string();
            continue;
        }
        let fits = current.is_empty() || provider.token_count(&format!("{current}{sentence}")) <= limit;
        if !fits {
            pieces.push(std::mem::take(&mut current));
        }
        current.push_str(sentence);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    Ok(Chunks { pieces, hard_splits })
}

/// The prefix of `text` holding its first `max_tokens` tokens.
pub fn truncate_to_limit<'t>(text: &'t str, provider: &dyn EmbeddingProvider) -> &'t str {
    let spans = provider.token_spans(text);
    let limit = provider.max_tokens().max(1);
    if spans.len() <= limit {
        text
    } else {
        &text[..spans[limit - 1].end]
    }
}

/// Mean of the given embeddings.
pub fn mean_embedding(vectors: &[Embedding]) -> Option<Embedding> {
    let first = vectors.first()?;
    let mut sum = vec![0.0; first.dim()];
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
    }
    let p = vectors.len() as f64;
    Some(Embedding::new(sum.into_iter().map(|s| s / p).collect()))
}

pub fn embed_document(text: &str, provider: &dyn EmbeddingProvider, config: &ChunkingConfig) -> Result<Embedding, EmbedError> {
    if text.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    match config.mode {
        ChunkMode::Truncate => provider.embed(truncate_to_limit(text, provider)),
        ChunkMode::AverageSubdivisions => {
            let chunks = chunk_document(text, provider, config.splitter().as_ref())?;
            if chunks.pieces.len() == 1 {
                return provider.embed(text);
            }
            let vectors = chunks.pieces.iter().map(|c| provider.embed(c)).collect::<Result<Vec<_>, _>>()?;
            Ok(mean_embedding(&vectors).expect("at least one chunk"))
        }
    }
}

/// Deterministic provider for tests and offline runs: the text and seed are
/// hashed into a unit-norm Gaussian direction. Tokens are whitespace-separated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockEmbedder {
    dimension: usize,
    seed: u64,
    max_tokens: usize,
}

pub const MOCK_DEFAULT_MAX_TOKENS: usize = 128;

impl MockEmbedder {
    /// # Panics
    /// If `dimension < 2`.
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension >= 2, "mock embedder needs at least two dimensions");
        Self { dimension, seed, max_tokens: MOCK_DEFAULT_MAX_TOKENS }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens.max(1);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub fn mock_embedder(dimension: usize, seed: u64) -> MockEmbedder {
    MockEmbedder::new(dimension, seed)
}

impl EmbeddingProvider for MockEmbedder {
    fn name(&self) -> &str {
        "mock"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        whitespace_tokens(text)
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        loop {
            let v: Vec<f64> = (0..self.dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-12 {
                return Ok(Embedding::new(v.into_iter().map(|x| x / norm).collect()));
            }
        }
    }
}

/// A sentence-embedding model behind an HTTP endpoint. The request is
/// `{"model": id, "inputs": [text]}` and the response a list holding one
/// vector. Token counts approximate the model tokenizer by whitespace.
pub struct RemoteEmbedder {
    model: String,
    url: String,
    dimension: usize,
    max_tokens: usize,
    transport: Box<dyn Transport>,
}

impl RemoteEmbedder {
    pub fn new(model: &str, endpoint: &str, dimension: usize, max_tokens: usize, transport: Box<dyn Transport>) -> Self {
        Self { model: model.to_string(), url: endpoint.replace("{model}", model), dimension, max_tokens, transport }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        whitespace_tokens(text)
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let fail = |message: String| EmbedError::Provider { provider: self.model.clone(), message };
        let resp = self.transport.post_json(&self.url, &json!({"model": self.model, "inputs": [text]})).map_err(|e| fail(e.0))?;
        if !(200..300).contains(&resp.status) {
            return Err(fail(format!("HTTP {}", resp.status)));
        }
        let mut rows: Vec<Vec<f64>> = serde_json::from_str(&resp.body).map_err(|e| fail(e.to_string()))?;
        let values = rows.pop().filter(|_| rows.is_empty()).ok_or_else(|| fail("expected exactly one vector".into()))?;
        if values.len() != self.dimension {
            return Err(EmbedError::Dimension { expected: self.dimension, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(self.model.clone()));
        }
        Ok(Embedding::new(values))
    }
}

/// Writes row-major little-endian `f32` rows to `bin_path` and a JSON
/// sidecar (`ids`, `rows`, `dimension`, `dtype`) next to it with a `.json`
/// extension.
pub fn export_embeddings(bin_path: &Path, ids: &[String], vectors: &[Embedding]) -> io::Result<()> {
    let dimension = vectors.first().map_or(0, Embedding::dim);
    if ids.len() != vectors.len() || vectors.iter().any(|v| v.dim() != dimension) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "ids and vectors disagree in count or dimension"));
    }
    let mut out = BufWriter::new(File::create(bin_path)?);
    for v in vectors {
        for x in &v.values {
            out.write_all(&(*x as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    let sidecar = json!({"ids": ids, "rows": vectors.len(), "dimension": dimension, "dtype": "float32-le"});
    std::fs::write(bin_path.with_extension("json"), serde_json::to_string_pretty(&sidecar)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Maps known texts to fixed vectors.
    struct Table {
        max_tokens: usize,
        vectors: HashMap<String, Vec<f64>>,
    }

    impl EmbeddingProvider for Table {
        fn name(&self) -> &str {
            "table"
        }
        fn dimension(&self) -> usize {
            2
        }
        fn max_tokens(&self) -> usize {
            self.max_tokens
        }
        fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
            whitespace_tokens(text)
        }
        fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
            self.vectors
                .get(text)
                .map(|v| Embedding::new(v.clone()))
                .ok_or_else(|| EmbedError::Provider { provider: "table".into(), message: format!("unknown text {text:?}") })
        }
    }

    fn words(prefix: &str, n: usize) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn splitter_keeps_text_intact() {
        let text = "Title line\nFirst sentence. Second one! \"Quoted?\" Last without stop";
        let parts = RuleSplitter.split(text);
        assert_eq!(parts, ["Title line\n", "First sentence. ", "Second one! ", "\"Quoted?\" ", "Last without stop"]);
        assert_eq!(parts.concat(), text);
        assert_eq!(RuleSplitter.split("3.14 is pi."), ["3.14 is pi."]);
    }

    #[test]
    fn short_text_is_one_chunk() {
        let p = MockEmbedder::new(4, 1).with_max_tokens(100);
        let c = chunk_document("A short text. Two sentences.", &p, &RuleSplitter).unwrap();
        assert_eq!(c.pieces, ["A short text. Two sentences."]);
    }

    #[test]
    fn sentences_that_cannot_share_a_chunk() {
        let p = MockEmbedder::new(4, 1).with_max_tokens(100);
        let text = format!("{}. {}.", words("a", 60), words("b", 60));
        let c = chunk_document(&text, &p, &RuleSplitter).unwrap();
        assert_eq!(c.pieces.len(), 2);
        assert_eq!(c.hard_splits, 0);
        assert!(c.pieces.iter().all(|s| p.token_count(s) == 60));
        assert_eq!(c.pieces.concat(), text);
    }

    #[test]
    fn overlong_sentence_is_hard_split() {
        let p = MockEmbedder::new(4, 1).with_max_tokens(100);
        let text = words("w", 150);
        let c = chunk_document(&text, &p, &RuleSplitter).unwrap();
        assert_eq!(c.pieces.len(), 2);
        assert_eq!(c.hard_splits, 1);
        assert_eq!((p.token_count(&c.pieces[0]), p.token_count(&c.pieces[1])), (100, 50));
        assert_eq!(c.pieces.concat(), text);
        assert!(chunk_document("", &p, &RuleSplitter).is_err());
    }

    #[test]
    fn average_of_two_chunks() {
        let s1 = format!("{}. ", words("a", 3));
        let s2 = format!("{}.", words("b", 3));
        let table = Table {
            max_tokens: 4,
            vectors: HashMap::from([(s1.clone(), vec![1.0, 0.0]), (s2.clone(), vec![0.0, 1.0])]),
        };
        let e = embed_document(&format!("{s1}{s2}"), &table, &ChunkingConfig::average()).unwrap();
        assert_eq!(e.values, [0.5, 0.5]);
    }

    #[test]
    fn single_chunk_collapses_in_both_modes() {
        let p = MockEmbedder::new(8, 3);
        let text = "Paris hosts the summit. Leaders arrive Monday.";
        let direct = p.embed(text).unwrap();
        assert_eq!(embed_document(text, &p, &ChunkingConfig::default()).unwrap(), direct);
        assert_eq!(embed_document(text, &p, &ChunkingConfig::average()).unwrap(), direct);
    }

    #[test]
    fn truncation_ignores_the_tail() {
        let p = MockEmbedder::new(8, 3).with_max_tokens(5);
        let a = format!("{} tail one", words("x", 5));
        let b = format!("{} something else entirely", words("x", 5));
        let cfg = ChunkingConfig::default();
        assert_eq!(embed_document(&a, &p, &cfg).unwrap(), embed_document(&b, &p, &cfg).unwrap());
        assert_eq!(truncate_to_limit(&a, &p), words("x", 5));
    }

    #[test]
    fn mock_is_deterministic_unit_norm_and_seeded() {
        let p = MockEmbedder::new(16, 42);
        let a = p.embed("same text").unwrap();
        assert_eq!(a, p.embed("same text").unwrap());
        assert!((a.norm() - 1.0).abs() <= 1e-9);
        assert_ne!(a, MockEmbedder::new(16, 43).embed("same text").unwrap());
    }

    #[test]
    fn mock_distinguishes_random_strings() {
        use rand::{Rng, SeedableRng};
        let p = MockEmbedder::new(8, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut texts: Vec<String> = (0..100).map(|_| (0..12).map(|_| rng.random_range('a'..='z')).collect()).collect();
        texts.sort();
        texts.dedup();
        let vecs: Vec<Embedding> = texts.iter().map(|t| p.embed(t).unwrap()).collect();
        for i in 0..vecs.len() {
            assert!((vecs[i].norm() - 1.0).abs() <= 1e-9);
            for j in i + 1..vecs.len() {
                assert!(vecs[i].values.iter().zip(&vecs[j].values).any(|(x, y)| x != y));
            }
        }
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), Some(0.0));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
        assert!((cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn embeddings_export_as_matrix_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("docs.bin");
        let ids = vec!["a".to_string(), "b".to_string()];
        let vecs = vec![Embedding::new(vec![1.0, 2.0, 3.0]), Embedding::new(vec![-1.0, 0.5, 0.0])];
        export_embeddings(&bin, &ids, &vecs).unwrap();
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(bytes.len(), 2 * 3 * 4);
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), -1.0);
        let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("docs.json")).unwrap()).unwrap();
        assert_eq!(side["dimension"], 3);
        assert_eq!(side["ids"][1], "b");
        assert!(export_embeddings(&bin, &ids[..1], &vecs).is_err());
    }
}
