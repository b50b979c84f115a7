//! End-to-end wiring: NER, candidate building, ranking and prediction over a
//! corpus, run on a fixed-size worker pool with results in corpus order.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Article;
use crate::embedding::{ChunkingConfig, EmbedError, EmbeddingProvider};
use crate::kb::KnowledgeBase;
use crate::location::{LocationTuple, Locator, DEFAULT_MAX_DEPTH};
use crate::ner::{extract_entities, NerError, NerProvider, NerSpan, TagMap};
use crate::ranking::{
    baseline_first_location, build_candidates, predict_location, rank_candidates, ModeSelection, RankedCandidate, RankingRecord,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ner(#[from] NerError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// What produces the prediction for a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    /// First location by offset; with `include_located`, locatable
    /// non-locations count as well.
    Baseline { include_located: bool },
    Ranked { modes: ModeSelection },
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::Baseline { include_located: false } => f.write_str("first-location"),
            System::Baseline { include_located: true } => f.write_str("first-located"),
            System::Ranked { modes } => write!(f, "{modes}"),
        }
    }
}

impl FromStr for System {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-location" => Ok(System::Baseline { include_located: false }),
            "first-located" | "first-location-or-located" => Ok(System::Baseline { include_located: true }),
            other => other.parse().map(|modes| System::Ranked { modes }),
        }
    }
}

pub struct Pipeline {
    pub kb: Arc<dyn KnowledgeBase>,
    pub ner: Vec<Box<dyn NerProvider>>,
    pub tags: TagMap,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub chunking: ChunkingConfig,
    pub max_depth: usize,
    pub workers: usize,
}

impl Pipeline {
    pub fn new(kb: Arc<dyn KnowledgeBase>, ner: Vec<Box<dyn NerProvider>>, embedder: Box<dyn EmbeddingProvider>) -> Self {
        Self { kb, ner, tags: TagMap::default(), embedder, chunking: ChunkingConfig::default(), max_depth: DEFAULT_MAX_DEPTH, workers: 1 }
    }

    pub fn with_chunking(mut self, chunking: ChunkingConfig) -> Self {
        self.chunking = chunking;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn locator(&self) -> Locator<'_> {
        Locator::new(self.kb.as_ref()).with_max_depth(self.max_depth)
    }

    pub fn entities(&self, article: &Article) -> Result<Vec<NerSpan>, NerError> {
        let providers: Vec<&dyn NerProvider> = self.ner.iter().map(|p| p.as_ref()).collect();
        extract_entities(&article.text, &providers, &self.tags)
    }

    pub fn rank_article(&self, article: &Article, modes: &ModeSelection) -> Result<Vec<RankedCandidate>, PipelineError> {
        let entities = self.entities(article)?;
        let candidates = build_candidates(article, &entities, modes, &self.locator());
        Ok(rank_candidates(article, candidates, self.embedder.as_ref(), &self.chunking)?)
    }

    pub fn predict(&self, article: &Article, system: &System) -> Result<Option<LocationTuple>, PipelineError> {
        let locator = self.locator();
        match system {
            System::Baseline { include_located } => {
                let entities = self.entities(article)?;
                Ok(baseline_first_location(article, &entities, *include_located, &locator))
            }
            System::Ranked { modes } => {
                let ranked = self.rank_article(article, modes)?;
                Ok(predict_location(&ranked, article, &locator))
            }
        }
    }

    /// Runs `f` over the articles on the worker pool, keeping input order.
    pub fn map_articles<T, F>(&self, articles: &[Article], f: F) -> Result<Vec<T>, PipelineError>
    where
        T: Send,
        F: Fn(&Article) -> T + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build().map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(pool.install(|| articles.par_iter().map(&f).collect()))
    }

    pub fn rank_corpus(&self, articles: &[Article], modes: &ModeSelection) -> Result<Vec<Result<RankingRecord, PipelineError>>, PipelineError> {
        self.map_articles(articles, |a| self.rank_article(a, modes).map(|r| RankingRecord::new(&a.id, modes, &r)))
    }

    pub fn predict_corpus(&self, articles: &[Article], system: &System) -> Result<Vec<Result<Option<LocationTuple>, PipelineError>>, PipelineError> {
        self.map_articles(articles, |a| self.predict(a, system))
    }
}
