//! Relevant-location detection for multilingual news.
//!
//! Given a news article, the pipeline extracts entities, links them to
//! WikiData, infers where non-location entities are situated through their
//! DBpedia properties, and ranks the candidates against the document with a
//! Siamese sentence-embedding model. The top candidate is resolved to a
//! `(city, country)` tuple.
//!
//! Modules, bottom-up:
//!
//! - [`corpus`]: articles, gold annotations, JSONL persistence and statistics.
//! - [`kb`]: WikiData / DBpedia / Wikipedia-search clients behind a persistent cache.
//! - [`linking`]: surface form to WikiData ID, and tuple normalization.
//! - [`location`]: category classification and city/country resolution.
//! - [`ner`]: provider interface and the ensemble union.
//! - [`embedding`]: provider interface, chunking and chunk-averaged document embeddings.
//! - [`ranking`]: entity representations, cosine ranking and the baselines.
//! - [`training`]: pair generation, contrastive objectives and the training loop.
//! - [`evaluation`]: MP@1 at country and city level.
//! - [`pipeline`]: wiring used by the command-line tool.

pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod kb;
pub mod linking;
pub mod location;
pub mod ner;
pub mod pipeline;
pub mod ranking;
pub mod text;
pub mod training;

pub use corpus::{Article, CorpusStats, GoldAnnotation, Language, ParsedMention};
pub use embedding::{Embedding, EmbeddingProvider, MockEmbedder};
pub use evaluation::{EvalReport, Level};
pub use kb::{DbpediaRecord, FetchPolicy, KbCache, KbClient, KbError, KnowledgeBase, Qid, WikidataItem};
pub use linking::{link_entity, LinkResult};
pub use location::{LocatedEntity, LocationTuple, Locator};
pub use ner::{NerProvider, NerSpan};
pub use ranking::{RankedCandidate, RepresentationMode};
pub use training::{LossConfig, LossKind, TrainingPair};
