//! Semi-supervised fine-tuning of the ranking encoder.
//!
//! Category locations give positive `(document, location)` pairs; linked
//! mentions whose location has nothing to do with those categories give
//! negatives. The encoder is then trained with one of four contrastive
//! objectives, keeping the checkpoint with the best validation loss.

pub mod losses;
pub mod model;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Article;
use crate::embedding::{embed_document, ChunkingConfig, EmbedError, EmbeddingProvider};
use crate::kb::Qid;
use crate::location::{LocationTuple, Locator};

pub use losses::{ContrastiveDistance, LossError};
pub use model::{FineTunedEmbedder, OptimizerKind, ProjectionHead};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training pairs")]
    NoPairs,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not enough {0} pairs to form a batch")]
    NotEnoughPairs(&'static str),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("loss failed: {0}")]
    Loss(#[from] LossError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub article_id: String,
    #[serde(rename = "doc")]
    pub document_text: String,
    #[serde(rename = "entity")]
    pub entity_text: String,
    /// 1 for a positive pair, 0 for a negative one.
    pub label: u8,
}

impl TrainingPair {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

pub fn write_pairs<W: Write>(mut out: W, pairs: &[TrainingPair]) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(reader: R) -> io::Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: TrainingPair = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", idx + 1)))?;
        if pair.label > 1 {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("line {}: label must be 0 or 1", idx + 1)));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

fn document_rng(seed: u64, article_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(article_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn related(candidate: &LocationTuple, positives: &[LocationTuple]) -> bool {
    positives.iter().any(|p| {
        let same_country = candidate.country_qid.is_some() && candidate.country_qid == p.country_qid;
        let same_city = candidate.city_qid.is_some() && candidate.city_qid == p.city_qid;
        same_country || same_city
    })
}

fn pairs_for_article(article: &Article, positives: &[LocationTuple], locator: &Locator<'_>, seed: u64) -> Vec<TrainingPair> {
    if article.categories.is_empty() || positives.is_empty() {
        return Vec::new();
    }
    let pair = |entity: String, label| TrainingPair { article_id: article.id.clone(), document_text: article.text.clone(), entity_text: entity, label };
    let mut positive_texts: Vec<String> = Vec::new();
    for p in positives {
        let text = p.render();
        if !positive_texts.contains(&text) {
            positive_texts.push(text);
        }
    }
    let positive_qids: HashSet<&Qid> = positives.iter().flat_map(|p| p.city_qid.iter().chain(p.country_qid.iter())).collect();

    let mut negatives: Vec<String> = Vec::new();
    let mut checked: HashSet<&Qid> = HashSet::new();
    for mention in &article.mentions {
        let Some(qid) = &mention.qid else { continue };
        if positive_qids.contains(qid) || !checked.insert(qid) {
            continue;
        }
        if positive_texts.iter().any(|t| t.eq_ignore_ascii_case(&mention.surface)) || negatives.contains(&mention.surface) {
            continue;
        }
        match locator.locate_qid(qid) {
            Ok(Some(loc)) if related(&loc, positives) => {}
            Ok(_) => negatives.push(mention.surface.clone()),
            Err(e) => log::debug!("article {}: mention {qid} not checked: {e}", article.id),
        }
    }
    negatives.shuffle(&mut document_rng(seed, &article.id));
    negatives.truncate(positive_texts.len());

    let mut out: Vec<TrainingPair> = positive_texts.into_iter().map(|t| pair(t, 1)).collect();
    out.extend(negatives.into_iter().map(|t| pair(t, 0)));
    out
}

/// Builds positive pairs from category locations and an equal number of
/// negative pairs from linked mentions unrelated to those locations.
///
/// A mention is unrelated when its own ID is none of the positives' city or
/// country IDs and its resolved location shares neither city nor country
/// with any positive. Documents without categories contribute nothing.
pub fn generate_pairs(
    corpus: &[Article],
    category_locations: &HashMap<String, Vec<LocationTuple>>,
    locator: &Locator<'_>,
    seed: u64,
) -> Vec<TrainingPair> {
    corpus
        .par_iter()
        .map(|a| pairs_for_article(a, category_locations.get(&a.id).map_or(&[][..], Vec::as_slice), locator, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CosineMse,
    Contrastive,
    Triplet,
    Infonce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CosineMse => "cosine_mse",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::Infonce => "infonce",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine_mse" | "cosine" => Ok(LossKind::CosineMse),
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            "infonce" => Ok(LossKind::Infonce),
            other => Err(format!("unknown loss `{other}` (expected cosine_mse, contrastive, triplet or infonce)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub loss: LossKind,
    /// Contrastive defaults to 0.5, triplet to 1.0.
    pub margin: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub contrastive_distance: ContrastiveDistance,
    /// Multiplies the cosines fed to the InfoNCE softmax.
    pub infonce_scale: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Infonce,
            margin: None,
            batch_size: 128,
            epochs: 32,
            early_stop_patience: 3,
            contrastive_distance: ContrastiveDistance::CosineDistance,
            infonce_scale: 1.0,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl LossConfig {
    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or(match self.loss {
            LossKind::Triplet => 1.0,
            _ => 0.5,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || (self.loss == LossKind::Infonce && self.batch_size < 2) {
            return bad(format!("batch size {} too small for {}", self.batch_size, self.loss));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        let m = self.margin();
        if !(m >= 0.0 && m.is_finite()) || (self.loss == LossKind::Contrastive && m > 2.0) {
            return bad(format!("margin {m} out of range"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} must lie in (0, 1)", self.validation_fraction));
        }
        Ok(())
    }
}

/// Tracks the best validation loss; stops once `patience` consecutive
/// epochs fail to improve on it.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, stale: 0 }
    }

    /// Records an epoch's loss; true if it is the new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        let improved = self.best.is_none_or(|(_, best)| loss < best);
        if improved {
            self.best = Some((epoch, loss));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale > self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub loss: LossKind,
    pub batch_size: usize,
    pub margin: f64,
    pub max_epochs: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub history: Vec<EpochLog>,
    /// Run-specific values such as timestamps, kept apart so the rest of
    /// the report is reproducible.
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

/// Training examples in the shape each loss consumes, as indices into a
/// feature table.
enum Examples {
    Pairs(Vec<(usize, usize, f64)>),
    Triplets(Vec<(usize, usize, usize)>),
    Positives(Vec<(usize, usize)>),
}

impl Examples {
    fn len(&self) -> usize {
        match self {
            Examples::Pairs(v) => v.len(),
            Examples::Triplets(v) => v.len(),
            Examples::Positives(v) => v.len(),
        }
    }
}

struct FeatureTable {
    index: HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    fn build(pairs: &[TrainingPair], base: &dyn EmbeddingProvider, chunking: &ChunkingConfig) -> Result<Self, EmbedError> {
        let mut texts: Vec<(&str, bool)> = Vec::new();
        let mut index = HashMap::new();
        for p in pairs {
            for (t, is_doc) in [(p.document_text.as_str(), true), (p.entity_text.as_str(), false)] {
                if !index.contains_key(t) {
                    index.insert(t.to_string(), texts.len());
                    texts.push((t, is_doc));
                }
            }
        }
        let rows = texts
            .par_iter()
            .map(|(t, is_doc)| if *is_doc { embed_document(t, base, chunking) } else { base.embed(t) }.map(|e| e.values))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { index, rows })
    }

    fn id(&self, text: &str) -> usize {
        self.index[text]
    }
}

fn build_examples(pairs: &[TrainingPair], loss: LossKind, table: &FeatureTable) -> Examples {
    match loss {
        LossKind::CosineMse | LossKind::Contrastive => {
            Examples::Pairs(pairs.iter().map(|p| (table.id(&p.document_text), table.id(&p.entity_text), p.label as f64)).collect())
        }
        LossKind::Infonce => Examples::Positives(
            pairs.iter().filter(|p| p.is_positive()).map(|p| (table.id(&p.document_text), table.id(&p.entity_text))).collect(),
        ),
        LossKind::Triplet => {
            let mut by_doc: Vec<(&str, Vec<usize>, Vec<usize>)> = Vec::new();
            for p in pairs {
                let slot = match by_doc.iter().position(|(id, _, _)| *id == p.article_id) {
                    Some(i) => i,
                    None => {
                        by_doc.push((&p.article_id, vec![], vec![]));
                        by_doc.len() - 1
                    }
                };
                let e = table.id(&p.entity_text);
                if p.is_positive() {
                    by_doc[slot].1.push(e);
                } else {
                    by_doc[slot].2.push(e);
                }
            }
            let mut triplets = Vec::new();
            for (id, pos, neg) in &by_doc {
                let doc = pairs.iter().find(|p| p.article_id == *id).map(|p| table.id(&p.document_text)).expect("document present");
                if neg.is_empty() {
                    continue;
                }
                for (i, &p) in pos.iter().enumerate() {
                    triplets.push((doc, p, neg[i % neg.len()]));
                }
            }
            Examples::Triplets(triplets)
        }
    }
}

struct Trainer<'a> {
    config: &'a LossConfig,
    head: ProjectionHead,
    table: &'a FeatureTable,
}

impl Trainer<'_> {
    /// Loss of one batch; with `grad` set, accumulates the weight gradient
    /// of the batch-mean loss.
    fn batch(&self, examples: &Examples, batch: &[usize], mut grad: Option<&mut [f64]>) -> Result<f64, TrainError> {
        let rows = &self.table.rows;
        let out = |i: usize| self.head.forward(&rows[i]);
        let w = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        match examples {
            Examples::Pairs(items) => {
                for &k in batch {
                    let (d, e, y) = items[k];
                    let (u, v) = (out(d), out(e));
                    let g = match self.config.loss {
                        LossKind::CosineMse => losses::cosine_mse_grad(&u, &v, y)?,
                        _ => losses::contrastive_grad(&u, &v, y, self.config.margin(), self.config.contrastive_distance)?,
                    };
                    total += g.value * w;
                    if let Some(grad) = grad.as_deref_mut() {
                        self.head.accumulate(grad, &rows[d], &g.du, w);
                        self.head.accumulate(grad, &rows[e], &g.dv, w);
                    }
                }
            }
            Examples::Triplets(items) => {
                for &k in batch {
                    let (d, p, n) = items[k];
                    let g = losses::triplet_grad(&out(d), &out(p), &out(n), self.config.margin())?;
                    total += g.value * w;
                    if let Some(grad) = grad.as_deref_mut() {
                        self.head.accumulate(grad, &rows[d], &g.du, w);
                        self.head.accumulate(grad, &rows[p], &g.dpos, w);
                        self.head.accumulate(grad, &rows[n], &g.dneg, w);
                    }
                }
            }
            Examples::Positives(items) => {
                let us: Vec<Vec<f64>> = batch.iter().map(|&k| out(items[k].0)).collect();
                let vs: Vec<Vec<f64>> = batch.iter().map(|&k| out(items[k].1)).collect();
                let g = losses::infonce_grad(&us, &vs, self.config.infonce_scale)?;
                total = g.value;
                if let Some(grad) = grad {
                    for (slot, &k) in batch.iter().enumerate() {
                        self.head.accumulate(grad, &rows[items[k].0], &g.du[slot], 1.0);
                        self.head.accumulate(grad, &rows[items[k].1], &g.dv[slot], 1.0);
                    }
                }
            }
        }
        Ok(total)
    }

    fn batches(&self, order: &[usize]) -> Vec<Vec<usize>> {
        let min = if self.config.loss == LossKind::Infonce { 2 } else { 1 };
        order.chunks(self.config.batch_size).filter(|c| c.len() >= min).map(<[usize]>::to_vec).collect()
    }

    /// Example-weighted mean loss over fixed-order batches.
    fn evaluate(&self, examples: &Examples) -> Result<f64, TrainError> {
        let order: Vec<usize> = (0..examples.len()).collect();
        let (mut sum, mut n) = (0.0, 0usize);
        for b in self.batches(&order) {
            sum += self.batch(examples, &b, None)? * b.len() as f64;
            n += b.len();
        }
        Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
    }
}

/// Fine-tunes a projection head over a frozen base encoder.
///
/// Pairs are split by document into training and validation sets. After
/// every epoch the validation loss is measured; the best head is returned
/// and training stops once `early_stop_patience` epochs pass without
/// improvement.
pub fn train(
    base: &dyn EmbeddingProvider,
    chunking: &ChunkingConfig,
    pairs: &[TrainingPair],
    config: &LossConfig,
) -> Result<(ProjectionHead, TrainingReport), TrainError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let (train_pairs, val_pairs) = crate::corpus::split_by_document(pairs, |p| p.article_id.as_str(), config.validation_fraction, config.seed)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let table = FeatureTable::build(pairs, base, chunking)?;
    let train_ex = build_examples(&train_pairs, config.loss, &table);
    let val_ex = build_examples(&val_pairs, config.loss, &table);
    let min = if config.loss == LossKind::Infonce { 2 } else { 1 };
    if train_ex.len() < min {
        return Err(TrainError::NotEnoughPairs("training"));
    }
    let monitor_train = val_ex.len() < min;
    if monitor_train {
        log::warn!("validation split has too few usable pairs; early stopping monitors the training loss");
    }

    let mut trainer = Trainer { config, head: ProjectionHead::identity(base.dimension()), table: &table };
    let mut optimizer = model::Optimizer::new(config.optimizer, config.learning_rate, trainer.head.weights.len());
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best_head = trainer.head.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let (mut sum, mut n) = (0.0, 0usize);
        for (b, batch) in trainer.batches(&order).into_iter().enumerate() {
            let mut grad = vec![0.0; trainer.head.weights.len()];
            let loss = trainer.batch(&train_ex, &batch, Some(&mut grad))?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite { epoch, batch: b, loss });
            }
            optimizer.step(&mut trainer.head.weights, &grad);
            sum += loss * batch.len() as f64;
            n += batch.len();
        }
        let train_loss = sum / n.max(1) as f64;
        let validation_loss = if monitor_train { trainer.evaluate(&train_ex)? } else { trainer.evaluate(&val_ex)? };
        if !validation_loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, batch: usize::MAX, loss: validation_loss });
        }
        log::info!("epoch {epoch}: train {train_loss:.6}, validation {validation_loss:.6}");
        history.push(EpochLog { epoch, train_loss, validation_loss });
        if stopper.observe(epoch, validation_loss) {
            best_head = trainer.head.clone();
        }
        if stopper.should_stop() && epoch < config.epochs {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_validation_loss) = stopper.best().expect("at least one epoch ran");
    let report = TrainingReport {
        loss: config.loss,
        batch_size: config.batch_size,
        margin: config.margin(),
        max_epochs: config.epochs,
        epochs_run: history.len(),
        best_epoch,
        best_validation_loss,
        stopped_early,
        train_pairs: train_pairs.len(),
        validation_pairs: val_pairs.len(),
        history,
        metadata: Default::default(),
    };
    Ok((best_head, report))
}
