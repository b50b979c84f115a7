mod config;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use newsloc_core::corpus::{compute_stats, load_corpus, load_gold, write_corpus};
use newsloc_core::embedding::{ChunkingConfig, MockEmbedder, RemoteEmbedder};
use newsloc_core::evaluation::run_experiment;
use newsloc_core::kb::{FetchPolicy, HttpTransport, KbCache, KbClient, Remote};
use newsloc_core::ner::{GazetteerProvider, NerProvider, RemoteNerProvider};
use newsloc_core::pipeline::{Pipeline, System};
use newsloc_core::ranking::ModeSelection;
use newsloc_core::training::{generate_pairs, read_pairs, train, write_pairs, LossKind, OptimizerKind, ProjectionHead};
use newsloc_core::{Article, EmbeddingProvider, LocationTuple, Locator};

use config::{FileConfig, Overrides, Settings};

const USER_AGENT: &str = concat!("newsloc/", env!("CARGO_PKG_VERSION"), " (research tool)");

#[derive(Parser)]
#[command(name = "newsloc", version, about = "Detect the most relevant locations of news articles")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Article corpus (JSONL).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Gold annotations (JSONL).
    #[arg(long, global = true)]
    gold: Option<PathBuf>,
    /// Directory holding the knowledge-base cache.
    #[arg(long, global = true, env = "NEWSLOC_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// `cache-only` or `online`.
    #[arg(long, global = true)]
    network: Option<String>,
    /// Keep only articles in this language.
    #[arg(long, global = true)]
    lang: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Document-level worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Gazetteer NER provider file; repeatable.
    #[arg(long = "gazetteer", global = true)]
    gazetteers: Vec<PathBuf>,
    /// Dimension of the mock embedder.
    #[arg(long, global = true)]
    embedder_dim: Option<usize>,
    /// `truncate` or `average_subdivisions`.
    #[arg(long, global = true)]
    chunking: Option<String>,
    /// More log output; repeatable.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write it back in canonical form.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Find the categories of each article that name places.
    ClassifyCategories {
        #[arg(long)]
        output: PathBuf,
        /// Also write corpus statistics as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Build positive and negative (document, location) pairs.
    GeneratePairs {
        /// Category locations from `classify-categories`; computed when absent.
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rank candidate entities of every article.
    Rank {
        /// Representation mode(s), joined with `+`.
        #[arg(long)]
        mode: Option<String>,
        /// Trained projection head to apply to the embedder.
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a system against the gold annotations.
    Evaluate {
        /// `first-location` or `first-located`.
        #[arg(long, conflicts_with = "mode")]
        baseline: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        head: Option<PathBuf>,
        /// Per-document trace (JSONL).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Full report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune a projection head on generated pairs.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        /// cosine_mse, contrastive, triplet or infonce.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// sgd or adam.
        #[arg(long)]
        optimizer: Option<String>,
        /// Directory for `head.json` and `training_report.json`.
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Write the knowledge-base cache as sorted JSONL.
    CacheExport {
        /// Destination; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct CategoryLocations {
    article_id: String,
    locations: Vec<LocationTuple>,
}

struct Session {
    settings: Settings,
    kb: Arc<KbClient>,
}

impl Session {
    fn new(settings: Settings) -> Result<Self> {
        let cache = match &settings.cache_dir {
            Some(dir) => KbCache::open(dir).with_context(|| format!("cannot open cache in {}", dir.display()))?,
            None => {
                log::warn!("no cache directory given; knowledge-base lookups are not persisted");
                KbCache::in_memory()
            }
        };
        let kb = match settings.network {
            FetchPolicy::CacheOnly => KbClient::cache_only(cache),
            FetchPolicy::OnlineThenCache => {
                let transport = HttpTransport::new(USER_AGENT, Duration::from_secs(30)).map_err(|e| anyhow!("{}", e.0))?;
                let remote = Remote::new(Box::new(transport), settings.endpoints.clone()).with_rate_limit(settings.requests_per_second);
                KbClient::online(cache, remote)
            }
        };
        Ok(Self { settings, kb: Arc::new(kb) })
    }

    fn corpus(&self) -> Result<Vec<Article>> {
        let path = self.settings.corpus.as_deref().ok_or_else(|| anyhow!("no corpus given (--corpus or `corpus` in the config)"))?;
        read_articles(path, &self.settings)
    }

    fn locator(&self) -> Locator<'_> {
        Locator::new(self.kb.as_ref()).with_max_depth(self.settings.max_depth)
    }

    fn http(&self) -> Result<Box<HttpTransport>> {
        Ok(Box::new(HttpTransport::new(USER_AGENT, Duration::from_secs(60)).map_err(|e| anyhow!("{}", e.0))?))
    }

    fn embedder(&self, head: Option<&Path>) -> Result<Box<dyn EmbeddingProvider>> {
        let e = &self.settings.embedder;
        let base: Box<dyn EmbeddingProvider> = match e.kind.as_str() {
            "remote" => Box::new(RemoteEmbedder::new(
                e.model.as_deref().unwrap_or_default(),
                e.endpoint.as_deref().unwrap_or_default(),
                e.dimension,
                e.max_tokens,
                self.http()?,
            )),
            _ => Box::new(MockEmbedder::new(e.dimension, self.settings.seed).with_max_tokens(e.max_tokens)),
        };
        let Some(path) = head else { return Ok(base) };
        let head: ProjectionHead = read_json(path)?;
        if head.input_dim != base.dimension() {
            bail!("head {} expects {}-dimensional input, the embedder gives {}", path.display(), head.input_dim, base.dimension());
        }
        Ok(Box::new(newsloc_core::training::FineTunedEmbedder::new(base, head)))
    }

    fn ner(&self) -> Result<Vec<Box<dyn NerProvider>>> {
        let mut out: Vec<Box<dyn NerProvider>> = Vec::new();
        for path in &self.settings.gazetteers {
            out.push(Box::new(GazetteerProvider::load(path)?));
        }
        for m in &self.settings.remote_ner {
            out.push(Box::new(RemoteNerProvider::new(&m.model, &m.endpoint, self.http()?)));
        }
        if out.is_empty() {
            bail!("no NER provider configured (--gazetteer or [ner] in the config)");
        }
        Ok(out)
    }

    fn pipeline(&self, head: Option<&Path>) -> Result<Pipeline> {
        let chunking = ChunkingConfig { mode: self.settings.chunking, ..ChunkingConfig::default() };
        let mut p = Pipeline::new(self.kb.clone(), self.ner()?, self.embedder(head)?).with_chunking(chunking).with_workers(self.settings.workers);
        p.max_depth = self.settings.max_depth;
        Ok(p)
    }

    /// In cache-only mode, refuses to continue when any lookup missed.
    fn ensure_no_misses(&self) -> Result<()> {
        let missing = self.kb.missing_keys();
        if missing.is_empty() {
            return Ok(());
        }
        bail!(
            "{} knowledge-base entries are not cached and the network is disabled:\n  {}\nrerun with --network online to fetch them",
            missing.len(),
            missing.join("\n  ")
        )
    }

    fn category_locations(&self, corpus: &[Article]) -> HashMap<String, Vec<LocationTuple>> {
        let locator = self.locator();
        corpus.iter().map(|a| (a.id.clone(), locator.classify_categories(a))).collect()
    }
}

fn read_articles(path: &Path, settings: &Settings) -> Result<Vec<Article>> {
    let (mut articles, report) = load_corpus(path, settings.language)?;
    for w in &report.warnings {
        log::warn!("{}: line {}: {}", path.display(), w.line, w.message);
    }
    if report.skipped > 0 {
        eprintln!("{}: {} records loaded, {} skipped", path.display(), report.loaded, report.skipped);
    }
    for a in &mut articles {
        a.ensure_title_prefix();
    }
    Ok(articles)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn read_category_locations(path: &Path) -> Result<HashMap<String, Vec<LocationTuple>>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CategoryLocations = serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        out.insert(row.article_id, row.locations);
    }
    Ok(out)
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let file = match &g.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let settings = Settings::merge(
        file,
        Overrides {
            corpus: g.corpus,
            gold: g.gold,
            cache_dir: g.cache_dir,
            network: g.network,
            language: g.lang,
            seed: g.seed,
            workers: g.workers,
            gazetteers: g.gazetteers,
            embedder_dim: g.embedder_dim,
            chunking: g.chunking,
        },
    )?;

    match cli.command {
        Command::Ingest { input, output } => {
            let articles = read_articles(&input, &settings)?;
            let mut out = create(&output)?;
            write_corpus(&mut out, &articles)?;
            out.flush()?;
            println!("{} articles written to {}", articles.len(), output.display());
        }
        Command::ClassifyCategories { output, stats } => {
            let ctx = Session::new(settings)?;
            let corpus = ctx.corpus()?;
            let locations = ctx.category_locations(&corpus);
            ctx.ensure_no_misses()?;
            let rows: Vec<CategoryLocations> =
                corpus.iter().map(|a| CategoryLocations { article_id: a.id.clone(), locations: locations[&a.id].clone() }).collect();
            write_jsonl(&output, &rows)?;
            let s = compute_stats(&corpus, &locations);
            print!("{}", s.to_table());
            if let Some(path) = stats {
                write_json(&path, &s)?;
            }
        }
        Command::GeneratePairs { categories, output } => {
            let ctx = Session::new(settings)?;
            let corpus = ctx.corpus()?;
            let locations = match categories {
                Some(path) => read_category_locations(&path)?,
                None => ctx.category_locations(&corpus),
            };
            let pairs = generate_pairs(&corpus, &locations, &ctx.locator(), ctx.settings.seed);
            ctx.ensure_no_misses()?;
            let mut out = create(&output)?;
            write_pairs(&mut out, &pairs)?;
            out.flush()?;
            let positives = pairs.iter().filter(|p| p.is_positive()).count();
            println!("{} pairs ({} positive, {} negative) written to {}", pairs.len(), positives, pairs.len() - positives, output.display());
        }
        Command::Rank { mode, head, output } => {
            let ctx = Session::new(settings)?;
            let modes: ModeSelection = match mode {
                Some(m) => m.parse().map_err(|e: String| anyhow!("--mode: {e}"))?,
                None => ctx.settings.mode.clone(),
            };
            let corpus = ctx.corpus()?;
            let pipeline = ctx.pipeline(head.as_deref())?;
            let results = pipeline.rank_corpus(&corpus, &modes)?;
            ctx.ensure_no_misses()?;
            let mut records = Vec::with_capacity(results.len());
            let mut failed = 0;
            for (article, r) in corpus.iter().zip(results) {
                match r {
                    Ok(rec) => records.push(rec),
                    Err(e) => {
                        failed += 1;
                        log::error!("article {}: {e}", article.id);
                    }
                }
            }
            write_jsonl(&output, &records)?;
            println!("{} rankings written to {} ({failed} failed)", records.len(), output.display());
        }
        Command::Evaluate { baseline, mode, head, trace, report } => {
            let ctx = Session::new(settings)?;
            let system = match (baseline, mode) {
                (Some(b), _) => match b.as_str() {
                    "first-location" | "first-located" => b.parse::<System>().map_err(|e| anyhow!(e))?,
                    other => bail!("--baseline: unknown baseline `{other}` (expected first-location or first-located)"),
                },
                (None, Some(m)) => System::Ranked { modes: m.parse().map_err(|e: String| anyhow!("--mode: {e}"))? },
                (None, None) => System::Ranked { modes: ctx.settings.mode.clone() },
            };
            let gold_path = ctx.settings.gold.clone().ok_or_else(|| anyhow!("no gold file given (--gold or `gold` in the config)"))?;
            let gold = load_gold(&gold_path)?;
            let corpus = ctx.corpus()?;
            let pipeline = ctx.pipeline(head.as_deref())?;
            let result = run_experiment(&pipeline, &corpus, &gold, &system)?;
            ctx.ensure_no_misses()?;
            if let Some(path) = trace {
                write_jsonl(&path, &result.trace)?;
            }
            if let Some(path) = report {
                write_json(&path, &result)?;
            }
            print!("{}", result.to_table());
        }
        Command::Train { pairs, loss, batch_size, epochs, margin, patience, learning_rate, optimizer, output_dir } => {
            let mut cfg = settings.training.clone();
            if let Some(l) = loss {
                cfg.loss = l.parse::<LossKind>().map_err(|e| anyhow!("--loss: {e}"))?;
            }
            if let Some(o) = optimizer {
                cfg.optimizer = o.parse::<OptimizerKind>().map_err(|e| anyhow!("--optimizer: {e}"))?;
            }
            cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.margin = margin.or(cfg.margin);
            cfg.early_stop_patience = patience.unwrap_or(cfg.early_stop_patience);
            cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
            cfg.validate()?;
            let file = File::open(&pairs).with_context(|| format!("cannot open {}", pairs.display()))?;
            let pairs = read_pairs(BufReader::new(file)).with_context(|| format!("invalid pairs file {}", pairs.display()))?;
            let ctx = Session::new(settings)?;
            let base = ctx.embedder(None)?;
            let chunking = ChunkingConfig { mode: ctx.settings.chunking, ..ChunkingConfig::default() };
            let started = unix_time();
            let (head, mut report) = train(base.as_ref(), &chunking, &pairs, &cfg)?;
            report.metadata.insert("started_at".into(), started.into());
            report.metadata.insert("finished_at".into(), unix_time().into());
            write_json(&output_dir.join("head.json"), &head)?;
            write_json(&output_dir.join("training_report.json"), &report)?;
            println!(
                "loss={} batch={} epochs_run={} best_epoch={} best_validation_loss={:.6}",
                report.loss, report.batch_size, report.epochs_run, report.best_epoch, report.best_validation_loss
            );
        }
        Command::CacheExport { output } => {
            let ctx = Session::new(settings)?;
            let n = match output {
                Some(path) => {
                    let mut out = create(&path)?;
                    let n = ctx.kb.cache().export(&mut out)?;
                    out.flush()?;
                    n
                }
                None => ctx.kb.cache().export(io::stdout().lock())?,
            };
            eprintln!("{n} cache entries exported");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
