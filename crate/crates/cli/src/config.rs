//! Configuration file and its merge with command-line flags.
//!
//! Precedence is flags, then the file, then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use newsloc_core::embedding::ChunkMode;
use newsloc_core::kb::{Endpoints, FetchPolicy};
use newsloc_core::ranking::ModeSelection;
use newsloc_core::training::{LossConfig, TrainError};
use newsloc_core::Language;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub network: Option<String>,
    pub language: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub ner: NerConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    pub chunking: Option<String>,
    pub mode: Option<String>,
    pub max_depth: Option<usize>,
    pub requests_per_second: Option<f64>,
    pub endpoints: Option<Endpoints>,
    pub training: Option<LossConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NerConfig {
    #[serde(default)]
    pub gazetteers: Vec<PathBuf>,
    #[serde(default)]
    pub remote: Vec<RemoteModel>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteModel {
    pub model: String,
    pub endpoint: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    /// `mock` or `remote`.
    pub kind: String,
    pub dimension: usize,
    pub max_tokens: usize,
    pub model: Option<String>,
    pub endpoint: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { kind: "mock".into(), dimension: 64, max_tokens: 128, model: None, endpoint: None }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&raw).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        Ok(cfg)
    }
}

/// Flags shared by every command; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub network: Option<String>,
    pub language: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub gazetteers: Vec<PathBuf>,
    pub embedder_dim: Option<usize>,
    pub chunking: Option<String>,
}

/// Validated settings after merging.
#[derive(Debug, Clone)]
pub struct Settings {
    pub corpus: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub network: FetchPolicy,
    pub language: Option<Language>,
    pub seed: u64,
    pub workers: usize,
    pub gazetteers: Vec<PathBuf>,
    pub remote_ner: Vec<RemoteModel>,
    pub embedder: EmbedderConfig,
    pub chunking: ChunkMode,
    pub mode: ModeSelection,
    pub max_depth: usize,
    pub requests_per_second: f64,
    pub endpoints: Endpoints,
    pub training: LossConfig,
}

impl Settings {
    pub fn merge(file: FileConfig, flags: Overrides) -> Result<Self> {
        let mut problems: Vec<String> = Vec::new();
        fn field<T>(problems: &mut Vec<String>, name: &str, r: Result<T, String>) -> Option<T> {
            r.map_err(|e| problems.push(format!("{name}: {e}"))).ok()
        }
        let network = field(&mut problems, "network", flags.network.or(file.network).map_or(Ok(FetchPolicy::CacheOnly), |s| s.parse()));
        let language = field(&mut problems, "language", flags.language.or(file.language).map(|s| s.parse()).transpose());
        let chunking = field(&mut problems, "chunking", flags.chunking.or(file.chunking).map_or(Ok(ChunkMode::Truncate), |s| s.parse()));
        let mode = field(&mut problems, "mode", file.mode.map_or(Ok(ModeSelection::default()), |s| s.parse()));
        let workers = flags.workers.or(file.workers).unwrap_or(1);
        if workers == 0 {
            problems.push("workers: must be at least 1".into());
        }
        let mut embedder = file.embedder;
        if let Some(d) = flags.embedder_dim {
            embedder.dimension = d;
        }
        match embedder.kind.as_str() {
            "mock" => {}
            "remote" if embedder.endpoint.is_some() && embedder.model.is_some() => {}
            "remote" => problems.push("embedder: remote embedder needs `model` and `endpoint`".into()),
            other => problems.push(format!("embedder.kind: unknown kind `{other}` (expected mock or remote)")),
        }
        if embedder.dimension == 0 {
            problems.push("embedder.dimension: must be at least 1".into());
        }
        if embedder.max_tokens == 0 {
            problems.push("embedder.max_tokens: must be at least 1".into());
        }
        let requests_per_second = file.requests_per_second.unwrap_or(10.0);
        if !(requests_per_second >= 0.0 && requests_per_second.is_finite()) {
            problems.push("requests_per_second: must be a non-negative number".into());
        }
        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let mut training = file.training.unwrap_or_default();
        training.seed = seed;
        match training.validate() {
            Ok(()) => {}
            Err(TrainError::Config(m)) => problems.push(format!("training: {m}")),
            Err(e) => problems.push(format!("training: {e}")),
        }
        if !problems.is_empty() {
            bail!("invalid configuration:\n  {}", problems.join("\n  "));
        }
        let mut gazetteers = file.ner.gazetteers;
        gazetteers.extend(flags.gazetteers);
        Ok(Self {
            corpus: flags.corpus.or(file.corpus),
            gold: flags.gold.or(file.gold),
            cache_dir: flags.cache_dir.or(file.cache_dir),
            network: network.expect("validated"),
            language: language.expect("validated"),
            seed,
            workers,
            gazetteers,
            remote_ner: file.ner.remote,
            embedder,
            chunking: chunking.expect("validated"),
            mode: mode.expect("validated"),
            max_depth: file.max_depth.unwrap_or(newsloc_core::location::DEFAULT_MAX_DEPTH),
            requests_per_second,
            endpoints: file.endpoints.unwrap_or_default(),
            training,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let file: FileConfig = toml::from_str("seed = 5\nworkers = 3\nnetwork = \"online\"\n").unwrap();
        let s = Settings::merge(file.clone(), Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!((s.seed, s.workers, s.network), (9, 3, FetchPolicy::OnlineThenCache));
        assert_eq!(s.training.seed, 9);
        let s = Settings::merge(FileConfig::default(), Overrides::default()).unwrap();
        assert_eq!((s.seed, s.workers, s.network), (0, 1, FetchPolicy::CacheOnly));
        assert_eq!(s.training.batch_size, 128);
    }

    #[test]
    fn problems_are_listed_per_field() {
        let file: FileConfig = toml::from_str("network = \"sometimes\"\nmode = \"nope\"\n[embedder]\nkind = \"magic\"\n").unwrap();
        let err = Settings::merge(file, Overrides { workers: Some(0), ..Default::default() }).unwrap_err().to_string();
        for needle in ["network:", "mode:", "embedder.kind:", "workers:"] {
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sede = 1\n").is_err());
    }

    #[test]
    fn training_table() {
        let file: FileConfig = toml::from_str("[training]\nloss = \"triplet\"\nbatch_size = 64\n").unwrap();
        let s = Settings::merge(file, Overrides::default()).unwrap();
        assert_eq!(s.training.batch_size, 64);
        assert_eq!(s.training.margin(), 1.0);
    }
}
