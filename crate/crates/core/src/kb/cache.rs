use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{dbpedia_key, search_key, DbpediaRecord, KbError, KbSource, SearchHit, WikidataItem};
use crate::corpus::Language;

/// File name of the cache inside its directory.
pub const CACHE_FILE: &str = "kb.jsonl";

#[derive(Serialize, Deserialize)]
struct CacheLine {
    source: KbSource,
    key: String,
    value: Value,
}

/// Append-only key-value store. Each line of `kb.jsonl` is
/// `{"source": "wikidata"|"dbpedia"|"search", "key": ..., "value": ...}`;
/// a later line for the same key shadows earlier ones and a `null` value
/// records a negative lookup.
///
/// Reads take a shared lock; writes go through a single file handle.
pub struct KbCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<(KbSource, String), Value>>,
    writer: Mutex<Option<File>>,
}

impl KbCache {
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::default(), writer: Mutex::new(None) }
    }

    /// Opens (creating if needed) the cache stored in `dir`.
    pub fn open(dir: &Path) -> Result<Self, KbError> {
        fs::create_dir_all(dir).map_err(|e| KbError::Cache(format!("{}: {e}", dir.display())))?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| KbError::Cache(format!("{}: {e}", path.display())))?;
            read_lines(BufReader::new(file), &mut entries).map_err(|e| KbError::Cache(format!("{}: {e}", path.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| KbError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Self { path: Some(path), entries: RwLock::new(entries), writer: Mutex::new(Some(file)) })
    }

    /// Opens a cache file read-only, e.g. a checked-in fixture. Inserts stay in memory.
    pub fn load_file(path: &Path) -> Result<Self, KbError> {
        let file = File::open(path).map_err(|e| KbError::Cache(format!("{}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        read_lines(BufReader::new(file), &mut entries).map_err(|e| KbError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Self { path: Some(path.to_path_buf()), entries: RwLock::new(entries), writer: Mutex::new(None) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, source: KbSource, key: &str) -> Option<Value> {
        self.entries.read().expect("cache lock poisoned").get(&(source, key.to_string())).cloned()
    }

    pub fn insert(&self, source: KbSource, key: &str, value: Value) -> Result<(), KbError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(file) = writer.as_mut() {
            let line = CacheLine { source, key: key.to_string(), value: value.clone() };
            let mut buf = serde_json::to_vec(&line).map_err(|e| KbError::Cache(e.to_string()))?;
            buf.push(b'\n');
            file.write_all(&buf).map_err(|e| KbError::Cache(e.to_string()))?;
        }
        self.entries.write().expect("cache lock poisoned").insert((source, key.to_string()), value);
        Ok(())
    }

    pub fn insert_wikidata(&self, item: &WikidataItem) -> Result<(), KbError> {
        let value = serde_json::to_value(item).map_err(|e| KbError::Cache(e.to_string()))?;
        self.insert(KbSource::Wikidata, item.qid.as_str(), value)
    }

    pub fn insert_dbpedia(&self, record: &DbpediaRecord) -> Result<(), KbError> {
        let value = serde_json::to_value(record).map_err(|e| KbError::Cache(e.to_string()))?;
        self.insert(KbSource::Dbpedia, &dbpedia_key(record.language, &record.title), value)
    }

    pub fn insert_search(&self, language: Language, query: &str, hit: Option<&SearchHit>) -> Result<(), KbError> {
        let value = serde_json::to_value(hit).map_err(|e| KbError::Cache(e.to_string()))?;
        self.insert(KbSource::Search, &search_key(language, query), value)
    }

    pub fn insert_missing(&self, source: KbSource, key: &str) -> Result<(), KbError> {
        self.insert(source, key, Value::Null)
    }

    /// Writes every entry as JSONL sorted by `(source, key)`, one line per key.
    pub fn export<W: Write>(&self, mut out: W) -> io::Result<usize> {
        let entries = self.entries.read().expect("cache lock poisoned");
        let sorted: BTreeMap<_, _> = entries.iter().collect();
        for ((source, key), value) in &sorted {
            let line = CacheLine { source: *source, key: key.clone(), value: (*value).clone() };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(sorted.len())
    }
}

fn read_lines<R: BufRead>(reader: R, entries: &mut HashMap<(KbSource, String), Value>) -> Result<(), String> {
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", idx + 1))?;
        entries.insert((parsed.source, parsed.key), parsed.value);
    }
    Ok(())
}
