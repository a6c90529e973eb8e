//! Keyword-indexed record store with a JSON-lines file format.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("keyword is empty after normalization")]
    EmptyKeyword,
    #[error("record id {0} already exists")]
    DuplicateId(u64),
    #[error("picture record {0} needs a picture path and a non-empty description")]
    InvalidPictureRecord(u64),
    #[error("store line {line}: {message}")]
    CorruptStore { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Text,
    Picture,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: u64,
    /// Stored as given; indexed under its normalized form.
    pub keyword: String,
    pub title: String,
    pub body: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picture_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Record {
    pub fn text(id: u64, keyword: &str, title: &str, body: &str) -> Self {
        Self {
            id,
            keyword: keyword.into(),
            title: title.into(),
            body: body.into(),
            kind: RecordKind::Text,
            picture_path: None,
            description: None,
        }
    }

    pub fn picture(
        id: u64,
        keyword: &str,
        title: &str,
        picture_path: &str,
        description: &str,
    ) -> Self {
        Self {
            id,
            keyword: keyword.into(),
            title: title.into(),
            body: String::new(),
            kind: RecordKind::Picture,
            picture_path: Some(picture_path.into()),
            description: Some(description.into()),
        }
    }

    fn validate(&self) -> Result<String, RetrievalError> {
        let key = normalize_keyword(&self.keyword)?;
        if self.kind == RecordKind::Picture {
            let has_path = self.picture_path.as_deref().is_some_and(|p| !p.is_empty());
            let has_desc = self
                .description
                .as_deref()
                .is_some_and(|d| !d.trim().is_empty());
            if !(has_path && has_desc) {
                return Err(RetrievalError::InvalidPictureRecord(self.id));
            }
        }
        Ok(key)
    }
}

/// Trims, lowercases and collapses internal whitespace runs to one space.
pub fn normalize_keyword(s: &str) -> Result<String, RetrievalError> {
    let out = s
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    if out.is_empty() {
        Err(RetrievalError::EmptyKeyword)
    } else {
        Ok(out)
    }
}

const QUERY_PREFIX: &str = "SELECT * FROM records WHERE keyword = '";
const QUERY_SUFFIX: &str = "';";

/// Audit query denoting exactly the records [`Store::search`] returns.
pub fn build_query(keyword: &str) -> Result<String, RetrievalError> {
    let key = normalize_keyword(keyword)?;
    Ok(format!(
        "{QUERY_PREFIX}{}{QUERY_SUFFIX}",
        key.replace('\'', "''")
    ))
}

/// Recovers the keyword literal from a string produced by [`build_query`].
pub fn parse_query(query: &str) -> Option<String> {
    let lit = query
        .strip_prefix(QUERY_PREFIX)?
        .strip_suffix(QUERY_SUFFIX)?;
    let mut out = String::with_capacity(lit.len());
    let mut chars = lit.chars();
    while let Some(c) = chars.next() {
        if c == '\'' && chars.next() != Some('\'') {
            return None;
        }
        out.push(c);
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Presentation {
    pub display_text: String,
    pub speakable_text: String,
    pub picture_path: Option<String>,
}

pub fn render_result(record: &Record) -> Presentation {
    match record.kind {
        RecordKind::Text => Presentation {
            display_text: format!("{}\n{}", record.title, record.body),
            speakable_text: format!("{}. {}", record.title, record.body),
            picture_path: None,
        },
        RecordKind::Picture => {
            let description = record.description.clone().unwrap_or_default();
            Presentation {
                display_text: format!(
                    "{}\n[picture: {}]\n{}",
                    record.title,
                    record.picture_path.as_deref().unwrap_or(""),
                    description
                ),
                speakable_text: format!("{}. {}", record.title, description),
                picture_path: record.picture_path.clone(),
            }
        }
    }
}

/// Records in insertion order plus an index from normalized keyword to ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Store {
    records: Vec<Record>,
    positions: HashMap<u64, usize>,
    index: IndexMap<String, Vec<u64>>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&Record> {
        self.positions.get(&id).map(|&i| &self.records[i])
    }

    /// Normalized keywords in first-insertion order.
    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn index_record(&mut self, record: Record) -> Result<(), RetrievalError> {
        if self.positions.contains_key(&record.id) {
            return Err(RetrievalError::DuplicateId(record.id));
        }
        let key = record.validate()?;
        self.positions.insert(record.id, self.records.len());
        self.index.entry(key).or_default().push(record.id);
        self.records.push(record);
        Ok(())
    }

    /// Records whose normalized keyword equals the normalized query, in insertion order.
    pub fn search(&self, keyword: &str) -> Result<Vec<&Record>, RetrievalError> {
        let key = normalize_keyword(keyword)?;
        Ok(self
            .index
            .get(&key)
            .map(|ids| {
                ids.iter()
                    .map(|id| self.get(*id).expect("indexed id is stored"))
                    .collect()
            })
            .unwrap_or_default())
    }

    /// Checks that the index covers every record exactly once under its own keyword.
    pub fn verify(&self) -> Result<(), String> {
        let mut seen = 0;
        for (key, ids) in &self.index {
            for id in ids {
                let rec = self
                    .get(*id)
                    .ok_or_else(|| format!("indexed id {id} missing"))?;
                if normalize_keyword(&rec.keyword).ok().as_deref() != Some(key.as_str()) {
                    return Err(format!("id {id} indexed under the wrong keyword"));
                }
                seen += 1;
            }
        }
        if seen != self.records.len() || self.positions.len() != self.records.len() {
            return Err("index and records disagree".into());
        }
        Ok(())
    }

    /// Parses JSON lines. Blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, RetrievalError> {
        let mut store = Store::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| RetrievalError::CorruptStore {
                line: i + 1,
                message,
            };
            let record: Record = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            store
                .index_record(record)
                .map_err(|e| corrupt(e.to_string()))?;
        }
        store
            .verify()
            .map_err(|message| RetrievalError::CorruptStore { line: 0, message })?;
        Ok(store)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

pub fn load_store(path: impl AsRef<Path>) -> Result<Store, RetrievalError> {
    Store::from_jsonl(&fs::read_to_string(path)?)
}

pub fn save_store(store: &Store, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
    fs::write(path, store.to_jsonl())?;
    Ok(())
}
