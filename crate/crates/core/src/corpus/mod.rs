//! Catalog items, tokenization, vocabulary, file formats, synthetic data and
//! the seeded holdout split.

mod conll;
mod split;
pub mod synthetic;
mod tags;
mod tokenize;
mod vocab;

pub use conll::{export_conll, import_conll, read_conll, write_conll, ConllImport, Sentence};
pub use split::{holdout_size, split_holdout};
pub use synthetic::generate_synthetic;
pub use tags::{is_valid_bio, repair_bio, Tag, TagScheme, PAD_TAG};
pub use tokenize::{normalize_token, tokenize};
pub use vocab::{Vocabulary, PAD_TOKEN, UNK_ID, UNK_TOKEN};

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One retail item: a tagged title plus its free-text description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CatalogItem {
    id: String,
    title_tokens: Vec<String>,
    title_tags: Vec<String>,
    description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    id: String,
    title_tokens: Vec<String>,
    title_tags: Vec<String>,
    description: String,
}

impl CatalogItem {
    /// Validates token/tag alignment, tag names against `scheme` and BIO
    /// well-formedness.
    pub fn new(
        id: impl Into<String>,
        title_tokens: Vec<String>,
        title_tags: Vec<String>,
        description: impl Into<String>,
        scheme: &TagScheme,
    ) -> Result<Self> {
        let id = id.into();
        if title_tokens.is_empty() {
            return Err(Error::Data(format!("item {id:?} has an empty title")));
        }
        if title_tokens.len() != title_tags.len() {
            return Err(Error::Data(format!(
                "item {id:?}: {} title tokens but {} tags",
                title_tokens.len(),
                title_tags.len()
            )));
        }
        if let Some(t) = title_tokens
            .iter()
            .find(|t| t.is_empty() || t.contains(char::is_whitespace))
        {
            return Err(Error::Data(format!("item {id:?}: invalid token {t:?}")));
        }
        for tag in &title_tags {
            scheme
                .id_of(tag)
                .map_err(|_| Error::Data(format!("item {id:?}: unknown tag {tag:?}")))?;
        }
        if !is_valid_bio(&title_tags) {
            return Err(Error::Data(format!("item {id:?}: tags are not valid BIO")));
        }
        Ok(Self {
            id,
            title_tokens,
            title_tags,
            description: description.into(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn title_tokens(&self) -> &[String] {
        &self.title_tokens
    }

    pub fn title_tags(&self) -> &[String] {
        &self.title_tags
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn without_description(&self) -> Self {
        Self {
            description: String::new(),
            ..self.clone()
        }
    }

    /// Tokens of the first span tagged with entity `ty`, if any.
    pub fn entity_tokens(&self, ty: &str) -> Option<&[String]> {
        let start = self.title_tags.iter().position(|t| *t == format!("B-{ty}"))?;
        let inside = format!("I-{ty}");
        let len = 1 + self.title_tags[start + 1..]
            .iter()
            .take_while(|t| **t == inside)
            .count();
        Some(&self.title_tokens[start..start + len])
    }
}

/// Hex SHA-256 of raw file contents, used to fingerprint input data.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Writes one JSON object per line: `{"id", "title_tokens", "title_tags", "description"}`.
pub fn save_catalog(items: &[CatalogItem], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("catalog items always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_catalog(path: &Path, scheme: &TagScheme) -> Result<Vec<CatalogItem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawItem = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{lineno}: malformed catalog line: {e}", path.display())))?;
        let item = CatalogItem::new(raw.id, raw.title_tokens, raw.title_tags, raw.description, scheme)
            .map_err(|e| Error::Data(format!("{}:{lineno}: {e}", path.display())))?;
        if !seen.insert(item.id.clone()) {
            return Err(Error::Data(format!(
                "{}:{lineno}: duplicate item id {:?}",
                path.display(),
                item.id
            )));
        }
        items.push(item);
    }
    Ok(items)
}
