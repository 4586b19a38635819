// Two-column CoNLL: `token<TAB>tag` per line, a blank line after each
// sentence, and a `# id: <item-id>` comment heading every sentence.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{load_catalog, repair_bio, CatalogItem, TagScheme};
use crate::error::{Error, Result};

const ID_PREFIX: &str = "# id:";

#[derive(Debug, Clone)]
pub struct ConllImport {
    pub items: Vec<CatalogItem>,
    /// Number of tags rewritten by the stray `I-X → B-X` repair.
    pub repaired_tags: usize,
    pub warnings: Vec<String>,
}

/// Serialises `(id, tokens, tags)` sentences.
pub fn write_conll<'a, I>(sentences: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a [String], &'a [String])>,
{
    let mut out = String::new();
    for (id, tokens, tags) in sentences {
        let _ = writeln!(out, "{ID_PREFIX} {id}");
        for (tok, tag) in tokens.iter().zip(tags) {
            let _ = writeln!(out, "{tok}\t{tag}");
        }
        out.push('\n');
    }
    out
}

pub fn export_conll(items: &[CatalogItem], path: &Path) -> Result<()> {
    let text = write_conll(items.iter().map(|i| (i.id(), i.title_tokens(), i.title_tags())));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `(id, tokens, tags)` of one CoNLL sentence.
pub type Sentence = (String, Vec<String>, Vec<String>);

struct RawSentence {
    id: Option<String>,
    line: usize,
    tokens: Vec<String>,
    tags: Vec<String>,
}

/// Parses CoNLL text into `(id, tokens, tags)` without tag validation.
/// Sentences lacking an id header are named `sentence-<n>` (1-based).
pub fn read_conll(text: &str, origin: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut cur: Option<RawSentence> = None;
    let flush = |cur: &mut Option<RawSentence>, out: &mut Vec<Sentence>| -> Result<()> {
        if let Some(s) = cur.take() {
            if s.tokens.is_empty() {
                return Err(Error::Data(format!("{origin}:{}: sentence without tokens", s.line)));
            }
            let id = s.id.unwrap_or_else(|| format!("sentence-{}", out.len() + 1));
            out.push((id, s.tokens, s.tags));
        }
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut cur, &mut out)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix(ID_PREFIX) {
            flush(&mut cur, &mut out)?;
            cur = Some(RawSentence {
                id: Some(rest.trim().to_string()),
                line: lineno,
                tokens: Vec::new(),
                tags: Vec::new(),
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Data(format!(
                "{origin}:{lineno}: expected `token<TAB>tag`, got {line:?}"
            )));
        }
        let s = cur.get_or_insert_with(|| RawSentence {
            id: None,
            line: lineno,
            tokens: Vec::new(),
            tags: Vec::new(),
        });
        s.tokens.push(fields[0].to_string());
        s.tags.push(fields[1].to_string());
    }
    flush(&mut cur, &mut out)?;
    Ok(out)
}

/// Reads a CoNLL file, repairing stray `I-X` tags, and joins descriptions by
/// item id from an optional JSON-lines catalog. Sentences whose id has no
/// description get an empty one and a warning.
pub fn import_conll(path: &Path, descriptions: Option<&Path>, scheme: &TagScheme) -> Result<ConllImport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sentences = read_conll(&text, &path.display().to_string())?;
    let desc_by_id: Option<HashMap<String, String>> = match descriptions {
        Some(p) => Some(
            load_catalog(p, scheme)?
                .into_iter()
                .map(|i| (i.id.clone(), i.description))
                .collect(),
        ),
        None => None,
    };
    let mut warnings = Vec::new();
    let mut repaired_tags = 0;
    let mut items = Vec::with_capacity(sentences.len());
    for (id, tokens, mut tags) in sentences {
        for tag in &tags {
            scheme
                .id_of(tag)
                .map_err(|_| Error::Data(format!("{}: sentence {id:?}: unknown tag {tag:?}", path.display())))?;
        }
        let fixed = repair_bio(&mut tags)?;
        if fixed > 0 {
            warnings.push(format!("sentence {id:?}: repaired {fixed} stray I- tag(s)"));
        }
        repaired_tags += fixed;
        let description = match &desc_by_id {
            Some(map) => match map.get(&id) {
                Some(d) => d.clone(),
                None => {
                    warnings.push(format!("sentence {id:?}: no description with this id"));
                    String::new()
                }
            },
            None => String::new(),
        };
        items.push(CatalogItem::new(id, tokens, tags, description, scheme)?);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ConllImport {
        items,
        repaired_tags,
        warnings,
    })
}
