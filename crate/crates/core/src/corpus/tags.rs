use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One BIO label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        match s.split_once('-') {
            Some(("B", ty)) if !ty.is_empty() => Ok(Tag::Begin(ty.to_string())),
            Some(("I", ty)) if !ty.is_empty() => Ok(Tag::Inside(ty.to_string())),
            _ => Err(Error::Data(format!("unknown tag {s:?}"))),
        }
    }

    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

/// `I-X` may only follow `B-X` or `I-X`.
pub fn is_valid_bio<S: AsRef<str>>(tags: &[S]) -> bool {
    let mut prev: Option<Tag> = None;
    for t in tags {
        let Ok(tag) = Tag::parse(t.as_ref()) else {
            return false;
        };
        if let Tag::Inside(ty) = &tag {
            if prev.as_ref().and_then(Tag::entity_type) != Some(ty.as_str()) {
                return false;
            }
        }
        prev = Some(tag);
    }
    true
}

/// Rewrites every stray `I-X` (not continuing an `X` entity) to `B-X`.
/// Returns the number of tags changed.
pub fn repair_bio(tags: &mut [String]) -> Result<usize> {
    let mut prev_type: Option<String> = None;
    let mut repaired = 0;
    for t in tags.iter_mut() {
        let tag = Tag::parse(t)?;
        let fixed = match tag {
            Tag::Inside(ty) if prev_type.as_deref() != Some(ty.as_str()) => {
                repaired += 1;
                Tag::Begin(ty)
            }
            other => other,
        };
        prev_type = fixed.entity_type().map(str::to_string);
        *t = fixed.to_string();
    }
    Ok(repaired)
}

/// Entity types in use and the derived tag ids: `O = 0`, then `B-X`, `I-X`
/// per type in declaration order. The pad tag takes the next id after those.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagScheme {
    entity_types: Vec<String>,
}

pub const PAD_TAG: &str = "PAD";

impl Default for TagScheme {
    fn default() -> Self {
        Self::new(["ITEM", "BRAND", "ATTR"]).expect("valid default")
    }
}

impl TagScheme {
    pub fn new<I, S>(types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entity_types: Vec<String> = types.into_iter().map(Into::into).collect();
        if entity_types.is_empty() {
            return Err(Error::Data("tag scheme needs at least one entity type".into()));
        }
        for (i, t) in entity_types.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) || t == PAD_TAG {
                return Err(Error::Data(format!("invalid entity type {t:?}")));
            }
            if entity_types[..i].contains(t) {
                return Err(Error::Data(format!("duplicate entity type {t:?}")));
            }
        }
        Ok(Self { entity_types })
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    /// Number of real (scored) tags, excluding PAD.
    pub fn num_tags(&self) -> usize {
        1 + 2 * self.entity_types.len()
    }

    pub fn pad_id(&self) -> usize {
        self.num_tags()
    }

    pub fn id_of(&self, tag: &str) -> Result<usize> {
        let parsed = Tag::parse(tag)?;
        let Some(ty) = parsed.entity_type() else {
            return Ok(0);
        };
        let pos = self
            .entity_types
            .iter()
            .position(|t| t == ty)
            .ok_or_else(|| Error::Data(format!("unknown tag {tag:?}")))?;
        Ok(match parsed {
            Tag::Begin(_) => 1 + 2 * pos,
            _ => 2 + 2 * pos,
        })
    }

    pub fn name_of(&self, id: usize) -> Result<String> {
        if id == 0 {
            return Ok("O".into());
        }
        if id == self.pad_id() {
            return Ok(PAD_TAG.into());
        }
        let ty = self
            .entity_types
            .get((id - 1) / 2)
            .ok_or_else(|| Error::Data(format!("tag id {id} out of range")))?;
        Ok(if id % 2 == 1 {
            format!("B-{ty}")
        } else {
            format!("I-{ty}")
        })
    }

    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter().map(|t| self.id_of(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.name_of(i)).collect()
    }
}
