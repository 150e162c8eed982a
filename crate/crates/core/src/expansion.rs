//! Appending linked entity names to queries and passages.
//!
//! Entity terms go at the end of the text, space-separated, in order of
//! first occurrence. The hashed form replaces each name with the lowercase
//! hex MD5 digest of its UTF-8 bytes, which the analyzer keeps as a single
//! token.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::linker::{mention_counts, AnnotationSet};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExpansionError {
    #[error("entity name must not be empty")]
    EmptyEntityName,
    #[error("unknown expansion strategy {0:?}")]
    UnknownStrategy(String),
    #[error("constant expansion factor must be >= 1")]
    ZeroFactor,
    #[error("entities {0:?} and {1:?} hash to the same digest")]
    HashCollision(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ExpansionStrategy {
    None,
    /// One copy of each entity name.
    #[default]
    ExplicitSingle,
    /// One MD5 digest per entity.
    HashedSingle,
    /// `c` copies of each entity name.
    ExplicitConstant(u32),
    /// One copy per counted mention.
    ExplicitWeighted,
}

impl fmt::Display for ExpansionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpansionStrategy::None => f.write_str("none"),
            ExpansionStrategy::ExplicitSingle => f.write_str("explicit"),
            ExpansionStrategy::HashedSingle => f.write_str("hashed"),
            ExpansionStrategy::ExplicitConstant(c) => write!(f, "constant:{c}"),
            ExpansionStrategy::ExplicitWeighted => f.write_str("weighted"),
        }
    }
}

impl FromStr for ExpansionStrategy {
    type Err = ExpansionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ExpansionStrategy::None),
            "explicit" => Ok(ExpansionStrategy::ExplicitSingle),
            "hashed" => Ok(ExpansionStrategy::HashedSingle),
            "weighted" => Ok(ExpansionStrategy::ExplicitWeighted),
            _ => {
                let c = s
                    .strip_prefix("constant:")
                    .and_then(|c| c.parse::<u32>().ok())
                    .ok_or_else(|| ExpansionError::UnknownStrategy(s.to_string()))?;
                if c == 0 {
                    return Err(ExpansionError::ZeroFactor);
                }
                Ok(ExpansionStrategy::ExplicitConstant(c))
            }
        }
    }
}

impl TryFrom<String> for ExpansionStrategy {
    type Error = ExpansionError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ExpansionStrategy> for String {
    fn from(s: ExpansionStrategy) -> Self {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedText {
    pub original: String,
    pub appended_terms: Vec<String>,
    pub full_text: String,
}

/// Lowercase hex MD5 of the UTF-8 bytes of `entity_name`.
pub fn hash_entity(entity_name: &str) -> Result<String, ExpansionError> {
    if entity_name.is_empty() {
        return Err(ExpansionError::EmptyEntityName);
    }
    let digest = Md5::digest(entity_name.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Fails if two distinct names share a digest.
pub fn check_hash_collisions<'a>(
    names: impl IntoIterator<Item = &'a str>,
) -> Result<(), ExpansionError> {
    let mut by_digest: HashMap<String, &str> = HashMap::new();
    for name in names {
        let digest = hash_entity(name)?;
        match by_digest.get(&digest) {
            Some(&other) if other != name => {
                return Err(ExpansionError::HashCollision(other.into(), name.into()))
            }
            _ => {
                by_digest.insert(digest, name);
            }
        }
    }
    Ok(())
}

/// Expands `text` with the entities in `entity_counts` (in map order).
/// Counts are mention counts and only matter for the weighted strategy.
pub fn expand(
    text: &str,
    entity_counts: &IndexMap<String, usize>,
    strategy: ExpansionStrategy,
) -> Result<ExpandedText, ExpansionError> {
    let mut appended = Vec::new();
    for (name, &count) in entity_counts {
        if name.is_empty() {
            return Err(ExpansionError::EmptyEntityName);
        }
        let copies = match strategy {
            ExpansionStrategy::None => 0,
            ExpansionStrategy::ExplicitSingle | ExpansionStrategy::HashedSingle => 1,
            ExpansionStrategy::ExplicitConstant(c) => c as usize,
            ExpansionStrategy::ExplicitWeighted => count,
        };
        if copies == 0 {
            continue;
        }
        let term = match strategy {
            ExpansionStrategy::HashedSingle => hash_entity(name)?,
            _ => name.clone(),
        };
        appended.extend(std::iter::repeat_n(term, copies));
    }
    let full_text = if appended.is_empty() {
        text.to_string()
    } else {
        format!("{} {}", text, appended.join(" "))
    };
    Ok(ExpandedText {
        original: text.to_string(),
        appended_terms: appended,
        full_text,
    })
}

/// Lazily expands a passage stream. Passages without annotations pass
/// through untouched.
///
/// Annotation ids that never matched a passage are reported through
/// [`ExpandCollection::unmatched_ids`] once the stream is drained, and
/// logged as warnings.
pub struct ExpandCollection<'a, I> {
    passages: I,
    annotations: &'a AnnotationSet,
    strategy: ExpansionStrategy,
    seen: HashSet<&'a str>,
    finished: bool,
}

impl<'a, I> ExpandCollection<'a, I> {
    pub fn unmatched_ids(&self) -> Vec<&'a str> {
        self.annotations
            .by_id
            .keys()
            .map(String::as_str)
            .filter(|id| !self.seen.contains(id))
            .collect()
    }
}

impl<'a, I, E> Iterator for ExpandCollection<'a, I>
where
    I: Iterator<Item = Result<Passage, E>>,
    E: From<ExpansionError>,
{
    type Item = Result<Passage, E>;

    fn next(&mut self) -> Option<Self::Item> {
        let passage = match self.passages.next() {
            Some(Ok(p)) => p,
            Some(Err(e)) => return Some(Err(e)),
            None => {
                if !self.finished {
                    self.finished = true;
                    for id in self.unmatched_ids() {
                        log::warn!("annotations for unknown passage id {id:?} skipped");
                    }
                }
                return None;
            }
        };
        let Some((key, anns)) = self.annotations.by_id.get_key_value(passage.id.as_str()) else {
            return Some(Ok(passage));
        };
        self.seen.insert(key.as_str());
        let counts = mention_counts(anns);
        Some(
            expand(&passage.text, &counts, self.strategy)
                .map(|e| Passage {
                    id: passage.id,
                    text: e.full_text,
                })
                .map_err(E::from),
        )
    }
}

pub fn expand_collection<I, E>(
    passages: I,
    annotations: &AnnotationSet,
    strategy: ExpansionStrategy,
) -> ExpandCollection<'_, I::IntoIter>
where
    I: IntoIterator<Item = Result<Passage, E>>,
{
    ExpandCollection {
        passages: passages.into_iter(),
        annotations,
        strategy,
        seen: HashSet::new(),
        finished: false,
    }
}
