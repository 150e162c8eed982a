//! Entity annotation over overlapping token windows.
//!
//! Long texts are cut into windows of `window_tokens` tokens where
//! consecutive windows share `overlap_tokens` tokens. A pluggable
//! [`EntityLinker`] annotates each window; mentions are rebased onto the full
//! text and merged. Offsets are counted in Unicode scalar values (chars), not
//! bytes, so annotation files interoperate with tools that index strings by
//! code point.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Analyzer, Token};

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid window config: {0}")]
    InvalidWindow(String),
    #[error("invalid linker config: {0}")]
    InvalidConfig(String),
    #[error("linker failed on window chars {start}..{end}: {msg}")]
    Window { start: usize, end: usize, msg: String },
}

/// A linked mention. `char_start..char_end` index the source text by char.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub mention: String,
    #[serde(rename = "start")]
    pub char_start: usize,
    #[serde(rename = "end")]
    pub char_end: usize,
    #[serde(rename = "entity")]
    pub entity_name: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_tokens: 128,
            overlap_tokens: 42,
        }
    }
}

impl WindowConfig {
    pub fn new(window_tokens: usize, overlap_tokens: usize) -> Result<Self, LinkError> {
        let cfg = WindowConfig {
            window_tokens,
            overlap_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if self.window_tokens == 0 {
            return Err(LinkError::InvalidWindow("window_tokens must be > 0".into()));
        }
        if self.overlap_tokens >= self.window_tokens {
            return Err(LinkError::InvalidWindow(format!(
                "overlap_tokens ({}) must be smaller than window_tokens ({})",
                self.overlap_tokens, self.window_tokens
            )));
        }
        Ok(())
    }

    /// Distance between consecutive window starts.
    pub fn advance(&self) -> usize {
        self.window_tokens - self.overlap_tokens
    }
}

/// Settings handed to the linker. Neural linkers read all three; the
/// gazetteer only uses `threshold` as a minimum prior score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkerConfig {
    pub threshold: f64,
    pub num_cand_mentions: usize,
    pub num_cand_entities: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            threshold: 4.5,
            num_cand_mentions: 10,
            num_cand_entities: 10,
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.num_cand_mentions == 0 || self.num_cand_entities == 0 {
            return Err(LinkError::InvalidConfig(
                "candidate counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Token-index windows over a text of `n_tokens` tokens.
///
/// Windows start at multiples of the advance and stop once one reaches the
/// end, so only the last window can be shorter than `window_tokens`.
pub fn token_windows(n_tokens: usize, cfg: &WindowConfig) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    if n_tokens == 0 {
        return out;
    }
    let advance = cfg.advance().max(1);
    let mut start = 0;
    loop {
        let end = (start + cfg.window_tokens).min(n_tokens);
        out.push(start..end);
        if end == n_tokens {
            break;
        }
        start += advance;
    }
    out
}

/// Char spans of the windows over `text`. A text without tokens has no
/// windows.
pub fn windows(text: &str, analyzer: &Analyzer, cfg: &WindowConfig) -> Vec<(usize, usize)> {
    let spans = analyzer.analyze_with_spans(text);
    let offsets = CharOffsets::new(text);
    token_windows(spans.len(), cfg)
        .into_iter()
        .map(|r| {
            (
                offsets.char_of(spans[r.start].1.start),
                offsets.char_of(spans[r.end - 1].1.end),
            )
        })
        .collect()
}

/// Byte offset <-> char offset conversion for one string.
pub(crate) struct CharOffsets {
    // byte offset of every char boundary, plus the total length
    bytes: Vec<usize>,
}

impl CharOffsets {
    pub(crate) fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        CharOffsets { bytes }
    }

    pub(crate) fn char_of(&self, byte: usize) -> usize {
        self.bytes
            .binary_search(&byte)
            .expect("byte offset on a char boundary")
    }

    pub(crate) fn byte_of(&self, ch: usize) -> Option<usize> {
        self.bytes.get(ch).copied()
    }
}

/// Slices `text` by char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    let offsets = CharOffsets::new(text);
    let (s, e) = (offsets.byte_of(start)?, offsets.byte_of(end)?);
    text.get(s..e)
}

/// Annotates a single window of text. Offsets in the result are char
/// offsets relative to `window_text`.
pub trait EntityLinker: Sync {
    fn link_window(
        &self,
        window_text: &str,
        cfg: &LinkerConfig,
    ) -> Result<Vec<EntityAnnotation>, String>;
}

/// All distinct mentions in `text`, rebased onto the full text and sorted by
/// position. Mentions found in more than one window with an identical span
/// and entity are kept once.
pub fn link_spans(
    text: &str,
    linker: &dyn EntityLinker,
    analyzer: &Analyzer,
    wcfg: &WindowConfig,
    lcfg: &LinkerConfig,
) -> Result<Vec<EntityAnnotation>, LinkError> {
    wcfg.validate()?;
    let offsets = CharOffsets::new(text);
    let mut found = Vec::new();
    for (start, end) in windows(text, analyzer, wcfg) {
        let window_text = &text[offsets.byte_of(start).unwrap()..offsets.byte_of(end).unwrap()];
        let window_len = end - start;
        let local = linker
            .link_window(window_text, lcfg)
            .map_err(|msg| LinkError::Window { start, end, msg })?;
        for mut ann in local {
            if ann.char_end <= ann.char_start || ann.char_end > window_len {
                return Err(LinkError::Window {
                    start,
                    end,
                    msg: format!(
                        "annotation span {}..{} outside window of {} chars",
                        ann.char_start, ann.char_end, window_len
                    ),
                });
            }
            ann.char_start += start;
            ann.char_end += start;
            found.push(ann);
        }
    }
    Ok(merge_mentions(found))
}

/// Sorts by position and drops repeated (span, entity) pairs, keeping the
/// highest score seen.
pub fn merge_mentions(mut anns: Vec<EntityAnnotation>) -> Vec<EntityAnnotation> {
    anns.sort_by(|a, b| {
        (a.char_start, a.char_end, &a.entity_name)
            .cmp(&(b.char_start, b.char_end, &b.entity_name))
            .then(b.score.total_cmp(&a.score))
    });
    anns.dedup_by(|later, kept| {
        later.char_start == kept.char_start
            && later.char_end == kept.char_end
            && later.entity_name == kept.entity_name
    });
    anns
}

/// One annotation per entity, in order of first occurrence.
pub fn dedup_entities(anns: &[EntityAnnotation]) -> Vec<EntityAnnotation> {
    let mut seen = std::collections::HashSet::new();
    let mut sorted: Vec<&EntityAnnotation> = anns.iter().collect();
    sorted.sort_by_key(|a| (a.char_start, a.char_end));
    sorted
        .into_iter()
        .filter(|a| seen.insert(a.entity_name.as_str()))
        .cloned()
        .collect()
}

/// Number of distinct, non-overlapping mention spans per entity, keyed in
/// order of first occurrence.
pub fn mention_counts(anns: &[EntityAnnotation]) -> IndexMap<String, usize> {
    let mut sorted: Vec<&EntityAnnotation> = anns.iter().collect();
    sorted.sort_by_key(|a| (a.char_start, a.char_end));
    let mut last_end: HashMap<&str, usize> = HashMap::new();
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for a in sorted {
        match last_end.get(a.entity_name.as_str()) {
            Some(&end) if a.char_start < end => {
                // overlaps the previous counted mention of this entity
                let e = last_end.get_mut(a.entity_name.as_str()).unwrap();
                *e = (*e).max(a.char_end);
            }
            _ => {
                last_end.insert(&a.entity_name, a.char_end);
                *counts.entry(a.entity_name.clone()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// The deduplicated entity set of `text`.
pub fn link_text(
    text: &str,
    linker: &dyn EntityLinker,
    analyzer: &Analyzer,
    wcfg: &WindowConfig,
    lcfg: &LinkerConfig,
) -> Result<Vec<EntityAnnotation>, LinkError> {
    Ok(dedup_entities(&link_spans(text, linker, analyzer, wcfg, lcfg)?))
}

/// Mention counts per entity for `text`.
pub fn link_mentions(
    text: &str,
    linker: &dyn EntityLinker,
    analyzer: &Analyzer,
    wcfg: &WindowConfig,
    lcfg: &LinkerConfig,
) -> Result<IndexMap<String, usize>, LinkError> {
    Ok(mention_counts(&link_spans(text, linker, analyzer, wcfg, lcfg)?))
}

/// Links every text (in parallel) and keeps those with at least one
/// mention, in input order.
pub fn link_collection(
    texts: &[crate::corpus::Passage],
    linker: &dyn EntityLinker,
    analyzer: &Analyzer,
    wcfg: &WindowConfig,
    lcfg: &LinkerConfig,
) -> Result<IndexMap<String, Vec<EntityAnnotation>>, LinkError> {
    use rayon::prelude::*;
    let linked: Vec<Vec<EntityAnnotation>> = texts
        .par_iter()
        .map(|p| link_spans(&p.text, linker, analyzer, wcfg, lcfg))
        .collect::<Result<_, _>>()?;
    Ok(texts
        .iter()
        .zip(linked)
        .filter(|(_, anns)| !anns.is_empty())
        .map(|(p, anns)| (p.id.clone(), anns))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
struct AliasEntry {
    entity_name: String,
    score: f64,
}

/// Dictionary linker: analyzed alias token sequences mapped to entities.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    analyzer: Analyzer,
    aliases: HashMap<Vec<Token>, AliasEntry>,
    max_alias_len: usize,
}

impl Gazetteer {
    pub fn new(analyzer: Analyzer) -> Self {
        Gazetteer {
            analyzer,
            aliases: HashMap::new(),
            max_alias_len: 0,
        }
    }

    /// Adds an alias. Aliases that analyze to nothing are ignored and `false`
    /// is returned. A repeated alias keeps the higher-scoring entity.
    pub fn insert(&mut self, alias: &str, entity_name: &str, score: f64) -> bool {
        let key = self.analyzer.analyze(alias);
        if key.is_empty() {
            return false;
        }
        self.max_alias_len = self.max_alias_len.max(key.len());
        let entry = AliasEntry {
            entity_name: entity_name.to_string(),
            score,
        };
        match self.aliases.get_mut(&key) {
            Some(existing) if existing.score >= score => {}
            Some(existing) => *existing = entry,
            None => {
                self.aliases.insert(key, entry);
            }
        }
        true
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    /// Distinct entity names in the dictionary.
    pub fn entity_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .aliases
            .values()
            .map(|e| e.entity_name.as_str())
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// Loads `alias<TAB>entity_name<TAB>score` lines.
    pub fn load(path: impl AsRef<Path>, analyzer: Analyzer) -> Result<Self, LinkError> {
        let path = path.as_ref();
        let io_err = |source| LinkError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::open(path).map_err(io_err)?;
        let mut gaz = Gazetteer::new(analyzer);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err)?;
            let malformed = |msg: String| LinkError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(malformed(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            if fields[1].is_empty() {
                return Err(malformed("empty entity name".into()));
            }
            let score: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| malformed(format!("score {:?} is not a number", fields[2])))?;
            if !gaz.insert(fields[0], fields[1], score) {
                return Err(malformed(format!("alias {:?} has no tokens", fields[0])));
            }
        }
        Ok(gaz)
    }

    /// Greedy left-to-right longest match over analyzed tokens. Aliases
    /// scoring below `cfg.threshold` are not candidates.
    pub fn link(&self, text: &str, cfg: &LinkerConfig) -> Vec<EntityAnnotation> {
        let spans = self.analyzer.analyze_with_spans(text);
        let offsets = CharOffsets::new(text);
        let tokens: Vec<Token> = spans.iter().map(|(t, _)| t.clone()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_alias_len.min(tokens.len() - i))
                .rev()
                .find_map(|len| {
                    self.aliases
                        .get(&tokens[i..i + len])
                        .filter(|e| e.score >= cfg.threshold)
                        .map(|e| (len, e))
                });
            match longest {
                Some((len, entry)) => {
                    let bytes = spans[i].1.start..spans[i + len - 1].1.end;
                    out.push(EntityAnnotation {
                        mention: text[bytes.clone()].to_string(),
                        char_start: offsets.char_of(bytes.start),
                        char_end: offsets.char_of(bytes.end),
                        entity_name: entry.entity_name.clone(),
                        score: entry.score,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

impl EntityLinker for Gazetteer {
    fn link_window(
        &self,
        window_text: &str,
        cfg: &LinkerConfig,
    ) -> Result<Vec<EntityAnnotation>, String> {
        Ok(self.link(window_text, cfg))
    }
}

/// Free-form provenance written as the first line of an annotation file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linker: Option<LinkerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLine {
    header: AnnotationHeader,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationLine {
    id: String,
    entities: Vec<EntityAnnotation>,
}

/// Contents of an annotation JSONL file, grouped by text id in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub header: Option<AnnotationHeader>,
    pub by_id: IndexMap<String, Vec<EntityAnnotation>>,
}

impl AnnotationSet {
    pub fn get(&self, id: &str) -> Option<&[EntityAnnotation]> {
        self.by_id.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Every entity name appearing in the set, first occurrence order.
    pub fn entity_names(&self) -> Vec<&str> {
        let mut seen = indexmap::IndexSet::new();
        for anns in self.by_id.values() {
            for a in anns {
                seen.insert(a.entity_name.as_str());
            }
        }
        seen.into_iter().collect()
    }

    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        if let Some(header) = &self.header {
            serde_json::to_writer(&mut out, &HeaderLine {
                header: header.clone(),
            })?;
            out.write_all(b"\n")?;
        }
        for (id, entities) in &self.by_id {
            serde_json::to_writer(&mut out, &AnnotationLine {
                id: id.clone(),
                entities: entities.clone(),
            })?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet, LinkError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LinkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations(path, BufReader::new(file))
}

/// Parses annotation JSONL. An optional `{"header": {...}}` object may
/// precede the records. Blank lines are skipped.
pub fn parse_annotations(path: &Path, reader: impl BufRead) -> Result<AnnotationSet, LinkError> {
    let mut set = AnnotationSet::default();
    let mut first_record = true;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| LinkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let malformed = |msg: String| LinkError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        if first_record {
            first_record = false;
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                set.header = Some(h.header);
                continue;
            }
        }
        let record: AnnotationLine =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        for a in &record.entities {
            if a.char_end <= a.char_start {
                return Err(malformed(format!(
                    "entity {:?}: end {} must exceed start {}",
                    a.entity_name, a.char_end, a.char_start
                )));
            }
            if a.entity_name.is_empty() {
                return Err(malformed("empty entity name".into()));
            }
        }
        set.by_id
            .entry(record.id)
            .or_default()
            .extend(record.entities);
    }
    Ok(set)
}
