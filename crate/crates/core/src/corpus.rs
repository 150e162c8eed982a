//! Collection, query and qrels ingestion plus the text-analysis chain.
//!
//! Collections and query sets are `id<TAB>text` TSV files. Qrels are the
//! usual TREC four-column format (`qid iter pid grade`). The [`Analyzer`] is
//! shared by indexing, gazetteer matching and window counting so that every
//! component agrees on what a token is.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Lines, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
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
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        CorpusError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }
}

/// A passage of the collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// A query of a query set. Same shape as a passage, kept distinct so the two
/// cannot be mixed up at call sites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl From<Query> for Passage {
    fn from(q: Query) -> Self {
        Passage {
            id: q.id,
            text: q.text,
        }
    }
}

impl From<Passage> for Query {
    fn from(p: Passage) -> Self {
        Query {
            id: p.id,
            text: p.text,
        }
    }
}

/// Streaming reader over an `id<TAB>text` file.
///
/// Yields passages in file order and fails on the first malformed line or
/// repeated id.
pub struct CollectionReader<R> {
    path: PathBuf,
    lines: Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
    done: bool,
}

impl<R: BufRead> CollectionReader<R> {
    pub fn new(path: impl Into<PathBuf>, reader: R) -> Self {
        CollectionReader {
            path: path.into(),
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
            done: false,
        }
    }

    fn parse(&mut self, line: &str) -> Result<Passage, CorpusError> {
        let mut fields = line.split('\t');
        let (id, text) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(text), None) => (id, text),
            _ => {
                let n = line.split('\t').count();
                return Err(CorpusError::malformed(
                    &self.path,
                    self.line_no,
                    format!("expected 2 tab-separated fields, found {n}"),
                ));
            }
        };
        if id.is_empty() {
            return Err(CorpusError::malformed(&self.path, self.line_no, "empty id"));
        }
        if !self.seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId {
                path: self.path.clone(),
                line: self.line_no,
                id: id.to_string(),
            });
        }
        Ok(Passage {
            id: id.to_string(),
            text: text.to_string(),
        })
    }
}

impl<R: BufRead> Iterator for CollectionReader<R> {
    type Item = Result<Passage, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let line = match self.lines.next()? {
            Ok(line) => line,
            Err(e) => {
                self.done = true;
                return Some(Err(CorpusError::io(&self.path, e)));
            }
        };
        self.line_no += 1;
        let line = line.strip_suffix('\r').unwrap_or(&line).to_string();
        let item = self.parse(&line);
        if item.is_err() {
            self.done = true;
        }
        Some(item)
    }
}

/// Opens a TSV collection for streaming.
pub fn load_collection(
    path: impl AsRef<Path>,
) -> Result<CollectionReader<BufReader<File>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(CollectionReader::new(path, BufReader::new(file)))
}

/// Loads a whole TSV collection into memory.
pub fn read_collection(path: impl AsRef<Path>) -> Result<Vec<Passage>, CorpusError> {
    load_collection(path)?.collect()
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, CorpusError> {
    load_collection(path)?
        .map(|p| p.map(Query::from))
        .collect()
}

/// Writes passages (or queries converted into passages) as `id<TAB>text`.
pub fn write_collection<'a, W, I>(mut out: W, passages: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Passage>,
{
    for p in passages {
        writeln!(out, "{}\t{}", p.id, p.text)?;
    }
    out.flush()
}

/// Relevance judgments: qid -> pid -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment. A repeated pair keeps the larger grade.
    pub fn insert(&mut self, qid: impl Into<String>, pid: impl Into<String>, grade: u32) {
        let slot = self
            .judgments
            .entry(qid.into())
            .or_default()
            .entry(pid.into())
            .or_insert(grade);
        *slot = (*slot).max(grade);
    }

    pub fn grade(&self, qid: &str, pid: &str) -> Option<u32> {
        self.judgments.get(qid)?.get(pid).copied()
    }

    pub fn is_relevant(&self, qid: &str, pid: &str) -> bool {
        self.grade(qid, pid).is_some_and(|g| g > 0)
    }

    /// Passages judged relevant (grade > 0) for `qid`, in ascending pid order.
    pub fn relevant(&self, qid: &str) -> impl Iterator<Item = &str> {
        self.judgments
            .get(qid)
            .into_iter()
            .flat_map(|m| m.iter().filter(|(_, &g)| g > 0).map(|(p, _)| p.as_str()))
    }

    /// Query ids that have at least one relevant passage.
    pub fn judged_queries(&self) -> impl Iterator<Item = &str> {
        self.judgments
            .iter()
            .filter(|(_, m)| m.values().any(|&g| g > 0))
            .map(|(q, _)| q.as_str())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_qrels(path, BufReader::new(file))
}

pub fn parse_qrels(path: &Path, reader: impl BufRead) -> Result<Qrels, CorpusError> {
    let mut qrels = Qrels::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(CorpusError::malformed(
                path,
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3].parse().map_err(|_| {
            CorpusError::malformed(path, line_no, format!("grade {:?} is not an integer", fields[3]))
        })?;
        // Negative grades occur in some TREC qrels; they are never relevant.
        qrels.insert(fields[0], fields[2], grade.max(0) as u32);
    }
    Ok(qrels)
}

/// An analyzed term. Always non-empty, lowercased and whitespace-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    /// English Porter (Snowball) stemming. Hex digests are never stemmed.
    pub stem: bool,
    /// Strip combining marks after canonical decomposition.
    pub fold_accents: bool,
    /// Terms dropped after normalization.
    pub stopwords: Vec<String>,
}

/// Unicode word segmentation with lowercase folding.
#[derive(Clone)]
pub struct Analyzer {
    config: AnalyzerConfig,
    stopwords: HashSet<String>,
    stemmer: Option<std::sync::Arc<Stemmer>>,
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer").field("config", &self.config).finish()
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer::new(AnalyzerConfig::default())
    }
}

impl PartialEq for Analyzer {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

fn is_hex_digest(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

impl Analyzer {
    pub fn new(config: AnalyzerConfig) -> Self {
        let stopwords = config
            .stopwords
            .iter()
            .map(|w| w.to_lowercase())
            .collect();
        let stemmer = config
            .stem
            .then(|| std::sync::Arc::new(Stemmer::create(Algorithm::English)));
        Analyzer {
            config,
            stopwords,
            stemmer,
        }
    }

    pub fn config(&self) -> &AnalyzerConfig {
        &self.config
    }

    fn normalize(&self, word: &str) -> Option<Token> {
        let mut term: String = if self.config.fold_accents {
            word.nfd()
                .filter(|c| !is_combining_mark(*c))
                .flat_map(char::to_lowercase)
                .collect()
        } else {
            word.to_lowercase()
        };
        term.retain(|c| !c.is_whitespace());
        if term.is_empty() || self.stopwords.contains(&term) {
            return None;
        }
        if let Some(stemmer) = &self.stemmer {
            if !is_hex_digest(&term) {
                term = stemmer.stem(&term).into_owned();
            }
        }
        (!term.is_empty()).then_some(Token(term))
    }

    /// Tokens with the byte range of the source word they came from.
    pub fn analyze_with_spans(&self, text: &str) -> Vec<(Token, Range<usize>)> {
        text.unicode_word_indices()
            .filter_map(|(start, word)| {
                self.normalize(word)
                    .map(|t| (t, start..start + word.len()))
            })
            .collect()
    }

    pub fn analyze(&self, text: &str) -> Vec<Token> {
        text.unicode_words()
            .filter_map(|w| self.normalize(w))
            .collect()
    }
}

/// Analysis with the default configuration.
pub fn analyze(text: &str) -> Vec<Token> {
    Analyzer::default().analyze(text)
}
