//! Inverted index with BM25 top-k retrieval.
//!
//! Scoring is exhaustive term-at-a-time: every posting of every query term
//! is visited and accumulated into a dense per-document score array. The
//! score function is the Lucene variant of BM25,
//!
//! ```text
//! idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(d) = Σ_t idf(t) · tf·(k1 + 1) / (tf + k1·(1 - b + b·dl/avgdl))
//! ```
//!
//! summed once per query token, so a repeated query term counts twice.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Analyzer, AnalyzerConfig, Passage, Query, Token};
use crate::fusion::{Run, RunEntry};

const MAGIC: &[u8; 8] = b"ENTEXPIX";
const FORMAT_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.bin";

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate passage id {0:?}")]
    DuplicateId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: not an index file")]
    BadMagic { path: PathBuf },
    #[error("{path}: index format version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.82, b: 0.68 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), IndexError> {
        if !self.k1.is_finite() || self.k1 < 0.0 {
            return Err(IndexError::InvalidParams(format!("k1 = {} must be >= 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::InvalidParams(format!("b = {} must lie in [0, 1]", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// A retrieved passage. Ranks start at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub pid: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    analyzer: AnalyzerConfig,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    doc_ids: Vec<String>,
    avgdl: f64,
}

/// Builds an index in input order; document ordinals follow the stream.
pub fn build_index<I, E>(passages: I, analyzer: &Analyzer) -> Result<InvertedIndex, E>
where
    I: IntoIterator<Item = Result<Passage, E>>,
    E: From<IndexError>,
{
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::new();
    let mut doc_ids = Vec::new();
    let mut seen = HashSet::new();
    for passage in passages {
        let passage = passage?;
        if !seen.insert(passage.id.clone()) {
            return Err(IndexError::DuplicateId(passage.id).into());
        }
        let doc = doc_ids.len() as u32;
        let tokens = analyzer.analyze(&passage.text);
        let mut tfs: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *tfs.entry(t.as_str().to_string()).or_insert(0) += 1;
        }
        for (term, tf) in tfs {
            postings.entry(term).or_default().push(Posting { doc, tf });
        }
        doc_lengths.push(tokens.len() as u32);
        doc_ids.push(passage.id);
    }
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let avgdl = if doc_lengths.is_empty() {
        0.0
    } else {
        total as f64 / doc_lengths.len() as f64
    };
    Ok(InvertedIndex {
        analyzer: analyzer.config().clone(),
        postings,
        doc_lengths,
        doc_ids,
        avgdl,
    })
}

/// Index over in-memory passages.
pub fn index_passages(passages: &[Passage], analyzer: &Analyzer) -> Result<InvertedIndex, IndexError> {
    build_index(passages.iter().cloned().map(Ok), analyzer)
}

/// BM25 weight of a single (term, document) pair.
#[inline]
fn term_weight(idf: f64, tf: f64, dl: f64, avgdl: f64, params: &Bm25Params) -> f64 {
    let norm = params.k1 * (1.0 - params.b + params.b * dl / avgdl);
    idf * (tf * (params.k1 + 1.0)) / (tf + norm)
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_len(&self, doc: u32) -> u32 {
        self.doc_lengths[doc as usize]
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Analyzer the index was built with; queries must use the same one.
    pub fn analyzer(&self) -> Analyzer {
        Analyzer::new(self.analyzer.clone())
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of one document by direct postings lookup.
    pub fn bm25_score(&self, params: &Bm25Params, query: &[Token], doc: u32) -> f64 {
        let dl = self.doc_len(doc) as f64;
        let mut score = 0.0;
        for term in query {
            let list = self.postings(term.as_str());
            if let Ok(i) = list.binary_search_by_key(&doc, |p| p.doc) {
                score += term_weight(self.idf(term.as_str()), list[i].tf as f64, dl, self.avgdl, params);
            }
        }
        score
    }

    /// Term-at-a-time accumulation over all postings of the query terms.
    fn accumulate(&self, params: &Bm25Params, query: &[Token]) -> Vec<(u32, f64)> {
        let mut acc = vec![0.0f64; self.num_docs()];
        let mut touched = Vec::new();
        for term in query {
            let list = self.postings(term.as_str());
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term.as_str());
            for p in list {
                let slot = &mut acc[p.doc as usize];
                if *slot == 0.0 {
                    touched.push(p.doc);
                }
                *slot += term_weight(idf, p.tf as f64, self.doc_len(p.doc) as f64, self.avgdl, params);
            }
        }
        touched
            .into_iter()
            .map(|d| (d, acc[d as usize]))
            .filter(|&(_, s)| s > 0.0)
            .collect()
    }

    /// Top `k` passages by score, ties broken by ascending passage id.
    pub fn search_tokens(&self, params: &Bm25Params, query: &[Token], k: usize) -> Vec<ScoredHit> {
        let mut hits = self.accumulate(params, query);
        let cmp = |a: &(u32, f64), b: &(u32, f64)| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_id(a.0).cmp(self.doc_id(b.0)))
        };
        if k == 0 {
            return Vec::new();
        }
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        hits.into_iter()
            .enumerate()
            .map(|(i, (doc, score))| ScoredHit {
                pid: self.doc_id(doc).to_string(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    pub fn search(&self, params: &Bm25Params, query: &str, k: usize) -> Vec<ScoredHit> {
        let tokens = self.analyzer().analyze(query);
        self.search_tokens(params, &tokens, k)
    }

    /// Searches every query (in parallel) and collects a run in query order.
    pub fn batch_search(&self, params: &Bm25Params, queries: &[Query], k: usize, tag: &str) -> Run {
        let analyzer = self.analyzer();
        let results: Vec<Vec<ScoredHit>> = queries
            .par_iter()
            .map(|q| self.search_tokens(params, &analyzer.analyze(&q.text), k))
            .collect();
        let mut run = Run::new(tag);
        for (q, hits) in queries.iter().zip(results) {
            run.queries.insert(
                q.id.clone(),
                hits.into_iter()
                    .map(|h| RunEntry { pid: h.pid, score: h.score })
                    .collect(),
            );
        }
        run
    }

    /// Checks the structural invariants. Used after loading from disk.
    pub fn check(&self) -> Result<(), String> {
        let n = self.num_docs();
        if self.doc_lengths.len() != n {
            return Err("doc length table does not match doc count".into());
        }
        for (term, list) in &self.postings {
            if list.is_empty() {
                return Err(format!("empty postings for {term:?}"));
            }
            if list.windows(2).any(|w| w[0].doc >= w[1].doc) {
                return Err(format!("postings for {term:?} not strictly increasing"));
            }
            if list.iter().any(|p| p.doc as usize >= n || p.tf == 0) {
                return Err(format!("bad posting for {term:?}"));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut out: impl Write) -> io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        bincode::serialize_into(&mut out, self).map_err(io::Error::other)?;
        out.flush()
    }

    /// Writes `dir/index.bin`, creating `dir` if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let dir = dir.as_ref();
        let path = dir.join(INDEX_FILE);
        let io_err = |source| IndexError::Io { path: path.clone(), source };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let file = File::create(&path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = dir.as_ref().join(INDEX_FILE);
        let io_err = |source| IndexError::Io { path: path.clone(), source };
        let mut reader = BufReader::new(File::open(&path).map_err(io_err)?);
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(IndexError::BadMagic { path });
        }
        let mut version = [0u8; 4];
        reader.read_exact(&mut version).map_err(io_err)?;
        let found = u32::from_le_bytes(version);
        if found != FORMAT_VERSION {
            return Err(IndexError::Version { path, found, expected: FORMAT_VERSION });
        }
        let index: InvertedIndex = bincode::deserialize_from(reader)
            .map_err(|e| IndexError::Corrupt { path: path.clone(), msg: e.to_string() })?;
        index
            .check()
            .map_err(|msg| IndexError::Corrupt { path: path.clone(), msg })?;
        Ok(index)
    }
}
