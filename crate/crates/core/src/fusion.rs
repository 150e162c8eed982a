//! Runs, TREC run files, Reciprocal Rank Fusion and per-query oracle
//! selection.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
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
    #[error("at least one run is required")]
    NoRuns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub pid: String,
    pub score: f64,
}

/// Ranked passages per query. The rank of an entry is its 1-based position.
///
/// Equality ignores query order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub tag: String,
    pub queries: IndexMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            queries: IndexMap::new(),
        }
    }

    pub fn get(&self, qid: &str) -> Option<&[RunEntry]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Best (smallest) 1-based rank of any relevant passage for `qid`.
    pub fn best_relevant_rank(&self, qid: &str, qrels: &Qrels) -> Option<usize> {
        self.get(qid)?
            .iter()
            .position(|e| qrels.is_relevant(qid, &e.pid))
            .map(|i| i + 1)
    }

    /// Writes `qid Q0 pid rank score tag` lines, ranks renumbered from list
    /// order.
    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for (qid, entries) in &self.queries {
            for (i, e) in entries.iter().enumerate() {
                writeln!(
                    out,
                    "{} Q0 {} {} {} {}",
                    qid,
                    e.pid,
                    i + 1,
                    format_score(e.score),
                    self.tag
                )?;
            }
        }
        out.flush()
    }
}

/// Fixed-point rendering with six significant digits.
pub fn format_score(score: f64) -> String {
    if score == 0.0 || !score.is_finite() {
        return format!("{score:.5}");
    }
    let decimals = |x: f64| (5 - x.abs().log10().floor() as i32).max(0) as usize;
    let d = decimals(score);
    let rounded: f64 = format!("{score:.d$}").parse().unwrap();
    // rounding can carry into a new leading digit (9.999995 -> 10.0000)
    let d = if rounded != 0.0 { decimals(rounded) } else { d };
    format!("{score:.d$}")
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Run, RunError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_run(path, BufReader::new(file))
}

/// Parses a TREC run. Entries are ordered by their rank column (stable on
/// ties). The tag is taken from the first line.
pub fn parse_run(path: &Path, reader: impl BufRead) -> Result<Run, RunError> {
    let mut run = Run::default();
    let mut ranked: IndexMap<String, Vec<(u64, RunEntry)>> = IndexMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let malformed = |msg: String| RunError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(malformed(format!("expected 6 fields, found {}", f.len())));
        }
        let rank: u64 = f[3]
            .parse()
            .map_err(|_| malformed(format!("rank {:?} is not an integer", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| malformed(format!("score {:?} is not a number", f[4])))?;
        if !seen.insert((f[0].to_string(), f[2].to_string())) {
            return Err(malformed(format!("duplicate entry for query {} passage {}", f[0], f[2])));
        }
        if run.tag.is_empty() {
            run.tag = f[5].to_string();
        }
        ranked.entry(f[0].to_string()).or_default().push((
            rank,
            RunEntry {
                pid: f[2].to_string(),
                score,
            },
        ));
    }
    for (qid, mut entries) in ranked {
        entries.sort_by_key(|(rank, _)| *rank);
        run.queries
            .insert(qid, entries.into_iter().map(|(_, e)| e).collect());
    }
    Ok(run)
}

pub fn write_run(run: &Run, path: impl AsRef<Path>) -> Result<(), RunError> {
    let path = path.as_ref();
    let io_err = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    run.write(io::BufWriter::new(file)).map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub rrf_k: u32,
    pub depth: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            rrf_k: 60,
            depth: 1000,
        }
    }
}

/// Reciprocal Rank Fusion: a passage scores `Σ 1/(rrf_k + rank)` over the
/// runs that retrieve it within `depth`. Ties go to the smaller passage id.
pub fn rrf(runs: &[&Run], cfg: &FusionConfig, tag: &str) -> Result<Run, RunError> {
    if runs.is_empty() {
        return Err(RunError::NoRuns);
    }
    let mut qids: IndexMap<&str, ()> = IndexMap::new();
    for run in runs {
        for qid in run.queries.keys() {
            qids.insert(qid, ());
        }
    }
    let mut out = Run::new(tag);
    for qid in qids.keys() {
        let mut ranks: HashMap<&str, Vec<usize>> = HashMap::new();
        for run in runs {
            for (i, e) in run.get(qid).unwrap_or(&[]).iter().take(cfg.depth).enumerate() {
                ranks.entry(e.pid.as_str()).or_default().push(i + 1);
            }
        }
        let mut fused: Vec<(&str, f64)> = ranks
            .into_iter()
            .map(|(pid, mut rs)| {
                // fixed summation order keeps the score independent of run order
                rs.sort_unstable();
                let score = rs
                    .iter()
                    .map(|&r| 1.0 / (cfg.rrf_k as f64 + r as f64))
                    .sum::<f64>();
                (pid, score)
            })
            .collect();
        fused.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        fused.truncate(cfg.depth);
        out.queries.insert(
            qid.to_string(),
            fused
                .into_iter()
                .map(|(pid, score)| RunEntry {
                    pid: pid.to_string(),
                    score,
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Index of the run the oracle picks for `qid`: smallest best relevant rank,
/// earliest run on ties, first run when nothing relevant was retrieved.
pub fn oracle_choice(runs: &[&Run], qid: &str, qrels: &Qrels) -> usize {
    runs.iter()
        .enumerate()
        .filter_map(|(i, r)| r.best_relevant_rank(qid, qrels).map(|rank| (rank, i)))
        .min()
        .map_or(0, |(_, i)| i)
}

/// Per query, copies the ranking of the run that places a judged-relevant
/// passage highest.
pub fn oracle(runs: &[&Run], qrels: &Qrels, tag: &str) -> Result<Run, RunError> {
    if runs.is_empty() {
        return Err(RunError::NoRuns);
    }
    let mut qids: IndexMap<&str, ()> = IndexMap::new();
    for run in runs {
        for qid in run.queries.keys() {
            qids.insert(qid, ());
        }
    }
    for qid in qrels.query_ids() {
        qids.insert(qid, ());
    }
    let mut out = Run::new(tag);
    for qid in qids.keys() {
        let chosen = runs[oracle_choice(runs, qid, qrels)];
        out.queries
            .insert(qid.to_string(), chosen.get(qid).unwrap_or(&[]).to_vec());
    }
    Ok(out)
}
