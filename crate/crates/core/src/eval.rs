//! Recall at cutoffs, paired significance testing and hard-query mining.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Qrels;
use crate::fusion::Run;

/// Query id used for the mean rows of a report CSV.
pub const ALL_QUERIES: &str = "all";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cutoffs must be non-empty, >= 1 and strictly increasing")]
    InvalidCutoffs,
    #[error("paired samples differ in their query sets")]
    MismatchedKeys,
    #[error("paired t-test needs at least 2 queries, got {0}")]
    TooFewPairs(usize),
    #[error("baseline must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("worst_fraction must lie in (0, 1] and min_rankers must be >= 1")]
    InvalidHardSetSpec,
    #[error("{runs} runs cannot satisfy min_rankers = {min_rankers}")]
    TooFewRuns { runs: usize, min_rankers: usize },
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report csv line {line}: {msg}")]
    Report { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Recall per query and macro-averaged, at each cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub cutoffs: Vec<usize>,
    pub per_query: BTreeMap<String, Vec<f64>>,
    pub mean: Vec<f64>,
}

impl RecallReport {
    /// Per-query values at one cutoff.
    pub fn at(&self, cutoff: usize) -> Option<BTreeMap<String, f64>> {
        let i = self.cutoffs.iter().position(|&c| c == cutoff)?;
        Some(
            self.per_query
                .iter()
                .map(|(q, v)| (q.clone(), v[i]))
                .collect(),
        )
    }

    pub fn mean_at(&self, cutoff: usize) -> Option<f64> {
        let i = self.cutoffs.iter().position(|&c| c == cutoff)?;
        Some(self.mean[i])
    }

    /// `metric,cutoff,qid,value` rows, per query then one `all` row per
    /// cutoff.
    pub fn write_csv(&self, out: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "cutoff", "qid", "value"])?;
        for (qid, values) in &self.per_query {
            for (c, v) in self.cutoffs.iter().zip(values) {
                w.write_record(["recall", &c.to_string(), qid, &v.to_string()])?;
            }
        }
        for (c, m) in self.cutoffs.iter().zip(&self.mean) {
            w.write_record(["recall", &c.to_string(), ALL_QUERIES, &m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a report written by [`RecallReport::write_csv`]. Means are
    /// taken from the `all` rows when present and recomputed otherwise.
    pub fn read_csv(input: impl Read) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(input);
        let mut cutoffs = BTreeSet::new();
        let mut values: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
        let mut means: BTreeMap<usize, f64> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |msg: &str| EvalError::Report { line, msg: msg.to_string() };
            if rec.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            if &rec[0] != "recall" {
                continue;
            }
            let cutoff: usize = rec[1].parse().map_err(|_| bad("cutoff is not an integer"))?;
            let value: f64 = rec[3].parse().map_err(|_| bad("value is not a number"))?;
            cutoffs.insert(cutoff);
            if &rec[2] == ALL_QUERIES {
                means.insert(cutoff, value);
            } else {
                values.entry(rec[2].to_string()).or_default().insert(cutoff, value);
            }
        }
        let cutoffs: Vec<usize> = cutoffs.into_iter().collect();
        let mut per_query = BTreeMap::new();
        for (qid, by_cutoff) in values {
            let row: Option<Vec<f64>> = cutoffs.iter().map(|c| by_cutoff.get(c).copied()).collect();
            let row = row.ok_or_else(|| EvalError::Report {
                line: 0,
                msg: format!("query {qid} is missing a cutoff"),
            })?;
            per_query.insert(qid, row);
        }
        let n = per_query.len();
        let mean = cutoffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                means.get(c).copied().unwrap_or_else(|| {
                    if n == 0 {
                        0.0
                    } else {
                        per_query.values().map(|v| v[i]).sum::<f64>() / n as f64
                    }
                })
            })
            .collect();
        Ok(RecallReport { cutoffs, per_query, mean })
    }
}

/// Recall at each cutoff for every query with a relevant judgment.
/// Judged queries missing from the run score 0.
pub fn recall_curve(run: &Run, qrels: &Qrels, cutoffs: &[usize]) -> Result<RecallReport, EvalError> {
    if cutoffs.is_empty() || cutoffs[0] == 0 || cutoffs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidCutoffs);
    }
    let mut per_query = BTreeMap::new();
    for qid in qrels.judged_queries() {
        let relevant: HashSet<&str> = qrels.relevant(qid).collect();
        let entries = run.get(qid).unwrap_or(&[]);
        let mut found = 0usize;
        let mut values = Vec::with_capacity(cutoffs.len());
        let mut pos = 0;
        for &c in cutoffs {
            while pos < c.min(entries.len()) {
                if relevant.contains(entries[pos].pid.as_str()) {
                    found += 1;
                }
                pos += 1;
            }
            values.push(found as f64 / relevant.len() as f64);
        }
        per_query.insert(qid.to_string(), values);
    }
    let n = per_query.len();
    let mean = (0..cutoffs.len())
        .map(|i| {
            if n == 0 {
                0.0
            } else {
                per_query.values().map(|v| v[i]).sum::<f64>() / n as f64
            }
        })
        .collect();
    Ok(RecallReport {
        cutoffs: cutoffs.to_vec(),
        per_query,
        mean,
    })
}

pub fn recall_at(run: &Run, qrels: &Qrels, cutoff: usize) -> Result<RecallReport, EvalError> {
    recall_curve(run, qrels, &[cutoff])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_freedom: usize,
    pub p_value: f64,
    pub mean_difference: f64,
}

/// Two-sided paired Student's t-test on `a - b`.
///
/// With zero variance in the differences, p is 0 when the mean difference is
/// nonzero (t is ±inf) and 1 when it is zero (t is 0).
pub fn paired_ttest(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<TTestResult, EvalError> {
    if a.len() != b.len() || a.keys().any(|k| !b.contains_key(k)) {
        return Err(EvalError::MismatchedKeys);
    }
    let diffs: Vec<f64> = a.iter().map(|(k, x)| x - b[k]).collect();
    ttest_differences(&diffs)
}

/// One-sample t-test of paired differences against zero.
pub fn ttest_differences(diffs: &[f64]) -> Result<TTestResult, EvalError> {
    let n = diffs.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        }
    } else {
        let t = mean / (var.sqrt() / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
        let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
        (t, p)
    };
    Ok(TTestResult {
        t_statistic: t,
        degrees_freedom: df,
        p_value: p,
        mean_difference: mean,
    })
}

/// `100 · (new − base) / base`.
pub fn percent_improvement(new: f64, base: f64) -> Result<f64, EvalError> {
    if base.is_nan() || base <= 0.0 {
        return Err(EvalError::NonPositiveBase(base));
    }
    Ok(100.0 * (new - base) / base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardSetSpec {
    pub worst_fraction: f64,
    pub min_rankers: usize,
}

impl Default for HardSetSpec {
    fn default() -> Self {
        HardSetSpec {
            worst_fraction: 0.5,
            min_rankers: 4,
        }
    }
}

/// The `⌊worst_fraction · n⌋` lowest-scoring queries of one run, ties broken
/// by ascending query id.
pub fn worst_queries(metric: &BTreeMap<String, f64>, worst_fraction: f64) -> BTreeSet<String> {
    let count = (worst_fraction * metric.len() as f64).floor() as usize;
    let mut ranked: Vec<(&String, f64)> = metric.iter().map(|(q, &v)| (q, v)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(count).map(|(q, _)| q.clone()).collect()
}

/// Queries that fall into the worst fraction of at least `min_rankers` runs.
pub fn mine_hard_queries(
    per_run: &[(String, BTreeMap<String, f64>)],
    spec: &HardSetSpec,
) -> Result<BTreeSet<String>, EvalError> {
    if !(spec.worst_fraction > 0.0 && spec.worst_fraction <= 1.0) || spec.min_rankers == 0 {
        return Err(EvalError::InvalidHardSetSpec);
    }
    if per_run.len() < spec.min_rankers {
        return Err(EvalError::TooFewRuns {
            runs: per_run.len(),
            min_rankers: spec.min_rankers,
        });
    }
    let mut votes: BTreeMap<String, usize> = BTreeMap::new();
    for (_, metric) in per_run {
        for q in worst_queries(metric, spec.worst_fraction) {
            *votes.entry(q).or_insert(0) += 1;
        }
    }
    Ok(votes
        .into_iter()
        .filter(|&(_, v)| v >= spec.min_rankers)
        .map(|(q, _)| q)
        .collect())
}

/// Wide summary table: `tag,<cutoff>,<cutoff>,...` with one row per report.
pub fn write_summary(
    out: impl Write,
    reports: &[(String, &RecallReport)],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let cutoffs: BTreeSet<usize> = reports.iter().flat_map(|(_, r)| r.cutoffs.iter().copied()).collect();
    let mut header = vec!["tag".to_string()];
    header.extend(cutoffs.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (tag, report) in reports {
        let mut row = vec![tag.clone()];
        row.extend(
            cutoffs
                .iter()
                .map(|&c| report.mean_at(c).map_or(String::new(), |m| format!("{m:.4}"))),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
