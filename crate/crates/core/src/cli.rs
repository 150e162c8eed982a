//! The `entexp` command line.
//!
//! Every subcommand reads its defaults from a [`PipelineConfig`] (a TOML
//! file given by `--config` or `$ENTEXP_CONFIG`), lets flags override them,
//! and records the effective configuration next to its output as
//! `<output>.config.toml`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Analyzer, AnalyzerConfig, Passage};
use crate::eval::{self, HardSetSpec, RecallReport};
use crate::expansion::{self, ExpansionStrategy};
use crate::fusion::{self, FusionConfig, Run};
use crate::index::{Bm25Params, InvertedIndex};
use crate::linker::{self, AnnotationHeader, AnnotationSet, Gazetteer, LinkerConfig, WindowConfig};

pub const CONFIG_ENV: &str = "ENTEXP_CONFIG";

/// Every tunable of the pipeline in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub analyzer: AnalyzerConfig,
    pub window: WindowConfig,
    pub linker: LinkerConfig,
    pub strategy: ExpansionStrategy,
    pub bm25: Bm25Params,
    /// Retrieval depth.
    pub k: usize,
    pub fusion: FusionConfig,
    pub cutoffs: Vec<usize>,
    pub hard_set: HardSetSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            analyzer: AnalyzerConfig::default(),
            window: WindowConfig::default(),
            linker: LinkerConfig::default(),
            strategy: ExpansionStrategy::default(),
            bm25: Bm25Params::default(),
            k: 1000,
            fusion: FusionConfig::default(),
            cutoffs: vec![10, 20, 50, 100, 200, 500, 1000],
            hard_set: HardSetSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.linker.validate()?;
        self.bm25.validate()?;
        if self.k == 0 {
            bail!("k must be >= 1");
        }
        Ok(())
    }

    /// Writes the config as `<output>.config.toml`.
    pub fn record(&self, output: &Path) -> Result<()> {
        let mut name = output.as_os_str().to_owned();
        name.push(".config.toml");
        let path = PathBuf::from(name);
        std::fs::write(&path, toml::to_string(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "entexp", version, about = "Entity-expanded sparse retrieval toolkit")]
pub struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct LinkFlags {
    /// Window length in tokens.
    #[arg(long)]
    pub window: Option<usize>,
    /// Tokens shared by consecutive windows.
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Minimum linker score.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct Bm25Flags {
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotate a collection or query set with entities.
    Link {
        /// TSV collection or query file.
        #[arg(long)]
        input: PathBuf,
        /// Gazetteer TSV (`alias<TAB>entity<TAB>score`).
        #[arg(long, conflicts_with = "annotations", required_unless_present = "annotations")]
        gazetteer: Option<PathBuf>,
        /// Precomputed annotation JSONL (e.g. neural linker output).
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: LinkFlags,
    },
    /// Append entity names (or their digests) to each text.
    Expand {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// none, explicit, hashed, constant:<c> or weighted.
        #[arg(long)]
        strategy: Option<ExpansionStrategy>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an inverted index.
    Index {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        index: PathBuf,
    },
    /// Retrieve the top k passages for every query.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "bm25")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        bm25: Bm25Flags,
    },
    /// Reciprocal Rank Fusion of several runs.
    Fuse {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        rrf_k: Option<u32>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value = "rrf")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-query best run according to the judgments.
    Oracle {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "oracle")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall at cutoffs, per query and averaged.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated, strictly increasing.
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
        /// Restrict evaluation to the query ids listed in this file.
        #[arg(long)]
        subset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a one-row `tag,<cutoff>...` summary.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Paired t-test and percent change between two reports.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        system: PathBuf,
        #[arg(long, default_value_t = 1000)]
        cutoff: usize,
    },
    /// Queries in the worst fraction of at least `min-rankers` reports.
    MineHard {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        cutoff: usize,
        #[arg(long)]
        min_rankers: Option<usize>,
        #[arg(long)]
        worst_fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall curves of several reports as SVG (by extension) or CSV.
    Plot {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn stem_tag(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_runs(paths: &[PathBuf]) -> Result<Vec<Run>> {
    paths
        .iter()
        .map(|p| fusion::read_run(p).map_err(Into::into))
        .collect()
}

fn read_report(path: &Path) -> Result<RecallReport> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    RecallReport::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Link { input, gazetteer, annotations, out, flags } => {
            if let Some(w) = flags.window {
                cfg.window.window_tokens = w;
            }
            if let Some(o) = flags.overlap {
                cfg.window.overlap_tokens = o;
            }
            if let Some(t) = flags.threshold {
                cfg.linker.threshold = t;
            }
            cfg.validate()?;
            cmd_link(&cfg, &input, gazetteer.as_deref(), annotations.as_deref(), &out)
        }
        Command::Expand { input, annotations, strategy, out } => {
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            cmd_expand(&cfg, &input, &annotations, &out)
        }
        Command::Index { input, index } => cmd_index(&cfg, &input, &index),
        Command::Search { index, queries, k, tag, out, bm25 } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(k1) = bm25.k1 {
                cfg.bm25.k1 = k1;
            }
            if let Some(b) = bm25.b {
                cfg.bm25.b = b;
            }
            cfg.validate()?;
            cmd_search(&cfg, &index, &queries, &tag, &out)
        }
        Command::Fuse { runs, rrf_k, depth, tag, out } => {
            if let Some(k) = rrf_k {
                cfg.fusion.rrf_k = k;
            }
            if let Some(d) = depth {
                cfg.fusion.depth = d;
            }
            cmd_fuse(&cfg, &runs, &tag, &out)
        }
        Command::Oracle { runs, qrels, tag, out } => cmd_oracle(&cfg, &runs, &qrels, &tag, &out),
        Command::Eval { run, qrels, cutoffs, subset, out, summary } => {
            if let Some(c) = cutoffs {
                cfg.cutoffs = c;
            }
            cmd_eval(&cfg, &run, &qrels, subset.as_deref(), &out, summary.as_deref())
        }
        Command::Compare { baseline, system, cutoff } => {
            let mut stdout = std::io::stdout().lock();
            cmd_compare(&baseline, &system, cutoff, &mut stdout)
        }
        Command::MineHard { reports, cutoff, min_rankers, worst_fraction, out } => {
            if let Some(m) = min_rankers {
                cfg.hard_set.min_rankers = m;
            }
            if let Some(f) = worst_fraction {
                cfg.hard_set.worst_fraction = f;
            }
            cmd_mine_hard(&cfg, &reports, cutoff, &out)
        }
        Command::Plot { reports, out } => cmd_plot(&reports, &out),
    }
}

const LINK_CHUNK: usize = 4096;

pub fn cmd_link(
    cfg: &PipelineConfig,
    input: &Path,
    gazetteer: Option<&Path>,
    annotations: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let analyzer = Analyzer::new(cfg.analyzer.clone());
    let mut header = AnnotationHeader {
        linker: Some(cfg.linker),
        window: Some(cfg.window),
        ..Default::default()
    };
    let mut w = create(out)?;
    let mut lines = 0usize;
    match (gazetteer, annotations) {
        (Some(gpath), _) => {
            let gaz = Gazetteer::load(gpath, analyzer.clone())
                .with_context(|| format!("loading gazetteer {}", gpath.display()))?;
            header
                .extra
                .insert("source".into(), format!("gazetteer:{}", gpath.display()).into());
            AnnotationSet { header: Some(header), by_id: Default::default() }.write(&mut w)?;
            let mut reader = corpus::load_collection(input)?;
            loop {
                let chunk: Vec<Passage> = reader
                    .by_ref()
                    .take(LINK_CHUNK)
                    .collect::<Result<_, _>>()?;
                if chunk.is_empty() {
                    break;
                }
                let linked =
                    linker::link_collection(&chunk, &gaz, &analyzer, &cfg.window, &cfg.linker)?;
                lines += linked.len();
                AnnotationSet { header: None, by_id: linked }.write(&mut w)?;
            }
        }
        (None, Some(apath)) => {
            let mut set = linker::load_annotations(apath)?;
            let known: std::collections::HashSet<String> = corpus::load_collection(input)?
                .map(|p| p.map(|p| p.id))
                .collect::<Result<_, _>>()?;
            set.by_id.retain(|id, _| {
                let keep = known.contains(id);
                if !keep {
                    log::warn!("annotations for unknown id {id:?} dropped");
                }
                keep
            });
            for anns in set.by_id.values_mut() {
                *anns = linker::merge_mentions(std::mem::take(anns));
            }
            header.extra.insert("source".into(), format!("file:{}", apath.display()).into());
            if let Some(orig) = set.header.take() {
                header
                    .extra
                    .insert("upstream".into(), serde_json::to_value(orig)?);
            }
            lines = set.len();
            set.header = Some(header);
            set.write(&mut w)?;
        }
        (None, None) => bail!("either --gazetteer or --annotations is required"),
    }
    w.flush()?;
    log::info!("{} annotated texts written to {}", lines, out.display());
    cfg.record(out)
}

pub fn cmd_expand(cfg: &PipelineConfig, input: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let set = linker::load_annotations(annotations)?;
    if cfg.strategy == ExpansionStrategy::HashedSingle {
        expansion::check_hash_collisions(set.entity_names())?;
    }
    let reader = corpus::load_collection(input)?.map(|r| r.map_err(anyhow::Error::from));
    let mut expanded = expansion::expand_collection(reader, &set, cfg.strategy);
    let mut w = create(out)?;
    for p in expanded.by_ref() {
        let p = p?;
        writeln!(w, "{}\t{}", p.id, p.text)?;
    }
    w.flush()?;
    cfg.record(out)
}

pub fn cmd_index(cfg: &PipelineConfig, input: &Path, dir: &Path) -> Result<()> {
    let analyzer = Analyzer::new(cfg.analyzer.clone());
    let reader = corpus::load_collection(input)?.map(|r| r.map_err(anyhow::Error::from));
    let index = crate::index::build_index(reader, &analyzer)?;
    index.save(dir)?;
    log::info!(
        "indexed {} passages, {} terms into {}",
        index.num_docs(),
        index.terms().count(),
        dir.display()
    );
    cfg.record(&dir.join("index"))
}

pub fn cmd_search(cfg: &PipelineConfig, dir: &Path, queries: &Path, tag: &str, out: &Path) -> Result<()> {
    let index = InvertedIndex::load(dir)?;
    let queries = corpus::load_queries(queries)?;
    let run = index.batch_search(&cfg.bm25, &queries, cfg.k, tag);
    run.write(create(out)?)?;
    cfg.record(out)
}

pub fn cmd_fuse(cfg: &PipelineConfig, paths: &[PathBuf], tag: &str, out: &Path) -> Result<()> {
    let runs = read_runs(paths)?;
    let refs: Vec<&Run> = runs.iter().collect();
    let fused = fusion::rrf(&refs, &cfg.fusion, tag)?;
    fused.write(create(out)?)?;
    cfg.record(out)
}

pub fn cmd_oracle(cfg: &PipelineConfig, paths: &[PathBuf], qrels: &Path, tag: &str, out: &Path) -> Result<()> {
    let runs = read_runs(paths)?;
    let refs: Vec<&Run> = runs.iter().collect();
    let qrels = corpus::load_qrels(qrels)?;
    let o = fusion::oracle(&refs, &qrels, tag)?;
    o.write(create(out)?)?;
    cfg.record(out)
}

fn read_id_list(path: &Path) -> Result<std::collections::HashSet<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect())
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    run_path: &Path,
    qrels_path: &Path,
    subset: Option<&Path>,
    out: &Path,
    summary: Option<&Path>,
) -> Result<()> {
    let run = fusion::read_run(run_path)?;
    let mut qrels = corpus::load_qrels(qrels_path)?;
    if let Some(subset) = subset {
        let keep = read_id_list(subset)?;
        let mut filtered = corpus::Qrels::new();
        for qid in qrels.query_ids().filter(|q| keep.contains(*q)) {
            for pid in qrels.relevant(qid) {
                filtered.insert(qid, pid, qrels.grade(qid, pid).unwrap_or(1));
            }
        }
        qrels = filtered;
    }
    let report = eval::recall_curve(&run, &qrels, &cfg.cutoffs)?;
    report.write_csv(create(out)?)?;
    if let Some(summary) = summary {
        let tag = if run.tag.is_empty() { stem_tag(run_path) } else { run.tag.clone() };
        eval::write_summary(create(summary)?, &[(tag, &report)])?;
    }
    for (c, m) in report.cutoffs.iter().zip(&report.mean) {
        log::info!("recall@{c} = {m:.4}");
    }
    cfg.record(out)
}

pub fn cmd_compare(baseline: &Path, system: &Path, cutoff: usize, out: &mut impl Write) -> Result<()> {
    let base = read_report(baseline)?;
    let sys = read_report(system)?;
    let (Some(b), Some(s)) = (base.at(cutoff), sys.at(cutoff)) else {
        bail!("cutoff {cutoff} missing from one of the reports");
    };
    let t = eval::paired_ttest(&s, &b)?;
    let (bm, sm) = (base.mean_at(cutoff).unwrap(), sys.mean_at(cutoff).unwrap());
    writeln!(out, "recall@{cutoff} baseline={bm:.4} system={sm:.4}")?;
    match eval::percent_improvement(sm, bm) {
        Ok(pct) => writeln!(out, "improvement={pct:.2}%")?,
        Err(e) => writeln!(out, "improvement=n/a ({e})")?,
    }
    writeln!(
        out,
        "t={:.6} df={} p={:.6} mean_diff={:.6}",
        t.t_statistic, t.degrees_freedom, t.p_value, t.mean_difference
    )?;
    Ok(())
}

pub fn cmd_mine_hard(cfg: &PipelineConfig, reports: &[PathBuf], cutoff: usize, out: &Path) -> Result<()> {
    let mut per_run = Vec::new();
    for path in reports {
        let report = read_report(path)?;
        let values = report
            .at(cutoff)
            .with_context(|| format!("{} has no cutoff {cutoff}", path.display()))?;
        per_run.push((stem_tag(path), values));
    }
    let hard = eval::mine_hard_queries(&per_run, &cfg.hard_set)?;
    let mut w = create(out)?;
    for qid in &hard {
        writeln!(w, "{qid}")?;
    }
    w.flush()?;
    log::info!("{} hard queries", hard.len());
    cfg.record(out)
}

pub fn cmd_plot(reports: &[PathBuf], out: &Path) -> Result<()> {
    let mut curves: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for path in reports {
        let r = read_report(path)?;
        curves.push((stem_tag(path), r.cutoffs.iter().copied().zip(r.mean.iter().copied()).collect()));
    }
    let mut w = create(out)?;
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
        w.write_all(render_svg(&curves).as_bytes())?;
    } else {
        writeln!(w, "tag,cutoff,mean")?;
        for (tag, pts) in &curves {
            for (c, m) in pts {
                writeln!(w, "{tag},{c},{m}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart of mean recall against cutoff on a log x axis.
pub fn render_svg(curves: &[(String, Vec<(usize, f64)>)]) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let xs: Vec<f64> = curves
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(c, _)| (c.max(1) as f64).log10()))
        .collect();
    let xmin = xs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let xmax = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(xmin + 1.0);
    let sx = |c: usize| pad + ((c.max(1) as f64).log10() - xmin) / (xmax - xmin) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - v.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{xm}\" y=\"{yl}\" text-anchor=\"middle\" font-size=\"12\">cutoff</text>\n\
         <text x=\"14\" y=\"{ym}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {ym})\">recall</text>\n",
        y0 = h - pad,
        x1 = w - pad,
        xm = w / 2.0,
        yl = h - 12.0,
        ym = h / 2.0,
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        svg += &format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"10\">{tick:.2}</text>\n",
            pad - 4.0,
            sy(tick) + 3.0
        );
    }
    let mut ticks: Vec<usize> = curves.iter().flat_map(|(_, p)| p.iter().map(|&(c, _)| c)).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for c in ticks {
        svg += &format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{c}</text>\n",
            sx(c),
            h - pad + 14.0
        );
    }
    for (i, (tag, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = pts.iter().map(|&(c, v)| format!("{:.1},{:.1}", sx(c), sy(v))).collect();
        svg += &format!(
            "<polyline class=\"curve\" data-tag=\"{tag}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        );
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{tag}</text>\n",
            pad + 10.0,
            pad + 14.0 * (i as f64 + 1.0)
        );
    }
    svg += "</svg>\n";
    svg
}
