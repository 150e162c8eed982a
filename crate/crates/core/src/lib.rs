//! Entity-expanded sparse retrieval.
//!
//! The pipeline annotates queries and passages with linked entities over
//! overlapping token windows ([`linker`]), appends entity names or their MD5
//! digests to the text ([`expansion`]), retrieves with BM25 over an inverted
//! index ([`index`]), combines runs with Reciprocal Rank Fusion or a
//! per-query oracle ([`fusion`]) and measures recall at cutoffs with paired
//! t-tests and hard-query mining ([`eval`]). [`cli`] wires it all into the
//! `entexp` binary.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod expansion;
pub mod fusion;
pub mod index;
pub mod linker;

pub use corpus::{analyze, Analyzer, AnalyzerConfig, Passage, Qrels, Query, Token};
pub use expansion::{expand, hash_entity, ExpansionStrategy};
pub use fusion::{oracle, rrf, FusionConfig, Run, RunEntry};
pub use index::{build_index, Bm25Params, InvertedIndex, ScoredHit};
pub use linker::{EntityAnnotation, EntityLinker, Gazetteer, LinkerConfig, WindowConfig};
