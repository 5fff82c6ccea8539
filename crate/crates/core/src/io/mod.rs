//! Files in and out: configs, corpora, metrics, trajectories, score dumps and
//! per-domain evaluation.

mod config;
mod corpus;
mod eval;
mod metrics;
pub mod yaml;

pub use config::{parse_config, parse_config_str, parse_data_config, serialize_config};
pub use corpus::{read_corpus, write_corpus, CorpusRead, Strictness};
pub use eval::{eval_per_domain, DomainEval};
pub use metrics::{
    metrics_digest, metrics_line, read_lines, read_metrics, read_trajectory, save_metrics,
    write_metrics, write_scores, write_trajectory, ScoreRecord,
};
