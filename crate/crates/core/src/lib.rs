//! Ranking the references of a paper by how likely each one is a source
//! that inspired it: citation-context features, two gradient-boosted
//! scorers, LLM confidence judgments, and their fusion.

pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod llm;
pub mod numfmt;
pub mod pipeline;
