//! Knowledge-graph-augmented political perspective detection.
//!
//! The pipeline runs: a typed political knowledge graph ([`kgstore`]), entity
//! embeddings trained on it ([`kge`]), per-article heterogeneous graphs with
//! text and entity nodes ([`newsgraph`], built from [`textfeat`] and
//! [`linker`]), and a gated relational graph network classifier ([`gnn`])
//! trained and evaluated by [`trainer`].

pub mod config;
pub mod gnn;
pub mod kge;
pub mod kgstore;
pub mod linker;
pub mod newsgraph;
pub mod pipeline;
pub mod textfeat;
pub mod trainer;
pub mod util;
